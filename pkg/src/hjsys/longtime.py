"""
Large-time diagnostics for the evolutive system.

On the set A (common zeros of the costs where every row sum of D vanishes)
the functionals ``sum_i Lambda_i u_i`` and ``max_i u_i`` are nonincreasing in
time, and the equations reduce there to the linear system ``w' + D w = 0``.
Under the standing assumptions ``u(., t)`` converges to a stationary solution
whose components agree on A.  These checks operate on a recorded
:class:`~hjsys.evolutive.TrajectoryLog`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import coupling as cpl
from .ergodic import stationary_residual
from .errors import CellNotInAubrySet, EmptyAubrySet, InsufficientHorizon
from .evolutive import TrajectoryLog, lipschitz_estimate
from .grid import DiscreteSystem, VectorGridField

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_T = 5.0
DEFAULT_MONO_TOL = 1e-3


class Verdict(str, Enum):
    CONVERGED = "converged"
    NON_CONVERGENT = "non_convergent"
    UNDECIDED = "undecided"


@dataclass
class FunctionalTrace:
    """Values of a functional at each A-cell over the sampled times."""

    kind: str
    times: np.ndarray
    cells: np.ndarray
    values: np.ndarray  # (ntimes, ncells_A)
    mono_tol: float
    worst_increase: float

    @property
    def monotone(self) -> bool:
        return self.worst_increase <= self.mono_tol

    @property
    def limit(self) -> np.ndarray:
        return self.values[-1]

    def rows(self) -> list[dict]:
        return [
            {"t": float(t), "cell": int(c), "functional": self.kind, "value": float(v)}
            for k, t in enumerate(self.times)
            for c, v in zip(self.cells, self.values[k])
        ]

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "cells": self.cells.tolist(),
            "monotone": self.monotone,
            "worst_increase_per_time": self.worst_increase,
            "mono_tol": self.mono_tol,
            "limit": self.limit.tolist(),
        }


def _a_cells(A_mask) -> np.ndarray:
    cells = np.flatnonzero(np.asarray(A_mask).ravel())
    if cells.size == 0:
        raise EmptyAubrySet("the set A is empty on this grid")
    return cells


def _worst_rate(times: np.ndarray, values: np.ndarray) -> float:
    if len(times) < 2:
        return 0.0
    rate = np.diff(values, axis=0) / np.diff(times)[:, None]
    return float(max(rate.max(), 0.0))


def _samples_at(log: TrajectoryLog, cells: np.ndarray) -> np.ndarray:
    """Snapshot values at ``cells`` as ``(ntimes, m, ncells)``."""
    snaps = log.snapshot_array()
    return snaps.reshape(snaps.shape[0], snaps.shape[1], -1)[:, :, cells]


def monitor_lambda_functional(log: TrajectoryLog, A_mask, Lambda, mono_tol: float = DEFAULT_MONO_TOL) -> FunctionalTrace:
    """``sum_i Lambda_i(x) u_i(x, t)`` at every A-cell.

    ``Lambda`` is one m-vector or one row per A-cell.
    """
    cells = _a_cells(A_mask)
    vals = _samples_at(log, cells)
    lam = np.asarray(Lambda, dtype=float)
    lam = np.broadcast_to(lam, (cells.size, vals.shape[1])) if lam.ndim == 1 else lam
    phi = np.einsum("tmk,km->tk", vals, lam)
    times = log.times_array
    return FunctionalTrace("lambda", times, cells, phi, mono_tol, _worst_rate(times, phi))


def monitor_max_functional(log: TrajectoryLog, A_mask, mono_tol: float = DEFAULT_MONO_TOL) -> FunctionalTrace:
    """``max_j u_j(x, t)`` at every A-cell."""
    cells = _a_cells(A_mask)
    phi = _samples_at(log, cells).max(axis=1)
    times = log.times_array
    return FunctionalTrace("max", times, cells, phi, mono_tol, _worst_rate(times, phi))


def joint_limits_m2(phi, phi_max, Lambda, larger=0) -> np.ndarray:
    """Component limits on A for two equations from the two functional limits.

    Solves ``Lambda_1 a + Lambda_2 b = phi`` with ``max(a, b) = phi_max``.
    The system leaves open which component attains the max, so ``larger``
    (0 or 1, scalar or per cell) selects it.  Returns shape ``(2, ncells)``.
    """
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    phi_max = np.atleast_1d(np.asarray(phi_max, dtype=float))
    lam = np.asarray(Lambda, dtype=float)
    lam = np.broadcast_to(lam, (phi.size, 2)) if lam.ndim == 1 else lam
    larger = np.broadcast_to(np.asarray(larger), phi.shape)
    out = np.empty((2, phi.size))
    first = larger == 0
    out[0, first] = phi_max[first]
    out[1, first] = (phi[first] - lam[first, 0] * phi_max[first]) / lam[first, 1]
    out[1, ~first] = phi_max[~first]
    out[0, ~first] = (phi[~first] - lam[~first, 1] * phi_max[~first]) / lam[~first, 0]
    return out


# --------------------------------------------------------------------------
# convergence


@dataclass
class ConvergenceReport:
    verdict: Verdict
    oscillation: float
    previous_oscillation: float
    osc_tol: float
    window_T: float
    u_infinity: VectorGridField | None = None
    stationarity_residual: float | None = None
    equality_deviation: float | None = None
    equality_tol: float | None = None
    oscillation_series: list[tuple[float, float]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "oscillation": self.oscillation,
            "previous_oscillation": self.previous_oscillation,
            "osc_tol": self.osc_tol,
            "window_T": self.window_T,
            "stationarity_residual": self.stationarity_residual,
            "equality_deviation": self.equality_deviation,
            "equality_tol": self.equality_tol,
        }


def _window_oscillation(snaps: np.ndarray, sel: np.ndarray) -> float:
    w = snaps[sel]
    return float(np.max(w.max(axis=0) - w.min(axis=0))) if w.shape[0] else 0.0


def detect_convergence(log: TrajectoryLog, system: DiscreteSystem, window_T: float = DEFAULT_WINDOW_T,
                       osc_tol: float | None = None, c=0.0, A_mask=None) -> ConvergenceReport:
    """Classify the run from the oscillation of ``u + c t`` over trailing windows.

    CONVERGED when the last window oscillates by at most ``osc_tol``;
    NON_CONVERGENT when both of the last two windows exceed ``10 osc_tol``;
    otherwise UNDECIDED.  The candidate limit is the time average over the
    last window.
    """
    times = log.times_array
    if times.size < 2 or times[-1] - times[0] < 2 * window_T * (1 - 1e-9):
        raise InsufficientHorizon(f"need a horizon of {2 * window_T:g}, got {times[-1] - times[0]:g}")
    c = np.broadcast_to(np.asarray(c, dtype=float), (system.m,))
    snaps = log.snapshot_array()
    shape = (1, system.m) + (1,) * system.grid.dim
    shifted = snaps + times.reshape(-1, *([1] * (snaps.ndim - 1))) * c.reshape(shape)
    if osc_tol is None:
        osc_tol = 1e-3 * (1 + float(np.max(np.abs(snaps[0]))))
    T = times[-1]
    eps = 1e-9 * max(1.0, T)
    last = times >= T - window_T - eps
    prev = (times >= T - 2 * window_T - eps) & (times <= T - window_T + eps)
    osc = _window_oscillation(shifted, last)
    osc_prev = _window_oscillation(shifted, prev)

    # oscillation over successive windows, for the report series
    series = []
    t_end = times[0] + window_T
    while t_end <= T + eps:
        sel = (times >= t_end - window_T - eps) & (times <= t_end + eps)
        series.append((float(t_end), _window_oscillation(shifted, sel)))
        t_end += window_T

    if osc <= osc_tol:
        verdict = Verdict.CONVERGED
    elif osc > 10 * osc_tol and osc_prev > 10 * osc_tol:
        verdict = Verdict.NON_CONVERGENT
    else:
        verdict = Verdict.UNDECIDED
    report = ConvergenceReport(verdict, osc, osc_prev, osc_tol, window_T, oscillation_series=series)
    if verdict is Verdict.CONVERGED:
        w = times[last]
        if w.size > 1:
            # trapezoid average over the (possibly uneven) window samples
            weights = np.zeros(w.size)
            dt = np.diff(w)
            weights[:-1] += dt / 2
            weights[1:] += dt / 2
            weights /= weights.sum()
        else:
            weights = np.ones(1)
        u_inf = np.tensordot(weights, shifted[last], axes=1)
        report.u_infinity = VectorGridField(system.grid, u_inf, float(T))
        report.stationarity_residual = float(np.max(stationary_residual(system, u_inf, c)))
        if A_mask is not None and np.any(A_mask) and system.m > 1:
            flat = u_inf.reshape(system.m, -1)[:, np.asarray(A_mask).ravel()]
            report.equality_deviation = float(np.max(flat.max(axis=0) - flat.min(axis=0)))
            L = float(np.max(lipschitz_estimate(system, u_inf)))
            report.equality_tol = 2 * system.grid.dx * max(L, 1.0)
    return report


def aubry_ode_check(log: TrajectoryLog, cell: int, D, t0: float, A_mask=None) -> float:
    """``sup_{t >= t0} |u(cell, t) - exp(-(t - t0) D) u(cell, t0)|``.

    The sample nearest to ``t0`` (from above) is the starting point.
    """
    if A_mask is not None and not np.asarray(A_mask).ravel()[cell]:
        raise CellNotInAubrySet(f"cell {cell} is not in A")
    times = log.times_array
    start = int(np.searchsorted(times, t0 - 1e-9 * max(1.0, t0)))
    if start >= times.size:
        raise InsufficientHorizon(f"no samples after t0={t0:g}")
    vals = _samples_at(log, np.array([cell]))[:, :, 0]
    D = np.asarray(D, dtype=float)
    w0 = vals[start]
    dev = 0.0
    for k in range(start, times.size):
        pred = cpl.matrix_exponential(D, times[k] - times[start]) @ w0
        dev = max(dev, float(np.max(np.abs(vals[k] - pred))))
    return dev
