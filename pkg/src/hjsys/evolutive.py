"""
Explicit time marching of the evolutive system

    du_i/dt + H_i(x, Du_i) + sum_j d_ij(x) u_j = 0,    u(., 0) = u0,

with the monotone Lax-Friedrichs operator of :mod:`hjsys.grid`.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import NonFiniteValue
from .grid import DiscreteSystem, VectorGridField

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6

Observer = Callable[[float, np.ndarray], object]


@dataclass
class EvolutionState:
    field: VectorGridField
    t: float = 0.0
    step_count: int = 0


def step(system: DiscreteSystem, state: EvolutionState, dt: float) -> EvolutionState:
    """One explicit Euler step ``u - dt * G(u)``; returns a fresh state."""
    system.check_cfl(dt)
    u = state.field.values
    new = u - dt * system.operator(u)
    if not np.all(np.isfinite(new)):
        raise NonFiniteValue(f"non-finite value after step {state.step_count + 1}")
    t = state.t + dt
    return EvolutionState(VectorGridField(system.grid, new, t), t, state.step_count + 1)


def residual(system: DiscreteSystem, values: np.ndarray, dt_probe: float | None = None) -> np.ndarray:
    """Per-equation steady-state residual ``sup_x |G_i(u)|``.

    Computed as one probe step divided by ``dt_probe``; the result does not
    depend on the probe size.
    """
    if dt_probe is None:
        dt_probe = system.max_dt()
    probe = values - dt_probe * system.operator(values)
    return np.abs((values - probe) / dt_probe).reshape(system.m, -1).max(axis=1)


def lipschitz_estimate(system: DiscreteSystem, values: np.ndarray) -> np.ndarray:
    """Largest one-sided difference quotient of each component."""
    pm, _ = system.gradients(values)
    return np.abs(pm).reshape(system.grid.dim, system.m, -1).max(axis=(0, 2))


@dataclass
class TrajectoryLog:
    """Diagnostics sampled at (simulated) times during a run."""

    dt: float
    times: list[float] = field(default_factory=list)
    sup: list[np.ndarray] = field(default_factory=list)
    inf: list[np.ndarray] = field(default_factory=list)
    lipschitz: list[np.ndarray] = field(default_factory=list)
    residual: list[np.ndarray] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)
    window: deque = field(default_factory=deque)
    observations: dict[str, list] = field(default_factory=dict)
    final: EvolutionState | None = None

    @property
    def times_array(self) -> np.ndarray:
        return np.asarray(self.times)

    def snapshot_array(self) -> np.ndarray:
        """Snapshots stacked as ``(nsamples, m, *grid_shape)``."""
        return np.stack(self.snapshots)

    def series_rows(self) -> list[dict]:
        rows = []
        m = len(self.sup[0]) if self.sup else 0
        for k, t in enumerate(self.times):
            row = {"t": t}
            for i in range(m):
                row[f"sup_{i + 1}"] = float(self.sup[k][i])
                row[f"inf_{i + 1}"] = float(self.inf[k][i])
                row[f"lip_{i + 1}"] = float(self.lipschitz[k][i])
                row[f"residual_{i + 1}"] = float(self.residual[k][i])
            rows.append(row)
        return rows


def solve_until(system: DiscreteSystem, u0, T: float, dt: float | None = None,
                sample_every: float = 0.1, observers: Iterable[Observer] | dict = (),
                keep_snapshots: bool = True, window: int = 0) -> TrajectoryLog:
    """March from ``u0`` to time ``T``.

    Diagnostics (sup/inf, Lipschitz estimate, residual) and, when requested,
    full snapshots are recorded at the multiples of ``sample_every`` and at
    ``t = T``.  Steps are shortened to land on those times exactly.  ``window > 0`` keeps that many recent samples in a ring
    buffer.  Observers are called as ``obs(t, values)`` on a read-only view.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if dt is None:
        dt = system.max_dt()
    system.check_cfl(dt)
    values = u0.values if isinstance(u0, VectorGridField) else np.asarray(u0, dtype=float)
    state = EvolutionState(VectorGridField(system.grid, values.copy(), 0.0))
    bound = DIVERGENCE_FACTOR * (1.0 + float(np.max(np.abs(values))))
    obs = dict(observers) if isinstance(observers, dict) else {f"obs{k}": o for k, o in enumerate(observers)}
    log = TrajectoryLog(dt=dt, window=deque(maxlen=window) if window else deque(maxlen=1))
    for name in obs:
        log.observations[name] = []

    def record(st: EvolutionState):
        u = st.field.values
        flat = u.reshape(system.m, -1)
        log.times.append(st.t)
        log.sup.append(flat.max(axis=1))
        log.inf.append(flat.min(axis=1))
        log.lipschitz.append(lipschitz_estimate(system, u))
        log.residual.append(np.abs(system.operator(u)).reshape(system.m, -1).max(axis=1))
        if keep_snapshots:
            log.snapshots.append(u.copy())
        log.window.append((st.t, u.copy()))
        view = u.view()
        view.flags.writeable = False
        for name, o in obs.items():
            log.observations[name].append(o(st.t, view))

    record(state)
    k_next = 1
    eps = 1e-12 * max(1.0, T)
    while state.t < T - eps:
        target = min(k_next * sample_every, T)
        # shorten the step to land on sample times exactly
        h = min(dt, target - state.t)
        state = step(system, state, h)
        if np.max(np.abs(state.field.values)) > bound:
            raise NonFiniteValue(f"solution exceeded {bound:.3g} at t={state.t:.4g}")
        if state.t >= target - eps:
            state.t = target
            state.field.t = target
            record(state)
            while k_next * sample_every <= state.t + eps:
                k_next += 1
    log.final = state
    logger.debug("solve_until: %d steps to T=%g", state.step_count, T)
    return log
