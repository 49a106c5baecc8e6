"""
Discounted systems and the vanishing-discount limit.

For ``lam > 0`` the discounted system

    lam v_i + H_i(x, Dv_i) + sum_j d_ij(x) v_j = 0

has a unique solution ``v^lam``.  As ``lam -> 0``, ``-lam v^lam(x*)`` tends to
the ergodic constant ``c`` and ``v^lam`` minus a common constant tends to a
corrector ``v`` solving ``H_i(x, Dv_i) + sum_j d_ij v_j = c_i``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import coupling as cpl
from .errors import BoundViolated, ExtrapolationUnstable, NotConverged, PreconditionFailed
from .grid import DiscreteSystem, VectorGridField

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA0 = 0.5
DEFAULT_LEVELS = 12
ROUNDING_FACTOR = 64.0


@dataclass
class Check:
    """A named numerical assertion recorded in reports."""

    name: str
    value: float
    bound: float
    passed: bool

    def to_json(self) -> dict:
        return {"name": self.name, "value": self.value, "bound": self.bound, "passed": self.passed}


@dataclass
class DiscountedSolution:
    lam: float
    field: VectorGridField
    iterations: int
    residual: float
    method: str = "newton"


def _a_priori_constant(system: DiscreteSystem) -> tuple[float, bool]:
    """``M = max_i sup_x |F_i(x, 0)| + |f_i(x)|`` and whether ``v >= 0`` is guaranteed."""
    zero = np.zeros((system.grid.dim,) + system.grid.shape)
    F0 = np.stack([h.F(system.coords, zero) for h in system.problem.hamiltonians])
    M = float(np.max(np.abs(F0) + np.abs(system.costs)))
    nonneg = bool(np.all(np.abs(F0) <= 1e-12) and np.all(system.costs >= 0))
    return M, nonneg


def discounted_residual(system: DiscreteSystem, lam: float, v: np.ndarray) -> float:
    return float(np.max(np.abs(lam * v + system.operator(v))))


def _newton(system, lam, v, tol, max_iters):
    res = discounted_residual(system, lam, v)
    best = res
    stall = 0
    for it in range(1, max_iters + 1):
        if res <= tol:
            return v, it - 1, res
        G = lam * v + system.operator(v)
        J = system.jacobian(v, extra_diag=lam)
        dv = spla.spsolve(J.tocsc(), G.ravel()).reshape(v.shape)
        v = v - dv
        res = discounted_residual(system, lam, v)
        if res < 0.5 * best:
            best, stall = res, 0
        else:
            stall += 1
            if stall >= 8:
                break
    return v, it, res


def _march(system, lam, v, tol, max_iters):
    dt = system.max_dt(extra_diag=lam)
    res = discounted_residual(system, lam, v)
    it = 0
    while res > tol and it < max_iters:
        # residual check is the expensive part; test every few sweeps
        for _ in range(10):
            v = v - dt * (lam * v + system.operator(v))
            it += 1
        res = discounted_residual(system, lam, v)
    return v, it, res


def solve_discounted(system: DiscreteSystem, lam: float, tol: float = 1e-10, max_iters: int = 200,
                     method: str = "newton", v0: np.ndarray | None = None) -> DiscountedSolution:
    """Steady state of ``dv/dtau + lam v + G(v) = 0`` on the grid.

    ``method="newton"`` solves the discrete equations with a semismooth Newton
    (policy-iteration) loop on the same monotone operator and falls back to
    marching if it stalls; ``method="march"`` is plain pseudo-time marching.
    ``tol`` is raised to the rounding level of the residual, which grows
    like ``M / lam``.  The result is checked against the a priori box ``|v| <= M / lam`` and,
    for nonnegative costs with ``F(x, 0) = 0``, against ``v >= 0``.
    """
    if not lam > 0:
        raise ValueError("discount must be positive")
    v = np.zeros((system.m,) + system.grid.shape) if v0 is None else np.array(v0, dtype=float)
    M, nonneg = _a_priori_constant(system)
    # residual terms have size ~ |v| times the stencil weight; rounding sets a floor
    stencil = system.cfl_safety / system.max_dt(extra_diag=lam)
    scale = max(M / lam, float(np.max(np.abs(v))) if v.size else 0.0)
    tol = max(tol, ROUNDING_FACTOR * np.finfo(float).eps * scale * stencil)
    if method == "newton":
        v, iters, res = _newton(system, lam, v, tol, max_iters)
        if res > tol:
            logger.info("Newton stalled at residual %.3g (lam=%g); marching", res, lam)
            v, more, res = _march(system, lam, v, tol, max_iters * 1000)
            iters += more
            method = "newton+march"
    elif method == "march":
        v, iters, res = _march(system, lam, v, tol, max_iters)
    else:
        raise ValueError(f"unknown method {method!r}")
    if res > tol:
        raise NotConverged(f"residual {res:.3g} > {tol:.3g} after {iters} iterations (lam={lam:g})")
    slack = tol / lam + 1e-9 * (1 + M / lam)
    if np.max(np.abs(v)) > M / lam + slack:
        raise BoundViolated(f"|v| = {np.max(np.abs(v)):.6g} exceeds M/lam = {M / lam:.6g}")
    if nonneg and np.min(v) < -slack:
        raise BoundViolated(f"v has negative value {np.min(v):.3g} with nonnegative costs")
    return DiscountedSolution(lam, VectorGridField(system.grid, v), iters, res, method)


# --------------------------------------------------------------------------
# vanishing discount


@dataclass
class TraceEntry:
    lam: float
    lam_v_anchor: np.ndarray
    corrector_increment: float
    iterations: int


@dataclass
class ErgodicResult:
    trace: list[TraceEntry]
    c_estimate: np.ndarray
    corrector: VectorGridField
    anchor: int
    anchor_weights: np.ndarray
    bounds_check: tuple[float, float, bool] | None = None
    checks: list[Check] = field(default_factory=list)

    def to_json(self) -> dict:
        out = {
            "c_estimate": self.c_estimate.tolist(),
            "anchor_cell": self.anchor,
            "anchor_weights": self.anchor_weights.tolist(),
            "trace": [
                {"lambda": e.lam, "lambda_v_anchor": e.lam_v_anchor.tolist(),
                 "corrector_increment": e.corrector_increment, "iterations": e.iterations}
                for e in self.trace
            ],
            "checks": [c.to_json() for c in self.checks],
        }
        if self.bounds_check is not None:
            lo, hi, ok = self.bounds_check
            out["bounds"] = {"lower": lo, "upper": hi, "pass": ok}
        return out

    def trace_rows(self) -> list[dict]:
        rows = []
        for e in self.trace:
            row = {"lambda": e.lam}
            for i, val in enumerate(e.lam_v_anchor):
                row[f"lambda_v_{i + 1}"] = float(val)
            row["corrector_increment"] = e.corrector_increment
            rows.append(row)
        return rows


def default_schedule(lambda0: float = DEFAULT_LAMBDA0, levels: int = DEFAULT_LEVELS) -> np.ndarray:
    return lambda0 * 0.5 ** np.arange(levels + 1)


def extrapolate_to_zero(lams, values) -> np.ndarray:
    """Polynomial (Richardson) extrapolation to ``lam = 0`` through the given points.

    With halving steps and three points this is ``(8 a(l/4) - 6 a(l/2) + a(l)) / 3``.
    """
    lams = np.asarray(lams, dtype=float)
    values = np.asarray(values, dtype=float)
    weights = np.empty(len(lams))
    for k in range(len(lams)):
        others = np.delete(lams, k)
        weights[k] = np.prod(others / (others - lams[k]))
    return np.tensordot(weights, values, axes=1)


def anchor_weights(system: DiscreteSystem, cell: int) -> np.ndarray:
    """Perron weights at ``cell`` (uniform if the coupling there is reducible)."""
    D = system.coupling.at(cell)
    try:
        return cpl.perron_left_null_vector(D, cpl.PerronMode.GENERAL).lambda_vec
    except Exception:  # reducible or degenerate couplings
        return np.full(system.m, 1.0 / system.m)


def vanishing_discount(system: DiscreteSystem, lambdas=None, x_star: int | None = None, tol: float = 1e-10,
                       method: str = "newton", cauchy_tol: float = 1e-2, eps_set: float | None = None,
                       warm_start: bool = True) -> ErgodicResult:
    """Drive the discount to zero and extract ``c`` and a corrector.

    ``x_star`` is a flat cell index; by default the cell minimizing the sum of
    the costs (a cell of F when F is nonempty).  The corrector is ``v^lam``
    minus the Perron-weighted mean of ``v^lam(x*)``, so it solves the ergodic
    system in the limit and keeps differences between components.
    """
    lams = default_schedule() if lambdas is None else np.asarray(lambdas, dtype=float)
    if np.any(np.diff(lams) >= 0) or np.any(lams <= 0):
        raise ValueError("discount schedule must be positive and strictly decreasing")
    costs = system.costs.reshape(system.m, -1)
    if x_star is None:
        x_star = int(np.argmin(costs.sum(axis=0)))
    w = anchor_weights(system, x_star)
    trace: list[TraceEntry] = []
    prev_corr = None
    v = None
    lam_prev = None
    for lam in lams:
        v0 = None
        if warm_start and v is not None:
            anchor_vals = v.reshape(system.m, -1)[:, x_star]
            v0 = v + (lam_prev * anchor_vals * (1.0 / lam - 1.0 / lam_prev)).reshape(-1, *([1] * system.grid.dim))
        sol = solve_discounted(system, lam, tol=tol, method=method, v0=v0)
        v = sol.field.values
        lam_prev = lam
        at = v.reshape(system.m, -1)[:, x_star]
        corr = v - float(w @ at)
        inc = float("nan") if prev_corr is None else float(np.max(np.abs(corr - prev_corr)))
        prev_corr = corr
        trace.append(TraceEntry(float(lam), lam * at, inc, sol.iterations))
    lv = np.array([e.lam_v_anchor for e in trace])
    if len(trace) >= 3:
        c = -extrapolate_to_zero(lams[-3:], lv[-3:])
    else:
        c = -lv[-1]
    if len(trace) >= 4:
        c_prev = -extrapolate_to_zero(lams[-4:-1], lv[-4:-1])
        jump = float(np.max(np.abs(c - c_prev)))
        if jump > cauchy_tol * (1 + float(np.max(np.abs(c)))):
            raise ExtrapolationUnstable(f"extrapolated constant moved by {jump:.3g} between the last two windows")
    result = ErgodicResult(trace, c, VectorGridField(system.grid, prev_corr), x_star, w)

    from .model import compute_sets

    masks = compute_sets(system.problem, system.grid, eps_set)
    if not masks.F_empty:
        L = float(np.max(np.abs(system.gradients(prev_corr)[0])))
        on_F = prev_corr.reshape(system.m, -1)[:, masks.F_mask.ravel()]
        bound = 2 * system.grid.dx * max(L, 1.0)
        result.checks.append(Check("c_zero_when_F_nonempty", float(np.max(np.abs(c))), bound, bool(np.max(np.abs(c)) <= bound)))
        val = float(np.max(np.abs(on_F)))
        result.checks.append(Check("corrector_zero_on_F", val, bound, val <= bound))
    return result


# --------------------------------------------------------------------------
# bounds and residuals


def ergodic_bounds(system: DiscreteSystem, Lambda=None) -> tuple[float, float]:
    """Lower and upper bounds for ``-c_1`` from Perron-weighted cost minima.

    Requires a constant, irreducible coupling with zero row sums.
    """
    fld = system.coupling
    if not fld.constant:
        raise PreconditionFailed("ergodic bounds need a constant coupling")
    D = fld.at(0)
    if not cpl.is_irreducible(D).irreducible:
        raise PreconditionFailed("ergodic bounds need an irreducible coupling")
    if np.any(np.abs(D.sum(axis=1)) > cpl.EIG_TOL * max(1.0, np.abs(D).max())):
        raise PreconditionFailed("ergodic bounds need zero row sums")
    lam = cpl.perron_left_null_vector(D).lambda_vec if Lambda is None else np.asarray(Lambda, dtype=float)
    costs = system.costs.reshape(system.m, -1)
    total = lam.sum()
    lower = float(lam @ costs.min(axis=1)) / total
    upper = float(np.min(lam @ costs)) / total
    return lower, upper


def stationary_residual(system: DiscreteSystem, values, c) -> np.ndarray:
    """Per-equation ``sup_x |G_i(v) - c_i|``."""
    v = values.values if isinstance(values, VectorGridField) else np.asarray(values, dtype=float)
    c = np.broadcast_to(np.asarray(c, dtype=float), (system.m,))
    G = system.operator(v) - c.reshape(-1, *([1] * system.grid.dim))
    return np.abs(G).reshape(system.m, -1).max(axis=1)
