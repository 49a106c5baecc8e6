"""
Optimal control of a randomly switching system.

A state ``X_t`` on the torus moves with velocity ``sigma_i(X) a``, ``|a| <= 1``,
while the mode ``nu_t`` follows a continuous-time Markov chain with rates
``gamma_ij``.  The value

    u_i(x, t) = inf_a E_{x,i}[ int_0^t f_{nu_s}(X_s) ds + u0_{nu_t}(X_t) ]

solves the coupled system with ``F_i(x, p) = sigma_i(x) |p|`` and coupling
``d_ii = sum_{j != i} gamma_ij``, ``d_ij = -gamma_ij``.  This module
simulates the process by Monte Carlo, computes the value by a
semi-Lagrangian dynamic programming recursion, and compares the latter with
the finite-difference solver.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import StabilityViolated
from .evolutive import solve_until
from .grid import DiscreteSystem, TorusGrid
from .model import ModelProblem, _sample, eikonal

logger = logging.getLogger(__name__)

MC_CHUNK = 50_000
DIRECTIONS_2D = 16


def _eval(func, points: np.ndarray) -> np.ndarray:
    """Evaluate a coefficient at points of shape ``(n, dim)``."""
    return _sample(func, tuple(points.T))


@dataclass(frozen=True)
class ControlProblem:
    """Modes with speeds ``sigma``, costs ``f``, switching rates ``gamma``."""

    sigma: tuple
    f: tuple
    gamma: np.ndarray
    T: float = 1.0
    u0: tuple = ()
    period: float = 1.0
    dim: int = 1

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        m = len(self.f)
        if g.shape != (m, m) or len(self.sigma) != m:
            raise ValueError(f"inconsistent mode count: {len(self.sigma)} speeds, {m} costs, rates {g.shape}")
        np.fill_diagonal(g, 0.0)
        if np.any(g < 0):
            raise ValueError("switching rates must be nonnegative")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "sigma", tuple(self.sigma))
        object.__setattr__(self, "f", tuple(self.f))
        if not self.u0:
            object.__setattr__(self, "u0", (0.0,) * m)

    @property
    def m(self) -> int:
        return len(self.f)

    @property
    def exit_rates(self) -> np.ndarray:
        return self.gamma.sum(axis=1)

    def coupling_matrix(self) -> np.ndarray:
        return np.diag(self.exit_rates) - self.gamma

    def to_model_problem(self) -> ModelProblem:
        hs = tuple(eikonal(f=fi, sigma=si) for fi, si in zip(self.f, self.sigma))
        return ModelProblem(hs, self.coupling_matrix(), self.period, self.dim, tuple(self.u0))


class PolicyKind(str, Enum):
    ZERO = "zero"
    TOWARD_POINT = "toward_point"
    FEEDBACK = "feedback"


@dataclass(frozen=True)
class PolicySpec:
    """A control law ``a(x, mode)`` with ``|a| <= 1``.

    FEEDBACK takes a table of shape ``(m, *grid.shape, dim)`` looked up at the
    nearest cell of ``grid``.
    """

    kind: PolicyKind = PolicyKind.ZERO
    target: tuple | None = None
    table: np.ndarray | None = None
    grid: TorusGrid | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind is PolicyKind.TOWARD_POINT and self.target is None:
            raise ValueError("TOWARD_POINT needs a target")
        if self.kind is PolicyKind.FEEDBACK:
            if self.table is None or self.grid is None:
                raise ValueError("FEEDBACK needs a direction table and its grid")
            if np.any(np.linalg.norm(self.table, axis=-1) > 1 + 1e-12):
                raise ValueError("feedback directions must have norm <= 1")

    def directions(self, X: np.ndarray, modes: np.ndarray, period: float, reach: np.ndarray) -> np.ndarray:
        """Controls at positions ``X`` (n, dim).  ``reach`` is the distance one substep covers."""
        if self.kind is PolicyKind.ZERO:
            return np.zeros_like(X)
        if self.kind is PolicyKind.TOWARD_POINT:
            disp = np.asarray(self.target, dtype=float) - X
            disp -= period * np.rint(disp / period)
            dist = np.linalg.norm(disp, axis=1)
            # slow down on the last substep instead of overshooting
            scale = np.where(dist > reach, 1.0 / np.maximum(dist, 1e-300), 1.0 / np.maximum(reach, 1e-300))
            return disp * scale[:, None]
        g = self.grid
        idx = np.rint(np.mod(X, g.period) / g.dx).astype(int) % g.n
        return self.table[(modes,) + tuple(idx.T)]


@dataclass
class MCEstimate:
    mean: float
    stderr: float
    paths: int
    seed: int

    def to_json(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "paths": self.paths, "seed": self.seed}


def _simulate_chunk(problem: ControlProblem, policy: PolicySpec, x0, i0: int, rng: np.random.Generator,
                    n: int, h: float, T: float) -> np.ndarray:
    m = problem.m
    X = np.tile(np.atleast_1d(np.asarray(x0, dtype=float)), (n, 1))
    mode = np.full(n, i0, dtype=int)
    rates = problem.exit_rates
    probs = np.divide(problem.gamma, rates[:, None], out=np.zeros_like(problem.gamma), where=rates[:, None] > 0)
    cum = np.cumsum(probs, axis=1)

    def clock(modes):
        r = rates[modes]
        e = rng.exponential(size=modes.size)
        return np.where(r > 0, e / np.where(r > 0, r, 1.0), np.inf)

    next_switch = clock(mode)
    cost = np.zeros(n)
    rows = np.arange(n)
    moving = policy.kind is not PolicyKind.ZERO
    fvals = np.stack([_eval(fi, X) for fi in problem.f])
    svals = np.stack([_eval(si, X) for si in problem.sigma]) if moving else None
    nsteps = int(np.ceil(T / h - 1e-9))
    t = 0.0
    for _ in range(nsteps):
        step = min(h, T - t)
        t_end = t + step
        # running cost with exact switching times inside the substep
        seg_start = np.full(n, t)
        while True:
            hit = next_switch < t_end
            seg_end = np.where(hit, next_switch, t_end)
            cost += fvals[mode, rows] * (seg_end - seg_start)
            if not hit.any():
                break
            idx = np.flatnonzero(hit)
            new = (rng.random(idx.size)[:, None] < cum[mode[idx]]).argmax(axis=1)
            mode[idx] = new
            seg_start = seg_end
            next_switch[idx] = next_switch[idx] + clock(new)
        if moving:
            speed = svals[mode, rows]
            a = policy.directions(X, mode, problem.period, speed * step)
            X = np.mod(X + step * speed[:, None] * a, problem.period)
            fvals = np.stack([_eval(fi, X) for fi in problem.f])
            svals = np.stack([_eval(si, X) for si in problem.sigma])
        t = t_end
    for i in range(m):
        sel = mode == i
        if sel.any():
            cost[sel] += _eval(problem.u0[i], X[sel])
    return cost


def simulate_pdmp(problem: ControlProblem, policy: PolicySpec, x0, i0: int, seed: int = 0,
                  n_paths: int = 10_000, dt: float = 1e-3, T: float | None = None) -> MCEstimate:
    """Monte Carlo estimate of the expected cost from ``(x0, i0)`` (0-based mode).

    Switching uses exact exponential clocks; motion uses Euler substeps of
    ``dt / 4``.  Paths are simulated in chunks of fixed size with generators
    spawned from ``seed``, so the estimate does not depend on how the chunks
    are scheduled.
    """
    if not 0 <= i0 < problem.m:
        raise ValueError(f"mode {i0} not in [0, {problem.m})")
    T = problem.T if T is None else T
    h = dt / 4
    nchunks = -(-n_paths // MC_CHUNK)
    seqs = np.random.SeedSequence(seed).spawn(nchunks)
    costs = []
    for k, ss in enumerate(seqs):
        size = min(MC_CHUNK, n_paths - k * MC_CHUNK)
        costs.append(_simulate_chunk(problem, policy, x0, i0, np.random.default_rng(ss), size, h, T))
    c = np.concatenate(costs)
    stderr = float(c.std(ddof=1) / np.sqrt(c.size)) if c.size > 1 else 0.0
    return MCEstimate(float(c.mean()), stderr, int(c.size), seed)


# --------------------------------------------------------------------------
# dynamic programming


def control_directions(dim: int) -> np.ndarray:
    """Sampled unit controls plus the zero control, shape ``(k, dim)``."""
    if dim == 1:
        return np.array([[1.0], [-1.0], [0.0]])
    ang = 2 * np.pi * np.arange(DIRECTIONS_2D) / DIRECTIONS_2D
    return np.vstack([np.stack([np.cos(ang), np.sin(ang)], axis=1), np.zeros((1, 2))])


def periodic_interp(values: np.ndarray, grid: TorusGrid, points: tuple) -> np.ndarray:
    """Linear interpolation of a grid array at coordinate arrays ``points``."""
    idx = np.stack([np.asarray(p) / grid.dx for p in points])
    return map_coordinates(values, idx, order=1, mode="grid-wrap")


@dataclass
class DPResult:
    """Value layers; ``times[k]`` is the remaining horizon of ``values[k]``."""

    grid: TorusGrid
    dt: float
    times: np.ndarray
    values: np.ndarray  # (nlayers, m, *shape)
    policy: np.ndarray | None = field(default=None, repr=False)

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.values[k]


def default_dp_dt(problem: ControlProblem, grid: TorusGrid) -> float:
    coords = grid.coords()
    smax = max(float(np.max(_sample(s, coords))) for s in problem.sigma)
    rmax = float(problem.exit_rates.max())
    limits = [grid.dx / smax if smax > 0 else np.inf, 1.0 / rmax if rmax > 0 else np.inf, 0.05]
    return float(min(limits))


def dp_value(problem: ControlProblem, grid: TorusGrid, dt: float | None = None, T: float | None = None,
             keep_every: int = 1) -> DPResult:
    """Backward semi-Lagrangian recursion for the value function.

    ``u_i^n = dt f_i + (1 - dt q_i) min_a u_i^{n+1}(x + dt sigma_i a) + dt sum_j gamma_ij u_j^{n+1}``
    with ``q_i`` the exit rate of mode ``i``.  Requires ``dt q_i <= 1`` and
    ``dt sigma_i <= dx`` so that every coefficient is nonnegative and the
    foot of each characteristic stays within one cell.
    """
    T = problem.T if T is None else T
    if dt is None:
        dt = default_dp_dt(problem, grid)
    nsteps = int(round(T / dt))
    if nsteps < 1 or abs(nsteps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"dt={dt:g} does not divide the horizon T={T:g}")
    coords = grid.coords()
    q = problem.exit_rates
    speeds = np.stack([_sample(s, coords) for s in problem.sigma])
    if dt * q.max() > 1 + 1e-12:
        raise StabilityViolated(f"dt * max exit rate = {dt * q.max():.3g} > 1")
    if dt * speeds.max() > grid.dx * (1 + 1e-12):
        raise StabilityViolated(f"dt * max speed = {dt * speeds.max():.3g} exceeds dx = {grid.dx:.3g}")
    costs = np.stack([_sample(fi, coords) for fi in problem.f])
    dirs = control_directions(grid.dim)
    feet = [
        [tuple(c + dt * speeds[i] * a[k] for k, c in enumerate(coords)) for a in dirs]
        for i in range(problem.m)
    ]
    u = np.stack([_sample(u0, coords) for u0 in problem.u0])
    layers = [u.copy()]
    times = [0.0]
    best = np.zeros((problem.m,) + grid.shape, dtype=int)
    for n in range(1, nsteps + 1):
        new = np.empty_like(u)
        for i in range(problem.m):
            cand = np.stack([periodic_interp(u[i], grid, foot) for foot in feet[i]])
            best[i] = np.argmin(cand, axis=0)
            moved = np.min(cand, axis=0)
            switch = np.tensordot(problem.gamma[i], u, axes=1)
            new[i] = dt * costs[i] + (1 - dt * q[i]) * moved + dt * switch
        u = new
        if n % keep_every == 0 or n == nsteps:
            layers.append(u.copy())
            times.append(n * dt)
    policy = dirs[best]  # feedback at the last layer, shape (m, *shape, dim)
    return DPResult(grid, dt, np.array(times), np.stack(layers), policy)


def feedback_policy(result: DPResult) -> PolicySpec:
    return PolicySpec(PolicyKind.FEEDBACK, table=result.policy, grid=result.grid)


@dataclass
class CrossValidation:
    times: np.ndarray
    discrepancy: np.ndarray  # (ntimes, m)

    @property
    def max_per_mode(self) -> np.ndarray:
        return self.discrepancy.max(axis=0)

    def to_json(self) -> dict:
        return {"times": self.times.tolist(), "discrepancy": self.discrepancy.tolist(),
                "max_per_mode": self.max_per_mode.tolist()}


def cross_validate(problem: ControlProblem, grid: TorusGrid, dt: float | None = None, T: float | None = None,
                   n_compare: int = 4) -> CrossValidation:
    """Sup distance between the DP value and the PDE solution at matched times."""
    T = problem.T if T is None else T
    if dt is None:
        dt = default_dp_dt(problem, grid)
        dt = T / np.ceil(T / dt)
    dp = dp_value(problem, grid, dt, T)
    system = DiscreteSystem(problem.to_model_problem(), grid)
    u = system.problem.sample_initial(grid).values
    checkpoints = np.linspace(0, T, n_compare + 1)[1:]
    out = []
    t_prev = 0.0
    for tc in checkpoints:
        log = solve_until(system, u, tc - t_prev, sample_every=tc - t_prev, keep_snapshots=False)
        u = log.final.field.values
        t_prev = tc
        diff = np.abs(u - dp.at(tc)).reshape(problem.m, -1).max(axis=1)
        out.append(diff)
    return CrossValidation(checkpoints, np.array(out))
