"""
Periodic grids, one-sided differences and the monotone Lax-Friedrichs scheme.

The semi-discrete operator for equation ``i`` at cell ``k`` is

    G_i(u)_k = F_i(x_k, (p- + p+)/2) - f_i(x_k)
               - theta_i * sum_axes (p+ - p-)/2 + sum_j d_ij(x_k) u_j(x_k)

with ``p-``/``p+`` the backward/forward differences.  An explicit Euler step
``u - dt G(u)`` is nondecreasing in every stencil value provided
``theta_i >= |dF_i/dp_a|`` on the gradients met and
``dt (theta_i dim / dx + max d_ii) <= 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CflViolated, DegenerateGrid

if TYPE_CHECKING:
    from .model import ModelProblem

THETA_INFLATION = 1.2


@dataclass(frozen=True)
class TorusGrid:
    """Uniform cell grid on ``[0, period)^dim`` with periodic identification."""

    dim: int
    n: int
    period: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DegenerateGrid(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 8:
            raise DegenerateGrid(f"need at least 8 cells per axis, got {self.n}")
        if not self.period > 0:
            raise DegenerateGrid(f"period must be positive, got {self.period}")

    @property
    def dx(self) -> float:
        return self.period / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def ncells(self) -> int:
        return self.n**self.dim

    def axis(self) -> np.ndarray:
        return np.arange(self.n) * self.dx

    def coords(self) -> tuple[np.ndarray, ...]:
        """Cell coordinates, one array of shape ``self.shape`` per axis."""
        return tuple(np.meshgrid(*([self.axis()] * self.dim), indexing="ij"))

    def flat_coords(self) -> np.ndarray:
        return np.stack([c.ravel() for c in self.coords()], axis=1)

    def cell_of(self, point) -> int:
        """Flat index of the cell nearest to ``point`` (wrapped onto the torus)."""
        pt = np.atleast_1d(np.asarray(point, dtype=float))
        idx = np.rint(np.mod(pt, self.period) / self.dx).astype(int) % self.n
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def point_of(self, cell: int) -> np.ndarray:
        return np.array(np.unravel_index(cell, self.shape), dtype=float) * self.dx

    def to_json(self) -> dict:
        return {"dim": self.dim, "n": self.n, "period": self.period}


@dataclass
class VectorGridField:
    """``m`` scalar fields on a grid; ``values`` has shape ``(m, *grid.shape)``."""

    grid: TorusGrid
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[1:] != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    def flat(self) -> np.ndarray:
        return self.values.reshape(self.m, -1)

    def copy(self) -> "VectorGridField":
        return VectorGridField(self.grid, self.values.copy(), self.t)


def gradient_pair(u: np.ndarray, dx: float, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Backward and forward differences with periodic wraparound.

    The last ``dim`` axes of ``u`` are spatial; outputs carry a leading axis
    of length ``dim``.
    """
    axes = range(u.ndim - dim, u.ndim)
    pm = np.stack([(u - np.roll(u, 1, axis=a)) / dx for a in axes])
    pp = np.stack([(np.roll(u, -1, axis=a) - u) / dx for a in axes])
    return pm, pp


def lf_hamiltonian(problem: "ModelProblem", i: int, x, p_minus, p_plus, theta_i: float):
    """Lax-Friedrichs numerical Hamiltonian at a point.

    ``p_minus``/``p_plus`` are per-axis one-sided differences (scalars in 1-D).
    """
    pm = np.atleast_1d(np.asarray(p_minus, dtype=float))
    pp = np.atleast_1d(np.asarray(p_plus, dtype=float))
    h = problem.hamiltonians[i]
    coords = tuple(c.reshape(1) for c in np.atleast_1d(np.asarray(x, dtype=float)))
    pbar = 0.5 * (pm + pp)
    val = h.F(coords, pbar[:, None]) - h.cost(coords)
    return float(np.squeeze(val) - theta_i * np.sum(pp - pm) / 2.0)


@dataclass
class SchemeParams:
    thetas: np.ndarray
    cfl_safety: float = 0.9
    dt: float = 0.0


def cfl_max_dt(problem: "ModelProblem", grid: TorusGrid, thetas, cfl_safety: float = 0.9,
               extra_diag: float = 0.0) -> float:
    """Largest explicit step keeping the coupled update monotone.

    ``extra_diag`` adds a zeroth-order term such as a discount factor.
    """
    thetas = np.broadcast_to(np.asarray(thetas, dtype=float), (problem.m,))
    dmax = np.diagonal(problem.coupling_on(grid).matrices, axis1=1, axis2=2).max(axis=0)
    rate = np.max(thetas * grid.dim / grid.dx + dmax + extra_diag)
    if not rate > 0:
        raise DegenerateGrid("no transport, coupling or discount: step size unbounded")
    return float(cfl_safety / rate)


class DiscreteSystem:
    """A model problem sampled on a grid together with its monotone operator."""

    def __init__(self, problem: "ModelProblem", grid: TorusGrid, thetas=None,
                 cfl_safety: float = 0.9, u_ref: np.ndarray | None = None):
        if grid.dim != problem.dim:
            raise ValueError(f"grid dim {grid.dim} != problem dim {problem.dim}")
        if abs(grid.period - problem.period) > 1e-12 * problem.period:
            raise ValueError(f"grid period {grid.period} != problem period {problem.period}")
        self.problem = problem
        self.grid = grid
        self.coords = grid.coords()
        self.m = problem.m
        self.costs = np.stack([h.cost(self.coords) for h in problem.hamiltonians])
        self.coupling = problem.coupling_on(grid)
        if thetas is None:
            thetas = estimate_thetas(self, u_ref)
        self.thetas = np.broadcast_to(np.asarray(thetas, dtype=float), (self.m,)).copy()
        self.cfl_safety = cfl_safety

    # -- pieces of the operator -------------------------------------------
    def gradients(self, u: np.ndarray):
        return gradient_pair(u, self.grid.dx, self.grid.dim)

    def hamiltonian_terms(self, u: np.ndarray) -> np.ndarray:
        """``F_i(x, pbar) - f_i - theta_i sum (p+ - p-)/2`` for all equations."""
        pm, pp = self.gradients(u)
        pbar = 0.5 * (pm + pp)
        out = np.empty_like(u)
        for i, h in enumerate(self.problem.hamiltonians):
            out[i] = h.F(self.coords, pbar[:, i]) - self.costs[i] - self.thetas[i] * 0.5 * (pp[:, i] - pm[:, i]).sum(axis=0)
        return out

    def coupling_terms(self, u: np.ndarray) -> np.ndarray:
        flat = u.reshape(self.m, -1)
        if self.coupling.constant:
            out = self.coupling.matrices[0] @ flat
        else:
            out = np.einsum("kij,jk->ik", self.coupling.matrices, flat)
        return out.reshape(u.shape)

    def operator(self, u: np.ndarray) -> np.ndarray:
        return self.hamiltonian_terms(u) + self.coupling_terms(u)

    def max_dt(self, extra_diag: float = 0.0) -> float:
        return cfl_max_dt(self.problem, self.grid, self.thetas, self.cfl_safety, extra_diag)

    def params(self, extra_diag: float = 0.0) -> SchemeParams:
        return SchemeParams(self.thetas.copy(), self.cfl_safety, self.max_dt(extra_diag))

    def check_cfl(self, dt: float, extra_diag: float = 0.0) -> None:
        limit = cfl_max_dt(self.problem, self.grid, self.thetas, 1.0, extra_diag)
        if dt > limit * (1 + 1e-12):
            raise CflViolated(f"dt={dt:.3g} exceeds monotone limit {limit:.3g}")

    def theta_ok(self, u: np.ndarray) -> bool:
        """Whether the current thetas dominate ``|dF/dp|`` on the gradients of ``u``."""
        pm, pp = self.gradients(u)
        pbar = 0.5 * (pm + pp)
        for i, h in enumerate(self.problem.hamiltonians):
            g = h.F_grad(self.coords, pbar[:, i])
            if np.max(np.abs(g)) > self.thetas[i] * (1 + 1e-12):
                return False
        return True

    # -- linearization (used by Newton solves) ----------------------------
    def jacobian(self, u: np.ndarray, extra_diag: float = 0.0) -> sp.csr_matrix:
        """Sparse Jacobian of ``operator(u) + extra_diag * u`` (a generalized one at kinks)."""
        grid = self.grid
        nc = grid.ncells
        dx = grid.dx
        pm, pp = self.gradients(u)
        pbar = 0.5 * (pm + pp)
        idx = np.arange(nc).reshape(grid.shape)
        rows, cols, vals = [], [], []
        for i, h in enumerate(self.problem.hamiltonians):
            g = h.F_grad(self.coords, pbar[:, i])
            th = self.thetas[i]
            base = i * nc
            diag = np.full(nc, th * grid.dim / dx + extra_diag)
            for a in range(grid.dim):
                ga = g[a].ravel()
                nxt = np.roll(idx, -1, axis=a).ravel()
                prv = np.roll(idx, 1, axis=a).ravel()
                rows += [base + idx.ravel(), base + idx.ravel()]
                cols += [base + nxt, base + prv]
                vals += [(ga - th) / (2 * dx), (-ga - th) / (2 * dx)]
            rows.append(base + idx.ravel())
            cols.append(base + idx.ravel())
            vals.append(diag)
        mats = self.coupling.broadcast(nc)
        for i in range(self.m):
            for j in range(self.m):
                dij = np.asarray(mats[:, i, j])
                if np.any(dij != 0):
                    rows.append(i * nc + np.arange(nc))
                    cols.append(j * nc + np.arange(nc))
                    vals.append(dij.copy())
        J = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.m * nc, self.m * nc),
        )
        return J.tocsr()


def _cost_gradient_bound(system: DiscreteSystem, i: int, level: float) -> float:
    """Smallest power-of-two radius R with F_i(x, R e) above ``level`` in every sampled direction."""
    h = system.problem.hamiltonians[i]
    dim = system.grid.dim
    if dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        ang = np.linspace(0, 2 * np.pi, 16, endpoint=False)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    R = 0.5
    for _ in range(40):
        R *= 2
        lowest = min(float(np.min(h.F(system.coords, np.broadcast_to(
            (R * d).reshape(dim, *([1] * dim)), (dim, *system.grid.shape))))) for d in dirs)
        if lowest >= level:
            return R
    return R


def estimate_thetas(system: DiscreteSystem, u_ref: np.ndarray | None = None,
                    n_samples: int = 9, seed: int = 0) -> np.ndarray:
    """Dissipation coefficients from sampled ``|dF_i/dp|``, inflated by 1.2.

    ``p`` ranges over the hypercube spanned by the gradients of ``u_ref``
    widened to the radius where ``F_i`` exceeds the costs plus one; solutions
    stay inside it (uniform Lipschitz bound), so the estimate is safe.
    """
    rng = np.random.default_rng(seed)
    dim = system.grid.dim
    thetas = np.empty(system.m)
    if u_ref is not None:
        pm, pp = system.gradients(np.asarray(u_ref, dtype=float))
    for i, h in enumerate(system.problem.hamiltonians):
        level = float(np.max(system.costs[i])) + 1.0
        R = _cost_gradient_bound(system, i, level)
        lo = np.full(dim, -R)
        hi = np.full(dim, R)
        if u_ref is not None:
            for a in range(dim):
                lo[a] = min(lo[a], pm[a, i].min(), pp[a, i].min())
                hi[a] = max(hi[a], pm[a, i].max(), pp[a, i].max())
        grid_pts = [np.linspace(lo[a], hi[a], n_samples) for a in range(dim)]
        samples = np.stack(np.meshgrid(*grid_pts, indexing="ij"), axis=0).reshape(dim, -1)
        samples = np.concatenate([samples, rng.uniform(lo[:, None], hi[:, None], (dim, 64))], axis=1)
        best = 0.0
        for p in samples.T:
            pf = np.broadcast_to(p.reshape(dim, *([1] * dim)), (dim, *system.grid.shape))
            best = max(best, float(np.max(np.abs(h.F_grad(system.coords, pf)))))
        thetas[i] = THETA_INFLATION * max(best, 1e-12)
    return thetas


def monotone_step_probe(system: DiscreteSystem, u: np.ndarray, dt: float, n_probes: int = 20,
                        delta: float = 1e-6, seed: int = 0) -> float:
    """Most negative response of one explicit step to a positive single-value bump.

    A monotone step returns a value >= 0 (up to rounding).
    """
    rng = np.random.default_rng(seed)
    base = u - dt * system.operator(u)
    worst = np.inf
    for _ in range(n_probes):
        bumped = u.copy()
        i = rng.integers(system.m)
        k = tuple(rng.integers(system.grid.n, size=system.grid.dim))
        bumped[(i, *k)] += delta
        out = bumped - dt * system.operator(bumped)
        worst = min(worst, float(np.min(out - base)))
    return worst


__all__: Sequence[str] = (
    "TorusGrid",
    "VectorGridField",
    "SchemeParams",
    "DiscreteSystem",
    "gradient_pair",
    "lf_hamiltonian",
    "cfl_max_dt",
    "estimate_thetas",
    "monotone_step_probe",
)
