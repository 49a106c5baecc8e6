"""
Problem data for weakly coupled Hamilton-Jacobi systems on the torus.

Each equation carries a Hamiltonian ``H_i(x, p) = F_i(x, p) - f_i(x)``; the
system couples the unknowns through a matrix field ``D(x)``.  This module
holds the data, audits the standing structural assumptions on a grid, and
computes the sets

    F   = {sum_i f_i = 0}            (common zeros of the costs)
    D_i = {sum_j d_ij = 0}           (vanishing row sums)
    A   = F  intersected with all D_i

on which the large-time dynamics degenerate to ``u' + D u = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import coupling as cpl
from .coupling import CouplingField
from .errors import IndexOutOfRange
from .grid import TorusGrid, VectorGridField

Coords = tuple  # tuple of coordinate arrays, one per axis


def _sample(func, coords: Coords) -> np.ndarray:
    """Evaluate ``func`` on coordinate arrays, broadcasting constants."""
    if func is None:
        return np.zeros_like(coords[0], dtype=float)
    if np.isscalar(func):
        return np.full_like(coords[0], float(func), dtype=float)
    out = func(*coords)
    return np.broadcast_to(np.asarray(out, dtype=float), np.shape(coords[0])).astype(float)


class HamiltonianKind(str, Enum):
    EIKONAL = "eikonal"
    SHIFTED_EIKONAL = "shifted_eikonal"
    QUADRATIC = "quadratic"
    CUSTOM = "custom"


@dataclass(frozen=True)
class HamiltonianSpec:
    """One equation's Hamiltonian ``F(x, p) - f(x)``.

    ``sigma`` and ``f`` are callables of the coordinates (or constants).
    EIKONAL is ``sigma |p|``, SHIFTED_EIKONAL ``|p + shift|``, QUADRATIC
    ``sigma |p|^2 / 2``.  CUSTOM takes ``custom(coords, p)``; its gradient
    falls back to central differences unless ``custom_grad`` is given.
    """

    kind: HamiltonianKind
    f: Callable | float = 0.0
    sigma: Callable | float = 1.0
    shift: tuple[float, ...] | None = None
    custom: Callable | None = None
    custom_grad: Callable | None = None
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", HamiltonianKind(self.kind))
        if self.kind is HamiltonianKind.CUSTOM and self.custom is None:
            raise ValueError("CUSTOM Hamiltonian needs a callable")
        if self.kind is HamiltonianKind.SHIFTED_EIKONAL and self.shift is None:
            raise ValueError("SHIFTED_EIKONAL needs a shift vector")

    def cost(self, coords: Coords) -> np.ndarray:
        return _sample(self.f, coords)

    def speed(self, coords: Coords) -> np.ndarray:
        return _sample(self.sigma, coords)

    def _shift(self, p) -> np.ndarray:
        q = np.asarray(self.shift, dtype=float).reshape(-1, *([1] * (np.ndim(p) - 1)))
        return p + q

    def F(self, coords: Coords, p) -> np.ndarray:
        """``F(x, p)``; ``p`` has a leading axis of length dim."""
        p = np.asarray(p, dtype=float)
        kind = self.kind
        if kind is HamiltonianKind.EIKONAL:
            return self.speed(coords) * np.sqrt(np.sum(p * p, axis=0))
        if kind is HamiltonianKind.SHIFTED_EIKONAL:
            ps = self._shift(p)
            return np.broadcast_to(np.sqrt(np.sum(ps * ps, axis=0)), np.broadcast_shapes(p.shape[1:], np.shape(coords[0])))
        if kind is HamiltonianKind.QUADRATIC:
            return 0.5 * self.speed(coords) * np.sum(p * p, axis=0)
        return np.asarray(self.custom(coords, p), dtype=float)

    def F_grad(self, coords: Coords, p) -> np.ndarray:
        """``dF/dp`` (an element of the subdifferential at kinks)."""
        p = np.asarray(p, dtype=float)
        kind = self.kind
        if kind is HamiltonianKind.EIKONAL:
            norm = np.sqrt(np.sum(p * p, axis=0))
            unit = np.where(norm > 0, p / np.where(norm > 0, norm, 1.0), 0.0)
            return self.speed(coords) * unit
        if kind is HamiltonianKind.SHIFTED_EIKONAL:
            ps = self._shift(p)
            norm = np.sqrt(np.sum(ps * ps, axis=0))
            return np.where(norm > 0, ps / np.where(norm > 0, norm, 1.0), 0.0)
        if kind is HamiltonianKind.QUADRATIC:
            return self.speed(coords) * p
        if self.custom_grad is not None:
            return np.asarray(self.custom_grad(coords, p), dtype=float)
        h = 1e-6
        out = []
        for a in range(p.shape[0]):
            e = np.zeros(p.shape[0]).reshape(-1, *([1] * (p.ndim - 1)))
            e[a] = h
            out.append((self.F(coords, p + e) - self.F(coords, p - e)) / (2 * h))
        return np.stack(out)

    def H(self, coords: Coords, p) -> np.ndarray:
        return self.F(coords, p) - self.cost(coords)


def eikonal(f=0.0, sigma=1.0, label: str = "") -> HamiltonianSpec:
    return HamiltonianSpec(HamiltonianKind.EIKONAL, f=f, sigma=sigma, label=label)


def shifted_eikonal(shift, f=0.0, label: str = "") -> HamiltonianSpec:
    return HamiltonianSpec(HamiltonianKind.SHIFTED_EIKONAL, f=f, shift=tuple(np.atleast_1d(shift).astype(float)), label=label)


def quadratic(f=0.0, sigma=1.0, label: str = "") -> HamiltonianSpec:
    return HamiltonianSpec(HamiltonianKind.QUADRATIC, f=f, sigma=sigma, label=label)


@dataclass(frozen=True, eq=False)
class ModelProblem:
    """Hamiltonians, coupling and initial data of one system.

    ``coupling`` is a constant matrix, a :class:`CouplingField`, or a callable
    of the coordinates returning an array of shape ``(*grid_shape, m, m)``.
    """

    hamiltonians: tuple[HamiltonianSpec, ...]
    coupling: object
    period: float = 1.0
    dim: int = 1
    initial_data: tuple = ()
    labels: tuple[str, ...] = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "hamiltonians", tuple(self.hamiltonians))
        if isinstance(self.coupling, (list, tuple, np.ndarray)):
            object.__setattr__(self, "coupling", CouplingField.constant_matrix(np.asarray(self.coupling, dtype=float)))
        if isinstance(self.coupling, CouplingField) and self.coupling.m != self.m:
            raise ValueError(f"coupling is {self.coupling.m}x{self.coupling.m} but there are {self.m} equations")
        if not self.initial_data:
            object.__setattr__(self, "initial_data", (0.0,) * self.m)
        if len(self.initial_data) != self.m:
            raise ValueError(f"{len(self.initial_data)} initial data for {self.m} equations")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"u{i + 1}" for i in range(self.m)))

    @property
    def m(self) -> int:
        return len(self.hamiltonians)

    def coupling_on(self, grid: TorusGrid) -> CouplingField:
        key = ("coupling", grid)
        if key not in self._cache:
            c = self.coupling
            if isinstance(c, CouplingField):
                if not c.constant and c.ncells != grid.ncells:
                    raise ValueError(f"coupling sampled on {c.ncells} cells, grid has {grid.ncells}")
                fld = c
            else:
                mats = np.asarray(c(*grid.coords()), dtype=float).reshape(grid.ncells, self.m, self.m)
                fld = CouplingField(mats, constant=False)
            self._cache[key] = fld
        return self._cache[key]

    def sample_initial(self, grid: TorusGrid) -> VectorGridField:
        coords = grid.coords()
        return VectorGridField(grid, np.stack([_sample(u0, coords) for u0 in self.initial_data]), 0.0)

    def costs_on(self, grid: TorusGrid) -> np.ndarray:
        coords = grid.coords()
        return np.stack([h.cost(coords) for h in self.hamiltonians])

    def with_initial(self, initial_data) -> "ModelProblem":
        return ModelProblem(self.hamiltonians, self.coupling, self.period, self.dim, tuple(initial_data), self.labels)

    def with_costs(self, costs) -> "ModelProblem":
        hs = tuple(
            HamiltonianSpec(h.kind, f=c, sigma=h.sigma, shift=h.shift, custom=h.custom,
                            custom_grad=h.custom_grad, label=h.label)
            for h, c in zip(self.hamiltonians, costs)
        )
        return ModelProblem(hs, self.coupling, self.period, self.dim, self.initial_data, self.labels)


def evaluate_hamiltonian(problem: ModelProblem, i: int, x, p) -> float:
    """``H_i(x, p) = F_i(x, p) - f_i(x)`` at a single point."""
    if not 0 <= i < problem.m:
        raise IndexOutOfRange(f"equation index {i} not in [0, {problem.m})")
    coords = tuple(np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1, 1))
    pv = np.atleast_1d(np.asarray(p, dtype=float)).reshape(-1, 1)
    return float(problem.hamiltonians[i].H(coords, pv)[0])


# --------------------------------------------------------------------------
# assumption audit


@dataclass
class Verdict:
    ok: bool
    witnesses: list = field(default_factory=list)
    note: str = ""

    def to_json(self) -> dict:
        return {"ok": self.ok, "witnesses": [_jsonable(w) for w in self.witnesses[:20]], "note": self.note}


def _jsonable(w):
    if isinstance(w, dict):
        return {k: _jsonable(v) for k, v in w.items()}
    if isinstance(w, (list, tuple)):
        return [_jsonable(v) for v in w]
    if isinstance(w, np.ndarray):
        return w.tolist()
    if isinstance(w, (np.generic, Enum)):
        return w.item() if isinstance(w, np.generic) else w.value
    return w


@dataclass
class AssumptionAudit:
    """Per-assumption verdicts on the grid sampling.

    Keys: ``periodicity``, ``convexity``, ``coercivity``, ``F_zero_at_origin``,
    ``F_nonnegative``, ``costs_nonnegative``, ``coupling_monotone``,
    ``irreducible``, ``row_sums_zero``.
    """

    verdicts: dict[str, Verdict]

    def ok(self, name: str) -> bool:
        return self.verdicts[name].ok

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.verdicts.items() if not v.ok]

    @property
    def structural_H1(self) -> bool:
        return all(self.ok(k) for k in ("convexity", "coercivity", "F_zero_at_origin", "F_nonnegative"))

    @property
    def convergence_hypotheses(self) -> bool:
        """All hypotheses of the large-time convergence result except A being nonempty."""
        keys = ("periodicity", "convexity", "coercivity", "F_zero_at_origin", "F_nonnegative",
                "costs_nonnegative", "coupling_monotone", "irreducible")
        return all(self.ok(k) for k in keys)

    def to_json(self) -> dict:
        return {k: v.to_json() for k, v in self.verdicts.items()}


def _random_dirs(rng, dim: int, n: int) -> np.ndarray:
    v = rng.normal(size=(dim, n))
    return v / np.linalg.norm(v, axis=0, keepdims=True)


_COERCIVITY_RADII = (10.0, 30.0, 100.0, 300.0)


def assumption_audit(problem: ModelProblem, grid: TorusGrid, n_prob: int = 200, tol: float = 1e-9,
                     seed: int = 0) -> AssumptionAudit:
    """Sample the structural assumptions on ``grid``.

    Convexity uses the midpoint inequality on ``n_prob`` random ``(x, p, p')``
    triples; coercivity requires strict growth along random rays at ``|p|`` in 10, 30, 100, 300.
    """
    rng = np.random.default_rng(seed)
    coords = grid.coords()
    flat = [c.ravel() for c in coords]
    dim = grid.dim
    L = problem.period
    V: dict[str, Verdict] = {}

    # periodicity of costs and F along each axis, at random points
    pts = rng.uniform(0, L, size=(dim, n_prob))
    bad = []
    for i, h in enumerate(problem.hamiltonians):
        base = tuple(pts)
        pr = rng.normal(scale=3.0, size=(dim, n_prob))
        f0 = h.cost(base)
        F0 = h.F(base, pr)
        for a in range(dim):
            shifted = list(pts)
            shifted[a] = pts[a] + L
            sh = tuple(shifted)
            scale = 1.0 + np.abs(f0) + np.abs(F0)
            err = np.maximum(np.abs(h.cost(sh) - f0), np.abs(h.F(sh, pr) - F0)) / scale
            for k in np.flatnonzero(err > 1e-8):
                bad.append({"equation": i, "axis": a, "x": pts[:, k].tolist(), "defect": float(err[k])})
    V["periodicity"] = Verdict(not bad, bad)

    # convexity (midpoint) and coercivity
    conv, coer, fzero, fneg = [], [], [], []
    for i, h in enumerate(problem.hamiltonians):
        idx = rng.integers(grid.ncells, size=n_prob)
        xs = tuple(c[idx] for c in flat)
        p = rng.normal(scale=5.0, size=(dim, n_prob))
        q = rng.normal(scale=5.0, size=(dim, n_prob))
        lhs = h.F(xs, 0.5 * (p + q))
        rhs = 0.5 * (h.F(xs, p) + h.F(xs, q))
        for k in np.flatnonzero(lhs > rhs + tol * (1 + np.abs(rhs))):
            conv.append({"equation": i, "cell": int(idx[k]), "defect": float(lhs[k] - rhs[k])})
        e = _random_dirs(rng, dim, n_prob)
        g = np.stack([h.F(xs, r * e) for r in _COERCIVITY_RADII])
        for k in np.flatnonzero(~np.all(np.diff(g, axis=0) > tol, axis=0)):
            coer.append({"equation": i, "cell": int(idx[k]), "F_on_rays": g[:, k].tolist()})
        zero = np.zeros((dim,) + coords[0].shape)
        F0 = h.F(coords, zero).ravel()
        for k in np.flatnonzero(np.abs(F0) > tol):
            fzero.append({"equation": i, "cell": int(k), "F(x,0)": float(F0[k])})
        Fp = h.F(xs, p)
        F0s = h.F(xs, np.zeros_like(p))
        for k in np.flatnonzero(Fp < F0s - tol):
            fneg.append({"equation": i, "cell": int(idx[k]), "F": float(Fp[k]), "F(x,0)": float(F0s[k])})
    V["convexity"] = Verdict(not conv, conv)
    V["coercivity"] = Verdict(not coer, coer)
    V["F_zero_at_origin"] = Verdict(not fzero, fzero)
    V["F_nonnegative"] = Verdict(not fneg, fneg)

    costs = problem.costs_on(grid).reshape(problem.m, -1)
    neg = [{"equation": i, "cell": int(k), "f": float(costs[i, k])}
           for i in range(problem.m) for k in np.flatnonzero(costs[i] < -tol)]
    V["costs_nonnegative"] = Verdict(not neg, neg)

    fld = problem.coupling_on(grid)
    mono = cpl.check_monotone_coupling(fld, tol)
    V["coupling_monotone"] = Verdict(mono.holds, [v.__dict__ | {"kind": v.kind.value} for v in mono.violations])
    red = []
    for cell, mat in enumerate(fld.matrices):
        w = cpl.is_irreducible(mat)
        if not w.irreducible:
            red.append({"cell": cell, "separating_set": sorted(w.separating_set)})
    V["irreducible"] = Verdict(not red, red)
    rows = fld.row_sums()
    nz = [{"cell": int(c), "row": int(i), "sum": float(rows[c, i])}
          for c, i in zip(*np.nonzero(np.abs(rows) > tol))]
    V["row_sums_zero"] = Verdict(not nz, nz, note="report only: zero row sums are needed only on A")
    return AssumptionAudit(V)


# --------------------------------------------------------------------------
# the sets F, D_i, A


@dataclass
class SetMasks:
    F_mask: np.ndarray
    D_masks: np.ndarray
    A_mask: np.ndarray

    @property
    def F_empty(self) -> bool:
        return not self.F_mask.any()

    @property
    def A_empty(self) -> bool:
        return not self.A_mask.any()

    @property
    def D_empty(self) -> list[bool]:
        return [not d.any() for d in self.D_masks]

    def A_cells(self) -> np.ndarray:
        return np.flatnonzero(self.A_mask.ravel())

    def to_json(self) -> dict:
        return {
            "F_cells": np.flatnonzero(self.F_mask.ravel()).tolist(),
            "A_cells": self.A_cells().tolist(),
            "D_sizes": [int(d.sum()) for d in self.D_masks],
            "F_empty": self.F_empty,
            "A_empty": self.A_empty,
        }


def default_eps_set(problem: ModelProblem, grid: TorusGrid) -> float:
    costs = problem.costs_on(grid)
    return 1e-8 * float(np.max(np.abs(costs), initial=0.0)) + 1e-12


def compute_sets(problem: ModelProblem, grid: TorusGrid, eps_set: float | None = None) -> SetMasks:
    """Cellwise masks of F, each D_i and A = F and all D_i."""
    if eps_set is None:
        eps_set = default_eps_set(problem, grid)
    costs = problem.costs_on(grid)
    F_mask = costs.sum(axis=0) <= eps_set
    rows = problem.coupling_on(grid).row_sums()  # (ncells or 1, m)
    rows = np.broadcast_to(rows, (grid.ncells, problem.m)) if rows.shape[0] == 1 else rows
    D_masks = np.stack([(rows[:, i] <= eps_set).reshape(grid.shape) for i in range(problem.m)])
    A_mask = F_mask & D_masks.all(axis=0)
    return SetMasks(F_mask, D_masks, A_mask)


def lambda_on_cells(problem: ModelProblem, grid: TorusGrid, cells: Sequence[int]) -> np.ndarray:
    """Perron vectors (rows) of the coupling at ``cells``."""
    return problem.coupling_on(grid).lambda_at(cells, cpl.PerronMode.GENERAL)
