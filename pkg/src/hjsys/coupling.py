"""
Coupling-matrix analysis.

A coupling matrix ``D = (d_ij)`` of a weakly coupled system is *monotone* when

    d_ii >= 0,   d_ij <= 0 (i != j),   sum_j d_ij >= 0.

Such a matrix is always an M-matrix ``D = s I - B`` with ``B >= 0`` and
``s >= rho(B)``.  When it is also irreducible and its row sums vanish, zero is
a simple eigenvalue, every other eigenvalue has positive real part, and there
is a strictly positive left null vector ``Lambda`` (built here from the
cofactor matrix).  ``exp(-tD)`` then converges to the rank-one projector
``1 Lambda^T``.

Indices are 0-based throughout.
"""

from __future__ import annotations

import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateCofactor,
    KernelDimNotOne,
    MonotonicityViolated,
    NotIrreducible,
    NotNonnegative,
    RowSumsNonzero,
)

logger = logging.getLogger(__name__)

#: eigenvalues with modulus below this are classified as zero
EIG_TOL = 1e-9


class CouplingField:
    """An m x m coupling matrix, either constant or sampled per grid cell.

    ``matrices`` has shape ``(ncells, m, m)``; a constant field stores a
    single matrix and answers every cell with it.
    """

    def __init__(self, matrices: np.ndarray, constant: bool | None = None):
        arr = np.asarray(matrices, dtype=float)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
            raise ValueError(f"coupling matrices must be (ncells, m, m), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("coupling matrices must be finite")
        if constant is None:
            constant = arr.shape[0] == 1
        if constant and arr.shape[0] != 1:
            raise ValueError("a CONSTANT coupling field stores exactly one matrix")
        self.matrices = arr
        self.constant = bool(constant)
        self._perron_cache: dict[bytes, PerronData] = {}

    @classmethod
    def constant_matrix(cls, D) -> "CouplingField":
        return cls(np.asarray(D, dtype=float)[None], constant=True)

    @property
    def m(self) -> int:
        return self.matrices.shape[1]

    @property
    def ncells(self) -> int:
        return self.matrices.shape[0]

    def at(self, cell: int = 0) -> np.ndarray:
        return self.matrices[0] if self.constant else self.matrices[cell]

    def broadcast(self, ncells: int) -> np.ndarray:
        """Per-cell matrices of shape ``(ncells, m, m)`` (a view when constant)."""
        if self.constant:
            return np.broadcast_to(self.matrices[0], (ncells, self.m, self.m))
        if self.ncells != ncells:
            raise ValueError(f"field has {self.ncells} cells, asked for {ncells}")
        return self.matrices

    def row_sums(self) -> np.ndarray:
        return self.matrices.sum(axis=2)

    def max_diagonal(self) -> float:
        return float(np.max(np.diagonal(self.matrices, axis1=1, axis2=2), initial=0.0))

    def perron(self, cell: int = 0, mode: "PerronMode | str" = "general") -> "PerronData":
        """Memoized :func:`perron_left_null_vector` at ``cell``."""
        D = self.at(cell)
        key = D.tobytes() + str(PerronMode(mode)).encode()
        if key not in self._perron_cache:
            self._perron_cache[key] = perron_left_null_vector(D, mode)
        return self._perron_cache[key]

    def lambda_at(self, cells: Sequence[int], mode: "PerronMode | str" = "degenerate") -> np.ndarray:
        """Perron vectors at ``cells`` stacked as ``(len(cells), m)``."""
        return np.array([self.perron(int(c), mode).lambda_vec for c in cells]).reshape(len(cells), self.m)

    def lambda_continuity(self, cells: Sequence[int], mode: "PerronMode | str" = "general") -> float:
        """Largest sup-norm jump of Lambda between consecutive cells in ``cells``.

        Reported only; discontinuities are not reconciled.
        """
        lam = self.lambda_at(cells, mode)
        if len(lam) < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(lam, axis=0))))

    def to_json(self):
        if self.constant:
            return self.matrices[0].tolist()
        return {"per_cell": self.matrices.tolist()}

    def __repr__(self) -> str:
        kind = "CONSTANT" if self.constant else f"{self.ncells} cells"
        return f"CouplingField(m={self.m}, {kind})"


# --------------------------------------------------------------------------
# monotonicity


class ViolationKind(str, Enum):
    DIAG_SIGN = "DIAG_SIGN"
    OFFDIAG_SIGN = "OFFDIAG_SIGN"
    ROW_SUM = "ROW_SUM"


@dataclass(frozen=True)
class Violation:
    cell: int
    i: int
    j: int | None
    kind: ViolationKind
    value: float


@dataclass
class MonotonicityReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "holds": self.holds,
            "violations": [
                {"cell": v.cell, "i": v.i, "j": v.j, "kind": v.kind.value, "value": v.value}
                for v in self.violations
            ],
        }


def _as_field(D) -> CouplingField:
    return D if isinstance(D, CouplingField) else CouplingField.constant_matrix(D)


def check_monotone_coupling(D, tol: float = 1e-12) -> MonotonicityReport:
    """Check the sign conditions of a monotone coupling at every stored cell."""
    fld = _as_field(D)
    report = MonotonicityReport()
    m = fld.m
    for cell, mat in enumerate(fld.matrices):
        for i in range(m):
            if mat[i, i] < -tol:
                report.violations.append(Violation(cell, i, i, ViolationKind.DIAG_SIGN, float(mat[i, i])))
            for j in range(m):
                if j != i and mat[i, j] > tol:
                    report.violations.append(
                        Violation(cell, i, j, ViolationKind.OFFDIAG_SIGN, float(mat[i, j]))
                    )
            rs = float(mat[i].sum())
            if rs < -tol:
                report.violations.append(Violation(cell, i, None, ViolationKind.ROW_SUM, rs))
    return report


# --------------------------------------------------------------------------
# irreducibility


@dataclass
class IrreducibilityWitness:
    irreducible: bool
    chains: dict[tuple[int, int], list[int]] | None = None
    separating_set: frozenset[int] | None = None

    def to_json(self) -> dict:
        out: dict = {"irreducible": self.irreducible}
        if self.chains is not None:
            out["chains"] = {f"{i},{j}": c for (i, j), c in self.chains.items()}
        if self.separating_set is not None:
            out["separating_set"] = sorted(self.separating_set)
        return out


def _reach(adj: np.ndarray, start: int) -> dict[int, int | None]:
    parent: dict[int, int | None] = {start: None}
    queue = deque([start])
    while queue:
        k = queue.popleft()
        for nxt in np.flatnonzero(adj[k]):
            nxt = int(nxt)
            if nxt not in parent:
                parent[nxt] = k
                queue.append(nxt)
    return parent


def is_irreducible(D, zero_tol: float = 0.0) -> IrreducibilityWitness:
    """Decide irreducibility by reachability on the off-diagonal support of ``D``.

    Irreducible matrices get a chain ``i -> ... -> j`` of nonzero entries for
    every ordered pair; reducible ones get a nonempty proper index set with no
    nonzero entry leaving it.
    """
    D = np.asarray(D, dtype=float)
    m = D.shape[0]
    adj = np.abs(D) > zero_tol
    np.fill_diagonal(adj, False)
    chains: dict[tuple[int, int], list[int]] = {}
    for i in range(m):
        parent = _reach(adj, i)
        if len(parent) < m:
            return IrreducibilityWitness(False, separating_set=frozenset(parent))
        for j in range(m):
            path = [j]
            while path[-1] != i:
                path.append(parent[path[-1]])
            chains[(i, j)] = path[::-1]
    return IrreducibilityWitness(True, chains=chains)


def is_irreducible_bruteforce(D, zero_tol: float = 0.0) -> bool:
    """Subset-enumeration definition of irreducibility (exponential; small m only)."""
    D = np.asarray(D, dtype=float)
    m = D.shape[0]
    for size in range(1, m):
        for subset in itertools.combinations(range(m), size):
            outside = [j for j in range(m) if j not in subset]
            if not np.any(np.abs(D[np.ix_(subset, outside)]) > zero_tol):
                return False
    return True


# --------------------------------------------------------------------------
# M-matrix structure


def spectral_radius(B, tol: float = 1e-12, max_iter: int = 5000) -> float:
    """Spectral radius of an entrywise-nonnegative matrix.

    Power iteration on ``B + I`` (the shift makes periodic matrices harmless and
    keeps the Perron root dominant); falls back to a dense eigensolve when the
    iteration stalls.
    """
    B = np.asarray(B, dtype=float)
    if np.any(B < -tol):
        raise NotNonnegative(f"matrix has negative entry {B.min():.3g}")
    m = B.shape[0]
    if not np.any(B):
        return 0.0
    M = B + np.eye(m)
    x = np.ones(m)
    for _ in range(max_iter):
        y = M @ x
        # Collatz-Wielandt bounds: min(y/x) <= rho(M) <= max(y/x) for x > 0
        ratios = y / x
        lo, hi = float(ratios.min()), float(ratios.max())
        if hi - lo <= tol * hi:
            return max(0.5 * (lo + hi) - 1.0, 0.0)
        x = y / y.sum()
    est = hi - 1.0
    logger.debug("power iteration stalled at %.3g; dense fallback", est)
    return float(np.max(np.abs(np.linalg.eigvals(B))))


@dataclass(frozen=True)
class MDecomposition:
    s: float
    B: np.ndarray
    rho: float

    def to_json(self) -> dict:
        return {"s": self.s, "B": self.B.tolist(), "rho": self.rho}


def m_decompose(D, tol: float = EIG_TOL) -> MDecomposition:
    """Write a monotone ``D`` as ``s I - B`` with ``s = max_k d_kk``."""
    D = np.asarray(D, dtype=float)
    report = check_monotone_coupling(D)
    if not report.holds:
        raise MonotonicityViolated(str(report.violations))
    s = float(np.max(np.diag(D), initial=0.0))
    B = s * np.eye(D.shape[0]) - D
    B[np.abs(B) < 1e-300] = 0.0
    rho = spectral_radius(B)
    if s < rho - tol * max(1.0, rho):
        raise MonotonicityViolated(f"s={s} < rho(B)={rho}")
    return MDecomposition(s, B, rho)


# --------------------------------------------------------------------------
# Perron vector and spectrum


class PerronMode(str, Enum):
    DEGENERATE = "degenerate"
    GENERAL = "general"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class PerronData:
    lambda_vec: np.ndarray
    kernel_dim: int
    min_nonzero_real_part: float | None
    limit_projector: np.ndarray | None

    def to_json(self) -> dict:
        return {
            "lambda": self.lambda_vec.tolist(),
            "kernel_dim": self.kernel_dim,
            "min_nonzero_real_part": self.min_nonzero_real_part,
            "limit_projector": None if self.limit_projector is None else self.limit_projector.tolist(),
        }


def cofactor_matrix(D) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    m = D.shape[0]
    if m == 1:
        return np.ones((1, 1))
    com = np.empty_like(D)
    for i in range(m):
        for j in range(m):
            minor = np.delete(np.delete(D, i, axis=0), j, axis=1)
            com[i, j] = (-1) ** (i + j) * np.linalg.det(minor)
    return com


def kernel_dimension(D, tol: float = EIG_TOL) -> int:
    sv = np.linalg.svd(np.asarray(D, dtype=float), compute_uv=False)
    scale = max(1.0, float(sv[0]) if sv.size else 1.0)
    return int(np.sum(sv <= tol * scale))


def null_space_left(D, tol: float = EIG_TOL) -> np.ndarray:
    """Left null space of ``D`` from the SVD; columns span ``ker D^T``."""
    return scipy.linalg.null_space(np.asarray(D, dtype=float).T, rcond=tol)


def perron_left_null_vector(D, mode: PerronMode | str = PerronMode.DEGENERATE) -> PerronData:
    """Positive left null vector of an irreducible monotone coupling.

    DEGENERATE requires zero row sums and returns ``Lambda`` with
    ``D^T Lambda = 0``.  GENERAL first removes the row sums from the diagonal
    and returns a vector with ``D^T Lambda >= 0``.  Both are normalized to sum
    to one.
    """
    mode = PerronMode(mode)
    D = np.asarray(D, dtype=float)
    m = D.shape[0]
    if not is_irreducible(D).irreducible:
        raise NotIrreducible("Perron vector requires an irreducible coupling")
    rows = D.sum(axis=1)
    scale = max(1.0, float(np.max(np.abs(D))))
    if mode is PerronMode.DEGENERATE:
        if np.any(np.abs(rows) > EIG_TOL * scale):
            raise RowSumsNonzero(f"row sums {rows}")
        Dt = D
    else:
        Dt = D - np.diag(rows)
    com = cofactor_matrix(Dt)
    if np.max(np.abs(com), initial=0.0) <= EIG_TOL * scale ** max(m - 1, 1):
        raise DegenerateCofactor("cofactor matrix vanishes numerically")
    lam = np.abs(com).sum(axis=1)
    lam = lam / lam.sum()
    kdim = kernel_dimension(D)
    _, r = nonzero_spectrum_check(D)
    proj = None
    if kdim == 1 and mode is PerronMode.DEGENERATE:
        proj = np.outer(np.ones(m), lam)
    return PerronData(lam, kdim, r, proj)


def nonzero_spectrum_check(D, tol: float = EIG_TOL) -> tuple[bool, float | None]:
    """Whether every nonzero eigenvalue has positive real part, and the smallest such part."""
    ev = np.linalg.eigvals(np.asarray(D, dtype=float))
    nz = ev[np.abs(ev) > tol]
    if nz.size == 0:
        return True, None
    return bool(np.all(nz.real > 0)), float(np.min(nz.real))


def matrix_exponential(D, t: float) -> np.ndarray:
    """``exp(-t D)`` by scaling and squaring with Pade approximants."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return scipy.linalg.expm(-t * np.asarray(D, dtype=float))


def exp_limit_projector(D, check_times: Sequence[float] = (1.0, 2.0, 4.0, 8.0)) -> tuple[np.ndarray, float]:
    """Limit of ``exp(-tD)`` as t grows, and the spectral gap ``r``.

    The limit is ``1 Lambda^T`` with ``sum(Lambda) = 1``: it fixes constants and
    annihilates ``D`` from both sides.  The decay ``|exp(-tD) - A| <= C e^{-rt/2}``
    is probed on ``check_times`` with ``C`` taken from ``t = 0``.
    """
    D = np.asarray(D, dtype=float)
    if not is_irreducible(D).irreducible:
        raise NotIrreducible("limit projector requires an irreducible coupling")
    kdim = kernel_dimension(D)
    if kdim != 1:
        raise KernelDimNotOne(f"kernel dimension {kdim}")
    ok, r = nonzero_spectrum_check(D)
    if not ok or r is None:
        raise KernelDimNotOne("nonzero spectrum not in the right half plane")
    lam = perron_left_null_vector(D, PerronMode.DEGENERATE).lambda_vec
    A = np.outer(np.ones(D.shape[0]), lam)
    C = 4.0 * max(1.0, np.linalg.norm(np.eye(D.shape[0]) - A, 2))
    for t in check_times:
        err = np.linalg.norm(matrix_exponential(D, t) - A, 2)
        if err > C * np.exp(-r * t / 2):
            logger.warning("exp(-tD) decay slower than e^{-rt/2} at t=%g (err %.3g)", t, err)
    return A, r
