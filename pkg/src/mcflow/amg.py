"""In-tree algebraic multigrid: smoothed aggregation, V(1,1)-cycles.

Built for the pinned graph-Laplacian operators this solver produces.  Jacobi
smoothing keeps every kernel free of sequential dependencies; symmetric
pre/post smoothing makes the V-cycle a symmetric positive definite
preconditioner, as conjugate gradients requires.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

DEFAULT_THETA = 0.08
JACOBI_OMEGA = 2.0 / 3.0
MAX_COARSE = 64
MAX_LEVELS = 40


class AmgSetupError(ValueError):
    """Hierarchy construction rejected the operator (e.g. not SPD-like)."""


@dataclass
class AmgLevel:
    operator: sp.csr_matrix
    prolongation: sp.csr_matrix | None  # None on the coarsest level
    inv_diag: np.ndarray


@dataclass
class AmgHierarchy:
    levels: list[AmgLevel]
    coarse_factor: tuple  # scipy cho_factor of the coarsest operator

    @property
    def level_sizes(self) -> list[int]:
        return [lvl.operator.shape[0] for lvl in self.levels]

    @property
    def operator_complexity(self) -> float:
        nnz = [lvl.operator.nnz for lvl in self.levels]
        return sum(nnz) / max(nnz[0], 1)

    def as_preconditioner(self):
        """Callable r -> approximate solve, one V(1,1)-cycle from zero."""
        def apply(r: np.ndarray) -> np.ndarray:
            return vcycle(self, r, np.zeros_like(r))
        return apply


def _strength_graph(A: sp.csr_matrix, theta: float) -> sp.csr_matrix:
    """Keep off-diagonal couplings with |a_ij| >= theta*sqrt(a_ii*a_jj)."""
    d = A.diagonal()
    C = A.tocoo()
    scale = np.sqrt(d[C.row] * d[C.col])
    mask = (C.row != C.col) & (np.abs(C.data) >= theta * scale)
    S = sp.csr_matrix(
        (np.ones(int(mask.sum())), (C.row[mask], C.col[mask])), shape=A.shape)
    return S


def _aggregate(S: sp.csr_matrix) -> np.ndarray:
    """Greedy aggregation over the strength graph; returns aggregate ids."""
    n = S.shape[0]
    agg = np.full(n, -1, dtype=np.int64)
    indptr, indices = S.indptr, S.indices
    next_id = 0
    # Pass 1: seed aggregates from nodes whose neighbourhood is untouched.
    for i in range(n):
        if agg[i] != -1:
            continue
        nbrs = indices[indptr[i]:indptr[i + 1]]
        if np.all(agg[nbrs] == -1):
            agg[i] = next_id
            agg[nbrs] = next_id
            next_id += 1
    # Pass 2: attach leftovers to an adjacent aggregate.
    for i in range(n):
        if agg[i] != -1:
            continue
        nbrs = indices[indptr[i]:indptr[i + 1]]
        owned = nbrs[agg[nbrs] != -1]
        if owned.size:
            agg[i] = agg[owned[0]]
    # Pass 3: isolated leftovers become singletons.
    for i in range(n):
        if agg[i] == -1:
            agg[i] = next_id
            next_id += 1
    return agg


def _tentative_prolongation(agg: np.ndarray) -> sp.csr_matrix:
    n = agg.size
    ncoarse = int(agg.max()) + 1
    return sp.csr_matrix(
        (np.ones(n), (np.arange(n), agg)), shape=(n, ncoarse))


def build_hierarchy(L, theta: float = DEFAULT_THETA) -> AmgHierarchy:
    """Smoothed-aggregation hierarchy for a pinned SPD operator.

    Accepts the operator matrix or anything carrying it as attribute ``L``.
    Coarsening stops at MAX_COARSE unknowns (or when aggregation stalls); the
    coarsest operator is factorized densely.
    """
    A = getattr(L, "L", L)
    A = sp.csr_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise AmgSetupError("operator must be square")
    if A.shape[0] and A.diagonal().min() <= 0.0:
        raise AmgSetupError("nonpositive diagonal: operator is not SPD")

    levels: list[AmgLevel] = []
    while A.shape[0] > MAX_COARSE and len(levels) < MAX_LEVELS:
        S = _strength_graph(A, theta)
        agg = _aggregate(S)
        ncoarse = int(agg.max()) + 1
        if ncoarse >= A.shape[0]:
            break  # no strong couplings left; A is (near-)diagonal
        P_tent = _tentative_prolongation(agg)
        inv_diag = 1.0 / A.diagonal()
        P = P_tent - sp.diags(JACOBI_OMEGA * inv_diag) @ (A @ P_tent)
        P = sp.csr_matrix(P)
        levels.append(AmgLevel(operator=A, prolongation=P, inv_diag=inv_diag))
        A = sp.csr_matrix(P.T @ A @ P)  # Galerkin coarse operator
        A.sum_duplicates()

    levels.append(AmgLevel(operator=A, prolongation=None,
                           inv_diag=1.0 / A.diagonal() if A.shape[0] else
                           np.zeros(0)))
    try:
        coarse_factor = sla.cho_factor(A.toarray(), lower=True)
    except sla.LinAlgError as exc:
        raise AmgSetupError(f"coarsest-level factorization failed: {exc}")
    return AmgHierarchy(levels=levels, coarse_factor=coarse_factor)


def vcycle(h: AmgHierarchy, b: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """One V(1,1)-cycle: Jacobi pre-smooth, coarse correction, post-smooth."""
    return _vcycle(h, 0, np.asarray(b, dtype=np.float64),
                   np.asarray(x0, dtype=np.float64).copy())


def _vcycle(h: AmgHierarchy, lvl: int, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    level = h.levels[lvl]
    A = level.operator
    if level.prolongation is None:
        return sla.cho_solve(h.coarse_factor, b)
    x += JACOBI_OMEGA * level.inv_diag * (b - A @ x)
    r = b - A @ x
    P = level.prolongation
    e = _vcycle(h, lvl + 1, P.T @ r, np.zeros(P.shape[1]))
    x += P @ e
    x += JACOBI_OMEGA * level.inv_diag * (b - A @ x)
    return x
