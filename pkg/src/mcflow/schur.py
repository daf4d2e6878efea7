"""Schur-complement graph Laplacian: assembly, components, pinning, solve.

Eliminating the flow and inequality-multiplier blocks from the Newton system
leaves a weighted graph Laplacian acting on the node multipliers.  Arcs whose
bound constraint is active are removed from the graph (Dirichlet rows), which
can split it; one node per weakly connected component is pinned to restore
positive definiteness before the Krylov solve.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from . import krylov
from .netcore import Network


_USE_SCALING = True


class SchurSolveError(RuntimeError):
    """Inner Krylov solve failed; carries the solver statistics."""

    def __init__(self, message: str, stats: krylov.KrylovStats):
        super().__init__(message)
        self.stats = stats


@dataclass(frozen=True)
class Metric:
    """Diagonal of the regularized metric plus the per-arc free mask.

    dtilde[j] is the barrier curvature of arc j plus the mass term; active
    arcs carry the Dirichlet placeholder value 1 and free = False.
    """

    dtilde: np.ndarray
    free: np.ndarray

    def __post_init__(self):
        if np.any(self.dtilde <= 0.0):
            raise ValueError("metric diagonal must be positive")


@dataclass(frozen=True)
class SchurOperator:
    L: sp.csr_matrix
    pinned: frozenset = frozenset()
    components: np.ndarray | None = None


def assemble_schur(net: Network, metric: Metric, active=None) -> SchurOperator:
    """Weighted Laplacian of the free-arc graph, edge-by-edge scatter.

    Each free arc j contributes weight 1/dtilde[j] to the 2x2 block of its
    endpoints; active arcs are dropped entirely.  Every node keeps a
    structural diagonal entry so isolated nodes remain addressable.
    """
    n = net.n
    free = metric.free
    if active is not None and not np.array_equal(free, _free_mask(net.m, active)):
        raise ValueError("metric free mask inconsistent with active set")
    t, h = net.tail[free], net.head[free]
    w = 1.0 / metric.dtilde[free]
    rows = np.concatenate([t, h, t, h, np.arange(n)])
    cols = np.concatenate([h, t, t, h, np.arange(n)])
    vals = np.concatenate([-w, -w, w, w, np.zeros(n)])
    L = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    L.sum_duplicates()
    L.sort_indices()
    return SchurOperator(L=L)


def connected_components_labelprop(net: Network, active=None,
                                   free: np.ndarray | None = None) -> np.ndarray:
    """Weak components of the free-arc graph by max-label propagation.

    Fixed-point iteration of y <- max over neighbours (unit diagonal keeps a
    node's own label in play), starting from y_i = i.  The label of node i is
    the largest node id in its component.  Terminates within the graph
    diameter.
    """
    if free is None:
        free = _free_mask(net.m, active)
    t, h = net.tail[free], net.head[free]
    labels = np.arange(net.n, dtype=np.int64)
    for _ in range(net.n + 1):
        new = labels.copy()
        np.maximum.at(new, t, labels[h])
        np.maximum.at(new, h, labels[t])
        if np.array_equal(new, labels):
            return labels
        labels = new
    raise AssertionError("label propagation failed to reach a fixed point")


def _free_mask(m: int, active) -> np.ndarray:
    free = np.ones(m, dtype=bool)
    if active is not None:
        idx = list(active.lower_active) + list(active.upper_active)
        if idx:
            free[np.asarray(idx, dtype=np.int64)] = False
    return free


def pin_components(op: SchurOperator) -> SchurOperator:
    """Pin one node per component: identity row/column, symmetric elimination.

    The representative is the component's label node.  Pinned multipliers are
    fixed to zero, so the matching right-hand-side entries are simply zeroed.
    Idempotent.
    """
    if op.components is None:
        raise ValueError("components must be computed before pinning")
    pins = np.unique(op.components)
    C = op.L.tocoo()
    pin_mask = np.zeros(op.L.shape[0], dtype=bool)
    pin_mask[pins] = True
    keep = ~(pin_mask[C.row] | pin_mask[C.col])
    rows = np.concatenate([C.row[keep], pins])
    cols = np.concatenate([C.col[keep], pins])
    vals = np.concatenate([C.data[keep], np.ones(pins.size)])
    L = sp.coo_matrix((vals, (rows, cols)), shape=op.L.shape).tocsr()
    L.sum_duplicates()
    L.sort_indices()
    return replace(op, L=L, pinned=frozenset(int(p) for p in pins))


def apply_incidence(net: Network, v: np.ndarray, free: np.ndarray) -> np.ndarray:
    """A v over free arcs: outflow minus inflow per node."""
    vv = np.where(free, v, 0.0)
    return (np.bincount(net.tail, weights=vv, minlength=net.n)
            - np.bincount(net.head, weights=vv, minlength=net.n))


def apply_incidence_t(net: Network, y: np.ndarray) -> np.ndarray:
    """A^T y per arc: potential drop tail minus head."""
    return y[net.tail] - y[net.head]


def solve_newton_system(op: SchurOperator, metric: Metric, net: Network,
                        rx: np.ndarray, ry: np.ndarray, precond, cfg
                        ) -> tuple[np.ndarray, np.ndarray, krylov.KrylovStats]:
    """Solve the reduced saddle system [dtilde, A^T; A, 0] (dx, dy) = (rx, ry).

    Active arcs carry Dirichlet rows (dtilde = 1, incidence column removed),
    so dx there equals rx directly.  The node system L dy = A D^-1 rx - ry is
    solved by preconditioned Krylov iteration on the pinned operator; dx is
    then recovered arc-by-arc.
    """
    free = metric.free
    w = 1.0 / metric.dtilde
    r = apply_incidence(net, rx * w, free) - ry
    if op.pinned:
        r[np.fromiter(op.pinned, dtype=np.int64)] = 0.0

    # Symmetric Jacobi scaling keeps the huge dynamic range of the barrier
    # weights out of the smoother and the coarse factorization.
    if _USE_SCALING:
        scale = 1.0 / np.sqrt(op.L.diagonal())
    else:
        scale = np.ones(op.L.shape[0])

    def apply_A(v):
        return scale * (op.L @ (scale * v))

    def apply_P(v):
        return precond(v / scale) / scale if precond is not None else v

    solver = krylov.cg if getattr(cfg, "solver", "cg") == "cg" else krylov.bicgstab
    dy_s, stats = solver(apply_A, apply_P, r * scale,
                         cfg.krylov_tol, cfg.krylov_maxit)
    dy = scale * dy_s
    # Honest residual on the unscaled system; the block-system contract
    # allows a 10x margin over the inner tolerance.
    rnorm = float(np.linalg.norm(r))
    relres = float(np.linalg.norm(r - op.L @ dy)) / rnorm if rnorm else 0.0
    stats = krylov.KrylovStats(iterations=stats.iterations,
                               final_relres=relres, breakdown=stats.breakdown)
    if stats.breakdown or relres > 10.0 * cfg.krylov_tol:
        raise SchurSolveError(
            f"Krylov solve did not converge: {stats.iterations} iterations, "
            f"relative residual {relres:.3e}", stats)

    aty = apply_incidence_t(net, dy)
    dx = np.where(free, (rx - aty) * w, rx)
    return dx, dy, stats
