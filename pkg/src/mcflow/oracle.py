"""Exact combinatorial reference solver: successive shortest paths.

Ground truth for desk-scale verification.  All arithmetic on flows, costs and
potentials is exact: values are integers, and shortest-path lengths stay far
below 2**53, hence exact in float64.  Every solve is self-certifying: the
returned flow is checked against the no-negative-reduced-cost optimality
certificate before it is reported.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .netcore import Network


class OracleInputError(ValueError):
    """Oracle accepts integral data only."""


class OracleError(RuntimeError):
    """Internal consistency failure (optimality certificate violated)."""


@dataclass(frozen=True)
class FlowSolution:
    flow: np.ndarray
    cost: float
    status: str  # "optimal" | "infeasible"

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _as_int(a: np.ndarray, what: str) -> np.ndarray:
    r = np.rint(a)
    if not np.all(np.abs(np.asarray(a) - r) == 0.0):
        raise OracleInputError(f"{what} must be integral for the exact oracle")
    return r.astype(np.int64)


def ssp_solve(net: Network) -> FlowSolution:
    """Exact optimal flow by successive shortest paths with node potentials.

    Lower bounds are shifted to zero first.  Augmenting paths are shortest
    paths on reduced costs (Bellman-Ford supplies initial potentials when
    negative costs are present); flow is pushed from excess to deficit nodes
    until balanced.  Returns an integral optimum or infeasible status.
    """
    n, m = net.n, net.m
    cost = _as_int(net.cost, "costs")
    lower = _as_int(net.lower, "lower bounds")
    upper = _as_int(net.upper, "upper bounds")
    b = _as_int(net.supply, "supplies")
    tail, head = net.tail, net.head

    # Shift lower bounds to zero: x = lower + x', adjust node balances.
    cap = upper - lower
    excess = b.copy()
    np.subtract.at(excess, tail, lower)
    np.add.at(excess, head, lower)

    flow = np.zeros(m, dtype=np.int64)
    pot = np.zeros(n, dtype=np.int64)
    if m and cost.min() < 0:
        pot = _bellman_ford_potentials(n, tail, head, cost, cap)

    while True:
        sources = np.flatnonzero(excess > 0)
        if sources.size == 0:
            break
        dist, pred_arc, pred_fwd = _shortest_from(
            n, tail, head, cost, cap, flow, pot, sources)
        reach = np.isfinite(dist)
        sinks = np.flatnonzero((excess < 0) & reach)
        if sinks.size == 0:
            return FlowSolution(flow=np.full(m, np.nan), cost=np.nan,
                                status="infeasible")
        t = int(sinks[np.argmin(dist[sinks])])

        # Walk predecessors back to a source, find the bottleneck, augment.
        path = []
        v = t
        while pred_arc[v] >= 0:
            j, fwd = int(pred_arc[v]), bool(pred_fwd[v])
            path.append((j, fwd))
            v = int(tail[j]) if fwd else int(head[j])
        s = v
        delta = min(int(excess[s]), -int(excess[t]))
        for j, fwd in path:
            room = int(cap[j] - flow[j]) if fwd else int(flow[j])
            delta = min(delta, room)
        for j, fwd in path:
            flow[j] += delta if fwd else -delta
        excess[s] -= delta
        excess[t] += delta

        # pot += min(dist, dist[t]) keeps all reduced costs nonnegative.
        pot += np.minimum(dist, dist[t]).astype(np.int64)

    x = flow + lower
    _check_certificate(net, cost, lower, upper, x, pot, b)
    total = int(np.sum(cost * x))
    return FlowSolution(flow=x.astype(float), cost=float(total), status="optimal")


def _shortest_from(n, tail, head, cost, cap, flow, pot, sources):
    """Multi-source shortest distances and predecessor arcs on reduced costs.

    Residual-arc weights are scaled to K*w + 1 (K > max hop count) so that
    zero-weight arcs stay structurally present in the CSR graph and the tree
    remains distance-optimal; true integer distances are recovered by walking
    the tree.
    """
    fwd_ok = flow < cap
    bwd_ok = flow > 0
    rows = np.concatenate([tail[fwd_ok], head[bwd_ok]])
    cols = np.concatenate([head[fwd_ok], tail[bwd_ok]])
    red = np.concatenate([cost[fwd_ok], -cost[bwd_ok]]) + pot[rows] - pot[cols]
    if red.size and red.min() < 0:
        raise OracleError("negative reduced cost in residual graph")
    arc_ids = np.concatenate([np.flatnonzero(fwd_ok), np.flatnonzero(bwd_ok)])
    is_fwd = np.concatenate(
        [np.ones(int(fwd_ok.sum()), bool), np.zeros(int(bwd_ok.sum()), bool)])

    # csr_matrix sums duplicates; keep only the cheapest parallel residual arc.
    order = np.lexsort((red, cols, rows))
    rows, cols, red = rows[order], cols[order], red[order]
    arc_ids, is_fwd = arc_ids[order], is_fwd[order]
    keep = np.ones(rows.size, dtype=bool)
    keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
    rows, cols, red = rows[keep], cols[keep], red[keep]
    arc_ids, is_fwd = arc_ids[keep], is_fwd[keep]

    K = n + 1
    g = sp.csr_matrix(((red * K + 1).astype(np.float64), (rows, cols)),
                      shape=(n, n))
    dist_scaled, pred, _ = dijkstra(
        g, indices=sources, min_only=True, return_predecessors=True)

    lut = {(int(r), int(c)): (int(a), bool(d))
           for r, c, a, d in zip(rows, cols, arc_ids, is_fwd)}
    dist = np.full(n, np.inf)
    dist[sources] = 0.0
    pred_arc = np.full(n, -1, dtype=np.int64)
    pred_fwd = np.zeros(n, dtype=bool)
    for v in np.argsort(dist_scaled):  # ancestors come before descendants
        v = int(v)
        p = int(pred[v])
        if p < 0:
            continue
        j, fw = lut[(p, v)]
        if fw:
            w = int(cost[j] + pot[tail[j]] - pot[head[j]])
        else:
            w = int(-cost[j] + pot[head[j]] - pot[tail[j]])
        dist[v] = dist[p] + w
        pred_arc[v] = j
        pred_fwd[v] = fw
    return dist, pred_arc, pred_fwd


def _bellman_ford_potentials(n, tail, head, cost, cap):
    """Vectorized Bellman-Ford from a virtual root over usable arcs."""
    usable = cap > 0
    t, h, c = tail[usable], head[usable], cost[usable]
    dist = np.zeros(n, dtype=np.int64)  # virtual root reaches all at 0
    for sweep in range(n + 1):
        cand = dist[t] + c
        new = dist.copy()
        np.minimum.at(new, h, cand)
        if np.array_equal(new, dist):
            return dist
        if sweep == n:
            raise OracleInputError(
                "negative-cost cycle: unsupported by the oracle")
        dist = new
    return dist


def _check_certificate(net, cost, lower, upper, x, pot, b):
    red = cost + pot[net.tail] - pot[net.head]
    if np.any((x < upper) & (red < 0)) or np.any((x > lower) & (red > 0)):
        raise OracleError("optimality certificate failed: negative reduced "
                          "cost on a residual arc")
    Ax = np.zeros(net.n, dtype=np.int64)
    np.add.at(Ax, net.tail, x)
    np.subtract.at(Ax, net.head, x)
    if not np.array_equal(Ax, b):
        raise OracleError("flow conservation violated")


def enumerate_optimal(net: Network):
    """Brute-force optimum over all integral feasible flows (tiny nets only).

    Returns (cost, flow) or None if infeasible.  Oracle-of-the-oracle for
    tests.
    """
    lower = _as_int(net.lower, "lower bounds")
    upper = _as_int(net.upper, "upper bounds")
    b = _as_int(net.supply, "supplies")
    cost = _as_int(net.cost, "costs")
    best = None
    ranges = [range(int(lo), int(up) + 1) for lo, up in zip(lower, upper)]
    for combo in itertools.product(*ranges):
        x = np.asarray(combo, dtype=np.int64)
        Ax = np.zeros(net.n, dtype=np.int64)
        np.add.at(Ax, net.tail, x)
        np.subtract.at(Ax, net.head, x)
        if np.array_equal(Ax, b):
            c = int(np.sum(cost * x))
            if best is None or c < best[0]:
                best = (c, x)
    return best
