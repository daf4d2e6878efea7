"""Problem instances: network model, incidence matrix, DIMACS I/O, generators.

A problem instance is a directed graph with per-arc cost and flow bounds plus
a balanced node supply vector.  Instances are immutable after construction and
safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class NetworkValidationError(ValueError):
    """Instance violates a structural invariant (balance, bounds, ids)."""


class DimacsFormatError(ValueError):
    """Malformed DIMACS input; carries the offending line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class Network:
    """Directed min-cost-flow instance with n nodes and m arcs.

    Arc j runs tail[j] -> head[j] with cost[j] per unit flow and bounds
    lower[j] <= x_j <= upper[j].  supply[i] > 0 marks a source.  Arrays are
    read-only; parallel arcs are allowed, self-loops are not.
    """

    n: int
    tail: np.ndarray
    head: np.ndarray
    cost: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    supply: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tail", _freeze(self.tail, np.int64))
        object.__setattr__(self, "head", _freeze(self.head, np.int64))
        object.__setattr__(self, "cost", _freeze(self.cost, np.float64))
        object.__setattr__(self, "lower", _freeze(self.lower, np.float64))
        object.__setattr__(self, "upper", _freeze(self.upper, np.float64))
        object.__setattr__(self, "supply", _freeze(self.supply, np.float64))
        self._validate()

    @property
    def m(self) -> int:
        return self.tail.size

    @property
    def arcs(self) -> list[tuple[int, int, float, float, float]]:
        return list(
            zip(self.tail.tolist(), self.head.tolist(), self.cost.tolist(),
                self.lower.tolist(), self.upper.tolist())
        )

    @classmethod
    def from_arcs(cls, n, arcs, supply) -> "Network":
        """Build from a list of (tail, head, cost, lower, upper) tuples."""
        arr = np.asarray(arcs, dtype=np.float64).reshape(-1, 5)
        return cls(
            n=int(n),
            tail=arr[:, 0].astype(np.int64),
            head=arr[:, 1].astype(np.int64),
            cost=arr[:, 2],
            lower=arr[:, 3],
            upper=arr[:, 4],
            supply=np.asarray(supply, dtype=np.float64),
        )

    def _validate(self):
        n, m = self.n, self.m
        if n <= 0:
            raise NetworkValidationError("node count must be positive")
        if self.supply.size != n:
            raise NetworkValidationError(
                f"supply vector has length {self.supply.size}, expected {n}")
        for name, a in (("tail", self.tail), ("head", self.head)):
            if m and (a.min() < 0 or a.max() >= n):
                raise NetworkValidationError(f"{name} ids outside [0, {n})")
        if m and np.any(self.tail == self.head):
            j = int(np.flatnonzero(self.tail == self.head)[0])
            raise NetworkValidationError(
                f"self-loop on node {self.tail[j]} (arc {j}): incidence column "
                "would be zero")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise NetworkValidationError("arc bounds must be finite")
        if np.any(self.lower > self.upper):
            j = int(np.flatnonzero(self.lower > self.upper)[0])
            raise NetworkValidationError(
                f"arc {j}: lower bound {self.lower[j]} exceeds upper {self.upper[j]}")
        total = float(self.supply.sum())
        scale = max(1.0, float(np.abs(self.supply).sum()))
        if abs(total) > 1e-9 * scale:
            raise NetworkValidationError(
                f"supplies sum to {total}, conservation needs 0")


def _freeze(a, dtype) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    if out.ndim != 1:
        raise NetworkValidationError("network arrays must be 1-D")
    out.flags.writeable = False
    return out


def incidence_matrix(net: Network) -> sp.csr_matrix:
    """n x m incidence matrix: +1 at the tail, -1 at the head of each arc.

    With this orientation (A x)_i is outflow minus inflow at node i, so
    A x = supply holds with positive supply at sources.
    """
    m = net.m
    rows = np.concatenate([net.tail, net.head])
    cols = np.concatenate([np.arange(m), np.arange(m)])
    vals = np.concatenate([np.ones(m), -np.ones(m)])
    A = sp.coo_matrix((vals, (rows, cols)), shape=(net.n, m)).tocsr()
    A.sort_indices()
    return A


# ---------------------------------------------------------------------------
# DIMACS min-cost-flow text format


def parse_dimacs(text) -> Network:
    """Parse DIMACS min input (str or file-like) into a Network.

    Node ids in the file are 1-based and converted to 0-based; nodes without
    an `n` line get supply 0.
    """
    if hasattr(text, "read"):
        text = text.read()
    n = m = None
    supply = None
    tails, heads, lows, caps, costs = [], [], [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        parts = line.split()
        kind = parts[0]
        if kind == "p":
            if n is not None:
                raise DimacsFormatError(lineno, "duplicate problem line")
            if len(parts) != 4 or parts[1] != "min":
                raise DimacsFormatError(lineno, f"expected 'p min n m', got {line!r}")
            try:
                n, m = int(parts[2]), int(parts[3])
            except ValueError:
                raise DimacsFormatError(lineno, "non-integer sizes in problem line")
            supply = np.zeros(n)
        elif kind == "n":
            if supply is None:
                raise DimacsFormatError(lineno, "node line before problem line")
            if len(parts) != 3:
                raise DimacsFormatError(lineno, f"expected 'n id supply', got {line!r}")
            try:
                node, b = int(parts[1]), float(parts[2])
            except ValueError:
                raise DimacsFormatError(lineno, "bad node line")
            if not 1 <= node <= n:
                raise DimacsFormatError(lineno, f"node id {node} outside 1..{n}")
            supply[node - 1] = b
        elif kind == "a":
            if supply is None:
                raise DimacsFormatError(lineno, "arc line before problem line")
            if len(parts) != 6:
                raise DimacsFormatError(
                    lineno, f"expected 'a tail head lower upper cost', got {line!r}")
            try:
                t, h = int(parts[1]), int(parts[2])
                lo, up, co = float(parts[3]), float(parts[4]), float(parts[5])
            except ValueError:
                raise DimacsFormatError(lineno, "bad arc line")
            if not (1 <= t <= n and 1 <= h <= n):
                raise DimacsFormatError(lineno, f"arc endpoint outside 1..{n}")
            tails.append(t - 1)
            heads.append(h - 1)
            lows.append(lo)
            caps.append(up)
            costs.append(co)
        else:
            raise DimacsFormatError(lineno, f"unknown line kind {kind!r}")
    if n is None:
        raise DimacsFormatError(0, "missing problem line")
    if len(tails) != m:
        raise NetworkValidationError(
            f"header declares {m} arcs but {len(tails)} found")
    return Network(
        n=n,
        tail=np.asarray(tails, dtype=np.int64),
        head=np.asarray(heads, dtype=np.int64),
        cost=np.asarray(costs, dtype=np.float64),
        lower=np.asarray(lows, dtype=np.float64),
        upper=np.asarray(caps, dtype=np.float64),
        supply=supply,
    )


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_dimacs(net: Network, comment: str | None = None) -> str:
    """Serialize a Network in DIMACS min format (inverse of parse_dimacs)."""
    out = []
    if comment:
        out.extend(f"c {line}" for line in comment.splitlines())
    out.append(f"p min {net.n} {net.m}")
    for i in np.flatnonzero(net.supply != 0.0):
        out.append(f"n {i + 1} {_fmt(net.supply[i])}")
    for j in range(net.m):
        out.append(
            "a {} {} {} {} {}".format(
                net.tail[j] + 1, net.head[j] + 1,
                _fmt(net.lower[j]), _fmt(net.upper[j]), _fmt(net.cost[j]))
        )
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Instance generators.  Both guarantee feasibility by construction: supplies
# are set from flows that provably fit the generated capacities, so the exact
# combinatorial solver always has an optimum to report.


def gen_grid(rows: int, cols: int, seed: int) -> Network:
    """4-neighbour grid with both arc orientations per edge.

    Integer costs and capacities uniform in [1, 1000], lower bounds 0.
    ceil(sqrt(n)) source/sink pairs sit on a serpentine traversal of the grid;
    each pair's supply is the bottleneck capacity of its (disjoint) serpentine
    segment, which keeps every instance feasible.  Deterministic per seed.
    """
    if rows < 2 or cols < 2:
        raise ValueError("grid needs rows, cols >= 2")
    rng = np.random.default_rng(seed)
    n = rows * cols

    def node(r, c):
        return r * cols + c

    tails, heads = [], []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                tails += [node(r, c), node(r, c + 1)]
                heads += [node(r, c + 1), node(r, c)]
            if r + 1 < rows:
                tails += [node(r, c), node(r + 1, c)]
                heads += [node(r + 1, c), node(r, c)]
    tail = np.asarray(tails, dtype=np.int64)
    head = np.asarray(heads, dtype=np.int64)
    m = tail.size
    cost = rng.integers(1, 1001, size=m).astype(np.float64)
    upper = rng.integers(1, 1001, size=m).astype(np.float64)

    # Serpentine node order; consecutive nodes are grid neighbours.
    serp = []
    for r in range(rows):
        rng_cols = range(cols) if r % 2 == 0 else range(cols - 1, -1, -1)
        serp.extend(node(r, c) for c in rng_cols)
    arc_of = {(int(t), int(h)): j for j, (t, h) in enumerate(zip(tail, head))}
    path_arcs = np.asarray(
        [arc_of[(serp[i], serp[i + 1])] for i in range(n - 1)], dtype=np.int64)

    supply = np.zeros(n)
    k = math.isqrt(n - 1) + 1  # ceil(sqrt(n))
    pos = np.sort(rng.choice(n, size=2 * k, replace=False))
    for i in range(k):
        a, b = int(pos[2 * i]), int(pos[2 * i + 1])
        q = float(upper[path_arcs[a:b]].min())
        supply[serp[a]] += q
        supply[serp[b]] -= q
    return Network(n=n, tail=tail, head=head, cost=cost,
                   lower=np.zeros(m), upper=upper, supply=supply)


def gen_random_sparse(n: int, seed: int) -> Network:
    """Sparse random instance with m = 8n arcs.

    Costs uniform in [1, 10000], capacities in [1, 1000].  A spanning path
    over a random node permutation keeps the graph connected; ceil(sqrt(n))
    sources and as many sinks alternate along that path, each shipping 1000
    units, so total positive supply is 1000*ceil(sqrt(n)) and the path
    (capacity 1000 per arc) certifies feasibility.  Deterministic per seed.
    """
    if n < 16:
        raise ValueError("random instance needs n >= 16")
    rng = np.random.default_rng(seed)
    m = 8 * n
    perm = rng.permutation(n)
    path_tail = perm[:-1]
    path_head = perm[1:]

    n_rand = m - (n - 1)
    rt = rng.integers(0, n, size=n_rand)
    rh = rng.integers(0, n, size=n_rand)
    loops = rt == rh
    while np.any(loops):
        rh[loops] = rng.integers(0, n, size=int(loops.sum()))
        loops = rt == rh

    tail = np.concatenate([path_tail, rt]).astype(np.int64)
    head = np.concatenate([path_head, rh]).astype(np.int64)
    cost = rng.integers(1, 10001, size=m).astype(np.float64)
    upper = np.empty(m)
    upper[: n - 1] = 1000.0
    upper[n - 1:] = rng.integers(1, 1001, size=n_rand).astype(np.float64)

    k = math.isqrt(n - 1) + 1
    pos = np.sort(rng.choice(n, size=2 * k, replace=False))
    supply = np.zeros(n)
    supply[perm[pos[0::2]]] = 1000.0
    supply[perm[pos[1::2]]] = -1000.0
    return Network(n=n, tail=tail, head=head, cost=cost,
                   lower=np.zeros(m), upper=upper, supply=supply)
