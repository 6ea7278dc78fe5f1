"""Couplings of two categorical distributions: a fast greedy approximate
minimum-entropy coupling, an exact brute-force oracle for tiny instances,
and conditional extraction.

The greedy procedure maintains residual mass vectors for both marginals and
repeatedly pairs the largest residual on each side (ties to the lowest
index), emitting an entry of mass min(left, right). Each step exhausts at
least one residual, so the coupling has at most |p| + |q| - 1 entries and
marginalizes back to p and q up to discarded sub-1e-12 dust. Joint entropy
is within one bit of the optimum.

The exact oracle exploits concavity of joint entropy: the minimum over the
transportation polytope is attained at a vertex, and every vertex is the
unique balanced flow on a spanning tree of the complete bipartite support
graph. Enumerating all spanning trees is exact and affordable for supports
of size at most 4.
"""

from __future__ import annotations

import functools
import itertools

import numpy as np
from numba import njit

from .errors import CouplingError, InstanceTooLargeError
from .probability import Categorical

# Residuals below this are dropped rather than emitted as coupling entries.
RESIDUAL_EPS = 1e-12

# exact_mec enumerates spanning trees; beyond 4x4 the count explodes.
EXACT_SUPPORT_CAP = 4


class SparseCoupling:
    """Joint distribution over (left index, right index) stored as nonzero
    entries, together with the two marginals it couples.

    ``rows`` and ``cols`` index into ``left_marginal.ids`` and
    ``right_marginal.ids`` respectively; ``mass`` holds the joint
    probabilities. Entry order is the construction order and is part of the
    deterministic contract (conditionals normalize in stored order).
    """

    __slots__ = ("rows", "cols", "mass", "left_marginal", "right_marginal")

    def __init__(self, rows, cols, mass, left_marginal: Categorical,
                 right_marginal: Categorical):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        mass = np.asarray(mass, dtype=np.float64)
        if not (rows.shape == cols.shape == mass.shape) or rows.ndim != 1:
            raise ValueError("rows, cols, mass must be 1D arrays of equal length")
        if rows.size == 0:
            raise ValueError("coupling must have at least one entry")
        if float(mass.min()) <= 0.0:
            raise ValueError("all coupling masses must be positive")
        if rows.size > len(left_marginal) + len(right_marginal) - 1:
            raise ValueError("entry count exceeds |p| + |q| - 1")
        for arr in (rows, cols, mass):
            arr.setflags(write=False)
        self.rows = rows
        self.cols = cols
        self.mass = mass
        self.left_marginal = left_marginal
        self.right_marginal = right_marginal

    def __len__(self) -> int:
        return int(self.mass.size)

    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.mass.tolist()))

    def entropy(self) -> float:
        """Joint entropy in bits."""
        return float(-np.sum(self.mass * np.log2(self.mass)))

    def row_sums(self) -> np.ndarray:
        """Mass received by each left index (length |left_marginal|)."""
        return np.bincount(self.rows, weights=self.mass,
                           minlength=len(self.left_marginal))

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.mass,
                           minlength=len(self.right_marginal))

    def marginal_deviation(self) -> tuple[float, float]:
        """Max elementwise |marginal - reconstructed marginal| on each side."""
        left = float(np.abs(self.row_sums() - self.left_marginal.probs).max())
        right = float(np.abs(self.col_sums() - self.right_marginal.probs).max())
        return left, right

    def to_json(self) -> dict:
        return {"entries": [[int(r), int(c), float(w)] for r, c, w
                            in zip(self.rows, self.cols, self.mass)]}


@njit(cache=True)
def _heap_before(vals, idxs, a, b):
    # Max-heap priority: larger residual first, ties to the lower index.
    if vals[a] > vals[b]:
        return True
    if vals[a] < vals[b]:
        return False
    return idxs[a] < idxs[b]


@njit(cache=True)
def _sift_down(vals, idxs, size, pos):
    while True:
        left = 2 * pos + 1
        right = left + 1
        best = pos
        if left < size and _heap_before(vals, idxs, left, best):
            best = left
        if right < size and _heap_before(vals, idxs, right, best):
            best = right
        if best == pos:
            return
        vals[pos], vals[best] = vals[best], vals[pos]
        idxs[pos], idxs[best] = idxs[best], idxs[pos]
        pos = best


@njit(cache=True)
def _heapify(vals, idxs, size):
    for pos in range(size // 2 - 1, -1, -1):
        _sift_down(vals, idxs, size, pos)


@njit(cache=True)
def _greedy_core(p, q):
    """Greedy residual pairing. Returns (rows, cols, mass) arrays.

    Each iteration pops the max residual of each side, emits the min as an
    entry, and reinserts the larger side's remainder unless it fell below
    RESIDUAL_EPS (such dust is discarded, never emitted).
    """
    n = p.size
    m = q.size
    pv = p.copy()
    pi = np.arange(n)
    qv = q.copy()
    qi = np.arange(m)
    _heapify(pv, pi, n)
    _heapify(qv, qi, m)
    rows = np.empty(n + m, np.int64)
    cols = np.empty(n + m, np.int64)
    mass = np.empty(n + m, np.float64)
    k = 0
    ps = n
    qs = m
    while ps > 0 and qs > 0:
        a = pv[0]
        b = qv[0]
        w = a if a < b else b
        rows[k] = pi[0]
        cols[k] = qi[0]
        mass[k] = w
        k += 1
        if a - w >= 1e-12:
            pv[0] = a - w
            _sift_down(pv, pi, ps, 0)
        else:
            ps -= 1
            pv[0] = pv[ps]
            pi[0] = pi[ps]
            _sift_down(pv, pi, ps, 0)
        if b - w >= 1e-12:
            qv[0] = b - w
            _sift_down(qv, qi, qs, 0)
        else:
            qs -= 1
            qv[0] = qv[qs]
            qi[0] = qi[qs]
            _sift_down(qv, qi, qs, 0)
    return rows[:k], cols[:k], mass[:k]


def greedy_mec(p: Categorical, q: Categorical) -> SparseCoupling:
    """Greedy approximate minimum-entropy coupling of ``p`` and ``q``.

    The result marginalizes to ``p`` and ``q`` within 1e-9 per element and
    its joint entropy is at most one bit above the exact minimum.

    Args:
        p: Left marginal.
        q: Right marginal.

    Returns:
        A SparseCoupling with at most |p| + |q| - 1 entries, in the order
        the greedy emitted them.
    """
    rows, cols, mass = _greedy_core(p.probs, q.probs)
    return SparseCoupling(rows, cols, mass, p, q)


def _spanning_tree_operators(m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """All spanning trees of K_{m,n} plus their linear flow solvers.

    Returns (edges, solvers): edges has shape (trees, m+n-1, 2) listing
    (row, col) per tree edge; solvers has shape (trees, m+n-1, m+n) and maps
    the stacked supply vector (p then q) to the edge masses. The flow on a
    tree is linear in the supplies, so each tree is solved once symbolically
    by peeling leaves with coefficient vectors.
    """
    all_edges = [(i, j) for i in range(m) for j in range(n)]
    nodes = m + n
    tree_edges = []
    tree_solvers = []
    for combo in itertools.combinations(all_edges, nodes - 1):
        parent = list(range(nodes))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        acyclic = True
        for i, j in combo:
            a, b = find(i), find(m + j)
            if a == b:
                acyclic = False
                break
            parent[a] = b
        if not acyclic:
            continue
        adjacency: list[list[tuple[int, int]]] = [[] for _ in range(nodes)]
        for e, (i, j) in enumerate(combo):
            adjacency[i].append((m + j, e))
            adjacency[m + j].append((i, e))
        degree = [len(a) for a in adjacency]
        used = [False] * (nodes - 1)
        coeff = np.eye(nodes)
        solver = np.zeros((nodes - 1, nodes))
        stack = [v for v in range(nodes) if degree[v] == 1]
        while stack:
            v = stack.pop()
            pick = None
            for u, e in adjacency[v]:
                if not used[e]:
                    pick = (u, e)
                    break
            if pick is None:
                continue
            u, e = pick
            used[e] = True
            solver[e] = coeff[v]
            coeff[u] -= coeff[v]
            coeff[v] = 0.0
            degree[u] -= 1
            degree[v] -= 1
            if degree[u] == 1:
                stack.append(u)
        tree_edges.append(combo)
        tree_solvers.append(solver)
    return np.asarray(tree_edges, dtype=np.int64), np.stack(tree_solvers)


@functools.lru_cache(maxsize=None)
def _cached_tree_operators(m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    return _spanning_tree_operators(m, n)


def exact_mec(p: Categorical, q: Categorical) -> SparseCoupling:
    """Globally minimal-entropy coupling for supports of size at most 4.

    Joint entropy is concave over the transportation polytope, so the
    minimum sits at a vertex; every vertex is the balanced flow on some
    spanning tree of the bipartite support graph, and all trees are
    enumerated.

    Raises:
        InstanceTooLargeError: If either support exceeds 4.
    """
    m, n = len(p), len(q)
    if m > EXACT_SUPPORT_CAP or n > EXACT_SUPPORT_CAP:
        raise InstanceTooLargeError(
            f"instance-too-large: exact coupling capped at "
            f"{EXACT_SUPPORT_CAP}x{EXACT_SUPPORT_CAP}, got {m}x{n}"
        )
    edges, solvers = _cached_tree_operators(m, n)
    supply = np.concatenate([p.probs, q.probs])
    masses = solvers @ supply
    feasible = (masses >= -1e-12).all(axis=1)
    masses = np.clip(masses, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(masses > 0.0, masses * np.log2(masses), 0.0)
    entropies = -terms.sum(axis=1)
    entropies[~feasible] = np.inf
    best = int(np.argmin(entropies))
    w = masses[best]
    keep = w > 0.0
    return SparseCoupling(edges[best, keep, 0], edges[best, keep, 1], w[keep], p, q)


def row_conditional(g: SparseCoupling, row: int) -> Categorical:
    """Distribution over right-marginal token ids given left index ``row``.

    Raises:
        CouplingError: code ``zero-row`` if the row carries no mass.
    """
    pick = g.rows == row
    if not pick.any():
        raise CouplingError(f"zero-row: row {row} carries no mass", code="zero-row")
    return Categorical(g.right_marginal.ids[g.cols[pick]], g.mass[pick])


def col_conditional(g: SparseCoupling, col: int) -> Categorical:
    """Distribution over left-marginal token ids given right index ``col``.

    Raises:
        CouplingError: code ``zero-col`` if the column carries no mass.
    """
    pick = g.cols == col
    if not pick.any():
        raise CouplingError(f"zero-col: column {col} carries no mass", code="zero-col")
    return Categorical(g.left_marginal.ids[g.rows[pick]], g.mass[pick])
