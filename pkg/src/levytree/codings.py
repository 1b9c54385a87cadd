"""Exact codings of rooted ordered trees and forests.

The canonical storage for a tree is its child-count sequence in
depth-first (lexicographic) order; this is also the increment-plus-one
sequence of the tree's walk coding, so conversions are cheap and exact.
All sequences live in numpy integer arrays.

Conventions:

* A walk coding of a forest is the value path V_0 = 0, V_1, ..., V_M
  with increments k_v - 1 in visit order; tree j ends at the first
  passage of V to level -j.
* The height sequence records the generation of each visited vertex;
  heights of a forest are the concatenated per-tree heights.
* The contour sequence samples at integer times the distance to the
  root of a unit-speed particle tracing the tree boundary; its length
  for a single tree is 2*(size-1) + 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CodingError(ValueError):
    """Sequence fails the defining constraints of its coding."""


# ---------------------------------------------------------------------------
# trees
# ---------------------------------------------------------------------------


class OrderedTree:
    """Finite rooted ordered tree stored as child counts in DFS order."""

    __slots__ = ("_counts", "_parents", "_ranks", "_sizes")

    def __init__(self, child_counts):
        counts = np.asarray(child_counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size == 0:
            raise CodingError("child_counts must be a nonempty 1-d sequence")
        if np.any(counts < 0):
            raise CodingError("child counts must be nonnegative")
        walk = np.cumsum(counts - 1)
        if walk[-1] != -1 or np.any(walk[:-1] < 0):
            raise CodingError("child counts do not encode a single complete tree")
        self._counts = counts
        self._counts.setflags(write=False)
        self._parents = None
        self._ranks = None
        self._sizes = None

    # -- basic accessors

    @property
    def child_counts(self) -> np.ndarray:
        return self._counts

    @property
    def size(self) -> int:
        return int(self._counts.size)

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other) -> bool:
        return isinstance(other, OrderedTree) and np.array_equal(
            self._counts, other._counts
        )

    def __hash__(self) -> int:
        return hash(self._counts.tobytes())

    def __repr__(self) -> str:
        return f"OrderedTree({self.to_text()!r})"

    # -- serialization

    def to_text(self) -> str:
        """Comma-separated child counts, e.g. '2,3,0,2,0,0,0,0'."""
        return ",".join(str(int(k)) for k in self._counts)

    @staticmethod
    def from_text(text: str) -> "OrderedTree":
        return OrderedTree([int(tok) for tok in text.strip().split(",")])

    # -- structure

    def _ensure_structure(self):
        if self._parents is not None:
            return
        counts = self._counts
        n = counts.size
        parents = np.full(n, -1, dtype=np.int64)
        ranks = np.zeros(n, dtype=np.int64)
        stack = []  # (vertex, children already attached)
        remaining = []
        for v in range(n):
            if stack:
                p = stack[-1]
                remaining[-1] -= 1
                ranks[v] = counts[p] - remaining[-1]
                parents[v] = p
            if counts[v] > 0:
                stack.append(v)
                remaining.append(int(counts[v]))
            else:
                while remaining and remaining[-1] == 0:
                    stack.pop()
                    remaining.pop()
        self._parents = parents
        self._ranks = ranks

    @property
    def parents(self) -> np.ndarray:
        """parents[v] is the DFS index of v's parent (-1 for the root)."""
        self._ensure_structure()
        return self._parents

    @property
    def child_ranks(self) -> np.ndarray:
        """child_ranks[v] is v's 1-based position among its siblings."""
        self._ensure_structure()
        return self._ranks

    @property
    def subtree_sizes(self) -> np.ndarray:
        if self._sizes is None:
            sizes = np.ones(self.size, dtype=np.int64)
            parents = self.parents
            for v in range(self.size - 1, 0, -1):
                sizes[parents[v]] += sizes[v]
            self._sizes = sizes
            self._sizes.setflags(write=False)
        return self._sizes

    def labels(self) -> list[tuple[int, ...]]:
        """Materialize the vertex labels in DFS order (root is ())."""
        parents, ranks = self.parents, self.child_ranks
        out: list[tuple[int, ...]] = [()]
        for v in range(1, self.size):
            out.append(out[parents[v]] + (int(ranks[v]),))
        return out

    @staticmethod
    def from_labels(labels) -> "OrderedTree":
        """Build from a label set; validates prefix- and sibling-closure."""
        labs = sorted(tuple(l) for l in labels)
        if not labs or labs[0] != ():
            raise CodingError("label set must contain the root ()")
        index = {lab: i for i, lab in enumerate(labs)}
        if len(index) != len(labs):
            raise CodingError("duplicate labels")
        counts = np.zeros(len(labs), dtype=np.int64)
        for lab in labs:
            if lab == ():
                continue
            if lab[:-1] not in index:
                raise CodingError(f"label {lab} lacks its parent")
            if lab[-1] < 1:
                raise CodingError("child indices start at 1")
            counts[index[lab[:-1]]] += 1
        for lab in labs:
            for j in range(1, int(counts[index[lab]]) + 1):
                if lab + (j,) not in index:
                    raise CodingError(f"children of {lab} are not contiguous")
        return OrderedTree(counts)

    def height(self) -> np.ndarray:
        return height_of(self)


Forest = list  # a forest is a plain list of OrderedTree


# ---------------------------------------------------------------------------
# height coding
# ---------------------------------------------------------------------------


def _tree_heights(counts: np.ndarray) -> np.ndarray:
    out = np.empty(counts.size, dtype=np.int64)
    stack: list[int] = []  # unattached child slots per open ancestor
    for v in range(counts.size):
        out[v] = len(stack)
        stack.append(int(counts[v]))
        while stack and stack[-1] == 0:
            stack.pop()
            if stack:
                stack[-1] -= 1
    return out


def height_of(tree_or_forest) -> np.ndarray:
    """Generations in visit order; forests concatenate per-tree heights."""
    if isinstance(tree_or_forest, OrderedTree):
        return _tree_heights(tree_or_forest.child_counts)
    parts = [_tree_heights(t.child_counts) for t in tree_or_forest]
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(parts)


def tree_from_height(heights) -> OrderedTree:
    trees = forest_from_height(heights)
    if len(trees) != 1:
        raise CodingError("height sequence codes a forest, not a single tree")
    return trees[0]


def forest_from_height(heights) -> list[OrderedTree]:
    """Invert the height coding (heights characterize the forest).

    The parent of vertex v is the most recent previous vertex one
    generation up; a height jump of more than +1 has no such parent and
    is rejected.
    """
    h = np.asarray(heights, dtype=np.int64)
    if h.size == 0:
        return []
    if h[0] != 0 or np.any(h < 0):
        raise CodingError("height sequence must start at 0 and stay nonnegative")
    counts = np.zeros(h.size, dtype=np.int64)
    boundaries = [0]
    path: list[int] = []  # DFS indices of the current root-to-vertex path
    for v in range(h.size):
        d = int(h[v])
        if d == 0:
            path.clear()
            if v > 0:
                boundaries.append(v)
        else:
            if d > len(path):
                raise CodingError("height may increase by at most 1 per step")
            del path[d:]
            counts[path[-1]] += 1
        path.append(v)
    boundaries.append(h.size)
    return [
        OrderedTree(counts[a:b]) for a, b in zip(boundaries[:-1], boundaries[1:])
    ]


def occupation_counts(heights, level: int, horizon: int | None = None) -> int:
    """#\\{j < horizon : H_j == level\\}, the discrete local time at a level."""
    h = np.asarray(heights)
    if horizon is None:
        horizon = h.size
    return int(np.count_nonzero(h[:horizon] == level))


# ---------------------------------------------------------------------------
# walk coding
# ---------------------------------------------------------------------------


def lukasiewicz_of(forest) -> np.ndarray:
    """Value path V_0=0, ..., V_M of the walk with increments k_v - 1."""
    if isinstance(forest, OrderedTree):
        forest = [forest]
    if not forest:
        return np.zeros(1, dtype=np.int64)
    incs = np.concatenate([t.child_counts - 1 for t in forest])
    out = np.empty(incs.size + 1, dtype=np.int64)
    out[0] = 0
    np.cumsum(incs, out=out[1:])
    return out


def walk_to_forest(walk) -> list[OrderedTree]:
    """Invert the walk coding; rejects invalid or incomplete walks."""
    v = np.asarray(walk, dtype=np.int64)
    if v.size < 2 or v[0] != 0:
        raise CodingError("walk must start at 0 and take at least one step")
    incs = np.diff(v)
    if np.any(incs < -1):
        raise CodingError("walk increments must be >= -1")
    # tree j ends at the first passage to -j, i.e. at each strict new minimum
    running_min = np.minimum.accumulate(v)
    new_min = np.flatnonzero(running_min[1:] < running_min[:-1]) + 1
    if new_min.size == 0 or new_min[-1] != v.size - 1:
        raise CodingError("walk does not end at a fresh minimum (incomplete tree)")
    trees = []
    start = 0
    for b in new_min:
        trees.append(OrderedTree(incs[start:b] + 1))
        start = b
    return trees


def height_from_walk(walk, method: str = "stack") -> np.ndarray:
    """Heights H_n = #{k < n : V_k = min_{k<=j<=n} V_j} for n = 0..M-1.

    'stack' runs in linear time keeping the running-minimum records;
    'literal' evaluates the defining formula with quadratic work and is
    kept as the reference implementation for cross-checking.
    """
    v = np.asarray(walk, dtype=np.int64)
    if v.size < 1 or v[0] != 0:
        raise CodingError("walk must start at 0")
    n_vertices = v.size - 1
    if method == "literal":
        out = np.empty(n_vertices, dtype=np.int64)
        for n in range(n_vertices):
            if n == 0:
                out[0] = 0
                continue
            sufmin = np.minimum.accumulate(v[n::-1])[::-1]
            out[n] = np.count_nonzero(v[:n] == sufmin[:n])
        return out
    if method != "stack":
        raise ValueError("method must be 'stack' or 'literal'")
    out = np.empty(n_vertices, dtype=np.int64)
    stack: list[int] = []
    for n in range(n_vertices):
        out[n] = len(stack)
        if v[n + 1] >= v[n]:
            stack.append(int(v[n]))
        else:
            target = v[n + 1]
            while stack and stack[-1] > target:
                stack.pop()
    return out


def height_at(walk, n: int) -> int:
    """Single-point evaluation of the height formula, vectorized over k."""
    v = np.asarray(walk)
    if n == 0:
        return 0
    sufmin = np.minimum.accumulate(v[n::-1])[::-1]
    return int(np.count_nonzero(v[:n] == sufmin[:n]))


def min_height_between(walk, s: int, t: int) -> int:
    """min of the height sequence over visit indices [s, t] (s <= t).

    Equals #{k < s : V_k = min_{k<=j<=t} V_j}: the ancestors of vertex s
    that are still ancestors of vertex t.
    """
    v = np.asarray(walk)
    if not 0 <= s <= t:
        raise ValueError("need 0 <= s <= t")
    if s == 0:
        return 0
    sufmin = np.minimum.accumulate(v[t::-1])[::-1]
    return int(np.count_nonzero(v[:s] == sufmin[:s]))


# ---------------------------------------------------------------------------
# contour coding
# ---------------------------------------------------------------------------


def contour_of(tree: OrderedTree) -> np.ndarray:
    """Contour sampled at integer times, from a direct edge traversal."""
    counts = tree.child_counts
    out = np.empty(2 * tree.size - 1, dtype=np.int64)
    out[0] = 0
    pos = 1
    depth = 0
    nxt = 1  # next unvisited vertex in DFS order
    stack = [int(counts[0])]
    while stack:
        if stack[-1] > 0:
            stack[-1] -= 1
            depth += 1
            out[pos] = depth
            pos += 1
            stack.append(int(counts[nxt]))
            nxt += 1
        else:
            stack.pop()
            if stack:
                depth -= 1
                out[pos] = depth
                pos += 1
    return out


def contour_from_height(heights) -> np.ndarray:
    """Rebuild the contour from the height sequence of a single tree.

    Uses the time change K_n = 2n - H_n: on [K_n, K_{n+1}) the contour
    descends from H_n by unit steps (its last point is the parent level
    of vertex n+1, where the climb to the next vertex starts).
    """
    h = np.asarray(heights, dtype=np.int64)
    if h.size == 0 or h[0] != 0:
        raise CodingError("height sequence must start at 0")
    n_vertices = h.size
    padded = np.append(h, 0)
    k = 2 * np.arange(n_vertices + 1, dtype=np.int64) - padded
    lens = np.diff(k)
    tops = np.repeat(h, lens)
    bases = np.repeat(k[:-1], lens)
    full = np.maximum(tops - (np.arange(2 * n_vertices) - bases), 0)
    return full[: 2 * (n_vertices - 1) + 1]


def contour_at(walk, time: int) -> int:
    """Contour value of the coded forest at one integer time.

    Locates n with K_n <= time < K_{n+1} by binary search (K_n = 2n - H_n
    is strictly increasing) and applies the descent formula, evaluating
    only two single-point heights instead of the whole height path.
    """
    if time < 0:
        raise ValueError("time must be >= 0")
    v = np.asarray(walk)
    lo = time // 2
    hi = min(time, v.size - 2)
    if hi < 0:
        return 0
    if 2 * hi - height_at(v, hi) <= time:
        n = hi
    else:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if 2 * mid - height_at(v, mid) <= time:
                lo = mid
            else:
                hi = mid
        n = lo
    h_n = height_at(v, n)
    return max(h_n - (time - (2 * n - h_n)), 0)


# ---------------------------------------------------------------------------
# mirror and sibling-count exploration
# ---------------------------------------------------------------------------


def mirror(tree: OrderedTree) -> OrderedTree:
    """Tree with every child list reversed."""
    counts = tree.child_counts
    sizes = tree.subtree_sizes
    out = np.empty(tree.size, dtype=np.int64)
    stack = [0]
    pos = 0
    while stack:
        u = stack.pop()
        k = int(counts[u])
        out[pos] = k
        pos += 1
        c = u + 1
        for _ in range(k):  # pushed in original order => visited reversed
            stack.append(c)
            c += int(sizes[c])
    return OrderedTree(out)


def mirror_label(tree: OrderedTree, label: tuple[int, ...]) -> tuple[int, ...]:
    """Label of the vertex in mirror(tree) matching `label` in tree."""
    counts = tree.child_counts
    index = {lab: i for i, lab in enumerate(tree.labels())}
    if label not in index:
        raise CodingError(f"label {label} not in tree")
    out = []
    for g in range(1, len(label) + 1):
        parent = label[: g - 1]
        k = int(counts[index[parent]])
        out.append(k + 1 - label[g - 1])
    return tuple(out)


@dataclass(frozen=True)
class DiscreteExploration:
    """Per-generation sibling counts along the ancestral line of a vertex.

    Entry g-1 (generation g, g = 1..H_n) counts the younger (rho) and
    older (eta) siblings of the generation-g ancestor of the visited
    vertex; the vertex's own siblings appear at its own generation.
    """

    rho: np.ndarray
    eta: np.ndarray


def exploration_at(tree: OrderedTree, n: int) -> DiscreteExploration:
    if not 0 <= n < tree.size:
        raise CodingError("vertex index out of range")
    counts = tree.child_counts
    parents, ranks = tree.parents, tree.child_ranks
    chain = []
    v = n
    while parents[v] >= 0:
        chain.append(v)
        v = int(parents[v])
    chain.reverse()  # generation 1 first
    rho = np.array([counts[parents[v]] - ranks[v] for v in chain], dtype=np.int64)
    eta = np.array([ranks[v] - 1 for v in chain], dtype=np.int64)
    return DiscreteExploration(rho=rho, eta=eta)


# ---------------------------------------------------------------------------
# reduced counts
# ---------------------------------------------------------------------------


def reduced_counts(tree: OrderedTree, n: int) -> np.ndarray:
    """Z[k] = number of generation-k vertices with a descendant at
    generation n, for k = 0..n (ancestor marking on the tree)."""
    if n < 0:
        raise CodingError("level n must be >= 0")
    h = height_of(tree)
    parents = tree.parents
    marked = h == n
    marked = np.array(marked)
    for v in range(tree.size - 1, 0, -1):
        if marked[v]:
            marked[parents[v]] = True
    out = np.zeros(n + 1, dtype=np.int64)
    for k in range(n + 1):
        out[k] = np.count_nonzero(marked & (h == k))
    return out


def excursion_count_above(heights, level: int, target: int) -> int:
    """Number of excursions of the height sequence strictly above `level`
    whose maximum reaches `target`; requires 0 <= level < target."""
    if not 0 <= level < target:
        raise CodingError("need 0 <= level < target")
    h = np.asarray(heights)
    above = h > level
    if not above.any():
        return 0
    edges = np.diff(above.astype(np.int8))
    starts = np.flatnonzero(edges == 1) + 1
    if above[0]:
        starts = np.concatenate(([0], starts))
    ends = np.flatnonzero(edges == -1) + 1
    if above[-1]:
        ends = np.concatenate((ends, [h.size]))
    count = 0
    for a, b in zip(starts, ends):
        if h[a:b].max() >= target:
            count += 1
    return count
