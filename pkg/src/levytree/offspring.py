"""Offspring distributions and Galton-Watson samplers.

Two built-in critical families:

* geometric_half: pmf(k) = 2^{-(k+1)}, variance 2; rescaled generation
  sizes converge to the diffusion with mechanism psi(u) = u^2.
* stable_offspring(gamma): generating function g(r) = r + (1-r)^gamma / gamma,
  pmf(0) = 1/gamma, pmf(1) = 0, pmf(k) = |binom(gamma, k)| / gamma with a
  k^{-1-gamma} tail; the scaling limit has mechanism proportional to
  u^gamma.

The stable pmf is stored densely up to a cutoff with the remaining mass
handled analytically (closed-form tail sums via gamma functions), so
normalization and sampling stay exact to floating precision.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .codings import OrderedTree
from .mechanism import BranchingMechanism

_DEFAULT_STABLE_CUTOFF = 1 << 14
_DEFAULT_NODE_BUDGET = 10**8


class NodeBudgetError(RuntimeError):
    """A sampler exceeded its node budget; carries the partial count."""

    def __init__(self, budget: int, grown: int):
        super().__init__(
            f"node budget {budget} exceeded after growing {grown} vertices"
        )
        self.budget = budget
        self.grown = grown


class ConditioningError(ValueError):
    """The requested conditioning event has probability zero."""


def _stable_log_tail(gamma: float, k) -> np.ndarray:
    """log P[X > k] for the stable family, k >= 1 (exact tail sums)."""
    k = np.asarray(k, dtype=float)
    return (
        math.log(gamma - 1.0)
        - math.log(gamma)
        + gammaln(k + 1.0 - gamma)
        - gammaln(2.0 - gamma)
        - gammaln(k + 1.0)
    )


def _stable_tail_mean(gamma: float, k: int) -> float:
    """sum_{j>k} j * pmf(j) in closed form."""
    return math.exp(gammaln(k + 1.0 - gamma) - gammaln(2.0 - gamma) - gammaln(float(k)))


@dataclass(frozen=True)
class OffspringDistribution:
    """Critical or subcritical offspring law with sampling support.

    probs: dense pmf values for k = 0..len-1.
    tail_mass: analytic mass beyond the dense range (stable family only).
    kind: "geometric" | "stable" | "custom" (selects closed-form
        generating functions and fast sampling paths).
    """

    probs: np.ndarray
    kind: str = "custom"
    gamma_idx: float | None = None
    tail_mass: float = 0.0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0 or np.any(probs < 0):
            raise ValueError("pmf must be a nonnegative 1-d array")
        total = math.fsum(probs.tolist()) + self.tail_mass
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"pmf sums to {total}, not 1 within 1e-12")
        if self.mean() > 1.0 + 1e-9:
            raise ValueError("offspring mean exceeds 1 (supercritical)")
        if probs.size > 1 and probs[1] >= 1.0 - 1e-15:
            raise ValueError("degenerate offspring law with pmf(1) = 1")
        probs = probs.copy()
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_cdf", np.cumsum(probs))

    # -- moments and pointwise pmf

    def mean(self) -> float:
        dense = math.fsum((k * p for k, p in enumerate(self.probs.tolist())))
        if self.tail_mass > 0.0:
            dense += _stable_tail_mean(self.gamma_idx, self.probs.size - 1)
        return dense

    def pmf_at(self, k: int) -> float:
        if k < 0:
            return 0.0
        if self.kind == "geometric":
            return 0.5 ** (k + 1)
        if k < self.probs.size:
            return float(self.probs[k])
        if self.tail_mass == 0.0:
            return 0.0
        # |binom(gamma, k)| / gamma = (gamma-1) G(k-gamma) / (G(2-gamma) G(k+1))
        g = self.gamma_idx
        return math.exp(
            math.log(g - 1.0) + gammaln(k - g) - gammaln(2.0 - g) - gammaln(k + 1.0)
        )

    # -- generating function

    def gf(self, r: float) -> float:
        """g(r) = sum_k pmf(k) r^k on [0, 1] (closed form for builders)."""
        if not 0.0 <= r <= 1.0:
            raise ValueError("gf argument must lie in [0, 1]")
        if self.kind == "geometric":
            return 1.0 / (2.0 - r)
        if self.kind == "stable":
            g = self.gamma_idx
            return r + (1.0 - r) ** g / g
        return float(np.polynomial.polynomial.polyval(r, self.probs))

    def gf_iterate(self, n: int, r: float) -> float:
        """n-fold composition g_n(r); g_n(0) is the extinction probability
        by generation n."""
        if n < 0:
            raise ValueError("iteration count must be >= 0")
        x = float(r)
        for _ in range(n):
            x = self.gf(x)
        return x

    # -- sampling

    def sample_counts(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Vectorized iid offspring counts."""
        if self.kind == "geometric":
            return rng.geometric(0.5, size=size).astype(np.int64) - 1
        u = rng.random(size)
        out = np.searchsorted(self._cdf, u, side="right").astype(np.int64)
        if self.tail_mass > 0.0:
            dense_top = float(self._cdf[-1])
            beyond = np.flatnonzero(u >= dense_top)
            for i in beyond:
                out[i] = self._sample_tail(1.0 - float(u[i]))
        return out

    def _sample_tail(self, q: float) -> int:
        """Smallest k with P[X > k] < q, searched in closed-form log space."""
        g = self.gamma_idx
        logq = math.log(q)
        lo = self.probs.size - 1  # P[X > lo] >= q by construction
        hi = 2 * lo
        while _stable_log_tail(g, hi) >= logq:
            lo, hi = hi, hi * 2
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if _stable_log_tail(g, mid) >= logq:
                lo = mid
            else:
                hi = mid
        return int(hi)

    def walk_increments(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Increments of the associated walk: offspring count minus one."""
        return self.sample_counts(rng, size) - 1


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def geometric_half() -> OffspringDistribution:
    """pmf(k) = 2^{-(k+1)}; critical with variance 2.

    The dense vector is a convenience view; evaluation and sampling use
    the closed form, so the truncation never enters any computation.
    """
    probs = np.exp2(-(np.arange(64) + 1.0))
    return OffspringDistribution(probs=probs, kind="geometric")


def stable_offspring(
    gamma_idx: float, cutoff: int = _DEFAULT_STABLE_CUTOFF
) -> OffspringDistribution:
    """Critical family with tail index gamma_idx in (1, 2]."""
    if not (1.0 < gamma_idx <= 2.0):
        raise ValueError("gamma_idx must lie in (1, 2]")
    if gamma_idx == 2.0:
        return OffspringDistribution(
            probs=np.array([0.5, 0.0, 0.5]), kind="stable", gamma_idx=2.0
        )
    g = gamma_idx
    probs = np.zeros(cutoff + 1)
    probs[0] = 1.0 / g
    if cutoff >= 2:
        probs[2] = (g - 1.0) / 2.0
        for k in range(2, cutoff):
            probs[k + 1] = probs[k] * (k - g) / (k + 1.0)
    tail = math.exp(_stable_log_tail(g, cutoff))
    return OffspringDistribution(
        probs=probs, kind="stable", gamma_idx=g, tail_mass=tail
    )


def custom_offspring(pmf) -> OffspringDistribution:
    return OffspringDistribution(probs=np.asarray(pmf, dtype=float), kind="custom")


def from_spec(spec: str) -> OffspringDistribution:
    """Parse 'geometric' | 'stable:<gamma>' | 'custom:<pmf csv path>'."""
    if spec == "geometric":
        return geometric_half()
    if spec.startswith("stable:"):
        return stable_offspring(float(spec.split(":", 1)[1]))
    if spec.startswith("custom:"):
        path = spec.split(":", 1)[1]
        return custom_offspring(np.loadtxt(path, delimiter=","))
    raise ValueError(f"unknown offspring spec {spec!r}")


# ---------------------------------------------------------------------------
# rescaling plans and limit mechanisms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RescalingPlan:
    """Population scale p and time scale gamma_p for a built-in family."""

    p: int
    gamma_p: int
    mechanism: BranchingMechanism


def time_scale(d: OffspringDistribution, p: int) -> int:
    """gamma_p: p for the geometric family, ceil(p^{gamma-1}) for stable."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if d.kind == "geometric":
        return p
    if d.kind == "stable":
        return max(1, math.ceil(p ** (d.gamma_idx - 1.0)))
    raise ValueError("no canonical time scale for custom offspring laws")


def stable_limit_constant(gamma_idx: float, p: int, gamma_p: int | None = None) -> float:
    """Finite-p coefficient c with limit mechanism c*u^gamma.

    Matching the walk tail asymptotics at time scale gamma_p gives
    c = gamma_p / (gamma * p^{gamma-1}); the integer rounding of the
    default gamma_p is kept so that finite-p comparisons are centered.
    As p grows (with the family scale) this tends to 1/gamma.
    """
    if gamma_p is None:
        gamma_p = max(1, math.ceil(p ** (gamma_idx - 1.0)))
    return gamma_p / (gamma_idx * p ** (gamma_idx - 1.0))


def limit_mechanism(
    d: OffspringDistribution, p: int | None = None, gamma_p: int | None = None
) -> BranchingMechanism:
    """Mechanism of the rescaled generation-size limit for a built-in
    family, calibrated to the population scale p and time scale gamma_p
    (defaults: the family scale; asymptotic constants when p is None)."""
    if d.kind == "geometric":
        beta = 1.0 if p is None or gamma_p is None else gamma_p / p
        return BranchingMechanism.quadratic(beta=beta)
    if d.kind == "stable":
        g = d.gamma_idx
        if g == 2.0:
            # variance gamma(gamma-1)/... the boundary member is quadratic
            beta = 0.5 if p is None or gamma_p is None else 0.5 * gamma_p / p
            return BranchingMechanism.quadratic(beta=beta)
        c = stable_limit_constant(g, p, gamma_p) if p is not None else 1.0 / g
        return BranchingMechanism.stable(g, c=c)
    raise ValueError("no limit mechanism for custom offspring laws")


def make_plan(d: OffspringDistribution, p: int) -> RescalingPlan:
    return RescalingPlan(p=p, gamma_p=time_scale(d, p), mechanism=limit_mechanism(d, p))


# ---------------------------------------------------------------------------
# tree samplers
# ---------------------------------------------------------------------------


def sample_tree(
    d: OffspringDistribution,
    rng: np.random.Generator,
    max_nodes: int = _DEFAULT_NODE_BUDGET,
) -> OrderedTree:
    """Exact unconditioned tree: run the offspring walk to its first
    passage below 0 and decode the counts."""
    parts = []
    grown = 0
    level = 0
    chunk = 256
    while True:
        ks = d.sample_counts(rng, chunk)
        walk = level + np.cumsum(ks - 1)
        hit = np.flatnonzero(walk == -1)
        if hit.size:
            parts.append(ks[: int(hit[0]) + 1])
            return OrderedTree(np.concatenate(parts))
        parts.append(ks)
        grown += chunk
        level = int(walk[-1])
        if grown >= max_nodes:
            raise NodeBudgetError(max_nodes, grown)
        chunk = min(chunk * 2, 1 << 20)


def sample_forest(
    d: OffspringDistribution,
    count: int,
    rng: np.random.Generator,
    max_nodes: int = _DEFAULT_NODE_BUDGET,
) -> list[OrderedTree]:
    remaining = max_nodes
    out = []
    for _ in range(count):
        t = sample_tree(d, rng, max_nodes=remaining)
        remaining -= t.size
        out.append(t)
    return out


def _tree_from_layers(layers: list[np.ndarray]) -> OrderedTree:
    """Assemble a tree from per-generation offspring counts in BFS order."""
    total = sum(int(ks.size) for ks in layers)
    offsets = [np.concatenate(([0], np.cumsum(ks))) for ks in layers]
    out = np.empty(total, dtype=np.int64)
    pos = 0
    stack = [(0, 0)]
    while stack:
        g, i = stack.pop()
        k = int(layers[g][i])
        out[pos] = k
        pos += 1
        start = int(offsets[g][i])
        for j in range(k - 1, -1, -1):
            stack.append((g + 1, start + j))
    return OrderedTree(out)


def _grow_layers(
    d: OffspringDistribution,
    rng: np.random.Generator,
    min_height: int,
    max_nodes: int,
    stop_height: int | None = None,
) -> list[np.ndarray] | None:
    """Grow a tree generation by generation.

    Returns None as soon as the population dies before reaching
    min_height (cheap rejection).  When stop_height is given the growth
    is truncated there; the returned layers then describe the tree
    restricted to generations <= stop_height.
    """
    layers = []
    pop = 1
    grown = 0
    g = 0
    while pop > 0:
        if stop_height is not None and g >= stop_height:
            layers.append(np.zeros(pop, dtype=np.int64))  # prune below
            break
        ks = d.sample_counts(rng, pop)
        layers.append(ks)
        grown += pop
        if grown > max_nodes:
            raise NodeBudgetError(max_nodes, grown)
        pop = int(ks.sum())
        g += 1
        if pop == 0 and g <= min_height:
            return None
    return layers


def sample_conditioned_height(
    d: OffspringDistribution,
    n: int,
    rng: np.random.Generator,
    max_nodes: int = _DEFAULT_NODE_BUDGET,
    stop_height: int | None = None,
) -> OrderedTree:
    """Tree conditioned to reach generation n, by rejection.

    Growth is generation by generation, so rejected attempts cost only
    their progeny up to the extinction time.  With stop_height = n the
    returned tree is pruned below generation n (sufficient for reduced
    counts, much cheaper for large n).
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if stop_height is not None and stop_height < n:
        raise ValueError("stop_height must be at least the conditioning level")
    accept = 1.0 - d.gf_iterate(n, 0.0)
    if accept < 1e-4:
        warnings.warn(
            f"conditioned-height acceptance rate ~{accept:.2e}; expect "
            f"~{1.0 / max(accept, 1e-300):.2e} attempts per sample",
            RuntimeWarning,
        )
    while True:
        layers = _grow_layers(d, rng, min_height=n, max_nodes=max_nodes,
                              stop_height=stop_height)
        if layers is not None:
            return _tree_from_layers(layers)


def _lattice_feasible(d: OffspringDistribution, n: int) -> bool:
    """Can n iid offspring counts sum to n - 1?  (Necessary conditions
    via support gcd; exact subset-sum check for small n.)"""
    support = [k for k in range(d.probs.size) if d.probs[k] > 0]
    if d.tail_mass > 0:
        support.append(d.probs.size)  # unbounded beyond the dense cutoff
    if not support:
        return False
    k0 = support[0]
    g = 0
    for k in support[1:]:
        g = math.gcd(g, k - k0)
    if g == 0:
        return n * k0 == n - 1
    if (n - 1 - n * k0) % g != 0 or n - 1 < n * k0:
        return False
    if n > 64:
        return True  # gcd test only; rejection will find witnesses
    # counts above n-1 cannot occur in a sum equal to n-1
    usable = [k for k in support if k <= n - 1]
    reachable = {0}
    for _ in range(n):
        reachable = {s + k for s in reachable for k in usable if s + k <= n - 1}
        if not reachable:
            return False
    return (n - 1) in reachable


def _rotate_to_first_passage(increments: np.ndarray) -> np.ndarray:
    """Unique cyclic rotation whose walk first hits -1 at the last step."""
    sums = np.cumsum(increments)
    pivot = int(np.argmin(sums))  # first index attaining the minimum
    return np.roll(increments, -(pivot + 1))


def sample_conditioned_size(
    d: OffspringDistribution,
    n: int,
    rng: np.random.Generator,
    method: str = "auto",
    max_attempts: int = 10**7,
) -> OrderedTree:
    """Exact sample of the tree law conditioned on n vertices.

    The generic route draws n iid offspring counts, rejects unless they
    sum to n - 1, and applies the cycle-lemma rotation.  For the
    geometric family the conditioned increment vector is uniform over
    compositions, so it is drawn directly (stars and bars) and rotated;
    both routes produce the same law.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if method not in ("auto", "rejection", "composition"):
        raise ValueError("method must be auto, rejection or composition")
    if method == "composition" and d.kind != "geometric":
        raise ValueError("composition sampling applies to the geometric family")
    if not _lattice_feasible(d, n):
        raise ConditioningError(
            f"no tree with {n} vertices has positive probability under this pmf"
        )
    if d.kind == "geometric" and method in ("auto", "composition"):
        if n == 1:
            return OrderedTree([0])
        m = n - 1  # total offspring to distribute over n vertices
        bars = np.sort(rng.choice(m + n - 1, size=n - 1, replace=False))
        edges = np.concatenate(([-1], bars, [m + n - 1]))
        counts = np.diff(edges) - 1
        return OrderedTree(_rotate_to_first_passage(counts - 1) + 1)

    batch = max(1, min(4096, max_attempts // max(n, 1)))
    attempts = 0
    while attempts < max_attempts:
        ks = d.sample_counts(rng, batch * n).reshape(batch, n)
        attempts += batch
        good = np.flatnonzero(ks.sum(axis=1) == n - 1)
        if good.size:
            counts = ks[int(good[0])]
            return OrderedTree(_rotate_to_first_passage(counts - 1) + 1)
    raise ConditioningError(
        f"no {n}-vertex tree found in {max_attempts} attempts; "
        "the conditioning event is unreachable or extremely rare"
    )


def tree_probability(d: OffspringDistribution, tree: OrderedTree) -> float:
    """Unconditioned probability of an explicit tree: prod_v pmf(k_v)."""
    return math.prod(d.pmf_at(int(k)) for k in tree.child_counts)
