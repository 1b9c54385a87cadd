"""Exact laws of continuum-tree marginals.

Three families of objects live here:

* marked trees extracted from an excursion at sampled times (the
  recursive split at running minima), and the law of the tree spanned
  by Poisson marks: exponential lifetimes with rate psi'(psi^{-1}(lam))
  and an explicit offspring pmf driven by the derivatives of psi;
* the skeleton law of marginals of the stable tree, with the quadratic
  specialization of the lifetime density;
* the reduced tree of lineages surviving to a horizon T: branch levels
  with survival psi_tilde(v(T)) / psi_tilde(v(T-t)) and branching counts
  with a generating function built from the chord slopes of psi.

Offspring pmfs here share one algebraic shape over k >= 2:

    pmf(k) = [beta_num * 1{k=2} + sum_i A_i m_i^k / k! + B |binom(g, k)|] / Z

(atoms contribute Poisson-like terms, a stable term contributes binomial
series coefficients), so a single truncated-pmf builder with analytic
tails serves both the Poisson-marked and the reduced offspring laws.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammainc, gammaln

from . import codings
from .codings import OrderedTree
from .csbp import CsbpKernel
from .mechanism import BranchingMechanism, MechanismError
from .offspring import (
    NodeBudgetError,
    OffspringDistribution,
    geometric_half,
    limit_mechanism,
    sample_conditioned_height,
    sample_conditioned_size,
    time_scale,
)
from .report import ExperimentReport, timer
from .stats import chi_square, ks_statistic, mc_mean_se


# ---------------------------------------------------------------------------
# marked trees
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarkedTree:
    """Skeleton without unary vertices plus a lifetime per vertex."""

    skeleton: OrderedTree
    lifetimes: np.ndarray

    def __post_init__(self):
        lt = np.asarray(self.lifetimes, dtype=float)
        if lt.shape != (self.skeleton.size,):
            raise ValueError("need one lifetime per skeleton vertex")
        if np.any(lt < 0) or not np.all(np.isfinite(lt)):
            raise ValueError("lifetimes must be finite and nonnegative")
        if np.any(self.skeleton.child_counts == 1):
            raise ValueError("marked-tree skeletons may not contain unary vertices")
        lt = lt.copy()
        lt.setflags(write=False)
        object.__setattr__(self, "lifetimes", lt)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.skeleton.child_counts == 0))

    def total_lifetime(self) -> float:
        return float(self.lifetimes.sum())

    def to_dict(self) -> dict:
        return {"skeleton": self.skeleton.to_text(),
                "lifetimes": self.lifetimes.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @staticmethod
    def from_dict(d: dict) -> "MarkedTree":
        return MarkedTree(OrderedTree.from_text(d["skeleton"]),
                          np.asarray(d["lifetimes"], dtype=float))


def extract_marginal_tree(excursion, times) -> MarkedTree:
    """Marked tree spanned by the excursion values at given time indices.

    Recursive construction: the root lifetime is the running minimum
    between the first and last mark; marks are split into groups by the
    gaps attaining that minimum (ties merge into one multi-branch node,
    which is exact for integer-valued inputs); groups recurse with the
    minimum subtracted.
    """
    e = np.asarray(excursion)
    ts = [int(t) for t in times]
    if not ts or any(t < 0 or t >= e.size for t in ts):
        raise ValueError("times must be nonempty indices into the excursion")
    if any(a > b for a, b in zip(ts, ts[1:])):
        raise ValueError("times must be nondecreasing")
    counts: list[int] = []
    lifetimes: list[float] = []

    def build(group: list[int], base) -> None:
        if len(group) == 1:
            counts.append(0)
            lifetimes.append(float(e[group[0]] - base))
            return
        lo, hi = group[0], group[-1]
        m_star = e[lo : hi + 1].min()
        gap_mins = [e[a : b + 1].min() for a, b in zip(group, group[1:])]
        splits = [i for i, g in enumerate(gap_mins) if g == m_star]
        pieces = []
        start = 0
        for i in splits:
            pieces.append(group[start : i + 1])
            start = i + 1
        pieces.append(group[start:])
        counts.append(len(pieces))
        lifetimes.append(float(m_star - base))
        for piece in pieces:
            build(piece, m_star)

    build(ts, 0)
    return MarkedTree(OrderedTree(counts), np.asarray(lifetimes))


# ---------------------------------------------------------------------------
# truncated pmfs with analytic tails
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TruncatedPmf:
    """Dense pmf plus analytic tail mass with a closed-form survival.

    The tail belongs to the |binom(gamma, k)| series; atom (Poisson)
    contributions decay superexponentially and are absorbed densely.
    """

    probs: np.ndarray
    tail_mass: float
    tail_coeff: float  # B / Z multiplying the binomial series, 0 if none
    gamma_idx: float | None

    def total(self) -> float:
        return math.fsum(self.probs.tolist()) + self.tail_mass

    def mean_dense(self) -> float:
        return math.fsum((k * p for k, p in enumerate(self.probs.tolist())))

    def pmf_at(self, k: int) -> float:
        if 0 <= k < self.probs.size:
            return float(self.probs[k])
        if k < 0 or self.tail_coeff == 0.0:
            return 0.0
        g = self.gamma_idx
        return self.tail_coeff * math.exp(
            math.log(g) + math.log(g - 1.0) + gammaln(k - g)
            - gammaln(2.0 - g) - gammaln(k + 1.0)
        )

    def _log_tail(self, k: int) -> float:
        # sum_{j>k} |binom(g, j)| = (g-1) G(k+1-g) / (G(2-g) G(k+1))
        g = self.gamma_idx
        return (
            math.log(self.tail_coeff)
            + math.log(g - 1.0)
            + gammaln(k + 1.0 - g)
            - gammaln(2.0 - g)
            - gammaln(k + 1.0)
        )

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        cdf = np.cumsum(self.probs)
        u = rng.random(size)
        out = np.searchsorted(cdf, u, side="right").astype(np.int64)
        if self.tail_mass > 0.0:
            beyond = np.flatnonzero(u >= cdf[-1])
            for i in beyond:
                out[i] = self._sample_tail(1.0 - float(u[i]))
        return out

    def _sample_tail(self, q: float) -> int:
        logq = math.log(q)
        lo = self.probs.size - 1
        hi = 2 * lo
        while self._log_tail(hi) >= logq:
            lo, hi = hi, hi * 2
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self._log_tail(mid) >= logq:
                lo = mid
            else:
                hi = mid
        return int(hi)


def _abs_binom_series(g: float, kmax: int) -> np.ndarray:
    """|binom(g, k)| for k = 0..kmax, zeroed at k = 1 (only k >= 2 used)."""
    out = np.zeros(kmax + 1)
    if kmax >= 2:
        out[2] = g * (g - 1.0) / 2.0
        for k in range(2, kmax):
            out[k + 1] = out[k] * (k - g) / (k + 1.0)
    return out


def _mixture_pmf(
    mass0: float,
    beta_num: float,
    atom_terms: list[tuple[float, float]],
    stable_coeff: float,
    gamma_idx: float | None,
    Z: float,
    cutoff: int = 4096,
    tail_tol: float = 1e-12,
) -> TruncatedPmf:
    """Assemble pmf(0) = mass0/Z and pmf(k>=2) from the mixture numerators.

    atom_terms hold (A_i, m_i) contributing A_i m_i^k / k!; a stable term
    contributes stable_coeff * gamma * |binom(gamma, k)|.  The dense part
    stops at `cutoff`; the binomial-series remainder is kept analytically
    (it cannot be truncated below tail_tol at any practical cutoff when
    gamma < 2), while atom remainders are Poisson tails and must fit in
    tail_tol.
    """
    probs = np.zeros(cutoff + 1)
    probs[0] = mass0 / Z
    if cutoff >= 2:
        probs[2] += beta_num / Z
    ks = np.arange(cutoff + 1, dtype=float)
    log_fact = gammaln(ks + 1.0)
    atom_tail = 0.0
    for A, m in atom_terms:
        if A == 0.0 or m == 0.0:
            continue
        with np.errstate(divide="ignore"):
            logs = math.log(A) + ks * math.log(m) - log_fact
        vals = np.exp(logs)
        vals[:2] = 0.0
        probs += vals / Z
        # remaining mass: A * e^{m} * P[Pois(m) > cutoff]  (A carries e^{-m})
        atom_tail += A * math.exp(m) * float(gammainc(cutoff + 1, m)) / Z
    if atom_tail > tail_tol:
        raise ValueError("atom cutoff too small for the requested tail tolerance")
    tail_mass = 0.0
    tail_coeff = 0.0
    if stable_coeff > 0.0:
        g = gamma_idx
        series = _abs_binom_series(g, cutoff)
        probs += stable_coeff * g * series / Z
        tail_coeff = stable_coeff * g / Z
        # sum_{k>cutoff} |binom(g,k)| in closed form
        tail_mass = tail_coeff * math.exp(
            math.log(g - 1.0)
            + gammaln(cutoff + 1.0 - g) - gammaln(2.0 - g) - gammaln(cutoff + 1.0)
        )
    return TruncatedPmf(
        probs=probs, tail_mass=tail_mass, tail_coeff=tail_coeff, gamma_idx=gamma_idx
    )


# ---------------------------------------------------------------------------
# Poisson-marked trees
# ---------------------------------------------------------------------------


def poisson_offspring_pmf(
    m: BranchingMechanism, lam: float, cutoff: int = 4096
) -> TruncatedPmf:
    """Offspring law of the tree spanned by rate-lam Poisson marks.

    pmf(0) = lam / (x psi'(x)) with x = psi^{-1}(lam), pmf(1) = 0 and
    pmf(k) = x^{k-1} |psi^(k)(x)| / (k! psi'(x)) for k >= 2.
    """
    if lam <= 0:
        raise ValueError("mark rate lam must be positive")
    x = m.psi_inverse(lam)
    Z = x * m.psi_prime(x)
    atom_terms = [(w * math.exp(-x * r), x * r) for r, w in m.levy_atoms]
    stable_coeff = 0.0
    gamma_idx = None
    if m.stable_tail is not None:
        c, g = m.stable_tail
        stable_coeff = c * x**g / g
        gamma_idx = g
    return _mixture_pmf(
        mass0=lam,
        beta_num=m.beta * x * x,
        atom_terms=atom_terms,
        stable_coeff=stable_coeff,
        gamma_idx=gamma_idx,
        Z=Z,
        cutoff=cutoff,
    )


def poisson_lifetime_rate(m: BranchingMechanism, lam: float) -> float:
    """Exponential lifetime rate psi'(psi^{-1}(lam)) of the marked tree."""
    return m.psi_prime(m.psi_inverse(lam))


def poisson_tree_sample(
    m: BranchingMechanism,
    lam: float,
    rng: np.random.Generator,
    max_nodes: int = 10**6,
) -> MarkedTree:
    """Family tree of the Poisson-marked excursion: iid exponential
    lifetimes over a Galton-Watson skeleton with the pmf above."""
    pmf = poisson_offspring_pmf(m, lam)
    rate = poisson_lifetime_rate(m, lam)
    parts = []
    level = 0
    grown = 0
    chunk = 128
    while True:
        ks = pmf.sample(rng, chunk)
        walk = level + np.cumsum(ks - 1)
        hit = np.flatnonzero(walk == -1)
        if hit.size:
            parts.append(ks[: int(hit[0]) + 1])
            counts = np.concatenate(parts)
            break
        parts.append(ks)
        level = int(walk[-1])
        grown += chunk
        if grown >= max_nodes:
            raise NodeBudgetError(max_nodes, grown)
        chunk = min(chunk * 2, 1 << 18)
    lifetimes = rng.exponential(scale=1.0 / rate, size=counts.size)
    return MarkedTree(OrderedTree(counts), lifetimes)


# ---------------------------------------------------------------------------
# stable skeleton law and the quadratic lifetime density
# ---------------------------------------------------------------------------


def enumerate_Tstar(p: int) -> list[OrderedTree]:
    """All ordered rooted trees with p leaves and no unary vertices."""
    if p < 1:
        raise ValueError("p must be >= 1")
    memo: dict[int, list[tuple[int, ...]]] = {1: [(0,)]}

    def gen(q: int) -> list[tuple[int, ...]]:
        if q in memo:
            return memo[q]
        out: list[tuple[int, ...]] = []
        for k in range(2, q + 1):
            for comp in _compositions(q, k):
                parts = [gen(c) for c in comp]
                for combo in _product(parts):
                    seq: tuple[int, ...] = (k,)
                    for piece in combo:
                        seq = seq + piece
                    out.append(seq)
        memo[q] = out
        return out

    return [OrderedTree(seq) for seq in gen(p)]


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _product(lists):
    if not lists:
        yield ()
        return
    for head in lists[0]:
        for tail in _product(lists[1:]):
            yield (head,) + tail


def stable_skeleton_pmf(gamma_idx: float, skeleton: OrderedTree) -> float:
    """Probability of a given skeleton with p leaves under the marginal
    law of the index-gamma tree (gamma in (1, 2]; gamma = 2 supports
    binary skeletons only)."""
    if not (1.0 < gamma_idx <= 2.0):
        raise MechanismError("gamma_idx must lie in (1, 2]")
    counts = skeleton.child_counts
    if np.any(counts == 1):
        raise MechanismError("skeleton has a unary vertex")
    p = int(np.count_nonzero(counts == 0))
    numer = math.factorial(p)
    for k in counts:
        k = int(k)
        if k == 0:
            continue
        numer /= math.factorial(k)
        for j in range(1, k):
            numer *= abs(gamma_idx - j)
    denom = 1.0
    for j in range(1, p):
        denom *= j * gamma_idx - 1.0
    return numer / denom


def quadratic_lifetime_density(marked: MarkedTree) -> float:
    """Joint lifetime density for a binary skeleton in the gamma = 2 case:
    2^p (2p-3)!! * S * exp(-S^2) with S the total lifetime."""
    counts = marked.skeleton.child_counts
    if np.any((counts != 0) & (counts != 2)):
        raise MechanismError("quadratic lifetime density needs a binary skeleton")
    p = marked.n_leaves
    if marked.skeleton.size != 2 * p - 1:
        raise MechanismError("binary skeleton with p leaves must have 2p-1 vertices")
    s = marked.total_lifetime()
    dblfact = 1.0
    for j in range(1, 2 * p - 2, 2):
        dblfact *= j
    return 2.0**p * dblfact * s * math.exp(-s * s)


# ---------------------------------------------------------------------------
# reduced trees
# ---------------------------------------------------------------------------


@dataclass
class ReducedTreeNode:
    """One lineage of the reduced tree.

    The lineage exists on [start_level, branch_level); at branch_level it
    splits into `offspring` child lineages.  branch_level is None when
    the lineage was still alive at the sampling stop level.
    """

    start_level: float
    branch_level: float | None = None
    offspring: int | None = None
    children: list["ReducedTreeNode"] = field(default_factory=list)

    def count_at(self, level: float) -> int:
        """Number of lineages crossing `level` (the reduced population)."""
        if self.branch_level is not None and self.branch_level <= level:
            return sum(child.count_at(level) for child in self.children)
        return 1

    def branch_levels(self) -> list[float]:
        out = []
        if self.branch_level is not None:
            out.append(self.branch_level)
            for child in self.children:
                out.extend(child.branch_levels())
        return out

    def to_dict(self) -> dict:
        return {
            "start_level": self.start_level,
            "branch_level": self.branch_level,
            "offspring": self.offspring,
            "children": [c.to_dict() for c in self.children],
        }


def reduced_offspring_pmf(
    m: BranchingMechanism, big_u: float, cutoff: int = 4096
) -> TruncatedPmf:
    """Branch-point offspring law at U = v(T - t):

        E[r^k] = r * (psi'(U) - chord(U, (1-r)U)) / (psi'(U) - chord(U, 0)),

    whose power-series coefficients are exactly the mixture shape: atoms
    give Poisson terms in m_i = U r_i, the diffusion part a mass at 2,
    a stable term the |binom(gamma, k)| series; no mass at 0 or 1.
    """
    if big_u <= 0:
        raise ValueError("U must be positive")
    theta = m.theta(big_u)
    if theta <= 0:
        raise MechanismError(
            "degenerate branch-point law: psi'(U) - psi(U)/U vanishes"
        )
    Z = big_u * theta
    atom_terms = [(w * math.exp(-big_u * r), big_u * r) for r, w in m.levy_atoms]
    stable_coeff = 0.0
    gamma_idx = None
    if m.stable_tail is not None:
        c, g = m.stable_tail
        stable_coeff = c * big_u**g / g
        gamma_idx = g
    return _mixture_pmf(
        mass0=0.0,
        beta_num=m.beta * big_u * big_u,
        atom_terms=atom_terms,
        stable_coeff=stable_coeff,
        gamma_idx=gamma_idx,
        Z=Z,
        cutoff=cutoff,
    )


def sample_branch_level(
    kernel: CsbpKernel, horizon: float, start_level: float, rng: np.random.Generator
) -> float:
    """Draw the absolute level of the next branch point.

    Survival beyond start_level + tau is
    psi_tilde(v(horizon - start_level)) / psi_tilde(v(horizon - start_level - tau));
    inverting through y = v(horizon - level) needs one root-find on the
    monotone psi_tilde and one tail integral of 1/psi, both exact.
    """
    m = kernel.mechanism
    span = horizon - start_level
    if span <= 0:
        raise ValueError("start level must lie strictly below the horizon")
    y0 = kernel.v(span)
    target = m.psi_tilde(y0) / (1.0 - rng.random())
    hi = max(2.0 * y0, 1.0)
    while m.psi_tilde(hi) < target:
        hi *= 2.0
    y = brentq(lambda z: m.psi_tilde(z) - target, y0, hi, xtol=1e-300, rtol=8.9e-16)
    return horizon - kernel.tail_time(y)


def reduced_tree_sample(
    kernel: CsbpKernel,
    horizon: float,
    rng: np.random.Generator,
    start_level: float = 0.0,
    stop_level: float | None = None,
) -> ReducedTreeNode:
    """Reduced tree of lineages surviving to `horizon`, sampled exactly
    down to `stop_level` (branch points accumulate at the horizon, so a
    stop level strictly below it is required)."""
    if stop_level is None:
        raise ValueError("stop_level is required (branch points accumulate at T)")
    if not start_level < stop_level < horizon:
        raise ValueError("need start_level < stop_level < horizon")
    node = ReducedTreeNode(start_level=start_level)
    level = sample_branch_level(kernel, horizon, start_level, rng)
    if level >= stop_level:
        return node
    pmf = reduced_offspring_pmf(kernel.mechanism, kernel.v(horizon - level))
    k = int(pmf.sample(rng, 1)[0])
    node.branch_level = level
    node.offspring = k
    node.children = [
        reduced_tree_sample(kernel, horizon, rng, start_level=level,
                            stop_level=stop_level)
        for _ in range(k)
    ]
    return node


def reduced_marginal_laplace(
    kernel: CsbpKernel, horizon: float, t: float, lam: float
) -> float:
    """E[exp(-lam * Z_t)] for the reduced population at level t:
    1 - u_t((1 - e^{-lam}) v(T - t)) / v(T)."""
    if not 0.0 <= t < horizon:
        raise ValueError("need 0 <= t < horizon")
    v_t = kernel.v(horizon - t)
    v_T = kernel.v(horizon)
    return 1.0 - kernel.u(t, (1.0 - math.exp(-lam)) * v_t) / v_T


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def stable_reduced_offspring_reference(gamma_idx: float, k: int) -> float:
    """gamma (2-gamma)(3-gamma)...(k-1-gamma) / k! for k >= 2 (pure
    stable mechanisms; independent factorial-ratio form of the pmf)."""
    if k < 2:
        return 0.0
    val = gamma_idx / math.factorial(k)
    for j in range(2, k):
        val *= j - gamma_idx
    return val


def reduced_exact_experiment(
    mechanism: BranchingMechanism,
    horizon: float,
    t: float,
    lam: float,
    seed: int,
    n_branch_samples: int = 0,
    n_laplace_samples: int = 2000,
    branch_uniform_tol: float = 0.015,
    pmf_tol: float = 1e-10,
) -> ExperimentReport:
    """Checks on the exact reduced-tree sampler.

    For a pure stable mechanism: (a) the first branch level is uniform
    on [0, T] (KS over n_branch_samples draws) and (b) the offspring pmf
    matches the factorial-ratio form.  For every mechanism: (c) Monte
    Carlo E[e^{-lam Z_t}] from the sampler matches the closed Laplace
    formula within 3 SE.
    """
    kernel = CsbpKernel(mechanism)
    rng = np.random.default_rng(seed)
    stats: dict = {}
    checks: list[bool] = []
    pure_stable = mechanism.stable_tail is not None and mechanism.beta == 0 \
        and not mechanism.levy_atoms
    with timer() as tm:
        if pure_stable and n_branch_samples > 0:
            g = mechanism.stable_tail[1]
            levels = np.array([
                sample_branch_level(kernel, horizon, 0.0, rng)
                for _ in range(n_branch_samples)
            ])
            ks = ks_statistic(levels, lambda x: min(max(x / horizon, 0.0), 1.0))
            stats["branch_level_ks"] = ks
            checks.append(ks <= branch_uniform_tol)

            pmf = reduced_offspring_pmf(mechanism, kernel.v(horizon / 2.0))
            worst = max(
                abs(pmf.pmf_at(k) - stable_reduced_offspring_reference(g, k))
                for k in range(2, 11)
            )
            stats["offspring_pmf_gap"] = worst
            checks.append(worst <= pmf_tol)

        stop = min(t + 1e-9, 0.5 * (t + horizon)) if t > 0 else 0.5 * horizon
        zs = np.array([
            reduced_tree_sample(kernel, horizon, rng, stop_level=stop).count_at(t)
            for _ in range(n_laplace_samples)
        ])
        values = np.exp(-lam * zs)
        mc, se = mc_mean_se(values)
        target = reduced_marginal_laplace(kernel, horizon, t, lam)
        gap = abs(mc - target)
        stats.update({"laplace_mc": mc, "laplace_se": se,
                      "laplace_target": target, "laplace_gap": gap})
        checks.append(gap <= 3.0 * se)
    return ExperimentReport(
        name="reduced-exact",
        seed=seed,
        params={"horizon": horizon, "t": t, "lam": lam,
                "n_branch_samples": n_branch_samples,
                "n_laplace_samples": n_laplace_samples},
        statistics=stats,
        tolerance={"branch_uniform_ks": branch_uniform_tol, "pmf": pmf_tol,
                   "laplace": "3 SE"},
        passed=bool(all(checks)),
        reference="uniform branch level, factorial-ratio pmf, closed Laplace form",
        wall_time_s=tm.elapsed,
    )


def discrete_reduced_crosscheck(
    d: OffspringDistribution,
    p: int,
    horizon: float,
    t: float,
    lam: float,
    n_samples: int,
    seed: int,
    bias_budget: float = 0.03,
) -> ExperimentReport:
    """Reduced counts of height-conditioned trees against the continuum
    Laplace formula: sample trees conditioned to reach [gamma_p T],
    count generation-[gamma_p t] ancestors of the survivors via the tree
    codings, and compare E[e^{-lam Z}]."""
    gamma_p = time_scale(d, p)
    n = int(gamma_p * horizon)
    k0 = int(gamma_p * t)
    kernel = CsbpKernel(limit_mechanism(d, p))
    rng = np.random.default_rng(seed)
    with timer() as tm:
        zs = np.empty(n_samples, dtype=np.int64)
        for i in range(n_samples):
            tree = sample_conditioned_height(d, n, rng, stop_height=n)
            zs[i] = codings.reduced_counts(tree, n)[k0]
        values = np.exp(-lam * zs)
        mc, se = mc_mean_se(values)
        target = reduced_marginal_laplace(kernel, horizon, t, lam)
        gap = abs(mc - target)
        tol = 3.0 * se + bias_budget
    return ExperimentReport(
        name="reduced-discrete",
        seed=seed,
        params={"offspring": d.kind, "p": p, "horizon": horizon, "t": t,
                "lam": lam, "n_samples": n_samples},
        statistics={"mc": mc, "se": se, "target": target, "gap": gap,
                    "mean_count": float(zs.mean())},
        tolerance={"gap": tol, "bias_budget": bias_budget},
        passed=bool(gap <= tol),
        reference="reduced-population Laplace transform of the limit tree",
        wall_time_s=tm.elapsed,
    )


def poisson_tree_experiment(
    seed: int,
    lam_grid=(0.5, 1.0, 4.0),
    n_sample_trees: int = 2000,
    sample_budget: int = 10**5,
    sum_tol: float = 1e-10,
) -> ExperimentReport:
    """Offspring-law checks for Poisson-marked trees.

    The quadratic mechanism must give exactly the fair two-or-none law;
    pmfs of all three families must sum to one (analytic tails included)
    at every rate in lam_grid; the sampler is exercised on the quadratic
    family with a node budget, recording how often the budget bites
    (the quadratic marked tree is critical, so a heavy size tail is
    expected and a small hit fraction is tolerated rather than zero).
    """
    quad = BranchingMechanism.quadratic(beta=1.0)
    atom = BranchingMechanism(alpha=0.2, beta=0.1, levy_atoms=((1.0, 1.0), (2.5, 0.3)))
    stab = BranchingMechanism.stable(1.5)
    rng = np.random.default_rng(seed)
    with timer() as tm:
        pq = poisson_offspring_pmf(quad, 1.0)
        binary_gap = max(
            abs(pq.pmf_at(0) - 0.5), abs(pq.pmf_at(1)), abs(pq.pmf_at(2) - 0.5),
            pq.tail_mass, float(np.abs(pq.probs[3:]).max(initial=0.0)),
        )
        worst_sum = 0.0
        for mech in (quad, atom, stab):
            for lam in lam_grid:
                worst_sum = max(
                    worst_sum, abs(poisson_offspring_pmf(mech, lam).total() - 1.0)
                )
        budget_hits = 0
        sizes = []
        for _ in range(n_sample_trees):
            try:
                tree = poisson_tree_sample(quad, 1.0, rng, max_nodes=sample_budget)
                sizes.append(tree.skeleton.size)
            except NodeBudgetError:
                budget_hits += 1
        hit_fraction = budget_hits / n_sample_trees
    passed = binary_gap <= 1e-12 and worst_sum <= sum_tol and hit_fraction <= 0.02
    return ExperimentReport(
        name="poisson-tree",
        seed=seed,
        params={"lam_grid": list(lam_grid), "n_sample_trees": n_sample_trees,
                "sample_budget": sample_budget},
        statistics={"binary_gap": binary_gap, "worst_normalization_gap": worst_sum,
                    "budget_hit_fraction": hit_fraction,
                    "median_size": float(np.median(sizes)) if sizes else 0.0},
        tolerance={"binary": 1e-12, "normalization": sum_tol, "budget_hits": 0.02},
        passed=bool(passed),
        reference="two-or-none law for the quadratic mechanism; unit pmf mass",
        wall_time_s=tm.elapsed,
    )


def stable_skeleton_experiment(
    p_max: int = 6,
    gammas=(1.2, 1.5, 1.8, 2.0),
    tol: float = 1e-10,
) -> ExperimentReport:
    """Skeleton pmf normalization over all shapes with p <= p_max leaves,
    plus the spot values at p = 3, gamma = 1.5."""
    with timer() as tm:
        worst = 0.0
        for p in range(1, p_max + 1):
            shapes = enumerate_Tstar(p)
            for g in gammas:
                total = math.fsum(stable_skeleton_pmf(g, s) for s in shapes)
                worst = max(worst, abs(total - 1.0))
        spot = sorted(stable_skeleton_pmf(1.5, s) for s in enumerate_Tstar(3))
        spot_gap = max(
            abs(spot[0] - 0.25), abs(spot[1] - 0.375), abs(spot[2] - 0.375)
        )
    passed = worst <= tol and spot_gap <= tol
    return ExperimentReport(
        name="stable-skeleton-pmf",
        seed=None,
        params={"p_max": p_max, "gammas": list(gammas)},
        statistics={"worst_normalization_gap": worst, "spot_gap": spot_gap},
        tolerance=tol,
        passed=bool(passed),
        reference="skeleton probabilities sum to one over all shapes",
        wall_time_s=tm.elapsed,
    )


def quadratic_marginal_crosscheck(
    n_vertices: int,
    n_reps: int,
    seed: int,
    significance: float = 1e-3,
    exact_subsample: int = 200,
) -> ExperimentReport:
    """Marginal skeleton of size-conditioned geometric trees at 3 marks.

    In the quadratic limit the two binary three-leaf shapes are equally
    likely; sampled shapes are classified from the two gap minima of the
    height sequence (cross-checked against the full marked-tree
    extraction on a subsample) and tested by chi-square.
    """
    d = geometric_half()
    rng = np.random.default_rng(seed)
    counts = {"left": 0, "right": 0, "ternary": 0}
    mismatches = 0
    with timer() as tm:
        for rep in range(n_reps):
            tree = sample_conditioned_size(d, n_vertices, rng)
            walk = codings.lukasiewicz_of(tree)
            t1, t2, t3 = np.sort(rng.choice(n_vertices, size=3, replace=False))
            m12 = codings.min_height_between(walk, int(t1), int(t2))
            m23 = codings.min_height_between(walk, int(t2), int(t3))
            if m12 < m23:
                shape = "right"  # first two marks split deepest: leaf + cherry
            elif m23 < m12:
                shape = "left"
            else:
                shape = "ternary"
            counts[shape] += 1
            if rep < exact_subsample:
                heights = codings.height_from_walk(walk)
                marked = extract_marginal_tree(heights, [int(t1), int(t2), int(t3)])
                expected_counts = {
                    "right": (2, 0, 2, 0, 0),
                    "left": (2, 2, 0, 0, 0),
                    "ternary": (3, 0, 0, 0),
                }[shape]
                if tuple(marked.skeleton.child_counts) != expected_counts:
                    mismatches += 1
        n_binary = counts["left"] + counts["right"]
        stat, dof, p_value = chi_square(
            [counts["left"], counts["right"]], [n_binary / 2.0, n_binary / 2.0]
        )
    passed = p_value >= significance and mismatches == 0
    return ExperimentReport(
        name="stable-marginals",
        seed=seed,
        params={"n_vertices": n_vertices, "n_reps": n_reps},
        statistics={"counts": counts, "chi2": stat, "dof": dof, "p_value": p_value,
                    "extraction_mismatches": mismatches},
        tolerance={"significance": significance},
        passed=bool(passed),
        reference="equal weights of the two binary three-leaf shapes",
        wall_time_s=tm.elapsed,
    )
