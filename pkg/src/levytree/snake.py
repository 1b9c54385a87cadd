"""Spatial branching approximation of superprocesses in one dimension.

A branching random walk over Galton-Watson genealogies carries one
position per vertex (one spatial step per generation, step variance
1/gamma_p); level clouds weighted 1/p approximate the measure-valued
process with the family's limit mechanism, and first boundary crossings
give the discrete exit measure.

Deterministic references:

* solve_super2: the reaction-diffusion evolution
  du/dt = (1/2) u_xx - psi(u), u_0 = f, integrated by Strang splitting
  (Crank-Nicolson diffusion, midpoint reaction) with automatic step
  halving; with constant f this reduces pointwise to the CSBP kernel.
* solve_exit_ode / solve_exit_collocation: the two-point boundary value
  problem (1/2) u'' = psi(u) on (-R, R) with Dirichlet data, solved by
  shooting (bisection on the left slope) and independently by
  collocation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_bvp, solve_ivp
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .csbp import CsbpKernel
from .mechanism import BranchingMechanism
from .offspring import (
    NodeBudgetError,
    OffspringDistribution,
    limit_mechanism,
    time_scale,
)
from .report import ExperimentReport, timer
from .stats import mc_mean_se


# ---------------------------------------------------------------------------
# spatial kernels and measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpatialKernel:
    """One-generation displacement sampler at time step h."""

    name: str
    step: callable  # step(rng, positions, h) -> displacements

    def __call__(self, rng, positions, h):
        return self.step(rng, positions, h)


def gaussian_kernel() -> SpatialKernel:
    return SpatialKernel(
        name="gaussian",
        step=lambda rng, pos, h: rng.normal(0.0, math.sqrt(h), size=pos.shape),
    )


def lattice_kernel() -> SpatialKernel:
    """Symmetric +-sqrt(h) steps; keeps walkers on a lattice, so boundary
    hits land exactly on the boundary when R is a multiple of sqrt(h)."""
    return SpatialKernel(
        name="lattice",
        step=lambda rng, pos, h: math.sqrt(h)
        * (2.0 * rng.integers(0, 2, size=pos.shape) - 1.0),
    )


@dataclass(frozen=True)
class MeasureSample:
    """Weighted point cloud approximating the measure at one level."""

    positions: np.ndarray
    weights: np.ndarray
    level: float

    def __post_init__(self):
        if self.positions.shape != self.weights.shape:
            raise ValueError("positions and weights must align")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")

    def total_mass(self) -> float:
        return float(self.weights.sum())

    def integrate(self, f) -> float:
        if self.positions.size == 0:
            return 0.0
        return float(np.sum(self.weights * f(self.positions)))


@dataclass(frozen=True)
class ExitMeasure:
    """First boundary-crossing cloud for the interval (-radius, radius)."""

    positions: np.ndarray
    weights: np.ndarray
    radius: float
    n_crossed: int

    def total_mass(self) -> float:
        return float(self.weights.sum())

    def integrate(self, g) -> float:
        if self.positions.size == 0:
            return 0.0
        return float(np.sum(self.weights * g(self.positions)))


# ---------------------------------------------------------------------------
# branching walks
# ---------------------------------------------------------------------------


def branching_walk(
    d: OffspringDistribution,
    p: int,
    kernel: SpatialKernel,
    start: float,
    horizon: float,
    rng: np.random.Generator,
    record_levels=None,
    max_nodes: int = 10**8,
) -> list[MeasureSample]:
    """One replicate: p independent trees, one spatial step per
    generation with h = 1/gamma_p, weights 1/p.

    Returns MeasureSample clouds at the requested rescaled levels
    (default: only the horizon).  The total mass at level a is exactly
    (generation [gamma_p a] population) / p.
    """
    gamma_p = time_scale(d, p)
    h = 1.0 / gamma_p
    if record_levels is None:
        record_levels = [horizon]
    targets = sorted({int(gamma_p * a) for a in record_levels})
    if any(a < 0 or a > horizon for a in record_levels):
        raise ValueError("record levels must lie in [0, horizon]")
    last_gen = int(gamma_p * horizon)
    out = []
    pos = np.full(p, float(start))
    grown = p
    gen = 0
    while True:
        if gen in targets:
            out.append(
                MeasureSample(
                    positions=pos.copy(),
                    weights=np.full(pos.size, 1.0 / p),
                    level=gen / gamma_p,
                )
            )
        if gen >= last_gen or pos.size == 0:
            break
        counts = d.sample_counts(rng, pos.size)
        pos = np.repeat(pos, counts)
        if pos.size:
            pos = pos + kernel(rng, pos, h)
        grown += pos.size
        if grown > max_nodes:
            raise NodeBudgetError(max_nodes, grown)
        gen += 1
    # levels beyond extinction are empty clouds
    for a in targets:
        if a > gen:
            out.append(MeasureSample(positions=np.zeros(0), weights=np.zeros(0),
                                     level=a / gamma_p))
    out.sort(key=lambda s: s.level)
    return out


def laplace_functional(replicates: list[MeasureSample], f) -> tuple[float, float]:
    """Monte Carlo mean and SE of exp(-<Z, f>) over replicate clouds."""
    values = [math.exp(-cloud.integrate(f)) for cloud in replicates]
    return mc_mean_se(values)


def _mc_level_functional(
    d, p, kernel, f, t, n_reps, rng, max_nodes=5 * 10**8
) -> np.ndarray:
    """exp(-<Z_t, f>) for n_reps replicates, simulated jointly.

    All replicates advance generation by generation with replicate labels
    carried along, so each generation costs one offspring draw and one
    kernel draw regardless of the replicate count.
    """
    gamma_p = time_scale(d, p)
    h = 1.0 / gamma_p
    last_gen = int(gamma_p * t)
    pos = np.zeros(n_reps * p)
    rep = np.repeat(np.arange(n_reps), p)
    grown = pos.size
    for _ in range(last_gen):
        if pos.size == 0:
            break
        counts = d.sample_counts(rng, pos.size)
        pos = np.repeat(pos, counts)
        rep = np.repeat(rep, counts)
        if pos.size:
            pos = pos + kernel(rng, pos, h)
        grown += pos.size
        if grown > max_nodes:
            raise NodeBudgetError(max_nodes, grown)
    if pos.size:
        totals = np.bincount(rep, weights=f(pos).astype(float), minlength=n_reps)
    else:
        totals = np.zeros(n_reps)
    return np.exp(-totals / p)


def exit_measure(
    d: OffspringDistribution,
    p: int,
    kernel: SpatialKernel,
    radius: float,
    start: float,
    rng: np.random.Generator,
    max_nodes: int = 10**8,
) -> ExitMeasure:
    """Discrete exit measure of one replicate: particles freeze at their
    first position outside (-radius, radius), with weight 1/p each."""
    if not -radius < start < radius:
        raise ValueError("start must lie inside the interval")
    gamma_p = time_scale(d, p)
    h = 1.0 / gamma_p
    pos = np.full(p, float(start))
    out_pos = []
    grown = p
    while pos.size:
        counts = d.sample_counts(rng, pos.size)
        pos = np.repeat(pos, counts)
        if pos.size == 0:
            break
        pos = pos + kernel(rng, pos, h)
        crossed = np.abs(pos) >= radius
        if crossed.any():
            out_pos.append(pos[crossed])
            pos = pos[~crossed]
        grown += pos.size
        if grown > max_nodes:
            raise NodeBudgetError(max_nodes, grown)
    positions = np.concatenate(out_pos) if out_pos else np.zeros(0)
    return ExitMeasure(
        positions=positions,
        weights=np.full(positions.size, 1.0 / p),
        radius=radius,
        n_crossed=positions.size,
    )


def _mc_exit_functional(
    d, p, kernel, radius, start, g, n_reps, rng, max_nodes=5 * 10**8
) -> np.ndarray:
    """exp(-<Z_exit, g>) over replicates, simulated jointly."""
    gamma_p = time_scale(d, p)
    h = 1.0 / gamma_p
    pos = np.full(n_reps * p, float(start))
    rep = np.repeat(np.arange(n_reps), p)
    totals = np.zeros(n_reps)
    grown = pos.size
    while pos.size:
        counts = d.sample_counts(rng, pos.size)
        pos = np.repeat(pos, counts)
        rep = np.repeat(rep, counts)
        if pos.size == 0:
            break
        pos = pos + kernel(rng, pos, h)
        crossed = np.abs(pos) >= radius
        if crossed.any():
            totals += np.bincount(rep[crossed], weights=g(pos[crossed]),
                                  minlength=n_reps)
            pos, rep = pos[~crossed], rep[~crossed]
        grown += pos.size
        if grown > max_nodes:
            raise NodeBudgetError(max_nodes, grown)
    return np.exp(-totals / p)


# ---------------------------------------------------------------------------
# reaction-diffusion reference solver
# ---------------------------------------------------------------------------


def _reaction_halfstep(m: BranchingMechanism, u: np.ndarray, tau: float) -> np.ndarray:
    """Midpoint step of du/dt = -psi(u); clipped at 0 (psi(0) = 0)."""
    mid = np.clip(u - 0.5 * tau * m.psi(np.clip(u, 0.0, None)), 0.0, None)
    return np.clip(u - tau * m.psi(mid), 0.0, None)


def _diffusion_matrices(nx: int, dx: float, dt: float):
    """Banded Crank-Nicolson factors for du/dt = (1/2) u_xx, Neumann ends."""
    r = 0.25 * dt / dx**2  # (1/2 diffusivity) * (dt/2) / dx^2
    lower = np.full(nx - 1, -r)
    upper = np.full(nx - 1, -r)
    diag = np.full(nx, 1.0 + 2.0 * r)
    upper[0] = -2.0 * r  # reflecting ghost nodes
    lower[-1] = -2.0 * r
    ab = np.zeros((3, nx))
    ab[0, 1:] = upper
    ab[1, :] = diag
    ab[2, :-1] = lower
    return ab, r


def _super2_run(m, f_grid, t, dx, n_steps) -> np.ndarray:
    nx = f_grid.size
    dt = t / n_steps
    ab, r = _diffusion_matrices(nx, dx, dt)
    u = f_grid.astype(float).copy()
    for _ in range(n_steps):
        u = _reaction_halfstep(m, u, 0.5 * dt)
        rhs = u.copy()
        rhs[1:-1] += r * (u[:-2] - 2.0 * u[1:-1] + u[2:])
        rhs[0] += r * (2.0 * u[1] - 2.0 * u[0])
        rhs[-1] += r * (2.0 * u[-2] - 2.0 * u[-1])
        u = solve_banded((1, 1), ab, rhs)
        u = _reaction_halfstep(m, u, 0.5 * dt)
    return u


def solve_super2(
    m: BranchingMechanism,
    f,
    t: float,
    x_min: float,
    x_max: float,
    nx: int = 801,
    rtol: float = 1e-6,
    max_halvings: int = 14,
):
    """Solve du/dt = (1/2) u_xx - psi(u), u_0 = f on [x_min, x_max] with
    reflecting ends; time step is halved until two successive solutions
    agree within rtol in sup norm.

    Returns (x grid, u(t, .) on the grid, final defect between the last
    two refinement levels).
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    x = np.linspace(x_min, x_max, nx)
    f_grid = np.asarray([f(v) for v in x], dtype=float)
    if np.any(f_grid < 0):
        raise ValueError("initial data must be nonnegative")
    if t == 0:
        return x, f_grid, 0.0
    dx = x[1] - x[0]
    n_steps = max(8, int(4 * t / dx))  # start near the advective scale
    prev = _super2_run(m, f_grid, t, dx, n_steps)
    for _ in range(max_halvings):
        n_steps *= 2
        cur = _super2_run(m, f_grid, t, dx, n_steps)
        defect = float(np.max(np.abs(cur - prev)))
        if defect < rtol:
            return x, cur, defect
        prev = cur
    raise RuntimeError("time-step control did not reach the requested tolerance")


# ---------------------------------------------------------------------------
# exit problem: (1/2) u'' = psi(u) with Dirichlet data
# ---------------------------------------------------------------------------


def _exit_rhs(m: BranchingMechanism):
    def rhs(x, y):
        return [y[1], 2.0 * m.psi(max(float(y[0]), 0.0))]

    return rhs


def _shoot_endpoint(m, radius, g_left, slope, cap) -> tuple[float, object]:
    """Endpoint value u(R) of the slope-`slope` trajectory.

    Solutions with too large a slope blow up before reaching R; the
    integration stops at u = cap and the endpoint is reported as cap
    (a finite overshoot surrogate keeps the bisection monotone).
    """
    rhs = _exit_rhs(m)

    def blowup(x, y):
        return y[0] - cap

    blowup.terminal = True
    blowup.direction = 1.0
    sol = solve_ivp(
        rhs,
        (-radius, radius),
        [g_left, slope],
        method="RK45",
        rtol=1e-11,
        atol=1e-12,
        dense_output=True,
        events=blowup,
    )
    if not sol.success:
        raise RuntimeError(f"IVP integration failed: {sol.message}")
    if sol.t[-1] < radius:
        return cap, sol
    return float(sol.y[0, -1]), sol


def solve_exit_ode(
    m: BranchingMechanism,
    radius: float,
    g_left: float,
    g_right: float,
    max_expand: int = 200,
):
    """Shooting solution of (1/2) u'' = psi(u), u(-R) = g_left,
    u(R) = g_right; bisection on the initial slope (the endpoint value
    is increasing in the slope since psi is nondecreasing).

    Returns a callable u(x) built on the dense IVP output.
    """
    if g_left < 0 or g_right < 0:
        raise ValueError("boundary data must be nonnegative")
    cap = 10.0 * (g_left + g_right) + 100.0

    def endpoint(s):
        return _shoot_endpoint(m, radius, g_left, s, cap)[0]

    s0 = (g_right - g_left) / (2.0 * radius)
    if endpoint(s0) == g_right:
        slope = s0
    else:
        lo = hi = s0
        step = max(1.0, abs(g_left) + abs(g_right))
        for _ in range(max_expand):
            if endpoint(lo) < g_right:
                break
            lo -= step
            step *= 2.0
        else:
            raise RuntimeError("could not bracket the shooting slope from below")
        step = max(1.0, abs(g_left) + abs(g_right))
        for _ in range(max_expand):
            if endpoint(hi) > g_right:
                break
            hi += step
            step *= 2.0
        else:
            raise RuntimeError("could not bracket the shooting slope from above")
        slope = brentq(
            lambda s: endpoint(s) - g_right, lo, hi, xtol=1e-15, rtol=8.9e-16
        )
    _, sol = _shoot_endpoint(m, radius, g_left, slope, cap)

    def u(x):
        return np.clip(sol.sol(np.asarray(x))[0], 0.0, None)

    return u


def solve_exit_collocation(
    m: BranchingMechanism,
    radius: float,
    g_left: float,
    g_right: float,
    n_mesh: int = 101,
):
    """Independent collocation solution of the same boundary problem."""

    def rhs(x, y):
        return np.vstack((y[1], 2.0 * m.psi(np.clip(y[0], 0.0, None))))

    def bc(ya, yb):
        return np.array([ya[0] - g_left, yb[0] - g_right])

    x = np.linspace(-radius, radius, n_mesh)
    guess = np.zeros((2, n_mesh))
    guess[0] = g_left + (g_right - g_left) * (x + radius) / (2 * radius)
    guess[1] = (g_right - g_left) / (2 * radius)
    sol = solve_bvp(rhs, bc, x, guess, tol=1e-10, max_nodes=200000)
    if not sol.success:
        raise RuntimeError(f"collocation failed: {sol.message}")

    def u(xq):
        return np.clip(sol.sol(np.asarray(xq))[0], 0.0, None)

    return u


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def snake_laplace_experiment(
    p: int,
    t: float,
    lam: float,
    n_reps: int,
    seed: int,
    indicator_halfwidth: float = 1.0,
    bias_budget: float = 0.02,
    het_reps: int | None = None,
    het_t: float = 0.5,
) -> ExperimentReport:
    """Laplace functionals of the level cloud for the geometric family.

    Homogeneous part: constant f = lam at level t collapses to the
    total-mass transform, compared with exp(-u_t(lam)) within 3 SE (the
    spatial pipeline's mass identity is exact, so only Monte Carlo noise
    and the p-discretization enter).  Heterogeneous part: f = lam on
    [-w, w] at level het_t, compared against the reaction-diffusion
    solution at the start point within 3 SE + bias budget.
    """
    from .offspring import geometric_half
    from .experiments import population_at

    d = geometric_half()
    kern = gaussian_kernel()
    mech = limit_mechanism(d, p)
    kernel_csbp = CsbpKernel(mech)
    gamma_p = time_scale(d, p)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    het_reps = het_reps or n_reps
    with timer() as tm:
        # homogeneous collapse: positions are irrelevant for constant f
        y = population_at(d, p, int(gamma_p * t), n_reps, seed)
        hom_vals = np.exp(-lam * y / p)
        hom_mc, hom_se = mc_mean_se(hom_vals)
        hom_target = math.exp(-kernel_csbp.u(t, lam))
        hom_gap = abs(hom_mc - hom_target)
        hom_tol = 3.0 * hom_se

        w = indicator_halfwidth
        f = lambda x: lam * (np.abs(x) <= w)
        het_vals = _mc_level_functional(d, p, kern, f, het_t, het_reps, rng,
                                        max_nodes=2 * 10**9)
        het_mc, het_se = mc_mean_se(het_vals)
        span = w + 1.0 + 6.0 * math.sqrt(max(het_t, 1.0 / gamma_p))
        xg, ug, defect = solve_super2(mech, f, het_t, -span, span, nx=1201)
        het_target = math.exp(-float(np.interp(0.0, xg, ug)))
        het_gap = abs(het_mc - het_target)
        het_tol = 3.0 * het_se + bias_budget
    passed = hom_gap <= hom_tol and het_gap <= het_tol
    return ExperimentReport(
        name="snake-laplace",
        seed=seed,
        params={"p": p, "t": t, "lam": lam, "n_reps": n_reps, "het_reps": het_reps,
                "het_t": het_t, "indicator_halfwidth": indicator_halfwidth},
        statistics={
            "homogeneous": {"mc": hom_mc, "se": hom_se, "target": hom_target,
                            "gap": hom_gap},
            "heterogeneous": {"mc": het_mc, "se": het_se, "target": het_target,
                              "gap": het_gap, "solver_defect": defect},
        },
        tolerance={"homogeneous": hom_tol, "heterogeneous": het_tol},
        passed=bool(passed),
        reference="CSBP kernel (constant data) and reaction-diffusion solution",
        wall_time_s=tm.elapsed,
    )


def snake_exit_experiment(
    p: int,
    radius: float,
    boundary_value: float,
    start: float,
    n_reps: int,
    seed: int,
    bias_budget: float = 0.03,
    solver_tol: float = 1e-6,
) -> ExperimentReport:
    """Exit-measure functional against the two-point boundary problem.

    Uses the lattice kernel so crossings land exactly on the boundary
    when radius is a multiple of sqrt(1/gamma_p).
    """
    from .offspring import geometric_half

    d = geometric_half()
    kern = lattice_kernel()
    mech = limit_mechanism(d, p)
    rng = np.random.default_rng(seed)
    with timer() as tm:
        g = lambda x: np.full(np.shape(x), boundary_value)
        vals = _mc_exit_functional(d, p, kern, radius, start, g, n_reps, rng)
        mc, se = mc_mean_se(vals)
        u_shoot = solve_exit_ode(mech, radius, boundary_value, boundary_value)
        u_colloc = solve_exit_collocation(mech, radius, boundary_value,
                                          boundary_value)
        grid = np.linspace(-radius, radius, 257)
        solver_gap = float(np.max(np.abs(u_shoot(grid) - u_colloc(grid))))
        target = math.exp(-float(u_shoot(start)))
        gap = abs(mc - target)
        tol = 3.0 * se + bias_budget
        symmetry = float(np.max(np.abs(u_shoot(grid) - u_shoot(-grid))))
    passed = gap <= tol and solver_gap <= solver_tol
    return ExperimentReport(
        name="snake-exit",
        seed=seed,
        params={"p": p, "radius": radius, "boundary_value": boundary_value,
                "start": start, "n_reps": n_reps},
        statistics={"mc": mc, "se": se, "target": target, "gap": gap,
                    "solver_gap": solver_gap, "symmetry_defect": symmetry},
        tolerance={"gap": tol, "solver": solver_tol},
        passed=bool(passed),
        reference="shooting and collocation solutions of the exit problem",
        wall_time_s=tm.elapsed,
    )
