"""Command-line harness.

Subcommands:

* csbp eval          evaluate the CSBP kernel and its defects as JSON
* codings roundtrip  exact bijection checks on random trees
* simulate gw        sample trees and print their child-count text
* experiment NAME    run a registered experiment, write a JSON report,
                     exit 0 iff every pass flag is true

Experiments read a RunConfig (JSON file via --config) or inline flags;
inline flags override file values.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import codings, experiments, marginals, snake
from .config import ConfigError, RunConfig
from .csbp import CsbpKernel, ExtinctionError
from .mechanism import BranchingMechanism
from .offspring import geometric_half, from_spec, sample_tree
from .report import ExperimentReport, timer


# ---------------------------------------------------------------------------
# experiment registry
# ---------------------------------------------------------------------------


def _offspring(config: RunConfig):
    return config.build_offspring() if config.offspring else geometric_half()


def _run_feller(config: RunConfig) -> ExperimentReport:
    p = config.params.get("p", 200)
    return experiments.feller_height_marginal(
        p=p,
        t=config.params.get("t", 1.0),
        n_samples=config.params.get("samples", 10_000),
        seed=config.seed,
        tolerance=config.tolerances.get("ks", 0.05),
        workers=config.workers,
    )


def _run_ray_knight(config: RunConfig) -> ExperimentReport:
    d = _offspring(config)
    laplace = experiments.ray_knight_laplace(
        d,
        p=config.params.get("p", 500),
        a=config.params.get("a", 1.0),
        lam=config.params.get("lam", 1.0),
        n_reps=config.params.get("reps", 10_000),
        seed=config.seed,
        bias_budget=config.tolerances.get("bias", 0.02),
        workers=config.workers,
    )
    identity = experiments.ray_knight_identity_experiment(
        p=config.params.get("identity_p", 50),
        n_forests=config.params.get("identity_forests", 100),
        seed=config.seed + 1,
    )
    return ExperimentReport(
        name="ray-knight",
        seed=config.seed,
        params={"laplace": laplace.params, "identity": identity.params},
        statistics={"laplace": laplace.statistics, "identity": identity.statistics},
        tolerance={"laplace": laplace.tolerance, "identity": identity.tolerance},
        passed=laplace.passed and identity.passed,
        reference="; ".join([laplace.reference, identity.reference]),
        wall_time_s=laplace.wall_time_s + identity.wall_time_s,
    )


def _run_extinction(config: RunConfig) -> ExperimentReport:
    return experiments.extinction_law(
        _offspring(config),
        p=config.params.get("p", 500),
        a=config.params.get("a", 1.0),
        tolerance=config.tolerances.get("gap", 5e-3),
    )


def _run_holder(config: RunConfig) -> ExperimentReport:
    return experiments.holder_exponent_estimate(
        _offspring(config),
        p=config.params.get("p", 256),
        seed=config.seed,
        n_paths=config.params.get("paths", 4),
        window=config.tolerances.get("window", 0.15),
    )


def _run_contour_gap(config: RunConfig) -> ExperimentReport:
    return experiments.contour_height_agreement(
        p_values=config.params.get("p_values", [50, 200, 800]),
        t=config.params.get("t", 0.5),
        n_samples=config.params.get("samples", 200),
        seed=config.seed,
    )


def _run_reduced_discrete(config: RunConfig) -> ExperimentReport:
    return marginals.discrete_reduced_crosscheck(
        _offspring(config),
        p=config.params.get("p", 200),
        horizon=config.params.get("T", 1.0),
        t=config.params.get("t", 0.5),
        lam=config.params.get("lam", 1.0),
        n_samples=config.params.get("samples", 1000),
        seed=config.seed,
        bias_budget=config.tolerances.get("bias", 0.03),
    )


def _run_stable_marginals(config: RunConfig) -> ExperimentReport:
    skeleton = marginals.stable_skeleton_experiment(
        p_max=config.params.get("p_max", 6),
        tol=config.tolerances.get("normalization", 1e-10),
    )
    crosscheck = marginals.quadratic_marginal_crosscheck(
        n_vertices=config.params.get("n_vertices", 2000),
        n_reps=config.params.get("reps", 20_000),
        seed=config.seed,
        significance=config.tolerances.get("significance", 1e-3),
    )
    return ExperimentReport(
        name="stable-marginals",
        seed=config.seed,
        params={"skeleton": skeleton.params, "crosscheck": crosscheck.params},
        statistics={"skeleton": skeleton.statistics,
                    "crosscheck": crosscheck.statistics},
        tolerance={"skeleton": skeleton.tolerance, "crosscheck": crosscheck.tolerance},
        passed=skeleton.passed and crosscheck.passed,
        reference="; ".join([skeleton.reference, crosscheck.reference]),
        wall_time_s=skeleton.wall_time_s + crosscheck.wall_time_s,
    )


def _run_poisson_tree(config: RunConfig) -> ExperimentReport:
    return marginals.poisson_tree_experiment(
        seed=config.seed,
        n_sample_trees=config.params.get("samples", 2000),
    )


def _run_reduced_exact(config: RunConfig) -> ExperimentReport:
    mech = (config.build_mechanism() if config.mechanism
            else BranchingMechanism.stable(1.5))
    return marginals.reduced_exact_experiment(
        mech,
        horizon=config.params.get("T", 1.0),
        t=config.params.get("t", 0.5),
        lam=config.params.get("lam", 1.0),
        seed=config.seed,
        n_branch_samples=config.params.get("branch_samples", 20_000),
        n_laplace_samples=config.params.get("samples", 2000),
    )


def _run_snake_laplace(config: RunConfig) -> ExperimentReport:
    return snake.snake_laplace_experiment(
        p=config.params.get("p", 2000),
        t=config.params.get("t", 1.0),
        lam=config.params.get("lam", 1.0),
        n_reps=config.params.get("reps", 200),
        seed=config.seed,
        het_reps=config.params.get("het_reps"),
    )


def _run_snake_exit(config: RunConfig) -> ExperimentReport:
    return snake.snake_exit_experiment(
        p=config.params.get("p", 400),
        radius=config.params.get("R", 1.0),
        boundary_value=config.params.get("g", 4.0),
        start=config.params.get("x", 0.0),
        n_reps=config.params.get("reps", 300),
        seed=config.seed,
    )


EXPERIMENTS = {
    "feller-height": _run_feller,
    "ray-knight": _run_ray_knight,
    "extinction": _run_extinction,
    "holder": _run_holder,
    "contour-gap": _run_contour_gap,
    "reduced-discrete": _run_reduced_discrete,
    "stable-marginals": _run_stable_marginals,
    "poisson-tree": _run_poisson_tree,
    "reduced-exact": _run_reduced_exact,
    "snake-laplace": _run_snake_laplace,
    "snake-exit": _run_snake_exit,
}


def run(config: RunConfig) -> ExperimentReport:
    """Dispatch a config to its experiment; unknown names fail fast."""
    try:
        runner = EXPERIMENTS[config.experiment]
    except KeyError:
        raise ConfigError(
            f"unknown experiment {config.experiment!r}; "
            f"choose from {sorted(EXPERIMENTS)}"
        ) from None
    return runner(config)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_csbp_eval(args) -> int:
    mech = BranchingMechanism.from_config(json.loads(args.mechanism))
    kernel = CsbpKernel(mech)
    out = {
        "t": args.t,
        "lam": args.lam,
        "u": kernel.u(args.t, args.lam),
        "semigroup_defect": kernel.semigroup_check(args.t / 2, args.t / 2, args.lam),
        "integral_residual": kernel.integral_residual(args.t, args.lam),
    }
    if args.lam > 0 and args.t > 0:
        out["deriv_defect"] = kernel.u_lambda_derivative_check(args.t, args.lam)
    try:
        out["v"] = kernel.v(args.t) if args.t > 0 else None
    except ExtinctionError:
        out["v"] = "infinite"
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def _cmd_codings_roundtrip(args) -> int:
    d = geometric_half()
    rng = np.random.default_rng(args.seed)
    bad = 0
    done = 0
    while done < args.trees:
        try:
            tree = sample_tree(d, rng, max_nodes=args.max_nodes)
        except Exception:
            continue
        walk = codings.lukasiewicz_of(tree)
        h = codings.height_of(tree)
        ok = (
            codings.walk_to_forest(walk) == [tree]
            and codings.tree_from_height(h) == tree
            and np.array_equal(codings.height_from_walk(walk), h)
            and np.array_equal(
                codings.contour_of(tree), codings.contour_from_height(h)
            )
            and np.array_equal(
                codings.contour_of(codings.mirror(tree)),
                codings.contour_of(tree)[::-1],
            )
        )
        bad += 0 if ok else 1
        done += 1
    print(f"checked {done} trees, {bad} failures")
    return 0 if bad == 0 else 1


def _cmd_simulate_gw(args) -> int:
    d = from_spec(args.offspring)
    rng = np.random.default_rng(args.seed)
    lines = []
    for _ in range(args.count):
        lines.append(sample_tree(d, rng, max_nodes=args.max_nodes).to_text())
    text = "\n".join(lines)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _cmd_experiment(args) -> int:
    if args.config:
        config = RunConfig.load(args.config)
        if config.experiment != args.name:
            raise ConfigError(
                f"config names experiment {config.experiment!r}, got {args.name!r}"
            )
    else:
        config = RunConfig(experiment=args.name, seed=args.seed or 0)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.out is not None:
        overrides["out"] = args.out
    params = dict(config.params)
    for key in ("p", "t", "samples", "reps", "a", "lam"):
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            params[key] = val
    if params != config.params:
        overrides["params"] = params
    if overrides:
        d = config.to_dict()
        d.update(overrides)
        config = RunConfig.from_dict(d)
    report = run(config)
    text = report.to_json()
    if config.out:
        report.save(config.out)
    print(text)
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="levytree",
        description="Branching-tree codings, CSBP numerics and experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_csbp = sub.add_parser("csbp", help="CSBP kernel utilities")
    csbp_sub = p_csbp.add_subparsers(dest="action", required=True)
    p_eval = csbp_sub.add_parser("eval", help="evaluate u, v and defects")
    p_eval.add_argument("--t", type=float, required=True)
    p_eval.add_argument("--lam", "--lambda", dest="lam", type=float, required=True)
    p_eval.add_argument(
        "--mechanism", default='{"kind": "quadratic", "beta": 1.0}',
        help="mechanism table as JSON",
    )
    p_eval.set_defaults(func=_cmd_csbp_eval)

    p_cod = sub.add_parser("codings", help="tree coding utilities")
    cod_sub = p_cod.add_subparsers(dest="action", required=True)
    p_rt = cod_sub.add_parser("roundtrip", help="verify coding bijections")
    p_rt.add_argument("--trees", type=int, default=1000)
    p_rt.add_argument("--seed", type=int, default=0)
    p_rt.add_argument("--max-nodes", type=int, default=30_000)
    p_rt.set_defaults(func=_cmd_codings_roundtrip)

    p_sim = sub.add_parser("simulate", help="samplers")
    sim_sub = p_sim.add_subparsers(dest="action", required=True)
    p_gw = sim_sub.add_parser("gw", help="sample Galton-Watson trees")
    p_gw.add_argument("--offspring", default="geometric")
    p_gw.add_argument("--count", type=int, default=1)
    p_gw.add_argument("--seed", type=int, default=0)
    p_gw.add_argument("--max-nodes", type=int, default=10**6)
    p_gw.add_argument("--out")
    p_gw.set_defaults(func=_cmd_simulate_gw)

    p_exp = sub.add_parser("experiment", help="run a registered experiment")
    p_exp.add_argument("name", choices=sorted(EXPERIMENTS))
    p_exp.add_argument("--config", help="RunConfig JSON file")
    p_exp.add_argument("--seed", type=int)
    p_exp.add_argument("--workers", type=int)
    p_exp.add_argument("--out", help="write the report JSON here")
    p_exp.add_argument("--p", type=int)
    p_exp.add_argument("--t", type=float)
    p_exp.add_argument("--a", type=float)
    p_exp.add_argument("--lam", type=float)
    p_exp.add_argument("--samples", type=int)
    p_exp.add_argument("--reps", type=int)
    p_exp.set_defaults(func=_cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
