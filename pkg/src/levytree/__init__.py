"""Branching-process tree codings, CSBP numerics, continuum-tree
marginal laws, spatial branching simulation, and a seeded verification
harness."""

from .mechanism import BranchingMechanism, MechanismError
from .csbp import CsbpKernel, ExtinctionError
from .codings import (
    CodingError,
    OrderedTree,
    contour_from_height,
    contour_of,
    excursion_count_above,
    exploration_at,
    forest_from_height,
    height_from_walk,
    height_of,
    lukasiewicz_of,
    mirror,
    occupation_counts,
    reduced_counts,
    tree_from_height,
    walk_to_forest,
)
from .offspring import (
    ConditioningError,
    NodeBudgetError,
    OffspringDistribution,
    RescalingPlan,
    custom_offspring,
    geometric_half,
    limit_mechanism,
    make_plan,
    sample_conditioned_height,
    sample_conditioned_size,
    sample_forest,
    sample_tree,
    stable_offspring,
    time_scale,
)
from .marginals import (
    MarkedTree,
    ReducedTreeNode,
    enumerate_Tstar,
    extract_marginal_tree,
    poisson_offspring_pmf,
    poisson_tree_sample,
    quadratic_lifetime_density,
    reduced_marginal_laplace,
    reduced_offspring_pmf,
    reduced_tree_sample,
    stable_skeleton_pmf,
)
from .snake import (
    ExitMeasure,
    MeasureSample,
    SpatialKernel,
    branching_walk,
    exit_measure,
    gaussian_kernel,
    laplace_functional,
    lattice_kernel,
    solve_exit_collocation,
    solve_exit_ode,
    solve_super2,
)
from .report import ExperimentReport
from .config import RunConfig
from .stats import chi_square, ks_statistic, laplace_gap

__version__ = "0.1.0"
