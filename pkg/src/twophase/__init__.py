"""Optimal and maximin sampling designs for two-phase studies.

Phase 1 measures cheap variables V on everyone; phase 2 measures expensive
variables U on a subsample drawn with probability rho(V) under a budget
E[rho(V)] <= varpi.  This package computes the sampling rules that minimize
the asymptotic variance of downstream estimators (per component, summed, or
maximin across components), runs the pilot-calibrated estimation pipeline,
and ships a seeded simulation harness plus a small CLI.
"""

from .demo import run_demo
from .design import (
    MaximinSolution,
    primal_brute_force,
    relative_improvement,
    solve_constrained_maximin,
    solve_global_maximin,
    solve_priority_maximin,
)
from .dgp import GENERATORS, gen_classification
from .moments import BasisSpec, MomentModel, fit_moments
from .pipeline import (
    EstimateReport,
    TwoPhaseDataset,
    draw_pilot,
    draw_second_phase,
    estimate_rules,
    ipw_estimate,
    ivw_combine,
    kappa_default,
    one_step,
    one_step_excluding_pilot,
    pilot_estimate,
)
from .problems import make_problem, two_phase_eif
from .rules import (
    EmpiricalBound,
    Mixture,
    SigmaCombo,
    Truncated,
    Uniform,
    empirical_bound,
    scalar_optimal_rule,
    solve_threshold,
    sum_rule,
)
from .serialize import load_rule, load_scenario, save_rule
from .simulate import ScenarioSpec, run_scenario

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "EmpiricalBound",
    "EstimateReport",
    "GENERATORS",
    "MaximinSolution",
    "Mixture",
    "MomentModel",
    "ScenarioSpec",
    "SigmaCombo",
    "Truncated",
    "TwoPhaseDataset",
    "Uniform",
    "draw_pilot",
    "draw_second_phase",
    "empirical_bound",
    "estimate_rules",
    "fit_moments",
    "gen_classification",
    "ipw_estimate",
    "ivw_combine",
    "kappa_default",
    "load_rule",
    "load_scenario",
    "make_problem",
    "one_step",
    "one_step_excluding_pilot",
    "pilot_estimate",
    "primal_brute_force",
    "relative_improvement",
    "run_demo",
    "run_scenario",
    "save_rule",
    "scalar_optimal_rule",
    "solve_constrained_maximin",
    "solve_global_maximin",
    "solve_priority_maximin",
    "solve_threshold",
    "sum_rule",
    "two_phase_eif",
    "__version__",
]
