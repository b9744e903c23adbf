"""Convex sparse blind deconvolution.

Recover the inverse of an unknown forward filter from a single observed
window of a sparsely excited linear process, by minimizing the l1 norm of
the filtered output under a linear anchoring constraint, together with
the closed-form population theory (landscape values, recovery-threshold
bounds, noise-robustness bounds) and desk-scale experiment harnesses.
"""

__version__ = "0.1.0"

from .filters import (Filter, RootFactorization, angle_to_delta, convolve,
                      deltaness, filter_from_roots, find_roots,
                      geometric_filter, inverse_error, inverse_filter,
                      time_reverse, truncated_inverse, unit, wiener_margin)
from .signals import (BgModel, Window, add_adversarial_offset, add_ma_gaussian,
                      linear_process, sample_bg)
from .solver import (DegenerateProblemError, SolverConfig, SolverResult,
                     check_recovery, solve_l1, solve_l1_oracle_1dof)
from .theory import (McEstimate, ThresholdReport, adversarial_noise_bound,
                     bilipschitz_gap, distance_metrics, expected_abs_inner,
                     folded_gaussian_mean, folded_ratio, gaussian_noise_bound,
                     kkt_directional, mu_min, pt_exact, pt_lower, pt_upper,
                     v1_saddle, v2k_saddle, v_landscape_mc)
from .experiments import (ExperimentTable, PhaseGridSpec, phase_diagram,
                          robustness_curve, sample_complexity_curve,
                          stability_curve)

__all__ = [
    "Filter", "RootFactorization", "angle_to_delta", "convolve", "deltaness",
    "filter_from_roots", "find_roots", "geometric_filter", "inverse_error",
    "inverse_filter", "time_reverse", "truncated_inverse", "unit",
    "wiener_margin",
    "BgModel", "Window", "add_adversarial_offset", "add_ma_gaussian",
    "linear_process", "sample_bg",
    "DegenerateProblemError", "SolverConfig", "SolverResult", "check_recovery",
    "solve_l1", "solve_l1_oracle_1dof",
    "McEstimate", "ThresholdReport", "adversarial_noise_bound",
    "bilipschitz_gap", "distance_metrics", "expected_abs_inner",
    "folded_gaussian_mean", "folded_ratio", "gaussian_noise_bound",
    "kkt_directional", "mu_min", "pt_exact", "pt_lower", "pt_upper",
    "v1_saddle", "v2k_saddle", "v_landscape_mc",
    "ExperimentTable", "PhaseGridSpec", "phase_diagram", "robustness_curve",
    "sample_complexity_curve", "stability_curve",
]
