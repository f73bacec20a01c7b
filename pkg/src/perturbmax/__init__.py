"""Perturb-max inference for discrete pairwise graphical models.

Randomised-MAP tools around one idea: adding zero-mean Gumbel noise to a
potential function turns MAP solvers into statistical inference engines.
Full-dimensional perturbations reproduce the Gibbs distribution exactly;
low-dimensional (per-variable) perturbations give tractable upper and
probable lower bounds on the log-partition function, entropy bounds, an
unbiased sequential sampler, and measure-concentration error bars, all
validated against exact small-instance oracles.
"""

__version__ = "0.1.0"

from .bounds import (
    BoundEstimate,
    ExtendedModel,
    build_extended_model,
    lower_bound_logz,
    partial_phi,
    sequential_logz,
    upper_bound_logz,
)
from .errors import (
    EnumerationCapError,
    InvariantViolation,
    PerturbMaxError,
    PreconditionError,
    SolverRejection,
)
from .gumbel import (
    EULER_MASCHERONI,
    PerturbationSet,
    averaged_copy_perturbation,
    sample_gumbel,
    sample_perturbation,
)
from .model import (
    PairwiseModel,
    SpinGlassSpec,
    Variable,
    enumerate_configurations,
    evaluate,
    generate_spin_glass,
    load_model,
    save_model,
)
from .oracle import (
    ExactSummary,
    exact_bruteforce,
    exact_gibbs_sample,
    exact_transfer_matrix,
)
from .sampler import SamplerConfig, SamplerTrace, acceptance_rate, gibbs_sample
from .solvers import MapResult, solve, solve_bruteforce, solve_graphcut

__all__ = [
    "BoundEstimate",
    "EULER_MASCHERONI",
    "EnumerationCapError",
    "ExactSummary",
    "ExtendedModel",
    "InvariantViolation",
    "MapResult",
    "PairwiseModel",
    "PerturbMaxError",
    "PerturbationSet",
    "PreconditionError",
    "SamplerConfig",
    "SamplerTrace",
    "SolverRejection",
    "SpinGlassSpec",
    "Variable",
    "acceptance_rate",
    "averaged_copy_perturbation",
    "build_extended_model",
    "enumerate_configurations",
    "evaluate",
    "exact_bruteforce",
    "exact_gibbs_sample",
    "exact_transfer_matrix",
    "generate_spin_glass",
    "gibbs_sample",
    "load_model",
    "lower_bound_logz",
    "partial_phi",
    "sample_gumbel",
    "sample_perturbation",
    "save_model",
    "sequential_logz",
    "solve",
    "solve_bruteforce",
    "solve_graphcut",
    "upper_bound_logz",
]
