"""Joint block-level and record-level Bayesian record linkage.

Submodules follow the pipeline: ``comparison`` builds agreement cubes,
``model`` holds the mixture likelihood and priors, ``sampler`` runs the joint
chain (with ``baselines`` providing the flat and two-stage comparators),
``simulation`` generates synthetic studies and scores linkages, ``mi`` pools
downstream analyses, and ``cli`` wires it all to the command line. The hot
Gibbs sweep runs in a compiled kernel when available (see ``_backend``).
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .assignment import solve_assignment
from .baselines import run_brl, run_cibrl, run_method
from .comparison import (
    BlockedFile,
    ComparisonCube,
    ComparisonSchema,
    ComparisonSpec,
    build_comparison_cube,
    compare_values,
)
from .em import MixtureFit, em_mixture
from .mi import MIEstimate, fit_logistic, rubin_combine
from .model import (
    BlockAssignment,
    Hyperparams,
    LinkageState,
    ModelParams,
    log_component_density,
    log_joint_likelihood,
    log_prior_linkage,
    sample_parameters,
)
from .sampler import (
    ChainConfig,
    PosteriorSample,
    ProposalPool,
    RunResult,
    build_proposal_pool,
    mh_block_move,
    record_full_conditional,
    run_mlbrl,
    sweep_record_links,
)
from .simulation import (
    GroundTruth,
    LinkageMetrics,
    SimulationConfig,
    evaluate_sample,
    generate_dataset,
    inject_errors,
    run_study,
    study_schema,
)

__all__ = [
    "BACKEND",
    "BlockAssignment",
    "BlockedFile",
    "ChainConfig",
    "ComparisonCube",
    "ComparisonSchema",
    "ComparisonSpec",
    "GroundTruth",
    "Hyperparams",
    "LinkageMetrics",
    "LinkageState",
    "MIEstimate",
    "MixtureFit",
    "ModelParams",
    "PosteriorSample",
    "ProposalPool",
    "RunResult",
    "SimulationConfig",
    "build_comparison_cube",
    "build_proposal_pool",
    "compare_values",
    "em_mixture",
    "evaluate_sample",
    "fit_logistic",
    "generate_dataset",
    "inject_errors",
    "log_component_density",
    "log_joint_likelihood",
    "log_prior_linkage",
    "mh_block_move",
    "record_full_conditional",
    "rubin_combine",
    "run_brl",
    "run_cibrl",
    "run_method",
    "run_mlbrl",
    "run_study",
    "sample_parameters",
    "solve_assignment",
    "sweep_record_links",
    "study_schema",
]
