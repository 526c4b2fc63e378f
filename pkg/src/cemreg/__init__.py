"""Rigid point cloud registration by a cross-entropy search over SE(3).

Candidates are sampled from a diagonal Gaussian over Euler angles and
translation, scored with a maximum-consensus reward (optionally fused with
the reward reached after ICP refinement), and the distribution is refit with
sparsemax weights or hard top-k elites.
"""

from cemreg.se3 import (
    Normalization,
    PointCloud,
    RegistrationState,
    RigidMotion,
    apply_motion,
    compose,
    euler_to_matrix,
    inverse,
    matrix_to_euler,
    wrap_angle,
)
from cemreg.nn_index import NeighborIndex, build_index, nearest
from cemreg.metrics import (
    TransformError,
    chamfer,
    d_mc,
    geman_mcclure,
    reward,
    robust_alignment_loss,
    transform_error,
)
from cemreg.solver import IcpConfig, IcpResult, KabschResult, icp, kabsch_solve, soft_correspondence
from cemreg.cem import (
    CemConfig,
    CemError,
    CemTrace,
    SamplingDistribution,
    ScoredCandidate,
    cem_register,
    fused_score,
    hard_topk_update,
    sample_candidates,
    sparsemax,
    sparsemax_jacobian,
    weighted_update,
)
from cemreg.priors import PriorResult, correspondence_prior, standard_prior, fixed_prior

__version__ = "0.1.0"

__all__ = [
    "CemConfig",
    "CemError",
    "CemTrace",
    "IcpConfig",
    "IcpResult",
    "KabschResult",
    "NeighborIndex",
    "Normalization",
    "PointCloud",
    "PriorResult",
    "RegistrationState",
    "RigidMotion",
    "SamplingDistribution",
    "ScoredCandidate",
    "TransformError",
    "apply_motion",
    "build_index",
    "cem_register",
    "chamfer",
    "compose",
    "correspondence_prior",
    "d_mc",
    "standard_prior",
    "euler_to_matrix",
    "fixed_prior",
    "fused_score",
    "geman_mcclure",
    "hard_topk_update",
    "icp",
    "inverse",
    "kabsch_solve",
    "matrix_to_euler",
    "nearest",
    "reward",
    "robust_alignment_loss",
    "sample_candidates",
    "soft_correspondence",
    "sparsemax",
    "sparsemax_jacobian",
    "transform_error",
    "weighted_update",
    "wrap_angle",
]
