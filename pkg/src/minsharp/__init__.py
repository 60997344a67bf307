"""Scale-invariant sharpness of ReLU networks.

Exact per-layer traces and diagonals of the softmax cross-entropy
Hessian for no-bias fully connected ReLU networks, the closed-form
minimum sharpness over layer rescalings, brute-force oracles for
verification, a normalized-sharpness baseline, and the supporting
dataset / training machinery.
"""

from .baseline_ns import (
    NsConfig,
    NsReport,
    StochasticDiagReport,
    diag_probe,
    normalized_sharpness,
    ns_layer,
    stochastic_diag,
)
from .data import (
    Dataset,
    IdxFormatError,
    corrupt_labels,
    load_idx_dataset,
    parse_idx_images,
    parse_idx_labels,
    serialize_idx_images,
    serialize_idx_labels,
    synthetic_blobs,
)
from .hessian import (
    CurvatureError,
    FdDiagReport,
    LayerDiagonals,
    LayerTraces,
    diag_exact,
    inject_bug,
    oracle_fd_diag,
    oracle_kron_diag,
    oracle_kron_trace,
    score,
    trace_exact,
)
from .linalg import Rng
from .network import (
    CheckpointError,
    EpochStats,
    ForwardTrace,
    Mlp,
    SgdConfig,
    TrainingDivergedError,
    TrainResult,
    accuracy,
    forward,
    grad_log_z,
    grad_logit,
    grad_loss,
    load_checkpoint,
    loss,
    random_mlp,
    save_checkpoint,
    train,
)
from .sharpness import (
    Alpha,
    GradScalingReport,
    SharpnessReport,
    alpha_transform,
    grad_scaling_check,
    minimum_sharpness,
    minimum_sharpness_numeric,
    minimum_sharpness_of,
)

__version__ = "0.1.0"
