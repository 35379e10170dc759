"""Teacher/student scaling-law experiments and nearest-neighbor ID estimation.

The package links two measurements made on the same trained networks: the
exponent alpha of the converged-loss power law L(N) = c * N**(-alpha) across
model sizes N, and the intrinsic dimension d of the data manifold seen in
prefinal-layer activations. For ReLU students of generic targets the two are
tied by alpha ~ 4/d (2p/d for |y - y*|**p losses), with product-structured
targets scaling by the largest factor dimension instead of the total.
"""

from .manifolds import CloudFormatError, PointCloud, load_cloud, sample_hypercube, sample_torus, save_cloud
from .id_estimation import (
    IdEstimate,
    NeighborRatios,
    estimate_id_knn,
    estimate_id_mle,
    id_vs_pointcount,
    knn_dimension_from_ratios,
    mle_dimension_from_ratios,
    neighbor_ratios,
)
from .nets import (
    AdamState,
    Mlp,
    TrainConfig,
    TrainResult,
    TrainSegment,
    TrainingDivergedError,
    adam_step,
    backward,
    count_params,
    evaluate_loss,
    forward,
    forward_activations,
    init_adam,
    init_mlp,
    kl_divergence_logits,
    kl_region_scaling,
    loss,
    train,
)
from .teachers import TeacherSpec, make_teacher, product_teacher, teacher_output, vet_score, vet_teachers
from .powerlaw import (
    DimensionReport,
    LossCurve,
    NmaxResult,
    PowerLawFit,
    alpha_vs_dimension_report,
    convex_hull_filter,
    fit_power_law,
    n_max_at_loss_threshold,
    n_max_empirical,
    select_linear_prefix,
)
from .experiments import ConfigError, ExperimentConfig, RunRecord, load_config, resume, run_experiment, validate_config

__version__ = "0.1.0"
