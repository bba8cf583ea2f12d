"""Channel discriminance scoring, label hierarchies, pruning plans, and
discriminant-subspace distillation tools for exported CNN activations."""

from .dca import (
    DcaProjection,
    ScatterPair,
    combined_loss,
    cross_entropy,
    dca_components,
    flatten_activations,
    inter_kd_loss,
    linear_probe,
    load_projection,
    output_kd_loss,
    pca_components,
    project,
    save_projection,
    scatter_matrices,
)
from .hierarchy import (
    CoarseMapping,
    apply_mapping,
    class_centroids,
    confusion_matrix,
    kmeans_mapping,
    spectral_mapping,
)
from .kernels import BACKEND
from .metrics import (
    METRICS,
    BinaryPartitionStats,
    ChannelScoreReport,
    abssnr_binary,
    di_score,
    fdr_binary,
    generalized_score,
    mmd_score,
    partition_stats,
    score_layer,
    sd_binary,
    ttest_binary,
)
from .planner import (
    MODES,
    PruningPlan,
    build_plan,
    keep_count,
    select_channels,
    watershed_index,
)
from .synth import (
    ChannelSpec,
    block_assignment,
    block_centroids,
    block_confusion,
    gaussian_channels,
    layer_specs,
    make_logits,
    nuisance_features,
)
from .tensorio import (
    ActivationSet,
    LabelScheme,
    LogitSet,
    load_activations,
    load_matrix,
    read_manifest,
    save_matrix,
)

__version__ = "0.1.0"
