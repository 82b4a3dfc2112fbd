"""Few-shot MAML for classifying refactoring opportunities from code metrics."""

from .episodes import (
    ClassRegistry,
    Episode,
    EpisodeConfig,
    EpisodePool,
    InstanceSet,
    MetaSplit,
    NormStats,
    SyntheticTaskConfig,
    SyntheticTasks,
    apply_standardization,
    compute_norm_stats,
    ingest_csv,
    sample_episode,
    sample_episode_batch,
    split_by_scarcity,
    synthetic_episode,
)
from .maml import (
    Checkpoint,
    MamlConfig,
    baseline_test,
    inner_adapt,
    load_checkpoint,
    meta_gradient,
    meta_test,
    meta_train,
    save_checkpoint,
)
from .metrics import MetricsRecord, aggregate_metrics, episode_metrics, scratch_baseline, weighted_average
from .mlp import (
    LabeledBatch,
    MlpArchitecture,
    MlpParameters,
    forward,
    hessian_vector_product,
    init_parameters,
    loss,
    loss_gradient,
)

__version__ = "0.1.0"
