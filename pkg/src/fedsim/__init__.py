"""Deterministic simulator of personalized semi-supervised federated learning
for sensor-based human activity recognition."""

from .client import ClientNode, NodeConfig, QuestionEvent
from .data import (
    ColumnMap,
    DatasetManifest,
    SensorStream,
    SyntheticSpec,
    load_generic_csv,
    load_wisdm,
    synth_generate,
    write_generic_csv,
)
from .errors import (
    ConfigurationError,
    DataFormatError,
    FedsimError,
    NumericError,
    ShapeError,
)
from .features import (
    FeatureSample,
    LabelSource,
    Standardizer,
    Window,
    apply_standardizer,
    extract_features,
    fit_standardizer,
    segment,
)
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    FeatureSettings,
    NetworkSettings,
    SemisupSettings,
    Shard,
    macro_f1,
    make_shards,
    partition_users,
    pretrain,
    run_experiment,
)
from .nn import (
    AdamState,
    LayerSpec,
    ModelWeights,
    Prediction,
    build_network,
    compute_gradients,
    forward,
    forward_batch,
    load_weights,
    save_weights,
    train,
)
from .protocol import (
    ClientUpdate,
    GlobalModelState,
    RoundConfig,
    RoundMetrics,
    aggregate,
    mask_updates,
    run_round,
    select_clients,
)
from .semisup import (
    ActiveLearningState,
    PropagationGraph,
    build_question,
    propagate_labels,
    prune_graph,
    record_feedback,
    should_query,
)

__version__ = "0.1.0"
