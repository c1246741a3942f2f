"""Deterministic desk-scale simulator for threshold-pruned gradient exchange
over ring all-reduce: importance scoring, shared-mask agreement, sparse
reduction, residual accumulation, and per-link bandwidth accounting."""

from .codec import (
    INDEX_BYTES,
    VALUE_BYTES,
    BitMask,
    EncodedMask,
    SparseGradient,
    compression_ratio,
    decode_mask,
    encode_mask,
    encoded_size,
    or_masks,
    split_by_mask,
)
from .errors import (
    CodecError,
    ConfigError,
    DivergenceError,
    InputError,
    ProtocolError,
    RingPruneError,
    StructuralError,
)
from .importance import (
    EpochSchedule,
    ImportanceVector,
    LayerStats,
    ThresholdPolicy,
    build_local_mask,
    compute_importance,
    layer_stats,
    layer_threshold,
    thresholds_for,
)
from .layout import LayerLayout
from .ring import (
    BandwidthReport,
    LinkStats,
    MaskAgreementConfig,
    RingTopology,
    bandwidth_report,
    dense_allreduce,
    dgc_union_contrast,
    mask_agreement_round,
    naive_sparse_allreduce,
    select_broadcast_nodes,
    sparse_allreduce,
    write_bandwidth_csv,
)
from .seeds import ParamStream, substream
from .tasks import LinearRegressionTask, MlpClassificationTask, make_task
from .trainer import (
    MODE_COMPRESSED,
    MODE_DENSE,
    MODE_DGC_CONTRAST,
    NodeState,
    RunResult,
    StepMetrics,
    TrainingConfig,
    baseline_dense_step,
    clip_gradient,
    closed_form_weight_change,
    compressed_step,
    dgc_contrast_step,
    init_nodes,
    local_gradient,
    run_experiment,
    write_metrics_csv,
)

__version__ = "0.1.0"

__all__ = [
    "BandwidthReport",
    "BitMask",
    "CodecError",
    "ConfigError",
    "DivergenceError",
    "EncodedMask",
    "EpochSchedule",
    "ImportanceVector",
    "INDEX_BYTES",
    "InputError",
    "LayerLayout",
    "LayerStats",
    "LinearRegressionTask",
    "LinkStats",
    "MaskAgreementConfig",
    "MlpClassificationTask",
    "MODE_COMPRESSED",
    "MODE_DENSE",
    "MODE_DGC_CONTRAST",
    "NodeState",
    "ParamStream",
    "ProtocolError",
    "RingPruneError",
    "RingTopology",
    "RunResult",
    "SparseGradient",
    "StepMetrics",
    "StructuralError",
    "ThresholdPolicy",
    "TrainingConfig",
    "VALUE_BYTES",
    "bandwidth_report",
    "baseline_dense_step",
    "build_local_mask",
    "clip_gradient",
    "closed_form_weight_change",
    "compressed_step",
    "compression_ratio",
    "compute_importance",
    "decode_mask",
    "dense_allreduce",
    "dgc_contrast_step",
    "dgc_union_contrast",
    "encode_mask",
    "encoded_size",
    "init_nodes",
    "layer_stats",
    "layer_threshold",
    "local_gradient",
    "make_task",
    "mask_agreement_round",
    "naive_sparse_allreduce",
    "or_masks",
    "run_experiment",
    "select_broadcast_nodes",
    "sparse_allreduce",
    "split_by_mask",
    "substream",
    "thresholds_for",
    "write_bandwidth_csv",
    "write_metrics_csv",
]
