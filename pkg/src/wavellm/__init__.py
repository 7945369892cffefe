"""wavellm: a desk-scale LLaMA-family inference engine with wavefront
graph scheduling, block-quantized weights, deterministic numerics, and
an op-level profiling and benchmarking harness."""

from .errors import (
    BadMagicError,
    ContextOverflowError,
    GenerationTimeout,
    GraphError,
    ModelFormatError,
    ShapeError,
    TruncatedFileError,
    VersionError,
    WavellmError,
)
from .graph import (
    Backend,
    Graph,
    Node,
    OpKind,
    WavefrontSchedule,
    compute_wavefronts,
    dump_graph,
    graph_from_dict,
    graph_to_dict,
    validate_topological,
)
from .model import (
    ModelConfig,
    PRESETS,
    WeightSet,
    build_llama,
    gen_synthetic_weights,
    load_model,
    preset_config,
    save_model,
)
from .profiler import (
    OpBreakdown,
    Phase,
    ProfileRecord,
    aggregate_by_matmul_tag,
    aggregate_by_op,
    check_schedule,
)
from .runtime import GenMetrics, InferenceEngine, KvCache, engine_from_preset, greedy_sample
from .scheduler import AccelModel, ExecutionReport, SchedulerKind, assign_backends, run
from .tensor import DType, Tensor

__version__ = "0.1.0"

__all__ = [
    "AccelModel",
    "Backend",
    "BadMagicError",
    "ContextOverflowError",
    "DType",
    "ExecutionReport",
    "GenMetrics",
    "GenerationTimeout",
    "Graph",
    "GraphError",
    "InferenceEngine",
    "KvCache",
    "ModelConfig",
    "ModelFormatError",
    "Node",
    "OpBreakdown",
    "OpKind",
    "Phase",
    "PRESETS",
    "ProfileRecord",
    "SchedulerKind",
    "ShapeError",
    "Tensor",
    "TruncatedFileError",
    "VersionError",
    "WavefrontSchedule",
    "WavellmError",
    "WeightSet",
    "aggregate_by_matmul_tag",
    "aggregate_by_op",
    "assign_backends",
    "build_llama",
    "check_schedule",
    "compute_wavefronts",
    "dump_graph",
    "engine_from_preset",
    "gen_synthetic_weights",
    "graph_from_dict",
    "graph_to_dict",
    "greedy_sample",
    "load_model",
    "preset_config",
    "run",
    "save_model",
    "validate_topological",
]
