"""Joint input-channel pruning and low-rank decomposition for conv weights."""
from .core import (
    CHANNEL,
    SINGULAR_VALUE,
    ApproxState,
    CompressedLayer,
    Unit,
    apply_unit,
    compressed_flops,
    compression_rate,
    dematricize,
    layer_flops,
    matricize,
    prune_channel,
    realize,
    reference_conv,
    remove_singular_value,
    state_rate,
)
from .errors import (
    ConvSqueezeError,
    DataError,
    NumericalError,
    PlannerError,
    UsageError,
)
from .heuristic import (
    HeuristicConfig,
    UnitImportance,
    compress_layer,
    eligible_units,
    importance_bruteforce,
    importance_fast,
    score_units,
)
from .model_io import (
    CompressionReport,
    LayerRecord,
    NetworkBundle,
    build_report,
    load_compressed,
    load_network,
    save_compressed,
    save_network,
)
from .planner import RatePlan, plan_rates, rate_from_sensitivity
from .sensitivity import (
    SensitivityCurve,
    build_curve,
    fit_exponential,
    sensitivity_curve,
    unit_information_loss,
)

__version__ = "0.1.0"

__all__ = [
    "ApproxState",
    "CHANNEL",
    "CompressedLayer",
    "CompressionReport",
    "ConvSqueezeError",
    "DataError",
    "HeuristicConfig",
    "LayerRecord",
    "NetworkBundle",
    "NumericalError",
    "PlannerError",
    "RatePlan",
    "SINGULAR_VALUE",
    "SensitivityCurve",
    "Unit",
    "UnitImportance",
    "UsageError",
    "apply_unit",
    "build_curve",
    "build_report",
    "compress_layer",
    "compressed_flops",
    "compression_rate",
    "dematricize",
    "eligible_units",
    "fit_exponential",
    "importance_bruteforce",
    "importance_fast",
    "layer_flops",
    "load_compressed",
    "load_network",
    "matricize",
    "plan_rates",
    "prune_channel",
    "rate_from_sensitivity",
    "realize",
    "reference_conv",
    "remove_singular_value",
    "save_compressed",
    "save_network",
    "score_units",
    "sensitivity_curve",
    "state_rate",
    "unit_information_loss",
]
