from src.ir.arch_ir import (
    INPUT_ID,
    Edge,
    Hyperparams,
    LayerKind,
    LayerSpec,
    NetworkDef,
    Span,
    ValidationResult,
    build_network,
    count_params,
    validate_ir,
    width_positions,
    width_vector,
)
