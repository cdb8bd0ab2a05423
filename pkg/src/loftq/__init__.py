"""Joint low-bit quantization and low-rank adapter initialization.

The package quantizes a weight matrix W to N-bit codes while extracting
rank-r factors A, B that minimize the reconstruction discrepancy
``||W - Q^D - A B^T||_F``, by alternating blockwise quantization with
truncated SVD of the residual.  It ships codebook construction, a blockwise
quantizer with bit-packed storage, mixed-precision planning, tensor
container and checkpoint I/O, and a command-line interface.
"""

from .codebooks import (
    Codebook,
    CodebookKind,
    EncodingRule,
    Normalization,
    NormalFloatParams,
    build_normalfloat_codebook,
    build_uniform_codebook,
    codebook_from_bytes,
    codebook_to_bytes,
    decode_array,
    decode_scalar,
    encode_array,
    encode_scalar,
)
from .errors import ConvergenceError, FormatError, LoftqError
from .initialization import (
    BaselineInitConfig,
    LoftqConfig,
    LoftqResult,
    TraceEntry,
    Variant,
    adapter_forward,
    discrepancy_report,
    loftq_init,
    loftq_variant_init,
    objective,
    qlora_init,
)
from .lowrank import (
    LowRankFactors,
    SvdResult,
    frobenius_norm,
    spectral_norm,
    svd,
    truncated_factors,
)
from .model_io import (
    QuantizedCheckpoint,
    TensorContainer,
    TensorRecord,
    export_adapters,
    make_record,
    read_checkpoint,
    read_tensors,
    reconstruct_backbone,
    write_checkpoint,
    write_tensors,
)
from .planner import (
    CompressionReport,
    MixedPrecision,
    ModelManifest,
    PlanDefaults,
    QuantPlan,
    Role,
    TensorAssignment,
    TensorInfo,
    build_plan,
    compression_ratio,
    infer_layer_index,
    infer_role,
    load_plan,
    manifest_from_shapes,
    save_plan,
)
from .quantizer import (
    QuantizedMatrix,
    dequantize_matrix,
    pack_codes,
    quantize_matrix,
    unpack_codes,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineInitConfig",
    "Codebook",
    "CodebookKind",
    "CompressionReport",
    "ConvergenceError",
    "EncodingRule",
    "FormatError",
    "LoftqConfig",
    "LoftqError",
    "LoftqResult",
    "LowRankFactors",
    "MixedPrecision",
    "ModelManifest",
    "NormalFloatParams",
    "Normalization",
    "PlanDefaults",
    "QuantPlan",
    "QuantizedCheckpoint",
    "QuantizedMatrix",
    "Role",
    "SvdResult",
    "TensorAssignment",
    "TensorContainer",
    "TensorInfo",
    "TensorRecord",
    "TraceEntry",
    "Variant",
    "adapter_forward",
    "build_normalfloat_codebook",
    "build_plan",
    "build_uniform_codebook",
    "codebook_from_bytes",
    "codebook_to_bytes",
    "compression_ratio",
    "decode_array",
    "decode_scalar",
    "dequantize_matrix",
    "discrepancy_report",
    "encode_array",
    "encode_scalar",
    "export_adapters",
    "frobenius_norm",
    "infer_layer_index",
    "infer_role",
    "load_plan",
    "loftq_init",
    "loftq_variant_init",
    "make_record",
    "manifest_from_shapes",
    "objective",
    "pack_codes",
    "qlora_init",
    "quantize_matrix",
    "read_checkpoint",
    "read_tensors",
    "reconstruct_backbone",
    "save_plan",
    "spectral_norm",
    "svd",
    "truncated_factors",
    "unpack_codes",
    "write_checkpoint",
    "write_tensors",
]
