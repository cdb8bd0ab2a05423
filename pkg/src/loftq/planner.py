"""Mixed-precision quantization planning and compression accounting.

A model manifest lists the 2-D tensors of a model together with their
inferred layer indices and roles.  A plan assigns each tensor either a
(bits, rank, codebook, block size) recipe or pass-through, supports a
mixed-precision scheme that gives the first k layers a higher bit width than
the rest, and can be saved to and loaded from a human-readable JSON file.
"""

import enum
import fnmatch
import json
import re
from dataclasses import dataclass, field

from .codebooks import CodebookKind

__all__ = [
    "CompressionReport",
    "DEFAULT_LAYER_PATTERN",
    "MixedPrecision",
    "ModelManifest",
    "PlanDefaults",
    "QuantPlan",
    "Role",
    "TensorAssignment",
    "TensorInfo",
    "build_plan",
    "compression_ratio",
    "infer_layer_index",
    "infer_role",
    "load_plan",
    "manifest_from_shapes",
    "save_plan",
]

# matches ".layers.7.", ".blocks.7.", ".layer.7.", ".h.7." and similar
DEFAULT_LAYER_PATTERN = r"(?:^|\.)(?:layers?|blocks?|h)\.(\d+)(?:\.|$)"

_SOURCE_BITS_PER_PARAM = 16


def _codebook_bits(bits: int) -> int:
    # serialized codebook: kind u8 + bits u8 + clip f64 + 2**bits levels f64
    return 8 * (10 + 8 * (1 << bits))


class Role(enum.Enum):
    ATTENTION = "attention"
    FEED_FORWARD = "feed_forward"
    EMBEDDING = "embedding"
    OTHER = "other"


@dataclass(frozen=True)
class TensorInfo:
    """One 2-D tensor: name, shape, and where it sits in the network."""

    name: str
    rows: int
    cols: int
    layer_index: int | None = None
    role: Role = Role.OTHER

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(
                f"tensor '{self.name}' has invalid shape {self.rows}x{self.cols}"
            )

    @property
    def count(self) -> int:
        return self.rows * self.cols


@dataclass
class ModelManifest:
    """The 2-D tensors of a model plus the model's total parameter count.

    total_params may exceed the sum over entries when the model also holds
    tensors that are not matrices (biases, norms); those always pass through
    unquantized.
    """

    entries: list
    total_params: int

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("duplicate tensor names in manifest")
        matrix_params = sum(e.count for e in self.entries)
        if self.total_params < matrix_params:
            raise ValueError(
                f"total_params {self.total_params} is less than the "
                f"{matrix_params} parameters held by the listed matrices"
            )

    def entry(self, name: str) -> TensorInfo:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)


def infer_layer_index(name: str, pattern: str = DEFAULT_LAYER_PATTERN) -> int | None:
    """Extract a layer index from a tensor name, or None if it has none."""
    m = re.search(pattern, name)
    return int(m.group(1)) if m else None


_ATTENTION_SUBSTRINGS = ("attn", "attention", "q_proj", "k_proj", "v_proj", "o_proj")
_ATTENTION_TOKENS = ("query", "key", "value", "qkv", "wq", "wk", "wv", "wo")
_FFN_SUBSTRINGS = ("mlp", "ffn", "feed_forward", "gate_proj", "up_proj", "down_proj", "intermediate")
_FFN_TOKENS = ("fc1", "fc2")


def infer_role(name: str) -> Role:
    lowered = name.lower()
    tokens = set(re.split(r"[._/]", lowered))
    if "embed" in lowered:
        return Role.EMBEDDING
    if any(h in lowered for h in _ATTENTION_SUBSTRINGS) or tokens & set(
        _ATTENTION_TOKENS
    ):
        return Role.ATTENTION
    if any(h in lowered for h in _FFN_SUBSTRINGS) or tokens & set(_FFN_TOKENS):
        return Role.FEED_FORWARD
    return Role.OTHER


def manifest_from_shapes(
    shapes, layer_pattern: str = DEFAULT_LAYER_PATTERN
) -> ModelManifest:
    """Build a manifest from a name -> shape mapping.

    Only 2-D tensors become manifest entries; every tensor's elements count
    toward total_params.
    """
    entries = []
    total = 0
    for name, shape in shapes.items():
        count = 1
        for dim in shape:
            count *= dim
        total += count
        if len(shape) == 2 and shape[0] >= 1 and shape[1] >= 1:
            entries.append(
                TensorInfo(
                    name=name,
                    rows=shape[0],
                    cols=shape[1],
                    layer_index=infer_layer_index(name, layer_pattern),
                    role=infer_role(name),
                )
            )
    return ModelManifest(entries=entries, total_params=total)


@dataclass(frozen=True)
class PlanDefaults:
    bits: int = 4
    rank: int = 16
    codebook: CodebookKind = CodebookKind.NORMAL_FLOAT
    block_size: int = 64

    def __post_init__(self):
        if not 1 <= self.bits <= 8:
            raise ValueError(f"bits must lie in [1, 8], got {self.bits}")
        if self.rank < 1:
            raise ValueError(f"rank must be positive, got {self.rank}")
        if self.block_size < 1:
            raise ValueError(f"block size must be positive, got {self.block_size}")


@dataclass(frozen=True)
class MixedPrecision:
    """First ``cutoff`` layers get high_bits, later layers get low_bits."""

    cutoff: int
    high_bits: int
    low_bits: int

    def __post_init__(self):
        if self.cutoff < 0:
            raise ValueError(f"cutoff must be non-negative, got {self.cutoff}")
        for label, bits in (("high_bits", self.high_bits), ("low_bits", self.low_bits)):
            if not 1 <= bits <= 8:
                raise ValueError(f"{label} must lie in [1, 8], got {bits}")


@dataclass
class TensorAssignment:
    process: bool
    bits: int
    rank: int
    codebook: CodebookKind
    block_size: int


@dataclass
class QuantPlan:
    """Per-tensor assignments produced from selection patterns and defaults."""

    assignments: dict
    defaults: PlanDefaults
    mixed: MixedPrecision | None
    selection: list
    warnings: list = field(default_factory=list)

    def processed_names(self):
        return [n for n, a in self.assignments.items() if a.process]


def build_plan(
    manifest: ModelManifest,
    selection,
    defaults: PlanDefaults | None = None,
    mixed: MixedPrecision | None = None,
    include_embeddings: bool = False,
) -> QuantPlan:
    """Assign a quantization recipe to every manifest entry.

    Tensors matching any of the fnmatch-style selection patterns are
    processed, except embeddings unless include_embeddings is set.  Under a
    mixed-precision scheme, tensors in the first ``cutoff`` layers quantize at
    high_bits and all remaining processed tensors, including those without a
    layer index, at low_bits.  A pattern that matches nothing and a skipped
    embedding both produce a warning rather than an error; a processed tensor
    whose smaller dimension is below the adapter rank is an error.
    """
    if defaults is None:
        defaults = PlanDefaults()
    selection = list(selection)
    warnings = []
    for pattern in selection:
        if not any(fnmatch.fnmatchcase(e.name, pattern) for e in manifest.entries):
            warnings.append(f"pattern '{pattern}' matched no tensors")
    assignments = {}
    for entry in manifest.entries:
        matched = any(fnmatch.fnmatchcase(entry.name, p) for p in selection)
        process = matched
        if matched and entry.role is Role.EMBEDDING and not include_embeddings:
            warnings.append(
                f"tensor '{entry.name}' matched but skipped (embedding)"
            )
            process = False
        bits = defaults.bits
        if process and mixed is not None:
            in_head = (
                entry.layer_index is not None and entry.layer_index < mixed.cutoff
            )
            bits = mixed.high_bits if in_head else mixed.low_bits
        if process and defaults.rank > min(entry.rows, entry.cols):
            raise ValueError(
                f"rank {defaults.rank} exceeds min dimension "
                f"{min(entry.rows, entry.cols)} of tensor '{entry.name}'"
            )
        assignments[entry.name] = TensorAssignment(
            process=process,
            bits=bits,
            rank=defaults.rank,
            codebook=defaults.codebook,
            block_size=defaults.block_size,
        )
    return QuantPlan(
        assignments=assignments,
        defaults=defaults,
        mixed=mixed,
        selection=selection,
        warnings=warnings,
    )


@dataclass
class CompressionReport:
    """Bit accounting for a plan applied to a manifest.

    ratio_percent compares the processed model against a 16-bit original.
    average_bits averages the code width over processed parameters only and
    is None when nothing is processed.  trainable_percent is the share of
    original parameters that the adapters re-introduce as trainable.
    """

    compressed_bits: int
    original_bits: int
    ratio_percent: float
    trainable_percent: float
    average_bits: float | None


def _blocks(count: int, block_size: int) -> int:
    return -(-count // block_size)


def compression_ratio(manifest: ModelManifest, plan: QuantPlan) -> CompressionReport:
    """Account for packed codes, block scales, and codebook tables.

    Processed tensors cost ``count * bits`` for codes plus per-block scales
    (two float32 values per block under min/max, one under absmax) plus one
    serialized codebook; unprocessed parameters stay at 16 bits.
    """
    compressed = 0
    processed_params = 0
    processed_code_bits = 0
    adapter_params = 0
    matrix_params = 0
    for entry in manifest.entries:
        matrix_params += entry.count
        asg = plan.assignments.get(entry.name)
        if asg is None or not asg.process:
            compressed += entry.count * _SOURCE_BITS_PER_PARAM
            continue
        scale_bits = 64 if asg.codebook is CodebookKind.UNIFORM else 32
        compressed += (
            entry.count * asg.bits
            + _blocks(entry.count, asg.block_size) * scale_bits
            + _codebook_bits(asg.bits)
        )
        processed_params += entry.count
        processed_code_bits += entry.count * asg.bits
        adapter_params += asg.rank * (entry.rows + entry.cols)
    compressed += (manifest.total_params - matrix_params) * _SOURCE_BITS_PER_PARAM
    original = manifest.total_params * _SOURCE_BITS_PER_PARAM
    return CompressionReport(
        compressed_bits=compressed,
        original_bits=original,
        ratio_percent=100.0 * compressed / original if original else 0.0,
        trainable_percent=(
            100.0 * adapter_params / manifest.total_params
            if manifest.total_params
            else 0.0
        ),
        average_bits=(
            processed_code_bits / processed_params if processed_params else None
        ),
    )


def _plan_to_dict(plan: QuantPlan) -> dict:
    return {
        "defaults": {
            "bits": plan.defaults.bits,
            "rank": plan.defaults.rank,
            "codebook": plan.defaults.codebook.value,
            "block_size": plan.defaults.block_size,
        },
        "mixed": (
            None
            if plan.mixed is None
            else {
                "cutoff": plan.mixed.cutoff,
                "high_bits": plan.mixed.high_bits,
                "low_bits": plan.mixed.low_bits,
            }
        ),
        "select": list(plan.selection),
        "warnings": list(plan.warnings),
        "tensors": {
            name: {
                "process": a.process,
                "bits": a.bits,
                "rank": a.rank,
                "codebook": a.codebook.value,
                "block_size": a.block_size,
            }
            for name, a in plan.assignments.items()
        },
    }


def _plan_from_dict(data: dict) -> QuantPlan:
    try:
        d = data["defaults"]
        defaults = PlanDefaults(
            bits=d["bits"],
            rank=d["rank"],
            codebook=CodebookKind(d["codebook"]),
            block_size=d["block_size"],
        )
        mixed = None
        if data.get("mixed") is not None:
            m = data["mixed"]
            mixed = MixedPrecision(
                cutoff=m["cutoff"],
                high_bits=m["high_bits"],
                low_bits=m["low_bits"],
            )
        assignments = {
            name: TensorAssignment(
                process=t["process"],
                bits=t["bits"],
                rank=t["rank"],
                codebook=CodebookKind(t["codebook"]),
                block_size=t["block_size"],
            )
            for name, t in data["tensors"].items()
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed plan: {exc}") from exc
    return QuantPlan(
        assignments=assignments,
        defaults=defaults,
        mixed=mixed,
        selection=list(data.get("select", [])),
        warnings=list(data.get("warnings", [])),
    )


def save_plan(path, plan: QuantPlan):
    """Write a plan as indented JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_plan_to_dict(plan), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_plan(path) -> QuantPlan:
    """Read a plan written by save_plan."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return _plan_from_dict(data)
