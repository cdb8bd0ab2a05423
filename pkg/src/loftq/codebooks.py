"""Quantization codebooks: uniform and normal-float lookup tables.

A codebook is the ordered table of ``2**bits`` reconstruction levels used by
the blockwise quantizer.  Uniform tables spread levels evenly over [0, 1] and
pair with per-block min/max scaling; normal-float tables place levels at
clipped Gaussian quantiles over [-1, 1] and pair with per-block
absolute-maximum scaling.
"""

import enum
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import FormatError

__all__ = [
    "Codebook",
    "CodebookKind",
    "EncodingRule",
    "Normalization",
    "NormalFloatParams",
    "build_normalfloat_codebook",
    "build_uniform_codebook",
    "codebook_from_bytes",
    "codebook_to_bytes",
    "decode_array",
    "decode_scalar",
    "encode_array",
    "encode_scalar",
]


class CodebookKind(enum.Enum):
    UNIFORM = "uniform"
    NORMAL_FLOAT = "nf"


class Normalization(enum.Enum):
    """How a data block is mapped into the codebook domain."""

    MINMAX = "minmax"
    ABSMAX = "absmax"


class EncodingRule(enum.Enum):
    """How a normalized value is mapped to an integer code."""

    # nearest reconstruction level in value space, ties to the higher code
    NEAREST_LEVEL = "nearest"
    # classical rounding in normalized-CDF space
    CDF_ROUND = "cdf-round"


def _check_bits(bits):
    if isinstance(bits, bool) or not isinstance(bits, (int, np.integer)):
        raise ValueError(f"bits must be an integer, got {bits!r}")
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must lie in [1, 8], got {bits}")


@dataclass(frozen=True)
class NormalFloatParams:
    """Construction parameters for normal-float tables.

    quantile_clip is the probability mass trimmed from each Gaussian tail so
    that the extreme quantiles stay finite.  sigma scales the Gaussian before
    the table is renormalized to [-1, 1]; the renormalization cancels it, so
    it exists only as an explicit knob.  force_zero_level switches to an
    asymmetric table whose halves are rescaled separately around an exact 0
    level.
    """

    quantile_clip: float = 0.0323
    sigma: float = 1.0
    force_zero_level: bool = False

    def __post_init__(self):
        if not 0.0 < self.quantile_clip < 0.5:
            raise ValueError(
                f"quantile_clip must lie in (0, 0.5), got {self.quantile_clip}"
            )
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True, eq=False)
class Codebook:
    """An immutable table of ``2**bits`` strictly increasing levels.

    Uniform tables span [0, 1] and use min/max block normalization;
    normal-float tables span [-1, 1] and use absolute-maximum block
    normalization.  quantile_clip records the tail mass a normal-float table
    was built with (0.0 for uniform tables).
    """

    bits: int
    kind: CodebookKind
    levels: np.ndarray
    normalization: Normalization
    quantile_clip: float = 0.0

    def __post_init__(self):
        _check_bits(self.bits)
        levels = np.ascontiguousarray(self.levels, dtype=np.float64)
        if levels.shape != (1 << self.bits,):
            raise ValueError(
                f"expected {1 << self.bits} levels for {self.bits} bits, "
                f"got shape {levels.shape}"
            )
        if not np.all(np.isfinite(levels)):
            raise ValueError("codebook levels must be finite")
        if not np.all(np.diff(levels) > 0.0):
            raise ValueError("codebook levels must be strictly increasing")
        if self.kind is CodebookKind.UNIFORM:
            lo, hi, norm = 0.0, 1.0, Normalization.MINMAX
        else:
            lo, hi, norm = -1.0, 1.0, Normalization.ABSMAX
        if levels[0] != lo or levels[-1] != hi:
            raise ValueError(
                f"{self.kind.value} codebook must span [{lo}, {hi}], "
                f"got [{levels[0]}, {levels[-1]}]"
            )
        if self.normalization is not norm:
            raise ValueError(
                f"{self.kind.value} codebooks use {norm.value} normalization"
            )
        levels.flags.writeable = False
        object.__setattr__(self, "levels", levels)

    @property
    def level_count(self):
        return 1 << self.bits


def build_uniform_codebook(bits: int) -> Codebook:
    """Evenly spaced levels ``i / (2**bits - 1)`` over [0, 1]."""
    _check_bits(bits)
    n = 1 << bits
    levels = np.arange(n, dtype=np.float64) / (n - 1)
    return Codebook(
        bits=bits,
        kind=CodebookKind.UNIFORM,
        levels=levels,
        normalization=Normalization.MINMAX,
    )


def build_normalfloat_codebook(
    bits: int, params: NormalFloatParams | None = None
) -> Codebook:
    """Gaussian-quantile levels over [-1, 1].

    Level i sits at the quantile ``delta + i * (1 - 2*delta) / (2**bits - 1)``
    of a Gaussian, where delta is ``params.quantile_clip``; the table is then
    rescaled so its extreme levels are exactly -1 and +1.  The default
    construction is exactly odd-symmetric and, having an even number of
    levels, contains no exact zero.  With ``force_zero_level`` the negative
    and positive halves are rescaled separately around an exact 0 level and
    the table is no longer symmetric.
    """
    _check_bits(bits)
    if params is None:
        params = NormalFloatParams()
    n = 1 << bits
    delta = params.quantile_clip
    if params.force_zero_level:
        if bits < 2:
            raise ValueError("force_zero_level needs at least 2 bits")
        half = n // 2
        neg = ndtri(np.linspace(delta, 0.5, half + 1))[:-1] * params.sigma
        pos = ndtri(np.linspace(0.5, 1.0 - delta, half))[1:] * params.sigma
        levels = np.concatenate([neg / -neg[0], [0.0], pos / pos[-1]])
    else:
        step = (1.0 - 2.0 * delta) / (n - 1)
        raw = ndtri(delta + step * np.arange(n, dtype=np.float64)) * params.sigma
        raw = 0.5 * (raw - raw[::-1])  # exact odd symmetry
        levels = raw / raw[-1]
    if not np.all(np.isfinite(levels)):
        raise ValueError(
            f"quantile_clip {delta} is too extreme for finite quantiles"
        )
    return Codebook(
        bits=bits,
        kind=CodebookKind.NORMAL_FLOAT,
        levels=levels,
        normalization=Normalization.ABSMAX,
        quantile_clip=delta,
    )


def encode_array(
    cb: Codebook, values, rule: EncodingRule = EncodingRule.NEAREST_LEVEL
) -> np.ndarray:
    """Map normalized values to uint8 codes.

    Inputs outside the codebook domain are clamped to it first.  Under
    NEAREST_LEVEL the closest level wins and exact midpoints round to the
    higher code; CDF_ROUND instead rounds in the normalized cumulative
    space the table was built from.
    """
    levels = cb.levels
    x = np.clip(np.asarray(values, dtype=np.float64), levels[0], levels[-1])
    if rule is EncodingRule.CDF_ROUND:
        return _encode_cdf(cb, x)
    idx = np.searchsorted(levels, x, side="left")
    hi = np.minimum(idx, levels.size - 1)
    lo = np.maximum(idx - 1, 0)
    pick_hi = (levels[hi] - x) <= (x - levels[lo])
    return np.where(pick_hi, hi, lo).astype(np.uint8)


def _encode_cdf(cb: Codebook, x: np.ndarray) -> np.ndarray:
    # defined w.r.t. the symmetric construction even for force-zero tables
    n = cb.levels.size
    if cb.kind is CodebookKind.UNIFORM:
        f = x
    else:
        delta = cb.quantile_clip
        scale = ndtri(1.0 - delta)
        f = (ndtr(x * scale) - delta) / (1.0 - 2.0 * delta)
    codes = np.floor(f * (n - 1) + 0.5)
    return np.clip(codes, 0, n - 1).astype(np.uint8)


def encode_scalar(
    cb: Codebook, value: float, rule: EncodingRule = EncodingRule.NEAREST_LEVEL
) -> int:
    """Encode a single normalized value; see encode_array."""
    return int(encode_array(cb, value, rule=rule))


def decode_array(cb: Codebook, codes) -> np.ndarray:
    """Look up reconstruction levels for an array of codes."""
    codes = np.asarray(codes)
    if codes.size and (codes.min() < 0 or codes.max() >= cb.level_count):
        raise ValueError(f"codes out of range for {cb.bits}-bit codebook")
    return cb.levels[codes]


def decode_scalar(cb: Codebook, code: int) -> float:
    """Look up the reconstruction level for one code."""
    code = int(code)
    if not 0 <= code < cb.level_count:
        raise ValueError(
            f"code {code} out of range for {cb.bits}-bit codebook"
        )
    return float(cb.levels[code])


_KIND_TAGS = {CodebookKind.UNIFORM: 0, CodebookKind.NORMAL_FLOAT: 1}
_TAG_KINDS = {tag: kind for kind, tag in _KIND_TAGS.items()}


def codebook_to_bytes(cb: Codebook) -> bytes:
    """Serialize: kind tag u8, bits u8, quantile_clip f64 LE, levels f64 LE."""
    head = struct.pack("<BBd", _KIND_TAGS[cb.kind], cb.bits, cb.quantile_clip)
    return head + cb.levels.astype("<f8").tobytes()


def codebook_from_bytes(buf, offset: int = 0) -> tuple[Codebook, int]:
    """Parse a serialized codebook; returns (codebook, bytes consumed)."""
    buf = memoryview(buf)
    if len(buf) - offset < 10:
        raise FormatError("codebook blob truncated")
    tag, bits, clip = struct.unpack_from("<BBd", buf, offset)
    if tag not in _TAG_KINDS:
        raise FormatError(f"unknown codebook kind tag {tag}")
    if not 1 <= bits <= 8:
        raise FormatError(f"codebook bits {bits} out of range")
    n = 1 << bits
    body = 10 + 8 * n
    if len(buf) - offset < body:
        raise FormatError("codebook blob truncated")
    levels = np.frombuffer(buf, dtype="<f8", count=n, offset=offset + 10).copy()
    kind = _TAG_KINDS[tag]
    norm = (
        Normalization.MINMAX
        if kind is CodebookKind.UNIFORM
        else Normalization.ABSMAX
    )
    try:
        cb = Codebook(
            bits=bits,
            kind=kind,
            levels=levels,
            normalization=norm,
            quantile_clip=clip,
        )
    except ValueError as exc:
        raise FormatError(f"invalid codebook levels: {exc}") from exc
    return cb, body
