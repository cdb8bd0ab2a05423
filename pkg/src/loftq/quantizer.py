"""Blockwise simulated quantization of dense matrices.

A matrix is flattened row-major and cut into consecutive blocks of a fixed
number of elements (the final block may be shorter).  Each block is
normalized into its codebook's domain, encoded to integer codes, and the
codes are bit-packed.  Dequantization reverses the mapping and yields the
simulated high-precision matrix.  All arithmetic runs in float64; the
per-block scales are stored as float32, and normalization uses those rounded
scales so that a quantized matrix dequantizes identically before and after
serialization.
"""

from dataclasses import dataclass
from math import ceil

import numpy as np

from .codebooks import Codebook, EncodingRule, Normalization, _check_bits, encode_array
from .errors import FormatError

__all__ = [
    "QuantizedMatrix",
    "dequantize_matrix",
    "pack_codes",
    "quantize_matrix",
    "unpack_codes",
]


def pack_codes(codes, bits: int) -> bytes:
    """Bit-pack integer codes at ``bits`` bits each, LSB-first within a byte.

    The first code occupies the lowest-order bits of the first byte, and the
    final partial byte, if any, is zero-padded in its high bits.
    """
    _check_bits(bits)
    arr = np.asarray(codes)
    if arr.size == 0:
        return b""
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"codes must be integers, got dtype {arr.dtype}")
    if arr.min() < 0 or arr.max() >= (1 << bits):
        raise ValueError(f"codes out of range for {bits} bits")
    shifts = np.arange(bits, dtype=np.uint8)
    bit_stream = ((arr.reshape(-1, 1).astype(np.uint16) >> shifts) & 1).astype(np.uint8)
    return np.packbits(bit_stream.ravel(), bitorder="little").tobytes()


def unpack_codes(data: bytes, bits: int, count: int) -> np.ndarray:
    """Inverse of pack_codes; returns a uint8 array of ``count`` codes."""
    _check_bits(bits)
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    expected = (count * bits + 7) // 8
    if len(data) != expected:
        raise FormatError(
            f"packed code buffer has {len(data)} bytes, expected {expected} "
            f"for {count} codes at {bits} bits"
        )
    if count == 0:
        return np.zeros(0, dtype=np.uint8)
    raw = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    bit_rows = raw[: count * bits].reshape(count, bits)
    weights = (1 << np.arange(bits)).astype(np.uint16)
    return (bit_rows * weights).sum(axis=1).astype(np.uint8)


@dataclass
class QuantizedMatrix:
    """Packed codes plus per-block float32 scales for one matrix.

    Under min/max normalization ``scales`` has shape (n_blocks, 2) holding
    [min, max] per block; under absmax normalization it has shape (n_blocks,)
    holding the absolute maximum per block.
    """

    rows: int
    cols: int
    block_size: int
    codebook: Codebook
    packed_codes: bytes
    scales: np.ndarray

    @property
    def element_count(self) -> int:
        return self.rows * self.cols

    @property
    def block_count(self) -> int:
        return ceil(self.element_count / self.block_size)

    def validate(self):
        """Raise FormatError if the payload is inconsistent with the header."""
        if self.rows < 1 or self.cols < 1:
            raise FormatError(f"invalid matrix shape {self.rows}x{self.cols}")
        if self.block_size < 1:
            raise FormatError(f"invalid block size {self.block_size}")
        scales = np.asarray(self.scales)
        if scales.dtype != np.float32:
            raise FormatError(f"scales must be float32, got {scales.dtype}")
        n_blocks = self.block_count
        if self.codebook.normalization is Normalization.MINMAX:
            if scales.shape != (n_blocks, 2):
                raise FormatError(
                    f"expected {n_blocks}x2 min/max scales, got shape {scales.shape}"
                )
            if np.any(scales[:, 0] > scales[:, 1]):
                raise FormatError("block minimum exceeds block maximum")
        else:
            if scales.shape != (n_blocks,):
                raise FormatError(
                    f"expected {n_blocks} absmax scales, got shape {scales.shape}"
                )
            if np.any(scales < 0):
                raise FormatError("negative absmax scale")
        if not np.all(np.isfinite(scales)):
            raise FormatError("non-finite block scale")
        expected = (self.element_count * self.codebook.bits + 7) // 8
        if len(self.packed_codes) != expected:
            raise FormatError(
                f"packed codes hold {len(self.packed_codes)} bytes, "
                f"expected {expected}"
            )


def quantize_matrix(
    w,
    cb: Codebook,
    block_size: int = 64,
    rule: EncodingRule = EncodingRule.NEAREST_LEVEL,
) -> QuantizedMatrix:
    """Blockwise-quantize a matrix against a codebook.

    Blocks whose scale is degenerate (zero absolute maximum, or equal min and
    max) encode as all-zero codes and dequantize back to the constant block
    exactly.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {w.shape}")
    rows, cols = w.shape
    if rows < 1 or cols < 1:
        raise ValueError(f"matrix dimensions must be positive, got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("matrix contains non-finite values")
    if block_size < 1:
        raise ValueError(f"block size must be positive, got {block_size}")

    flat = w.reshape(-1)
    n = flat.size
    starts = np.arange(0, n, block_size)
    blk = np.arange(n) // block_size
    if cb.normalization is Normalization.MINMAX:
        mins = np.minimum.reduceat(flat, starts)
        maxs = np.maximum.reduceat(flat, starts)
        scales = np.stack([mins, maxs], axis=1).astype(np.float32)
        lo = scales[:, 0].astype(np.float64)
        span = scales[:, 1].astype(np.float64) - lo
        span_rep = span[blk]
        live = span_rep > 0.0
        normalized = np.where(
            live, (flat - lo[blk]) / np.where(live, span_rep, 1.0), 0.0
        )
    else:
        scales = np.maximum.reduceat(np.abs(flat), starts).astype(np.float32)
        rep = scales.astype(np.float64)[blk]
        live = rep > 0.0
        normalized = np.where(live, flat / np.where(live, rep, 1.0), 0.0)
    codes = encode_array(cb, normalized, rule=rule)
    codes[~live] = 0
    return QuantizedMatrix(
        rows=rows,
        cols=cols,
        block_size=block_size,
        codebook=cb,
        packed_codes=pack_codes(codes, cb.bits),
        scales=scales,
    )


def dequantize_matrix(qm: QuantizedMatrix) -> np.ndarray:
    """Decode a QuantizedMatrix back to a float64 matrix."""
    qm.validate()
    n = qm.element_count
    codes = unpack_codes(qm.packed_codes, qm.codebook.bits, n)
    lev = qm.codebook.levels[codes]
    blk = np.arange(n) // qm.block_size
    scales = np.asarray(qm.scales, dtype=np.float64)
    if qm.codebook.normalization is Normalization.MINMAX:
        lo = scales[blk, 0]
        hi = scales[blk, 1]
        vals = lo + lev * (hi - lo)
    else:
        vals = lev * scales[blk]
    return vals.reshape(qm.rows, qm.cols)
