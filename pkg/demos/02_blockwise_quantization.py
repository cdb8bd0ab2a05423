"""Blockwise quantization: codes, scales, and packed storage.

Quantizes a Gaussian matrix at several bit widths, inspects the error, and
shows the storage the packed format actually takes.
"""

import numpy as np

from loftq import (
    build_normalfloat_codebook,
    build_uniform_codebook,
    dequantize_matrix,
    quantize_matrix,
    unpack_codes,
)

rng = np.random.default_rng(1)
w = rng.standard_normal((128, 96))

# error versus bit width, both codebook families
print(f"matrix norm {np.linalg.norm(w):.2f}")
for bits in (2, 3, 4, 8):
    for label, cb in (
        ("uniform", build_uniform_codebook(bits)),
        ("nf", build_normalfloat_codebook(bits)),
    ):
        q = quantize_matrix(w, cb)
        err = np.linalg.norm(w - dequantize_matrix(q))
        print(f"  {bits}-bit {label:8s} error {err:8.3f}")

# what one quantized matrix holds
cb = build_normalfloat_codebook(2)
q = quantize_matrix(w, cb, block_size=64)
print(f"blocks: {q.block_count}, scales dtype {q.scales.dtype}, "
      f"packed bytes: {len(q.packed_codes)}")
print(f"  ({q.element_count} elements x 2 bits = "
      f"{q.element_count * 2 // 8} bytes)")

# codes are plain small integers once unpacked
codes = unpack_codes(q.packed_codes, q.codebook.bits, q.element_count)
print("code histogram:", np.bincount(codes, minlength=4))

# values already sitting on the dequantization grid round-trip exactly:
# quantizing the dequantized matrix reproduces codes, scales, and values
w2 = dequantize_matrix(q)
q2 = quantize_matrix(w2, cb, block_size=64)
print("re-quantization reproduces packed bytes:",
      q2.packed_codes == q.packed_codes)
print("re-quantization reproduces scales:",
      np.array_equal(q2.scales, q.scales))
print("second dequantization is bit-identical:",
      np.array_equal(dequantize_matrix(q2), w2))

# a block with no spread stores code 0 everywhere and reconstructs exactly
flat = np.full((4, 16), 2.5)
qf = quantize_matrix(flat, build_uniform_codebook(2), block_size=16)
print("constant block codes:",
      unpack_codes(qf.packed_codes, 2, flat.size)[:8], "...")
print("constant block exact:",
      np.array_equal(dequantize_matrix(qf), flat))

# blocks run over the row-major flattening, so block boundaries ignore
# the column count; a tail block shorter than block_size is fine
tall = rng.standard_normal((5, 7))
qt = quantize_matrix(tall, cb, block_size=16)
print(f"35 elements at block 16 -> {qt.block_count} blocks "
      f"(last one holds 3)")
