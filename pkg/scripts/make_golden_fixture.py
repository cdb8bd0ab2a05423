"""Regenerate the committed golden fixture under tests/data/.

Produces a small weights container, quantizes it through the real CLI, and
freezes three artifacts: the checkpoint bytes, the expected reconstruction
arrays, and the inspect output.  Run from the repository root:

    python3 scripts/make_golden_fixture.py

If the checkpoint byte layout changes intentionally, rerun this script and
update the sha256 constants printed at the end inside tests/test_cli.py and
tests/test_acceptance.py.
"""

import contextlib
import hashlib
import io
import os
import sys

import numpy as np

from loftq import read_checkpoint, reconstruct_backbone, write_tensors
from loftq.cli import main

DATA_DIR = os.path.join(os.path.dirname(__file__), "..", "tests", "data")


def build_weights(path):
    rng = np.random.default_rng(20260815)
    tensors = {
        "enc.layers.0.attn.wq.weight": rng.standard_normal((24, 16)).astype(
            np.float32
        ),
        "enc.layers.1.mlp.fc1.weight": rng.standard_normal((18, 20)).astype(
            np.float32
        ),
        "enc.layers.0.attn.wq.bias": rng.standard_normal(24).astype(np.float32),
    }
    write_tensors(path, tensors)


def main_cli():
    os.makedirs(DATA_DIR, exist_ok=True)
    weights = os.path.join(DATA_DIR, "golden_weights.st")
    ckpt_path = os.path.join(DATA_DIR, "golden_2bit.lftq")
    expected_path = os.path.join(DATA_DIR, "golden_2bit_expected.npz")
    inspect_path = os.path.join(DATA_DIR, "golden_inspect.txt")

    build_weights(weights)
    code = main(
        [
            "quantize",
            "--input", weights,
            "--output", ckpt_path,
            "--bits", "2",
            "--rank", "3",
            "--steps", "2",
            "--block-size", "10",
            "--codebook", "nf",
            "--seed", "7",
        ]
    )
    if code != 0:
        raise SystemExit(f"quantize failed with exit code {code}")

    ckpt = read_checkpoint(ckpt_path)
    arrays = {}
    for i, (name, rec) in enumerate(ckpt.records.items()):
        arrays[f"name_{i}"] = np.array(name)
        arrays[f"backbone_{i}"] = reconstruct_backbone(ckpt, name)
        arrays[f"a_{i}"] = rec.a
        arrays[f"b_{i}"] = rec.b
        arrays[f"objective_{i}"] = np.array(rec.objective)
    np.savez(expected_path, **arrays)

    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main(["inspect", ckpt_path])
    if code != 0:
        raise SystemExit(f"inspect failed with exit code {code}")
    with open(inspect_path, "w", encoding="utf-8") as fh:
        fh.write(out.getvalue())

    for path in (weights, ckpt_path, expected_path, inspect_path):
        digest = hashlib.sha256(open(path, "rb").read()).hexdigest()
        print(f"{os.path.basename(path)}: sha256 {digest}")


if __name__ == "__main__":
    sys.exit(main_cli())
