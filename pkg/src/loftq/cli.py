"""Command-line interface.

Subcommands:
  quantize  read a tensor container, run the alternating initialization on
            the selected matrices, write a quantized checkpoint
  sweep     evaluate a (codebook, bits, rank, steps) grid and write a CSV of
            Frobenius/spectral discrepancies and wall times
  verify    recompute every stored objective from the original weights and
            the checkpoint, failing on mismatch
  inspect   print the metadata, codebooks, and compression accounting of a
            checkpoint

Exit codes: 0 success, 1 usage error, 2 file-format error, 3 numeric or
convergence failure.  Worker threads split tensors, never one tensor; BLAS
is pinned to one thread per worker so outputs are byte-identical for any
--threads value (default from LOFTQ_THREADS, else 1).
"""

import argparse
import csv
import hashlib
import itertools
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

from threadpoolctl import threadpool_limits

from .codebooks import CodebookKind
from .errors import ConvergenceError, FormatError
from .initialization import (
    BaselineInitConfig,
    LoftqConfig,
    Variant,
    discrepancy_report,
    loftq_init,
    qlora_init,
)
from .model_io import (
    QuantizedCheckpoint,
    make_record,
    read_checkpoint,
    read_tensors,
    write_checkpoint,
)
from .planner import (
    MixedPrecision,
    PlanDefaults,
    QuantPlan,
    TensorAssignment,
    build_plan,
    compression_ratio,
    manifest_from_shapes,
    ModelManifest,
    TensorInfo,
    Role,
)

__all__ = ["entrypoint", "main"]

_EXIT_OK = 0
_EXIT_USAGE = 1
_EXIT_FORMAT = 2
_EXIT_NUMERIC = 3

_OBJECTIVE_TOLERANCE = 1e-8


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; this CLI reserves 2 for format errors
    def error(self, message):
        raise _UsageError(message)


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _int_list(text):
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _codebook_list(text):
    out = []
    for part in text.split(","):
        if part == "":
            continue
        try:
            out.append(CodebookKind(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"unknown codebook {part!r}")
    return out


def _parse_mixed(text):
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"expected cutoff:high_bits:low_bits, got {text!r}"
        )
    try:
        cutoff, high, low = (int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers in {text!r}")
    try:
        return MixedPrecision(cutoff=cutoff, high_bits=high, low_bits=low)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="loftq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    q = sub.add_parser("quantize", help="quantize a model and write a checkpoint")
    q.add_argument("--input", required=True, help="tensor container to read")
    q.add_argument("--output", required=True, help="checkpoint file to write")
    q.add_argument("--bits", type=int, default=4)
    q.add_argument("--rank", type=_positive_int, default=16)
    q.add_argument("--steps", type=int, default=5)
    q.add_argument(
        "--codebook", choices=[k.value for k in CodebookKind], default="nf"
    )
    q.add_argument("--block-size", type=_positive_int, default=64)
    q.add_argument(
        "--variant", choices=[v.value for v in Variant], default="standard"
    )
    q.add_argument("--mixed", type=_parse_mixed, default=None,
                   help="cutoff:high_bits:low_bits layer scheme")
    q.add_argument("--select", action="append", default=None,
                   help="glob pattern of tensors to process (repeatable)")
    q.add_argument("--threads", type=_positive_int, default=None)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--report", default=None, help="write per-tensor metrics CSV")
    q.set_defaults(func=cmd_quantize)

    s = sub.add_parser("sweep", help="evaluate a parameter grid and write a CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--report", required=True, help="CSV file to write")
    s.add_argument("--bits", type=_int_list, default=[2, 4])
    s.add_argument("--rank", type=_int_list, default=[16])
    s.add_argument("--steps", type=_int_list, default=[0, 1, 5])
    s.add_argument("--codebook", type=_codebook_list,
                   default=[CodebookKind.NORMAL_FLOAT])
    s.add_argument("--block-size", type=_positive_int, default=64)
    s.add_argument("--select", action="append", default=None)
    s.add_argument("--threads", type=_positive_int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="recompute checkpoint objectives")
    v.add_argument("--input", required=True, help="original tensor container")
    v.add_argument("--output", required=True, help="checkpoint to verify")
    v.set_defaults(func=cmd_verify)

    i = sub.add_parser("inspect", help="print checkpoint metadata")
    i.add_argument("checkpoint")
    i.add_argument("--report", default=None,
                   help="metrics CSV whose wall times should be shown")
    i.set_defaults(func=cmd_inspect)
    return parser


def _thread_count(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("LOFTQ_THREADS", "").strip()
    if env:
        try:
            value = int(env)
        except ValueError:
            raise _UsageError(f"LOFTQ_THREADS must be an integer, got {env!r}")
        if value < 1:
            raise _UsageError(f"LOFTQ_THREADS must be positive, got {value}")
        return value
    return 1


def _run_ordered(worker, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [worker(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, items))


def _tensor_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}\x00{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _build_manifest(container) -> ModelManifest:
    return manifest_from_shapes({n: container.shape(n) for n in container.names()})


def _plan_for(args, manifest) -> QuantPlan:
    selection = args.select if args.select else ["*"]
    defaults = PlanDefaults(
        bits=args.bits,
        rank=args.rank,
        codebook=CodebookKind(args.codebook),
        block_size=args.block_size,
    )
    # an explicit --select opts embeddings in; the default selection skips them
    plan = build_plan(
        manifest,
        selection,
        defaults=defaults,
        mixed=args.mixed,
        include_embeddings=args.select is not None,
    )
    for warning in plan.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return plan


def _plan_echo(plan: QuantPlan, manifest: ModelManifest, args) -> dict:
    matrix_params = sum(e.count for e in manifest.entries)
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
        "steps": args.steps,
        "variant": args.variant,
        "seed": args.seed,
        "extra_params": manifest.total_params - matrix_params,
        "tensors": {
            e.name: {
                "rows": e.rows,
                "cols": e.cols,
                "layer_index": e.layer_index,
                "role": e.role.value,
                "process": plan.assignments[e.name].process,
                "bits": plan.assignments[e.name].bits,
                "rank": plan.assignments[e.name].rank,
                "codebook": plan.assignments[e.name].codebook.value,
                "block_size": plan.assignments[e.name].block_size,
            }
            for e in manifest.entries
        },
    }


def _init_tensor(w, asg: TensorAssignment, steps, variant, seed, name):
    if steps == 0:
        base = BaselineInitConfig(seed=_tensor_seed(seed, name))
        return qlora_init(
            w,
            asg.bits,
            asg.rank,
            base,
            codebook=asg.codebook,
            block_size=asg.block_size,
        )
    cfg = LoftqConfig(
        bits=asg.bits,
        rank=asg.rank,
        steps=steps,
        codebook=asg.codebook,
        block_size=asg.block_size,
        variant=Variant(variant),
    )
    return loftq_init(w, cfg)


def cmd_quantize(args) -> int:
    if args.steps < 0:
        raise _UsageError(f"--steps must be non-negative, got {args.steps}")
    if not 1 <= args.bits <= 8:
        raise _UsageError(f"--bits must lie in [1, 8], got {args.bits}")
    threads = _thread_count(args)
    container = read_tensors(args.input)
    manifest = _build_manifest(container)
    plan = _plan_for(args, manifest)
    names = [e.name for e in manifest.entries if plan.assignments[e.name].process]

    def worker(name):
        w = container.load(name)
        start = time.perf_counter()
        result = _init_tensor(
            w, plan.assignments[name], args.steps, args.variant, args.seed, name
        )
        record = make_record(
            w,
            result.q,
            result.factors.a,
            result.factors.b,
            args.steps,
            args.variant,
        )
        elapsed = time.perf_counter() - start
        spectral = (
            discrepancy_report(w, result)["spectral"] if args.report else None
        )
        return record, elapsed, spectral

    with threadpool_limits(limits=1):
        outcomes = _run_ordered(worker, names, threads)

    ckpt = QuantizedCheckpoint(
        records={name: rec for name, (rec, _, _) in zip(names, outcomes)},
        plan_echo=_plan_echo(plan, manifest, args),
    )
    write_checkpoint(args.output, ckpt)

    for name, (rec, elapsed, _) in zip(names, outcomes):
        asg = plan.assignments[name]
        print(
            f"{name}: bits={asg.bits} rank={asg.rank} steps={args.steps} "
            f"frobenius={rec.objective:.6e} time={elapsed:.3f}s"
        )
    print(f"wrote {len(names)} quantized tensors to {args.output}")

    if args.report:
        with open(args.report, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["tensor", "codebook", "bits", "rank", "T", "frobenius",
                 "spectral", "seconds"]
            )
            for name, (rec, elapsed, spectral) in zip(names, outcomes):
                asg = plan.assignments[name]
                writer.writerow(
                    [name, asg.codebook.value, asg.bits, asg.rank, args.steps,
                     f"{rec.objective:.12g}", f"{spectral:.12g}",
                     f"{elapsed:.6f}"]
                )
    return _EXIT_OK


def cmd_sweep(args) -> int:
    threads = _thread_count(args)
    for bits in args.bits:
        if not 1 <= bits <= 8:
            raise _UsageError(f"--bits values must lie in [1, 8], got {bits}")
    for steps in args.steps:
        if steps < 0:
            raise _UsageError(f"--steps values must be non-negative, got {steps}")
    for rank in args.rank:
        if rank < 1:
            raise _UsageError(f"--rank values must be positive, got {rank}")
    if not (args.bits and args.steps and args.rank and args.codebook):
        raise _UsageError("sweep grid is empty")
    steps_list = list(args.steps)
    if 0 not in steps_list:
        steps_list.insert(0, 0)  # always include the no-refinement baseline row

    container = read_tensors(args.input)
    manifest = _build_manifest(container)
    selection = args.select if args.select else ["*"]
    plan = build_plan(
        manifest,
        selection,
        defaults=PlanDefaults(),
        include_embeddings=args.select is not None,
    )
    for warning in plan.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    names = [e.name for e in manifest.entries if plan.assignments[e.name].process]
    if not names:
        print("warning: selection matched no tensors; writing empty report",
              file=sys.stderr)

    grid = [
        (name, kind, bits, rank, steps)
        for name, kind, bits, rank, steps in itertools.product(
            names, args.codebook, args.bits, args.rank, steps_list
        )
        if rank <= min(container.shape(name))
    ]

    def worker(cell):
        name, kind, bits, rank, steps = cell
        w = container.load(name)
        cfg = LoftqConfig(
            bits=bits,
            rank=rank,
            steps=steps,
            codebook=kind,
            block_size=args.block_size,
        )
        start = time.perf_counter()
        result = loftq_init(w, cfg)
        metrics = discrepancy_report(w, result)
        elapsed = time.perf_counter() - start
        return metrics["frobenius"], metrics["spectral"], elapsed

    with threadpool_limits(limits=1):
        rows = _run_ordered(worker, grid, threads)

    with open(args.report, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["tensor", "codebook", "bits", "rank", "T", "frobenius", "spectral",
             "seconds"]
        )
        for (name, kind, bits, rank, steps), (fro, spectral, elapsed) in zip(grid, rows):
            writer.writerow(
                [name, kind.value, bits, rank, steps, f"{fro:.12g}",
                 f"{spectral:.12g}", f"{elapsed:.6f}"]
            )
    print(f"wrote {len(grid)} sweep rows to {args.report}")
    return _EXIT_OK


def cmd_verify(args) -> int:
    container = read_tensors(args.input)
    ckpt = read_checkpoint(args.output)
    failures = []
    for name, rec in ckpt.records.items():
        if name not in container:
            print(f"verify: tensor '{name}' missing from {args.input}",
                  file=sys.stderr)
            return _EXIT_FORMAT
        w = container.load(name)
        if (rec.q.rows, rec.q.cols) != w.shape:
            print(
                f"verify: tensor '{name}' shape {w.shape} does not match "
                f"checkpoint {rec.q.rows}x{rec.q.cols}",
                file=sys.stderr,
            )
            return _EXIT_FORMAT
        fresh = make_record(w, rec.q, rec.a, rec.b, rec.steps, rec.variant)
        drift = abs(fresh.objective - rec.objective)
        if drift > _OBJECTIVE_TOLERANCE:
            failures.append((name, rec.objective, fresh.objective, drift))
    if failures:
        for name, stored, recomputed, drift in failures:
            print(
                f"verify: tensor '{name}' objective drifted: stored "
                f"{stored:.12e}, recomputed {recomputed:.12e} "
                f"(|diff| {drift:.3e} > {_OBJECTIVE_TOLERANCE:.0e})",
                file=sys.stderr,
            )
        return _EXIT_NUMERIC
    print(f"verified {len(ckpt.records)} tensors against {args.input}")
    return _EXIT_OK


def _manifest_from_echo(echo: dict) -> tuple[ModelManifest, QuantPlan] | None:
    tensors = echo.get("tensors")
    defaults_raw = echo.get("defaults")
    if not isinstance(tensors, dict) or not isinstance(defaults_raw, dict):
        return None
    try:
        entries = [
            TensorInfo(
                name=name,
                rows=entry["rows"],
                cols=entry["cols"],
                layer_index=entry.get("layer_index"),
                role=Role(entry.get("role", "other")),
            )
            for name, entry in tensors.items()
        ]
        total = sum(e.count for e in entries) + int(echo.get("extra_params", 0))
        manifest = ModelManifest(entries=entries, total_params=total)
        defaults = PlanDefaults(
            bits=defaults_raw["bits"],
            rank=defaults_raw["rank"],
            codebook=CodebookKind(defaults_raw["codebook"]),
            block_size=defaults_raw["block_size"],
        )
        mixed = None
        if echo.get("mixed") is not None:
            m = echo["mixed"]
            mixed = MixedPrecision(
                cutoff=m["cutoff"], high_bits=m["high_bits"], low_bits=m["low_bits"]
            )
        assignments = {
            name: TensorAssignment(
                process=entry["process"],
                bits=entry["bits"],
                rank=entry["rank"],
                codebook=CodebookKind(entry["codebook"]),
                block_size=entry["block_size"],
            )
            for name, entry in tensors.items()
        }
    except (KeyError, TypeError, ValueError):
        return None
    plan = QuantPlan(
        assignments=assignments,
        defaults=defaults,
        mixed=mixed,
        selection=list(echo.get("select", [])),
    )
    return manifest, plan


def cmd_inspect(args) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    times = {}
    if args.report:
        with open(args.report, "r", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                times[row["tensor"]] = row["seconds"]

    print(f"checkpoint format version {ckpt.version}")
    print(f"tensors: {len(ckpt.records)}")
    for name, rec in ckpt.records.items():
        q = rec.q
        line = (
            f"  {name}: shape={q.rows}x{q.cols} bits={q.codebook.bits} "
            f"rank={rec.a.shape[1]} steps={rec.steps} variant={rec.variant} "
            f"codebook={q.codebook.kind.value} block={q.block_size} "
            f"blocks={q.block_count} objective={rec.objective:.12e}"
        )
        if name in times:
            line += f" time={float(times[name]):.3f}s"
        print(line)

    seen = set()
    for rec in ckpt.records.values():
        cb = rec.q.codebook
        key = (cb.kind, cb.bits, cb.quantile_clip, cb.levels.tobytes())
        if key in seen:
            continue
        seen.add(key)
        levels = " ".join(f"{v:.17g}" for v in cb.levels)
        print(f"codebook {cb.kind.value} {cb.bits}-bit "
              f"(clip={cb.quantile_clip:.6g}): [{levels}]")

    rebuilt = _manifest_from_echo(ckpt.plan_echo)
    if rebuilt is not None:
        manifest, plan = rebuilt
        report = compression_ratio(manifest, plan)
        avg = "n/a" if report.average_bits is None else f"{report.average_bits:.3f}"
        print(
            f"compression: {report.ratio_percent:.2f}% of a 16-bit original "
            f"({report.compressed_bits} / {report.original_bits} bits), "
            f"trainable {report.trainable_percent:.3f}%, "
            f"average code width {avg} bits"
        )
    return _EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return _EXIT_FORMAT
    except ConvergenceError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return _EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"format error: cannot read {exc.filename}", file=sys.stderr)
        return _EXIT_FORMAT
    except (ValueError, KeyError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    except OSError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return _EXIT_FORMAT


def entrypoint():
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
