"""Command-line entry point: ``fadnet <command> ...``.

Exit codes: 0 success, 2 usage or input error, 3 data/format error,
4 numerical failure.  Records are written as JSON Lines; every command that
takes ``--out`` also writes ``run.json`` describing how to rerun it.
"""

import argparse
import datetime
import json
import logging
import os
import subprocess
import sys
import time
import warnings

import numpy as np

from . import __version__
from . import config as cfgmod
from .errors import ConfigError, ContractError, DimensionError, FormatError, NumericalError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
KERNELS = ("patch_corr", "pointwise_corr", "warp", "conv2d")

log = logging.getLogger("fadnet")


class UsageError(Exception):
    """Bad arguments or missing inputs (exit 2)."""


# -- helpers ---------------------------------------------------------------


def _json_safe(value):
    # NaN/inf are not valid JSON; report them as null
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def _emit(record, stream=None):
    (stream or sys.stdout).write(json.dumps(_json_safe(record), sort_keys=True, allow_nan=False) + "\n")


def _version():
    try:
        here = os.path.dirname(os.path.abspath(__file__))
        rev = subprocess.run(
            ["git", "describe", "--always", "--dirty"], cwd=here, capture_output=True, text=True, timeout=5
        )
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _require_file(path, what):
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")
    return path


def _prepare_out(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc.strerror}") from None
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory is not writable: {path}")
    return path


def _load_experiment(args):
    base = cfgmod.PRESETS[args.preset]()
    return cfgmod.load(args.config, base) if args.config else base


_PATH_ARGS = {"out", "train", "test", "config", "resume", "checkpoint", "left", "right", "data", "predictions", "png"}


def _recorded_args(args):
    # absolute paths so the manifest can be rerun from any working directory
    return {
        k: os.path.abspath(v) if k in _PATH_ARGS and isinstance(v, str) else v
        for k, v in sorted(vars(args).items())
        if k != "func"
    }


def _write_run_manifest(out_dir, args, cfg, inputs, outputs, started):
    manifest = {
        "command": args.command,
        "args": _recorded_args(args),
        "config": cfgmod.to_dict(cfg) if cfg is not None else None,
        "seed": getattr(args, "seed", None) if cfg is None else cfg.train.seed,
        "started": started,
        "finished": _now(),
        "inputs": inputs,
        "outputs": sorted(outputs),
        "version": _version(),
    }
    path = os.path.join(out_dir, "run.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _read_checkpoint(path):
    from .checkpoint import load_model

    with open(_require_file(path, "checkpoint"), "rb") as fh:
        data = fh.read()
    model, _, _ = load_model(data)
    return model


# -- gen-data ---------------------------------------------------------------


def cmd_gen_data(args):
    from .data import generate_dataset, save_sample, write_manifest
    from .data.stereogram import warp_consistency_error

    started = _now()
    if args.n < 1 or args.height < 1 or args.width < 1:
        raise UsageError("n, height and width must be positive")
    out = _prepare_out(args.out)
    samples = generate_dataset(
        args.n, args.height, args.width, args.seed, max_disparity=args.max_disparity, dot_size=args.dot_size
    )
    entries = []
    outputs = []
    for s in samples:
        paths = save_sample(out, s)
        entries.append(paths)
        outputs.extend(os.path.basename(p) for p in paths)
        _emit({"id": s.source_id, "warp_mae": warp_consistency_error(s)})
    manifest = os.path.join(out, "manifest.txt")
    write_manifest(manifest, entries)
    outputs.append("manifest.txt")
    _write_run_manifest(out, args, None, [], outputs, started)
    return EXIT_OK


# -- train -------------------------------------------------------------------


def _load_dataset(path, what):
    from .data import load_manifest

    _require_file(path, what)
    try:
        samples = load_manifest(path)
    except FileNotFoundError as exc:
        raise UsageError(f"{what} references a missing file: {exc.filename}") from None
    if not samples:
        raise UsageError(f"{what} lists no samples: {path}")
    return samples


def cmd_train(args):
    from .network import FADNet
    from .plotting import training_curves
    from .trainer import Trainer

    started = _now()
    cfg = _load_experiment(args)
    train_samples = _load_dataset(args.train, "training manifest")
    test_samples = _load_dataset(args.test, "test manifest") if args.test else []
    out = _prepare_out(args.out)
    if args.resume:
        with open(_require_file(args.resume, "resume checkpoint"), "rb") as fh:
            trainer = Trainer.from_checkpoint(fh.read(), train_samples, test_samples, cfg.train, cfg.network)
    else:
        trainer = Trainer(FADNet(cfg.network), train_samples, test_samples, cfg.train)

    outputs = {"metrics.jsonl", "curves.png"}
    log_path = os.path.join(out, "metrics.jsonl")
    log_fh = open(log_path, "a" if args.resume else "w", encoding="utf-8")

    def on_record(record):
        _emit(record, log_fh)
        log_fh.flush()
        _emit(record)

    def on_round_end(round_index, data):
        name = f"round{round_index}.ckpt"
        with open(os.path.join(out, name), "wb") as fh:
            fh.write(data)
        outputs.add(name)

    stop = tuple(int(p) for p in args.stop_after.split(",")) if args.stop_after else None
    try:
        trainer.run(stop_after=stop, on_record=on_record, on_round_end=on_round_end)
    except NumericalError as exc:
        with open(os.path.join(out, "failure.json"), "w", encoding="utf-8") as fh:
            json.dump({"error": str(exc), "snapshot": exc.snapshot}, fh, indent=2, sort_keys=True)
        raise
    finally:
        log_fh.close()
    if trainer.state.round <= cfg.train.loss_schedule.num_rounds:
        with open(os.path.join(out, "last.ckpt"), "wb") as fh:
            fh.write(trainer.checkpoint_bytes())
        outputs.add("last.ckpt")
    with open(log_path, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    training_curves(os.path.join(out, "curves.png"), records)
    inputs = [os.path.abspath(p) for p in (args.train, args.test, args.config, args.resume) if p]
    _write_run_manifest(out, args, cfg, inputs, outputs, started)
    return EXIT_OK


# -- infer -------------------------------------------------------------------


def cmd_infer(args):
    from .data import read_image, save_pfm
    from .inference import predict_disparity
    from .plotting import save_disparity_png

    started = _now()
    model = _read_checkpoint(args.checkpoint)
    left = read_image(_require_file(args.left, "left image"))
    right = read_image(_require_file(args.right, "right image"))
    if left.shape != right.shape:
        raise UsageError(f"left image {left.shape[1:]} and right image {right.shape[1:]} differ in size")
    t0 = time.perf_counter()
    disp = predict_disparity(model, left[None], right[None])[0]
    elapsed_ms = (time.perf_counter() - t0) * 1000.0
    out_dir = os.path.dirname(os.path.abspath(args.out))
    _prepare_out(out_dir)
    save_pfm(args.out, disp.astype(np.float32))
    outputs = [os.path.basename(args.out)]
    if args.png:
        save_disparity_png(args.png, disp, vmax=args.vmax)
        outputs.append(os.path.basename(args.png))
    _emit({"output": args.out, "inference_ms": round(elapsed_ms, 3), "height": disp.shape[0], "width": disp.shape[1]})
    if args.manifest:
        _write_run_manifest(
            out_dir, args, None, [os.path.abspath(p) for p in (args.checkpoint, args.left, args.right)], outputs, started
        )
    return EXIT_OK


# -- eval --------------------------------------------------------------------


def _prediction_source(args, samples):
    if args.checkpoint:
        from .inference import predict_samples

        model = _read_checkpoint(args.checkpoint)
        preds = predict_samples(model, samples)
        return {s.source_id: p for s, p in zip(samples, preds)}
    from .data import load_pfm

    preds = {}
    for s in samples:
        path = os.path.join(args.predictions, s.source_id + ".pfm")
        if os.path.isfile(path):
            preds[s.source_id] = load_pfm(path, channels=1)[0]
    return preds


def cmd_eval(args):
    from .losses import d1_rate, epe
    from .plotting import eval_figure, save_disparity_png

    started = _now()
    if bool(args.checkpoint) == bool(args.predictions):
        raise UsageError("give exactly one of --checkpoint or --predictions")
    if args.predictions and not os.path.isdir(args.predictions):
        raise UsageError(f"predictions directory not found: {args.predictions}")
    samples = _load_dataset(args.data, "evaluation manifest")
    with_gt = [s for s in samples if s.gt_disparity is not None]
    preds = _prediction_source(args, with_gt)
    out = _prepare_out(args.out) if args.out else None
    log_fh = open(os.path.join(out, "metrics.jsonl"), "w", encoding="utf-8") if out else None
    outputs = ["metrics.jsonl"] if out else []

    def emit(record):
        _emit(record)
        if log_fh:
            _emit(record, log_fh)

    skipped = []
    rows = []
    for s in samples:
        if s.gt_disparity is None:
            warnings.warn(f"sample {s.source_id}: no ground truth, skipped")
            skipped.append(s.source_id)
            emit({"id": s.source_id, "skipped": "missing ground truth"})
            continue
        if s.source_id not in preds:
            warnings.warn(f"sample {s.source_id}: no prediction, skipped")
            skipped.append(s.source_id)
            emit({"id": s.source_id, "skipped": "missing prediction"})
            continue
        pred = preds[s.source_id]
        mask = s.mask()
        row = {
            "id": s.source_id,
            "epe": epe(pred, s.gt_disparity, mask),
            "d1_all": d1_rate(pred, s.gt_disparity, mask),
            "valid_pixels": int(mask.sum()),
        }
        rows.append(row)
        emit(row)
        if out and len(rows) <= args.figures:
            name = f"eval_{s.source_id}.png"
            eval_figure(os.path.join(out, name), s.left, pred, s.gt_disparity, mask, title=f"{s.source_id}  EPE {row['epe']:.3f}")
            save_disparity_png(os.path.join(out, f"disp_{s.source_id}.png"), pred, vmax=float(np.max(s.gt_disparity[mask])) if mask.any() else None)
            outputs.extend([name, f"disp_{s.source_id}.png"])
    summary = {
        "summary": True,
        "samples": len(rows),
        "skipped": len(skipped),
        "epe": float(np.mean([r["epe"] for r in rows])) if rows else 0.0,
        "d1_all": float(np.mean([r["d1_all"] for r in rows])) if rows else 0.0,
    }
    emit(summary)
    if log_fh:
        log_fh.close()
        inputs = [os.path.abspath(p) for p in (args.data, args.checkpoint or args.predictions)]
        _write_run_manifest(out, args, None, inputs, outputs, started)
    return EXIT_OK


# -- bench -------------------------------------------------------------------


def parse_shape(text):
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"shape must look like NxCxHxW, got {text!r}") from None
    if len(dims) != 4:
        raise UsageError(f"shape must have 4 dimensions NxCxHxW, got {text!r}")
    if min(dims) < 1:
        raise UsageError(f"shape dimensions must be positive, got {text!r}")
    return dims


def _bench_case(kernel, shape, args, rng):
    """Return (callable, multiply-accumulates per call)."""
    from . import ops
    from .stereo_ops import CorrelationConfig, _correlate, warp_by_disparity

    n, c, h, w = shape
    a = rng.standard_normal(shape).astype(np.float32)
    b = rng.standard_normal(shape).astype(np.float32)
    if kernel in ("patch_corr", "pointwise_corr"):
        k = args.k if kernel == "patch_corr" else 0
        corr = CorrelationConfig(kernel_half_size=k, max_range=args.max_range, shift_mode=args.shift_mode)
        shifts = corr.shifts
        macs = n * len(shifts) * h * w * c * (2 * k + 1) ** 2
        scale = 1.0 / c
        if kernel == "pointwise_corr" and args.with_preconv:
            from .stereo_ops import pointwise_correlation
            from .tensor import Tensor, no_grad

            weight = Tensor(rng.standard_normal((c, c, 3, 3)).astype(np.float32) * 0.1)
            ta, tb = Tensor(a), Tensor(b)

            def run():
                with no_grad():
                    pointwise_correlation(ta, tb, weight, cfg=corr)

            return run, macs + 2 * n * h * w * c * c * 9
        return (lambda: _correlate(a, b, shifts, k, scale)), macs
    if kernel == "warp":
        from .tensor import Tensor, no_grad

        disp = Tensor(rng.uniform(0, w / 4, size=(n, 1, h, w)).astype(np.float32))
        right = Tensor(a)

        def run():
            with no_grad():
                warp_by_disparity(right, disp)

        return run, 2 * n * c * h * w
    if kernel == "conv2d":
        from .tensor import Tensor, no_grad

        weight = Tensor(rng.standard_normal((c, c, 3, 3)).astype(np.float32))
        x = Tensor(a)

        def run():
            with no_grad():
                ops.conv2d(x, weight, None, stride=1, padding=1)

        return run, n * c * h * w * c * 9
    raise UsageError(f"unknown kernel {kernel!r}; choose from {', '.join(KERNELS)}")


def cmd_bench(args):
    from .plotting import bench_figure

    started = _now()
    kernels = [k.strip() for k in args.kernel.split(",") if k.strip()]
    for k in kernels:
        if k not in KERNELS:
            raise UsageError(f"unknown kernel {k!r}; choose from {', '.join(KERNELS)}")
    shape = parse_shape(args.shape)
    if args.reps < 1 or args.warmup < 0:
        raise UsageError("reps must be >= 1 and warmup >= 0")
    rng = np.random.default_rng(args.seed)
    rows = []
    for kernel in kernels:
        run, macs = _bench_case(kernel, shape, args, rng)
        for _ in range(args.warmup):
            run()
        times = np.empty(args.reps)
        for i in range(args.reps):
            t0 = time.perf_counter()
            run()
            times[i] = time.perf_counter() - t0
        mean = float(times.mean())
        row = {
            "kernel": kernel,
            "shape": "x".join(map(str, shape)),
            "reps": args.reps,
            "warmup": args.warmup,
            "mean_ms": mean * 1000.0,
            "min_ms": float(times.min()) * 1000.0,
            "macs": int(macs),
            "gmac_per_s": macs / mean / 1e9,
        }
        if kernel in ("patch_corr", "pointwise_corr"):
            row["max_range"] = args.max_range
            row["k"] = args.k if kernel == "patch_corr" else 0
        rows.append(row)
        _emit(row)
    if args.out:
        out = _prepare_out(args.out)
        with open(os.path.join(out, "bench.jsonl"), "w", encoding="utf-8") as fh:
            for row in rows:
                _emit(row, fh)
        bench_figure(os.path.join(out, "bench.png"), rows)
        _write_run_manifest(out, args, None, [], ["bench.jsonl", "bench.png"], started)
    return EXIT_OK


# -- config / rerun ------------------------------------------------------------


def cmd_dump_config(args):
    cfg = _load_experiment(args)
    text = cfgmod.dumps(cfg)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_rerun(args):
    """Re-execute the command recorded in a run manifest, optionally into another directory."""
    path = _require_file(args.manifest, "run manifest")
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        recorded = dict(manifest["args"])
        command = manifest["command"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"not a run manifest: {path} ({exc})") from None
    if command == "rerun":
        raise UsageError("refusing to rerun a rerun manifest")
    if args.out:
        recorded["out"] = args.out
    ns = argparse.Namespace(**recorded)
    ns.func = COMMANDS[command]
    return ns.func(ns)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "dump-config": cmd_dump_config,
    "rerun": cmd_rerun,
}


# -- parser --------------------------------------------------------------------


def _add_config_args(p):
    p.add_argument("--config", help="INI experiment file (missing keys take preset defaults)")
    p.add_argument("--preset", choices=sorted(cfgmod.PRESETS), default="desk", help="defaults under --config")


def build_parser():
    parser = argparse.ArgumentParser(prog="fadnet", description="FADNet stereo toolkit")
    parser.add_argument("--version", action="version", version=f"fadnet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write random-dot stereograms and a manifest")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-disparity", type=float, default=12.0)
    p.add_argument("--dot-size", type=int, default=2)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="run the multi-round training schedule")
    _add_config_args(p)
    p.add_argument("--train", required=True, help="training manifest")
    p.add_argument("--test", help="held-out manifest for per-epoch test EPE")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-after", help="ROUND,EPOCH at which to stop (writes last.ckpt)")

    p = sub.add_parser("infer", help="predict disparity for one stereo pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--out", required=True, help="output PFM path")
    p.add_argument("--png", help="also write a colour-mapped PNG")
    p.add_argument("--vmax", type=float, help="disparity mapped to the top of the colormap")
    p.add_argument("--manifest", action="store_true", help="write run.json next to the output")

    p = sub.add_parser("eval", help="EPE and D1 per sample plus an aggregate summary")
    p.add_argument("--data", required=True, help="manifest with ground truth")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="directory of <id>.pfm predictions")
    p.add_argument("--out", help="directory for metrics.jsonl and figures")
    p.add_argument("--figures", type=int, default=4, help="number of samples to render")

    p = sub.add_parser("bench", help="time a kernel")
    p.add_argument("--kernel", required=True, help=f"comma-separated subset of {', '.join(KERNELS)}")
    p.add_argument("--shape", default="1x32x48x96", help="NxCxHxW")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--max-range", type=int, default=20)
    p.add_argument("--k", type=int, default=1, help="patch half-size for patch_corr")
    p.add_argument("--shift-mode", default="two_sided_stride2")
    p.add_argument("--with-preconv", action="store_true", help="include the 3x3 pre-convolutions in pointwise_corr")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("dump-config", help="print the fully defaulted configuration")
    _add_config_args(p)
    p.add_argument("--out")

    p = sub.add_parser("rerun", help="repeat a run from its run.json")
    p.add_argument("manifest")
    p.add_argument("--out", help="write outputs here instead of the recorded directory")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, DimensionError, ContractError) as exc:
        print(f"fadnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"fadnet {args.command}: format error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"fadnet {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
