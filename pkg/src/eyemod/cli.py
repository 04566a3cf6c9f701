"""Command-line surface: synth | dataset | train | eval.

Every command resolves its configuration from defaults, an optional
`key = value` config file, and flags (flags win), then echoes the fully
resolved configuration to a run log next to its primary output.

Exit codes: 0 success, 1 I/O error, 2 usage/validation error,
3 numeric divergence during training.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import struct
import sys
import time

import numpy as np

from . import channel, classifier, dataset, eyepipe, report, synth
from .errors import DivergedError, EyemodError

FRAME_MAGIC = b"EYEFRM1\n"

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3

SCHEME_NAMES = [s.value for s in synth.CANONICAL_SCHEMES]


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config file + run log
# ---------------------------------------------------------------------------

def load_config_file(path, allowed_keys) -> dict:
    """Parse `key = value` lines; '#' starts a comment; unknown keys fail."""
    values = {}
    try:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected key = value")
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in allowed_keys:
                    raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    return values


def resolve(args, file_values: dict, key: str, default, cast=str):
    """Flag > config file > default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_values:
        raw = file_values[key]
        try:
            return cast(raw)
        except ValueError as exc:
            raise UsageError(f"config key {key}: bad value {raw!r}") from exc
    return default


def write_run_log(path, command: str, resolved: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# eyemod {command} run log\n")
        f.write(f"timestamp = {time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
        for key in sorted(resolved):
            f.write(f"{key} = {resolved[key]}\n")


def _parse_bool(value: str) -> bool:
    if value.lower() in ("1", "true", "yes", "on"):
        return True
    if value.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _workers(requested: int | None) -> int:
    cap = os.environ.get("EYEMOD_THREADS")
    n = requested if requested is not None else dataset.default_workers()
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


# ---------------------------------------------------------------------------
# frame files
# ---------------------------------------------------------------------------

def write_frame(path, frame: synth.ComplexFrame) -> None:
    """Header + interleaved float32 I/Q, little-endian."""
    name = frame.scheme.value.encode("utf-8")
    snr = frame.snr_db if frame.snr_db is not None else math.nan
    with open(path, "wb") as f:
        f.write(FRAME_MAGIC)
        f.write(struct.pack("<H", len(name)))
        f.write(name)
        f.write(struct.pack("<ddII", snr, frame.spec.sample_rate,
                            frame.spec.frame_len, frame.spec.sps))
        iq = np.empty(2 * frame.spec.frame_len, dtype="<f4")
        iq[0::2] = frame.samples.real
        iq[1::2] = frame.samples.imag
        f.write(iq.tobytes())


def read_frame(path) -> synth.ComplexFrame:
    with open(path, "rb") as f:
        if f.read(len(FRAME_MAGIC)) != FRAME_MAGIC:
            raise EyemodError(f"{path}: not a frame file")
        (nlen,) = struct.unpack("<H", f.read(2))
        name = f.read(nlen).decode("utf-8")
        snr, rate, frame_len, sps = struct.unpack("<ddII", f.read(24))
        iq = np.frombuffer(f.read(8 * frame_len), dtype="<f4")
    samples = iq[0::2].astype(np.float64) + 1j * iq[1::2].astype(np.float64)
    scheme = synth.ModulationScheme.from_name(name)
    spec = synth.FrameSpec(sample_rate=rate, frame_len=frame_len, sps=sps,
                           seed=0)
    return synth.ComplexFrame(samples=samples, scheme=scheme, spec=spec,
                              snr_db=None if math.isnan(snr) else snr)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    fv = load_config_file(args.config, {"scheme", "snr", "seed", "frame_len",
                                        "sps"}) if args.config else {}
    scheme_name = resolve(args, fv, "scheme", None)
    if scheme_name is None:
        raise UsageError("--scheme is required")
    scheme = synth.ModulationScheme.from_name(scheme_name)
    snr = resolve(args, fv, "snr", math.inf, float)
    seed = resolve(args, fv, "seed", 0, int)
    frame_len = resolve(args, fv, "frame_len", 1024, int)
    sps = resolve(args, fv, "sps", 8, int)
    spec = synth.FrameSpec(frame_len=frame_len, sps=sps, seed=seed)
    rng = np.random.default_rng(seed)
    frame = synth.modulate(scheme, spec, rng)
    if not (math.isinf(snr) and snr > 0):
        cfg = channel.ChannelConfig(snr_db=snr, fading_seed=seed)
        frame = channel.impair(frame, cfg, rng)
    write_frame(args.out, frame)
    resolved = {"scheme": scheme.value, "snr": snr, "seed": seed,
                "frame_len": frame_len, "sps": sps, "out": args.out,
                "render": args.render}
    write_run_log(str(args.out) + ".log", "synth", resolved)
    if args.render:
        traces_i, traces_q = eyepipe.fold_traces(frame, sps)
        amp = max(np.max(np.abs(traces_i.traces)),
                  np.max(np.abs(traces_q.traces)), 1e-12)
        for traces, tag in ((traces_i, "i"), (traces_q, "q")):
            img = eyepipe.rasterize(traces, 299, 699, amp)
            eyepipe.write_pgm(f"{args.out}.{tag}.pgm", img.pixels)
    print(f"wrote {args.out} ({scheme.value}, snr={snr} dB, seed={seed})")
    return EXIT_OK


_DATASET_KEYS = {"classes", "snrs", "frames_per_class", "seed", "height",
                 "width", "workers", "k_factor", "path_delays",
                 "path_gains_db"}


def _parse_float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.replace(",", " ").split())


def cmd_dataset(args) -> int:
    fv = load_config_file(args.config, _DATASET_KEYS) if args.config else {}
    classes = resolve(args, fv, "classes", "all")
    snrs = resolve(args, fv, "snrs", "-20,-10,0,10,20,30")
    frames = resolve(args, fv, "frames_per_class", 5000, int)
    seed = resolve(args, fv, "seed", 0, int)
    height = resolve(args, fv, "height", eyepipe.DEFAULT_TENSOR_H, int)
    width = resolve(args, fv, "width", eyepipe.DEFAULT_TENSOR_W, int)
    workers = _workers(resolve(args, fv, "workers", None, int))
    k_factor = resolve(args, fv, "k_factor", channel.DEFAULT_K_FACTOR, float)
    delays = resolve(args, fv, "path_delays",
                     channel.DEFAULT_PATH_DELAYS, _parse_float_list)
    gains = resolve(args, fv, "path_gains_db",
                    channel.DEFAULT_PATH_GAINS_DB, _parse_float_list)
    if isinstance(delays, str):
        delays = _parse_float_list(delays)
    if isinstance(gains, str):
        gains = _parse_float_list(gains)
    if classes.strip().lower() == "all":
        schemes = synth.CANONICAL_SCHEMES
    else:
        schemes = tuple(synth.ModulationScheme.from_name(n)
                        for n in classes.replace(",", " ").split())
    plan = dataset.DatasetPlan(
        schemes=schemes, snr_grid_db=_parse_float_list(snrs)
        if isinstance(snrs, str) else snrs,
        frames_per_class_per_snr=frames, global_seed=seed,
        out_h=height, out_w=width, k_factor=k_factor,
        path_delays=delays, path_gains_db=gains)
    resolved = {"classes": " ".join(s.value for s in plan.schemes),
                "snrs": " ".join(str(s) for s in plan.snr_grid_db),
                "frames_per_class": frames, "seed": seed, "height": height,
                "width": width, "workers": workers, "k_factor": k_factor,
                "path_delays": " ".join(str(d) for d in delays),
                "path_gains_db": " ".join(str(g) for g in gains),
                "total_records": plan.total_records, "out": args.out}
    print(f"plan: {plan.total_records} records "
          f"({len(plan.schemes)} classes x {len(plan.snr_grid_db)} SNRs x "
          f"{frames} frames)")
    write_run_log(str(args.out) + ".log", "dataset", resolved)
    if args.dry_run:
        return EXIT_OK
    t0 = time.time()
    container = dataset.build(plan, workers=workers)
    dataset.write(container, args.out)
    elapsed = time.time() - t0
    sizes = {k: len(v) for k, v in container.manifest.items()}
    print(f"wrote {args.out}: {container.count} records, "
          f"splits train/val/test = {sizes['train']}/{sizes['val']}"
          f"/{sizes['test']}, {elapsed:.1f}s")
    return EXIT_OK


_TRAIN_KEYS = {"lr", "batch_size", "epochs", "momentum", "seed",
               "stem_channels", "block_channels", "residual", "init_scale"}


def cmd_train(args) -> int:
    fv = load_config_file(args.config, _TRAIN_KEYS) if args.config else {}
    lr = resolve(args, fv, "lr", 0.001, float)
    batch = resolve(args, fv, "batch_size", 32, int)
    epochs = resolve(args, fv, "epochs", 20, int)
    momentum = resolve(args, fv, "momentum", 0.9, float)
    seed = resolve(args, fv, "seed", 0, int)
    stem = resolve(args, fv, "stem_channels", 8, int)
    blocks = resolve(args, fv, "block_channels", (16, 32, 64),
                     lambda s: tuple(int(v) for v in s.replace(",", " ").split()))
    if isinstance(blocks, str):
        blocks = tuple(int(v) for v in blocks.replace(",", " ").split())
    residual = resolve(args, fv, "residual", True, _parse_bool)
    init_scale = resolve(args, fv, "init_scale", 1.0, float)
    container = dataset.read(args.dataset)
    model_cfg = classifier.ModelConfig(
        input_h=container.height, input_w=container.width,
        class_count=len(container.class_names), stem_channels=stem,
        block_channels=blocks, residual=residual, init_seed=seed,
        init_scale=init_scale)
    train_cfg = classifier.TrainConfig(learning_rate=lr, momentum=momentum,
                                       epochs=epochs, batch_size=batch,
                                       shuffle_seed=seed)
    resolved = {"dataset": args.dataset, "lr": lr, "batch_size": batch,
                "epochs": epochs, "momentum": momentum, "seed": seed,
                "stem_channels": stem,
                "block_channels": " ".join(str(b) for b in blocks),
                "residual": residual, "init_scale": init_scale,
                "out": args.out}
    write_run_log(str(args.out) + ".log", "train", resolved)
    print(f"training: lr={lr}, batch={batch}, epochs={epochs}, "
          f"momentum={momentum}")
    metrics_path = args.metrics or str(args.out) + ".metrics.csv"
    try:
        params, state, metrics = classifier.train(model_cfg, train_cfg,
                                                  container)
    except DivergedError as exc:
        _write_metrics(metrics_path, exc.metrics)
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _write_metrics(metrics_path, metrics)
    classifier.save_checkpoint(args.out, params, state, model_cfg,
                               class_names=container.class_names)
    last = metrics[-1]
    print(f"done: final train_loss={last['train_loss']:.4f}, "
          f"val_acc={last['val_acc']}")
    return EXIT_OK


def _write_metrics(path, metrics) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "val_acc"])
        for m in metrics:
            writer.writerow([m["epoch"],
                             "" if m["train_loss"] is None
                             else f"{m['train_loss']:.6f}",
                             "" if m["val_acc"] is None
                             else f"{m['val_acc']:.6f}"])


def cmd_eval(args) -> int:
    container = dataset.read(args.dataset)
    params, state, model_cfg, class_names = \
        classifier.load_checkpoint(args.checkpoint)
    if model_cfg.class_count != len(container.class_names):
        raise UsageError(
            f"checkpoint expects {model_cfg.class_count} classes but the "
            f"dataset has {len(container.class_names)}")
    if (model_cfg.input_h, model_cfg.input_w) != (container.height,
                                                  container.width):
        raise UsageError(
            f"checkpoint expects {model_cfg.input_h}x{model_cfg.input_w} "
            f"tensors but the dataset holds "
            f"{container.height}x{container.width}")
    os.makedirs(args.report_dir, exist_ok=True)
    resolved = {"dataset": args.dataset, "checkpoint": args.checkpoint,
                "split": args.split, "report_dir": args.report_dir}
    write_run_log(os.path.join(args.report_dir, "run.log"), "eval", resolved)
    per_snr, pooled = classifier.evaluate(params, state, model_cfg,
                                          container, split=args.split)
    table = report.AccuracyTable.from_matrices(
        per_snr, literature=report.LITERATURE_BASELINES)
    for snr, matrix in per_snr.items():
        if matrix.total == 0:
            continue
        base = os.path.join(args.report_dir, f"confusion_snr_{snr:+g}")
        matrix.to_csv(base + ".csv")
        matrix.render_heatmap(base + ".pgm")
    pooled.to_csv(os.path.join(args.report_dir, "confusion_pooled.csv"))
    pooled.render_heatmap(os.path.join(args.report_dir,
                                       "confusion_pooled.pgm"))
    table.to_csv(os.path.join(args.report_dir, "accuracy.csv"))
    comparison = report.compare_to_literature(table)
    with open(os.path.join(args.report_dir, "comparison.txt"), "w",
              encoding="utf-8") as f:
        f.write(comparison + "\n")
    print(comparison)
    print(f"pooled accuracy: {pooled.accuracy():.4f} "
          f"({pooled.total} samples)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eyemod",
        description="Eye-diagram automatic modulation classification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize one impaired frame")
    p.add_argument("--scheme", choices=SCHEME_NAMES)
    p.add_argument("--snr", type=float, help="SNR in dB (omit for clean)")
    p.add_argument("--seed", type=int)
    p.add_argument("--frame-len", dest="frame_len", type=int)
    p.add_argument("--sps", type=int)
    p.add_argument("--render", action="store_true",
                   help="also write I/Q eye graymaps")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("dataset", help="build an eye-tensor dataset")
    p.add_argument("--classes", help="'all' or space/comma list of schemes")
    p.add_argument("--snrs", help="comma list of SNRs in dB")
    p.add_argument("--frames-per-class", dest="frames_per_class", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--k-factor", dest="k_factor", type=float)
    p.add_argument("--path-delays", dest="path_delays")
    p.add_argument("--path-gains-db", dest="path_gains_db")
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the classifier on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--stem-channels", dest="stem_channels", type=int)
    p.add_argument("--block-channels", dest="block_channels")
    p.add_argument("--init-scale", dest="init_scale", type=float)
    p.add_argument("--metrics")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, emit reports")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--report-dir", dest="report_dir", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, EyemodError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
