"""Command-line front end: data synthesis, training, inference, evaluation,
offset visualization and the gradient-check suite.

Exit codes: 0 success, 1 usage/configuration error, 2 data error, 3 numeric
failure. Set DSFN_NUM_THREADS to pin the BLAS thread count before numpy
loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _apply_thread_env() -> None:
    threads = os.environ.get("DSFN_NUM_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(p) for p in text.lower().split("x"))
        return h, w
    except ValueError as exc:
        raise UsageError(f"bad --size {text!r}, expected HxW") from exc


def _ensure_out_dir(path: Path, force: bool) -> None:
    from .errors import DataError

    if path.exists() and any(path.iterdir()) and not force:
        raise DataError(f"output directory {path} is not empty (use --force)")
    path.mkdir(parents=True, exist_ok=True)


def _numbered_frames(directory: Path) -> dict:
    """index -> frame for the PNG files of a directory."""
    from .data import read_png
    from .errors import DataError

    frames = {}
    for p in sorted(directory.glob("*.png")):
        try:
            idx = int(p.stem)
        except ValueError:
            continue
        frames[idx] = read_png(p)
    if not frames:
        raise DataError(f"no numbered PNG frames in {directory}")
    return frames


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    from .data import toy_video_gen, write_degraded, write_sequence
    from .errors import DataError

    out = Path(args.out)
    _ensure_out_dir(out, args.force)
    if args.mode == "toy":
        h, w = _parse_size(args.size)
        for i in range(args.seqs):
            seq = toy_video_gen(args.seed + i, args.frames, h, w,
                                n_shapes=args.shapes, seq_id=f"seq{i:03d}")
            write_sequence(out / "sharp" / seq.id, seq.frames, seq.id, seq.fps)
            n_blurry, n_gt = write_degraded(out, seq, args.scale)
            print(f"{seq.id}: {args.frames} sharp -> {n_blurry} blurry, {n_gt} gt frames")
    else:  # degrade
        from .data import SharpSequence, read_sequence, sequence_ids

        src = Path(args.input)
        for sid in sequence_ids(src, "sharp"):
            frames, manifest = read_sequence(src / "sharp" / sid)
            fps = manifest.get("fps") or 240
            seq = SharpSequence(id=sid, fps=fps, frames=frames)
            n_blurry, n_gt = write_degraded(out, seq, args.scale)
            print(f"{sid}: {len(frames)} sharp -> {n_blurry} blurry, {n_gt} gt frames")
    return 0


def cmd_train(args) -> int:
    import numpy as np

    from .config import RunConfig
    from .data import load_training_windows
    from .model import TwoLevelDSFN
    from .train import TrainSettings, train

    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.steps is not None:
        cfg.set("train.steps", args.steps)
    if args.seed is not None:
        cfg.set("train.seed", args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.txt")

    windows = load_training_windows(args.data)
    model = TwoLevelDSFN(cfg.model_config(), np.random.default_rng(cfg["train.seed"]))
    summary = train(windows, model, cfg.train_settings(), out, resume_from=args.resume)
    print(f"trained {summary['steps_run']} steps on {len(windows)} windows; "
          f"loss {summary['first_loss']} -> {summary['last_loss']}")
    print(f"final checkpoint: {summary['final_checkpoint']}")
    return 0


def _load_model(ckpt_path):
    from .checkpoint import load_checkpoint, meta_to_config
    from .model import TwoLevelDSFN

    arrays = load_checkpoint(ckpt_path)
    cfg = meta_to_config(arrays)
    model = TwoLevelDSFN(cfg)
    model.load_state_arrays(arrays)
    return model


def cmd_infer(args) -> int:
    import numpy as np

    from .data import read_sequence, write_png
    from .infer import enhance_sequence

    model = _load_model(args.ckpt)
    blurry, manifest = read_sequence(Path(args.input))
    result = enhance_sequence(model, blurry)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for idx, frame in sorted(result["outputs"].items()):
        write_png(out / f"{idx:06d}.png", frame)
    if args.emit_level1:
        l1_dir = out / "level1"
        l1_dir.mkdir(exist_ok=True)
        for idx, frame in sorted(result["level1"].items()):
            write_png(l1_dir / f"{idx:06d}.png", frame)
    info = {
        "source": str(args.input),
        "input_frames": int(len(blurry)),
        "output_frames": len(result["outputs"]),
        "scale": model.cfg.scale,
        "fps": 2 * manifest.get("fps", 0),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(info, fh, indent=1, sort_keys=True)
    print(f"wrote {len(result['outputs'])} enhanced frames to {out}")
    return 0


def cmd_eval(args) -> int:
    from .data import bicubic_resize
    from .errors import DataError
    from .metrics import (FrameMetrics, build_report, frame_kind, psnr, ssim)

    pred = _numbered_frames(Path(args.pred))
    gt = _numbered_frames(Path(args.gt))
    missing = sorted(set(pred) - set(gt))
    if missing:
        raise DataError(f"ground truth lacks frame indices {missing}")

    rows = [FrameMetrics(index=idx, kind=frame_kind(idx),
                         psnr=psnr(pred[idx], gt[idx]), ssim=ssim(pred[idx], gt[idx]))
            for idx in sorted(pred)]
    report = build_report(rows)

    if args.input_scale_deblur:
        inv = 1.0 / args.scale
        rows_lr = [FrameMetrics(
            index=idx, kind=frame_kind(idx),
            psnr=psnr(bicubic_resize(pred[idx], inv), bicubic_resize(gt[idx], inv)),
            ssim=ssim(bicubic_resize(pred[idx], inv), bicubic_resize(gt[idx], inv)))
            for idx in sorted(pred)]
        report["input_scale"] = build_report(rows_lr)

    text = json.dumps(report, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_viz(args) -> int:
    import csv

    from .data import read_sequence
    from .flowviz import magnitude_histogram, visualize_offsets
    from .infer import enhance_sequence

    model = _load_model(args.ckpt)
    blurry, _ = read_sequence(Path(args.input))
    result = enhance_sequence(model, blurry, collect_offsets=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, (prev_field, next_field) in sorted(result["offsets"].items()):
        visualize_offsets(prev_field, out / f"window_{k:04d}_prev.png")
        visualize_offsets(next_field, out / f"window_{k:04d}_next.png")
        edges, counts = magnitude_histogram([prev_field, next_field])
        with open(out / f"window_{k:04d}_hist.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, count in zip(edges[:-1], edges[1:], counts):
                writer.writerow([f"{lo:.6f}", f"{hi:.6f}", int(count)])
    print(f"wrote offset maps for {len(result['offsets'])} windows to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    import numpy as np

    from .checks import format_results, run_suite

    dtype = np.float64 if args.double else np.float32
    results = run_suite(dtype=dtype, seed=args.seed)
    text, all_ok = format_results(results, dtype)
    print(text)
    return 0 if all_ok else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="dsfn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate or degrade datasets")
    synth_sub = synth.add_subparsers(dest="mode", required=True)
    toy = synth_sub.add_parser("toy", help="write a synthetic sharp+degraded dataset")
    toy.add_argument("--out", required=True)
    toy.add_argument("--seqs", type=int, default=2)
    toy.add_argument("--frames", type=int, default=97)
    toy.add_argument("--size", default="128x128")
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--shapes", type=int, default=4)
    toy.add_argument("--scale", type=int, default=4)
    toy.add_argument("--force", action="store_true")
    toy.set_defaults(func=cmd_synth)
    degrade = synth_sub.add_parser("degrade", help="degrade an existing sharp tree")
    degrade.add_argument("--in", dest="input", required=True)
    degrade.add_argument("--out", required=True)
    degrade.add_argument("--scale", type=int, default=4)
    degrade.add_argument("--force", action="store_true")
    degrade.set_defaults(func=cmd_synth)

    tr = sub.add_parser("train", help="optimize a model on a degraded dataset")
    tr.add_argument("--data", required=True)
    tr.add_argument("--config")
    tr.add_argument("--out", required=True)
    tr.add_argument("--resume")
    tr.add_argument("--steps", type=int)
    tr.add_argument("--seed", type=int)
    tr.set_defaults(func=cmd_train)

    inf = sub.add_parser("infer", help="enhance a blurry frame folder")
    inf.add_argument("--ckpt", required=True)
    inf.add_argument("--in", dest="input", required=True)
    inf.add_argument("--out", required=True)
    inf.add_argument("--emit-level1", action="store_true")
    inf.set_defaults(func=cmd_infer)

    ev = sub.add_parser("eval", help="PSNR/SSIM report for predictions vs ground truth")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--scale", type=int, default=4)
    ev.add_argument("--input-scale-deblur", action="store_true")
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_eval)

    viz = sub.add_parser("viz-offsets", help="render offset fields as flow color maps")
    viz.add_argument("--ckpt", required=True)
    viz.add_argument("--in", dest="input", required=True)
    viz.add_argument("--out", required=True)
    viz.set_defaults(func=cmd_viz)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gc.add_argument("--double", action="store_true")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    _apply_thread_env()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1

    from .errors import ConfigError, DataError, NumericError, ShapeError

    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
