"""Command-line entry points.

Subcommands: simulate (frames or a synthetic dataset to events), degrade
(preview the degrader on a pair), train, eval, infer (asynchronous high-rate
track), plot-pck. Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from . import dataset as ds
from . import hand_model as hm
from .degrade import apply_degrader, compute_descriptor
from .errors import DataError, NumericalError, UsageError
from .events import read_evb, simulate_events, write_evb
from .network import FusionMeshModel, desk_config, load_checkpoint
from .pipeline import build_training_samples, evaluate_dataset, run_async_inference
from .reporting import plot_loss_history, plot_pck_curve
from .training import desk_train_config, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat key = value config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evhand",
        description="Event + RGB hand mesh reconstruction pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="frames to events, or a synthetic dataset")
    _add_common(p)
    p.add_argument("--frames", type=Path, help="directory of <t_us>.png frames")
    p.add_argument("--synthetic", action="store_true", help="generate a dataset")
    p.add_argument("--sequences", type=int, default=2)
    p.add_argument("--duration", type=float, default=2.0, help="seconds per sequence")
    p.add_argument("--fps", type=float, default=15.0)

    p = sub.add_parser("degrade", help="preview the degrader on one pair")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--sequence", type=str, required=True)
    p.add_argument("--index", type=int, default=1, help="annotation record index")
    p.add_argument("--log-degradations", action="store_true")

    p = sub.add_parser("train", help="desk-scale training run")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--samples", type=int, default=64, help="prebuilt sample count")
    p.add_argument("--log-degradations", action="store_true")

    p = sub.add_parser("eval", help="metric report over a dataset")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--oracle", action="store_true", help="feed ground truth back")

    p = sub.add_parser("infer", help="asynchronous high-rate mesh track")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--sequence", type=str, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--bin-rate", type=float, default=60.0)

    p = sub.add_parser("plot-pck", help="PCK curve CSV + figure from a report")
    _add_common(p)
    p.add_argument("--report", type=Path, required=True, help="metrics JSON")
    return parser


def _flat_config(args) -> dict[str, object]:
    if getattr(args, "config", None) is None:
        return {}
    if not args.config.exists():
        raise UsageError(f"config file {args.config} does not exist")
    return cfgmod.read_config_file(args.config)


def cmd_simulate(args) -> int:
    flat = _flat_config(args)
    sim_cfg = cfgmod.simulator_config_from_flat(flat)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.synthetic == (args.frames is not None):
        raise UsageError("simulate needs exactly one of --synthetic or --frames")
    if args.synthetic:
        index = ds.generate_synthetic_dataset(
            args.out,
            n_sequences=args.sequences,
            seed=args.seed,
            duration_s=args.duration,
            fps=args.fps,
            sim=sim_cfg,
        )
        print(f"wrote {len(index.sequences)} sequences to {args.out}")
        return EXIT_OK

    from PIL import Image

    frame_paths = sorted(args.frames.glob("*.png"))
    if len(frame_paths) < 2:
        raise DataError(f"{args.frames}: need at least two PNG frames")
    frames = []
    for p in frame_paths:
        try:
            t = int(p.stem)
        except ValueError:
            raise DataError(f"{p.name}: frames must be named <t_us>.png") from None
        gray = np.asarray(Image.open(p).convert("L"), dtype=np.float64) / 255.0
        frames.append((t, gray))
    stream = simulate_events(frames, sim_cfg)
    out_path = args.out / "events.evb"
    write_evb(out_path, stream)
    print(f"wrote {len(stream)} events to {out_path}")
    return EXIT_OK


def cmd_degrade(args) -> int:
    flat = _flat_config(args)
    deg_cfg = cfgmod.degradation_config_from_flat(flat)
    index = ds.load_dataset(args.data)
    entry = next(
        (e for e in index.sequences if e.sequence_id == args.sequence), None
    )
    if entry is None:
        raise DataError(f"sequence {args.sequence!r} not found under {args.data}")
    seq = ds.load_sequence(entry)
    if not 0 <= args.index < len(seq.records):
        raise UsageError(f"--index must be in [0, {len(seq.records) - 1}]")
    rec = seq.records[args.index]
    rgb = seq.frames[args.index]
    frame = ds.stacked_frame_at(
        seq.stream, rec.timestamp, ds.EVAL_EVENT_COUNT, seq.resolution
    )
    rng = np.random.default_rng(args.seed)
    (deg_rgb, deg_frame), record = apply_degrader((rgb, frame), deg_cfg, rng)

    args.out.mkdir(parents=True, exist_ok=True)
    before = compute_descriptor((rgb, frame))
    after = compute_descriptor((deg_rgb, deg_frame))
    with open(args.out / "descriptors.json", "w") as f:
        json.dump(
            {
                "before": before.__dict__,
                "after": after.__dict__,
                "applied": record,
            },
            f,
            indent=2,
        )
    if args.log_degradations:
        with open(args.out / "degradations.jsonl", "w") as f:
            f.write(json.dumps({"sequence": args.sequence, "index": args.index, "ops": record}) + "\n")
    _save_pair_preview(args.out, rgb, frame.data, deg_rgb, deg_frame.data)
    print(f"applied {len(record)} degradations; descriptors in {args.out}")
    return EXIT_OK


def _save_pair_preview(out_dir, rgb, ev, deg_rgb, deg_ev) -> None:
    from PIL import Image

    def to_img(arr):
        return Image.fromarray(
            (np.clip(arr, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
        )

    to_img(rgb).save(out_dir / "image_before.png")
    to_img(deg_rgb).save(out_dir / "image_after.png")
    ev_vis = np.stack([ev[0], np.zeros_like(ev[0]), ev[1]])
    deg_vis = np.stack([deg_ev[0], np.zeros_like(deg_ev[0]), deg_ev[1]])
    to_img(ev_vis).save(out_dir / "events_before.png")
    to_img(deg_vis).save(out_dir / "events_after.png")


def cmd_train(args) -> int:
    flat = _flat_config(args)
    net_cfg = cfgmod.network_config_from_flat(flat, desk_config())
    train_cfg = cfgmod.train_config_from_flat(flat, desk_train_config(seed=args.seed))
    deg_cfg = cfgmod.degradation_config_from_flat(flat)
    if train_cfg.crop_size != net_cfg.input_size:
        raise UsageError(
            f"train.crop_size ({train_cfg.crop_size}) must equal "
            f"net.input_size ({net_cfg.input_size})"
        )
    index = ds.load_dataset(args.data, split="train")
    if not index.sequences:
        raise DataError(f"{args.data}: no training sequences")
    hand = ds.dataset_hand_model(index)
    rng = np.random.default_rng(train_cfg.seed)
    samples = build_training_samples(
        index,
        hand,
        n_samples=args.samples,
        s_steps=net_cfg.temporal_window,
        crop_size=train_cfg.crop_size,
        rng=rng,
    )
    torch.manual_seed(train_cfg.seed)
    model = FusionMeshModel(net_cfg)
    result = train(
        train_cfg,
        samples,
        model,
        degradation=deg_cfg,
        out_dir=args.out,
        log_degradations=args.log_degradations,
    )
    plot_loss_history(result.history, args.out / "loss_curve.png")
    if args.log_degradations:
        with open(args.out / "degradations.jsonl", "w") as f:
            for rec in result.degradation_records:
                f.write(json.dumps(rec) + "\n")
    first, last = result.history[0]["total"], result.history[-1]["total"]
    print(
        f"trained {train_cfg.iterations} iterations: loss {first:.3f} -> {last:.3f}; "
        f"checkpoint at {result.checkpoint_path}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    index = ds.load_dataset(args.data, split="eval")
    if not index.sequences:
        raise DataError(f"{args.data}: no evaluation sequences")
    hand = ds.dataset_hand_model(index)
    flat = _flat_config(args)
    n_events = int(flat.get("eval.n_events", ds.EVAL_EVENT_COUNT))
    if args.oracle:
        report = evaluate_dataset(index, hand, oracle=True, n_events=n_events)
    else:
        if args.checkpoint is None:
            raise UsageError("eval needs --checkpoint or --oracle")
        model = load_checkpoint(args.checkpoint)
        model.eval()
        report = evaluate_dataset(index, hand, model=model, n_events=n_events)
    args.out.mkdir(parents=True, exist_ok=True)
    report.to_json(args.out / "metrics.json")
    report.pck_to_csv(args.out / "pck.csv")
    plot_pck_curve(report.pck_curve, args.out / "pck.png")
    print(
        f"mpjpe {report.mpjpe:.3f} mm, mpvpe {report.mpvpe:.3f} mm, "
        f"pa-mpjpe {report.pa_mpjpe:.3f} mm, auc {report.auc:.4f}"
    )
    return EXIT_OK


def cmd_infer(args) -> int:
    index = ds.load_dataset(args.data, split="eval")
    entry = next(
        (e for e in index.sequences if e.sequence_id == args.sequence), None
    )
    if entry is None:
        raise DataError(f"sequence {args.sequence!r} not found under {args.data}")
    model = load_checkpoint(args.checkpoint)
    model.eval()
    seq = ds.load_sequence(entry)
    track = run_async_inference(model, seq, args.bin_rate)
    args.out.mkdir(parents=True, exist_ok=True)
    track.save(args.out / "track.npz")
    with open(args.out / "track_summary.json", "w") as f:
        json.dump(
            {
                "sequence": args.sequence,
                "bin_rate_hz": args.bin_rate,
                "meshes": len(track),
                "first_t_us": track.timestamps[0] if len(track) else None,
                "last_t_us": track.timestamps[-1] if len(track) else None,
            },
            f,
            indent=2,
        )
    print(f"emitted {len(track)} meshes to {args.out / 'track.npz'}")
    return EXIT_OK


def cmd_plot_pck(args) -> int:
    if not args.report.exists():
        raise DataError(f"report {args.report} does not exist")
    with open(args.report) as f:
        payload = json.load(f)
    if "pck_curve" not in payload:
        raise DataError(f"{args.report}: no pck_curve field")
    curve = [(float(t), float(frac)) for t, frac in payload["pck_curve"]]
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "pck.csv", "w") as f:
        f.write("threshold,fraction\n")
        for t, frac in curve:
            f.write(f"{t},{frac}\n")
    plot_pck_curve(curve, args.out / "pck.png")
    print(f"wrote PCK curve to {args.out}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "degrade": cmd_degrade,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "plot-pck": cmd_plot_pck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    np.random.seed(args.seed)
    torch.manual_seed(args.seed)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
