"""Command-line entry point: ``handcast <subcommand> ...``.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import forecaster as fc
from . import trainer as tr
from .checkpoint import CheckpointError, load_static
from .dataio import BundleError, ValidationError, clip_dir, make_windows, read_clip_bundle
from .geometry import GeometryError, JOINTS_PER_HAND, project_to_image, se3_compose, se3_inverse
from .nnkernel import ConfigError, ShapeError
from .synth import SynthConfig, synth_generate

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _strata(value: str) -> float:
    kind, _, frac = value.partition(":")
    try:
        f = float(frac)
    except ValueError:
        f = -1.0
    if kind != "egomotion" or not 0 < f <= 1:
        raise argparse.ArgumentTypeError(f"expected egomotion:<fraction in (0, 1]>, got {value!r}")
    return f


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="handcast", description="Egocentric 3D hand-pose forecasting at desk scale.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--clips", type=int, default=200)
    s.add_argument("--frames", type=int, default=SynthConfig.frames_per_clip)
    s.add_argument("--egomotion", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--render-frames", action="store_true", help="also store the rendered RGB frames")

    s = sub.add_parser("train", help="train a forecaster")
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", type=Path, help='JSON with optional "model" and "train" sections')
    s.add_argument("--log", type=Path, help="JSON-lines metrics log (default: next to the checkpoint)")

    s = sub.add_parser("eval", help="evaluate a model or baseline")
    s.add_argument("--data", required=True, type=Path)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--model", type=Path)
    g.add_argument("--baseline", choices=("static", "cvm"))
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--strata", type=_strata)
    s.add_argument("--ablate", default="none", choices=tr.ABLATIONS)
    s.add_argument("--report", required=True, type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stride", type=int, default=5)
    s.add_argument("--jobs", type=int, default=1, help="accepted for compatibility; evaluation is single-threaded")

    s = sub.add_parser("forecast", help="predict one window of one clip")
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--clip", required=True)
    s.add_argument("--window", type=int, required=True, help="window index (start frame = index * stride)")
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--stride", type=int, default=5)

    s = sub.add_parser("overlay", help="render observed and predicted joints to SVG")
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--clip", required=True)
    s.add_argument("--pred", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--frame", type=int, help="clip frame whose camera to draw from (default: the anchor)")
    s.add_argument("--stride", type=int, default=5)

    s = sub.add_parser("gradcheck", help="run the finite-difference suite")
    s.add_argument("--seed", type=int, default=0)

    sub.add_parser("version", help="print the package version")
    return p


# subcommands --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = SynthConfig(n_clips=args.clips, frames_per_clip=args.frames, egomotion_level=args.egomotion,
                      seed=args.seed, render_frames=args.render_frames)
    cfg.validate()
    manifest = synth_generate(cfg, args.out)
    print(json.dumps({"out": str(args.out), "counts": manifest["counts"], "seed": args.seed}))
    return EXIT_OK


def _load_config(path):
    if path is None:
        return {}, {}
    cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(cfg, dict) or set(cfg) - {"model", "train"}:
        raise ValidationError(f'{path}: expected an object with optional "model" and "train" sections')
    return cfg.get("model", {}), cfg.get("train", {})


def cmd_train(args) -> int:
    model_over, train_over = _load_config(args.config)
    try:
        mcfg = fc.ModelConfig.from_json({"seed": args.seed, **model_over})
        tcfg = tr.TrainConfig.from_json({"seed": args.seed, "steps": args.steps, **train_over})
    except TypeError as exc:
        raise ValidationError(f"bad config: {exc}") from None
    mcfg.validate()
    tcfg.validate()
    ds = tr.load_dataset(args.data, stride=tcfg.stride, splits=("train", "val"))
    log_path = args.log or args.out.with_suffix(".log.jsonl")
    result = tr.train(ds.train, mcfg, tcfg, val_samples=ds.val, log_path=log_path, checkpoint_path=args.out)
    last = [h for h in result.history if "loss_total" in h][-1]
    print(json.dumps({"checkpoint": str(args.out), "log": str(log_path), "steps": tcfg.steps, "seed": tcfg.seed,
                      "final_loss": last["loss_total"], "skipped_steps": result.optimizer.skipped}))
    return EXIT_OK


def _read_checkpoint(path):
    from .checkpoint import read_container

    header, _ = read_container(path)
    if header.get("kind") == "static":
        return load_static(path)
    return fc.load_checkpoint(path)


def cmd_eval(args) -> int:
    need = ("train", args.split) if args.baseline == "static" else (args.split,)
    ds = tr.load_dataset(args.data, stride=args.stride, splits=need)
    samples = ds.split(args.split)
    if args.baseline == "static":
        predictor = tr.fit_static(ds.train)
    elif args.baseline == "cvm":
        predictor = "cvm"
    else:
        predictor = _read_checkpoint(args.model)
    report = tr.evaluate(predictor, samples, args.strata, args.ablate, args.seed, split=args.split)
    args.report.write_text(report.to_json() + "\n", encoding="utf-8")
    print(json.dumps({"report": str(args.report), "ade": report.ade, "fde": report.fde, "mpjpe": report.mpjpe,
                      "mpjpe_f": report.mpjpe_f, "n_samples": report.n_samples}))
    return EXIT_OK


def _window(data, clip, index, stride):
    record = read_clip_bundle(clip_dir(data, clip))
    windows = make_windows(record, stride=stride)
    if not 0 <= index < len(windows):
        raise ValidationError(f"clip {clip} has {len(windows)} windows at stride {stride}; index {index} is out of range")
    return record, windows[index]


def cmd_forecast(args) -> int:
    _, sample = _window(args.data, args.clip, args.window, args.stride)
    model = _read_checkpoint(args.model)
    if isinstance(model, fc.ForecasterModel):
        pred = fc.predict(model, [sample])[0]
    else:
        pred = tr.predict_samples(model, [sample])[0][0]
    out = {"clip_id": args.clip, "window": args.window, "start": sample.start, "frame": "canonical",
           "pred": np.round(pred, 9).tolist()}
    args.out.write_text(json.dumps(out) + "\n", encoding="utf-8")
    print(json.dumps({"out": str(args.out), "clip_id": args.clip, "window": args.window}))
    return EXIT_OK


_OBSERVED, _PREDICTED = "#1a9850", "#d73027"


def hand_edges() -> list[tuple[int, int]]:
    edges = []
    for w in (0, JOINTS_PER_HAND):
        for f in range(5):
            chain = [w] + [w + 1 + 4 * f + k for k in range(4)]
            edges += list(zip(chain[:-1], chain[1:]))
    return edges


def overlay_svg(observed, obs_valid, predicted, pred_valid, intr, cam_from_canonical, label: str,
                size: int = 224) -> str:
    """SVG with observed joints in green and predicted joints in red."""
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="#202020"/>',
             f'<text x="4" y="12" font-size="9" fill="#dddddd">{label}</text>']
    for poses, valid, color, name in ((observed, obs_valid, _OBSERVED, "observed"),
                                      (predicted, pred_valid, _PREDICTED, "predicted")):
        parts.append(f'<g class="{name}" stroke="{color}" fill="{color}">')
        for t in range(poses.shape[0]):
            pix, ok = project_to_image(poses[t], valid[t], intr, cam_from_canonical)
            opacity = 0.25 + 0.75 * (t + 1) / poses.shape[0]
            for a, b in hand_edges():
                if ok[a] and ok[b]:
                    parts.append(f'<line x1="{pix[a, 0]:.2f}" y1="{pix[a, 1]:.2f}" x2="{pix[b, 0]:.2f}" '
                                 f'y2="{pix[b, 1]:.2f}" stroke-width="0.8" opacity="{opacity:.2f}"/>')
            for j in np.flatnonzero(ok):
                parts.append(f'<circle cx="{pix[j, 0]:.2f}" cy="{pix[j, 1]:.2f}" r="1.2" '
                             f'opacity="{opacity:.2f}"/>')
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_overlay(args) -> int:
    pred_doc = json.loads(args.pred.read_text(encoding="utf-8"))
    try:
        pred = np.asarray(pred_doc["pred"], dtype=np.float64)
        index = int(pred_doc["window"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{args.pred}: not a forecast file ({exc})") from None
    if pred_doc.get("clip_id", args.clip) != args.clip:
        raise ValidationError(f"{args.pred} holds a forecast for clip {pred_doc['clip_id']}, not {args.clip}")
    record, sample = _window(args.data, args.clip, index, args.stride)
    if pred.shape != sample.fut_poses.shape:
        raise ValidationError(f"prediction shape {pred.shape} does not match {sample.fut_poses.shape}")
    if record.intrinsics is None:
        raise ValidationError(f"clip {args.clip} has no camera intrinsics")
    frame = sample.start if args.frame is None else args.frame
    if not 0 <= frame < record.num_frames:
        raise ValidationError(f"frame {frame} is outside clip {args.clip} (0..{record.num_frames - 1})")
    cam = se3_compose(record.extrinsics[frame], se3_inverse(sample.world_to_canonical))
    label = f"{args.clip} window {index}: " + ("anchor view" if args.frame is None else f"frame {frame} view")
    svg = overlay_svg(sample.obs_poses, sample.obs_mask, pred, np.ones(pred.shape[:2], dtype=bool),
                      record.intrinsics, cam, label)
    args.out.write_text(svg, encoding="utf-8")
    print(json.dumps({"out": str(args.out), "clip_id": args.clip, "window": index, "frame": frame}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .selfcheck import run_suite

    results = run_suite(args.seed)
    failed = [k for k, (err, tol) in results.items() if not err < tol]
    for name, (err, tol) in results.items():
        print(f"{name:24s} {err:.3e}  (< {tol:g}) {'ok' if err < tol else 'FAIL'}")
    worst = max(err for err, _ in results.values())
    print(json.dumps({"seed": args.seed, "max_relative_error": worst, "failed": failed}))
    return EXIT_NUMERICAL if failed else EXIT_OK


def cmd_version(args) -> int:
    print(__version__)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "forecast": cmd_forecast,
            "overlay": cmd_overlay, "gradcheck": cmd_gradcheck, "version": cmd_version}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"handcast: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except tr.NumericalError as exc:
        code, msg = EXIT_NUMERICAL, str(exc)
    except (BundleError, CheckpointError, FileNotFoundError, IsADirectoryError, PermissionError,
            json.JSONDecodeError, UnicodeDecodeError) as exc:
        code, msg = EXIT_IO, str(exc)
    except OSError as exc:
        code, msg = EXIT_IO, str(exc)
    except (ValidationError, ConfigError, ShapeError, GeometryError, ValueError, TypeError) as exc:
        code, msg = EXIT_VALIDATION, str(exc)
    except FloatingPointError as exc:
        code, msg = EXIT_NUMERICAL, str(exc)
    print(f"handcast {args.command}: error: {msg}", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
