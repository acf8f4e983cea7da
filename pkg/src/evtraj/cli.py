"""Command-line surface: generate, estimate, evaluate, visualize, inspect.

Every command accepts ``--threads`` and ``--seed``, prints human-readable
results to stdout, and records its effective parameters as
``run_config_<command>.json`` next to whatever it wrote, so a run can be
replayed exactly. Exit codes: 0 success, 1 usage error, 2 data error; error
detail goes to stderr as a single ``error: <kind>: <message>`` line.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import bezier, estimator, fileio, metrics, multiflow

THREADS_ENV = "EVTRAJ_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract here reserves 2 for data
    # problems, so surface usage trouble as an exception instead.
    def error(self, message):
        raise UsageError(message)


def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV, "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    return min(4, os.cpu_count() or 1)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--threads", type=int, default=None, help="worker thread budget")
    parser.add_argument("--seed", type=int, default=0, help="base random seed")


def _write_run_config(out_dir: Path, command: str, payload: dict) -> None:
    payload = {"command": command, **payload}
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    fileio.atomic_write_bytes(out_dir / f"run_config_{command}.json", text.encode())


def _load_json_config(path: str | None, cls, label: str):
    if path is None:
        return cls()
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError(f"{label} config must be a JSON object")
    known = {f for f in cls.__dataclass_fields__}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown {label} config keys: {', '.join(unknown)}")
    return cls(**raw)


def _parse_taus(text: str) -> list[float]:
    try:
        taus = [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise UsageError(f"bad tau list {text!r}") from exc
    if not taus or any(not 0.0 <= t <= 1.0 for t in taus):
        raise UsageError("taus must be a non-empty list within [0, 1]")
    return taus


# --------------------------------------------------------------------------
# Commands


def _cmd_generate(args) -> int:
    config = _load_json_config(args.config, multiflow.GeneratorConfig, "generator")
    if args.background_dir:
        config.background_dir = args.background_dir
    if args.sprite_dir:
        config.sprite_dir = args.sprite_dir
    config.validate()
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(range(args.seed, args.seed + args.count))

    threads = args.threads if args.threads else _default_threads()
    results = {}
    if threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {
                seed: pool.submit(multiflow.generate_sequence, config, seed, out)
                for seed in seeds
            }
            for seed, future in futures.items():
                results[seed] = future.result()
    else:
        for seed in seeds:
            results[seed] = multiflow.generate_sequence(config, seed, out)

    for seed in seeds:
        seq_dir, manifest = results[seed]
        print(f"wrote {seq_dir} ({manifest['event_count']} events)")
    _write_run_config(
        out,
        "generate",
        {
            "config": asdict(config),
            "count": args.count,
            "seed": args.seed,
            "threads": threads,
            "out": str(out),
        },
    )
    return 0


def _cmd_estimate(args) -> int:
    config = _load_json_config(args.config, estimator.EstimatorConfig, "estimator")
    stream = fileio.read_events(args.events)
    taus = _parse_taus(args.taus)

    frames = None
    if args.frames:
        ref_img = fileio.to_grayscale(fileio.load_image(args.frames[0]))
        tgt_img = fileio.to_grayscale(fileio.load_image(args.frames[1]))
        frames = (ref_img, tgt_img)

    t_ref = args.t_ref_us
    t_target = args.t_target_us
    if t_ref is None:
        t_ref = float(stream.t[0]) if len(stream) else 0.0
    if t_target is None:
        t_target = float(stream.t[-1]) if len(stream) else 1.0
    if not t_ref < t_target:
        raise ValueError(f"need t_ref < t_target, got {t_ref} >= {t_target}")

    field, report = estimator.estimate_flow(stream, t_ref, t_target, config, frames)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_bezier(out / "field.bez", field)
    for tau in taus:
        fileio.write_flow(out / f"flow_{tau:.4f}.flo32", field.evaluate(tau))
    report_payload = {
        "trace": [float(v) for v in report.trace],
        "accepted": [int(v) for v in report.accepted],
        "degenerate": bool(report.degenerate),
        "mean_score": float(report.score.mean()),
    }
    fileio.atomic_write_bytes(
        out / "report.json",
        (json.dumps(report_payload, sort_keys=True, indent=2) + "\n").encode(),
    )
    _write_run_config(
        out,
        "estimate",
        {
            "config": asdict(config),
            "events": str(args.events),
            "frames": [str(f) for f in args.frames] if args.frames else None,
            "t_ref_us": t_ref,
            "t_target_us": t_target,
            "taus": taus,
            "seed": args.seed,
            "out": str(out),
        },
    )
    if report.degenerate:
        print("degenerate input: empty event stream, wrote the zero field")
    else:
        print(
            f"estimated degree-{field.degree} field on {field.height}x{field.width}; "
            f"objective {report.trace[0]:.4f} -> {report.trace[-1]:.4f}"
        )
    print(f"wrote {out / 'field.bez'} and {len(taus)} flow samples")
    return 0


def _collect_flows(directory: Path) -> list:
    flows = [fileio.read_flow(p) for p in sorted(directory.glob("**/*.flo32"))]
    if not flows:
        raise FileNotFoundError(f"no .flo32 files under {directory}")
    return sorted(flows, key=lambda f: f.tau)


def _cmd_evaluate(args) -> int:
    gt_dir = Path(args.gt)
    pred_dir = Path(args.pred)
    gt_maps = _collect_flows(gt_dir)
    if args.taus:
        wanted = _parse_taus(args.taus)
        gt_maps = [
            g for g in gt_maps if any(abs(g.tau - t) <= 1e-6 for t in wanted)
        ]
        if len(gt_maps) != len(wanted):
            raise ValueError(
                f"ground truth under {gt_dir} does not cover requested taus {wanted}"
            )

    field_path = pred_dir / "field.bez"
    if field_path.is_file():
        pred = fileio.read_bezier(field_path)
    else:
        pred_flows = _collect_flows(pred_dir)
        pred = []
        for g in gt_maps:
            match = [p for p in pred_flows if abs(p.tau - g.tau) <= 1e-6]
            if not match:
                raise ValueError(f"no prediction for tau={g.tau} under {pred_dir}")
            pred.append(match[0])

    report = metrics.compute_report(pred, gt_maps)
    print(report.to_text())

    out = Path(args.out) if args.out else pred_dir
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "tepe": report.tepe,
        "tae": report.tae,
        "pixels": report.pixels,
        "per_tau": {f"{tau:.6f}": vals for tau, vals in report.per_tau.items()},
    }
    fileio.atomic_write_bytes(
        out / "metrics.json",
        (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode(),
    )
    _write_run_config(
        out,
        "evaluate",
        {
            "pred": str(pred_dir),
            "gt": str(gt_dir),
            "taus": args.taus,
            "seed": args.seed,
            "out": str(out),
        },
    )
    return 0


def _draw_polylines(image: np.ndarray, polylines, color) -> None:
    # Minimal line rasterizer: dense sampling between consecutive points.
    h, w = image.shape[:2]
    for points in polylines:
        for (x0, y0), (x1, y1) in zip(points[:-1], points[1:]):
            steps = int(max(abs(x1 - x0), abs(y1 - y0)) * 2) + 2
            xs = np.linspace(x0, x1, steps)
            ys = np.linspace(y0, y1, steps)
            px = np.round(xs).astype(np.int64)
            py = np.round(ys).astype(np.int64)
            ok = (px >= 0) & (px < w) & (py >= 0) & (py < h)
            image[py[ok], px[ok]] = color


def _cmd_visualize(args) -> int:
    out = Path(args.out)
    if args.trajectories:
        if not args.field or not args.frame:
            raise UsageError("--trajectories needs --field and --frame")
        field = fileio.read_bezier(args.field)
        base = fileio.load_image(args.frame)
        if base.ndim == 2:
            base = np.stack([base] * 3, axis=-1)
        base = base.copy()
        stride = max(1, args.stride)
        ys = np.arange(stride // 2, field.height, stride)
        xs = np.arange(stride // 2, field.width, stride)
        tau_grid = np.linspace(0.0, 1.0, 17)

        if args.gt:
            gt_maps = _collect_flows(Path(args.gt))
            red = []
            for y in ys:
                for x in xs:
                    pts = [(float(x), float(y))]
                    pts += [
                        (x + g.values[y, x, 0], y + g.values[y, x, 1]) for g in gt_maps
                    ]
                    red.append(pts)
            _draw_polylines(base, red, np.array([220, 40, 40], dtype=np.uint8))

        samples = [field.evaluate(float(tau)).values for tau in tau_grid]
        blue = []
        for y in ys:
            for x in xs:
                pts = [(x + d[y, x, 0], y + d[y, x, 1]) for d in samples]
                blue.append(pts)
        _draw_polylines(base, blue, np.array([40, 70, 235], dtype=np.uint8))
        fileio.save_image(out, base)
    else:
        if not args.flow:
            raise UsageError("need --flow FILE (or --trajectories)")
        flow = fileio.read_flow(args.flow)
        fileio.save_image(out, fileio.colorize_flow(flow, args.max_magnitude))

    _write_run_config(
        out.parent,
        "visualize",
        {
            "flow": args.flow,
            "field": args.field,
            "frame": args.frame,
            "gt": args.gt,
            "trajectories": bool(args.trajectories),
            "stride": args.stride,
            "max_magnitude": args.max_magnitude,
            "seed": args.seed,
            "out": str(out),
        },
    )
    print(f"wrote {out}")
    return 0


def _cmd_inspect(args) -> int:
    stream = fileio.read_events(args.events)
    print(f"file: {args.events}")
    print(f"sensor: {stream.width}x{stream.height}")
    print(f"events: {len(stream)}")
    if len(stream):
        span_us = int(stream.t[-1] - stream.t[0])
        rate = len(stream) / max(span_us, 1) * 1e6
        positive = int(np.sum(stream.p > 0))
        print(f"time span: {stream.t[0]} .. {stream.t[-1]} us ({span_us / 1e6:.6f} s)")
        print(f"mean rate: {rate:.1f} events/s")
        print(
            f"polarity: +{positive} / -{len(stream) - positive} "
            f"({100.0 * positive / len(stream):.1f}% positive)"
        )
    return 0


# --------------------------------------------------------------------------
# Parser wiring


def build_parser() -> _Parser:
    parser = _Parser(prog="evtraj", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render synthetic sequences with ground truth")
    p.add_argument("--config", help="generator config JSON")
    p.add_argument("--out", required=True, help="output root directory")
    p.add_argument("--count", type=int, default=1, help="number of sequences")
    p.add_argument("--background-dir", default="", help="override background asset dir")
    p.add_argument("--sprite-dir", default="", help="override sprite asset dir")
    _add_common(p)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("estimate", help="estimate a trajectory field from events")
    p.add_argument("--events", required=True, help="EVF1 event file")
    p.add_argument("--frames", nargs=2, metavar=("REF", "TGT"), help="frame pair")
    p.add_argument("--config", help="estimator config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--t-ref-us", type=float, default=None, help="reference time (us)")
    p.add_argument("--t-target-us", type=float, default=None, help="target time (us)")
    p.add_argument("--taus", default="0.25,0.5,0.75,1.0", help="flow sample times")
    _add_common(p)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("evaluate", help="compare predictions against ground truth")
    p.add_argument("--pred", required=True, help="prediction directory")
    p.add_argument("--gt", required=True, help="ground-truth directory")
    p.add_argument("--taus", default="", help="restrict to these taus")
    p.add_argument("--out", default="", help="where to write metrics.json")
    _add_common(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("visualize", help="render flow colorizations or trajectories")
    p.add_argument("--flow", help=".flo32 file to colorize")
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--max-magnitude", type=float, default=None)
    p.add_argument("--trajectories", action="store_true", help="draw curve overlay")
    p.add_argument("--field", help="bezier field for --trajectories")
    p.add_argument("--frame", help="background frame for --trajectories")
    p.add_argument("--gt", default="", help="ground-truth flow dir for red curves")
    p.add_argument("--stride", type=int, default=16, help="pixel spacing of curves")
    _add_common(p)
    p.set_defaults(func=_cmd_visualize)

    p = sub.add_parser("inspect", help="print event file header and statistics")
    p.add_argument("--events", required=True, help="EVF1 event file")
    _add_common(p)
    p.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 1
    except (
        FileNotFoundError,
        IsADirectoryError,
        PermissionError,
        ValueError,
        KeyError,
        MemoryError,
        json.JSONDecodeError,
    ) as exc:
        kind = type(exc).__name__
        print(f"error: {kind}: {exc}", file=sys.stderr)
        return 2
