"""Command-line interface: run experiments, benchmarks and bundle tooling."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import bundle as bundle_io
from . import pipeline, scenegen
from .dynamics import DynamicsConfig
from .featureng import FeatureEngSpec, classify_event, default_spec, select_bands
from .netgen import NetgenConfig, generate_graph
from .runner import RunConfig, benchmark, run_experiment
from .util import dumps_canonical, subseed


def _parse_dims(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must look like 574x509, got {text!r}")
    return h, w


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nwcd",
        description="Training-free change detection with simulated nanowire networks")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="evaluate a set of event bundles")
    run.add_argument("bundles", nargs="+", help="scene bundle directories")
    run.add_argument("--metric", choices=["euclidean", "cosine", "correlation"],
                     default="correlation")
    run.add_argument("--model", choices=["pann", "baseline"], default="pann")
    run.add_argument("--runs", type=int, default=5, metavar="N")
    run.add_argument("--seed", type=int, default=0, metavar="S")
    run.add_argument("--reset-per-tile", action="store_true",
                     help="zero network state before every tile sequence")
    run.add_argument("--feature-spec", metavar="PATH",
                     help="JSON feature-engineering spec (default: built-in per sensor)")
    run.add_argument("--class-override", metavar="C",
                     help="skip classification and force this event class")
    run.add_argument("--threads", type=int, default=1, metavar="N")
    run.add_argument("--out", default="out", metavar="DIR")
    run.add_argument("--export-features", action="store_true",
                     help="also write per-event feature CSVs")
    run.add_argument("--export-curves", action="store_true",
                     help="also write per-class precision-recall curve CSVs")
    run.add_argument("--baseline-raw", action="store_true",
                     help="baseline compares raw unpooled all-band tiles")

    bench = sub.add_parser("bench", help="measure wall time and peak memory")
    bench.add_argument("--dims", type=_parse_dims, default=(574, 509), metavar="HxW")
    bench.add_argument("--threads", type=int, default=8, metavar="N")
    bench.add_argument("--seed", type=int, default=0, metavar="S")
    bench.add_argument("--out", metavar="FILE", help="also write the report as JSON")

    gen = sub.add_parser("gen-synth", help="write a synthetic event bundle")
    gen.add_argument("--kind", choices=sorted(scenegen.PRESETS), required=True)
    gen.add_argument("--dims", type=_parse_dims, default=(256, 256), metavar="HxW")
    gen.add_argument("--seed", type=int, default=0, metavar="S")
    gen.add_argument("--out", required=True, metavar="DIR")

    exp = sub.add_parser("export-features", help="extract features for one bundle to CSV")
    exp.add_argument("bundle", help="scene bundle directory")
    exp.add_argument("--out", required=True, metavar="FILE")
    exp.add_argument("--seed", type=int, default=0, metavar="S")
    exp.add_argument("--threads", type=int, default=1, metavar="N")
    exp.add_argument("--feature-spec", metavar="PATH")
    exp.add_argument("--class-override", metavar="C")
    exp.add_argument("--reset-per-tile", action="store_true")

    ins = sub.add_parser("inspect", help="summarize a bundle and hash its payloads")
    ins.add_argument("bundle", help="scene bundle directory")
    return parser


def _cmd_run(args) -> int:
    config = RunConfig(
        bundle_dirs=args.bundles,
        metric=args.metric,
        model=args.model,
        feature_spec_path=args.feature_spec,
        n_runs=args.runs,
        base_seed=args.seed,
        reset_mode="per_tile" if args.reset_per_tile else "persistent",
        class_override=args.class_override,
        out_dir=args.out,
        workers=args.threads,
        export_features=args.export_features,
        export_curves=args.export_curves,
        baseline_raw=args.baseline_raw,
    )
    report = run_experiment(config)
    for cls, entry in sorted(report["classes"].items()):
        if "error" in entry:
            print(f"{cls}: {entry['error']}", file=sys.stderr)
        elif "sem" in entry:
            print(f"{cls}: AUPRC {entry['mean']:.4f} +- {entry['sem']:.4f} "
                  f"({len(entry['runs'])} runs)", file=sys.stderr)
        else:
            print(f"{cls}: AUPRC {entry['mean']:.4f} (1 run)", file=sys.stderr)
    print(f"report written to {Path(config.out_dir) / 'report.json'}", file=sys.stderr)
    return 0


def _cmd_bench(args) -> int:
    result = benchmark(dims=args.dims, workers=args.threads, seed=args.seed)
    text = dumps_canonical(result, indent=1)
    print(text)
    if args.out:
        Path(args.out).write_text(text)
    return 0


def _cmd_gen_synth(args) -> int:
    spec = scenegen.PRESETS[args.kind](dims=args.dims, seed=args.seed)
    scene = scenegen.generate_scene(spec)
    path = bundle_io.write_bundle(scene, args.out)
    print(f"wrote {scene.event_id} ({scene.sensor}, "
          f"{scene.dims[0]}x{scene.dims[1]}) to {path}", file=sys.stderr)
    return 0


def _cmd_export_features(args) -> int:
    scene = bundle_io.read_bundle(args.bundle)
    spec = FeatureEngSpec.load(args.feature_spec) if args.feature_spec \
        else default_spec(scene.sensor)
    event_class = args.class_override or classify_event(scene, spec)
    bands = select_bands(event_class, spec)
    graph = generate_graph(NetgenConfig(seed=subseed(args.seed, "layout")),
                           readout_seed=subseed(args.seed, "readout"))
    tiles = pipeline.tile(scene, selected_bands=bands)
    feats, _ = pipeline.extract_features(
        tiles, bands, graph, DynamicsConfig(),
        reset_mode="per_tile" if args.reset_per_tile else "persistent",
        workers=args.threads)
    pipeline.export_features_csv(args.out, scene.event_id, feats)
    print(f"{scene.event_id}: class {event_class}, bands {bands}, "
          f"{len(feats)} tiles -> {args.out}", file=sys.stderr)
    return 0


def _cmd_inspect(args) -> int:
    path = Path(args.bundle)
    scene = bundle_io.read_bundle(path)
    manifest = json.loads((path / "manifest.json").read_text())
    frames = []
    for t, frame in enumerate(scene.frames):
        payload = np.ascontiguousarray(frame, dtype="<f4").tobytes()
        frames.append({
            "frame": t + 1,
            "sha256_float32": hashlib.sha256(payload).hexdigest(),
            "min": float(frame.min()),
            "max": float(frame.max()),
            "mean": float(frame.mean()),
        })
    summary = {
        "bundle": str(path),
        "event_id": scene.event_id,
        "sensor": scene.sensor,
        "dims": list(scene.dims),
        "T": int(scene.frames.shape[0]),
        "bands": list(scene.band_labels),
        "stats_source": manifest.get("stats_source", "provided"),
        "event_class_hint": scene.event_class_hint,
        "mask_counts": {
            "unaffected": int((scene.mask == 0).sum()),
            "affected": int((scene.mask == 1).sum()),
            "cloud": int((scene.mask == 2).sum()),
        },
        "missing_pixels": int(scene.missing.sum()),
        "frames": frames,
    }
    print(dumps_canonical(summary, indent=1))
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "bench": _cmd_bench,
    "gen-synth": _cmd_gen_synth,
    "export-features": _cmd_export_features,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
