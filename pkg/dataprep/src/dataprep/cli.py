"""Command line for the bundle converter."""

from __future__ import annotations

import argparse
import sys

from .convert import ConversionError, ConversionJob, convert_event

_SENSOR_ALIASES = {"s2": "sentinel2", "l8": "landsat8",
                   "sentinel2": "sentinel2", "landsat8": "landsat8"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nwcd-dataprep",
        description="Convert GeoTIFF event sequences to scene bundles")
    sub = parser.add_subparsers(dest="command", required=True)
    conv = sub.add_parser("convert", help="convert one event directory")
    conv.add_argument("--sensor", choices=sorted(_SENSOR_ALIASES), required=True)
    conv.add_argument("--in", dest="input_dir", required=True, metavar="DIR")
    conv.add_argument("--out", dest="output_dir", required=True, metavar="DIR")
    conv.add_argument("--stats", dest="stats_path", metavar="FILE",
                      help="log-space per-band min/max JSON; computed from the "
                           "before-frames when omitted")
    conv.add_argument("--mask", dest="mask_path", metavar="FILE",
                      help="change-mask GeoTIFF (default: <in>/mask.tif)")
    conv.add_argument("--event-id", dest="event_id")
    conv.add_argument("--hint", dest="event_class_hint",
                      help="optional event class hint stored in the manifest")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ConversionJob(
        input_dir=args.input_dir,
        sensor=_SENSOR_ALIASES[args.sensor],
        output_dir=args.output_dir,
        stats_path=args.stats_path,
        mask_path=args.mask_path,
        event_id=args.event_id,
        event_class_hint=args.event_class_hint,
    )
    try:
        out = convert_event(job)
    except ConversionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote bundle to {out}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
