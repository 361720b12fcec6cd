"""GeoTIFF event directories -> scene-bundle directories.

The writer reimplements the bundle file schema (manifest.json plus SBND
frame payloads) so this package stays independent of the consumer; the
formats are the interface. Five co-registered frames per event, band order
already matching the sensor's band table, change masks optional.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tifffile

FRAME_MAGIC = b"SBND"
FRAME_VERSION = 1
N_FRAMES = 5

SENSOR_BANDS = {
    "sentinel2": ["B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8a", "B11", "B12"],
    "landsat8": ["B2", "B3", "B4", "B5", "B6", "B7", "B9", "B10", "B11"],
}

# georeferencing tags that must agree across an event's frames
_GEO_TAGS = (33550, 33922, 34264, 34735, 34736, 34737)
_NODATA_TAG = 42113


class ConversionError(ValueError):
    pass


@dataclass
class ConversionJob:
    input_dir: str
    sensor: str                    # "sentinel2" | "landsat8"
    output_dir: str
    stats_path: str | None = None  # JSON {band label: [log min, log max]}
    mask_path: str | None = None   # defaults to <input_dir>/mask.tif when present
    affected_value: int = 1
    cloud_value: int = 2
    event_id: str | None = None
    event_class_hint: str | None = None

    def __post_init__(self):
        if self.sensor not in SENSOR_BANDS:
            raise ConversionError(f"unknown sensor {self.sensor!r}")


def _frame_paths(input_dir: Path) -> list[Path]:
    frames = sorted(p for p in input_dir.iterdir()
                    if p.suffix.lower() in (".tif", ".tiff")
                    and not p.stem.lower().startswith("mask"))
    return frames


def _read_frame(path: Path, n_bands: int) -> tuple[np.ndarray, dict, float | None]:
    """Returns (bands, H, W) float32 data, geo-tag values, nodata value."""
    with tifffile.TiffFile(path) as tif:
        data = tif.asarray()
        tags = tif.pages[0].tags
        geo = {code: tags[code].value for code in _GEO_TAGS if code in tags}
        nodata = None
        if _NODATA_TAG in tags:
            try:
                nodata = float(str(tags[_NODATA_TAG].value).strip().split()[0])
            except (ValueError, IndexError):
                nodata = None
    if data.ndim == 2:
        data = data[None]
    if data.ndim != 3:
        raise ConversionError(f"{path.name}: expected a 2-D or 3-D raster")
    if data.shape[0] != n_bands:
        if data.shape[2] == n_bands:
            data = np.moveaxis(data, 2, 0)
        else:
            raise ConversionError(
                f"{path.name}: {data.shape} does not provide {n_bands} bands")
    return np.ascontiguousarray(data, dtype=np.float32), geo, nodata


def _resample_nearest(mask: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour regrid onto the frame dimensions."""
    h, w = dims
    src_h, src_w = mask.shape
    rows = np.minimum((np.arange(h) * src_h) // h, src_h - 1)
    cols = np.minimum((np.arange(w) * src_w) // w, src_w - 1)
    return mask[rows][:, cols]


def _write_frame_raw(path: Path, bands: np.ndarray) -> None:
    b, h, w = bands.shape
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<HIII", FRAME_VERSION, b, h, w))
        fh.write(np.ascontiguousarray(bands, dtype="<f4").tobytes())


def _load_stats(path: Path, labels: list[str]) -> np.ndarray:
    doc = json.loads(path.read_text())
    stats = np.empty((len(labels), 2))
    for i, label in enumerate(labels):
        if label not in doc:
            raise ConversionError(f"stats file lacks band {label!r}")
        lo, hi = doc[label]
        if not lo < hi:
            raise ConversionError(f"stats for {label!r} need min < max")
        stats[i] = (lo, hi)
    return stats


def _compute_stats(frames: np.ndarray, missing: np.ndarray) -> np.ndarray:
    """Log-space 1st/99th percentiles over the before-frames per band."""
    before = frames[: N_FRAMES - 1]
    n_bands = before.shape[1]
    stats = np.empty((n_bands, 2))
    for b in range(n_bands):
        vals = before[:, b][:, ~missing]
        vals = vals[vals > 0]
        if vals.size == 0:
            raise ConversionError(f"band {b}: no positive samples for stats")
        logs = np.log(vals.astype(np.float64))
        lo, hi = np.percentile(logs, (1.0, 99.0))
        if not lo < hi:
            lo, hi = lo - 0.01, hi + 0.01
        stats[b] = (lo, hi)
    return stats


def convert_event(job: ConversionJob) -> Path:
    """Convert one event directory; returns the bundle path.

    Frames are the lexically sorted .tif files of the input directory
    (mask* excluded); exactly five are required, band order per the
    sensor's band table, all frames co-registered (matching geo tags).
    """
    input_dir = Path(job.input_dir)
    if not input_dir.is_dir():
        raise ConversionError(f"{input_dir} is not a directory")
    labels = SENSOR_BANDS[job.sensor]
    paths = _frame_paths(input_dir)
    if len(paths) != N_FRAMES:
        raise ConversionError(
            f"{input_dir}: expected {N_FRAMES} frames, found {len(paths)}")

    frames = []
    geo_ref = None
    nodata_ref = None
    for path in paths:
        data, geo, nodata = _read_frame(path, len(labels))
        if frames and data.shape != frames[0].shape:
            raise ConversionError(f"{path.name}: dims differ from first frame")
        if geo_ref is None:
            geo_ref = geo
        elif geo != geo_ref:
            raise ConversionError(f"{path.name}: georeferencing differs across frames")
        if nodata is not None:
            nodata_ref = nodata
        frames.append(data)
    stack = np.stack(frames)  # (T, B, H, W)
    h, w = stack.shape[2:]

    missing = ~np.isfinite(stack).all(axis=(0, 1))
    if nodata_ref is not None:
        missing |= (stack == np.float32(nodata_ref)).any(axis=(0, 1))

    mask_path = Path(job.mask_path) if job.mask_path else input_dir / "mask.tif"
    if mask_path.exists():
        raw_mask = tifffile.imread(mask_path)
        if raw_mask.ndim != 2:
            raise ConversionError(f"{mask_path.name}: mask must be single-band")
        if raw_mask.shape != (h, w):
            raw_mask = _resample_nearest(raw_mask, (h, w))
        mask = np.zeros((h, w), dtype=np.uint8)
        mask[raw_mask == job.affected_value] = 1
        mask[raw_mask == job.cloud_value] = 2
    else:
        mask = np.zeros((h, w), dtype=np.uint8)

    if job.stats_path:
        stats = _load_stats(Path(job.stats_path), labels)
        stats_source = "provided"
    else:
        stats = _compute_stats(stack, missing)
        stats_source = "computed"

    out = Path(job.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame_names = [f"frame_{t + 1}.raw" for t in range(N_FRAMES)]
    for name, frame in zip(frame_names, stack):
        _write_frame_raw(out / name, frame)
    (out / "mask.raw").write_bytes(mask.tobytes())
    (out / "missing.raw").write_bytes(missing.astype(np.uint8).tobytes())

    manifest = {
        "format": "scene-bundle-v1",
        "sensor": job.sensor,
        "dims": [int(h), int(w)],
        "T": N_FRAMES,
        "bands": labels,
        "norm_stats": {label: [float(lo), float(hi)]
                       for label, (lo, hi) in zip(labels, stats)},
        "paths": {"frames": frame_names, "mask": "mask.raw",
                  "missing": "missing.raw"},
        "event_id": job.event_id or input_dir.name,
        "event_class_hint": job.event_class_hint,
        "stats_source": stats_source,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out
