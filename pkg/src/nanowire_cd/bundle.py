"""Scene bundles: the on-disk event format and its in-memory counterpart.

A bundle directory holds one natural-disaster event: five frame rasters
(four before, one after), per-band log-space normalization stats, a change
mask with labels {0 unaffected, 1 affected, 2 cloud}, and a missing-pixel
mask. Frame payloads use a small binary format (magic ``SBND``) so bundles
round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .util import dumps_canonical

FRAME_MAGIC = b"SBND"
FRAME_VERSION = 1
N_FRAMES = 5

SENSOR_BANDS = {
    "sentinel2": ["B2", "B3", "B4", "B5", "B6", "B7", "B8", "B8a", "B11", "B12"],
    "landsat8": ["B2", "B3", "B4", "B5", "B6", "B7", "B9", "B10", "B11"],
}
TILE_SIDE = {"sentinel2": 32, "landsat8": 16}

MASK_UNAFFECTED = 0
MASK_AFFECTED = 1
MASK_CLOUD = 2


class BundleError(ValueError):
    pass


@dataclass
class SceneBundle:
    """One event: frames (T, B, H, W) float32 plus masks and metadata."""

    sensor: str
    frames: np.ndarray
    band_labels: list[str]
    norm_stats: np.ndarray     # (B, 2) float64 log-space (min, max)
    mask: np.ndarray           # (H, W) uint8 in {0, 1, 2}
    missing: np.ndarray        # (H, W) bool
    event_id: str = "event"
    event_class_hint: str | None = None
    stats_source: str = "provided"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.sensor not in SENSOR_BANDS:
            raise BundleError(f"unknown sensor {self.sensor!r}")
        if self.frames.ndim != 4:
            raise BundleError("frames must be (T, B, H, W)")
        t, b, h, w = self.frames.shape
        if t != N_FRAMES:
            raise BundleError(f"expected {N_FRAMES} frames, got {t}")
        expected_b = len(SENSOR_BANDS[self.sensor])
        if b != expected_b:
            raise BundleError(f"{self.sensor} needs {expected_b} bands, got {b}")
        if list(self.band_labels) != SENSOR_BANDS[self.sensor]:
            raise BundleError(f"band labels must match {SENSOR_BANDS[self.sensor]}")
        if self.norm_stats.shape != (b, 2):
            raise BundleError("norm_stats must be (B, 2)")
        if not (self.norm_stats[:, 0] < self.norm_stats[:, 1]).all():
            raise BundleError("norm_stats require min < max per band")
        if self.mask.shape != (h, w):
            raise BundleError("mask dims must match frames")
        if self.missing.shape != (h, w):
            raise BundleError("missing dims must match frames")
        if self.mask.max(initial=0) > MASK_CLOUD:
            raise BundleError("mask labels must be in {0, 1, 2}")

    @property
    def dims(self) -> tuple[int, int]:
        return self.frames.shape[2], self.frames.shape[3]

    @property
    def n_bands(self) -> int:
        return self.frames.shape[1]

    @property
    def tile_side(self) -> int:
        return TILE_SIDE[self.sensor]

    def band_position(self, label: str) -> int:
        """Array position of a band label; raises on unknown labels."""
        try:
            return self.band_labels.index(label)
        except ValueError:
            raise BundleError(f"band {label!r} not in {self.sensor} bundle") from None


def write_frame_raw(path, bands: np.ndarray) -> None:
    """Write one frame: SBND header + float32 LE band-major row-major data."""
    b, h, w = bands.shape
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<HIII", FRAME_VERSION, b, h, w))
        fh.write(np.ascontiguousarray(bands, dtype="<f4").tobytes())


def read_frame_raw(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FRAME_MAGIC:
        raise BundleError(f"{path}: not an SBND frame file")
    version, b, h, w = struct.unpack_from("<HIII", raw, 4)
    if version != FRAME_VERSION:
        raise BundleError(f"{path}: unsupported frame version {version}")
    expected = 4 + 14 + 4 * b * h * w
    if len(raw) != expected:
        raise BundleError(f"{path}: size {len(raw)} != expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", count=b * h * w, offset=18)
    return data.reshape(b, h, w).copy()


def write_bundle(scene: SceneBundle, out_dir) -> Path:
    """Write a bundle directory; returns its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t, b, h, w = scene.frames.shape
    frame_names = [f"frame_{i + 1}.raw" for i in range(t)]
    for name, frame in zip(frame_names, scene.frames):
        write_frame_raw(out / name, frame)
    (out / "mask.raw").write_bytes(np.ascontiguousarray(scene.mask, dtype=np.uint8).tobytes())
    (out / "missing.raw").write_bytes(
        np.ascontiguousarray(scene.missing, dtype=np.uint8).tobytes())
    manifest = {
        "format": "scene-bundle-v1",
        "sensor": scene.sensor,
        "dims": [h, w],
        "T": t,
        "bands": list(scene.band_labels),
        "norm_stats": {label: [float(mn), float(mx)]
                       for label, (mn, mx) in zip(scene.band_labels, scene.norm_stats)},
        "paths": {"frames": frame_names, "mask": "mask.raw", "missing": "missing.raw"},
        "event_id": scene.event_id,
        "event_class_hint": scene.event_class_hint,
        "stats_source": scene.stats_source,
    }
    (out / "manifest.json").write_text(dumps_canonical(manifest, indent=1))
    return out


def read_bundle(bundle_dir) -> SceneBundle:
    path = Path(bundle_dir)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise BundleError(f"{path}: no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "scene-bundle-v1":
        raise BundleError(f"{path}: unknown bundle format {manifest.get('format')!r}")
    sensor = manifest["sensor"]
    h, w = manifest["dims"]
    bands = manifest["bands"]
    frames = np.stack([read_frame_raw(path / name)
                       for name in manifest["paths"]["frames"]])
    if frames.shape[2:] != (h, w):
        raise BundleError(f"{path}: frame dims disagree with manifest")
    norm_stats = np.array([manifest["norm_stats"][label] for label in bands],
                          dtype=np.float64)
    mask = np.frombuffer((path / manifest["paths"]["mask"]).read_bytes(),
                         dtype=np.uint8)
    if mask.size != h * w:
        raise BundleError(f"{path}: mask size mismatch")
    missing = np.frombuffer((path / manifest["paths"]["missing"]).read_bytes(),
                            dtype=np.uint8)
    if missing.size != h * w:
        raise BundleError(f"{path}: missing-mask size mismatch")
    return SceneBundle(
        sensor=sensor,
        frames=frames,
        band_labels=list(bands),
        norm_stats=norm_stats,
        mask=mask.reshape(h, w).copy(),
        missing=missing.reshape(h, w).astype(bool),
        event_id=manifest.get("event_id", path.name),
        event_class_hint=manifest.get("event_class_hint"),
        stats_source=manifest.get("stats_source", "provided"),
    )
