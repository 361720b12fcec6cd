"""Training-free event typing and band selection from spectral indices.

A scene is classified by walking an ordered list of binary rules: each rule
computes a normalized band-difference index on the frames directly before
and after the event, binarizes both, and scores the fraction of pixels that
flipped. The first rule whose score clears its threshold names the event
class; the class then selects which band networks run. All constants are
configuration, shipped with documented defaults per sensor.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bundle import MASK_CLOUD, SENSOR_BANDS, SceneBundle
from .util import dumps_canonical


class FeatureEngError(ValueError):
    pass


@dataclass(frozen=True)
class IndexRule:
    """One decision-tree test: an index, a binarize level, a score cut."""

    name: str
    band_x: str
    band_y: str
    binarize_threshold: float
    score_threshold: float
    class_on_true: str

    def __post_init__(self):
        if self.band_x == self.band_y:
            raise FeatureEngError("band_x and band_y must differ")
        if not np.isfinite(self.binarize_threshold):
            raise FeatureEngError("binarize_threshold must be finite")
        if not (0.0 <= self.score_threshold <= 1.0):
            raise FeatureEngError("score_threshold must be in [0, 1]")


@dataclass(frozen=True)
class FeatureEngSpec:
    """Ordered rules plus the per-class band subsets for one sensor."""

    sensor: str
    rules: tuple[IndexRule, ...]
    band_subsets: dict[str, tuple[int, ...]]
    fallback_class: str

    def __post_init__(self):
        labels = SENSOR_BANDS.get(self.sensor)
        if labels is None:
            raise FeatureEngError(f"unknown sensor {self.sensor!r}")
        n_bands = len(labels)
        classes = {r.class_on_true for r in self.rules} | {self.fallback_class}
        for cls in classes:
            if cls not in self.band_subsets:
                raise FeatureEngError(f"class {cls!r} is reachable but has no band subset")
        for cls, subset in self.band_subsets.items():
            if not subset:
                raise FeatureEngError(f"band subset for {cls!r} is empty")
            if any(not (1 <= b <= n_bands) for b in subset):
                raise FeatureEngError(f"band subset for {cls!r} outside 1..{n_bands}")
        for rule in self.rules:
            for band in (rule.band_x, rule.band_y):
                if band not in labels:
                    raise FeatureEngError(f"rule {rule.name!r} uses unknown band {band!r}")

    def classes(self) -> list[str]:
        return sorted(self.band_subsets)

    def to_dict(self) -> dict:
        return {
            "sensor": self.sensor,
            "fallback_class": self.fallback_class,
            "rules": [
                {"name": r.name, "band_x": r.band_x, "band_y": r.band_y,
                 "binarize_threshold": r.binarize_threshold,
                 "score_threshold": r.score_threshold,
                 "class_on_true": r.class_on_true}
                for r in self.rules
            ],
            "band_subsets": {cls: list(subset)
                             for cls, subset in sorted(self.band_subsets.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureEngSpec":
        return cls(
            sensor=d["sensor"],
            rules=tuple(IndexRule(**r) for r in d["rules"]),
            band_subsets={k: tuple(v) for k, v in d["band_subsets"].items()},
            fallback_class=d["fallback_class"],
        )

    def save(self, path) -> None:
        Path(path).write_text(dumps_canonical(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "FeatureEngSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_spec(sensor: str = "sentinel2") -> FeatureEngSpec:
    """Shipped defaults. Declared, not derived from any published tree.

    Sentinel-2 order: burn index (NIR vs SWIR2) for fires, water index
    (green vs NIR) for floods, vegetation index (NIR vs red) for landslides,
    hurricane as the fallback. The hurricane subset matches the four-network
    worked example (bands 1-3 and 9).
    """
    if sensor == "sentinel2":
        return FeatureEngSpec(
            sensor="sentinel2",
            rules=(
                IndexRule("nbr", "B8", "B12", 0.2, 0.05, "fire"),
                IndexRule("ndwi", "B3", "B8", 0.0, 0.05, "flood"),
                IndexRule("ndvi", "B8", "B4", 0.3, 0.05, "landslide"),
            ),
            band_subsets={
                "fire": (7, 8, 9, 10),
                "flood": (2, 3, 7, 9),
                "landslide": (1, 2, 3, 7),
                "hurricane": (1, 2, 3, 9),
            },
            fallback_class="hurricane",
        )
    if sensor == "landsat8":
        return FeatureEngSpec(
            sensor="landsat8",
            rules=(
                IndexRule("nbr", "B5", "B7", 0.2, 0.05, "fire"),
                IndexRule("ndwi", "B3", "B5", 0.0, 0.05, "flood"),
                IndexRule("ndvi", "B5", "B4", 0.3, 0.05, "landslide"),
            ),
            band_subsets={
                "fire": (4, 5, 6, 9),
                "flood": (2, 3, 4, 6),
                "landslide": (1, 2, 3, 4),
                "hurricane": (1, 2, 3, 6),
            },
            fallback_class="hurricane",
        )
    raise FeatureEngError(f"no default feature spec for sensor {sensor!r}")


def index_image(frame: np.ndarray, band_x: int, band_y: int) -> np.ndarray:
    """Pixel-wise (BX - BY) / (BX + BY) on raw reflectance; 0 where BX+BY == 0.

    ``frame`` is (B, H, W); band_x/band_y are array positions.
    """
    bx = frame[band_x].astype(np.float64)
    by = frame[band_y].astype(np.float64)
    denom = bx + by
    out = np.zeros(bx.shape, dtype=np.float64)
    nz = denom != 0.0
    out[nz] = (bx[nz] - by[nz]) / denom[nz]
    return out


def class_score(before_frame: np.ndarray, after_frame: np.ndarray, rule: IndexRule,
                band_labels: list[str], exclude: np.ndarray | None = None) -> float:
    """Fraction of usable pixels whose binarized index flips across the event.

    ``exclude`` masks pixels (cloud, missing) out of both numerator and
    denominator. If every pixel is excluded the score is 0 and a
    RuntimeWarning is issued.
    """
    try:
        x = band_labels.index(rule.band_x)
        y = band_labels.index(rule.band_y)
    except ValueError as exc:
        raise FeatureEngError(f"rule {rule.name!r}: {exc}") from None
    idx_before = index_image(before_frame, x, y)
    idx_after = index_image(after_frame, x, y)
    bin_before = idx_before > rule.binarize_threshold
    bin_after = idx_after > rule.binarize_threshold
    flipped = bin_before != bin_after
    if exclude is not None:
        usable = ~exclude
        total = int(usable.sum())
        if total == 0:
            warnings.warn(f"rule {rule.name!r}: every pixel excluded, score forced to 0",
                          RuntimeWarning, stacklevel=2)
            return 0.0
        return float(flipped[usable].sum()) / total
    return float(flipped.mean())


def classify_event(scene: SceneBundle, spec: FeatureEngSpec,
                   honor_hint: bool = False) -> str:
    """Walk the rules on the frames directly before/after the event.

    The first rule whose score reaches its threshold wins; otherwise the
    fallback class. With ``honor_hint`` a scene-provided class hint bypasses
    the tree entirely.
    """
    if spec.sensor != scene.sensor:
        raise FeatureEngError(f"spec targets {spec.sensor}, scene is {scene.sensor}")
    if honor_hint and scene.event_class_hint is not None:
        return scene.event_class_hint
    before = scene.frames[-2]
    after = scene.frames[-1]
    exclude = scene.missing | (scene.mask == MASK_CLOUD)
    for rule in spec.rules:
        score = class_score(before, after, rule, scene.band_labels, exclude=exclude)
        if score >= rule.score_threshold:
            return rule.class_on_true
    return spec.fallback_class


def select_bands(event_class: str, spec: FeatureEngSpec) -> list[int]:
    """Ascending 1-based band indices whose networks run for this class."""
    subset = spec.band_subsets.get(event_class)
    if subset is None:
        raise FeatureEngError(f"unknown class {event_class!r}")
    return sorted(subset)
