"""Distance-based change scoring and per-pixel change-map assembly.

A tile's change score is the minimum distance between the last frame and
each of the four earlier frames, measured either in the network feature
space or directly on pooled pixels (the baseline). Scores broadcast to the
tile's pixel block; cloud and uncovered edge pixels are marked invalid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bundle import MASK_CLOUD
from .pipeline import FeatureSequence, TileSequence, tile_grid

CMAP_MAGIC = b"CMAP"

METRICS = ("euclidean", "cosine", "correlation")


class ChangeDetError(ValueError):
    pass


def euclidean_dist(u: np.ndarray, v: np.ndarray) -> float:
    u, v = _check_pair(u, v)
    return float(np.linalg.norm(u - v))


def cosine_dist(u: np.ndarray, v: np.ndarray) -> float:
    """1 - u.v / (|u| |v|), in [0, 2]; zero-norm inputs return 1 by convention.

    Clamped to [0, 2] so rounding can never produce a negative distance.
    """
    u, v = _check_pair(u, v)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 1.0
    return float(min(2.0, max(0.0, 1.0 - (u @ v) / (nu * nv))))


def correlation_dist(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine distance of the mean-centered vectors; constant vectors give 1."""
    u, v = _check_pair(u, v)
    if u.size < 2:
        raise ChangeDetError("correlation distance needs vectors of length >= 2")
    return cosine_dist(u - u.mean(), v - v.mean())


def _check_pair(u, v):
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ChangeDetError(f"length mismatch: {u.size} vs {v.size}")
    return u, v


_METRIC_FUNCS = {
    "euclidean": euclidean_dist,
    "cosine": cosine_dist,
    "correlation": correlation_dist,
}


def get_metric(kind: str):
    try:
        return _METRIC_FUNCS[kind]
    except KeyError:
        raise ChangeDetError(f"unknown metric {kind!r}; choose from {METRICS}") from None


def _min_dist_to_last(vectors: np.ndarray, metric: str) -> float:
    """Eq.-of-record change score: min distance from the last frame back."""
    if vectors.ndim != 2 or vectors.shape[0] < 2:
        raise ChangeDetError("need at least two frame vectors")
    dist = get_metric(metric)
    last = vectors[-1]
    return min(dist(earlier, last) for earlier in vectors[:-1])


def change_score(features: FeatureSequence, metric: str) -> float:
    """Score one tile from its feature sequence (min over the four lookbacks)."""
    return _min_dist_to_last(np.asarray(features.features, dtype=np.float64), metric)


def baseline_score(tiles: TileSequence, metric: str, use_raw: bool = False) -> float:
    """Same scoring rule on flattened pixels instead of features.

    Default compares the pooled selected-band tiles so the only difference
    from the model path is the feature space; ``use_raw`` switches to the
    unpooled tile pixels.
    """
    source = tiles.tiles if use_raw else tiles.pooled
    t = source.shape[0]
    vectors = source.reshape(t, -1).astype(np.float64)
    return _min_dist_to_last(vectors, metric)


@dataclass
class ChangeMap:
    """Per-pixel change likelihood for one event plus a validity mask."""

    scores: np.ndarray     # (H, W) float64
    valid: np.ndarray      # (H, W) bool; False on cloud and uncovered pixels
    event_id: str
    metric: str


def assemble_change_map(tile_scores: list[tuple[tuple[int, int], float]],
                        scene_dims: tuple[int, int], tile_side: int,
                        cloud_mask: np.ndarray, event_id: str = "event",
                        metric: str = "correlation") -> ChangeMap:
    """Broadcast per-tile scores onto the pixel grid.

    ``tile_scores`` pairs tile locations (a, b) with scores; every full tile
    must receive exactly one score. Cloud pixels and pixels not covered by a
    full tile are invalid.
    """
    h, w = scene_dims
    expected = tile_grid(h, w, tile_side)
    got = [loc for loc, _ in tile_scores]
    if sorted(got) != sorted(expected):
        raise ChangeDetError(f"tile scores do not cover the {len(expected)}-tile grid")
    if cloud_mask.shape != (h, w):
        raise ChangeDetError("cloud mask dims do not match the scene")

    scores = np.zeros((h, w), dtype=np.float64)
    valid = np.zeros((h, w), dtype=bool)
    for (a, b), s in tile_scores:
        if not np.isfinite(s):
            raise ChangeDetError(f"non-finite score at tile {(a, b)}")
        rs = slice(a * tile_side, (a + 1) * tile_side)
        cs = slice(b * tile_side, (b + 1) * tile_side)
        scores[rs, cs] = s
        valid[rs, cs] = True
    valid &= ~(cloud_mask == MASK_CLOUD)
    return ChangeMap(scores=scores, valid=valid, event_id=event_id, metric=metric)


def write_cmap(path, change_map: ChangeMap) -> None:
    """Raw export: magic, H and W as u32, then row-major float64 scores."""
    h, w = change_map.scores.shape
    with open(path, "wb") as fh:
        fh.write(CMAP_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(np.ascontiguousarray(change_map.scores, dtype="<f8").tobytes())


def read_cmap(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != CMAP_MAGIC:
        raise ChangeDetError(f"{path}: not a change-map file")
    h, w = struct.unpack_from("<II", raw, 4)
    data = np.frombuffer(raw, dtype="<f8", count=h * w, offset=12)
    return data.reshape(h, w).copy()


def write_pgm(path, change_map: ChangeMap) -> None:
    """16-bit PGM of min-max scaled scores for eyeballing; invalid pixels 0."""
    scores = change_map.scores
    valid = change_map.valid
    h, w = scores.shape
    img = np.zeros((h, w), dtype=np.uint16)
    if valid.any():
        vmin = scores[valid].min()
        vmax = scores[valid].max()
        span = vmax - vmin
        if span > 0:
            scaled = (scores - vmin) / span * 65535.0
        else:
            scaled = np.full_like(scores, 32768.0)
        img[valid] = np.clip(scaled[valid], 0, 65535).astype(np.uint16)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode())
        fh.write(img.astype(">u2").tobytes())  # PGM 16-bit samples are big-endian


def write_pbm(path, invalid: np.ndarray) -> None:
    """PBM bitmap of the invalid mask (1 = invalid)."""
    h, w = invalid.shape
    with open(path, "wb") as fh:
        fh.write(f"P4\n{w} {h}\n".encode())
        fh.write(np.packbits(invalid.astype(np.uint8), axis=1).tobytes())
