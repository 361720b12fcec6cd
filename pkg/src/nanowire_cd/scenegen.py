"""Synthetic scene generation: deterministic events with labeled changes.

Backgrounds are smooth per-band cosine mixtures; injected change rectangles
only affect the last frame and define the ground-truth mask, so the whole
stack is testable without any downloaded satellite data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import (MASK_AFFECTED, MASK_CLOUD, N_FRAMES, SENSOR_BANDS,
                     SceneBundle)

Rect = tuple[int, int, int, int]  # (row0, col0, height, width)


@dataclass(frozen=True)
class ChangeRect:
    rect: Rect
    deltas: dict[int, float]   # 1-based band index -> additive reflectance delta


@dataclass(frozen=True)
class SynthSpec:
    dims: tuple[int, int]
    sensor: str = "sentinel2"
    band_base: tuple[float, ...] = ()    # per-band mean reflectance
    band_amp: tuple[float, ...] = ()     # per-band background variation
    change_rects: tuple[ChangeRect, ...] = ()
    cloud_rects: tuple[Rect, ...] = ()
    missing_rects: tuple[Rect, ...] = ()
    noise_std: float = 0.0
    seed: int = 0
    event_id: str = "synthetic"
    event_class_hint: str | None = None

    def __post_init__(self):
        h, w = self.dims
        if h <= 0 or w <= 0:
            raise ValueError("dims must be positive")
        n_bands = len(SENSOR_BANDS[self.sensor])
        base = self.band_base or tuple([0.4] * n_bands)
        amp = self.band_amp or tuple([0.05] * n_bands)
        if len(base) != n_bands or len(amp) != n_bands:
            raise ValueError(f"need {n_bands} per-band parameters for {self.sensor}")
        object.__setattr__(self, "band_base", tuple(float(v) for v in base))
        object.__setattr__(self, "band_amp", tuple(float(v) for v in amp))
        for cr in self.change_rects:
            _check_rect(cr.rect, self.dims)
            for band in cr.deltas:
                if not (1 <= band <= n_bands):
                    raise ValueError(f"band index {band} out of range")
                if not np.isfinite(cr.deltas[band]):
                    raise ValueError("change deltas must be finite")
        for rect in self.cloud_rects + self.missing_rects:
            _check_rect(rect, self.dims)


def _check_rect(rect: Rect, dims) -> None:
    r0, c0, rh, rw = rect
    h, w = dims
    if r0 < 0 or c0 < 0 or rh <= 0 or rw <= 0 or r0 + rh > h or c0 + rw > w:
        raise ValueError(f"rect {rect} not inside dims {dims}")


def _rect_slice(rect: Rect):
    r0, c0, rh, rw = rect
    return slice(r0, r0 + rh), slice(c0, c0 + rw)


def _smooth_field(rng: np.random.Generator, dims) -> np.ndarray:
    """Low-frequency cosine mixture normalized to [-1, 1]."""
    h, w = dims
    yy = np.linspace(0.0, 1.0, h)[:, None]
    xx = np.linspace(0.0, 1.0, w)[None, :]
    out = np.zeros((h, w))
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 3.0, 2)
        py, px = rng.uniform(0.0, 2.0 * np.pi, 2)
        out += np.cos(2.0 * np.pi * fy * yy + py) * np.cos(2.0 * np.pi * fx * xx + px)
    peak = np.abs(out).max()
    return out / peak if peak > 0 else out


def generate_scene(spec: SynthSpec) -> SceneBundle:
    """Build the five-frame bundle a SynthSpec describes.

    Frames 1-4 share the background plus i.i.d. noise; frame 5 additionally
    applies the change deltas. Mask labels affected pixels 1 and cloud
    rectangles 2 (cloud wins where they overlap).
    """
    h, w = spec.dims
    n_bands = len(SENSOR_BANDS[spec.sensor])
    rng = np.random.default_rng(spec.seed)

    background = np.empty((n_bands, h, w), dtype=np.float64)
    for b in range(n_bands):
        background[b] = spec.band_base[b] + spec.band_amp[b] * _smooth_field(rng, spec.dims)

    frames = np.empty((N_FRAMES, n_bands, h, w), dtype=np.float32)
    for t in range(N_FRAMES):
        noisy = background + rng.normal(0.0, spec.noise_std, background.shape) \
            if spec.noise_std > 0 else background.copy()
        if t == N_FRAMES - 1:
            for cr in spec.change_rects:
                rs, cs = _rect_slice(cr.rect)
                for band, delta in cr.deltas.items():
                    noisy[band - 1, rs, cs] += delta
        frames[t] = np.clip(noisy, 1e-3, None)

    mask = np.zeros((h, w), dtype=np.uint8)
    for cr in spec.change_rects:
        rs, cs = _rect_slice(cr.rect)
        mask[rs, cs] = MASK_AFFECTED
    for rect in spec.cloud_rects:
        rs, cs = _rect_slice(rect)
        mask[rs, cs] = MASK_CLOUD

    missing = np.zeros((h, w), dtype=bool)
    for rect in spec.missing_rects:
        rs, cs = _rect_slice(rect)
        missing[rs, cs] = True
    frames[:, :, missing] = 0.0  # nodata convention: non-positive

    # log-space stats from the before-frames, padded so clean pixels stay inside
    logs = np.log(np.clip(frames[: N_FRAMES - 1], 1e-6, None))
    stats = np.empty((n_bands, 2), dtype=np.float64)
    for b in range(n_bands):
        vals = logs[:, b][:, ~missing] if missing.any() else logs[:, b]
        lo, hi = float(vals.min()), float(vals.max())
        pad = max(0.01 * (hi - lo), 1e-3)
        stats[b] = (lo - pad, hi + pad)

    return SceneBundle(
        sensor=spec.sensor,
        frames=frames,
        band_labels=list(SENSOR_BANDS[spec.sensor]),
        norm_stats=stats,
        mask=mask,
        missing=missing,
        event_id=spec.event_id,
        event_class_hint=spec.event_class_hint,
        stats_source="computed",
    )


def _tile_aligned_rect(dims, tile_side, frac=0.35) -> Rect:
    """A tile-aligned rectangle covering roughly ``frac`` of the scene."""
    h, w = dims
    th, tw = h // tile_side, w // tile_side
    rh = max(1, int(round(th * frac)))
    rw = max(1, int(round(tw * frac)))
    r0 = ((th - rh) // 2) * tile_side
    c0 = ((tw - rw) // 2) * tile_side
    return (r0, c0, rh * tile_side, rw * tile_side)


def fire_like_spec(dims=(256, 256), seed=0, tile_side=32) -> SynthSpec:
    """Vegetated background whose change rect swings NIR down and SWIR up."""
    base = [0.30, 0.32, 0.28, 0.35, 0.40, 0.50, 0.60, 0.58, 0.35, 0.30]
    rect = _tile_aligned_rect(dims, tile_side)
    return SynthSpec(
        dims=dims,
        band_base=tuple(base),
        band_amp=tuple([0.04] * 10),
        change_rects=(ChangeRect(rect=rect, deltas={7: -0.38, 8: -0.34, 9: 0.22, 10: 0.38}),),
        noise_std=0.01,
        seed=seed,
        event_id=f"fire_synth_{seed}",
        event_class_hint="fire",
    )


def flood_like_spec(dims=(256, 256), seed=1, tile_side=32) -> SynthSpec:
    """Land background; the change rect turns water-like (green up, NIR down).

    Band levels keep the burn and vegetation indices clear of their binarize
    thresholds on both sides of the event, so only the water rule fires.
    """
    base = [0.30, 0.24, 0.28, 0.32, 0.33, 0.33, 0.34, 0.33, 0.30, 0.32]
    rect = _tile_aligned_rect(dims, tile_side)
    return SynthSpec(
        dims=dims,
        band_base=tuple(base),
        band_amp=tuple([0.04] * 10),
        change_rects=(ChangeRect(rect=rect, deltas={2: 0.18, 3: 0.10, 7: -0.24, 9: -0.15}),),
        noise_std=0.01,
        seed=seed,
        event_id=f"flood_synth_{seed}",
        event_class_hint="flood",
    )


def quiet_spec(dims=(256, 256), seed=2) -> SynthSpec:
    """No injected change; the mask is all-unaffected."""
    return SynthSpec(
        dims=dims,
        noise_std=0.01,
        seed=seed,
        event_id=f"quiet_synth_{seed}",
        event_class_hint="quiet",
    )


PRESETS = {
    "fire": fire_like_spec,
    "flood": flood_like_spec,
    "quiet": quiet_spec,
}
