"""Scene-to-feature pipeline: normalize, tile, pool, drive the band networks.

Each selected band feeds its own network instance (identical topology,
independent state): the pooled 16x16 tile pixels map row-major onto the
16x16 electrode grid as volts, the network advances one frame, and the
readout voltages of all selected bands concatenate into the tile's feature
vector for that frame.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .bundle import SceneBundle
from .dynamics import (DynamicsConfig, InputFrame, KirchhoffSolver,
                       NetworkState, readout, step)
from .netgen import NetworkGraph

MISSING_FILL = 0.005   # just above the zero of the [-1, 1] range
POOLED_SIDE = 16


class PipelineError(ValueError):
    pass


@dataclass
class TileSequence:
    """All frames of one tile location, normalized and pooled."""

    loc: tuple[int, int]            # (a, b) = (row, col) in the tile grid
    tiles: np.ndarray               # (T, N_sel, s, s) float32
    pooled: np.ndarray              # (T, N_sel, 16, 16) float32


@dataclass
class FeatureSequence:
    """Concatenated readout vectors per frame for one tile location."""

    loc: tuple[int, int]
    features: np.ndarray            # (T, 400 * N_sel) float64
    band_order: tuple[int, ...]     # ascending 1-based band indices


def normalize(raster: np.ndarray, norm_stats: np.ndarray,
              missing: np.ndarray) -> np.ndarray:
    """Log then affine-map each band onto [-1, 1] with fixed stats.

    Non-positive input values count as missing; missing pixels are set to
    MISSING_FILL after scaling. Values outside the fixed stats clip to the
    interval ends.
    """
    if raster.ndim != 3:
        raise PipelineError("raster must be (B, H, W)")
    bad = missing[None, :, :] | (raster <= 0.0)
    safe = np.where(bad, 1.0, raster)
    out = np.log(safe, dtype=np.float64)
    mn = norm_stats[:, 0][:, None, None]
    mx = norm_stats[:, 1][:, None, None]
    out = 2.0 * (out - mn) / (mx - mn) - 1.0
    np.clip(out, -1.0, 1.0, out=out)
    out[bad] = MISSING_FILL
    return out.astype(np.float32)


def tile_grid(height: int, width: int, tile_side: int):
    """Full-tile locations in traversal order: column by column from top-left."""
    n_rows = height // tile_side
    n_cols = width // tile_side
    return [(a, b) for b in range(n_cols) for a in range(n_rows)]


def maxpool(tile: np.ndarray) -> np.ndarray:
    """2x2 max pooling with stride 2 over the trailing two axes."""
    h, w = tile.shape[-2:]
    if h % 2 or w % 2:
        raise PipelineError(f"maxpool needs even spatial dims, got {h}x{w}")
    shaped = tile.reshape(*tile.shape[:-2], h // 2, 2, w // 2, 2)
    return shaped.max(axis=(-3, -1))


def tile(scene: SceneBundle, tile_side: int | None = None,
         selected_bands: list[int] | None = None) -> list[TileSequence]:
    """Cut the normalized selected bands into non-overlapping tile sequences.

    Partial tiles at the right/bottom edges are dropped. Tiles larger than
    the electrode grid are max-pooled down to 16x16; LandSat-sized 16x16
    tiles pass through so the pixel-to-electrode mapping stays one-to-one.
    """
    side = tile_side if tile_side is not None else scene.tile_side
    h, w = scene.dims
    if h < side or w < side:
        raise PipelineError(f"scene {h}x{w} smaller than one {side}-pixel tile")
    bands = sorted(selected_bands) if selected_bands is not None \
        else list(range(1, scene.n_bands + 1))
    for b in bands:
        if not (1 <= b <= scene.n_bands):
            raise PipelineError(f"band index {b} outside 1..{scene.n_bands}")
    positions = [b - 1 for b in bands]

    norm = np.stack([
        normalize(frame[positions], scene.norm_stats[positions], scene.missing)
        for frame in scene.frames
    ])  # (T, N_sel, H, W)

    out = []
    for a, b in tile_grid(h, w, side):
        block = norm[:, :, a * side:(a + 1) * side, b * side:(b + 1) * side]
        pooled = maxpool(block) if side > POOLED_SIDE else block
        if pooled.shape[-1] != POOLED_SIDE or pooled.shape[-2] != POOLED_SIDE:
            raise PipelineError(f"pooled tile is {pooled.shape[-2]}x{pooled.shape[-1]}, "
                                f"expected {POOLED_SIDE}x{POOLED_SIDE}")
        out.append(TileSequence(loc=(a, b), tiles=np.ascontiguousarray(block),
                                pooled=np.ascontiguousarray(pooled)))
    return out


def _simulate_band_reference(graph: NetworkGraph, config: DynamicsConfig,
                             pooled_frames: np.ndarray, lam0: np.ndarray,
                             reset_mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Plain-python reference for one band network over every tile sequence.

    ``pooled_frames`` is (n_tiles, T, 16, 16). Returns the readout stack
    (n_tiles, T, n_readout) and the final edge state. The compiled engine
    must agree with this path within the solver tolerance.
    """
    n_tiles, n_frames = pooled_frames.shape[:2]
    solver = KirchhoffSolver(graph, tolerance=config.solver_tolerance)
    state = NetworkState.initial(graph)
    state.lam[:] = lam0
    feats = np.empty((n_tiles, n_frames, graph.readout_ids.size), dtype=np.float64)
    for k in range(n_tiles):
        if reset_mode == "per_tile":
            state = NetworkState.initial(graph)
        for t in range(n_frames):
            frame = InputFrame.full(pooled_frames[k, t].astype(np.float64).ravel())
            step(state, graph, frame, config, solver=solver)
            feats[k, t] = readout(state, graph)
    return feats, state.lam.copy()


def extract_features(tiles: list[TileSequence], selected_bands: list[int],
                     graph: NetworkGraph, config: DynamicsConfig,
                     states: dict[int, np.ndarray] | None = None,
                     reset_mode: str = "persistent", workers: int = 1,
                     engine: str = "compiled") -> tuple[list[FeatureSequence], dict[int, np.ndarray]]:
    """Drive one network per selected band and concatenate the readouts.

    ``states`` maps band index to its edge-state vector and carries state
    across calls under the default persistent mode; ``per_tile`` re-zeros
    the state before every tile sequence. Band networks are independent and
    run on up to ``workers`` threads; results do not depend on ``workers``.

    Returns the features in tile traversal order plus the updated states.
    """
    if reset_mode not in ("persistent", "per_tile"):
        raise PipelineError(f"unknown reset_mode {reset_mode!r}")
    if engine not in ("compiled", "reference"):
        raise PipelineError(f"unknown engine {engine!r}")
    bands = sorted(selected_bands)
    if not tiles:
        return [], dict(states or {})
    n_sel = tiles[0].pooled.shape[1]
    if n_sel != len(bands):
        raise PipelineError(f"tiles carry {n_sel} bands but {len(bands)} were selected")
    n_inputs = tiles[0].pooled.shape[2] * tiles[0].pooled.shape[3]
    if n_inputs != graph.n_electrodes:
        raise PipelineError(f"pooled tiles provide {n_inputs} inputs but the "
                            f"graph has {graph.n_electrodes} electrodes")

    states = dict(states or {})
    for band in bands:
        if band not in states:
            states[band] = np.zeros(graph.n_edges, dtype=np.float64)

    # (n_bands, n_tiles, T, 16, 16)
    stacks = np.stack([np.stack([ts.pooled[:, pos] for ts in tiles])
                       for pos in range(n_sel)])

    if engine == "compiled":
        from .engine import simulate_bands
        lam0 = np.stack([states[band] for band in bands])
        feats_btr, lam_final = simulate_bands(graph, config, stacks, lam0,
                                              reset_mode, threads=workers)
        for pos, band in enumerate(bands):
            states[band] = lam_final[pos]
        per_tile_feats = feats_btr.reshape(feats_btr.shape[0], feats_btr.shape[1], -1)
    else:
        results = [
            _simulate_band_reference(graph, config, stacks[pos], states[band], reset_mode)
            for pos, band in enumerate(bands)
        ]
        for band, (_, lam_final) in zip(bands, results):
            states[band] = lam_final
        per_tile_feats = np.concatenate([feats for feats, _ in results], axis=2)

    features = []
    for k in range(len(tiles)):
        features.append(FeatureSequence(loc=tiles[k].loc,
                                        features=per_tile_feats[k].copy(),
                                        band_order=tuple(bands)))
    return features, states


def export_features_csv(path, event_id: str,
                        feature_seqs: list[FeatureSequence]) -> None:
    """CSV export for external analysis: event,tile_a,tile_b,frame,f_0..f_{K-1}."""
    if not feature_seqs:
        raise PipelineError("no features to export")
    k = feature_seqs[0].features.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event", "tile_a", "tile_b", "frame"]
                        + [f"f_{i}" for i in range(k)])
        for fs in feature_seqs:
            a, b = fs.loc
            for t in range(fs.features.shape[0]):
                writer.writerow([event_id, a, b, t + 1]
                                + [repr(float(x)) for x in fs.features[t]])
