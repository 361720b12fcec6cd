"""Experiment orchestration: multi-run evaluation and resource benchmarks.

Each run derives its own layout/readout/event-order seeds from the base
seed, builds fresh network states, processes the shuffled events end to end
(classify, select bands, extract features or baseline vectors, score tiles,
assemble maps) and pools pixels per disaster class for evaluation. Model
and baseline share one code path parameterized by the vector source.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import bundle as bundle_io
from . import changedet, evaluation, featureng, pipeline, scenegen
from .dynamics import DynamicsConfig
from .netgen import NetgenConfig, generate_graph
from .util import config_hash, dumps_canonical, subseed

N_READOUT = 400


class RunError(RuntimeError):
    """Wraps module errors with the event (and tile) being processed."""


@dataclass
class RunConfig:
    bundle_dirs: list[str] = field(default_factory=list)
    metric: str = "correlation"
    model: str = "pann"                    # "pann" | "baseline"
    feature_spec_path: str | None = None
    netgen: NetgenConfig = field(default_factory=NetgenConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    n_runs: int = 5
    base_seed: int = 0
    reset_mode: str = "persistent"
    class_override: str | None = None
    out_dir: str = "out"
    workers: int = 1
    export_features: bool = False
    export_curves: bool = False
    baseline_raw: bool = False
    n_readout: int = N_READOUT

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.model not in ("pann", "baseline"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.metric not in changedet.METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")

    def describe(self) -> dict:
        return {
            "bundles": [str(p) for p in self.bundle_dirs],
            "metric": self.metric,
            "model": self.model,
            "feature_spec": self.feature_spec_path,
            "netgen": self.netgen.to_dict(),
            "dynamics": self.dynamics.to_dict(),
            "n_runs": self.n_runs,
            "base_seed": self.base_seed,
            "reset_mode": self.reset_mode,
            "class_override": self.class_override,
            "baseline_raw": self.baseline_raw,
            "n_readout": self.n_readout,
        }


def _feature_spec_for(config: RunConfig, sensor: str) -> featureng.FeatureEngSpec:
    if config.feature_spec_path is not None:
        return featureng.FeatureEngSpec.load(config.feature_spec_path)
    return featureng.default_spec(sensor)


def process_event(scene, config: RunConfig, graph, states,
                  spec: featureng.FeatureEngSpec):
    """One event through the shared pipeline; returns (class, map, states).

    The model and the pixel baseline differ only in the per-tile vector
    source; tiling, masking and map assembly are identical.
    """
    if config.class_override is not None:
        event_class = config.class_override
    else:
        event_class = featureng.classify_event(scene, spec)
    bands = featureng.select_bands(event_class, spec)
    if config.model == "baseline" and config.baseline_raw:
        tiles = pipeline.tile(scene)  # raw-mode baseline sees every band
    else:
        tiles = pipeline.tile(scene, selected_bands=bands)

    feature_seqs = None
    if config.model == "pann":
        feature_seqs, states = pipeline.extract_features(
            tiles, bands, graph, config.dynamics, states=states,
            reset_mode=config.reset_mode, workers=config.workers)
        scored = [(fs.loc, changedet.change_score(fs, config.metric))
                  for fs in feature_seqs]
    else:
        scored = [(ts.loc, changedet.baseline_score(ts, config.metric,
                                                    use_raw=config.baseline_raw))
                  for ts in tiles]

    cmap = changedet.assemble_change_map(
        scored, scene.dims, scene.tile_side, scene.mask,
        event_id=scene.event_id, metric=config.metric)
    return event_class, cmap, states, feature_seqs


def run_experiment(config: RunConfig, scenes=None) -> dict:
    """Execute all runs and write report plus per-event map artifacts.

    ``scenes`` may pass preloaded SceneBundles (tests, benchmarks);
    otherwise bundles load from ``config.bundle_dirs``.
    """
    if scenes is None:
        scenes = [bundle_io.read_bundle(p) for p in config.bundle_dirs]
    if not scenes:
        raise ValueError("no scenes to process")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    per_class_runs: dict[str, list[float]] = {}
    class_errors: dict[str, str] = {}

    for r in range(config.n_runs):
        run_seed = config.base_seed + r
        order_rng = np.random.default_rng(subseed(run_seed, "event-order"))
        order = order_rng.permutation(len(scenes))
        net_config = replace(config.netgen, seed=subseed(run_seed, "layout"))
        graph = generate_graph(net_config,
                               readout_seed=subseed(run_seed, "readout"),
                               n_readout=config.n_readout)
        states: dict[int, np.ndarray] = {}
        run_dir = out_dir / f"run_{r}"

        pooled: dict[str, list] = {}
        for idx in order:
            scene = scenes[idx]
            spec = _feature_spec_for(config, scene.sensor)
            try:
                event_class, cmap, states, feats = process_event(
                    scene, config, graph, states, spec)
            except Exception as exc:
                raise RunError(f"run {r}, event {scene.event_id!r}: {exc}") from exc
            group = scene.event_class_hint or event_class
            pooled.setdefault(group, []).append((cmap, scene.mask))

            event_dir = run_dir / scene.event_id
            event_dir.mkdir(parents=True, exist_ok=True)
            changedet.write_cmap(event_dir / "scores.cmap", cmap)
            changedet.write_pgm(event_dir / "scores.pgm", cmap)
            changedet.write_pbm(event_dir / "invalid.pbm", ~cmap.valid)
            if config.export_features and feats is not None:
                pipeline.export_features_csv(event_dir / "features.csv",
                                             scene.event_id, feats)

        for cls, items in pooled.items():
            scores, labels = evaluation.pool_pixels(items)
            try:
                value = evaluation.auprc(scores, labels)
            except evaluation.DegenerateLabelsError as exc:
                class_errors[cls] = str(exc)
                continue
            per_class_runs.setdefault(cls, []).append(value)
            if config.export_curves:
                evaluation.write_curve_csv(run_dir / f"curve_{cls}.csv",
                                           scores, labels)

    classes_report: dict[str, dict] = {}
    for cls in sorted(set(per_class_runs) | set(class_errors)):
        if cls in class_errors and cls not in per_class_runs:
            classes_report[cls] = {"error": f"degenerate labels: {class_errors[cls]}"}
            continue
        runs = per_class_runs[cls]
        entry: dict = {"runs": runs, "mean": float(np.mean(runs))}
        if len(runs) >= 2:
            _, sem = evaluation.aggregate_runs(runs)
            entry["sem"] = sem
        classes_report[cls] = entry

    report = {
        "format": "metrics-report-v1",
        "metric": config.metric,
        "model": config.model,
        "config_hash": config_hash(config.describe()),
        "config": config.describe(),
        "classes": classes_report,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    (out_dir / "report.json").write_text(dumps_canonical(report, indent=1))
    return report


class _TreeMemorySampler:
    """Peak memory of this process and its workers, sampled in a thread.

    Children created by fork share pages with the parent, so their private
    footprint (rss - shared) is added to the parent's rss.
    """

    def __init__(self, interval: float = 0.05):
        self.interval = interval
        self.peak = 0
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, daemon=True)

    def _sample(self) -> int:
        import psutil
        proc = psutil.Process()
        total = proc.memory_info().rss
        for child in proc.children(recursive=True):
            try:
                info = child.memory_info()
                shared = getattr(info, "shared", 0)
                total += max(info.rss - shared, 0)
            except psutil.NoSuchProcess:
                continue
        return total

    def _loop(self):
        while not self._stop.is_set():
            try:
                self.peak = max(self.peak, self._sample())
            except Exception:
                pass
            self._stop.wait(self.interval)

    def __enter__(self):
        self.peak = self._sample()
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join()
        self.peak = max(self.peak, self._sample())
        return False


def benchmark(dims: tuple[int, int] = (574, 509), workers: int = 8,
              seed: int = 0, netgen: NetgenConfig | None = None,
              dynamics: DynamicsConfig | None = None,
              metric: str = "correlation", n_readout: int = N_READOUT) -> dict:
    """Wall time and peak memory for one synthetic scene at the given size.

    Network construction is set-up cost and timed separately from the
    per-scene pipeline (classify, tile, extract, score, assemble).
    """
    spec = scenegen.fire_like_spec(dims=dims, seed=seed)
    scene = scenegen.generate_scene(spec)
    config = RunConfig(metric=metric, model="pann",
                       netgen=netgen or NetgenConfig(seed=subseed(seed, "layout")),
                       dynamics=dynamics or DynamicsConfig(),
                       n_runs=1, base_seed=seed, workers=workers,
                       out_dir="unused", n_readout=n_readout)

    with _TreeMemorySampler() as sampler:
        t0 = time.perf_counter()
        graph = generate_graph(config.netgen,
                               readout_seed=subseed(seed, "readout"),
                               n_readout=config.n_readout)
        t_setup = time.perf_counter() - t0
        feat_spec = featureng.default_spec(scene.sensor)
        t0 = time.perf_counter()
        event_class, cmap, _, _ = process_event(scene, config, graph, {}, feat_spec)
        t_scene = time.perf_counter() - t0

    h, w = dims
    side = scene.tile_side
    return {
        "dims": [h, w],
        "frames": scene.frames.shape[0],
        "tiles": (h // side) * (w // side),
        "event_class": event_class,
        "bands": len(featureng.select_bands(event_class, feat_spec)),
        "threads": workers,
        "cpu_count": os.cpu_count(),
        "setup_s": round(t_setup, 3),
        "wall_s": round(t_scene, 3),
        "peak_mem_bytes": sampler.peak,
        "peak_mem_gib": round(sampler.peak / 2**30, 3),
        "valid_pixels": int(cmap.valid.sum()),
    }
