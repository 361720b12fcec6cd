"""Acceptance suite: one test per release criterion, at stated tolerances.

Each test registers a PASS line that the terminal summary prints (see
conftest); a failing criterion fails its test with the measured values.
"""

import json
import os
import time

import numpy as np
import pytest

from conftest import make_graph, record_acceptance
from nanowire_cd import scenegen
from nanowire_cd.bundle import write_bundle
from nanowire_cd.changedet import METRICS, correlation_dist, get_metric
from nanowire_cd.dynamics import (DynamicsConfig, InputFrame, KirchhoffSolver,
                                  NetworkState, solve_kirchhoff, step)
from nanowire_cd.evaluation import DegenerateLabelsError, auprc
from nanowire_cd.netgen import NetgenConfig, generate_graph
from nanowire_cd.runner import RunConfig, benchmark, run_experiment
from test_evaluation import brute_force_ap

PAPER_EDGE_COUNT = 12_279
PAPER_NODE_COUNT = 1_059


def test_c1_graph_statistics():
    """Default geometry, 10 seeds: exact node count, edge count in band, <10 s."""
    t0 = time.perf_counter()
    node_counts = []
    edge_counts = []
    for seed in range(10):
        g = generate_graph(NetgenConfig(seed=seed))
        node_counts.append(g.n_nodes)
        edge_counts.append(g.n_edges)
    elapsed = time.perf_counter() - t0
    mean_edges = float(np.mean(edge_counts))
    lo, hi = 0.75 * PAPER_EDGE_COUNT, 1.25 * PAPER_EDGE_COUNT

    assert node_counts == [PAPER_NODE_COUNT] * 10, node_counts
    assert lo <= mean_edges <= hi, (mean_edges, lo, hi)
    assert elapsed < 10.0, elapsed
    record_acceptance(
        "graph-statistics",
        f"nodes 1059 x10 seeds, mean edges {mean_edges:.0f} in "
        f"[{lo:.0f}, {hi:.0f}], {elapsed:.1f}s < 10s")


def test_c2_dynamics_analytic():
    """Single edge at constant V: piecewise closed form within one Euler step."""
    graph = make_graph([[0, 1]], n_wires=0, n_electrodes=2)
    cfg = DynamicsConfig(steps_per_frame=1)
    n_steps = 1700   # 1.7 s

    results = {}
    for volts in (0.02, 0.008, 0.002):
        state = NetworkState.initial(graph)
        solver = KirchhoffSolver(graph)
        frame = InputFrame.full([volts, 0.0])
        lam = np.empty(n_steps)
        for k in range(n_steps):
            step(state, graph, frame, cfg, solver=solver)
            lam[k] = state.lam[0]
        t = (np.arange(n_steps) + 1) * cfg.dt
        if volts > cfg.v_set:
            rate = volts - cfg.v_set
            analytic = np.minimum(rate * t, cfg.lambda_max)
        else:
            rate = 0.0
            analytic = np.zeros(n_steps)   # dead band, or decay with sgn(0)=0
        err = np.abs(lam - analytic).max()
        bound = cfg.dt * rate
        assert err <= bound + 1e-18, (volts, err, bound)
        results[volts] = err
        if volts == 0.02:
            t_sat = t[np.argmax(lam >= cfg.lambda_max)]
            assert abs(t_sat - 1.5) <= cfg.dt + 1e-12, t_sat

    record_acceptance(
        "dynamics-analytic",
        "V in {0.02, 0.008, 0.002}: max errors "
        + ", ".join(f"{v}->{e:.1e}" for v, e in results.items())
        + f"; saturation at t={t_sat:.3f}s (1.5 +- dt)")


def test_c3_kirchhoff_residual():
    """Net current at undriven nodes <= 1e-9 A; divider exact to 1e-12."""
    worst = 0.0
    for seed in range(5):
        graph = generate_graph(NetgenConfig(seed=100 + seed))
        rng = np.random.default_rng(seed)
        cfg = DynamicsConfig()
        g = rng.uniform(cfg.g_off, cfg.g_on, graph.n_edges)
        volts = rng.uniform(-1.0, 1.0, graph.n_electrodes)
        solver = KirchhoffSolver(graph)
        v = solver.solve(g, InputFrame.full(volts))
        currents = solver.net_currents(g, v)
        undriven = np.setdiff1d(np.arange(graph.n_nodes), graph.input_index)
        worst = max(worst, float(np.abs(currents[undriven]).max()))
    assert worst <= 1e-9, worst

    divider = make_graph([[0, 1], [0, 2]], n_wires=1, n_electrodes=2)
    v = solve_kirchhoff(divider, np.array([1.0, 1.0]), InputFrame.full([1.0, 0.0]))
    assert abs(v[0] - 0.5) <= 1e-12, v[0]
    record_acceptance(
        "kirchhoff-residual",
        f"worst net current {worst:.2e} A <= 1e-9 over 5 seeds; "
        f"divider error {abs(v[0] - 0.5):.1e} <= 1e-12")


def test_c4_metric_properties():
    """1000 random pairs per metric: axioms and affine invariance to 1e-12."""
    rng = np.random.default_rng(0)
    worst_affine = 0.0
    for kind in METRICS:
        dist = get_metric(kind)
        for _ in range(1000):
            n = int(rng.integers(2, 64))
            u = rng.normal(size=n)
            v = rng.normal(size=n)
            duv = dist(u, v)
            assert duv >= 0.0
            assert abs(duv - dist(v, u)) <= 1e-12
        # self-distance conventions
        u = rng.normal(size=32)
        assert dist(u, u) <= 1e-12
    assert correlation_dist(np.full(8, 3.0), rng.normal(size=8)) == 1.0
    for _ in range(1000):
        n = int(rng.integers(2, 64))
        u = rng.normal(size=n)
        v = rng.normal(size=n)
        alpha = rng.uniform(0.1, 10.0)
        beta = rng.uniform(-5.0, 5.0)
        delta = abs(correlation_dist(u, v) - correlation_dist(u, alpha * v + beta))
        worst_affine = max(worst_affine, delta)
    assert worst_affine <= 1e-12, worst_affine
    record_acceptance(
        "metric-properties",
        f"1000 pairs x3 metrics: axioms hold; affine worst delta "
        f"{worst_affine:.1e} <= 1e-12")


def test_c5_auprc_oracle():
    """200 random instances vs independent brute force; known hand case."""
    hand = auprc([0.9, 0.8, 0.7, 0.6, 0.5, 0.4], [1, 1, 0, 1, 0, 0])
    assert abs(hand - (1 + 1 + 0.75) / 3) <= 1e-12, hand

    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(4, 1001))
        pool = rng.uniform(0, 1, max(2, int(rng.integers(2, n + 1))))
        scores = rng.choice(pool, size=n)
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        delta = abs(auprc(scores, labels) - brute_force_ap(scores, labels))
        worst = max(worst, delta)
    assert worst <= 1e-12, worst
    record_acceptance(
        "auprc-oracle",
        f"hand case 0.916667 ok; 200 instances worst |delta| {worst:.1e} <= 1e-12")


@pytest.fixture(scope="module")
def synthetic_suite(tmp_path_factory):
    root = tmp_path_factory.mktemp("suite")
    dirs = []
    for spec in (scenegen.fire_like_spec(dims=(256, 256), seed=0),
                 scenegen.flood_like_spec(dims=(256, 256), seed=1),
                 scenegen.quiet_spec(dims=(256, 256), seed=2)):
        scene = scenegen.generate_scene(spec)
        dirs.append(str(write_bundle(scene, root / scene.event_id)))
    return dirs


def test_c6_end_to_end_synthetic(synthetic_suite, tmp_path):
    """Fire/flood/quiet at 256x256: model beats 0.90 and the pixel baseline."""
    t0 = time.perf_counter()
    common = dict(bundle_dirs=synthetic_suite, metric="correlation",
                  n_runs=1, base_seed=0, workers=8)
    pann = run_experiment(RunConfig(model="pann", out_dir=str(tmp_path / "pann"),
                                    **common))
    base = run_experiment(RunConfig(model="baseline",
                                    out_dir=str(tmp_path / "base"), **common))
    elapsed = time.perf_counter() - t0

    lines = []
    for cls in ("fire", "flood"):
        p = pann["classes"][cls]["mean"]
        b = base["classes"][cls]["mean"]
        assert p >= 0.90, (cls, p)
        assert p >= b, (cls, p, b)
        lines.append(f"{cls}: model {p:.4f} >= 0.90, baseline {b:.4f}")
    for report in (pann, base):
        assert "error" in report["classes"]["quiet"]
        assert "degenerate" in report["classes"]["quiet"]["error"]
    assert elapsed <= 300.0, elapsed
    record_acceptance(
        "end-to-end-synthetic",
        "; ".join(lines) + f"; quiet degenerate handled; {elapsed:.0f}s <= 300s")


def test_c7_determinism(tmp_path):
    """The same configuration twice: identical reports and map bytes."""
    scene = scenegen.generate_scene(scenegen.fire_like_spec(dims=(96, 96), seed=5))
    bundle = write_bundle(scene, tmp_path / "ev")

    def run(out):
        config = RunConfig(bundle_dirs=[str(bundle)], metric="correlation",
                           model="pann", n_runs=2, base_seed=11,
                           out_dir=str(out), workers=2)
        run_experiment(config)
        return out

    a = run(tmp_path / "a")
    b = run(tmp_path / "b")
    ra = json.loads((a / "report.json").read_text())
    rb = json.loads((b / "report.json").read_text())
    ra.pop("timestamp"), rb.pop("timestamp")
    assert ra == rb
    compared = 0
    for run_dir in ("run_0", "run_1"):
        for name in ("scores.cmap", "scores.pgm", "invalid.pbm"):
            pa = (a / run_dir / scene.event_id / name).read_bytes()
            pb = (b / run_dir / scene.event_id / name).read_bytes()
            assert pa == pb, (run_dir, name)
            compared += 1
    record_acceptance(
        "determinism",
        f"two full runs: reports identical modulo timestamp; "
        f"{compared} artifact files byte-identical")


def test_c8_resource_budget():
    """574x509x5 scene, 8 threads: peak memory <= 1 GiB, wall time recorded."""
    result = benchmark(dims=(574, 509), workers=8, seed=0)
    peak_gib = result["peak_mem_bytes"] / 2 ** 30
    wall = result["wall_s"]
    assert peak_gib <= 1.0, peak_gib
    # 19 s is the indicative target (8-core reference); 2x is the hard bound
    assert wall < 38.0, wall
    note = "meets" if wall <= 19.0 else \
        f"misses indicative 19s on {result['cpu_count']} cpus (hard bound 38s)"
    record_acceptance(
        "resource-budget",
        f"peak {peak_gib:.2f} GiB <= 1 GiB; wall {wall:.1f}s {note}")


@pytest.mark.skipif("NWCD_S2_FIRES_BUNDLES" not in os.environ,
                    reason="optional: set NWCD_S2_FIRES_BUNDLES to a directory "
                           "of converted fire-event bundles for the real-data check")
def test_c9_real_data_fires_optional(tmp_path):
    """Real fires events, correlation metric, 5 runs: near the published score.

    The wide +-5 point tolerance reflects reconstructed (not published)
    normalization stats and band-selection constants.
    """
    bundle_root = os.environ["NWCD_S2_FIRES_BUNDLES"]
    bundles = sorted(str(p) for p in __import__("pathlib").Path(bundle_root).iterdir()
                     if (p / "manifest.json").exists())
    assert bundles, f"no bundles under {bundle_root}"
    results = {}
    for metric in METRICS:
        config = RunConfig(bundle_dirs=bundles, metric=metric, model="pann",
                           n_runs=5, base_seed=0, workers=8,
                           out_dir=str(tmp_path / metric))
        report = run_experiment(config)
        results[metric] = report["classes"]["fire"]["mean"]
    assert abs(results["correlation"] - 0.9366) <= 0.05, results
    assert results["correlation"] > results["euclidean"] > results["cosine"], results
    record_acceptance("real-data-fires", str(results))
