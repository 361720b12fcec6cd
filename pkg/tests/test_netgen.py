import numpy as np
import pytest

from nanowire_cd.netgen import (Junctions, NetgenConfig, NetgenError,
                                NetworkGraph, build_graph, detect_junctions,
                                generate_graph, generate_layout)


def layout_from_segments(segments, electrode_centers=None, radius=2.5):
    """Wrap explicit segments into a layout for junction tests."""
    segs = np.asarray(segments, dtype=np.float64)
    p1, p2 = segs[:, 0, :], segs[:, 1, :]
    centers = (p1 + p2) / 2
    d = p2 - p1
    lengths = np.hypot(d[:, 0], d[:, 1])
    angles = np.mod(np.arctan2(d[:, 1], d[:, 0]), np.pi)
    ec = np.asarray(electrode_centers, dtype=np.float64).reshape(-1, 2) \
        if electrode_centers is not None else np.empty((0, 2))
    from nanowire_cd.netgen import NanowireLayout
    return NanowireLayout(centers=centers, angles=angles, lengths=lengths,
                          endpoints=np.stack([p1, p2], axis=1),
                          electrode_centers=ec, electrode_radius=radius)


class TestConfig:
    def test_defaults_valid(self):
        cfg = NetgenConfig()
        assert cfg.n_wires == 803
        assert cfg.electrode_pitch == pytest.approx(8.0)
        assert cfg.n_electrodes == 256
        assert cfg.scale == pytest.approx(79.0)

    def test_grid_fits_in_plane(self):
        cfg = NetgenConfig()
        last = cfg.electrode_margin + (cfg.electrode_grid - 1) * cfg.electrode_pitch
        assert last == pytest.approx(135.0)
        assert last <= cfg.plane_side

    @pytest.mark.parametrize("kwargs", [
        {"plane_side": 0.0},
        {"n_wires": 0},
        {"wire_len_mean": 0.0},
        {"wire_len_mean": -5.0},
        {"wire_len_std": -1.0},
        {"electrode_diameter": 0.0},
        {"electrode_margin": 200.0},
        {"center_scale": -1.0},
    ])
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(NetgenError):
            NetgenConfig(**kwargs)


class TestLayout:
    def test_counts_and_bounds(self):
        cfg = NetgenConfig(seed=11)
        lay = generate_layout(cfg)
        assert lay.n_wires == 803
        assert lay.n_electrodes == 256
        assert (lay.centers >= 0).all() and (lay.centers <= cfg.plane_side).all()
        assert (lay.angles >= 0).all() and (lay.angles < np.pi).all()
        assert (lay.lengths > 0).all()

    def test_electrode_grid_positions(self):
        # margin 15, pitch 8, 16 per side: centers span [15, 135] on each axis
        lay = generate_layout(NetgenConfig(seed=0))
        np.testing.assert_allclose(lay.electrode_centers[0], [15.0, 15.0])
        np.testing.assert_allclose(lay.electrode_centers[-1], [135.0, 135.0])
        # row-major: second entry advances x first
        np.testing.assert_allclose(lay.electrode_centers[1], [23.0, 15.0])
        assert lay.electrode_radius == pytest.approx(2.5)

    def test_endpoints_consistent(self):
        lay = generate_layout(NetgenConfig(n_wires=50, seed=5))
        d = lay.endpoints[:, 1] - lay.endpoints[:, 0]
        np.testing.assert_allclose(np.hypot(d[:, 0], d[:, 1]), lay.lengths)
        np.testing.assert_allclose((lay.endpoints[:, 0] + lay.endpoints[:, 1]) / 2,
                                   lay.centers)

    def test_single_wire_deterministic(self):
        a = generate_layout(NetgenConfig(n_wires=1, seed=42))
        b = generate_layout(NetgenConfig(n_wires=1, seed=42))
        np.testing.assert_array_equal(a.centers, b.centers)
        np.testing.assert_array_equal(a.angles, b.angles)
        np.testing.assert_array_equal(a.lengths, b.lengths)


class TestJunctions:
    def test_right_angle_crossing(self):
        lay = layout_from_segments([
            [(5.0, 10.0), (15.0, 10.0)],
            [(10.0, 5.0), (10.0, 15.0)],
        ])
        j = detect_junctions(lay)
        assert j.wire_wire.shape == (1, 2)
        np.testing.assert_allclose(j.wire_wire_points[0], [10.0, 10.0], atol=1e-12)

    def test_parallel_no_contact(self):
        lay = layout_from_segments([
            [(0.0, 0.0), (10.0, 0.0)],
            [(0.0, 1.0), (10.0, 1.0)],
        ])
        assert len(detect_junctions(lay)) == 0

    def test_collinear_overlap_midpoint(self):
        lay = layout_from_segments([
            [(0.0, 0.0), (10.0, 0.0)],
            [(6.0, 0.0), (20.0, 0.0)],
        ])
        j = detect_junctions(lay)
        assert j.wire_wire.shape == (1, 2)
        np.testing.assert_allclose(j.wire_wire_points[0], [8.0, 0.0], atol=1e-9)

    def test_electrode_contact_and_miss(self):
        lay = layout_from_segments(
            [[(0.0, 0.0), (10.0, 0.0)],
             [(0.0, 30.0), (10.0, 30.0)]],
            electrode_centers=[(5.0, 2.0)], radius=2.5)
        j = detect_junctions(lay)
        assert j.wire_electrode.shape == (1, 2)
        assert tuple(j.wire_electrode[0]) == (0, 0)
        np.testing.assert_allclose(j.wire_electrode_points[0], [5.0, 0.0], atol=1e-12)

    def test_junction_points_lie_on_primitives(self):
        lay = generate_layout(NetgenConfig(n_wires=200, seed=7))
        j = detect_junctions(lay)
        assert len(j) > 0
        for (i, k), pt in zip(j.wire_wire, j.wire_wire_points):
            for w in (i, k):
                assert _segment_distance(lay.endpoints[w], pt) < 1e-9
        for (w, e), pt in zip(j.wire_electrode, j.wire_electrode_points):
            assert _segment_distance(lay.endpoints[w], pt) < 1e-9
            assert np.linalg.norm(pt - lay.electrode_centers[e]) \
                <= lay.electrode_radius + 1e-9

    def test_count_band_sanity(self):
        # full 10-seed statistics live in the acceptance suite
        counts = [len(detect_junctions(generate_layout(NetgenConfig(seed=s))))
                  for s in (0, 1)]
        assert all(9_000 <= c <= 16_000 for c in counts)


def _segment_distance(endpoints, pt):
    p1, p2 = endpoints
    seg = p2 - p1
    t = np.clip(np.dot(pt - p1, seg) / np.dot(seg, seg), 0.0, 1.0)
    return np.linalg.norm(p1 + t * seg - pt)


class TestBuildGraph:
    def test_default_counts(self, default_graph):
        assert default_graph.n_nodes == 1059
        assert default_graph.n_wires == 803
        assert default_graph.n_electrodes == 256
        assert default_graph.input_index.size == 256

    def test_readout_nodes(self, default_graph):
        r = default_graph.readout_ids
        assert r.size == 400
        assert np.unique(r).size == 400
        assert (r < default_graph.n_wires).all()
        assert (np.sort(r) == r).all()

    def test_readout_exceeds_wires(self):
        lay = generate_layout(NetgenConfig(n_wires=10, seed=0))
        j = detect_junctions(lay)
        with pytest.raises(NetgenError):
            build_graph(lay, j, seed=0, n_readout=11)

    def test_no_junctions_still_full_node_count(self):
        lay = generate_layout(NetgenConfig(seed=0))
        empty = Junctions(
            wire_wire=np.empty((0, 2), dtype=np.int64),
            wire_wire_points=np.empty((0, 2)),
            wire_electrode=np.empty((0, 2), dtype=np.int64),
            wire_electrode_points=np.empty((0, 2)))
        g = build_graph(lay, empty, seed=0)
        assert g.n_nodes == 1059
        assert g.n_edges == 0

    def test_parallel_contacts_merge(self):
        lay = generate_layout(NetgenConfig(n_wires=5, seed=0))
        dup = Junctions(
            wire_wire=np.array([[0, 1], [0, 1], [2, 3]]),
            wire_wire_points=np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]),
            wire_electrode=np.array([[0, 0], [0, 0]]),
            wire_electrode_points=np.array([[4.0, 4.0], [5.0, 5.0]]))
        g = build_graph(lay, dup, seed=0, n_readout=2)
        assert g.n_edges == 3
        pairs = {tuple(e) for e in g.edges}
        assert pairs == {(0, 1), (2, 3), (0, lay.n_wires)}

    def test_no_self_edges_unique_pairs(self, default_graph):
        e = default_graph.edges
        assert (e[:, 0] < e[:, 1]).all()
        assert np.unique(e, axis=0).shape[0] == e.shape[0]

    def test_edge_count_statistics_quick(self, default_graph):
        assert 9_000 <= default_graph.n_edges <= 16_000


class TestDeterminismAndSerialization:
    def test_bit_identical_serialization(self):
        a = generate_graph(NetgenConfig(seed=123))
        b = generate_graph(NetgenConfig(seed=123))
        assert a.to_json() == b.to_json()

    def test_different_seed_differs(self):
        a = generate_graph(NetgenConfig(seed=1))
        b = generate_graph(NetgenConfig(seed=2))
        assert a.to_json() != b.to_json()

    def test_roundtrip_exact(self, default_graph, tmp_path):
        path = tmp_path / "graph.json"
        default_graph.save(path)
        loaded = NetworkGraph.load(path)
        assert loaded.to_json() == default_graph.to_json()
        np.testing.assert_array_equal(loaded.edges, default_graph.edges)
        np.testing.assert_array_equal(loaded.edge_points, default_graph.edge_points)
        np.testing.assert_array_equal(loaded.readout_ids, default_graph.readout_ids)

    def test_wire_relabeling_isomorphic(self):
        cfg = NetgenConfig(n_wires=80, seed=9)
        lay = generate_layout(cfg)
        rng = np.random.default_rng(0)
        perm = rng.permutation(lay.n_wires)
        from nanowire_cd.netgen import NanowireLayout
        permuted = NanowireLayout(
            centers=lay.centers[perm], angles=lay.angles[perm],
            lengths=lay.lengths[perm], endpoints=lay.endpoints[perm],
            electrode_centers=lay.electrode_centers,
            electrode_radius=lay.electrode_radius)
        j_a = detect_junctions(lay)
        j_b = detect_junctions(permuted)
        # map permuted-layout wire ids back to the original labels
        inv = np.empty_like(perm)
        inv[np.arange(perm.size)] = perm

        def edge_set(j, wire_map):
            ww = {tuple(sorted((wire_map[a], wire_map[b]))) for a, b in j.wire_wire}
            we = {(wire_map[w], int(e)) for w, e in j.wire_electrode}
            return ww, we

        assert edge_set(j_a, np.arange(lay.n_wires)) == edge_set(j_b, inv)
