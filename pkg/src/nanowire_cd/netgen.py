"""Stochastic nanowire layout generation, junction detection and graph build.

A layout is a set of straight wire segments scattered over a square plane plus
a regular grid of disk electrodes. Wires crossing each other or touching an
electrode form electrical junctions; merging junctions per node pair yields
the network graph that the dynamics module simulates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import gennorm

from .util import dumps_canonical

# pair-chunk size for the all-pairs crossing test, bounds peak memory
_PAIR_CHUNK = 2_000_000


class NetgenError(ValueError):
    pass


@dataclass(frozen=True)
class NetgenConfig:
    """Geometry and sampling parameters for one network instance.

    Lengths are in micrometres. ``center_scale`` is the scale of the
    generalized normal distribution used for wire centres; when None it
    defaults to ``plane_side / 2`` (near-uniform spread with a soft taper
    at the plane edges for the default shape ``center_beta``).
    """

    plane_side: float = 158.0
    n_wires: int = 803
    wire_len_mean: float = 30.0
    wire_len_std: float = 6.0
    center_beta: float = 5.0
    center_scale: float | None = None
    electrode_grid: int = 16
    electrode_diameter: float = 5.0
    electrode_margin: float = 15.0
    seed: int = 0

    def __post_init__(self):
        if self.plane_side <= 0:
            raise NetgenError("plane_side must be positive")
        if self.n_wires <= 0:
            raise NetgenError("n_wires must be positive")
        if self.wire_len_mean <= 0:
            raise NetgenError("wire_len_mean must be positive (truncated resampling would not terminate)")
        if self.wire_len_std < 0:
            raise NetgenError("wire_len_std must be non-negative")
        if self.center_beta <= 0:
            raise NetgenError("center_beta must be positive")
        if self.center_scale is not None and self.center_scale <= 0:
            raise NetgenError("center_scale must be positive")
        if self.electrode_grid <= 0:
            raise NetgenError("electrode_grid must be positive")
        if self.electrode_diameter <= 0:
            raise NetgenError("electrode_diameter must be positive")
        if self.electrode_margin < 0:
            raise NetgenError("electrode_margin must be non-negative")
        if self.electrode_pitch <= 0:
            raise NetgenError("electrode margins leave no room for the grid")
        last = self.electrode_margin + (self.electrode_grid - 1) * self.electrode_pitch
        if last > self.plane_side + 1e-9:
            raise NetgenError("electrode grid does not fit inside the plane")

    @property
    def scale(self) -> float:
        return self.center_scale if self.center_scale is not None else self.plane_side / 2.0

    @property
    def electrode_pitch(self) -> float:
        """Grid spacing; (158 - 2*15)/16 = 8 um at defaults."""
        return (self.plane_side - 2.0 * self.electrode_margin) / self.electrode_grid

    @property
    def n_electrodes(self) -> int:
        return self.electrode_grid ** 2

    def to_dict(self) -> dict:
        return {
            "plane_side": self.plane_side,
            "n_wires": self.n_wires,
            "wire_len_mean": self.wire_len_mean,
            "wire_len_std": self.wire_len_std,
            "center_beta": self.center_beta,
            "center_scale": self.center_scale,
            "electrode_grid": self.electrode_grid,
            "electrode_diameter": self.electrode_diameter,
            "electrode_margin": self.electrode_margin,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetgenConfig":
        return cls(**d)


@dataclass(frozen=True)
class NanowireLayout:
    """Wire segments and electrode disks, all coordinates in micrometres."""

    centers: np.ndarray        # (n, 2)
    angles: np.ndarray         # (n,) in [0, pi)
    lengths: np.ndarray        # (n,) > 0
    endpoints: np.ndarray      # (n, 2, 2): [wire, end, xy]
    electrode_centers: np.ndarray   # (m, 2), row-major grid order
    electrode_radius: float

    @property
    def n_wires(self) -> int:
        return self.centers.shape[0]

    @property
    def n_electrodes(self) -> int:
        return self.electrode_centers.shape[0]


@dataclass(frozen=True)
class Junctions:
    """Detected electrical contacts, in canonical (sorted) order."""

    wire_wire: np.ndarray          # (k, 2) int64 wire pairs, i < j, lexsorted
    wire_wire_points: np.ndarray   # (k, 2)
    wire_electrode: np.ndarray     # (l, 2) int64 (wire, electrode), lexsorted
    wire_electrode_points: np.ndarray  # (l, 2)

    def __len__(self) -> int:
        return self.wire_wire.shape[0] + self.wire_electrode.shape[0]


@dataclass(frozen=True)
class NetworkGraph:
    """Immutable graph of a network instance.

    Node ids: wires are ``0..n_wires-1``, electrodes follow in row-major grid
    order. Edges are unique unordered node pairs with the junction coordinate
    of the first detected contact. ``input_index[k]`` is the node id of the
    k-th electrode in row-major grid order.
    """

    n_wires: int
    n_electrodes: int
    edges: np.ndarray          # (E, 2) int64, each row (a < b), rows lexsorted
    edge_points: np.ndarray    # (E, 2) float64
    edge_kind: np.ndarray      # (E,) uint8: 0 wire-wire, 1 wire-electrode
    readout_ids: np.ndarray    # (R,) int64, sorted, all wire nodes
    input_index: np.ndarray    # (n_electrodes,) int64
    config: NetgenConfig | None = None

    @property
    def n_nodes(self) -> int:
        return self.n_wires + self.n_electrodes

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def node_kind(self, node_id: int) -> str:
        return "wire" if node_id < self.n_wires else "electrode"

    def to_json(self) -> str:
        doc = {
            "format": "nanowire-graph-v1",
            "config": self.config.to_dict() if self.config is not None else None,
            "nodes": [{"id": i, "kind": "wire"} for i in range(self.n_wires)]
                     + [{"id": self.n_wires + k, "kind": "electrode"}
                        for k in range(self.n_electrodes)],
            "edges": [
                [int(a), int(b), int(k), float(x), float(y)]
                for (a, b), k, (x, y) in zip(self.edges, self.edge_kind, self.edge_points)
            ],
            "readout_ids": [int(r) for r in self.readout_ids],
            "input_index": [int(i) for i in self.input_index],
        }
        return dumps_canonical(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "NetworkGraph":
        doc = json.loads(text)
        if doc.get("format") != "nanowire-graph-v1":
            raise NetgenError(f"unknown graph format: {doc.get('format')!r}")
        cfg = NetgenConfig.from_dict(doc["config"]) if doc["config"] is not None else None
        n_wires = sum(1 for n in doc["nodes"] if n["kind"] == "wire")
        n_elec = len(doc["nodes"]) - n_wires
        edges = np.array([[e[0], e[1]] for e in doc["edges"]], dtype=np.int64).reshape(-1, 2)
        kinds = np.array([e[2] for e in doc["edges"]], dtype=np.uint8)
        points = np.array([[e[3], e[4]] for e in doc["edges"]], dtype=np.float64).reshape(-1, 2)
        return cls(
            n_wires=n_wires,
            n_electrodes=n_elec,
            edges=edges,
            edge_points=points,
            edge_kind=kinds,
            readout_ids=np.array(doc["readout_ids"], dtype=np.int64),
            input_index=np.array(doc["input_index"], dtype=np.int64),
            config=cfg,
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "NetworkGraph":
        return cls.from_json(Path(path).read_text())


def generate_layout(config: NetgenConfig) -> NanowireLayout:
    """Sample wire centres, orientations and lengths; place the electrode grid.

    Centres are drawn per coordinate from a generalized normal distribution
    (shape ``center_beta``, scale ``config.scale``, mean at the plane centre)
    and resampled until inside the plane. Orientations are uniform on
    [0, pi); lengths Gaussian, resampled until positive. Deterministic for a
    given ``config.seed``.
    """
    rng = np.random.default_rng(config.seed)
    n = config.n_wires

    centers = np.empty((n, 2), dtype=np.float64)
    pending = np.ones(n, dtype=bool)
    while pending.any():
        k = int(pending.sum())
        u = rng.random((k, 2))
        xy = gennorm.ppf(u, config.center_beta, loc=config.plane_side / 2.0,
                         scale=config.scale)
        inside = ((xy >= 0.0) & (xy <= config.plane_side)).all(axis=1)
        idx = np.flatnonzero(pending)[inside]
        centers[idx] = xy[inside]
        pending[idx] = False

    angles = rng.uniform(0.0, np.pi, n)
    angles[angles >= np.pi] = 0.0  # half-open interval; uniform() can hit pi only by rounding

    lengths = np.empty(n, dtype=np.float64)
    pending = np.ones(n, dtype=bool)
    while pending.any():
        k = int(pending.sum())
        cand = rng.normal(config.wire_len_mean, config.wire_len_std, k)
        ok = cand > 0.0
        idx = np.flatnonzero(pending)[ok]
        lengths[idx] = cand[ok]
        pending[idx] = False

    half = np.stack([np.cos(angles), np.sin(angles)], axis=1) * (lengths[:, None] / 2.0)
    endpoints = np.stack([centers - half, centers + half], axis=1)

    grid = np.arange(config.electrode_grid, dtype=np.float64) * config.electrode_pitch \
        + config.electrode_margin
    # row-major: index k = row * grid + col; x follows the column, y the row
    cols, rows = np.meshgrid(grid, grid, indexing="xy")
    electrode_centers = np.stack([cols.ravel(), rows.ravel()], axis=1)

    return NanowireLayout(
        centers=centers,
        angles=angles,
        lengths=lengths,
        endpoints=endpoints,
        electrode_centers=electrode_centers,
        electrode_radius=config.electrode_diameter / 2.0,
    )


def detect_junctions(layout: NanowireLayout) -> Junctions:
    """Find wire-wire crossings and wire-electrode contacts.

    One wire-wire junction per intersecting segment pair (collinear overlaps
    contribute a single junction at the overlap midpoint); one wire-electrode
    junction per segment whose minimum distance to an electrode centre is at
    most the electrode radius, recorded at the closest segment point.
    """
    p1 = layout.endpoints[:, 0, :]
    p2 = layout.endpoints[:, 1, :]
    n = layout.n_wires

    ww_pairs = []
    ww_points = []
    if n >= 2:
        iu, ju = np.triu_indices(n, k=1)
        for lo in range(0, iu.size, _PAIR_CHUNK):
            hi = min(lo + _PAIR_CHUNK, iu.size)
            i = iu[lo:hi]
            j = ju[lo:hi]
            pairs, pts = _segment_crossings(p1[i], p2[i], p1[j], p2[j], i, j)
            if pairs.size:
                ww_pairs.append(pairs)
                ww_points.append(pts)
    ww = np.concatenate(ww_pairs) if ww_pairs else np.empty((0, 2), dtype=np.int64)
    wwp = np.concatenate(ww_points) if ww_points else np.empty((0, 2), dtype=np.float64)

    we, wep = _electrode_contacts(p1, p2, layout.electrode_centers, layout.electrode_radius)

    order = np.lexsort((ww[:, 1], ww[:, 0]))
    ww, wwp = ww[order], wwp[order]
    order = np.lexsort((we[:, 1], we[:, 0]))
    we, wep = we[order], wep[order]
    return Junctions(wire_wire=ww, wire_wire_points=wwp,
                     wire_electrode=we, wire_electrode_points=wep)


def _segment_crossings(a1, a2, b1, b2, i, j):
    """Vectorized crossing test for segment pairs (a1,a2) x (b1,b2)."""
    r = a2 - a1
    s = b2 - b1
    denom = r[:, 0] * s[:, 1] - r[:, 1] * s[:, 0]
    qp = b1 - a1
    # near-parallel pairs go through the scalar collinear-overlap path
    scale = np.linalg.norm(r, axis=1) * np.linalg.norm(s, axis=1)
    parallel = np.abs(denom) <= 1e-12 * scale

    with np.errstate(divide="ignore", invalid="ignore"):
        t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / denom
        u = (qp[:, 0] * r[:, 1] - qp[:, 1] * r[:, 0]) / denom
    hit = ~parallel & (t >= 0.0) & (t <= 1.0) & (u >= 0.0) & (u <= 1.0)

    pts = a1[hit] + t[hit, None] * r[hit]
    pairs = np.stack([i[hit], j[hit]], axis=1).astype(np.int64)

    # collinear overlap: one junction at the overlap midpoint
    extra_pairs = []
    extra_pts = []
    for k in np.flatnonzero(parallel):
        pt = _collinear_overlap_point(a1[k], a2[k], b1[k], b2[k])
        if pt is not None:
            extra_pairs.append((i[k], j[k]))
            extra_pts.append(pt)
    if extra_pairs:
        pairs = np.concatenate([pairs, np.array(extra_pairs, dtype=np.int64)])
        pts = np.concatenate([pts, np.array(extra_pts, dtype=np.float64)])
    return pairs, pts


def _collinear_overlap_point(a1, a2, b1, b2):
    """Midpoint of the overlap of two collinear segments, or None."""
    r = a2 - a1
    lr = np.hypot(r[0], r[1])
    if lr == 0.0:
        return None
    d = r / lr
    # b must lie on the same line
    for q in (b1, b2):
        off = q - a1
        if abs(off[0] * d[1] - off[1] * d[0]) > 1e-9:
            return None
    ta0, ta1 = 0.0, lr
    tb0 = float((b1 - a1) @ d)
    tb1 = float((b2 - a1) @ d)
    lo = max(ta0, min(tb0, tb1))
    hi = min(ta1, max(tb0, tb1))
    if lo > hi:
        return None
    mid = (lo + hi) / 2.0
    return a1 + mid * d


def _electrode_contacts(p1, p2, centers, radius):
    """All (wire, electrode) pairs with segment-to-centre distance <= radius."""
    seg = p2 - p1
    seglen2 = np.maximum((seg ** 2).sum(axis=1), 1e-300)
    pairs = []
    points = []
    for k in range(centers.shape[0]):
        w = centers[k] - p1
        t = np.clip((w * seg).sum(axis=1) / seglen2, 0.0, 1.0)
        closest = p1 + t[:, None] * seg
        d2 = ((closest - centers[k]) ** 2).sum(axis=1)
        hit = np.flatnonzero(d2 <= radius * radius)
        if hit.size:
            pairs.append(np.stack([hit, np.full(hit.size, k)], axis=1))
            points.append(closest[hit])
    if not pairs:
        return (np.empty((0, 2), dtype=np.int64), np.empty((0, 2), dtype=np.float64))
    return (np.concatenate(pairs).astype(np.int64), np.concatenate(points))


def build_graph(layout: NanowireLayout, junctions: Junctions, seed: int,
                n_readout: int = 400, config: NetgenConfig | None = None) -> NetworkGraph:
    """Merge junctions into unique edges and pick readout nodes.

    Wires become nodes 0..n-1, electrodes follow in row-major grid order.
    Parallel contacts between the same node pair merge into one edge (the
    first junction in canonical order keeps its coordinate). Readout nodes
    are drawn uniformly without replacement from the wire nodes.
    """
    n_wires = layout.n_wires
    n_elec = layout.n_electrodes
    if n_readout > n_wires:
        raise NetgenError(f"n_readout={n_readout} exceeds wire count {n_wires}")

    ww = junctions.wire_wire
    we = junctions.wire_electrode.copy()
    if we.size:
        we[:, 1] += n_wires  # electrode ids follow the wires

    pairs = np.concatenate([ww, we]) if (ww.size or we.size) else np.empty((0, 2), dtype=np.int64)
    points = np.concatenate([junctions.wire_wire_points, junctions.wire_electrode_points]) \
        if pairs.size else np.empty((0, 2), dtype=np.float64)
    kinds = np.concatenate([
        np.zeros(ww.shape[0], dtype=np.uint8),
        np.ones(we.shape[0], dtype=np.uint8),
    ]) if pairs.size else np.empty(0, dtype=np.uint8)

    if pairs.size:
        pairs = np.sort(pairs, axis=1)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        pairs, points, kinds = pairs[order], points[order], kinds[order]
        keep = np.ones(pairs.shape[0], dtype=bool)
        same = (pairs[1:] == pairs[:-1]).all(axis=1)
        keep[1:] = ~same
        pairs, points, kinds = pairs[keep], points[keep], kinds[keep]
        if (pairs[:, 0] == pairs[:, 1]).any():
            raise NetgenError("self-edge produced by junction detection")

    rng = np.random.default_rng(seed)
    readout = np.sort(rng.choice(n_wires, size=n_readout, replace=False)).astype(np.int64)

    return NetworkGraph(
        n_wires=n_wires,
        n_electrodes=n_elec,
        edges=pairs,
        edge_points=points,
        edge_kind=kinds,
        readout_ids=readout,
        input_index=np.arange(n_wires, n_wires + n_elec, dtype=np.int64),
        config=config,
    )


def generate_graph(config: NetgenConfig, readout_seed: int | None = None,
                   n_readout: int = 400) -> NetworkGraph:
    """Full pipeline: layout -> junctions -> graph, carrying the config.

    ``readout_seed`` defaults to ``config.seed`` so a single seed fixes the
    whole instance.
    """
    layout = generate_layout(config)
    junctions = detect_junctions(layout)
    return build_graph(layout, junctions,
                       seed=config.seed if readout_seed is None else readout_seed,
                       n_readout=n_readout, config=config)
