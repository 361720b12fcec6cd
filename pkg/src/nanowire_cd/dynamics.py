"""Memristive edge-state evolution and nodal circuit solves.

Each graph edge carries a state variable lambda (volt-seconds) that moves
when the voltage across the edge leaves the [v_reset, v_set] dead band and
saturates at +-lambda_max. Conductance interpolates linearly between g_off
and g_on with |lambda|. At every substep the node voltages are obtained by
fixing the driven electrodes (Dirichlet) and enforcing current conservation
at all remaining nodes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .netgen import NetworkGraph

_SNAPSHOT_MAGIC = b"NWNS"
_SNAPSHOT_VERSION = 1


class SolverError(RuntimeError):
    """Linear solve failed to reach the residual target."""

    def __init__(self, message: str, achieved: float, target: float):
        super().__init__(f"{message} (achieved residual {achieved:.3e}, target {target:.3e})")
        self.achieved = achieved
        self.target = target


@dataclass(frozen=True)
class DynamicsConfig:
    v_set: float = 1e-2            # volts
    v_reset: float = 5e-3          # volts
    lambda_max: float = 1.5e-2     # volt-seconds
    dt: float = 1e-3               # seconds per Euler substep
    steps_per_frame: int = 10
    g_off: float = 7.77e-8         # siemens at lambda = 0
    g_on: float = 7.75e-5          # siemens at |lambda| = lambda_max
    solver_tolerance: float = 1e-10

    def __post_init__(self):
        if not (0.0 < self.v_reset < self.v_set):
            raise ValueError("need 0 < v_reset < v_set")
        if self.lambda_max <= 0:
            raise ValueError("lambda_max must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.steps_per_frame <= 0:
            raise ValueError("steps_per_frame must be positive")
        if not (self.g_on > self.g_off > 0):
            raise ValueError("need g_on > g_off > 0")
        if self.solver_tolerance <= 0:
            raise ValueError("solver_tolerance must be positive")

    @property
    def frame_duration(self) -> float:
        return self.dt * self.steps_per_frame

    def to_dict(self) -> dict:
        return {
            "v_set": self.v_set, "v_reset": self.v_reset,
            "lambda_max": self.lambda_max, "dt": self.dt,
            "steps_per_frame": self.steps_per_frame,
            "g_off": self.g_off, "g_on": self.g_on,
            "solver_tolerance": self.solver_tolerance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DynamicsConfig":
        return cls(**d)


@dataclass
class NetworkState:
    """Mutable per-network state: edge lambdas and last solved voltages."""

    lam: np.ndarray            # (E,) float64, |lam| <= lambda_max
    node_voltage: np.ndarray   # (N,) float64
    time: float = 0.0

    @classmethod
    def initial(cls, graph: NetworkGraph) -> "NetworkState":
        return cls(lam=np.zeros(graph.n_edges, dtype=np.float64),
                   node_voltage=np.zeros(graph.n_nodes, dtype=np.float64),
                   time=0.0)

    def copy(self) -> "NetworkState":
        return NetworkState(self.lam.copy(), self.node_voltage.copy(), self.time)


@dataclass(frozen=True)
class InputFrame:
    """Voltages applied to the driven electrodes for one image frame.

    ``voltages`` holds one entry per driven electrode, in row-major electrode
    grid order; ``driven_mask`` flags which grid positions are driven.
    """

    voltages: np.ndarray       # (n_driven,) float64
    driven_mask: np.ndarray    # (n_electrodes,) bool

    def __post_init__(self):
        v = np.asarray(self.voltages, dtype=np.float64)
        m = np.asarray(self.driven_mask, dtype=bool)
        object.__setattr__(self, "voltages", v)
        object.__setattr__(self, "driven_mask", m)
        if v.ndim != 1 or m.ndim != 1:
            raise ValueError("voltages and driven_mask must be 1-D")
        if v.size != int(m.sum()):
            raise ValueError("voltages length must equal number of driven electrodes")
        if v.size and np.abs(v).max() > 10.0:
            raise ValueError("|voltage| exceeds the 10 V sanity bound")

    @classmethod
    def full(cls, voltages) -> "InputFrame":
        """Drive every electrode; voltages in row-major grid order."""
        v = np.asarray(voltages, dtype=np.float64).ravel()
        return cls(voltages=v, driven_mask=np.ones(v.size, dtype=bool))


def edge_conductance(lam, config: DynamicsConfig):
    """Linear map |lambda| -> conductance, g_off at 0 to g_on at lambda_max."""
    return config.g_off + (config.g_on - config.g_off) * (np.abs(lam) / config.lambda_max)


class KirchhoffSolver:
    """Repeated nodal solves on a fixed graph topology.

    Precomputes connected components and, per driven-electrode mask, the
    index maps for assembling the reduced current-conservation system.
    Solves use Jacobi-preconditioned conjugate gradients warm-started from
    the previous solution (the matrix is SPD on the reduced unknowns);
    a direct sparse factorization is the fallback path.
    """

    def __init__(self, graph: NetworkGraph, tolerance: float = 1e-10,
                 method: str = "pcg"):
        if method not in ("pcg", "direct"):
            raise ValueError(f"unknown solver method {method!r}")
        self.graph = graph
        self.tolerance = tolerance
        self.method = method
        self.n = graph.n_nodes
        self.ea = graph.edges[:, 0].astype(np.int64)
        self.eb = graph.edges[:, 1].astype(np.int64)
        if graph.n_edges:
            adj = sp.csr_matrix(
                (np.ones(graph.n_edges), (self.ea, self.eb)), shape=(self.n, self.n))
            _, self.component = connected_components(adj, directed=False)
        else:
            self.component = np.arange(self.n)
        self._plans: dict[bytes, _MaskPlan] = {}

    def _plan(self, frame: InputFrame) -> "_MaskPlan":
        key = frame.driven_mask.tobytes()
        plan = self._plans.get(key)
        if plan is None:
            plan = _MaskPlan(self, frame.driven_mask)
            self._plans[key] = plan
        return plan

    def solve(self, conductances: np.ndarray, frame: InputFrame,
              warm_start: np.ndarray | None = None) -> np.ndarray:
        """Return the full node-voltage vector for the given edge conductances.

        Driven electrodes take their applied voltages exactly; nodes in
        components without any driven electrode are held at 0 V.
        """
        g = np.asarray(conductances, dtype=np.float64)
        if g.shape != (self.graph.n_edges,):
            raise ValueError("conductances must have one entry per edge")
        if g.size and g.min() <= 0:
            raise ValueError("conductances must be positive")
        plan = self._plan(frame)
        v = np.zeros(self.n, dtype=np.float64)
        v[plan.driven_nodes] = frame.voltages
        if plan.unknown.size == 0:
            return v
        x0 = None
        if warm_start is not None:
            x0 = warm_start[plan.unknown]
        v[plan.unknown] = plan.solve(g, frame.voltages, x0)
        return v

    def net_currents(self, conductances: np.ndarray, voltages: np.ndarray) -> np.ndarray:
        """Net current injected at each node for a solved voltage vector."""
        g = np.asarray(conductances, dtype=np.float64)
        flow = g * (voltages[self.ea] - voltages[self.eb])
        out = np.zeros(self.n)
        np.add.at(out, self.ea, flow)
        np.add.at(out, self.eb, -flow)
        return out


class _MaskPlan:
    """Assembly structure for one driven-electrode mask.

    The reduced system matrix, the diagonal extractor and the right-hand
    side builder all keep fixed sparsity; per solve only their values are
    refreshed from the edge conductances (no per-substep pattern work).
    """

    def __init__(self, solver: KirchhoffSolver, driven_mask: np.ndarray):
        graph = solver.graph
        n = solver.n
        self.solver = solver
        if driven_mask.size != graph.n_electrodes:
            raise ValueError(f"driven_mask has {driven_mask.size} entries, "
                             f"graph has {graph.n_electrodes} electrodes")
        self.driven_nodes = graph.input_index[driven_mask]
        is_driven = np.zeros(n, dtype=bool)
        is_driven[self.driven_nodes] = True

        live_components = np.unique(solver.component[self.driven_nodes])
        live = np.isin(solver.component, live_components)
        self.unknown = np.flatnonzero(live & ~is_driven)
        nu = self.nu = self.unknown.size
        if nu == 0:
            return

        pos = np.full(n, -1, dtype=np.int64)
        pos[self.unknown] = np.arange(nu)
        dpos = np.full(n, -1, dtype=np.int64)
        dpos[self.driven_nodes] = np.arange(self.driven_nodes.size)

        ea, eb = solver.ea, solver.eb
        a_unk = pos[ea] >= 0
        b_unk = pos[eb] >= 0
        # edges with both ends unknown (off-diagonal couplings)
        both = a_unk & b_unk
        self.uu_edges = np.flatnonzero(both)
        uu_a = pos[ea[both]]
        uu_b = pos[eb[both]]
        # edges coupling an unknown node to a driven node (right-hand side)
        ad = a_unk & is_driven[eb]
        bd = b_unk & is_driven[ea]
        self.ud_edges = np.concatenate([np.flatnonzero(ad), np.flatnonzero(bd)])
        self.ud_u = ud_u = np.concatenate([pos[ea[ad]], pos[eb[bd]]])
        self.ud_d = np.concatenate([dpos[eb[ad]], dpos[ea[bd]]])
        # any edge incident to an unknown node contributes to its diagonal
        self.diag_edges = diag_edges = np.concatenate(
            [np.flatnonzero(a_unk), np.flatnonzero(b_unk)])
        self.diag_u = diag_u = np.concatenate([pos[ea[a_unk]], pos[eb[b_unk]]])

        rows = np.concatenate([uu_a, uu_b, np.arange(nu)])
        cols = np.concatenate([uu_b, uu_a, np.arange(nu)])
        order = sp.coo_matrix((np.arange(rows.size, dtype=np.float64) + 1.0,
                               (rows, cols)), shape=(nu, nu)).tocsr()
        self._A = order.copy()
        # source slot in the packed (off, off, diag) value vector per csr entry
        self._A_src = (order.data - 1.0).astype(np.int64)

        # diag = D @ g, b = R @ (g_ud * applied[ud_d]); unit-valued fixed patterns
        self._D = sp.csr_matrix(
            (np.ones(diag_edges.size), (diag_u, diag_edges)),
            shape=(nu, solver.graph.n_edges))
        self._R = sp.csr_matrix(
            (np.ones(self.ud_edges.size),
             (ud_u, np.arange(self.ud_edges.size))),
            shape=(nu, max(self.ud_edges.size, 1)))

    def _refresh(self, g: np.ndarray) -> np.ndarray:
        """Load conductances into the matrix; returns the diagonal."""
        diag = self._D @ g
        g_uu = g[self.uu_edges]
        packed = np.concatenate([-g_uu, -g_uu, diag])
        self._A.data[:] = packed[self._A_src]
        return diag

    def solve(self, g: np.ndarray, applied: np.ndarray, x0: np.ndarray | None) -> np.ndarray:
        diag = self._refresh(g)
        if self.ud_edges.size:
            b = self._R @ (g[self.ud_edges] * applied[self.ud_d])
        else:
            b = np.zeros(self.nu)
        nb = float(np.sqrt(b @ b))
        if nb == 0.0:
            return np.zeros(self.nu)
        tol = self.solver.tolerance
        if self.solver.method == "pcg":
            x, achieved = self._pcg(diag, b, nb, x0, tol)
            if achieved <= tol:
                return x
        x, achieved = self._direct(b, nb)
        if achieved > tol:
            raise SolverError("nodal solve did not reach the residual target",
                              achieved=achieved, target=tol)
        return x

    def _pcg(self, diag, b, nb, x0, tol):
        A = self._A
        x = np.zeros(self.nu) if x0 is None else x0.copy()
        r = b - A @ x
        dinv = 1.0 / diag
        z = dinv * r
        p = z.copy()
        rz = float(r @ z)
        target2 = (tol * nb) ** 2
        maxiter = max(20 * self.nu, 200)
        for _ in range(maxiter):
            if float(r @ r) <= target2:
                break
            Ap = A @ p
            pAp = float(p @ Ap)
            if pAp <= 0.0:
                break  # lost positive definiteness numerically; fall back
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            z = dinv * r
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        rtrue = b - A @ x
        achieved = float(np.sqrt(rtrue @ rtrue)) / nb
        return x, achieved

    def _direct(self, b, nb):
        A = self._A.tocsc()
        x = spla.splu(A).solve(b)
        rtrue = b - A @ x
        achieved = float(np.sqrt(rtrue @ rtrue)) / nb
        return x, achieved


def solve_kirchhoff(graph: NetworkGraph, conductances: np.ndarray,
                    frame: InputFrame, tolerance: float = 1e-10,
                    solver: KirchhoffSolver | None = None) -> np.ndarray:
    """One-shot nodal solve; see KirchhoffSolver for the reusable interface."""
    if solver is None:
        solver = KirchhoffSolver(graph, tolerance=tolerance)
    return solver.solve(conductances, frame)


def step(state: NetworkState, graph: NetworkGraph, frame: InputFrame,
         config: DynamicsConfig, solver: KirchhoffSolver | None = None) -> NetworkState:
    """Advance the network by one frame (steps_per_frame Euler substeps).

    Each substep: conductances from lambda, nodal solve, then the state
    update with branch order: saturation hold (growth only), set branch
    above v_set, dead band, decay branch below v_reset (clipped so lambda
    cannot cross zero within a substep), final clamp to +-lambda_max.
    The state is updated in place and returned.
    """
    if solver is None:
        solver = KirchhoffSolver(graph, tolerance=config.solver_tolerance)
    lam = state.lam
    ea, eb = solver.ea, solver.eb
    for _ in range(config.steps_per_frame):
        g = edge_conductance(lam, config)
        v = solver.solve(g, frame, warm_start=state.node_voltage)
        state.node_voltage = v
        dv = v[ea] - v[eb]
        adv = np.abs(dv)
        sgn_lam = np.sign(lam)

        dlam = np.where(adv > config.v_set, (adv - config.v_set) * np.sign(dv), 0.0)
        below = adv < config.v_reset
        dlam = np.where(below, (adv - config.v_reset) * sgn_lam, dlam)
        # saturated edges hold against further growth but may still decay
        hold = (np.abs(lam) >= config.lambda_max) & (dlam * sgn_lam > 0)
        dlam = np.where(hold, 0.0, dlam)

        new = lam + config.dt * dlam
        crossed = below & (np.sign(new) * sgn_lam < 0)
        new = np.where(crossed, 0.0, new)
        np.clip(new, -config.lambda_max, config.lambda_max, out=lam)
        state.time += config.dt
    return state


def readout(state: NetworkState, graph: NetworkGraph) -> np.ndarray:
    """Feature slice: node voltages at the readout nodes, id-sorted order."""
    return state.node_voltage[graph.readout_ids].copy()


def write_state(state: NetworkState, path) -> None:
    """Binary snapshot: magic, version u16, edge count u32, lambdas, time."""
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_MAGIC)
        fh.write(struct.pack("<HI", _SNAPSHOT_VERSION, state.lam.size))
        fh.write(state.lam.astype("<f8").tobytes())
        fh.write(struct.pack("<d", state.time))


def read_state(path, graph: NetworkGraph) -> NetworkState:
    raw = Path(path).read_bytes()
    if raw[:4] != _SNAPSHOT_MAGIC:
        raise ValueError("not a network-state snapshot")
    version, n_edges = struct.unpack_from("<HI", raw, 4)
    if version != _SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    if n_edges != graph.n_edges:
        raise ValueError(f"snapshot has {n_edges} edges, graph has {graph.n_edges}")
    off = 4 + 6
    lam = np.frombuffer(raw, dtype="<f8", count=n_edges, offset=off).copy()
    (time,) = struct.unpack_from("<d", raw, off + 8 * n_edges)
    return NetworkState(lam=lam, node_voltage=np.zeros(graph.n_nodes), time=time)
