"""Compiled multi-band simulation engine for the feature-extraction hot path.

Runs every selected band network over a whole tile stream in one jitted
call: per substep it assembles the reduced conductance system, solves it
with warm-started Jacobi-preconditioned conjugate gradients to the same
residual target as the reference solver, applies the edge-state update, and
breaks out of a frame early once the state freezes (the remaining substeps
are exact no-ops). Bands are independent, so the band loop parallelizes
without any cross-thread accumulation; results are identical for any
thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

import numba

from .dynamics import DynamicsConfig, InputFrame, KirchhoffSolver, SolverError
from .netgen import NetworkGraph

# skip the TBB probe (noisy warning with old system TBB); omp scales the same
numba.config.THREADING_LAYER = "omp"


@njit(cache=True)
def _true_resid(A_indptr, A_indices, Avals, b, x, r):
    """r = b - A x; returns |r|^2."""
    rr = 0.0
    for i in range(b.size):
        acc = 0.0
        for jj in range(A_indptr[i], A_indptr[i + 1]):
            acc += Avals[jj] * x[A_indices[jj]]
        r[i] = b[i] - acc
        rr += r[i] * r[i]
    return rr


@njit(cache=True)
def _pcg(A_indptr, A_indices, Avals, diag, b, x, r, z, p, ap, target2, maxiter):
    """In-place PCG; converges on (and returns) the true residual |b - Ax|^2."""
    nu = b.size
    iters_left = maxiter
    rr_true = _true_resid(A_indptr, A_indices, Avals, b, x, r)
    for _ in range(4):  # recurrence drift guard: re-check against the true residual
        if rr_true <= target2 or iters_left <= 0:
            return rr_true
        rz = 0.0
        for i in range(nu):
            z[i] = r[i] / diag[i]
            p[i] = z[i]
            rz += r[i] * z[i]
        while iters_left > 0:
            rr = 0.0
            for i in range(nu):
                rr += r[i] * r[i]
            if rr <= target2:
                break
            pap = 0.0
            for i in range(nu):
                acc = 0.0
                for jj in range(A_indptr[i], A_indptr[i + 1]):
                    acc += Avals[jj] * p[A_indices[jj]]
                ap[i] = acc
                pap += p[i] * acc
            if pap <= 0.0:
                iters_left = 0
                break
            alpha = rz / pap
            for i in range(nu):
                x[i] += alpha * p[i]
                r[i] -= alpha * ap[i]
            rz_new = 0.0
            for i in range(nu):
                z[i] = r[i] / diag[i]
                rz_new += r[i] * z[i]
            beta = rz_new / rz
            for i in range(nu):
                p[i] = z[i] + beta * p[i]
            rz = rz_new
            iters_left -= 1
        rr_true = _true_resid(A_indptr, A_indices, Avals, b, x, r)
    return rr_true


@njit(cache=True, parallel=True)
def _run_bands(A_indptr, A_indices, A_src, uu_edges, ud_edges, ud_u, ud_d,
               diag_edges, diag_u, unknown, driven, ea, eb, readout_ids,
               vd_all, lam, feats, worst_resid2,
               v_set, v_reset, lam_max, dt, spf, g_off, g_on, tol,
               reset_per_tile):
    n_tiles, n_frames, n_bands, _ = vd_all.shape
    n_edges = ea.size
    nu = unknown.size
    nnz = A_indices.size
    k = uu_edges.size
    g_diff = g_on - g_off
    n_nodes_total = 0
    for i in range(driven.size):
        if driven[i] + 1 > n_nodes_total:
            n_nodes_total = driven[i] + 1
    for i in range(nu):
        if unknown[i] + 1 > n_nodes_total:
            n_nodes_total = unknown[i] + 1
    for i in range(readout_ids.size):
        if readout_ids[i] + 1 > n_nodes_total:
            n_nodes_total = readout_ids[i] + 1
    maxiter = max(20 * nu, 200)

    for band in prange(n_bands):
        g = np.empty(n_edges)
        packed = np.empty(2 * k + nu)
        avals = np.empty(nnz)
        diag = np.empty(nu)
        b = np.empty(nu)
        x = np.empty(nu)
        r = np.empty(nu)
        z = np.empty(nu)
        p = np.empty(nu)
        ap = np.empty(nu)
        v = np.zeros(n_nodes_total)
        lam_b = lam[band]
        worst = 0.0

        for tile in range(n_tiles):
            if reset_per_tile:
                for e in range(n_edges):
                    lam_b[e] = 0.0
                for i in range(v.size):
                    v[i] = 0.0
            for t in range(n_frames):
                for i in range(driven.size):
                    v[driven[i]] = vd_all[tile, t, band, i]
                for _ in range(spf):
                    for e in range(n_edges):
                        g[e] = g_off + g_diff * (abs(lam_b[e]) / lam_max)
                    if nu > 0:
                        for i in range(nu):
                            diag[i] = 0.0
                        for i in range(diag_edges.size):
                            diag[diag_u[i]] += g[diag_edges[i]]
                        for i in range(k):
                            gv = -g[uu_edges[i]]
                            packed[i] = gv
                            packed[k + i] = gv
                        for i in range(nu):
                            packed[2 * k + i] = diag[i]
                        for i in range(nnz):
                            avals[i] = packed[A_src[i]]
                        for i in range(nu):
                            b[i] = 0.0
                        for i in range(ud_edges.size):
                            b[ud_u[i]] += g[ud_edges[i]] * vd_all[tile, t, band, ud_d[i]]
                        nb2 = 0.0
                        for i in range(nu):
                            nb2 += b[i] * b[i]
                        if nb2 == 0.0:
                            for i in range(nu):
                                v[unknown[i]] = 0.0
                        else:
                            for i in range(nu):
                                x[i] = v[unknown[i]]
                            rr = _pcg(A_indptr, A_indices, avals, diag, b,
                                      x, r, z, p, ap, tol * tol * nb2, maxiter)
                            rel2 = rr / nb2
                            if rel2 > worst:
                                worst = rel2
                            for i in range(nu):
                                v[unknown[i]] = x[i]
                    # edge-state update; branch order matches the reference step
                    changed = False
                    for e in range(n_edges):
                        dv = v[ea[e]] - v[eb[e]]
                        adv = abs(dv)
                        lam_e = lam_b[e]
                        sgn_lam = 1.0 if lam_e > 0.0 else (-1.0 if lam_e < 0.0 else 0.0)
                        if adv > v_set:
                            sgn_v = 1.0 if dv > 0.0 else (-1.0 if dv < 0.0 else 0.0)
                            dlam = (adv - v_set) * sgn_v
                        elif adv < v_reset:
                            dlam = (adv - v_reset) * sgn_lam
                        else:
                            dlam = 0.0
                        if abs(lam_e) >= lam_max and dlam * sgn_lam > 0.0:
                            dlam = 0.0  # saturated: hold growth, allow decay
                        new = lam_e + dt * dlam
                        if adv < v_reset and new * lam_e < 0.0:
                            new = 0.0  # decay must not cross zero
                        if new > lam_max:
                            new = lam_max
                        elif new < -lam_max:
                            new = -lam_max
                        if new != lam_e:
                            lam_b[e] = new
                            changed = True
                    if not changed:
                        break  # state frozen: remaining substeps are no-ops
                for ri in range(readout_ids.size):
                    feats[tile, t, band, ri] = v[readout_ids[ri]]
        worst_resid2[band] = worst


def simulate_bands(graph: NetworkGraph, config: DynamicsConfig,
                   pooled_stacks: np.ndarray, lam0: np.ndarray,
                   reset_mode: str, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Run every band over the tile stream; returns (features, final lambdas).

    ``pooled_stacks`` is (n_bands, n_tiles, T, 16, 16); ``lam0`` is
    (n_bands, n_edges). Features come back as (n_tiles, T, n_bands, R).
    """
    n_bands, n_tiles, n_frames = pooled_stacks.shape[:3]
    solver = KirchhoffSolver(graph, tolerance=config.solver_tolerance)
    mask = np.ones(graph.n_electrodes, dtype=bool)
    plan = solver._plan(InputFrame(np.zeros(graph.n_electrodes), mask))

    # interleave bands by input energy so static thread chunks stay balanced
    energy = np.abs(pooled_stacks).sum(axis=(1, 2, 3, 4))
    by_cost = np.argsort(-energy, kind="stable")
    perm = np.empty(n_bands, dtype=np.int64)
    half = (n_bands + 1) // 2
    perm[0::2] = by_cost[:half]
    perm[1::2] = by_cost[half:]

    vd_all = np.ascontiguousarray(
        pooled_stacks[perm].reshape(n_bands, n_tiles, n_frames, -1)
        .transpose(1, 2, 0, 3).astype(np.float64))
    lam = np.ascontiguousarray(lam0[perm], dtype=np.float64)
    feats_perm = np.empty((n_tiles, n_frames, n_bands, graph.readout_ids.size))
    worst = np.zeros(n_bands)

    if plan.nu > 0:
        a_indptr = plan._A.indptr.astype(np.int64)
        a_indices = plan._A.indices.astype(np.int32)
        a_src = plan._A_src
        uu_edges, ud_edges = plan.uu_edges, plan.ud_edges
        ud_u, ud_d = plan.ud_u, plan.ud_d
        diag_edges, diag_u = plan.diag_edges, plan.diag_u
        unknown = plan.unknown
    else:
        a_indptr = np.zeros(1, dtype=np.int64)
        a_indices = np.zeros(0, dtype=np.int32)
        a_src = np.zeros(0, dtype=np.int64)
        uu_edges = ud_edges = ud_u = ud_d = np.zeros(0, dtype=np.int64)
        diag_edges = diag_u = np.zeros(0, dtype=np.int64)
        unknown = np.zeros(0, dtype=np.int64)

    old_threads = numba.get_num_threads()
    numba.set_num_threads(max(1, min(threads, n_bands, old_threads)))
    try:
        _run_bands(a_indptr, a_indices, a_src,
                   uu_edges.astype(np.int64), ud_edges.astype(np.int64),
                   ud_u.astype(np.int64), ud_d.astype(np.int64),
                   diag_edges.astype(np.int64), diag_u.astype(np.int64),
                   unknown.astype(np.int64),
                   plan.driven_nodes.astype(np.int64),
                   graph.edges[:, 0].astype(np.int64),
                   graph.edges[:, 1].astype(np.int64),
                   graph.readout_ids.astype(np.int64),
                   vd_all, lam, feats_perm, worst,
                   config.v_set, config.v_reset, config.lambda_max,
                   config.dt, config.steps_per_frame,
                   config.g_off, config.g_on, config.solver_tolerance,
                   reset_mode == "per_tile")
    finally:
        numba.set_num_threads(old_threads)

    worst_rel = float(np.sqrt(worst.max())) if worst.size else 0.0
    if worst_rel > config.solver_tolerance:
        raise SolverError("banded simulation failed the residual target",
                          achieved=worst_rel, target=config.solver_tolerance)

    inverse = np.argsort(perm)
    feats = np.ascontiguousarray(feats_perm[:, :, inverse, :])
    lam_out = lam[inverse]
    return feats, lam_out
