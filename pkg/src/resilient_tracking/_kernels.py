"""Hot numeric kernels with numba-compiled and pure-numpy implementations.

Every kernel exists in two forms: a loop implementation (compiled with
``numba.njit`` when available) and a vectorized numpy fallback.  The active
implementation is chosen at import time; set ``RESILIENT_TRACKING_NO_NUMBA=1``
to force the numpy path.  Both paths are exercised against each other in the
test suite.
"""

import math
import os

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)

NUMBA_DISABLED = os.environ.get("RESILIENT_TRACKING_NO_NUMBA", "").lower() in {
    "1",
    "true",
    "yes",
}

HAVE_NUMBA = False
if not NUMBA_DISABLED:
    try:
        from numba import njit

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a hard dependency
        HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# greedy moment-matching merge
# ---------------------------------------------------------------------------

def _merge_py(weights, means, covs, thr_sq):
    """Greedy merge: absorb everything within Mahalanobis^2 <= thr_sq of the
    current highest-weight component, moment-matching each cluster."""
    n, d = means.shape
    out_w = np.empty(n)
    out_m = np.empty((n, d))
    out_p = np.empty((n, d, d))
    active = np.ones(n, dtype=np.bool_)
    n_left = n
    n_out = 0
    while n_left > 0:
        j = -1
        wj = -1.0
        for i in range(n):
            if active[i] and weights[i] > wj:
                wj = weights[i]
                j = i
        pinv = np.linalg.inv(covs[j])
        member = np.zeros(n, dtype=np.bool_)
        w_sum = 0.0
        for i in range(n):
            if not active[i]:
                continue
            delta = means[i] - means[j]
            dist = delta @ pinv @ delta
            if dist <= thr_sq:
                member[i] = True
                w_sum += weights[i]
        mu = np.zeros(d)
        if w_sum > 0.0:
            for i in range(n):
                if member[i]:
                    mu += weights[i] * means[i]
            mu /= w_sum
        else:
            mu = means[j].copy()
        pm = np.zeros((d, d))
        if w_sum > 0.0:
            for i in range(n):
                if member[i]:
                    delta = means[i] - mu
                    pm += weights[i] * (covs[i] + np.outer(delta, delta))
            pm /= w_sum
        else:
            pm = covs[j].copy()
        for i in range(n):
            if member[i]:
                active[i] = False
                n_left -= 1
        out_w[n_out] = w_sum
        out_m[n_out] = mu
        out_p[n_out] = pm
        n_out += 1
    return out_w[:n_out], out_m[:n_out], out_p[:n_out]


def merge_greedy_np(weights, means, covs, thr_sq):
    """Vectorized variant of the greedy moment-matching merge."""
    n, d = means.shape
    out_w, out_m, out_p = [], [], []
    active = np.ones(n, dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        j = idx[np.argmax(weights[idx])]
        pinv = np.linalg.inv(covs[j])
        deltas = means[idx] - means[j]
        dist = np.einsum("ki,ij,kj->k", deltas, pinv, deltas)
        members = idx[dist <= thr_sq]
        w = weights[members]
        w_sum = float(w.sum())
        if w_sum > 0.0:
            mu = (w[:, None] * means[members]).sum(axis=0) / w_sum
            dev = means[members] - mu
            pm = (
                w[:, None, None]
                * (covs[members] + dev[:, :, None] * dev[:, None, :])
            ).sum(axis=0) / w_sum
        else:
            mu = means[j].copy()
            pm = covs[j].copy()
        out_w.append(w_sum)
        out_m.append(mu)
        out_p.append(pm)
        active[members] = False
    return (
        np.asarray(out_w),
        np.asarray(out_m).reshape(len(out_w), d),
        np.asarray(out_p).reshape(len(out_w), d, d),
    )


# ---------------------------------------------------------------------------
# measurement-update tables (per-component Kalman quantities + likelihoods)
# ---------------------------------------------------------------------------

def _innovation_tables_py(means, covs, H, R, measurements):
    n = means.shape[0]
    d = means.shape[1]
    m = H.shape[0]
    nz = measurements.shape[0]
    eta = np.empty((n, m))
    s_det = np.empty(n)
    post_cov = np.empty((n, d, d))
    gain = np.empty((n, d, m))
    for i in range(n):
        eta[i] = H @ means[i]
        s = R + H @ covs[i] @ H.T
        s = 0.5 * (s + s.T)
        s_det[i] = np.linalg.det(s)
        s_inv = np.linalg.inv(s)
        k = covs[i] @ H.T @ s_inv
        gain[i] = k
        pc = covs[i] - k @ H @ covs[i]
        post_cov[i] = 0.5 * (pc + pc.T)
    like = np.empty((nz, n))
    post_mean = np.empty((nz, n, d))
    for z in range(nz):
        for i in range(n):
            resid = measurements[z] - eta[i]
            s = R + H @ covs[i] @ H.T
            s = 0.5 * (s + s.T)
            s_inv = np.linalg.inv(s)
            quad = resid @ s_inv @ resid
            like[z, i] = math.exp(-0.5 * quad) / math.sqrt(
                (2.0 * math.pi) ** m * s_det[i]
            )
            post_mean[z, i] = means[i] + gain[i] @ resid
    return like, post_mean, post_cov, s_det


def innovation_tables_np(means, covs, H, R, measurements):
    """Batch Kalman-update tables: likelihoods N(z; H mu, S), posterior means
    per (measurement, component) and posterior covariances per component."""
    n, d = means.shape
    m = H.shape[0]
    eta = means @ H.T
    s = R[None, :, :] + np.einsum("ab,nbc,dc->nad", H, covs, H)
    s = 0.5 * (s + np.transpose(s, (0, 2, 1)))
    s_det = np.linalg.det(s)
    s_inv = np.linalg.inv(s)
    gain = np.einsum("nab,cb,ncd->nad", covs, H, s_inv)
    post_cov = covs - np.einsum("nab,bc,ncd->nad", gain, H, covs)
    post_cov = 0.5 * (post_cov + np.transpose(post_cov, (0, 2, 1)))
    resid = measurements[:, None, :] - eta[None, :, :]
    quad = np.einsum("zna,nab,znb->zn", resid, s_inv, resid)
    like = np.exp(-0.5 * quad) / np.sqrt((2.0 * math.pi) ** m * s_det)[None, :]
    post_mean = means[None, :, :] + np.einsum("nab,znb->zna", gain, resid)
    return like, post_mean, post_cov, s_det


# ---------------------------------------------------------------------------
# geometric-mean cross-product fusion over component tuples
# ---------------------------------------------------------------------------

def _gmf_cross_py(j_mats, j_mus, pre_terms, offsets, omegas, log_prune):
    n_mix = offsets.shape[0] - 1
    d = j_mus.shape[1]
    counts = np.empty(n_mix, dtype=np.int64)
    total = 1
    for j in range(n_mix):
        counts[j] = offsets[j + 1] - offsets[j]
        total *= counts[j]
    out_w = np.empty(total)
    out_m = np.empty((total, d))
    out_p = np.empty((total, d, d))
    idx = np.zeros(n_mix, dtype=np.int64)
    n_out = 0
    for _ in range(total):
        omega_mat = np.zeros((d, d))
        q = np.zeros(d)
        s_sum = 0.0
        for j in range(n_mix):
            k = offsets[j] + idx[j]
            omega_mat += omegas[j] * j_mats[k]
            q += omegas[j] * j_mus[k]
            s_sum += pre_terms[k]
        p_f = np.linalg.inv(omega_mat)
        p_f = 0.5 * (p_f + p_f.T)
        mu_f = p_f @ q
        sign, logdet = np.linalg.slogdet(omega_mat)
        log_alpha = s_sum + 0.5 * (d * _LOG_2PI - logdet + q @ mu_f)
        if log_alpha >= log_prune:
            out_w[n_out] = math.exp(log_alpha)
            out_m[n_out] = mu_f
            out_p[n_out] = p_f
            n_out += 1
        # advance mixed-radix tuple counter
        for j in range(n_mix - 1, -1, -1):
            idx[j] += 1
            if idx[j] < counts[j]:
                break
            idx[j] = 0
    return out_w[:n_out], out_m[:n_out], out_p[:n_out]


def gmf_cross_np(j_mats, j_mus, pre_terms, offsets, omegas, log_prune):
    """Vectorized cross-product fusion: builds the full tuple grid at once."""
    n_mix = offsets.shape[0] - 1
    d = j_mus.shape[1]
    counts = np.diff(offsets)
    grids = np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")
    tuples = np.stack([g.ravel() for g in grids], axis=1) + offsets[:-1][None, :]
    omega_mat = np.einsum("j,tjab->tab", omegas, j_mats[tuples])
    q = np.einsum("j,tja->ta", omegas, j_mus[tuples])
    s_sum = pre_terms[tuples].sum(axis=1)
    p_f = np.linalg.inv(omega_mat)
    p_f = 0.5 * (p_f + np.transpose(p_f, (0, 2, 1)))
    mu_f = np.einsum("tab,tb->ta", p_f, q)
    _, logdet = np.linalg.slogdet(omega_mat)
    log_alpha = s_sum + 0.5 * (d * _LOG_2PI - logdet + np.einsum("ta,ta->t", q, mu_f))
    keep = log_alpha >= log_prune
    return np.exp(log_alpha[keep]), mu_f[keep], p_f[keep]


# ---------------------------------------------------------------------------
# formation coverage and feasibility
# ---------------------------------------------------------------------------

def _coverage_value_py(xy, radii):
    n = xy.shape[0]
    total = 0.0
    for i in range(n):
        term = radii[i] * radii[i]
        for j in range(n):
            if j == i:
                continue
            dx = xy[i, 0] - xy[j, 0]
            dy = xy[i, 1] - xy[j, 1]
            dist = math.sqrt(dx * dx + dy * dy)
            gap = 2.0 * radii[i] - dist
            if gap > 0.0:
                term -= 0.5 * gap * gap
        total += term
    return math.pi * total


def coverage_value_np(xy, radii):
    diff = xy[:, None, :] - xy[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    gap = 2.0 * radii[:, None] - dist
    np.fill_diagonal(gap, 0.0)
    gap = np.maximum(gap, 0.0)
    return math.pi * float((radii**2).sum() - 0.5 * (gap**2).sum())


def _feasible_py(pos, adj, d_s, d_mc, bmin, bmax, centroid, e_max):
    n = pos.shape[0]
    for i in range(n):
        for k in range(3):
            if pos[i, k] < bmin[k] or pos[i, k] > bmax[k]:
                return False
    for i in range(n):
        for j in range(i + 1, n):
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dz = pos[i, 2] - pos[j, 2]
            dist = math.sqrt(dx * dx + dy * dy + dz * dz)
            if dist < d_s:
                return False
            if adj[i, j] != 0 and dist > d_mc:
                return False
    cx = 0.0
    cy = 0.0
    for i in range(n):
        cx += pos[i, 0]
        cy += pos[i, 1]
    cx = cx / n - centroid[0]
    cy = cy / n - centroid[1]
    if math.sqrt(cx * cx + cy * cy) > e_max:
        return False
    return True


def feasible_np(pos, adj, d_s, d_mc, bmin, bmax, centroid, e_max):
    n = pos.shape[0]
    if np.any(pos < bmin[None, :]) or np.any(pos > bmax[None, :]):
        return False
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    iu = np.triu_indices(n, k=1)
    if np.any(dist[iu] < d_s):
        return False
    connected = adj[iu] != 0
    if np.any(dist[iu][connected] > d_mc):
        return False
    team = pos[:, :2].mean(axis=0)
    return bool(np.linalg.norm(team - centroid) <= e_max)


def _sa_block_py(
    pos,
    cur_obj,
    best_pos,
    best_obj,
    temp,
    radii,
    adj,
    d_s,
    d_mc,
    bmin,
    bmax,
    centroid,
    e_max,
    move_idx,
    steps,
    unifs,
):
    n_props = move_idx.shape[0]
    n = pos.shape[0]
    accepted = 0
    for p in range(n_props):
        i = move_idx[p]
        old0 = pos[i, 0]
        old1 = pos[i, 1]
        old2 = pos[i, 2]
        pos[i, 0] = old0 + steps[p, 0]
        pos[i, 1] = old1 + steps[p, 1]
        pos[i, 2] = old2 + steps[p, 2]
        ok = _feasible_py(pos, adj, d_s, d_mc, bmin, bmax, centroid, e_max)
        if ok:
            new_obj = _coverage_value_py(pos[:, :2], radii)
            delta = new_obj - cur_obj
            if delta >= 0.0 or unifs[p] < math.exp(delta / temp):
                cur_obj = new_obj
                accepted += 1
                if new_obj > best_obj:
                    best_obj = new_obj
                    for j in range(n):
                        best_pos[j, 0] = pos[j, 0]
                        best_pos[j, 1] = pos[j, 1]
                        best_pos[j, 2] = pos[j, 2]
                continue
        pos[i, 0] = old0
        pos[i, 1] = old1
        pos[i, 2] = old2
    return cur_obj, best_obj, accepted


def sa_block_np(
    pos,
    cur_obj,
    best_pos,
    best_obj,
    temp,
    radii,
    adj,
    d_s,
    d_mc,
    bmin,
    bmax,
    centroid,
    e_max,
    move_idx,
    steps,
    unifs,
):
    """Numpy fallback of the annealing block; same proposal semantics."""
    accepted = 0
    for p in range(move_idx.shape[0]):
        i = move_idx[p]
        old = pos[i].copy()
        pos[i] = old + steps[p]
        if feasible_np(pos, adj, d_s, d_mc, bmin, bmax, centroid, e_max):
            new_obj = coverage_value_np(pos[:, :2], radii)
            delta = new_obj - cur_obj
            if delta >= 0.0 or unifs[p] < math.exp(delta / temp):
                cur_obj = new_obj
                accepted += 1
                if new_obj > best_obj:
                    best_obj = new_obj
                    best_pos[:] = pos
                continue
        pos[i] = old
    return cur_obj, best_obj, accepted


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    merge_greedy_nb = njit(cache=True)(_merge_py)
    innovation_tables_nb = njit(cache=True)(_innovation_tables_py)
    gmf_cross_nb = njit(cache=True)(_gmf_cross_py)
    coverage_value_nb = njit(cache=True)(_coverage_value_py)
    _feasible_nb = njit(cache=True)(_feasible_py)
    feasible_nb = _feasible_nb

    @njit(cache=True)
    def sa_block_nb(
        pos,
        cur_obj,
        best_pos,
        best_obj,
        temp,
        radii,
        adj,
        d_s,
        d_mc,
        bmin,
        bmax,
        centroid,
        e_max,
        move_idx,
        steps,
        unifs,
    ):
        n_props = move_idx.shape[0]
        n = pos.shape[0]
        accepted = 0
        cur = cur_obj
        best = best_obj
        for p in range(n_props):
            i = move_idx[p]
            old0 = pos[i, 0]
            old1 = pos[i, 1]
            old2 = pos[i, 2]
            pos[i, 0] = old0 + steps[p, 0]
            pos[i, 1] = old1 + steps[p, 1]
            pos[i, 2] = old2 + steps[p, 2]
            ok = _feasible_nb(pos, adj, d_s, d_mc, bmin, bmax, centroid, e_max)
            moved = False
            if ok:
                new_obj = coverage_value_nb(pos[:, :2].copy(), radii)
                delta = new_obj - cur
                if delta >= 0.0 or unifs[p] < math.exp(delta / temp):
                    cur = new_obj
                    accepted += 1
                    moved = True
                    if new_obj > best:
                        best = new_obj
                        for j in range(n):
                            best_pos[j, 0] = pos[j, 0]
                            best_pos[j, 1] = pos[j, 1]
                            best_pos[j, 2] = pos[j, 2]
            if not moved:
                pos[i, 0] = old0
                pos[i, 1] = old1
                pos[i, 2] = old2
        return cur, best, accepted

    merge_greedy = merge_greedy_nb
    innovation_tables = innovation_tables_nb
    gmf_cross = gmf_cross_nb
    coverage_value = coverage_value_nb
    feasible = feasible_nb
    sa_block = sa_block_nb
else:
    merge_greedy = merge_greedy_np
    innovation_tables = innovation_tables_np
    gmf_cross = gmf_cross_np
    coverage_value = coverage_value_np
    feasible = feasible_np
    sa_block = sa_block_np
