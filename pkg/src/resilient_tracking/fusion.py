"""PHD fusion over target-likely components.

Implements geometric-mean (covariance-intersection style) and arithmetic-mean
fusion of Gaussian-mixture intensities, Gaussian-mixture reduction for the
arithmetic rule, cardinality consensus over a doubly stochastic weight
matrix, and the synchronous per-neighborhood fusion round used by the team.
"""

import math

import numpy as np

from . import _kernels
from .mixture import (
    GaussianComponent,
    GaussianMixture,
    NotPositiveDefiniteError,
    expected_cardinality,
    mahalanobis_sq,
    merge,
    tgc_indices,
)

_LOG_2PI = math.log(2.0 * math.pi)

# hard cap on the cross-product tuple count; geometric-mean fusion grows
# exponentially with neighborhood size and must be pruned upstream
MAX_CROSS_PRODUCT = 2_000_000


class FusionWeights:
    """Normalized nonnegative fusion weights, one per participating tracker."""

    __slots__ = ("values",)

    def __init__(self, values, *, tol=1e-9):
        self.values = np.asarray(values, dtype=float).reshape(-1)
        if np.any(self.values < 0):
            raise ValueError("fusion weights must be nonnegative")
        if self.values.size and abs(self.values.sum() - 1.0) > tol:
            raise ValueError(
                f"fusion weights must sum to 1, got {self.values.sum()!r}"
            )

    def __len__(self):
        return self.values.size

    def __iter__(self):
        return iter(self.values)


def _as_weights(w) -> np.ndarray:
    if isinstance(w, FusionWeights):
        return w.values
    return FusionWeights(w).values


def _information(cov: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            "covariance is not positive definite"
        ) from exc
    inv_chol = np.linalg.inv(chol)
    return inv_chol.T @ inv_chol


def _gmf_pre_term(weight, j_mat, mu, omega, d):
    """Per-participant additive term of the fused log-weight."""
    sign, logdet_j = np.linalg.slogdet(j_mat)
    quad = mu @ j_mat @ mu
    log_sqrt = 0.5 * (
        d * math.log(2.0 * math.pi / omega)
        - logdet_j
        - omega * (d * _LOG_2PI - logdet_j)
    )
    log_k_tilde = -0.5 * (d * _LOG_2PI - d * math.log(omega) - logdet_j + omega * quad)
    return omega * math.log(weight) + log_sqrt + log_k_tilde


def gmf_component_product(parts) -> GaussianComponent:
    """Weighted geometric-mean product of single Gaussian components.

    ``parts`` is a sequence of (GaussianComponent, omega) with positive
    omegas summing to one.  The fused information matrix is the omega-weighted
    sum of the input information matrices; the fused weight follows the
    exponential-mixture normalization constant, evaluated in log space.
    """
    parts = list(parts)
    if not parts:
        raise ValueError("at least one component is required")
    omegas = np.array([float(w) for _, w in parts])
    if np.any(omegas <= 0):
        raise ValueError("zero-weight participants must be dropped by the caller")
    if abs(omegas.sum() - 1.0) > 1e-9:
        raise ValueError("participant weights must sum to 1")
    d = parts[0][0].mean.shape[0]
    omega_mat = np.zeros((d, d))
    q = np.zeros(d)
    s_sum = 0.0
    for comp, om in parts:
        j = _information(comp.cov)
        omega_mat += om * j
        q += om * (j @ comp.mean)
        s_sum += _gmf_pre_term(comp.weight, j, comp.mean, om, d)
    p_f = np.linalg.inv(omega_mat)
    p_f = 0.5 * (p_f + p_f.T)
    mu_f = p_f @ q
    _, logdet = np.linalg.slogdet(omega_mat)
    log_alpha = s_sum + 0.5 * (d * _LOG_2PI - logdet + q @ mu_f)
    return GaussianComponent(math.exp(log_alpha), mu_f, p_f)


def gmf_fuse(mixtures, w, prune_threshold: float) -> GaussianMixture:
    """Geometric-mean fusion of full mixtures via the component cross product.

    Every tuple drawing one component from each mixture is fused with
    :func:`gmf_component_product`; fused components below ``prune_threshold``
    are dropped.
    """
    mixtures = list(mixtures)
    omegas = _as_weights(w)
    if len(mixtures) == 0:
        raise ValueError("at least one mixture is required")
    if omegas.size != len(mixtures):
        raise ValueError("one weight per mixture is required")
    if np.any(omegas <= 0):
        raise ValueError("zero-weight participants must be dropped by the caller")
    d = mixtures[0].dim
    counts = [len(m) for m in mixtures]
    if any(c == 0 for c in counts):
        return GaussianMixture.empty(d)
    total = 1
    for c in counts:
        total *= c
    if total > MAX_CROSS_PRODUCT:
        raise ValueError(
            f"cross product of {counts} components is too large ({total})"
        )
    n_comp = sum(counts)
    j_mats = np.empty((n_comp, d, d))
    j_mus = np.empty((n_comp, d))
    pre = np.empty(n_comp)
    offsets = np.zeros(len(mixtures) + 1, dtype=np.int64)
    k = 0
    for j, mix in enumerate(mixtures):
        if np.any(mix.weights <= 0):
            raise ValueError("geometric-mean fusion requires positive weights")
        for i in range(len(mix)):
            jm = _information(mix.covs[i])
            j_mats[k] = jm
            j_mus[k] = jm @ mix.means[i]
            pre[k] = _gmf_pre_term(
                mix.weights[i], jm, mix.means[i], omegas[j], d
            )
            k += 1
        offsets[j + 1] = k
    log_prune = math.log(prune_threshold) if prune_threshold > 0 else -np.inf
    w_out, m_out, p_out = _kernels.gmf_cross(
        j_mats, j_mus, pre, offsets, omegas, log_prune
    )
    return GaussianMixture(w_out, m_out, p_out)


def amf_fuse(mixtures, w) -> GaussianMixture:
    """Arithmetic-mean fusion: concatenation with weights scaled by omega."""
    mixtures = list(mixtures)
    omegas = _as_weights(w)
    if omegas.size != len(mixtures):
        raise ValueError("one weight per mixture is required")
    if not mixtures:
        raise ValueError("at least one mixture is required")
    d = mixtures[0].dim
    weights = [om * mix.weights for om, mix in zip(omegas, mixtures)]
    means = [mix.means for mix in mixtures]
    covs = [mix.covs for mix in mixtures]
    return GaussianMixture(
        np.concatenate(weights) if weights else np.zeros(0),
        np.concatenate(means) if means else np.zeros((0, d)),
        np.concatenate(covs) if covs else np.zeros((0, d, d)),
    )


def gmr_reduce(group) -> GaussianComponent:
    """Collapse same-target components into one Gaussian.

    ``group`` is a sequence of (GaussianComponent, omega) with omegas summing
    to one.  Weight is the plain sum, mean the weight-normalized average, and
    covariance the omega-weighted average.
    """
    group = list(group)
    if not group:
        raise ValueError("group must be non-empty")
    omegas = np.array([float(om) for _, om in group])
    if abs(omegas.sum() - 1.0) > 1e-9:
        raise ValueError("group weights must sum to 1")
    alphas = np.array([c.weight for c, _ in group])
    alpha = float(alphas.sum())
    if alpha > 0:
        mu = sum(c.weight * c.mean for c, _ in group) / alpha
    else:
        mu = group[0][0].mean.copy()
    cov = sum(om * c.cov for c, om in group)
    return GaussianComponent(alpha, mu, cov)


def consensus_step(estimates, A, *, tol=1e-9) -> np.ndarray:
    """One synchronous averaging step x <- A x with A doubly stochastic."""
    a = np.asarray(A, dtype=float)
    x = np.asarray(estimates, dtype=float).reshape(-1)
    n = x.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix/vector size mismatch")
    if np.any(a < -tol):
        raise ValueError("consensus matrix must be nonnegative")
    if np.max(np.abs(a.sum(axis=0) - 1.0)) > tol or np.max(
        np.abs(a.sum(axis=1) - 1.0)
    ) > tol:
        raise ValueError("consensus matrix must be doubly stochastic")
    return a @ x


def rescale_to_cardinality(m: GaussianMixture, target: float) -> GaussianMixture:
    """Scale all weights so they sum to ``target``; relative weights kept."""
    if target < 0:
        raise ValueError("target cardinality must be nonnegative")
    mass = expected_cardinality(m)
    if target == 0.0:
        return GaussianMixture(np.zeros(len(m)), m.means, m.covs)
    if mass <= 0.0:
        raise ValueError("cannot rescale a zero-mass mixture to positive target")
    return GaussianMixture(m.weights * (target / mass), m.means, m.covs)


def _amf_reduce(fused: GaussianMixture, source_omegas, dist_threshold):
    """Group same-target components of an arithmetic-mean fusion and reduce
    each group to a single Gaussian.

    Association is the same greedy Mahalanobis clustering used by mixture
    merging; each group's omegas are the source-mixture fusion weights,
    renormalized within the group.
    """
    if len(fused) == 0:
        return fused
    thr_sq = dist_threshold * dist_threshold
    active = np.ones(len(fused), dtype=bool)
    out = []
    while active.any():
        idx = np.flatnonzero(active)
        j = idx[np.argmax(fused.weights[idx])]
        absorber = fused[j]
        members = []
        for i in idx:
            if mahalanobis_sq(fused[i], absorber) <= thr_sq:
                members.append(i)
                active[i] = False
        oms = np.array([source_omegas[i] for i in members])
        total = oms.sum()
        if total <= 0:
            oms = np.full(len(members), 1.0 / len(members))
        else:
            oms = oms / total
        out.append(
            gmr_reduce([(fused[i], om) for i, om in zip(members, oms)])
        )
    return GaussianMixture.from_components(out)


def fusion_round(
    mixtures,
    estimates,
    config,
    rule: str,
    steps: int,
    *,
    merge_threshold: float = 0.2,
    prune_threshold: float = 1e-6,
    merge_before_select: bool = True,
):
    """Run ``steps`` synchronous fusion/consensus sub-steps over the team.

    Per sub-step every tracker (lock-step, reading the previous state):
    merges its mixture, selects target-likely components, fuses them with its
    neighbors' selections using its row of the fusion-weight matrix, then the
    cardinality estimates take one consensus step and each mixture is
    rescaled to its tracker's estimate.  Non-selected components are kept
    alongside the fused ones.

    Returns (mixtures, estimates).
    """
    if rule not in ("gmf", "amf"):
        raise ValueError(f"unknown fusion rule {rule!r}")
    if steps < 1:
        raise ValueError("at least one consensus step is required")
    if not config.is_connected():
        raise ValueError("fusion requires a connected configuration")
    n = config.n
    mixes = [m.copy() for m in mixtures]
    if len(mixes) != n:
        raise ValueError("one mixture per tracker is required")
    est = np.asarray(estimates, dtype=float).reshape(-1).copy()
    abar = config.abar
    for _ in range(steps):
        prepared = []
        tgcs = []
        for m in mixes:
            base = merge(m, merge_threshold) if merge_before_select else m
            idx = tgc_indices(base)
            rest = np.setdiff1d(np.arange(len(base)), idx, assume_unique=True)
            prepared.append(
                (
                    GaussianMixture(
                        base.weights[idx], base.means[idx], base.covs[idx]
                    ),
                    GaussianMixture(
                        base.weights[rest], base.means[rest], base.covs[rest]
                    ),
                )
            )
            tgcs.append(prepared[-1][0])
        new_mixes = []
        for i in range(n):
            support = np.flatnonzero(abar[i] > 0)
            row = abar[i, support]
            assert abs(row.sum() - 1.0) <= 1e-9, "weight row must sum to 1"
            live = [j for j in support if len(tgcs[j]) > 0]
            if not live:
                new_mixes.append(mixes[i])
                continue
            omegas = np.array([abar[i, j] for j in live])
            omegas = omegas / omegas.sum()
            if rule == "gmf":
                fused = gmf_fuse(
                    [tgcs[j] for j in live], omegas, prune_threshold
                )
            else:
                stacked = amf_fuse([tgcs[j] for j in live], omegas)
                source = np.concatenate(
                    [np.full(len(tgcs[j]), om) for j, om in zip(live, omegas)]
                )
                fused = _amf_reduce(stacked, source, merge_threshold)
            remainder = prepared[i][1]
            combined = GaussianMixture(
                np.concatenate([fused.weights, remainder.weights]),
                np.concatenate([fused.means, remainder.means]),
                np.concatenate([fused.covs, remainder.covs]),
            )
            if len(combined) == 0:
                combined = mixes[i]
            new_mixes.append(combined)
        est = consensus_step(est, abar)
        rescaled = []
        for i in range(n):
            mass = expected_cardinality(new_mixes[i])
            if mass > 0 and est[i] > 0:
                rescaled.append(rescale_to_cardinality(new_mixes[i], est[i]))
            else:
                rescaled.append(new_mixes[i])
        mixes = rescaled
    return mixes, est
