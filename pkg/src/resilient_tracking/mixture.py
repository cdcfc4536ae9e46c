"""Gaussian-mixture intensity types and mixture-maintenance operations.

A mixture is stored in packed form (weights ``(k,)``, means ``(k, d)``,
covariances ``(k, d, d)``) so the hot operations can run on contiguous
arrays; ``GaussianComponent`` is the per-component view used at API
boundaries.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels

STATE_DIM = 4


class NotPositiveDefiniteError(ValueError):
    """A matrix that must be symmetric positive definite is not."""


@dataclass
class GaussianComponent:
    """One weighted Gaussian: an expected-target-count contribution with a
    state estimate [px, py, vx, vy] and its covariance."""

    weight: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.weight = float(self.weight)
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        d = self.mean.shape[0]
        self.cov = np.asarray(self.cov, dtype=float).reshape(d, d)

    def validate(self, sym_tol=1e-10):
        if self.weight < 0:
            raise ValueError(f"negative component weight {self.weight}")
        if np.max(np.abs(self.cov - self.cov.T)) > sym_tol:
            raise NotPositiveDefiniteError("covariance is not symmetric")
        try:
            np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(
                "covariance is not positive definite"
            ) from exc
        return self


class GaussianMixture:
    """Ordered collection of Gaussian components; may be empty."""

    __slots__ = ("weights", "means", "covs")

    def __init__(self, weights, means, covs):
        self.weights = np.asarray(weights, dtype=float).reshape(-1)
        k = self.weights.shape[0]
        means = np.asarray(means, dtype=float)
        if k == 0:
            d = means.shape[1] if means.ndim == 2 and means.shape[1] else STATE_DIM
            self.means = np.zeros((0, d))
            self.covs = np.zeros((0, d, d))
            return
        self.means = means.reshape(k, -1)
        d = self.means.shape[1]
        self.covs = np.asarray(covs, dtype=float).reshape(k, d, d)

    @classmethod
    def empty(cls, dim=STATE_DIM):
        return cls(np.zeros(0), np.zeros((0, dim)), np.zeros((0, dim, dim)))

    @classmethod
    def from_components(cls, components):
        comps = list(components)
        if not comps:
            return cls.empty()
        return cls(
            [c.weight for c in comps],
            np.stack([c.mean for c in comps]),
            np.stack([c.cov for c in comps]),
        )

    @property
    def dim(self):
        return self.means.shape[1]

    def __len__(self):
        return self.weights.shape[0]

    def __getitem__(self, i) -> GaussianComponent:
        return GaussianComponent(self.weights[i], self.means[i], self.covs[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def copy(self):
        return GaussianMixture(
            self.weights.copy(), self.means.copy(), self.covs.copy()
        )

    def validate(self, sym_tol=1e-10):
        for comp in self:
            comp.validate(sym_tol)
        return self


def expected_cardinality(m: GaussianMixture) -> float:
    """Expected number of targets represented by the mixture (weight sum)."""
    return float(m.weights.sum())


def prune(m: GaussianMixture, threshold: float) -> GaussianMixture:
    """Keep only components with weight >= threshold, preserving order."""
    if threshold < 0:
        raise ValueError("prune threshold must be nonnegative")
    keep = m.weights >= threshold
    return GaussianMixture(m.weights[keep], m.means[keep], m.covs[keep])


def mahalanobis_sq(a: GaussianComponent, b: GaussianComponent) -> float:
    """Squared Mahalanobis distance of a's mean from b, in b's metric.

    Asymmetric by convention: the second argument supplies the covariance.
    """
    delta = a.mean - b.mean
    try:
        chol = np.linalg.cholesky(b.cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            "second component's covariance is not positive definite"
        ) from exc
    y = np.linalg.solve(chol, delta)
    return float(y @ y)


def merge(m: GaussianMixture, dist_threshold: float) -> GaussianMixture:
    """Greedy moment-matching reduction.

    Repeatedly takes the highest-weight unmerged component and absorbs every
    component within ``dist_threshold`` Mahalanobis distance of it (measured
    in the absorbing component's covariance).  Total weight and first moment
    are preserved.
    """
    if dist_threshold < 0:
        raise ValueError("merge threshold must be nonnegative")
    if len(m) <= 1:
        return m.copy()
    w, mu, p = _kernels.merge_greedy(
        m.weights, m.means, m.covs, dist_threshold * dist_threshold
    )
    return GaussianMixture(w, mu, p)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def tgc_indices(m: GaussianMixture) -> np.ndarray:
    """Indices of the target-likely components under the rank rule: the
    round(expected cardinality) highest-weight components, ties by position."""
    count = min(len(m), _round_half_up(expected_cardinality(m)))
    if count <= 0:
        return np.zeros(0, dtype=int)
    order = np.argsort(-m.weights, kind="stable")[:count]
    return np.sort(order)


def select_tgcs(m: GaussianMixture) -> GaussianMixture:
    """Target-likely components selected by the rank rule, input order kept."""
    idx = tgc_indices(m)
    return GaussianMixture(m.weights[idx], m.means[idx], m.covs[idx])
