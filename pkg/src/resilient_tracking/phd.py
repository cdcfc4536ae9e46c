"""Per-tracker GM-PHD filter: prediction with survival and birth, innovation
with detection probability and uniform clutter over a disc field of view."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .mixture import GaussianMixture, NotPositiveDefiniteError


@dataclass
class MotionModel:
    """Linear target dynamics s' = F s + G u + w, w ~ N(0, Q)."""

    F: np.ndarray
    G: np.ndarray
    Q: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float)
        self.G = np.asarray(self.G, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        self.u = np.asarray(self.u, dtype=float).reshape(-1)

    @classmethod
    def constant_velocity(cls, dt=1.0, q=None):
        """Planar constant-velocity model on state [px, py, vx, vy]."""
        f = np.eye(4)
        f[0, 2] = dt
        f[1, 3] = dt
        if q is None:
            q = np.zeros((4, 4))
        return cls(F=f, G=np.zeros((4, 1)), Q=q, u=np.zeros(1))

    def validate(self):
        if np.max(np.abs(self.Q - self.Q.T)) > 1e-10:
            raise ValueError("process noise covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(self.Q) < -1e-12):
            raise ValueError("process noise covariance must be PSD")
        return self


@dataclass
class SensorModel:
    """Linear position sensor z = H s + v, v ~ N(0, R), with disc FOV.

    ``clutter_rate`` is the expected number of clutter returns per scan; the
    clutter intensity is uniform over the FOV disc.
    """

    H: np.ndarray
    R: np.ndarray
    p_detect: float
    fov_radius: float
    clutter_rate: float = 0.0

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.p_detect = float(self.p_detect)
        self.fov_radius = float(self.fov_radius)
        self.clutter_rate = float(self.clutter_rate)

    def validate(self):
        if not 0.0 <= self.p_detect <= 1.0:
            raise ValueError("p_detect must lie in [0, 1]")
        if self.fov_radius <= 0:
            raise ValueError("fov_radius must be positive")
        if self.clutter_rate < 0:
            raise ValueError("clutter_rate must be nonnegative")
        if np.max(np.abs(self.R - self.R.T)) > 1e-10:
            raise NotPositiveDefiniteError("R must be symmetric")
        try:
            np.linalg.cholesky(self.R)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("R must be positive definite") from exc
        return self

    @property
    def clutter_density(self) -> float:
        """Clutter intensity per unit area inside the FOV disc."""
        return self.clutter_rate / (math.pi * self.fov_radius**2)


@dataclass
class BirthModel:
    """Birth intensity appended at every prediction step."""

    components: GaussianMixture = field(default_factory=GaussianMixture.empty)

    @classmethod
    def empty(cls):
        return cls(GaussianMixture.empty())


def predict(
    m: GaussianMixture,
    motion: MotionModel,
    birth: BirthModel,
    p_survive: float,
) -> GaussianMixture:
    """GM-PHD prediction: survival-scaled propagation plus birth components.

    Survived components get weight p_survive * w, mean F mu + G u and
    covariance Q + F P F'; birth components are appended unchanged.
    """
    if not 0.0 <= p_survive <= 1.0:
        raise ValueError("p_survive must lie in [0, 1]")
    b = birth.components
    if len(m) == 0:
        return b.copy()
    shift = motion.G @ motion.u
    means = m.means @ motion.F.T + shift
    covs = motion.Q[None, :, :] + np.einsum(
        "ab,nbc,dc->nad", motion.F, m.covs, motion.F
    )
    covs = 0.5 * (covs + np.transpose(covs, (0, 2, 1)))
    weights = p_survive * m.weights
    if len(b) == 0:
        return GaussianMixture(weights, means, covs)
    return GaussianMixture(
        np.concatenate([weights, b.weights]),
        np.concatenate([means, b.means]),
        np.concatenate([covs, b.covs]),
    )


def innovate(
    m: GaussianMixture, measurements, sensor: SensorModel
) -> GaussianMixture:
    """GM-PHD innovation.

    Produces one missed-detection copy of the prior (weights scaled by
    1 - p_detect) plus one Kalman-updated component per (measurement,
    component) pair, with weights normalized against clutter intensity.
    """
    zs = np.asarray(measurements, dtype=float).reshape(-1, sensor.H.shape[0])
    if sensor.p_detect == 0.0 or len(m) == 0:
        # no information: the posterior intensity is the prior
        return m.copy()
    p_d = sensor.p_detect
    miss = GaussianMixture((1.0 - p_d) * m.weights, m.means, m.covs)
    if zs.shape[0] == 0:
        return miss
    like, post_means, post_covs, s_det = _kernels.innovation_tables(
        m.means, m.covs, sensor.H, sensor.R, zs
    )
    if np.any(s_det <= 0.0) or not np.all(np.isfinite(s_det)):
        raise NotPositiveDefiniteError(
            "innovation covariance is numerically singular"
        )
    c = sensor.clutter_density
    num = p_d * like * m.weights[None, :]
    denom = c + num.sum(axis=1)
    det_w = (num / denom[:, None]).reshape(-1)
    nz = zs.shape[0]
    det_means = post_means.reshape(nz * len(m), m.dim)
    det_covs = np.broadcast_to(
        post_covs[None, :, :, :], (nz, len(m), m.dim, m.dim)
    ).reshape(nz * len(m), m.dim, m.dim)
    return GaussianMixture(
        np.concatenate([miss.weights, det_w]),
        np.concatenate([miss.means, det_means]),
        np.concatenate([miss.covs, det_covs]),
    )
