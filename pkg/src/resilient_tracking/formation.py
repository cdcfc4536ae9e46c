"""Embed a team configuration in 3D space.

Maximizes the team's non-overlapping ground-plane coverage subject to
communication-range, collision, bounding-box and centroid-proximity
constraints, using a feasibility-preserving simulated-annealing chain.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .network import TeamConfiguration


class InfeasibleFormationError(RuntimeError):
    """No feasible placement was found; carries the best attempt."""

    def __init__(self, message, best_positions=None, violations=None):
        super().__init__(message)
        self.best_positions = best_positions
        self.violations = violations or []


@dataclass
class FormationProblem:
    config: TeamConfiguration
    fov_radii: np.ndarray
    d_s: float
    d_mc: float
    box_min: np.ndarray
    box_max: np.ndarray
    target_centroid: np.ndarray
    max_centroid_dist: float
    initial_positions: np.ndarray

    def __post_init__(self):
        n = self.config.n
        self.fov_radii = np.broadcast_to(
            np.asarray(self.fov_radii, dtype=float), (n,)
        ).copy()
        self.box_min = np.asarray(self.box_min, dtype=float).reshape(3)
        self.box_max = np.asarray(self.box_max, dtype=float).reshape(3)
        self.target_centroid = np.asarray(
            self.target_centroid, dtype=float
        ).reshape(2)
        self.initial_positions = np.asarray(
            self.initial_positions, dtype=float
        ).reshape(n, 3)

    def validate(self):
        if not self.d_s < self.d_mc:
            raise ValueError("separation distance must be below comm range")
        if np.any(self.box_min >= self.box_max):
            raise ValueError("box_min must be elementwise below box_max")
        if self.max_centroid_dist <= 0:
            raise ValueError("max centroid distance must be positive")
        return self

    @property
    def adjacency(self):
        adj = self.config.pi.astype(np.uint8).copy()
        np.fill_diagonal(adj, 0)
        return adj


@dataclass
class AnnealingSchedule:
    """Geometric cooling with per-robot Gaussian moves of annealed scale."""

    t_initial: float = 100.0
    t_final: float = 1e-2
    cooling: float = 0.97
    proposals_per_temp: int = 200
    sigma_initial: float = 5.0
    sigma_final: float = 0.1

    def temperatures(self):
        temps = []
        t = self.t_initial
        while t > self.t_final:
            temps.append(t)
            t *= self.cooling
        return temps


def coverage_objective(positions, prob: FormationProblem) -> float:
    """Non-overlapping coverage surrogate on the ground plane.

    pi * sum_i (r_i^2 - sum_{j != i} max(0, 2 r_i - ||Xi - Xj||)^2 / 2); the
    overlap penalty is clamped at zero once discs no longer intersect.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    return float(
        _kernels.coverage_value(
            np.ascontiguousarray(pos[:, :2]), prob.fov_radii
        )
    )


def feasible(positions, prob: FormationProblem) -> bool:
    """All constraints: connected pairs within [d_s, d_mc], every pair at
    least d_s apart, positions inside the box, team ground-plane centroid
    within the allowed distance of the target centroid."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    return bool(
        _kernels.feasible(
            pos,
            prob.adjacency,
            prob.d_s,
            prob.d_mc,
            prob.box_min,
            prob.box_max,
            prob.target_centroid,
            prob.max_centroid_dist,
        )
    )


def constraint_violations(positions, prob: FormationProblem):
    """Human-readable list of violated constraints (for error reports)."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    out = []
    n = pos.shape[0]
    if np.any(pos < prob.box_min) or np.any(pos > prob.box_max):
        out.append("position outside bounding box")
    adj = prob.adjacency
    for i in range(n):
        for j in range(i + 1, n):
            dist = float(np.linalg.norm(pos[i] - pos[j]))
            if dist < prob.d_s:
                out.append(f"pair ({i},{j}) closer than d_s: {dist:.3f}")
            if adj[i, j] and dist > prob.d_mc:
                out.append(f"edge ({i},{j}) beyond comm range: {dist:.3f}")
    team = pos[:, :2].mean(axis=0)
    offset = float(np.linalg.norm(team - prob.target_centroid))
    if offset > prob.max_centroid_dist:
        out.append(f"team centroid {offset:.3f} from target")
    return out


def _repair(positions, prob: FormationProblem, iterations=400):
    """Iteratively project pairwise/box/centroid violations toward feasibility."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 3).copy()
    n = pos.shape[0]
    adj = prob.adjacency
    margin = 1e-3
    for _ in range(iterations):
        pos = np.clip(pos, prob.box_min, prob.box_max)
        team = pos[:, :2].mean(axis=0)
        offset = team - prob.target_centroid
        dist = np.linalg.norm(offset)
        if dist > prob.max_centroid_dist:
            shift = offset * (1.0 - (prob.max_centroid_dist - margin) / dist)
            pos[:, :2] -= shift
        moved = False
        for i in range(n):
            for j in range(i + 1, n):
                delta = pos[i] - pos[j]
                dist = np.linalg.norm(delta)
                if dist < 1e-9:
                    delta = np.array([1.0, 0.0, 0.0])
                    dist = 1e-9
                direction = delta / dist
                if dist < prob.d_s:
                    push = 0.5 * (prob.d_s + margin - dist)
                    pos[i] += push * direction
                    pos[j] -= push * direction
                    moved = True
                elif adj[i, j] and dist > prob.d_mc:
                    pull = 0.5 * (dist - prob.d_mc + margin)
                    pos[i] -= pull * direction
                    pos[j] += pull * direction
                    moved = True
        if not moved and feasible(pos, prob):
            return pos
    if feasible(pos, prob):
        return pos
    raise InfeasibleFormationError(
        "could not repair the starting layout into feasibility",
        best_positions=pos,
        violations=constraint_violations(pos, prob),
    )


def synthesize(
    prob: FormationProblem,
    schedule: AnnealingSchedule = None,
    seed: int = 0,
) -> np.ndarray:
    """Anneal a feasible placement that maximizes the coverage objective.

    Starts from the problem's initial positions (repaired into feasibility if
    needed); infeasible proposals are rejected outright, so every visited
    state is feasible.  Deterministic for a fixed seed.  Returns the best
    positions found (never worse than the starting point).
    """
    prob.validate()
    schedule = schedule or AnnealingSchedule()
    rng = np.random.default_rng(seed)
    if feasible(prob.initial_positions, prob):
        pos = prob.initial_positions.copy()
    else:
        pos = _repair(prob.initial_positions, prob)
    n = prob.config.n
    adj = prob.adjacency
    cur = coverage_objective(pos, prob)
    best_pos = pos.copy()
    best = cur
    temps = schedule.temperatures()
    n_temps = max(len(temps), 1)
    decay = (schedule.sigma_final / schedule.sigma_initial) ** (
        1.0 / max(n_temps - 1, 1)
    )
    sigma = schedule.sigma_initial
    k = schedule.proposals_per_temp
    for temp in temps:
        idx = rng.integers(0, n, size=k)
        steps = rng.normal(scale=sigma, size=(k, 3))
        unifs = rng.random(k)
        cur, best, _ = _kernels.sa_block(
            pos,
            cur,
            best_pos,
            best,
            temp,
            prob.fov_radii,
            adj,
            prob.d_s,
            prob.d_mc,
            prob.box_min,
            prob.box_max,
            prob.target_centroid,
            prob.max_centroid_dist,
            idx,
            steps,
            unifs,
        )
        sigma = max(sigma * decay, schedule.sigma_final)
    return best_pos
