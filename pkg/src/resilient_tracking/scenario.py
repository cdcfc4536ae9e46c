"""Ground-truth world simulation and the per-epoch experiment loop.

Targets are born near the domain corners by a Poisson process, cross the
domain in straight lines and disappear at the boundary.  Each simulated
tracker runs a local GM-PHD filter on FOV-gated measurements, the team fuses
target-likely components every epoch, and on a fixed fault schedule a random
tracker's sensor deteriorates and the team recomputes its communication
topology, fusion weights and spatial formation.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag
from scipy.stats import chi2

from .formation import AnnealingSchedule, FormationProblem, synthesize
from .fusion import fusion_round
from .metrics import ospa
from .mixture import GaussianMixture, expected_cardinality, merge, prune, select_tgcs
from .network import StrategyInput, TeamConfiguration, generate_configuration
from .phd import BirthModel, MotionModel, SensorModel, innovate, predict

BIRTH_COV_DIAG = (100.0, 100.0, 25.0, 25.0)


@dataclass
class TargetTruth:
    state: np.ndarray
    birth_epoch: int
    alive: bool = True

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float).reshape(4)

    @property
    def position(self):
        return self.state[:2]


@dataclass
class ScenarioConfig:
    """Every knob of a single simulated trial."""

    n: int = 5
    epochs: int = 100
    seed: int = 0
    strategy: str = "none"
    fusion_rule: str = "gmf"
    # truth process
    birth_rate: float = 1.0
    birth_radius: float = 20.0
    target_speed: float = 5.0
    domain_min: tuple = (-50.0, -50.0)
    domain_max: tuple = (50.0, 50.0)
    # local filters
    p_survive: float = 0.98
    p_detect: float = 0.95
    clutter_rate: float = 2.0
    measurement_noise: float = 1.0
    process_noise: tuple = (0.0025, 0.0025, 0.01, 0.01)
    birth_weight: float = 0.25
    prune_threshold: float = 1e-6
    merge_distance: float = 0.2
    max_components: int = 200
    # fusion / consensus
    consensus_steps: int = 0  # 0 means ceil(n / 2)
    # reconfiguration
    edge_budget: int = 1
    fault_period: int = 20
    # formation
    d_s: float = 10.0
    d_mc: float = 25.0
    d_sen: float = 20.0
    max_centroid_dist: float = 60.0
    box_min: tuple = (-50.0, -50.0, 0.0)
    box_max: tuple = (50.0, 100.0, 100.0)
    # metrics
    ospa_cutoff: float = 5.0
    ospa_order: float = 1.0

    MISDP_STRATEGIES = ("rcgmc", "tcgmc", "rcamc", "tcamc")
    BASELINE_STRATEGIES = ("none", "random", "greedy")

    @property
    def consensus_count(self) -> int:
        if self.consensus_steps > 0:
            return self.consensus_steps
        return math.ceil(self.n / 2)

    def validate(self):
        if self.n < 1:
            raise ValueError("team size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        for p in (self.p_survive, self.p_detect):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.strategy not in self.MISDP_STRATEGIES + self.BASELINE_STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.fusion_rule not in ("gmf", "amf"):
            raise ValueError(f"unknown fusion rule {self.fusion_rule!r}")
        if self.strategy in self.MISDP_STRATEGIES:
            expected = "gmf" if self.strategy.endswith("gmc") else "amf"
            if self.fusion_rule != expected:
                raise ValueError(
                    f"strategy {self.strategy} runs under the {expected} rule"
                )
        if not self.d_s < self.d_mc:
            raise ValueError("d_s must be below d_mc")
        return self


@dataclass
class Tracker:
    index: int
    position: np.ndarray
    sensor: SensorModel
    mixture: GaussianMixture = field(default_factory=GaussianMixture.empty)
    estimate: float = 0.0


@dataclass
class TrialLog:
    """Per-epoch records plus configuration events for one trial."""

    config: ScenarioConfig
    columns: list
    rows: list
    events: list

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    def events_to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.events, fh, sort_keys=True, indent=1)
            fh.write("\n")

    def column(self, name):
        i = self.columns.index(name)
        return np.array([row[i] for row in self.rows], dtype=float)


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _corners(cfg: ScenarioConfig):
    x0, y0 = cfg.domain_min
    x1, y1 = cfg.domain_max
    return np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]])


def _opposite(corner_idx: int) -> int:
    return 3 - corner_idx


def make_motion(cfg: ScenarioConfig) -> MotionModel:
    return MotionModel.constant_velocity(dt=1.0, q=np.diag(cfg.process_noise))


def make_birth_model(cfg: ScenarioConfig) -> BirthModel:
    corners = _corners(cfg)
    means = []
    for i, corner in enumerate(corners):
        heading = corners[_opposite(i)] - corner
        heading = heading / np.linalg.norm(heading)
        means.append(np.concatenate([corner, cfg.target_speed * heading]))
    k = len(corners)
    return BirthModel(
        GaussianMixture(
            np.full(k, cfg.birth_weight),
            np.stack(means),
            np.broadcast_to(np.diag(BIRTH_COV_DIAG), (k, 4, 4)).copy(),
        )
    )


def _birth_sigma(cfg: ScenarioConfig) -> float:
    # about 95% of newborn positions fall within birth_radius of the corner
    return cfg.birth_radius / math.sqrt(chi2.ppf(0.95, df=2))


def step_targets(targets, cfg: ScenarioConfig, motion: MotionModel, rng, epoch):
    """Advance the truth one epoch: straight-line motion, boundary removal,
    then Poisson corner births aimed at the opposite corner."""
    lo, hi = np.asarray(cfg.domain_min), np.asarray(cfg.domain_max)
    survivors = []
    for t in targets:
        t.state = motion.F @ t.state
        if np.all(t.position >= lo) and np.all(t.position <= hi):
            survivors.append(t)
        else:
            t.alive = False
    corners = _corners(cfg)
    sigma = _birth_sigma(cfg)
    n_births = rng.poisson(cfg.birth_rate)
    for _ in range(n_births):
        c = int(rng.integers(len(corners)))
        pos = corners[c] + sigma * rng.standard_normal(2)
        heading = corners[_opposite(c)] - pos
        norm = np.linalg.norm(heading)
        if norm < 1e-9:
            heading, norm = np.array([1.0, 0.0]), 1.0
        vel = cfg.target_speed * heading / norm
        survivors.append(TargetTruth(np.concatenate([pos, vel]), epoch))
    return survivors


def sense(tracker: Tracker, targets, rng):
    """FOV-gated measurements: at most one noisy return per in-FOV target
    (with the sensor's detection probability) plus uniform disc clutter."""
    sensor = tracker.sensor
    chol = np.linalg.cholesky(sensor.R)
    center = tracker.position[:2]
    out = []
    for t in targets:
        if np.linalg.norm(t.position - center) > sensor.fov_radius:
            continue
        if rng.random() < sensor.p_detect:
            z = sensor.H @ t.state + chol @ rng.standard_normal(2)
            out.append(z)
    for _ in range(rng.poisson(sensor.clutter_rate)):
        radius = sensor.fov_radius * math.sqrt(rng.random())
        angle = 2.0 * math.pi * rng.random()
        out.append(
            center + radius * np.array([math.cos(angle), math.sin(angle)])
        )
    return out


def deteriorate(tracker: Tracker, rng) -> Tracker:
    """Add a random positive definite matrix to the sensor noise covariance;
    the trace strictly increases and the filter sees the new R immediately."""
    b = rng.standard_normal((2, 2))
    bump = b @ b.T + 0.1 * np.eye(2)
    tracker.sensor.R = tracker.sensor.R + bump
    return tracker


def _cap(m: GaussianMixture, max_components: int) -> GaussianMixture:
    if len(m) <= max_components:
        return m
    keep = np.sort(np.argsort(-m.weights, kind="stable")[:max_components])
    return GaussianMixture(m.weights[keep], m.means[keep], m.covs[keep])


def initial_positions(cfg: ScenarioConfig) -> np.ndarray:
    """Deterministic serpentine layout with neighbor spacing inside
    [d_s, d_mc], used to realize the initial line graph."""
    spacing = 0.5 * (cfg.d_s + cfg.d_mc)
    margin = 5.0
    x_lo, x_hi = cfg.box_min[0] + margin, cfg.box_max[0] - margin
    y_lo = cfg.box_min[1] + margin
    per_row = max(int((x_hi - x_lo) // spacing) + 1, 1)
    z = 0.5 * (cfg.box_min[2] + cfg.box_max[2])
    pos = np.empty((cfg.n, 3))
    for i in range(cfg.n):
        row, col = divmod(i, per_row)
        if row % 2 == 1:
            col = per_row - 1 - col
        pos[i] = (x_lo + col * spacing, y_lo + row * spacing, z)
    return pos


def make_trackers(cfg: ScenarioConfig):
    h = np.zeros((2, 4))
    h[0, 0] = h[1, 1] = 1.0
    positions = initial_positions(cfg)
    trackers = []
    for i in range(cfg.n):
        sensor = SensorModel(
            H=h.copy(),
            R=cfg.measurement_noise * np.eye(2),
            p_detect=cfg.p_detect,
            fov_radius=cfg.d_sen,
            clutter_rate=cfg.clutter_rate,
        ).validate()
        trackers.append(Tracker(i, positions[i].copy(), sensor))
    return trackers


def _strategy_input(trackers, config, failed, cfg: ScenarioConfig):
    alpha = max(
        1, min(int(math.ceil(max(t.estimate, 0.0))) for t in trackers)
    )
    pad = np.diag(BIRTH_COV_DIAG)
    blocks = []
    for t in trackers:
        order = np.argsort(-t.mixture.weights, kind="stable")[:alpha]
        covs = [t.mixture.covs[i] for i in order]
        while len(covs) < alpha:
            covs.append(pad)
        blocks.append(block_diag(*covs))
    return StrategyInput(
        failed_tracker=failed,
        blk_covs=blocks,
        alpha=alpha,
        previous=config,
        edge_budget=cfg.edge_budget,
    )


def _target_centroid(trackers, failed):
    tgcs = select_tgcs(trackers[failed].mixture)
    mass = expected_cardinality(tgcs)
    if len(tgcs) and mass > 0:
        return (tgcs.weights[:, None] * tgcs.means[:, :2]).sum(axis=0) / mass
    positions = np.stack([t.position[:2] for t in trackers])
    return positions.mean(axis=0)


def run_trial(cfg: ScenarioConfig, schedule: AnnealingSchedule = None) -> TrialLog:
    """Run one full trial; fully deterministic for a fixed config and seed.

    Configuration and formation failures are logged as events and the trial
    continues under the previous configuration.
    """
    cfg.validate()
    world_ss, fault_ss, sa_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    world_rng = np.random.default_rng(world_ss)
    fault_rng = np.random.default_rng(fault_ss)
    sa_rng = np.random.default_rng(sa_ss)
    motion = make_motion(cfg)
    birth = make_birth_model(cfg)
    trackers = make_trackers(cfg)
    config = TeamConfiguration.line_graph(cfg.n) if cfg.n > 1 else (
        TeamConfiguration(1, np.ones((1, 1), dtype=np.int8), np.ones((1, 1)))
    )
    targets = []
    columns = (
        ["epoch", "n_true", "est_mean", "ospa_mean", "edge_count",
         "edge_density", "fault", "failed_tracker"]
        + [f"est_{i}" for i in range(cfg.n)]
        + [f"ospa_{i}" for i in range(cfg.n)]
    )
    rows = []
    events = []
    for epoch in range(1, cfg.epochs + 1):
        targets = step_targets(targets, cfg, motion, world_rng, epoch)
        scans = [sense(t, targets, world_rng) for t in trackers]
        for t, zs in zip(trackers, scans):
            m = predict(t.mixture, motion, birth, cfg.p_survive)
            m = innovate(m, zs, t.sensor)
            m = prune(m, cfg.prune_threshold)
            m = merge(m, cfg.merge_distance)
            t.mixture = _cap(m, cfg.max_components)
        start_est = [
            math.ceil(expected_cardinality(t.mixture)) for t in trackers
        ]
        mixes, est = fusion_round(
            [t.mixture for t in trackers],
            start_est,
            config,
            cfg.fusion_rule,
            cfg.consensus_count,
            merge_threshold=cfg.merge_distance,
            prune_threshold=cfg.prune_threshold,
        )
        for t, m, e in zip(trackers, mixes, est):
            t.mixture = _cap(m, cfg.max_components)
            t.estimate = float(e)
        truth_pts = (
            np.stack([t.position for t in targets])
            if targets
            else np.zeros((0, 2))
        )
        ospa_each = [
            ospa(
                truth_pts,
                select_tgcs(t.mixture).means[:, :2],
                cfg.ospa_cutoff,
                cfg.ospa_order,
            )
            for t in trackers
        ]
        # the logged topology is the one in effect during this epoch; a fault
        # at the end of the epoch only affects the next one
        edge_count = config.edge_count
        edge_density = config.edge_density
        fault_now = cfg.fault_period > 0 and epoch % cfg.fault_period == 0
        failed = -1
        if fault_now:
            failed = int(fault_rng.integers(cfg.n))
            deteriorate(trackers[failed], fault_rng)
            sa_seed = int(sa_rng.integers(2**63 - 1))
            event = {
                "epoch": epoch,
                "failed_tracker": failed,
                "strategy": cfg.strategy,
                "old_edges": [list(e) for e in config.edges()],
            }
            try:
                inp = _strategy_input(trackers, config, failed, cfg)
                new_config = generate_configuration(
                    cfg.strategy,
                    inp,
                    fusion_rule=cfg.fusion_rule,
                    rng=fault_rng,
                )
                centroid = _target_centroid(trackers, failed)
                prob = FormationProblem(
                    config=new_config,
                    fov_radii=np.full(cfg.n, cfg.d_sen),
                    d_s=cfg.d_s,
                    d_mc=cfg.d_mc,
                    box_min=np.asarray(cfg.box_min),
                    box_max=np.asarray(cfg.box_max),
                    target_centroid=centroid,
                    max_centroid_dist=cfg.max_centroid_dist,
                    initial_positions=np.stack(
                        [t.position for t in trackers]
                    ),
                )
                new_positions = synthesize(prob, schedule, seed=sa_seed)
                config = new_config
                for t, p in zip(trackers, new_positions):
                    t.position = p.copy()
                event.update(
                    {
                        "success": True,
                        "new_edges": [list(e) for e in config.edges()],
                        "positions": [list(map(float, p)) for p in new_positions],
                        "target_centroid": [float(c) for c in centroid],
                    }
                )
            except Exception as exc:  # trial survives a failed reconfiguration
                event.update({"success": False, "error": str(exc)})
            events.append(event)
        est_vals = [t.estimate for t in trackers]
        rows.append(
            [
                epoch,
                len(targets),
                float(np.mean(est_vals)) if est_vals else 0.0,
                float(np.mean(ospa_each)) if ospa_each else 0.0,
                edge_count,
                edge_density,
                int(fault_now),
                failed,
            ]
            + [float(v) for v in est_vals]
            + [float(v) for v in ospa_each]
        )
    return TrialLog(config=cfg, columns=columns, rows=rows, events=events)
