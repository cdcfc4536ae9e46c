"""Configuration generation for the tracker team.

A configuration couples a communication topology (symmetric 0/1 adjacency
with unit diagonal) with a symmetric doubly stochastic fusion-weight matrix
supported on that topology.  After a sensor-quality fault the team picks a
new configuration by enumerating every topology within the edge budget and
solving a convex weight-optimization problem on each, under one of four
objectives (robot- or team-centric, for geometric- or arithmetic-mean
fusion), plus greedy/random/keep-topology baselines.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

EPS_WEIGHT = 1e-3  # minimum weight carried by any supported entry
NU_STRICT = 1e-6  # strictness margin for the connectivity eigenvalue test
_TIE_RTOL = 1e-8  # objectives closer than this are tied; ties prefer fewer edges


class NonConvergenceError(RuntimeError):
    """Weight optimization did not converge; carries the best iterate."""

    def __init__(self, message, best_abar=None, best_value=None):
        super().__init__(message)
        self.best_abar = best_abar
        self.best_value = best_value


def _bfs_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    if n == 0:
        return True
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i]):
            if j != i and not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


@dataclass
class TeamConfiguration:
    """Communication topology plus fusion weights for an n-tracker team."""

    n: int
    pi: np.ndarray
    abar: np.ndarray

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.int8).reshape(self.n, self.n)
        self.abar = np.asarray(self.abar, dtype=float).reshape(self.n, self.n)

    def validate(self, tol=1e-9):
        pi, a = self.pi, self.abar
        if np.any(pi != pi.T):
            raise ValueError("topology must be symmetric")
        if np.any(np.diag(pi) != 1):
            raise ValueError("topology must carry a unit diagonal")
        if np.max(np.abs(a - a.T)) > tol:
            raise ValueError("weight matrix must be symmetric")
        if np.max(np.abs(a.sum(axis=1) - 1.0)) > tol:
            raise ValueError("weight rows must sum to 1")
        if np.any(a < -tol):
            raise ValueError("weights must be nonnegative")
        if np.any((a > tol) & (pi == 0)):
            raise ValueError("weight support must lie inside the topology")
        if np.any(np.diag(a) <= 0):
            raise ValueError("weight diagonal must be positive")
        if not self.is_connected():
            raise ValueError("topology must be connected")
        return self

    def is_connected(self) -> bool:
        return _bfs_connected(self.pi)

    def edges(self):
        """Sorted list of undirected edges (i < j) present in the topology."""
        out = []
        for i in range(self.n):
            for j in range(i + 1, self.n):
                if self.pi[i, j]:
                    out.append((i, j))
        return out

    @property
    def edge_count(self) -> int:
        return len(self.edges())

    @property
    def edge_density(self) -> float:
        possible = self.n * (self.n - 1) // 2
        return self.edge_count / possible if possible else 0.0

    @classmethod
    def line_graph(cls, n: int) -> "TeamConfiguration":
        pi = np.eye(n, dtype=np.int8)
        for i in range(n - 1):
            pi[i, i + 1] = pi[i + 1, i] = 1
        return cls(n, pi, metropolis_weights(pi)).validate()

    @classmethod
    def from_topology(cls, pi: np.ndarray) -> "TeamConfiguration":
        pi = np.asarray(pi, dtype=np.int8)
        return cls(pi.shape[0], pi, metropolis_weights(pi)).validate()


def metropolis_weights(pi: np.ndarray) -> np.ndarray:
    """Doubly stochastic weights from local degrees: a_ij = 1/(1+max(di,dj))."""
    pi = np.asarray(pi)
    n = pi.shape[0]
    deg = pi.sum(axis=1) - np.diag(pi)
    a = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if pi[i, j]:
                a[i, j] = a[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(a, 1.0 - a.sum(axis=1))
    return a


@dataclass
class StrategyInput:
    """Inputs to configuration generation after a fault.

    ``blk_covs`` holds one block-diagonal matrix per tracker stacking the
    covariances of its ``alpha`` selected target-likely components.
    """

    failed_tracker: int
    blk_covs: list
    alpha: int
    previous: TeamConfiguration
    edge_budget: int

    def validate(self):
        n = self.previous.n
        if not 0 <= self.failed_tracker < n:
            raise ValueError("failed tracker index out of range")
        if len(self.blk_covs) != n:
            raise ValueError("one covariance block per tracker is required")
        if self.alpha < 1:
            raise ValueError("alpha must be at least 1")
        if self.edge_budget < 1:
            raise ValueError("edge budget must be at least 1")
        for p in self.blk_covs:
            if np.any(np.linalg.eigvalsh(np.asarray(p)) <= 0):
                raise ValueError("covariance blocks must be positive definite")
        self.previous.validate()
        return self


def connectivity_lmi(abar: np.ndarray, tol: float = 1e-9) -> bool:
    """Spectral connectivity test for a symmetric doubly stochastic matrix.

    The support graph is connected iff (1/n) 11' + I - A is positive
    definite; this checks its smallest eigenvalue against ``tol``.
    """
    a = np.asarray(abar, dtype=float)
    n = a.shape[0]
    test = np.full((n, n), 1.0 / n) + np.eye(n) - a
    return bool(np.linalg.eigvalsh(test)[0] > tol)


def _edge_slots(n: int):
    return list(itertools.combinations(range(n), 2))


def enumerate_topologies(previous_pi: np.ndarray, e: int):
    """All connected symmetric unit-diagonal topologies within ``e`` modified
    edge pairs of ``previous_pi`` (the previous topology included)."""
    prev = np.asarray(previous_pi, dtype=np.int8)
    n = prev.shape[0]
    slots = _edge_slots(n)
    out = []
    for r in range(0, e + 1):
        for combo in itertools.combinations(range(len(slots)), r):
            cand = prev.copy()
            for k in combo:
                i, j = slots[k]
                cand[i, j] = 1 - cand[i, j]
                cand[j, i] = cand[i, j]
            if _bfs_connected(cand):
                out.append(cand)
    return out


# ---------------------------------------------------------------------------
# convex weight solve (projected gradient with alternating projections)
# ---------------------------------------------------------------------------

def _project_feasible(a, support, eps_w, tol=1e-10, max_sweeps=5000):
    """Exact projection onto {symmetric, supported, row sums 1, entries >=
    eps_w on the support} via Dykstra-corrected alternating projections.

    Corrections make the limit the true metric projection, so projected
    gradient descent stalls only at constrained optima.
    """
    n = a.shape[0]
    x = a.copy()
    p_box = np.zeros_like(x)
    for _ in range(max_sweeps):
        prev = x
        # subspace: symmetric with zeros off the support
        y = 0.5 * (x + x.T)
        y[~support] = 0.0
        # affine: every row sums to one
        y = y + ((1.0 - y.sum(axis=1)) / n)[:, None]
        # box: supported entries at least eps_w (with Dykstra correction)
        z = y + p_box
        x = np.where(support & (z < eps_w), eps_w, z)
        p_box = z - x
        if np.max(np.abs(x - prev)) < tol:
            break
    x = 0.5 * (x + x.T)
    x[~support] = 0.0
    return x


def _feasible_start(support, eps_w):
    pi = support.astype(np.int8)
    return metropolis_weights(pi)


def _make_objective(kind, inp: StrategyInput):
    """Returns (value_fn, grad_fn) over the weight matrix."""
    n = inp.previous.n
    blocks = [np.asarray(p, dtype=float) for p in inp.blk_covs]
    infos = [np.linalg.inv(p) for p in blocks]
    iota = inp.failed_tracker
    if kind == "rcgmc":
        t = np.array([np.trace(j) for j in infos]) / inp.alpha
        grad = np.zeros((n, n))
        grad[iota, :] = -t
        def value(a):
            return -float(a[iota] @ t)
        def gradient(a):
            return grad
        return value, gradient
    if kind == "rcamc":
        t = np.array([np.trace(p) for p in blocks]) / inp.alpha
        grad = np.zeros((n, n))
        grad[iota, :] = t
        def value(a):
            return float(a[iota] @ t)
        def gradient(a):
            return grad
        return value, gradient
    if kind == "tcamc":
        t = np.array([np.trace(p) for p in blocks])
        grad = np.tile(t, (n, 1))
        def value(a):
            return float(a.sum(axis=0) @ t)
        def gradient(a):
            return grad
        return value, gradient
    if kind == "tcgmc":
        j_stack = np.stack(infos)
        def fused_infos(a):
            return np.einsum("ij,jab->iab", a, j_stack)
        def value(a):
            m = fused_infos(a)
            return float(np.trace(np.linalg.inv(m), axis1=1, axis2=2).sum())
        def gradient(a):
            m_inv = np.linalg.inv(fused_infos(a))
            # d/dA_ij tr(M_i^-1) = -tr(M_i^-1 J_j M_i^-1)
            return -np.einsum("iab,jbc,ica->ij", m_inv, j_stack, m_inv)
        return value, gradient
    raise ValueError(f"unknown objective {kind!r}")


def solve_weights(
    pi: np.ndarray,
    objective: str,
    inp: StrategyInput,
    *,
    eps_w: float = EPS_WEIGHT,
    max_iter: int = 2000,
    tol: float = 1e-11,
):
    """Optimal fusion weights on a fixed topology.

    Minimizes the requested objective over symmetric doubly stochastic
    matrices supported exactly on ``pi`` with all supported entries at least
    ``eps_w`` (which keeps the support graph strictly connected).  Projected
    gradient descent with backtracking line search; the constraint set is
    handled by alternating projections.

    Returns (abar, objective value).
    """
    pi = np.asarray(pi, dtype=np.int8)
    if not _bfs_connected(pi):
        raise ValueError("weight solve requires a connected topology")
    support = (pi != 0) | np.eye(pi.shape[0], dtype=bool)
    value_fn, grad_fn = _make_objective(objective, inp)
    a = _feasible_start(support, eps_w)
    a = _project_feasible(a, support, eps_w)
    best = a
    best_val = value_fn(a)
    val = best_val
    step = 1.0
    stall = 0
    for _ in range(max_iter):
        g = grad_fn(a)
        improved = False
        t = step
        for _ in range(40):
            cand = _project_feasible(a - t * g, support, eps_w)
            cand_val = value_fn(cand)
            if cand_val < val - 1e-14 * (1.0 + abs(val)):
                a, val = cand, cand_val
                step = min(t * 2.0, 1e3)
                improved = True
                break
            t *= 0.5
        if val < best_val:
            best, best_val = a, val
        if not improved:
            stall += 1
            step = 1.0
            if stall >= 2:
                break
        else:
            stall = 0
        if np.max(np.abs(grad_proj_residual(a, g, support, eps_w))) < tol:
            break
    else:
        raise NonConvergenceError(
            f"{objective} weight solve did not converge in {max_iter} iterations",
            best_abar=best,
            best_value=best_val,
        )
    if not connectivity_lmi(best, tol=NU_STRICT * 1e-3):
        raise NonConvergenceError(
            "solved weights fail the connectivity test",
            best_abar=best,
            best_value=best_val,
        )
    return best, best_val


def grad_proj_residual(a, g, support, eps_w, trial=1e-6):
    """Projected-gradient mapping residual used as a stationarity check."""
    return _project_feasible(a - trial * g, support, eps_w) - a


_STRATEGY_OBJECTIVES = ("rcgmc", "tcgmc", "rcamc", "tcamc")
_TEAM_OBJECTIVE = {"gmf": "tcgmc", "amf": "tcamc"}
_RULE_OF_STRATEGY = {
    "rcgmc": "gmf",
    "tcgmc": "gmf",
    "rcamc": "amf",
    "tcamc": "amf",
}


def _edge_key(pi):
    n = pi.shape[0]
    return tuple(
        (i, j) for i in range(n) for j in range(i + 1, n) if pi[i, j]
    )


def _pick_best(results):
    """Choose (value, pi, abar) with tolerance-aware ties broken by fewest
    edges then lexicographic edge order."""
    vmin = min(r[0] for r in results)
    tol = _TIE_RTOL * (1.0 + abs(vmin))
    tied = [r for r in results if r[0] <= vmin + tol]
    tied.sort(key=lambda r: (len(_edge_key(r[1])), _edge_key(r[1])))
    return tied[0]


def generate_configuration(
    strategy: str,
    inp: StrategyInput,
    *,
    fusion_rule: str = None,
    rng: np.random.Generator = None,
) -> TeamConfiguration:
    """Produce the post-fault configuration for the requested strategy.

    The four optimization strategies enumerate every topology within the
    edge budget and keep the best solved objective.  ``none`` keeps the
    previous topology, ``random`` toggles ``edge_budget`` random slots
    (resampling until connected) and ``greedy`` takes the single edge
    addition with the best team objective; all three re-solve their weights
    under the team objective of ``fusion_rule``.
    """
    inp.validate()
    prev = inp.previous
    strategy = strategy.lower()
    if strategy in _STRATEGY_OBJECTIVES:
        rule = _RULE_OF_STRATEGY[strategy]
        if fusion_rule is not None and fusion_rule != rule:
            raise ValueError(
                f"strategy {strategy} requires the {rule} fusion rule"
            )
        results = []
        for pi in enumerate_topologies(prev.pi, inp.edge_budget):
            abar, val = solve_weights(pi, strategy, inp)
            results.append((val, pi, abar))
        val, pi, abar = _pick_best(results)
        return TeamConfiguration(prev.n, pi, abar).validate()
    if fusion_rule not in _TEAM_OBJECTIVE:
        raise ValueError(
            f"strategy {strategy!r} needs fusion_rule 'gmf' or 'amf'"
        )
    objective = _TEAM_OBJECTIVE[fusion_rule]
    if strategy == "none":
        abar, _ = solve_weights(prev.pi, objective, inp)
        return TeamConfiguration(prev.n, prev.pi.copy(), abar).validate()
    if strategy == "random":
        if rng is None:
            raise ValueError("the random strategy requires an rng")
        slots = _edge_slots(prev.n)
        for _ in range(1000):
            cand = prev.pi.copy()
            picks = rng.choice(len(slots), size=inp.edge_budget, replace=False)
            for k in np.atleast_1d(picks):
                i, j = slots[int(k)]
                cand[i, j] = 1 - cand[i, j]
                cand[j, i] = cand[i, j]
            if _bfs_connected(cand):
                abar, _ = solve_weights(cand, objective, inp)
                return TeamConfiguration(prev.n, cand, abar).validate()
        raise NonConvergenceError("random strategy found no connected topology")
    if strategy == "greedy":
        candidates = []
        for i, j in _edge_slots(prev.n):
            if prev.pi[i, j]:
                continue
            cand = prev.pi.copy()
            cand[i, j] = cand[j, i] = 1
            abar, val = solve_weights(cand, objective, inp)
            candidates.append((val, cand, abar))
        if not candidates:  # complete graph: nothing to add
            abar, _ = solve_weights(prev.pi, objective, inp)
            return TeamConfiguration(prev.n, prev.pi.copy(), abar).validate()
        val, pi, abar = _pick_best(candidates)
        return TeamConfiguration(prev.n, pi, abar).validate()
    raise ValueError(f"unknown strategy {strategy!r}")


def lemma1_gap(abar: np.ndarray, inp: StrategyInput, pbar: np.ndarray = None):
    """Epigraph bound check for the team-centric geometric objective.

    Returns (Tr(Pbar), sum of fused-covariance traces).  ``pbar`` defaults to
    the tight epigraph point, the inverse of the stacked fused information
    matrix; any feasible ``pbar`` must dominate the true value.
    """
    a = np.asarray(abar, dtype=float)
    infos = [np.linalg.inv(np.asarray(p, dtype=float)) for p in inp.blk_covs]
    j_stack = np.stack(infos)
    fused = np.einsum("ij,jab->iab", a, j_stack)
    fused_cov = np.linalg.inv(fused)
    true_value = float(np.trace(fused_cov, axis1=1, axis2=2).sum())
    if pbar is None:
        upper = true_value
    else:
        upper = float(np.trace(np.asarray(pbar, dtype=float)))
    return upper, true_value
