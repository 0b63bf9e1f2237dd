"""Tabular BNN actor-critic.

Each player is an independent :class:`Learner` holding a logit table (the
actor), a critic table of conditional action values and an estimate of the
external reach of its information sets.  The learners never read each other's
tables: per iteration the environment samples a batch of complete plays from
the joint policy and hands every learner the same batch of terminal ids and
its own (optionally noisy) returns.

With ``backend="oracle"`` the critic and reach tables are recomputed exactly
from the current joint policy instead of from samples, which turns the actor
into the discretized reach-weighted BNN flow in logit coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import efg
from .dynamics import FLOOR, NumericalError, efg_bnn_field, sample_noise
from .games import ConfigError
from .runs import EfgEnvironment, Trace, TRACE_COLUMNS, efg_readings
from .specs import NoiseSpec, StepSchedule

BACKENDS = ("sampled", "oracle")


@dataclass(frozen=True)
class BnnacConfig:
    k_actor: int = 10
    batch: int = 32
    alpha: float = 0.1
    beta: float = 0.1
    eta: StepSchedule = StepSchedule()
    policy_floor: float = FLOOR
    noise: NoiseSpec = NoiseSpec()
    iterations: int = 10_000
    eval_interval: int = 50
    init: str = "uniform"
    backend: str = "sampled"

    def __post_init__(self):
        if self.k_actor < 1:
            raise ConfigError("k_actor must be >= 1")
        if self.batch < 0:
            raise ConfigError("batch must be >= 0")
        if not (0 < self.alpha <= 1 and 0 < self.beta <= 1):
            raise ConfigError("alpha and beta must lie in (0, 1]")
        if not self.policy_floor > 0:
            raise ConfigError("policy_floor must be positive")
        if self.iterations <= 0 or self.eval_interval <= 0:
            raise ConfigError("iterations and eval_interval must be positive")
        if self.init not in ("uniform", "random"):
            raise ConfigError("init must be 'uniform' or 'random'")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")


# ---------------------------------------------------------------------------
# Sampled play
# ---------------------------------------------------------------------------

class PathIndex:
    """Sparse incidence of terminals and the player slots on their paths."""

    def __init__(self, tree: efg.GameTree):
        self.terminals = tree.terminals
        rows, cols = [], []
        for r, z in enumerate(self.terminals):
            n = int(z)
            while n > 0:
                s = tree.edge_slot[n]
                if s >= 0:
                    rows.append(r)
                    cols.append(int(s))
                n = int(tree.parent[n])
        data = np.ones(len(rows))
        self.slots = sparse.csr_matrix((data, (rows, cols)), shape=(len(self.terminals), tree.num_slots))


@dataclass(frozen=True)
class Dataset:
    """One batch of sampled plays: terminal row ids (into ``PathIndex.terminals``) and player-1 payoffs."""

    rows: np.ndarray
    payoff: np.ndarray

    def __len__(self) -> int:
        return len(self.rows)

    def tuples(self, tree: efg.GameTree, paths: PathIndex):
        """Per-visit (infoset key, action, return to the owner, next infoset key or None) tuples."""
        for r, u in zip(self.rows, self.payoff):
            visits = []
            n = int(paths.terminals[r])
            while n > 0:
                s = tree.edge_slot[n]
                if s >= 0:
                    visits.append(int(s))
                n = int(tree.parent[n])
            visits.reverse()
            for i, s in enumerate(visits):
                iset = int(tree.slot_infoset[s])
                owner = int(tree.infoset_player[iset])
                nxt = [v for v in visits[i + 1:] if tree.infoset_player[tree.slot_infoset[v]] == owner]
                action = tree.infoset_actions[iset][s - tree.slot_start[iset]]
                nxt_key = tree.infoset_keys[tree.slot_infoset[nxt[0]]] if nxt else None
                yield tree.infoset_keys[iset], action, float(u if owner == 1 else -u), nxt_key


def collect(tree: efg.GameTree, profile: np.ndarray, batch: int, rng: np.random.Generator,
            paths: PathIndex | None = None) -> Dataset:
    """Sample ``batch`` complete plays from chance and the joint behaviour profile."""
    if paths is None:
        paths = PathIndex(tree)
    if batch == 0:
        return Dataset(np.zeros(0, dtype=np.int64), np.zeros(0))
    reach = efg.compute_reach(tree, profile).total[paths.terminals]
    cdf = np.cumsum(reach)
    rows = np.searchsorted(cdf, rng.random(batch) * cdf[-1], side="right")
    rows = np.minimum(rows, len(cdf) - 1)
    return Dataset(rows, tree.payoff[paths.terminals[rows]])


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

@dataclass
class LogitTable:
    tree: efg.GameTree
    logits: np.ndarray

    def policy(self) -> np.ndarray:
        shifted = self.logits - _segment_max(self.tree, self.logits)
        e = np.exp(shifted)
        return e / efg.segment_sum(self.tree, e, expand=True)

    def center(self, mask: np.ndarray) -> None:
        mean = efg.segment_sum(self.tree, self.logits, expand=True) / self.tree._plan.slot_lengths[self.tree.slot_infoset]
        self.logits = np.where(mask, self.logits - mean, self.logits)


def _segment_max(tree: efg.GameTree, values: np.ndarray) -> np.ndarray:
    return np.maximum.reduceat(values, tree.slot_start[:-1])[tree.slot_infoset]


@dataclass
class CriticTable:
    q: np.ndarray
    visits: np.ndarray


@dataclass
class ReachEstimator:
    rho: np.ndarray       # per infoset
    visits: np.ndarray


def critic_update(critic: CriticTable, slot_visits: np.ndarray, slot_returns: np.ndarray,
                  alpha: float, mask: np.ndarray) -> CriticTable:
    """Move each visited entry toward the batch-mean observed return."""
    seen = mask & (slot_visits > 0)
    target = np.where(seen, slot_returns / np.where(seen, slot_visits, 1), 0.0)
    q = np.where(seen, critic.q + alpha * (target - critic.q), critic.q)
    return CriticTable(q, critic.visits + np.where(mask, slot_visits, 0).astype(np.int64))


def reach_update(est: ReachEstimator, iset_visits: np.ndarray, own_reach: np.ndarray, batch: int,
                 beta: float, mask: np.ndarray) -> ReachEstimator:
    """Running average of visits(x) / (batch * own reach of x), clamped to [0, 1].

    A play reaches x with probability rho^i(x) rho^{-i}(x); the owner knows
    rho^i(x) from its own policy, so the ratio estimates the external reach.
    """
    if batch == 0:
        return est
    ok = mask & (own_reach > 0)
    target = np.where(ok, iset_visits / (batch * np.where(ok, own_reach, 1.0)), 0.0)
    rho = np.where(ok, est.rho + beta * (target - est.rho), est.rho)
    return ReachEstimator(np.clip(rho, 0.0, 1.0), est.visits + np.where(mask, iset_visits, 0).astype(np.int64))


def actor_direction(tree: efg.GameTree, q: np.ndarray, policy: np.ndarray, rho_slots: np.ndarray,
                    floor: float) -> tuple[np.ndarray, np.ndarray]:
    """Logit direction rho(x) [A(x, a)]_+ / pi(a|x); returns (direction, floored mask)."""
    adv = q - efg.segment_sum(tree, policy * q, expand=True)
    floored = policy < floor
    return rho_slots * np.maximum(adv, 0.0) / np.maximum(policy, floor), floored


def actor_update(logits: LogitTable, critic: CriticTable, estimator: ReachEstimator, eta: float,
                 mask: np.ndarray, floor: float = FLOOR) -> int:
    """Apply L <- L + eta * dL on the masked slots and mean-centre; returns the floor-event count."""
    tree = logits.tree
    policy = logits.policy()
    direction, floored = actor_direction(tree, critic.q, policy, estimator.rho[tree.slot_infoset], floor)
    logits.logits = np.where(mask, logits.logits + eta * direction, logits.logits)
    logits.center(mask)
    return int(np.count_nonzero(floored & mask))


# ---------------------------------------------------------------------------
# Learner
# ---------------------------------------------------------------------------

class Learner:
    """One player's tables; all updates read only these tables and the shared batch."""

    def __init__(self, player: int, tree: efg.GameTree, cfg: BnnacConfig, logits: np.ndarray,
                 noise_rng: np.random.Generator):
        self.player = player
        self.cfg = cfg
        self.mask = tree.slot_player == player
        self.iset_mask = tree.infoset_player == player
        self.logits = LogitTable(tree, np.where(self.mask, logits, 0.0))
        self.critic = CriticTable(np.zeros(tree.num_slots), np.zeros(tree.num_slots, dtype=np.int64))
        self.reach = ReachEstimator(np.ones(tree.num_infosets), np.zeros(tree.num_infosets, dtype=np.int64))
        self.noise_rng = noise_rng
        self.floor_events = 0
        self.actor_steps = 0

    @property
    def tree(self) -> efg.GameTree:
        return self.logits.tree

    def policy(self) -> np.ndarray:
        """Own-slot probabilities (other slots are zero)."""
        return np.where(self.mask, self.logits.policy(), 0.0)

    def own_reach(self) -> np.ndarray:
        """Product of own action probabilities on the way to each own infoset."""
        tree = self.tree
        pol = self.logits.policy()
        filler = efg.uniform_profile(tree)
        joint = np.where(self.mask, pol, filler)
        reach = efg.compute_reach(tree, joint).own(self.player)
        plan = tree._plan
        first = plan.infoset_nodes[plan.infoset_node_starts]
        return reach[first]

    def observe(self, data: Dataset, paths: PathIndex) -> None:
        sign = 1.0 if self.player == 1 else -1.0
        returns = sign * data.payoff
        if self.cfg.noise.sigma > 0 and len(data):
            returns = returns + sample_noise(self.noise_rng, self.cfg.noise.sigma, self.cfg.noise.distribution, len(data))
        n_rows = paths.slots.shape[0]
        counts = np.bincount(data.rows, minlength=n_rows).astype(float)
        sums = np.bincount(data.rows, weights=returns, minlength=n_rows)
        slot_visits = paths.slots.T @ counts
        slot_returns = paths.slots.T @ sums
        self.critic = critic_update(self.critic, slot_visits, slot_returns, self.cfg.alpha, self.mask)
        iset_visits = efg.segment_sum(self.tree, slot_visits)
        self.reach = reach_update(self.reach, iset_visits, self.own_reach(), len(data), self.cfg.beta, self.iset_mask)

    def set_exact(self, cf: efg.CfValueTable) -> None:
        """Oracle tables: exact conditional action values and external reach."""
        self.critic = CriticTable(np.where(self.mask, cf.conditional_values(), 0.0), self.critic.visits)
        self.reach = ReachEstimator(np.where(self.iset_mask, cf.external_reach, 1.0), self.reach.visits)

    def act(self) -> None:
        eta = float(self.cfg.eta.eta(self.actor_steps))
        self.floor_events += actor_update(self.logits, self.critic, self.reach, eta, self.mask, self.cfg.policy_floor)
        self.actor_steps += 1


def joint_policy(learners: list[Learner]) -> np.ndarray:
    return learners[0].policy() + learners[1].policy()


def _streams(seed: int):
    init, sample, n1, n2 = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4))
    return init, sample, n1, n2


def make_learners(tree: efg.GameTree, cfg: BnnacConfig, seed: int):
    init_rng, sample_rng, n1, n2 = _streams(seed)
    if cfg.init == "random":
        start = np.log(efg.random_profile(tree, init_rng))
    else:
        start = np.zeros(tree.num_slots)
    learners = [Learner(1, tree, cfg, start, n1), Learner(2, tree, cfg, start, n2)]
    for lr in learners:
        lr.logits.center(lr.mask)
    return learners, sample_rng


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

@dataclass
class BnnacRun:
    trace: Trace
    learners: list[Learner]
    policies: list[np.ndarray] = field(default_factory=list)


def run_bnnac(env: EfgEnvironment | efg.GameTree, cfg: BnnacConfig, seed: int,
              keep_policies: bool = False) -> BnnacRun:
    """Alternate collect / critic / reach every iteration and the actor every ``k_actor`` iterations."""
    if isinstance(env, efg.GameTree):
        env = EfgEnvironment(env)
    base = env.base
    learners, sample_rng = make_learners(base, cfg, seed)
    paths = PathIndex(base)
    rows_t, rows = [], {k: [] for k in TRACE_COLUMNS}
    policies = []

    def record(t, tree, x):
        for k, v in efg_readings(tree, x).items():
            rows[k].append(np.atleast_1d(v).copy())
        rows["eta_t"].append(np.array([float(cfg.eta.eta(learners[0].actor_steps))]))
        rows["floor_events"].append(np.array([learners[0].floor_events + learners[1].floor_events]))
        rows["stage_id"].append(np.array([env.stage_at(t)]))
        rows_t.append(t)

    x = joint_policy(learners)
    for t in range(cfg.iterations):
        tree = env.tree_at(t)
        if t % cfg.eval_interval == 0:
            record(t, tree, x)
        if keep_policies:
            policies.append(x)
        if cfg.backend == "oracle":
            cf = efg.compute_cf_values(tree, x)
            for lr in learners:
                lr.set_exact(cf)
        else:
            data = collect(tree, x, cfg.batch, sample_rng, paths)
            for lr in learners:
                lr.observe(data, paths)
        if t % cfg.k_actor == 0:
            for lr in learners:
                lr.act()
        x = joint_policy(learners)
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite policy", {"t": t, "seed": seed, "policy": x})
    record(cfg.iterations, env.tree_at(cfg.iterations), x)
    if keep_policies:
        policies.append(x)
    cols = {k: np.array(v) for k, v in rows.items()}
    meta = {
        "kind": "efg", "algorithm": "bnnac", "game": env.name, "signed_transfer": env.signed_transfer,
        "critic_visits_min": int(min(lr.critic.visits[lr.mask].min() for lr in learners)),
        "reach_estimates": {base.infoset_keys[i]: float(learners[base.infoset_player[i] - 1].reach.rho[i])
                            for i in range(base.num_infosets)},
    }
    trace = Trace((seed,), np.array(rows_t), cols, x[None, :].copy(), x[None, :].copy(), cfg.noise.sigma, meta)
    return BnnacRun(trace, learners, policies)


def run_bnnac_seeds(env, cfg: BnnacConfig, seeds) -> Trace:
    """Independent runs stacked as one multi-seed trace."""
    traces = [run_bnnac(env, cfg, int(s)).trace for s in seeds]
    cols = {k: np.concatenate([tr.columns[k] for tr in traces], axis=1) for k in traces[0].columns}
    return Trace(tuple(int(s) for s in seeds), traces[0].t, cols,
                 np.concatenate([tr.centroid for tr in traces]), np.concatenate([tr.final for tr in traces]),
                 cfg.noise.sigma, dict(traces[0].meta))


def reference_logit_flow(tree: efg.GameTree, start_logits: np.ndarray, eta: StepSchedule, steps: int) -> list[np.ndarray]:
    """Policies of L <- centre(L + eta_k * F(pi) / pi), with F the exact reach-weighted BNN field."""
    table = LogitTable(tree, start_logits.copy())
    every = np.ones(tree.num_slots, dtype=bool)
    table.center(every)
    out = [table.policy()]
    for k in range(steps):
        pi = table.policy()
        table.logits = table.logits + float(eta.eta(k)) * efg_bnn_field(tree, pi) / pi
        table.center(every)
        out.append(table.policy())
    return out
