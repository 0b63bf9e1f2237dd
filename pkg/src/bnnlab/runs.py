"""Batched, seed-deterministic runners for the tabular dynamics.

All replicates of a run advance together as rows of one array.  Every
replicate owns its generators, and every reduction acts along the last axis
only, so a seed produces the same bytes whether it runs alone or in a batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import efg
from .dynamics import (
    FLOOR,
    NoiseStream,
    NumericalError,
    bnn_direction,
    efg_bnn_direction,
    efg_perturb_advantages,
    efg_replicator_direction,
    efg_step,
    perturb_advantages,
    seed_streams,
    step,
)
from .games import (
    ConfigError,
    MixedProfile,
    NormalFormGame,
    ParamSchedule,
    RpsParams,
    action_payoffs,
    build_rps,
)
from .specs import NoiseSpec, StepSchedule

NFG_ALGORITHMS = ("bnn", "replicator", "reg-rd")
TRACE_COLUMNS = ("nash_conv", "gamma", "s_mass", "eta_t", "floor_events", "min_external_reach", "stage_id")


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "bnn"
    noise: NoiseSpec = NoiseSpec()
    eta: StepSchedule = StepSchedule()
    iterations: int = 10_000
    eval_interval: int = 10
    floor: float = FLOOR
    lam: float = 0.1
    ref_interval: int = 500
    tail_fraction: float = 0.2
    init: str = "random"

    def __post_init__(self):
        if self.algorithm not in NFG_ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {NFG_ALGORITHMS}, got {self.algorithm!r}")
        if self.iterations <= 0:
            raise ConfigError("iterations must be positive")
        if self.eval_interval <= 0:
            raise ConfigError("eval_interval must be positive")
        if not 0 < self.tail_fraction <= 1:
            raise ConfigError("tail_fraction must lie in (0, 1]")
        if self.init not in ("random", "uniform"):
            raise ConfigError("init must be 'random' or 'uniform'")
        if self.algorithm == "reg-rd" and not self.lam > 0:
            raise ConfigError("reg-rd needs lam > 0")
        if self.ref_interval < 1:
            raise ConfigError("ref_interval must be >= 1")


@dataclass
class Trace:
    """Diagnostics of a batched run.

    ``columns[name]`` has shape (evaluations, seeds).  ``centroid`` is the
    per-seed average of the iterates over the last ``tail_fraction`` of the
    run, ``final`` the last iterate; both are flat profiles.
    """

    seeds: tuple[int, ...]
    t: np.ndarray
    columns: dict[str, np.ndarray]
    centroid: np.ndarray
    final: np.ndarray
    sigma: float
    meta: dict = field(default_factory=dict)

    def seed_mean(self, name: str) -> np.ndarray:
        return self.columns[name].mean(axis=1)

    def seed_stderr(self, name: str) -> np.ndarray:
        col = self.columns[name]
        if col.shape[1] < 2:
            return np.zeros(col.shape[0])
        return col.std(axis=1, ddof=1) / np.sqrt(col.shape[1])

    def tail_mask(self, fraction: float = 0.2) -> np.ndarray:
        return self.t >= self.t[-1] * (1 - fraction)

    def select(self, index: int) -> "Trace":
        """Single-seed view."""
        cols = {k: v[:, index:index + 1] for k, v in self.columns.items()}
        return Trace((self.seeds[index],), self.t, cols, self.centroid[index:index + 1],
                     self.final[index:index + 1], self.sigma, dict(self.meta))


# ---------------------------------------------------------------------------
# Normal form
# ---------------------------------------------------------------------------

class NfgEnvironment:
    """A fixed game or an RPS-family parameter schedule."""

    def __init__(self, game: NormalFormGame | None = None, schedule: ParamSchedule | None = None,
                 with_fourth_action: bool = False):
        if (game is None) == (schedule is None):
            raise ConfigError("give exactly one of game or schedule")
        self.schedule = schedule
        self.with_fourth_action = with_fourth_action
        self._fixed = game
        self._cache: dict[tuple, NormalFormGame] = {}
        probe = game if game is not None else self.game_at(0)
        self.shape = (probe.actions_p1, probe.actions_p2)
        self.name = probe.name

    def game_at(self, t: int) -> NormalFormGame:
        if self._fixed is not None:
            return self._fixed
        params = self.schedule.params_at(t)
        game = self._cache.get(params)
        if game is None:
            game = build_rps(RpsParams(*params, with_fourth_action=self.with_fourth_action))
            if len(self._cache) < 64:
                self._cache[params] = game
        return game

    def stage_at(self, t: int) -> int:
        return 0 if self.schedule is None else self.schedule.stage_index(t)


def split_profile(flat: np.ndarray, n1: int) -> MixedProfile:
    return MixedProfile(flat[..., :n1], flat[..., n1:])


def nfg_readings(game: NormalFormGame, profile: MixedProfile) -> dict[str, np.ndarray]:
    """NashConv, combined Gamma and combined S for a (batched) profile."""
    nc = 0.0
    gamma = 0.0
    s = 0.0
    for p in (1, 2):
        pi = profile.strategy(p)
        u = action_payoffs(game, profile, p)
        mean = (pi * u).sum(axis=-1, keepdims=True)
        adv = u - mean
        pos = np.maximum(adv, 0.0)
        nc = nc + (u.max(axis=-1) - mean[..., 0])
        gamma = gamma + 0.5 * (pos**2).sum(axis=-1)
        s = s + pos.sum(axis=-1)
    return {"nash_conv": nc, "gamma": gamma, "s_mass": s}


def _nfg_direction(algorithm, game, profile, player, xi, reference, lam):
    pi = profile.strategy(player)
    u = action_payoffs(game, profile, player)
    if xi is not None:
        u = u + xi
    if algorithm == "reg-rd":
        u = u - lam * np.log(pi / reference)
    adv = u - (pi * u).sum(axis=-1, keepdims=True)
    if algorithm == "bnn":
        return bnn_direction(adv, pi)
    return pi * adv


def initial_states(seeds, sizes: tuple[int, ...] | int, init: str, efg_tree: efg.GameTree | None = None):
    """Per-seed initial profiles plus (noise, sampling) generators."""
    states, noise_rngs, sample_rngs = [], [], []
    for seed in seeds:
        init_rng, noise_rng, sample_rng = seed_streams(seed)
        if efg_tree is not None:
            x = efg.uniform_profile(efg_tree) if init == "uniform" else efg.random_profile(efg_tree, init_rng)
        elif init == "uniform":
            x = np.concatenate([np.full(n, 1.0 / n) for n in sizes])
        else:
            x = np.concatenate([init_rng.dirichlet(np.ones(n)) for n in sizes])
        states.append(x)
        noise_rngs.append(noise_rng)
        sample_rngs.append(sample_rng)
    return np.array(states), noise_rngs, sample_rngs


def run_nfg(env: NfgEnvironment | NormalFormGame, cfg: RunConfig, seeds) -> Trace:
    """Simultaneous updates of both players for ``cfg.iterations`` steps.

    Diagnostics are recorded before step t for t = 0, eval_interval, ... and
    once more after the final step.
    """
    if isinstance(env, NormalFormGame):
        env = NfgEnvironment(env)
    seeds = tuple(int(s) for s in seeds)
    n1, n2 = env.shape
    x, noise_rngs, _ = initial_states(seeds, (n1, n2), cfg.init)
    noisy = cfg.noise.sigma > 0
    noise = NoiseStream(noise_rngs, cfg.noise, n1 + n2) if noisy else None
    reference = x.copy()
    floor_events = np.zeros(len(seeds), dtype=np.int64)
    T = cfg.iterations
    tail_start = T - max(1, int(round(cfg.tail_fraction * T)))
    centroid = np.zeros_like(x)
    rows_t, rows = [], {k: [] for k in TRACE_COLUMNS}

    def record(t, game, eta):
        prof = split_profile(x, n1)
        for k, v in nfg_readings(game, prof).items():
            rows[k].append(np.broadcast_to(v, (len(seeds),)).copy())
        rows["eta_t"].append(np.full(len(seeds), eta))
        rows["floor_events"].append(floor_events.copy())
        rows["min_external_reach"].append(np.ones(len(seeds)))
        rows["stage_id"].append(np.full(len(seeds), env.stage_at(t)))
        rows_t.append(t)

    for t in range(T):
        game = env.game_at(t)
        eta = float(cfg.eta.eta(t))
        if t % cfg.eval_interval == 0:
            record(t, game, eta)
        if cfg.algorithm == "reg-rd" and t > 0 and t % cfg.ref_interval == 0:
            reference = x.copy()
        prof = split_profile(x, n1)
        xi = noise.next() if noisy else None
        dirs = []
        for p, sl in ((1, slice(0, n1)), (2, slice(n1, None))):
            dirs.append(_nfg_direction(cfg.algorithm, game, prof, p,
                                       None if xi is None else xi[:, sl], reference[:, sl], cfg.lam))
        try:
            new1, f1 = step(x[:, :n1], dirs[0], eta, cfg.floor)
            new2, f2 = step(x[:, n1:], dirs[1], eta, cfg.floor)
        except NumericalError as err:
            err.state.update(t=t, seeds=seeds)
            raise
        x = np.concatenate([new1, new2], axis=-1)
        floor_events += f1 | f2
        if t + 1 > tail_start:
            centroid += x
    record(T, env.game_at(T), float(cfg.eta.eta(T)))
    centroid /= T - tail_start
    cols = {k: np.array(v) for k, v in rows.items()}
    meta = {"kind": "nfg", "game": env.name, "actions": [n1, n2]}
    return Trace(seeds, np.array(rows_t), cols, centroid, x, cfg.noise.sigma, meta)


# ---------------------------------------------------------------------------
# Extensive form
# ---------------------------------------------------------------------------

class EfgEnvironment:
    """A fixed tree, or Kuhn poker under a bet-size schedule."""

    def __init__(self, tree: efg.GameTree | None = None, bet_schedule: ParamSchedule | None = None):
        if (tree is None) == (bet_schedule is None):
            raise ConfigError("give exactly one of tree or bet_schedule")
        self.schedule = bet_schedule
        self._fixed = tree
        self.base = tree if tree is not None else efg.kuhn_at_bet(bet_schedule.params_at(0)[0])
        self.name = self.base.name

    def tree_at(self, t: int) -> efg.GameTree:
        if self._fixed is not None:
            return self._fixed
        return efg.kuhn_at_bet(self.schedule.params_at(t)[0])

    def stage_at(self, t: int) -> int:
        return 0 if self.schedule is None else self.schedule.stage_index(t)

    @property
    def signed_transfer(self) -> bool:
        return self.schedule is not None and any(p[0] < 0 for p, _ in self.schedule.stages)


def efg_readings(tree: efg.GameTree, x: np.ndarray, cf: efg.CfValueTable | None = None) -> dict[str, np.ndarray]:
    if cf is None:
        cf = efg.compute_cf_values(tree, x)
    pot = efg.efg_potential(tree, x, cf)
    return {
        "nash_conv": np.asarray(efg.nash_conv_efg(tree, x)),
        "gamma": pot.total,
        "s_mass": pot.s_mass.sum(axis=-1),
        "min_external_reach": cf.external_reach.min(axis=-1),
    }


def run_efg(env: EfgEnvironment | efg.GameTree, cfg: RunConfig, seeds) -> Trace:
    """Simultaneous reach-weighted updates at every information set of both players."""
    if isinstance(env, efg.GameTree):
        env = EfgEnvironment(env)
    seeds = tuple(int(s) for s in seeds)
    base = env.base
    x, noise_rngs, _ = initial_states(seeds, (), cfg.init, efg_tree=base)
    noisy = cfg.noise.sigma > 0
    noise = NoiseStream(noise_rngs, cfg.noise, base.num_slots) if noisy else None
    reference = x.copy()
    floor_events = np.zeros(len(seeds), dtype=np.int64)
    T = cfg.iterations
    tail_start = T - max(1, int(round(cfg.tail_fraction * T)))
    centroid = np.zeros_like(x)
    rows_t, rows = [], {k: [] for k in TRACE_COLUMNS}

    def record(t, tree, eta):
        for k, v in efg_readings(tree, x).items():
            rows[k].append(np.broadcast_to(v, (len(seeds),)).copy())
        rows["eta_t"].append(np.full(len(seeds), eta))
        rows["floor_events"].append(floor_events.copy())
        rows["stage_id"].append(np.full(len(seeds), env.stage_at(t)))
        rows_t.append(t)

    for t in range(T):
        tree = env.tree_at(t)
        eta = float(cfg.eta.eta(t))
        if t % cfg.eval_interval == 0:
            record(t, tree, eta)
        if cfg.algorithm == "reg-rd" and t > 0 and t % cfg.ref_interval == 0:
            reference = x.copy()
        cf = efg.compute_cf_values(tree, x)
        adv = cf.advantages
        if noisy:
            adv = efg_perturb_advantages(tree, adv, x, noise.next())
        if cfg.algorithm == "bnn":
            direction = efg_bnn_direction(tree, adv, x, cf.slot_reach)
        else:
            lam = cfg.lam if cfg.algorithm == "reg-rd" else 0.0
            direction = efg_replicator_direction(tree, adv, x, cf.slot_reach, lam, reference)
        try:
            x, floored = efg_step(tree, x, direction, eta, cfg.floor)
        except NumericalError as err:
            err.state.update(t=t, seeds=seeds)
            raise
        floor_events += floored
        if t + 1 > tail_start:
            centroid += x
    record(T, env.tree_at(T), float(cfg.eta.eta(T)))
    centroid /= T - tail_start
    cols = {k: np.array(v) for k, v in rows.items()}
    meta = {"kind": "efg", "game": env.name, "slots": base.num_slots, "signed_transfer": env.signed_transfer}
    return Trace(seeds, np.array(rows_t), cols, centroid, x, cfg.noise.sigma, meta)
