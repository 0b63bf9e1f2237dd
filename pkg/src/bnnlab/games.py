"""Two-player zero-sum normal-form games.

Payoffs are stored for player 1 only; player 2 always receives the negation.
Every function that takes a :class:`MixedProfile` also accepts batched
profiles, i.e. arrays with leading replicate dimensions, as long as the last
axis indexes actions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SIMPLEX_TOL = 1e-12


class ShapeError(ValueError):
    """Raised when a profile does not match the game's action counts."""


class ConfigError(ValueError):
    """Raised for malformed game, schedule or experiment configuration."""


@dataclass(frozen=True)
class NormalFormGame:
    """Zero-sum bimatrix game stored as player 1's payoff matrix."""

    payoff: np.ndarray
    name: str = "custom"
    action_names: tuple[str, ...] | None = None

    def __post_init__(self):
        payoff = np.array(self.payoff, dtype=float)
        if payoff.ndim != 2 or 0 in payoff.shape:
            raise ShapeError(f"payoff must be a non-empty matrix, got shape {payoff.shape}")
        if not np.all(np.isfinite(payoff)):
            raise ConfigError("payoff entries must be finite")
        payoff.setflags(write=False)
        object.__setattr__(self, "payoff", payoff)

    @property
    def actions_p1(self) -> int:
        return self.payoff.shape[0]

    @property
    def actions_p2(self) -> int:
        return self.payoff.shape[1]

    @property
    def u_max(self) -> float:
        return float(np.abs(self.payoff).max())

    def num_actions(self, player: int) -> int:
        return self.payoff.shape[_player_index(player)]

    def payoff_for(self, player: int) -> np.ndarray:
        """Payoff matrix of ``player`` indexed as (own action, opponent action)."""
        if _player_index(player) == 0:
            return self.payoff
        return -self.payoff.T

    def scaled(self, c: float) -> "NormalFormGame":
        return NormalFormGame(c * self.payoff, name=self.name, action_names=self.action_names)


@dataclass(frozen=True)
class MixedProfile:
    """One probability vector per player (last axis = actions)."""

    pi_1: np.ndarray
    pi_2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi_1", np.asarray(self.pi_1, dtype=float))
        object.__setattr__(self, "pi_2", np.asarray(self.pi_2, dtype=float))

    def strategy(self, player: int) -> np.ndarray:
        return self.pi_1 if _player_index(player) == 0 else self.pi_2

    def opponent(self, player: int) -> np.ndarray:
        return self.pi_2 if _player_index(player) == 0 else self.pi_1

    def validate(self, tol: float = SIMPLEX_TOL) -> "MixedProfile":
        for name, vec in (("pi_1", self.pi_1), ("pi_2", self.pi_2)):
            if not is_simplex(vec, tol):
                raise ValueError(f"{name} is not a probability vector: {vec}")
        return self


def is_simplex(vec: np.ndarray, tol: float = SIMPLEX_TOL) -> bool:
    vec = np.asarray(vec, dtype=float)
    return bool(
        np.all(np.isfinite(vec))
        and np.all(vec >= -tol)
        and np.all(np.abs(vec.sum(axis=-1) - 1.0) <= tol * max(1, vec.shape[-1]))
    )


def uniform_profile(game: NormalFormGame) -> MixedProfile:
    return MixedProfile(
        np.full(game.actions_p1, 1.0 / game.actions_p1),
        np.full(game.actions_p2, 1.0 / game.actions_p2),
    )


def random_profile(game: NormalFormGame, rng: np.random.Generator, size: int | None = None) -> MixedProfile:
    """Uniformly distributed interior profile (flat Dirichlet per player)."""
    shape = () if size is None else (size,)
    pi_1 = rng.dirichlet(np.ones(game.actions_p1), size=shape or None)
    pi_2 = rng.dirichlet(np.ones(game.actions_p2), size=shape or None)
    return MixedProfile(pi_1, pi_2)


def _player_index(player: int) -> int:
    if player not in (1, 2):
        raise ValueError(f"player must be 1 or 2, got {player!r}")
    return player - 1


def _check_shapes(game: NormalFormGame, profile: MixedProfile) -> None:
    if profile.pi_1.shape[-1] != game.actions_p1 or profile.pi_2.shape[-1] != game.actions_p2:
        raise ShapeError(
            f"profile shapes {profile.pi_1.shape}/{profile.pi_2.shape} do not match "
            f"game with {game.actions_p1}x{game.actions_p2} actions"
        )


def _rowdot(matrix: np.ndarray, vec: np.ndarray) -> np.ndarray:
    # Elementwise multiply-sum keeps every replicate's arithmetic independent of
    # the batch size (BLAS kernels may change with shape).
    return (matrix * vec[..., None, :]).sum(axis=-1)


def action_payoffs(game: NormalFormGame, profile: MixedProfile, player: int) -> np.ndarray:
    """Expected payoff of every pure action of ``player`` against the opponent's mix."""
    _check_shapes(game, profile)
    return _rowdot(game.payoff_for(player), profile.opponent(player))


def expected_payoff(game: NormalFormGame, profile: MixedProfile, player: int) -> np.ndarray | float:
    u = action_payoffs(game, profile, player)
    value = (profile.strategy(player) * u).sum(axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def advantages(game: NormalFormGame, profile: MixedProfile, player: int) -> np.ndarray:
    """Per-action payoff minus the player's current mixed-strategy value."""
    u = action_payoffs(game, profile, player)
    mean = (profile.strategy(player) * u).sum(axis=-1, keepdims=True)
    return u - mean


def best_response_gain(game: NormalFormGame, profile: MixedProfile, player: int) -> np.ndarray | float:
    u = action_payoffs(game, profile, player)
    gain = u.max(axis=-1) - (profile.strategy(player) * u).sum(axis=-1)
    return float(gain) if np.ndim(gain) == 0 else gain


def nash_conv(game: NormalFormGame, profile: MixedProfile) -> np.ndarray | float:
    """Sum over players of the best-response improvement; zero exactly at Nash."""
    return best_response_gain(game, profile, 1) + best_response_gain(game, profile, 2)


# ---------------------------------------------------------------------------
# Rock-paper-scissors family
# ---------------------------------------------------------------------------

RPS_ACTIONS = ("R", "P", "S")


@dataclass(frozen=True)
class RpsParams:
    """Matchup weights: a_rp for Rock-vs-Paper, a_ps for Paper-vs-Scissors, a_sr for Scissors-vs-Rock."""

    a_rp: float = 1.0
    a_ps: float = 1.0
    a_sr: float = 1.0
    with_fourth_action: bool = False

    def __post_init__(self):
        if not all(np.isfinite([self.a_rp, self.a_ps, self.a_sr])):
            raise ConfigError(f"RPS parameters must be finite: {self}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.a_rp, self.a_ps, self.a_sr)


def build_rps(params: RpsParams) -> NormalFormGame:
    """Weighted RPS: the winner of each matchup receives that matchup's weight.

    Paper beats Rock (weight a_rp), Scissors beats Paper (a_ps), Rock beats
    Scissors (a_sr).  The interior equilibrium is (a_ps, a_sr, a_rp) / sum for
    positive weights.  With ``with_fourth_action`` a neutral action W is
    appended whose payoff is zero against everything.
    """
    R, P, S = 0, 1, 2
    U = np.zeros((3, 3))
    U[P, R], U[R, P] = params.a_rp, -params.a_rp
    U[S, P], U[P, S] = params.a_ps, -params.a_ps
    U[R, S], U[S, R] = params.a_sr, -params.a_sr
    names = RPS_ACTIONS
    if params.with_fourth_action:
        U = np.pad(U, ((0, 1), (0, 1)))
        names = names + ("W",)
    label = "brps_w" if params.with_fourth_action else "rps"
    return NormalFormGame(U, name=label, action_names=names)


def rps_equilibrium(params: RpsParams) -> np.ndarray:
    """Closed-form interior equilibrium of the 3-action weighted RPS."""
    w = np.array([params.a_ps, params.a_sr, params.a_rp], dtype=float)
    return w / w.sum()


GAME_BUILDERS = {
    "rps": lambda: build_rps(RpsParams(1.0, 1.0, 1.0)),
    "brps": lambda: build_rps(RpsParams(12.0, 1.0, 1.0)),
    "brps_w": lambda: build_rps(RpsParams(12.0, 1.0, 1.0, with_fourth_action=True)),
}


def build_game(name: str, params: Sequence[float] | None = None) -> NormalFormGame:
    """Look up a normal-form game by CLI name, optionally overriding its weights."""
    if name not in GAME_BUILDERS:
        raise ConfigError(f"unknown normal-form game {name!r}; choose from {sorted(GAME_BUILDERS)}")
    if params is None:
        return GAME_BUILDERS[name]()
    if len(params) != 3:
        raise ConfigError(f"RPS games take three parameters, got {list(params)}")
    return build_rps(RpsParams(*map(float, params), with_fourth_action=name == "brps_w"))


# ---------------------------------------------------------------------------
# Nonstationary schedules
# ---------------------------------------------------------------------------

SCHEDULE_MODES = ("static", "direct", "continuous")


@dataclass(frozen=True)
class ParamSchedule:
    """Piecewise parameter process over iterations.

    ``direct``: stage k holds its parameters for its duration.
    ``continuous``: stage 0 is held for its duration; each later stage is a
    linear ramp from the previous stage's parameters to its own, lasting its
    duration.  ``static`` uses the first stage forever.  After the last stage
    the final parameters are held.
    """

    mode: str
    stages: tuple[tuple[tuple[float, ...], int], ...]
    _bounds: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in SCHEDULE_MODES:
            raise ConfigError(f"schedule mode must be one of {SCHEDULE_MODES}, got {self.mode!r}")
        if not self.stages:
            raise ConfigError("schedule has no stages")
        stages = tuple((tuple(float(p) for p in params), int(d)) for params, d in self.stages)
        widths = {len(p) for p, _ in stages}
        if len(widths) != 1:
            raise ConfigError("all schedule stages need the same number of parameters")
        if any(d <= 0 for _, d in stages):
            raise ConfigError("stage durations must be positive")
        object.__setattr__(self, "stages", stages)
        object.__setattr__(self, "_bounds", np.cumsum([d for _, d in stages]))

    @classmethod
    def static(cls, params: Sequence[float]) -> "ParamSchedule":
        return cls("static", ((tuple(params), 1),))

    @property
    def total_length(self) -> int:
        return int(self._bounds[-1])

    def stage_index(self, t: int) -> int:
        if self.mode == "static":
            return 0
        return int(min(np.searchsorted(self._bounds, t, side="right"), len(self.stages) - 1))

    def stage_starts(self) -> list[int]:
        return [0] + [int(b) for b in self._bounds[:-1]]

    def params_at(self, t: int) -> tuple[float, ...]:
        if t < 0:
            raise ValueError("t must be non-negative")
        k = self.stage_index(t)
        params = self.stages[k][0]
        if self.mode != "continuous" or k == 0 or t >= self._bounds[-1]:
            return params
        start = self._bounds[k - 1]
        frac = (t - start) / self.stages[k][1]
        prev = np.array(self.stages[k - 1][0])
        return tuple(prev + frac * (np.array(params) - prev))


def game_at(schedule: ParamSchedule, t: int, with_fourth_action: bool = False) -> NormalFormGame:
    """Instantaneous RPS-family game of a nonstationary schedule."""
    return build_rps(RpsParams(*schedule.params_at(t), with_fourth_action=with_fourth_action))


def rps_case_schedule(case: int) -> ParamSchedule:
    """The four nonstationary RPS cases: 1/3 direct, 2/4 continuous; 3/4 use half-length stages."""
    if case not in (1, 2, 3, 4):
        raise ConfigError(f"RPS schedule case must be 1-4, got {case}")
    length = 2500 if case in (1, 2) else 1250
    mode = "direct" if case in (1, 3) else "continuous"
    path = ((12.0, 1.0, 1.0), (6.5, 6.5, 1.0), (1.0, 12.0, 1.0))
    return ParamSchedule(mode, tuple((p, length) for p in path))
