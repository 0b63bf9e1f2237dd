"""BNN vector fields, their noisy estimates, and the baseline replicator fields.

Normal-form fields act on one player's simplex; extensive-form fields act on
the flat slot vector of a behaviour profile (see :mod:`bnnlab.efg`).  Noise
enters as one independent draw per action, added to the observed payoffs
before the positive part is taken.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import efg
from .games import ConfigError, MixedProfile, NormalFormGame, action_payoffs, advantages
from .specs import NoiseSpec

FLOOR = 1e-9


class NumericalError(FloatingPointError):
    """A non-finite value appeared during a run; ``state`` holds the offending arrays."""

    def __init__(self, message: str, state: dict | None = None):
        super().__init__(message)
        self.state = state or {}


def seed_streams(seed: int, n: int = 3) -> list[np.random.Generator]:
    """Independent generators for (initial state, payoff noise, trajectory sampling)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


class NoiseModel:
    """Additive payoff noise with standard deviation ``sigma``.

    ``uniform_bounded`` draws from U(-sqrt(3) sigma, sqrt(3) sigma), which has
    the same variance as the Gaussian default.
    """

    def __init__(self, sigma: float = 0.0, distribution: str = "gaussian",
                 rng: np.random.Generator | int | None = None):
        spec = NoiseSpec(float(sigma), distribution)
        self.sigma = spec.sigma
        self.distribution = spec.distribution
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    @classmethod
    def from_spec(cls, spec: NoiseSpec, rng=None) -> "NoiseModel":
        return cls(spec.sigma, spec.distribution, rng)

    def draw(self, shape) -> np.ndarray:
        return sample_noise(self.rng, self.sigma, self.distribution, shape)


def sample_noise(rng: np.random.Generator, sigma: float, distribution: str, shape) -> np.ndarray:
    if distribution == "gaussian":
        return sigma * rng.standard_normal(shape)
    half = np.sqrt(3.0) * sigma
    return rng.uniform(-half, half, shape)


class NoiseStream:
    """Per-replicate noise for batched runs.

    Each replicate owns its generator and draws ``dim`` values per step.  Draws
    are buffered in blocks, which does not change the sequence a generator
    produces, so a replicate sees identical noise whether it runs alone or in
    a batch.
    """

    def __init__(self, rngs: list[np.random.Generator], spec: NoiseSpec, dim: int, block: int = 512):
        self.rngs = rngs
        self.spec = spec
        self.dim = dim
        self.block = block
        self._buf = None
        self._pos = block

    def next(self) -> np.ndarray:
        if self._pos == self.block:
            self._buf = np.stack([
                sample_noise(r, self.spec.sigma, self.spec.distribution, (self.block, self.dim))
                for r in self.rngs
            ])
            self._pos = 0
        out = self._buf[:, self._pos, :]
        self._pos += 1
        return out


@dataclass(frozen=True)
class FieldSample:
    direction: np.ndarray
    bias_free_direction: np.ndarray
    noise_draws: np.ndarray


@dataclass(frozen=True)
class RegRdConfig:
    """Reference-regularized replicator: strength ``lam``, reference reset every ``ref_interval`` steps."""

    lam: float = 0.1
    ref_interval: int = 500
    reference: MixedProfile | None = None

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigError("regularization strength must be >= 0")
        if self.ref_interval < 1:
            raise ConfigError("reference interval must be >= 1")
        if self.reference is not None:
            for vec in (self.reference.pi_1, self.reference.pi_2):
                _require_interior(vec)


def _require_interior(vec: np.ndarray) -> None:
    vec = np.asarray(vec)
    if np.any(vec <= 0) or np.any(np.abs(vec.sum(axis=-1) - 1) > 1e-9):
        raise ConfigError("reference policy must be an interior probability vector")


# ---------------------------------------------------------------------------
# Normal form
# ---------------------------------------------------------------------------

def bnn_direction(adv: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """[adv]_+ - pi * sum [adv]_+ along the last axis."""
    pos = np.maximum(adv, 0.0)
    return pos - pi * pos.sum(axis=-1, keepdims=True)


def bnn_field(game: NormalFormGame, profile: MixedProfile, player: int) -> np.ndarray:
    return bnn_direction(advantages(game, profile, player), profile.strategy(player))


def perturb_advantages(adv: np.ndarray, pi: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Advantages of the noisy payoffs u + xi, re-centred on the noisy mean sum pi (u + xi)."""
    return adv + (xi - (pi * xi).sum(axis=-1, keepdims=True))


def noisy_bnn_field(game: NormalFormGame, profile: MixedProfile, player: int, noise: NoiseModel) -> FieldSample:
    pi = profile.strategy(player)
    adv = advantages(game, profile, player)
    exact = bnn_direction(adv, pi)
    if noise.sigma == 0:
        return FieldSample(exact, exact, np.zeros_like(pi))
    xi = noise.draw(pi.shape)
    return FieldSample(bnn_direction(perturb_advantages(adv, pi, xi), pi), exact, xi)


def replicator_field(game: NormalFormGame, profile: MixedProfile, player: int) -> np.ndarray:
    return profile.strategy(player) * advantages(game, profile, player)


def regularized_replicator_field(game: NormalFormGame, profile: MixedProfile, player: int,
                                 cfg: RegRdConfig, reference: np.ndarray | None = None) -> np.ndarray:
    """Replicator on payoffs u(a) - lam * log(pi(a) / ref(a)), re-centred on the perturbed mean."""
    pi = profile.strategy(player)
    if reference is None:
        if cfg.reference is None:
            raise ConfigError("regularized replicator needs a reference profile")
        reference = cfg.reference.strategy(player)
    _require_interior(reference)
    u = action_payoffs(game, profile, player)
    return _regularized_direction(u, pi, reference, cfg.lam)


def _regularized_direction(u, pi, reference, lam):
    if lam == 0:
        pert = u
    else:
        pert = u - lam * np.log(pi / reference)
    return pi * (pert - (pi * pert).sum(axis=-1, keepdims=True))


def step(profile: np.ndarray, direction: np.ndarray, eta: float, floor: float = FLOOR):
    """Euler step on the simplex followed by floor-and-renormalize.

    Returns ``(new_profile, floored)`` where ``floored`` flags (per replicate)
    whether any coordinate had to be lifted to the floor.
    """
    direction = np.asarray(direction, dtype=float)
    if not np.all(np.isfinite(direction)):
        raise NumericalError("non-finite update direction", {"profile": np.array(profile), "direction": direction})
    new = profile + eta * direction
    low = new < floor
    floored = low.any(axis=-1)
    if np.any(low):
        new = np.maximum(new, floor)
    return new / new.sum(axis=-1, keepdims=True), floored


# ---------------------------------------------------------------------------
# Extensive form
# ---------------------------------------------------------------------------

def _player_mask(tree: efg.GameTree, player: int | None) -> np.ndarray | None:
    if player is None:
        return None
    return tree.slot_player == player


def efg_bnn_direction(tree: efg.GameTree, adv: np.ndarray, profile: np.ndarray, slot_reach: np.ndarray) -> np.ndarray:
    pos = np.maximum(adv, 0.0)
    return slot_reach * (pos - profile * efg.segment_sum(tree, pos, expand=True))


def efg_bnn_field(tree: efg.GameTree, profile: np.ndarray, cf: efg.CfValueTable | None = None,
                  reach: efg.ReachTable | None = None, player: int | None = None) -> np.ndarray:
    """Reach-weighted BNN direction at every information set (flat slot vector).

    With ``player`` given, the other player's slots are zero.
    """
    profile = np.asarray(profile, dtype=float)
    if cf is None:
        cf = efg.compute_cf_values(tree, profile, reach)
    field = efg_bnn_direction(tree, cf.advantages, profile, cf.slot_reach)
    mask = _player_mask(tree, player)
    return field if mask is None else np.where(mask, field, 0.0)


def noisy_efg_bnn_field(tree: efg.GameTree, profile: np.ndarray, noise: NoiseModel,
                        player: int | None = None, cf: efg.CfValueTable | None = None) -> FieldSample:
    """Noisy counterfactual values: one draw per (infoset, action) added before the positive part."""
    profile = np.asarray(profile, dtype=float)
    if cf is None:
        cf = efg.compute_cf_values(tree, profile)
    exact = efg_bnn_direction(tree, cf.advantages, profile, cf.slot_reach)
    if noise.sigma == 0:
        xi = np.zeros_like(profile)
        direction = exact
    else:
        xi = noise.draw(profile.shape)
        noisy = efg_perturb_advantages(tree, cf.advantages, profile, xi)
        direction = efg_bnn_direction(tree, noisy, profile, cf.slot_reach)
    mask = _player_mask(tree, player)
    if mask is not None:
        direction, exact = np.where(mask, direction, 0.0), np.where(mask, exact, 0.0)
    return FieldSample(direction, exact, xi)


def efg_perturb_advantages(tree: efg.GameTree, adv: np.ndarray, profile: np.ndarray, xi: np.ndarray) -> np.ndarray:
    return adv + (xi - efg.segment_sum(tree, profile * xi, expand=True))


def efg_replicator_direction(tree, adv, profile, slot_reach, lam=0.0, reference=None):
    """Reach-weighted replicator on (optionally KL-perturbed) counterfactual advantages."""
    pert = adv if lam == 0 else adv - lam * np.log(profile / reference)
    centred = pert - efg.segment_sum(tree, profile * pert, expand=True)
    return slot_reach * profile * centred


def efg_step(tree: efg.GameTree, profile: np.ndarray, direction: np.ndarray, eta: float, floor: float = FLOOR):
    """Per-infoset Euler step with floor-and-renormalize; returns ``(profile, floored)``."""
    if not np.all(np.isfinite(direction)):
        raise NumericalError("non-finite update direction", {"profile": np.array(profile), "direction": direction})
    new = profile + eta * direction
    low = new < floor
    floored = low.any(axis=-1)
    if np.any(low):
        new = np.maximum(new, floor)
    return new / efg.segment_sum(tree, new, expand=True), floored


def safe_step_bound(game: NormalFormGame, profile: MixedProfile) -> float:
    """Largest eta keeping noiseless BNN strictly interior: eta * S < 1 for both players."""
    s = max(np.maximum(advantages(game, profile, p), 0).sum() for p in (1, 2))
    return np.inf if s == 0 else 1.0 / s
