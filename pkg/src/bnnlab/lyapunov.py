"""Lyapunov diagnostics: potentials, dissipation checks, bias estimates and rate fits."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import efg
from .dynamics import NoiseModel, bnn_direction, efg_bnn_field, perturb_advantages
from .games import MixedProfile, NormalFormGame, advantages, nash_conv

BOUNDARY_TOL = 1e-6


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------

def gamma_nfg(game: NormalFormGame, profile: MixedProfile, player: int) -> np.ndarray | float:
    """Half the squared norm of the positive advantages."""
    pos = np.maximum(advantages(game, profile, player), 0.0)
    out = 0.5 * (pos**2).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def s_mass(game: NormalFormGame, profile: MixedProfile, player: int) -> np.ndarray | float:
    """Total positive-advantage mass."""
    out = np.maximum(advantages(game, profile, player), 0.0).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def gamma_total(game: NormalFormGame, profile: MixedProfile) -> np.ndarray | float:
    return gamma_nfg(game, profile, 1) + gamma_nfg(game, profile, 2)


@dataclass(frozen=True)
class LyapunovReading:
    t: int
    gamma: tuple[float, float]
    s_mass: tuple[float, float]
    nash_conv: float
    v_efg: float | None = None
    min_external_reach: float | None = None

    @property
    def gamma_combined(self) -> float:
        return self.v_efg if self.v_efg is not None else self.gamma[0] + self.gamma[1]


def reading_nfg(game: NormalFormGame, profile: MixedProfile, t: int = 0) -> LyapunovReading:
    return LyapunovReading(
        t,
        (gamma_nfg(game, profile, 1), gamma_nfg(game, profile, 2)),
        (s_mass(game, profile, 1), s_mass(game, profile, 2)),
        float(nash_conv(game, profile)),
    )


def reading_efg(tree: efg.GameTree, profile: np.ndarray, t: int = 0) -> LyapunovReading:
    cf = efg.compute_cf_values(tree, profile)
    pot = efg.efg_potential(tree, profile, cf)
    s = tuple(float(pot.s_mass[tree.infoset_player == p].sum()) for p in (1, 2))
    return LyapunovReading(
        t,
        (float(pot.per_player[1]), float(pot.per_player[2])),
        s,
        float(efg.nash_conv_efg(tree, profile)),
        v_efg=float(pot.total),
        min_external_reach=float(cf.external_reach.min()),
    )


# ---------------------------------------------------------------------------
# Dissipation identity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DissipationResult:
    finite_difference: float
    predicted: float
    rel_error: float


def _rel(lhs: float, rhs: float) -> float:
    scale = max(abs(lhs), abs(rhs))
    return 0.0 if scale == 0 else abs(lhs - rhs) / abs(rhs) if rhs != 0 else np.inf


def dissipation_check(game_or_tree, profile, h: float = 1e-6) -> DissipationResult:
    """Compare a forward-difference time derivative of the potential with its predicted rate.

    Normal form: d(Gamma_1 + Gamma_2)/dt against -2 (S_1 Gamma_1 + S_2 Gamma_2)
    under the joint noiseless BNN flow.  Extensive form: dV/dt against
    -sum_x 2 S^x Gamma^x under the reach-weighted flow.

    Raises:
        ValueError: if ``h`` exceeds 1e-5 or the profile is within 1e-6 of the boundary.
    """
    if not 0 < h <= 1e-5:
        raise ValueError("step h must lie in (0, 1e-5]")
    if isinstance(game_or_tree, efg.GameTree):
        tree = game_or_tree
        x = np.asarray(profile, dtype=float)
        if x.min() < BOUNDARY_TOL:
            raise ValueError("dissipation check needs an interior profile")
        cf = efg.compute_cf_values(tree, x)
        pot = efg.efg_potential(tree, x, cf)
        moved = efg.efg_potential(tree, x + h * efg_bnn_field(tree, x, cf)).total
        lhs = (float(moved) - float(pot.total)) / h
        rhs = -2.0 * float((pot.s_mass * pot.gamma).sum())
        return DissipationResult(lhs, rhs, _rel(lhs, rhs))
    game = game_or_tree
    if min(profile.pi_1.min(), profile.pi_2.min()) < BOUNDARY_TOL:
        raise ValueError("dissipation check needs an interior profile")
    g = gamma_total(game, profile)
    adv = [advantages(game, profile, p) for p in (1, 2)]
    h1 = bnn_direction(adv[0], profile.pi_1)
    h2 = bnn_direction(adv[1], profile.pi_2)
    moved = MixedProfile(profile.pi_1 + h * h1, profile.pi_2 + h * h2)
    lhs = (gamma_total(game, moved) - g) / h
    rhs = -2.0 * sum(
        np.maximum(a, 0).sum() * 0.5 * (np.maximum(a, 0) ** 2).sum() for a in adv
    )
    return DissipationResult(float(lhs), float(rhs), _rel(float(lhs), float(rhs)))


# ---------------------------------------------------------------------------
# Bias of the noisy field
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BiasEstimate:
    """Monte-Carlo bias of the noisy BNN field at one state.

    ``identity_residual`` is beta(a) - (delta(a) - pi(a) sum_b delta(b)),
    which vanishes up to rounding because it holds sample by sample.
    """

    beta: np.ndarray
    beta_se: np.ndarray
    delta: np.ndarray
    delta_se: np.ndarray
    identity_residual: np.ndarray
    advantage_noise_sd: np.ndarray
    n_samples: int
    sigma: float


def advantage_noise_sd(pi: np.ndarray, sigma: float) -> np.ndarray:
    """Standard deviation of xi(a) - sum_b pi(b) xi(b) for i.i.d. xi with std sigma."""
    pi = np.asarray(pi, dtype=float)
    return sigma * np.sqrt((1 - pi) ** 2 + (pi**2).sum() - pi**2)


def estimate_bias(game: NormalFormGame, profile: MixedProfile, player: int,
                  noise: NoiseModel, n_samples: int = 100_000, chunk: int = 20_000) -> BiasEstimate:
    pi = profile.strategy(player)
    adv = advantages(game, profile, player)
    k = pi.shape[-1]
    sd = advantage_noise_sd(pi, noise.sigma)
    if noise.sigma == 0:
        z = np.zeros(k)
        return BiasEstimate(z, z, z, z, z, sd, 0, 0.0)
    exact = bnn_direction(adv, pi)
    exact_pos = np.maximum(adv, 0.0)
    sums = np.zeros((4, k))
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        xi = noise.draw((m, k))
        noisy = perturb_advantages(adv, pi, xi)
        gap = np.maximum(noisy, 0.0) - exact_pos
        dev = bnn_direction(noisy, pi) - exact
        sums += np.stack([dev.sum(0), (dev**2).sum(0), gap.sum(0), (gap**2).sum(0)])
        done += m
    n = float(n_samples)
    beta, delta = sums[0] / n, sums[2] / n
    beta_se = np.sqrt(np.maximum(sums[1] / n - beta**2, 0) / (n - 1))
    delta_se = np.sqrt(np.maximum(sums[3] / n - delta**2, 0) / (n - 1))
    residual = beta - (delta - pi * delta.sum())
    return BiasEstimate(beta, beta_se, delta, delta_se, residual, sd, n_samples, noise.sigma)


def jensen_gap(advantage: float, sigma: float, rng: np.random.Generator,
               n_samples: int = 100_000, distribution: str = "gaussian") -> tuple[float, float]:
    """Monte-Carlo E[advantage + eps]_+ - [advantage]_+ with eps of std ``sigma``; returns (mean, se)."""
    eps = NoiseModel(sigma, distribution, rng).draw(n_samples)
    gap = np.maximum(advantage + eps, 0.0) - max(advantage, 0.0)
    return float(gap.mean()), float(gap.std(ddof=1) / np.sqrt(n_samples))


# ---------------------------------------------------------------------------
# Drift inequality
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DriftCheck:
    residuals: np.ndarray
    c3: float
    conforming_fraction: float
    few_seeds: bool


def drift_check(gamma: np.ndarray, eta: np.ndarray, sigma: float, n_actions: int,
                quantile: float = 0.95) -> DriftCheck:
    """Residuals of the one-step drift bound on the seed-mean potential.

    Args:
        gamma: potential per consecutive iteration and seed, shape (T, seeds).
        eta: step size used between consecutive rows, shape (T - 1,) or (T,).
        sigma: noise level.
        n_actions: |A| in the noise term.

    Returns:
        residuals g_{t+1} - [g_t - 2 sqrt2 eta g^{3/2} + (|A|-1) sqrt(2|A|) sigma eta g^{1/2}],
        the smallest non-negative C3 with residual <= C3 eta^2 at ``quantile`` of steps,
        and the fraction that conforms.
    """
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim == 1:
        gamma = gamma[:, None]
    few = gamma.shape[1] < 30
    if few:
        warnings.warn("drift check with fewer than 30 seeds; seed means are noisy", stacklevel=2)
    g = gamma.mean(axis=1)
    eta = np.asarray(eta, dtype=float)[: len(g) - 1]
    a = n_actions
    predicted = g[:-1] - 2 * np.sqrt(2) * eta * g[:-1] ** 1.5 + (a - 1) * np.sqrt(2 * a) * sigma * eta * np.sqrt(g[:-1])
    residual = g[1:] - predicted
    c3 = max(float(np.quantile(residual / eta**2, quantile)), 0.0)
    frac = float(np.mean(residual <= c3 * eta**2 + 1e-15))
    return DriftCheck(residual, c3, frac, few)


# ---------------------------------------------------------------------------
# Rate fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    window: tuple[float, float]
    slope: float
    intercept: float
    r_squared: float
    floor_estimate: float
    flags: tuple[str, ...] = field(default=())


def fit_rate(t: np.ndarray, g: np.ndarray, window: tuple[float, float] | None = None,
             floor_factor: float = 3.0, start_fraction: float = 0.1, tail_fraction: float = 0.1) -> RateFit:
    """Least-squares slope of log g against log t.

    Default window: from t_end * ``start_fraction`` to the last t before the
    series first drops below ``floor_factor`` times its tail floor (the mean
    over the last ``tail_fraction`` of iterations).  A plateaued series, where
    no such drop leaves at least three points, is fitted over the whole
    [t_start, t_end] range and flagged.  Non-positive values shrink the window
    to the positive prefix and are flagged.
    """
    t = np.asarray(t, dtype=float)
    g = np.asarray(g, dtype=float)
    flags: list[str] = []
    t_end = t[-1]
    floor = float(g[t >= t_end * (1 - tail_fraction)].mean())
    if window is None:
        start = t_end * start_fraction
        inside = t >= start
        below = np.nonzero(inside & (g < floor_factor * floor))[0]
        stop = t_end
        if below.size and below[0] > 0:
            stop = t[below[0] - 1]
        if np.count_nonzero(inside & (t <= stop)) < 3:
            flags.append("plateau")
            stop = t_end
        window = (start, stop)
    sel = (t >= window[0]) & (t <= window[1]) & (t > 0)
    if np.any(g[sel] <= 0):
        first_bad = np.nonzero(sel & (g <= 0))[0][0]
        sel &= np.arange(len(t)) < first_bad
        flags.append("non_positive")
        window = (window[0], t[first_bad - 1] if first_bad > 0 else window[0])
    if np.count_nonzero(sel) < 2:
        return RateFit(window, float("nan"), float("nan"), 0.0, floor, tuple(flags + ["too_short"]))
    x, y = np.log(t[sel]), np.log(g[sel])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - float((resid**2).sum()) / ss_tot)
    return RateFit((float(window[0]), float(window[1])), float(slope), float(intercept), r2, floor, tuple(flags))


# ---------------------------------------------------------------------------
# Centroid shift
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CentroidShift:
    gamma: float            # seed mean of Gamma at each seed's centroid
    per_seed: np.ndarray
    stationary: bool


def centroid_shift(centroids: np.ndarray, game: NormalFormGame,
                   tail_t: np.ndarray | None = None, tail_gamma: np.ndarray | None = None) -> CentroidShift:
    """Gamma (both players) at time-averaged tail profiles, one per seed.

    Args:
        centroids: flat profiles (seeds, |A_1| + |A_2|).
        tail_t, tail_gamma: optional seed-mean potential over the averaging
            window; a log-log slope below -0.2 there means the tail is still
            decaying, which is flagged.
    """
    centroids = np.atleast_2d(centroids)
    n1 = game.actions_p1
    prof = MixedProfile(centroids[:, :n1], centroids[:, n1:])
    per_seed = np.atleast_1d(gamma_total(game, prof))
    stationary = True
    if tail_gamma is not None and len(tail_gamma) > 2 and np.all(np.asarray(tail_gamma) > 0):
        slope = np.polyfit(np.log(tail_t), np.log(tail_gamma), 1)[0]
        stationary = bool(slope > -0.2)
    if not stationary:
        warnings.warn("tail is still decaying; centroid may not be stationary", stacklevel=2)
    return CentroidShift(float(per_seed.mean()), per_seed, stationary)
