"""Parsers for the compact spec strings used on the command line and in config files.

Examples: ``power:c=1,t0=10``, ``const:0.05``, ``gauss:0.1``, ``uniform:0.2``,
``0..29`` or ``0,3,7`` for seeds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .games import ConfigError

NOISE_DISTRIBUTIONS = ("gaussian", "uniform_bounded")


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``c / (t + t0)**exponent`` (power) or a constant ``c``."""

    kind: str = "power"
    c: float = 1.0
    t0: float = 10.0
    exponent: float = 2.0 / 3.0

    def __post_init__(self):
        if self.kind not in ("power", "constant"):
            raise ConfigError(f"step schedule kind must be 'power' or 'constant', got {self.kind!r}")
        if not self.c > 0:
            raise ConfigError("step constant c must be positive")
        if self.kind == "power" and self.t0 < 1:
            raise ConfigError("power schedule needs t0 >= 1")

    def eta(self, t: int | np.ndarray) -> float | np.ndarray:
        if self.kind == "constant":
            return self.c if np.ndim(t) == 0 else np.full(np.shape(t), self.c)
        return self.c / (np.asarray(t, dtype=float) + self.t0) ** self.exponent

    @property
    def robbins_monro(self) -> bool:
        """Divergent sum and summable squares hold exactly when 1/2 < exponent <= 1."""
        return self.kind == "power" and 0.5 < self.exponent <= 1.0

    def spec(self) -> str:
        if self.kind == "constant":
            return f"const:{self.c:g}"
        return f"power:c={self.c:g},t0={self.t0:g}"


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    distribution: str = "gaussian"

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigError(f"noise sigma must be finite and >= 0, got {self.sigma}")
        if self.distribution not in NOISE_DISTRIBUTIONS:
            raise ConfigError(f"noise distribution must be one of {NOISE_DISTRIBUTIONS}")

    def spec(self) -> str:
        prefix = "gauss" if self.distribution == "gaussian" else "uniform"
        return f"{prefix}:{self.sigma:g}"


def _kv(body: str) -> dict[str, float]:
    out = {}
    for part in filter(None, body.split(",")):
        if "=" not in part:
            raise ConfigError(f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = _float(v)
    return out


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"not a number: {text!r}") from None


def parse_step_schedule(text: str) -> StepSchedule:
    kind, _, body = text.strip().partition(":")
    if kind == "power":
        params = _kv(body)
        unknown = set(params) - {"c", "t0"}
        if unknown:
            raise ConfigError(f"unknown power-schedule keys {sorted(unknown)}")
        return StepSchedule("power", params.get("c", 1.0), params.get("t0", 10.0))
    if kind in ("const", "constant"):
        return StepSchedule("constant", _float(body))
    raise ConfigError(f"cannot parse step schedule {text!r}; use power:c=..,t0=.. or const:<eta>")


def parse_noise(text: str) -> NoiseSpec:
    text = text.strip()
    kind, sep, body = text.partition(":")
    if not sep:
        return NoiseSpec(_float(text))
    if kind in ("gauss", "gaussian", "normal"):
        return NoiseSpec(_float(body), "gaussian")
    if kind in ("uniform", "uniform_bounded"):
        return NoiseSpec(_float(body), "uniform_bounded")
    raise ConfigError(f"cannot parse noise spec {text!r}; use gauss:<sigma> or uniform:<sigma>")


def parse_seeds(text: str) -> tuple[int, ...]:
    seeds: list[int] = []
    for part in filter(None, (p.strip() for p in str(text).split(","))):
        if ".." in part:
            lo, hi = part.split("..", 1)
            try:
                seeds.extend(range(int(lo), int(hi) + 1))
            except ValueError:
                raise ConfigError(f"bad seed range {part!r}") from None
        else:
            try:
                seeds.append(int(part))
            except ValueError:
                raise ConfigError(f"bad seed {part!r}") from None
    if not seeds:
        raise ConfigError("no seeds given")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    return tuple(seeds)


def format_seeds(seeds) -> str:
    seeds = list(seeds)
    if seeds == list(range(seeds[0], seeds[0] + len(seeds))) and len(seeds) > 2:
        return f"{seeds[0]}..{seeds[-1]}"
    return ",".join(map(str, seeds))
