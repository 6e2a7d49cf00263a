"""Noise-scale sequence construction.

Two builders: the quantile-matching construction, where consecutive levels
share a fixed probability-mass overlap of their squared-norm distributions,
and the plain log-linear (geometric) baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from htdsm.distributions import empirical_norm_quantile
from htdsm.specfun import inv_reg_lower_inc_gamma

__all__ = ["ScheduleError", "NoiseSchedule", "quantile_matched_schedule", "geometric_schedule"]


class ScheduleError(ValueError):
    """Degenerate inputs produced a non-descending or empty schedule."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Descending noise scales plus the parameters that generated them.

    sigmas is strictly descending; delta is the non-overlap proportion for
    quantile-matched schedules and None for geometric ones.
    """

    sigmas: tuple
    beta: float
    n: int
    delta: float | None
    kind: str

    def __post_init__(self) -> None:
        sigmas = tuple(float(s) for s in self.sigmas)
        object.__setattr__(self, "sigmas", sigmas)
        if len(sigmas) < 1:
            raise ScheduleError("schedule needs at least one level")
        if any(not math.isfinite(s) or s <= 0.0 for s in sigmas):
            raise ScheduleError(f"sigmas must be finite and positive: {sigmas}")
        if any(a <= b for a, b in zip(sigmas, sigmas[1:])):
            raise ScheduleError(f"sigmas must be strictly descending: {sigmas}")
        if self.kind not in ("quantile_matched", "geometric"):
            raise ScheduleError(f"unknown schedule kind {self.kind!r}")

    def __len__(self) -> int:
        return len(self.sigmas)

    @property
    def sigma_max(self) -> float:
        return self.sigmas[0]

    @property
    def sigma_min(self) -> float:
        return self.sigmas[-1]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "beta": self.beta,
            "n": self.n,
            "delta": self.delta,
            "sigmas": list(self.sigmas),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(
            sigmas=tuple(d["sigmas"]),
            beta=d["beta"],
            n=d["n"],
            delta=d.get("delta"),
            kind=d["kind"],
        )


def _matched_ratio_model(beta: float, delta: float) -> float:
    """sigma_{i+1}/sigma_i under the GG norm model.

    The upper quantile of level i is n sigma_i^2 u^{2/beta} with
    u = Pinv(1/beta, (1+delta)/2); equating it to the lower quantile of the
    next level gives sigma_{i+1} = sigma_i (u/l)^{1/beta}, a constant ratio.
    """
    upper = inv_reg_lower_inc_gamma(1.0 / beta, (1.0 + delta) / 2.0)
    lower = inv_reg_lower_inc_gamma(1.0 / beta, (1.0 - delta) / 2.0)
    return (upper / lower) ** (1.0 / beta)


def _matched_ratio_empirical(
    beta: float, n: int, delta: float, mc_count: int, rng: np.random.Generator
) -> float:
    """Same ratio with quantiles taken from the true-sum Monte Carlo.

    The true squared-norm sum scales exactly as sigma^2, so two unit-scale
    quantiles determine the whole sequence.
    """
    upper = empirical_norm_quantile(n, 1.0, beta, (1.0 + delta) / 2.0, mc_count, rng)
    lower = empirical_norm_quantile(n, 1.0, beta, (1.0 - delta) / 2.0, mc_count, rng)
    return math.sqrt(upper / lower)


def quantile_matched_schedule(
    beta: float,
    n: int,
    delta: float,
    sigma_min: float,
    sigma_max: float,
    *,
    empirical: bool = False,
    mc_count: int = 100_000,
    rng: np.random.Generator | None = None,
) -> NoiseSchedule:
    """Build a descending schedule with equal-overlap adjacent norm distributions.

    Construction ascends from sigma_min, multiplying by the matched ratio
    until the next level would exceed sigma_max; the result is reversed for
    annealed sampling. With delta = 0.9 adjacent levels share 5% of
    probability mass in each tail (quantiles 0.95 / 0.05).

    With empirical=True the two defining quantiles come from the true-sum
    Monte Carlo rather than the scaled GG model.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not 0.0 < sigma_min < sigma_max:
        raise ValueError(
            f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"
        )
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if beta <= 0.0:
        raise ValueError(f"beta must be positive, got {beta}")

    if empirical:
        if rng is None:
            rng = np.random.default_rng(0)
        ratio = _matched_ratio_empirical(beta, n, delta, mc_count, rng)
    else:
        ratio = _matched_ratio_model(beta, delta)
    if not math.isfinite(ratio) or ratio <= 1.0:
        raise ScheduleError(f"degenerate level ratio {ratio} for delta={delta}")

    ascending = [float(sigma_min)]
    while True:
        nxt = ascending[-1] * ratio
        if nxt > sigma_max * (1.0 + 1e-12):
            break
        ascending.append(min(nxt, sigma_max))
    return NoiseSchedule(
        sigmas=tuple(reversed(ascending)),
        beta=float(beta),
        n=int(n),
        delta=float(delta),
        kind="quantile_matched",
    )


def geometric_schedule(
    sigma_max: float,
    sigma_min: float,
    count: int,
    *,
    n: int = 2,
    beta: float = 2.0,
) -> NoiseSchedule:
    """Descending schedule sampled linearly in log space between the endpoints."""
    if count < 2:
        raise ValueError(f"count must be >= 2, got {count}")
    if not 0.0 < sigma_min < sigma_max:
        raise ValueError(
            f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"
        )
    sigmas = np.exp(np.linspace(math.log(sigma_max), math.log(sigma_min), count))
    sigmas[0] = sigma_max
    sigmas[-1] = sigma_min
    return NoiseSchedule(
        sigmas=tuple(float(s) for s in sigmas),
        beta=float(beta),
        n=int(n),
        delta=None,
        kind="geometric",
    )
