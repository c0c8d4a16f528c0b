"""Stochastic feature augmentation (SFA).

A view of ``x`` is ``x * alpha + r`` with per-dimension ``alpha ~ N(1, sigma1)``
and ``r ~ N(0, sigma2)``; both sigmas are standard deviations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError


@dataclass(frozen=True)
class SfaParams:
    sigma1: float
    sigma2: float

    def __post_init__(self):
        for name in ("sigma1", "sigma2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class AugmentConfig:
    """Noise levels for the weak and strong views."""

    weak_sigma1: float = 0.1
    strong_sigma1: float = 0.25
    sigma2: float = 0.1
    weak: SfaParams = field(init=False)
    strong: SfaParams = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "weak", SfaParams(self.weak_sigma1, self.sigma2))
        object.__setattr__(self, "strong", SfaParams(self.strong_sigma1, self.sigma2))


DEFAULT_AUGMENT = AugmentConfig()


def sfa(x: np.ndarray, params: SfaParams, rng: np.random.Generator) -> np.ndarray:
    """Return one augmented view of ``x`` (any shape; noise is elementwise).

    A zero sigma skips its draw entirely, so ``sigma1 = sigma2 = 0`` returns
    an exact copy and leaves ``rng`` untouched.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise NumericError("sfa input contains non-finite values")
    out = x.copy()
    if params.sigma1 > 0:
        out = out * rng.normal(1.0, params.sigma1, size=x.shape)
    if params.sigma2 > 0:
        out = out + rng.normal(0.0, params.sigma2, size=x.shape)
    return out


def weak_view(x: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = DEFAULT_AUGMENT) -> np.ndarray:
    return sfa(x, cfg.weak, rng)


def strong_view(x: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = DEFAULT_AUGMENT) -> np.ndarray:
    return sfa(x, cfg.strong, rng)
