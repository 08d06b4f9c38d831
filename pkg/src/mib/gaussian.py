"""Diagonal Gaussian latents: reparameterization, KL to N(0, I), product of experts.

A ``DiagonalGaussian`` stores the per-dimension standard deviation.  The
reparameterized sample multiplies noise by the std; the KL and the
product-of-experts formulas work with the variance std**2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .tensor import Tensor

STD_FLOOR = 1e-6
LOG_2PI = math.log(2.0 * math.pi)


class DiagonalGaussian:
    """N(mean, diag(std**2)); mean/std are (d,) or a row batch (n, d)."""

    def __init__(self, mean, std):
        mean, std = T.as_tensor(mean), T.as_tensor(std)
        if mean.shape != std.shape:
            raise ConfigurationError(f"mean {mean.shape} and std {std.shape} differ")
        if np.any(std.data <= 0):
            raise ConfigurationError("std must be strictly positive")
        self.mean = mean
        self.std = T.clip(std, STD_FLOOR, np.inf)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def var(self) -> Tensor:
        return self.std * self.std

    def __repr__(self) -> str:
        return f"DiagonalGaussian(shape={self.mean.shape})"


@dataclass(frozen=True)
class NoiseDraw:
    """Standard-normal noise and the seed it came from (None if unrecorded)."""

    eps: np.ndarray
    seed: int | None = None

    @classmethod
    def sample(cls, shape, rng: np.random.Generator, seed: int | None = None) -> "NoiseDraw":
        return cls(rng.standard_normal(shape), seed)

    @classmethod
    def zeros(cls, shape) -> "NoiseDraw":
        return cls(np.zeros(shape))


def reparameterize(g: DiagonalGaussian, noise: NoiseDraw | np.ndarray) -> Tensor:
    """z = mean + std * eps, differentiable in mean and std."""
    eps = noise.eps if isinstance(noise, NoiseDraw) else np.asarray(noise, dtype=float)
    if eps.shape != g.mean.shape:
        raise ConfigurationError(f"noise shape {eps.shape} does not match latent {g.mean.shape}")
    return g.mean + g.std * eps


def kl_to_standard(g: DiagonalGaussian) -> Tensor:
    """KL(N(mean, std^2) || N(0, I)) summed over the last axis.

    Returns a scalar tensor for a single Gaussian and an (n,) tensor for a batch.
    """
    var = g.var
    per_dim = g.mean * g.mean + var - 1.0 - T.log(var)
    return T.tsum(per_dim, axis=-1) * 0.5


def _log_density_diag(z: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    r = (z - mean) / std
    return -0.5 * (r * r + LOG_2PI + 2.0 * np.log(std)).sum(axis=-1)


def kl_monte_carlo_stats(g: DiagonalGaussian, n_samples: int,
                         rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo KL estimate and its standard error (0 when n_samples == 1)."""
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    mean = g.mean.data.reshape(-1)
    std = g.std.data.reshape(-1)
    z = mean + std * rng.standard_normal((n_samples, mean.size))
    terms = _log_density_diag(z, mean, std) - _log_density_diag(z, 0.0, np.ones_like(std))
    se = float(terms.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return float(terms.mean()), se


def kl_monte_carlo(g: DiagonalGaussian, n_samples: int, rng: np.random.Generator) -> float:
    """Unbiased sample estimate of KL(g || N(0, I)) from ``n_samples`` draws of g."""
    return kl_monte_carlo_stats(g, n_samples, rng)[0]


def poe_fuse(experts: Sequence[DiagonalGaussian]) -> DiagonalGaussian:
    """Precision-weighted product of the experts and a standard-normal prior expert.

    var = 1 / (1 + sum_m 1/var_m),  mean = var * sum_m mean_m / var_m
    """
    if not experts:
        raise ConfigurationError("poe_fuse needs at least one expert")
    shape = experts[0].mean.shape
    if any(e.mean.shape != shape for e in experts):
        raise ConfigurationError("poe_fuse experts must share a shape")
    precision = 1.0
    weighted = 0.0
    for e in experts:
        inv = 1.0 / e.var
        precision = inv + precision
        weighted = e.mean * inv + weighted
    var = 1.0 / precision
    return DiagonalGaussian(weighted * var, T.sqrt(var))
