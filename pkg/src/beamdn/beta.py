"""Gamma/Beta special functions and a seeded Beta sampler.

Offsets on a camera ray are drawn as ``y = 2x - 1`` with ``x ~ Beta(lam, mu)``,
so ``lam > mu`` pushes samples beyond the object and ``lam < mu`` in front.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class BetaParams:
    lam: float = 8.0
    mu: float = 2.0

    def __post_init__(self):
        for name in ("lam", "mu"):
            val = float(getattr(self, name))
            if not (math.isfinite(val) and val > 0.0):
                raise DomainError(f"Beta parameter {name} must be finite and > 0, got {val}")
            object.__setattr__(self, name, val)

    @property
    def mean(self) -> float:
        return self.lam / (self.lam + self.mu)

    @property
    def mode(self) -> float | None:
        if self.lam > 1.0 and self.mu > 1.0:
            return (self.lam - 1.0) / (self.lam + self.mu - 2.0)
        return None


class SeededRng:
    """Counter-based generator: the k-th draw is a pure function of (key, k).

    The stream is defined by integer mixing only, so it is identical on every
    platform and across the compiled and Python kernel backends.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.stream = int(stream)
        self.key = kernels.derive_key(self.seed, self.stream)
        self.counter = 0

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream}, counter={self.counter})"

    def uniform(self, n: int) -> np.ndarray:
        out = kernels.uniform_fill(self.key, self.counter, n)
        self.counter += n
        return out

    def next_u64(self) -> int:
        out = kernels.bits_at(self.key, self.counter)
        self.counter += 1
        return int(out)

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        return low + np.floor(self.uniform(n) * (high - low)).astype(np.int64)

    def spawn(self, index: int) -> "SeededRng":
        """Child stream keyed on (one fresh parent draw, index)."""
        return SeededRng(self.next_u64(), index)

    def spawn_many(self, n: int) -> list["SeededRng"]:
        # one parent draw shared by all children: child i does not depend on
        # how many siblings are built or in which order they are consumed
        base = self.next_u64()
        return [SeededRng(base, i) for i in range(n)]

    def gamma(self, shape: float, n: int) -> np.ndarray:
        out, self.counter = kernels.gamma_fill(self.key, self.counter, float(shape), n)
        return out

    def normal(self, n: int) -> np.ndarray:
        # Box-Muller on the uniform stream; only used for weight init
        u1 = self.uniform(n)
        u2 = self.uniform(n)
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def state(self) -> dict:
        return {"seed": self.seed, "stream": self.stream, "counter": self.counter}


def _check_positive(x: float):
    if not (x > 0.0 and math.isfinite(x)):
        raise DomainError(f"log_gamma needs finite x > 0, got {x}")


def log_gamma(x: float) -> float:
    """ln Gamma(x) for x > 0 (Lanczos, g=7, 9 terms; reflection below 0.5)."""
    x = float(x)
    _check_positive(x)
    return float(kernels.lgamma_vec(np.array([x]))[0])


def log_beta_fn(p: BetaParams) -> float:
    return log_gamma(p.lam) + log_gamma(p.mu) - log_gamma(p.lam + p.mu)


def beta_pdf(x, p: BetaParams):
    """Beta density with the product normalisation Gamma(lam)*Gamma(mu), in log space.

    Accepts a scalar or an array; every x must lie strictly inside (0, 1).
    """
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~(arr > 0.0)) or np.any(~(arr < 1.0)):
        raise DomainError("beta_pdf is defined on the open interval (0, 1)")
    logp = (p.lam - 1.0) * np.log(arr) + (p.mu - 1.0) * np.log1p(-arr) - log_beta_fn(p)
    out = np.exp(logp)
    return float(out) if out.ndim == 0 else out


def beta_cdf(x, p: BetaParams):
    """Regularised incomplete beta I_x(lam, mu) by continued fraction."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~(arr >= 0.0)) or np.any(~(arr <= 1.0)):
        raise DomainError("beta_cdf is defined on [0, 1]")
    out = kernels.betainc_vec(p.lam, p.mu, arr)
    return float(out) if np.ndim(out) == 0 else out


def _check_count(n: int):
    if int(n) < 1:
        raise DomainError(f"sample count must be >= 1, got {n}")


def sample_beta(rng: SeededRng, p: BetaParams, n: int) -> np.ndarray:
    """n i.i.d. Beta(lam, mu) variates as X / (X + Y) of two Gamma draws."""
    _check_count(n)
    out, rng.counter = kernels.beta_fill(rng.key, rng.counter, p.lam, p.mu, int(n))
    return out


def sample_offsets(rng: SeededRng, p: BetaParams, n: int) -> np.ndarray:
    """Beta variates shifted from (0, 1) to (-1, 1)."""
    return 2.0 * sample_beta(rng, p, n) - 1.0


def pdf_table(p: BetaParams, n_points: int = 199, shifted: bool = True):
    """(x, pdf) samples of the density on an open grid, optionally on the (-1, 1) axis."""
    x = (np.arange(n_points) + 1.0) / (n_points + 1.0)
    dens = beta_pdf(x, p)
    if shifted:
        # change of variables y = 2x - 1 halves the density
        return 2.0 * x - 1.0, 0.5 * dens
    return x, dens
