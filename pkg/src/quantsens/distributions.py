"""Univariate distribution primitives (cdf, pdf, quantile, sampling).

Every stochastic component of the engine draws through these wrappers so that
sampling is inverse-transform everywhere. That keeps a stressed variate and
its base version coupled through the same underlying uniform, which the
finite-difference oracle relies on (common random numbers).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import stats as sps

__all__ = [
    "Normal",
    "Uniform01",
    "Lognormal",
    "StudentT",
    "Gamma",
    "NegativeBinomial",
    "InverseGamma",
    "DistributionSpec",
    "DistributionError",
    "lognormal_from_mean_cov",
    "dist_eval",
    "sample",
    "uniforms",
    "support",
]

# Fixed chunk size for seed derivation: results never depend on how many
# workers consume the chunks.
_CHUNK = 1 << 19


class DistributionError(ValueError):
    """Invalid distribution parameters or evaluation outside the domain."""


@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not self.sd > 0:
            raise DistributionError(f"Normal sd must be > 0, got {self.sd}")


@dataclass(frozen=True)
class Uniform01:
    pass


@dataclass(frozen=True)
class Lognormal:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DistributionError(f"Lognormal sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class StudentT:
    """Student t with integer df; ``standardised`` rescales to unit variance."""

    nu: int
    standardised: bool = False

    def __post_init__(self):
        if int(self.nu) != self.nu or self.nu < 3:
            raise DistributionError(f"StudentT nu must be an integer >= 3, got {self.nu}")

    @property
    def scale(self) -> float:
        return float(np.sqrt((self.nu - 2.0) / self.nu)) if self.standardised else 1.0


@dataclass(frozen=True)
class Gamma:
    shape: float
    scale: float = 1.0

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise DistributionError(
                f"Gamma shape and scale must be > 0, got ({self.shape}, {self.scale})"
            )


@dataclass(frozen=True)
class NegativeBinomial:
    """Negative binomial by mean and over-dispersion, right-truncated.

    ``overdispersion`` is Var/Mean and must exceed 1. The support is cut at
    the ``truncation_quantile`` of the untruncated law and the probabilities
    renormalised to sum to one.
    """

    mean: float
    overdispersion: float
    truncation_quantile: float = 0.999

    def __post_init__(self):
        if not self.mean > 0:
            raise DistributionError(f"NegativeBinomial mean must be > 0, got {self.mean}")
        if not self.overdispersion > 1:
            raise DistributionError(
                f"NegativeBinomial overdispersion must be > 1, got {self.overdispersion}"
            )
        if not 0 < self.truncation_quantile <= 1:
            raise DistributionError(
                f"truncation_quantile must be in (0, 1], got {self.truncation_quantile}"
            )


@dataclass(frozen=True)
class InverseGamma:
    """Inverse gamma with density proportional to x^(-shape-1) exp(-rate/x)."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise DistributionError(
                f"InverseGamma shape and rate must be > 0, got ({self.shape}, {self.rate})"
            )


DistributionSpec = (
    Normal | Uniform01 | Lognormal | StudentT | Gamma | NegativeBinomial | InverseGamma
)


def lognormal_from_mean_cov(mean: float, cov: float) -> Lognormal:
    """Lognormal matching a target mean and coefficient of variation.

    Uses sigma^2 = ln(1 + cov^2) and mu = ln(mean) - sigma^2 / 2.
    """
    if not mean > 0:
        raise DistributionError(f"mean must be > 0, got {mean}")
    if not cov > 0:
        raise DistributionError(f"cov must be > 0, got {cov}")
    sigma2 = np.log1p(cov * cov)
    mu = np.log(mean) - 0.5 * sigma2
    return Lognormal(mu=float(mu), sigma=float(np.sqrt(sigma2)))


@lru_cache(maxsize=256)
def _nb_tables(spec: NegativeBinomial):
    # r, p parameterisation: mean = r(1-p)/p, var/mean = 1/p
    p = 1.0 / spec.overdispersion
    r = spec.mean / (spec.overdispersion - 1.0)
    base = sps.nbinom(r, p)
    kmax = int(base.ppf(spec.truncation_quantile))
    ks = np.arange(kmax + 1)
    pmf = base.pmf(ks)
    pmf = pmf / pmf.sum()
    return ks, pmf, np.cumsum(pmf)


def nb_support(spec: NegativeBinomial) -> tuple[np.ndarray, np.ndarray]:
    """Truncated support values and renormalised probabilities."""
    ks, pmf, _ = _nb_tables(spec)
    return ks.copy(), pmf.copy()


@lru_cache(maxsize=256)
def _frozen(dist):
    if isinstance(dist, Normal):
        return sps.norm(loc=dist.mean, scale=dist.sd)
    if isinstance(dist, Uniform01):
        return sps.uniform()
    if isinstance(dist, Lognormal):
        return sps.lognorm(s=dist.sigma, scale=np.exp(dist.mu))
    if isinstance(dist, StudentT):
        return sps.t(df=dist.nu, scale=dist.scale)
    if isinstance(dist, Gamma):
        return sps.gamma(a=dist.shape, scale=dist.scale)
    if isinstance(dist, InverseGamma):
        return sps.invgamma(a=dist.shape, scale=dist.rate)
    raise DistributionError(f"no continuous backend for {dist!r}")


def support(dist: DistributionSpec) -> tuple[float, float]:
    """Support endpoints (may be infinite)."""
    if isinstance(dist, Uniform01):
        return 0.0, 1.0
    if isinstance(dist, (Lognormal, Gamma, InverseGamma)):
        return 0.0, np.inf
    if isinstance(dist, NegativeBinomial):
        ks, _, _ = _nb_tables(dist)
        return 0.0, float(ks[-1])
    return -np.inf, np.inf


def dist_eval(dist: DistributionSpec, what: str, arg):
    """Evaluate cdf, pdf (pmf for discrete) or quantile, vectorised over arg.

    Quantile arguments must lie in (0, 1); the endpoints are rejected on any
    side where the support is unbounded.
    """
    arg = np.asarray(arg, dtype=float)
    scalar = arg.ndim == 0
    a = np.atleast_1d(arg)

    if what == "quantile":
        lo, hi = support(dist)
        if np.any(a < 0) or np.any(a > 1):
            raise DistributionError("quantile argument outside [0, 1]")
        if (not np.isfinite(lo) and np.any(a == 0)) or (not np.isfinite(hi) and np.any(a == 1)):
            raise DistributionError("quantile at 0 or 1 with unbounded support")

    if isinstance(dist, NegativeBinomial):
        ks, pmf, cum = _nb_tables(dist)
        if what == "cdf":
            idx = np.floor(a).astype(int)
            out = np.where(a < 0, 0.0, cum[np.clip(idx, 0, len(ks) - 1)])
            out = np.where(a >= ks[-1], 1.0, out)
        elif what == "pdf":
            if np.any(a != np.floor(a)):
                raise DistributionError("NegativeBinomial pmf needs integer argument")
            idx = a.astype(int)
            inside = (idx >= 0) & (idx <= ks[-1])
            out = np.where(inside, pmf[np.clip(idx, 0, len(ks) - 1)], 0.0)
        elif what == "quantile":
            out = ks[np.searchsorted(cum, a, side="left").clip(0, len(ks) - 1)].astype(float)
        else:
            raise DistributionError(f"unknown evaluation kind {what!r}")
        return float(out[0]) if scalar else out

    if isinstance(dist, Uniform01):
        if what == "cdf":
            out = np.clip(a, 0.0, 1.0)
        elif what == "pdf":
            out = np.where((a >= 0) & (a <= 1), 1.0, 0.0)
        elif what == "quantile":
            out = a.copy()
        else:
            raise DistributionError(f"unknown evaluation kind {what!r}")
        return float(out[0]) if scalar else out

    frozen = _frozen(dist)
    if what == "cdf":
        out = frozen.cdf(a)
    elif what == "pdf":
        out = frozen.pdf(a)
    elif what == "quantile":
        out = frozen.ppf(a)
    else:
        raise DistributionError(f"unknown evaluation kind {what!r}")
    return float(out[0]) if scalar else out


def _chunk_rng(seed: int, stream: tuple[int, ...], chunk: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(stream) + (chunk,))
    return np.random.Generator(np.random.PCG64(ss))


def uniforms(n: int, seed: int, stream: tuple[int, ...] = ()) -> np.ndarray:
    """Deterministic standard uniforms, generated in fixed-size chunks.

    Each chunk derives its own generator from (seed, stream, chunk index), so
    the output is reproducible regardless of how chunks are scheduled.
    ``stream`` namespaces independent draws of the same length (e.g. the
    columns of a copula sample).
    """
    if n < 1:
        raise DistributionError(f"n must be >= 1, got {n}")
    n = int(n)
    parts = []
    for c in range(0, n, _CHUNK):
        size = min(_CHUNK, n - c)
        parts.append(_chunk_rng(seed, stream, c // _CHUNK).random(size))
    return np.concatenate(parts) if len(parts) > 1 else parts[0]


def sample(dist: DistributionSpec, n: int, seed: int, stream: tuple[int, ...] = ()) -> np.ndarray:
    """Inverse-transform sample of size n; identical seeds give identical draws."""
    u = uniforms(n, seed, stream)
    if isinstance(dist, Uniform01):
        return u
    return dist_eval(dist, "quantile", u)
