"""Stress-function families: application, inversion, speed, and direction.

A stress ``kappa_eps`` deforms a risk factor, converging to the identity as
eps -> 0. Closed forms are used for the speed functions (the eps-derivatives
at zero) and for every inverse except the mixture stress, whose forward map
needs a monotone solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .distributions import DistributionSpec, dist_eval, support

__all__ = [
    "Additive",
    "Proportional",
    "Probability",
    "Mixture",
    "TailUpper",
    "TailLower",
    "Wang",
    "StressSpec",
    "StressError",
    "apply_stress",
    "inverse_apply",
    "deriv_K",
    "deriv_Kinv",
    "direction",
    "validate_stress",
]

EPS0 = 0.01  # default validity neighbourhood for validation grids


class StressError(ValueError):
    pass


@dataclass(frozen=True)
class Additive:
    beta: float

    def __post_init__(self):
        if self.beta == 0:
            raise StressError("beta = 0 is the identity stress; rejected")


@dataclass(frozen=True)
class Proportional:
    beta: float

    def __post_init__(self):
        if self.beta == 0:
            raise StressError("beta = 0 is the identity stress; rejected")


@dataclass(frozen=True)
class Probability:
    """Shift of the factor's own cdf level: F^-1(F(x) + beta * eps)."""

    beta: float
    marginal: DistributionSpec

    def __post_init__(self):
        if self.beta == 0:
            raise StressError("beta = 0 is the identity stress; rejected")


@dataclass(frozen=True)
class Mixture:
    """Deformation towards an alternative law G through F_eps = (1-eps)F + eps G."""

    base: DistributionSpec
    alternative: DistributionSpec


@dataclass(frozen=True)
class TailUpper:
    t: float


@dataclass(frozen=True)
class TailLower:
    t: float


@dataclass(frozen=True)
class Wang:
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise StressError(f"Wang sign must be +1 or -1, got {self.sign}")


StressSpec = Additive | Proportional | Probability | Mixture | TailUpper | TailLower | Wang


def _solve_monotone_increasing(fn, target, lo, hi, tol=1e-13, max_iter=200):
    """Vectorised bisection for fn(y) = target with fn increasing."""
    target = np.asarray(target, dtype=float)
    lo = np.array(np.broadcast_to(lo, target.shape), dtype=float)
    hi = np.array(np.broadcast_to(hi, target.shape), dtype=float)
    # widen until the bracket is valid (initial guesses may sit on the root)
    width = np.maximum(hi - lo, 1e-8 * np.maximum(1.0, np.abs(lo)))
    for _ in range(80):
        bad_lo = fn(lo) > target
        bad_hi = fn(hi) < target
        if not (np.any(bad_lo) or np.any(bad_hi)):
            break
        lo = np.where(bad_lo, lo - width, lo)
        hi = np.where(bad_hi, hi + width, hi)
        width = width * 2.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        too_low = fn(mid) < target
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
        if np.max((hi - lo) / np.maximum(1.0, np.abs(mid))) <= tol:
            break
    return 0.5 * (lo + hi)


def _mixture_forward_cdf(stress: Mixture, eps: float, y):
    f = dist_eval(stress.base, "cdf", y)
    g = dist_eval(stress.alternative, "cdf", y)
    return (1.0 - eps) * f + eps * g


def apply_stress(stress: StressSpec, eps: float, x):
    """kappa_eps(x), vectorised over x."""
    if eps < 0:
        raise StressError(f"eps must be >= 0, got {eps}")
    x = np.asarray(x, dtype=float)
    if eps == 0.0:
        if isinstance(stress, Wang) and (np.any(x <= 0.0) or np.any(x >= 1.0)):
            raise StressError("Wang stress is defined on (0, 1)")
        return x + 0.0
    if isinstance(stress, Additive):
        return x + stress.beta * eps
    if isinstance(stress, Proportional):
        return x * (1.0 + stress.beta * eps)
    if isinstance(stress, Probability):
        u = dist_eval(stress.marginal, "cdf", x) + stress.beta * eps
        if eps > 0 and (np.any(u <= 0.0) or np.any(u >= 1.0)):
            raise StressError(
                "probability stress pushes F(x) + beta*eps outside (0, 1); "
                "clamping would break invertibility"
            )
        return dist_eval(stress.marginal, "quantile", u)
    if isinstance(stress, Mixture):
        if eps == 0:
            return x + 0.0
        u = dist_eval(stress.base, "cdf", x)
        # F_eps^-1(u) lies between the base and alternative quantiles
        qf = dist_eval(stress.base, "quantile", np.clip(u, 1e-15, 1 - 1e-15))
        qg = dist_eval(stress.alternative, "quantile", np.clip(u, 1e-15, 1 - 1e-15))
        lo = np.minimum(qf, qg)
        hi = np.maximum(qf, qg)
        return _solve_monotone_increasing(
            lambda y: _mixture_forward_cdf(stress, eps, y), u, lo, hi
        )
    if isinstance(stress, TailUpper):
        return x + eps * (x - stress.t) * (x >= stress.t)
    if isinstance(stress, TailLower):
        return x + eps * (x - stress.t) * (x <= stress.t)
    if isinstance(stress, Wang):
        if np.any(x <= 0.0) or np.any(x >= 1.0):
            raise StressError("Wang stress is defined on (0, 1)")
        return ndtr(ndtri(x) + stress.sign * eps)
    raise StressError(f"unknown stress {stress!r}")


def inverse_apply(stress: StressSpec, eps: float, y):
    """kappa_eps^-1(y); requires eps small enough that kappa_eps is invertible."""
    if eps < 0:
        raise StressError(f"eps must be >= 0, got {eps}")
    y = np.asarray(y, dtype=float)
    if eps == 0.0:
        if isinstance(stress, Wang) and (np.any(y <= 0.0) or np.any(y >= 1.0)):
            raise StressError("Wang stress is defined on (0, 1)")
        return y + 0.0
    if isinstance(stress, Additive):
        return y - stress.beta * eps
    if isinstance(stress, Proportional):
        d = 1.0 + stress.beta * eps
        if d <= 0:
            raise StressError(f"proportional stress not invertible at eps = {eps}")
        return y / d
    if isinstance(stress, Probability):
        u = dist_eval(stress.marginal, "cdf", y) - stress.beta * eps
        if eps > 0 and (np.any(u <= 0.0) or np.any(u >= 1.0)):
            raise StressError("y outside the range of the probability stress")
        return dist_eval(stress.marginal, "quantile", u)
    if isinstance(stress, Mixture):
        # kappa^-1(y) = F^-1((1-eps) F(y) + eps G(y)), closed form
        u = _mixture_forward_cdf(stress, eps, y)
        return dist_eval(stress.base, "quantile", np.clip(u, 1e-300, 1.0 - 1e-16))
    if isinstance(stress, TailUpper):
        t = stress.t
        cand = (y + eps * t) / (1.0 + eps)
        return np.where(y >= t, cand, y)
    if isinstance(stress, TailLower):
        t = stress.t
        cand = (y + eps * t) / (1.0 + eps)
        return np.where(y <= t, cand, y)
    if isinstance(stress, Wang):
        if np.any(y <= 0.0) or np.any(y >= 1.0):
            raise StressError("Wang stress is defined on (0, 1)")
        return ndtr(ndtri(y) - stress.sign * eps)
    raise StressError(f"unknown stress {stress!r}")


def deriv_K(stress: StressSpec, x):
    """Speed of the stress: d/deps kappa_eps(x) at eps = 0."""
    x = np.asarray(x, dtype=float)
    if isinstance(stress, Additive):
        return np.full_like(x, stress.beta)
    if isinstance(stress, Proportional):
        return stress.beta * x
    if isinstance(stress, Probability):
        f = dist_eval(stress.marginal, "pdf", x)
        _require_positive_density(f, "probability stress")
        return stress.beta / f
    if isinstance(stress, Mixture):
        f = dist_eval(stress.base, "pdf", x)
        _require_positive_density(f, "mixture stress")
        fx = dist_eval(stress.base, "cdf", x)
        gx = dist_eval(stress.alternative, "cdf", x)
        return (fx - gx) / f
    if isinstance(stress, TailUpper):
        return np.maximum(x - stress.t, 0.0)
    if isinstance(stress, TailLower):
        return -np.maximum(stress.t - x, 0.0)
    if isinstance(stress, Wang):
        return stress.sign * _phi(ndtri(x))
    raise StressError(f"unknown stress {stress!r}")


def deriv_Kinv(stress: StressSpec, x):
    """Speed of the inverse: d/deps kappa_eps^-1(x) at eps = 0."""
    x = np.asarray(x, dtype=float)
    if isinstance(stress, Mixture):
        f = dist_eval(stress.base, "pdf", x)
        _require_positive_density(f, "mixture stress")
        fx = dist_eval(stress.base, "cdf", x)
        gx = dist_eval(stress.alternative, "cdf", x)
        return (gx - fx) / f
    return -deriv_K(stress, x)


def _phi(z):
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


def _require_positive_density(f, what: str) -> None:
    f = np.atleast_1d(f)
    if np.any(f <= 0) or np.any(~np.isfinite(f)):
        raise StressError(f"{what}: zero or invalid density at evaluation point")


def _mixture_ordering(stress: Mixture, tol: float = 1e-12) -> int:
    """Global cdf ordering of base vs alternative on a quantile grid.

    Returns +1 when G <= F everywhere (stress pushes the factor up), -1 when
    G >= F. Crossing cdfs have no single direction and are rejected.
    """
    probs = np.concatenate(([1e-6], np.linspace(0.0005, 0.9995, 1001), [1.0 - 1e-6]))
    grid = dist_eval(stress.base, "quantile", probs)
    diff = dist_eval(stress.base, "cdf", grid) - dist_eval(stress.alternative, "cdf", grid)
    has_pos = np.any(diff > tol)
    has_neg = np.any(diff < -tol)
    if has_pos and has_neg:
        raise StressError("mixture stress: base and alternative cdfs cross; no direction")
    if not has_pos and not has_neg:
        raise StressError("mixture stress: alternative equals base; direction undefined")
    return 1 if has_pos else -1


def direction(stress: StressSpec) -> int:
    """Global direction c(kappa): +1 when kappa_eps(x) >= x near 0, else -1."""
    if isinstance(stress, (Additive, Proportional, Probability)):
        return 1 if stress.beta > 0 else -1
    if isinstance(stress, Mixture):
        return _mixture_ordering(stress)
    if isinstance(stress, TailUpper):
        return 1
    if isinstance(stress, TailLower):
        return -1
    if isinstance(stress, Wang):
        return stress.sign
    raise StressError(f"unknown stress {stress!r}")


def _validation_grid(stress: StressSpec, marginal: DistributionSpec | None) -> np.ndarray:
    if marginal is None:
        if isinstance(stress, Wang):
            return np.linspace(0.05, 0.95, 19)
        if isinstance(stress, Probability):
            marginal = stress.marginal
        elif isinstance(stress, Mixture):
            marginal = stress.base
        elif isinstance(stress, Proportional):
            # a proportional stress has one direction only on a positive factor
            return np.linspace(0.1, 5.0, 25)
        else:
            return np.linspace(-3.0, 3.0, 25)
    probs = np.linspace(0.05, 0.95, 19)
    return dist_eval(marginal, "quantile", probs)


def validate_stress(
    stress: StressSpec,
    marginal: DistributionSpec | None = None,
    eps0: float = EPS0,
    rtol: float = 1e-6,
) -> None:
    """Check the stress axioms on a grid; raises StressError on violation.

    Verifies invertibility (round-trip within 1e-9), convergence to the
    identity at eps = 0, a constant displacement sign matching direction(),
    and agreement of the closed-form speeds with eps finite differences at 0.
    Run once at model-load time, not per call.
    """
    grid = _validation_grid(stress, marginal)
    if marginal is not None:
        lo, hi = support(marginal)
        grid = grid[(grid > lo) & (grid < hi)]
    c = direction(stress)

    scale = np.maximum(1.0, np.abs(grid))
    for eps in (eps0, eps0 / 4, eps0 / 16):
        y = apply_stress(stress, eps, grid)
        back = inverse_apply(stress, eps, y)
        if np.max(np.abs(back - grid) / scale) > 1e-9:
            raise StressError(f"round-trip failure at eps = {eps}")
        disp = y - grid
        moved = np.abs(disp) > 1e-12 * scale
        if np.any(np.sign(disp[moved]) != c):
            raise StressError("displacement sign inconsistent with direction()")

    if np.max(np.abs(apply_stress(stress, 0.0, grid) - grid)) > 0:
        raise StressError("kappa_0 is not the identity")

    # Richardson finite differences in eps at 0 against the closed forms
    e1 = 2e-5
    for fn, deriv in ((apply_stress, deriv_K), (inverse_apply, deriv_Kinv)):
        d1 = (fn(stress, e1, grid) - grid) / e1
        d2 = (fn(stress, 2 * e1, grid) - grid) / (2 * e1)
        fd = 2.0 * d1 - d2
        exact = deriv(stress, grid)
        err = np.abs(fd - exact) / np.maximum(1.0, np.abs(exact))
        if np.max(err) > rtol:
            raise StressError(
                f"speed mismatch vs finite differences: max rel err {np.max(err):.2e}"
            )
