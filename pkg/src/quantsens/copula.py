"""Dependence machinery.

Three layers live here:

* bivariate copulas (Gaussian, Student t, Archimedean with Clayton or Gumbel
  generators) with closed-form conditional cdfs/quantiles and the derivative
  of the inverse Rosenblatt transform in its conditioning argument (``psi1``),
* the multivariate t copula (normal-mixture sampling, exact conditional
  sampling given one coordinate) and the factor-model correlation builder,
* dependence structures tying a loss model's coordinates together:
  independence, a product of disjoint bivariate pairs, or a full t copula.

psi1 is always evaluated through the bivariate reduction: the cascade value
does not depend on the choice of Rosenblatt transform, so only pairwise
margins of the joint copula are ever needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps
from scipy.special import ndtr, ndtri

from .distributions import DistributionSpec, dist_eval, uniforms

__all__ = [
    "Clayton",
    "Gumbel",
    "GeneratorSpec",
    "BvGaussian",
    "BvStudentT",
    "BvArchimedean",
    "BivariateCopulaSpec",
    "MultivariateTSpec",
    "RosenblattAux",
    "CopulaError",
    "psi1",
    "conditional_quantile",
    "cop_cond_cdf",
    "cop_cond_quantile",
    "sample_bivariate",
    "sample_mvt",
    "build_factor_sigma",
    "load_correlation_csv",
    "Independence",
    "PairwiseDependence",
    "MvtDependence",
    "DependenceStructure",
]

_TINY = 1e-300
_UCLIP = 1e-14


class CopulaError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Archimedean generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Clayton:
    """Generator psi(t) = (1 + t)^(-1/theta), theta > 0. All pieces closed form."""

    theta: float

    def __post_init__(self):
        if not self.theta > 0:
            raise CopulaError(f"Clayton theta must be > 0, got {self.theta}")

    def psi(self, t):
        return np.power(1.0 + t, -1.0 / self.theta)

    def psi_inv(self, u):
        return np.power(u, -self.theta) - 1.0

    def psi_dot(self, t):
        return -(1.0 / self.theta) * np.power(1.0 + t, -1.0 / self.theta - 1.0)

    def psi_ddot(self, t):
        a = 1.0 / self.theta
        return a * (a + 1.0) * np.power(1.0 + t, -a - 2.0)

    def psi_dot_inv(self, s):
        # s in (-1/theta, 0)
        return np.power(-self.theta * s, -self.theta / (1.0 + self.theta)) - 1.0


@dataclass(frozen=True)
class Gumbel:
    """Generator psi(t) = exp(-t^(1/theta)), theta >= 1.

    The inverse of psi_dot has no closed form; it is found by bisection with
    a Newton polish (psi_dot is strictly increasing on (0, inf)).
    """

    theta: float

    def __post_init__(self):
        if not self.theta >= 1:
            raise CopulaError(f"Gumbel theta must be >= 1, got {self.theta}")

    def psi(self, t):
        return np.exp(-np.power(t, 1.0 / self.theta))

    def psi_inv(self, u):
        return np.power(-np.log(u), self.theta)

    def psi_dot(self, t):
        a = 1.0 / self.theta
        return -a * np.power(t, a - 1.0) * np.exp(-np.power(t, a))

    def psi_ddot(self, t):
        a = 1.0 / self.theta
        ta = np.power(t, a)
        return a * np.power(t, a - 2.0) * np.exp(-ta) * (a * ta + 1.0 - a)

    def psi_dot_inv(self, s, tol=1e-12, max_iter=200):
        s = np.asarray(s, dtype=float)
        if np.any(s >= 0):
            raise CopulaError("psi_dot_inv needs a negative argument")
        if self.theta == 1.0:
            return -np.log(-s)
        lo = np.full(s.shape, 1e-14)
        hi = np.full(s.shape, 1.0)
        for _ in range(200):
            grow = self.psi_dot(hi) < s
            if not np.any(grow):
                break
            hi = np.where(grow, hi * 2.0, hi)
        for _ in range(200):
            shrink = self.psi_dot(lo) > s
            if not np.any(shrink):
                break
            lo = np.where(shrink, lo * 0.25, lo)
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            low_side = self.psi_dot(mid) < s
            lo = np.where(low_side, mid, lo)
            hi = np.where(low_side, hi, mid)
            if np.max((hi - lo) / np.maximum(1.0, np.abs(mid))) < 1e-15:
                break
        t = 0.5 * (lo + hi)
        for _ in range(3):
            t = t - (self.psi_dot(t) - s) / self.psi_ddot(t)
            t = np.maximum(t, 1e-16)
        if np.max(np.abs(self.psi_dot(t) - s) / np.abs(s)) > tol:
            raise CopulaError("psi_dot_inv did not converge to 1e-12")
        return t


GeneratorSpec = Clayton | Gumbel


# ---------------------------------------------------------------------------
# Bivariate copulas
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BvGaussian:
    r: float

    def __post_init__(self):
        if not -1 < self.r < 1:
            raise CopulaError(f"correlation must be in (-1, 1), got {self.r}")


@dataclass(frozen=True)
class BvStudentT:
    r: float
    nu: int

    def __post_init__(self):
        if not -1 < self.r < 1:
            raise CopulaError(f"correlation must be in (-1, 1), got {self.r}")
        if self.nu < 3:
            raise CopulaError(f"nu must be >= 3, got {self.nu}")


@dataclass(frozen=True)
class BvArchimedean:
    generator: GeneratorSpec


BivariateCopulaSpec = BvGaussian | BvStudentT | BvArchimedean


def _clip_u(u):
    return np.clip(np.asarray(u, dtype=float), _UCLIP, 1.0 - _UCLIP)


def cop_cond_cdf(cop: BivariateCopulaSpec, u_other, u_given):
    """Conditional copula cdf C(u_other | u_given); all families exchangeable."""
    uo = _clip_u(u_other)
    ug = _clip_u(u_given)
    if isinstance(cop, BvGaussian):
        r = cop.r
        return ndtr((ndtri(uo) - r * ndtri(ug)) / np.sqrt(1.0 - r * r))
    if isinstance(cop, BvStudentT):
        r, nu = cop.r, cop.nu
        yi = sps.t.ppf(ug, df=nu)
        yj = sps.t.ppf(uo, df=nu)
        s = np.sqrt((nu + yi * yi) * (1.0 - r * r) / (nu + 1.0))
        return sps.t.cdf((yj - r * yi) / s, df=nu + 1)
    if isinstance(cop, BvArchimedean):
        gen = cop.generator
        ai = gen.psi_inv(ug)
        aj = gen.psi_inv(uo)
        return gen.psi_dot(ai + aj) / gen.psi_dot(ai)
    raise CopulaError(f"unknown copula {cop!r}")


def cop_cond_quantile(cop: BivariateCopulaSpec, v, u_given):
    """Inverse of the conditional copula cdf in its first argument."""
    v = _clip_u(v)
    ug = _clip_u(u_given)
    if isinstance(cop, BvGaussian):
        r = cop.r
        return ndtr(r * ndtri(ug) + np.sqrt(1.0 - r * r) * ndtri(v))
    if isinstance(cop, BvStudentT):
        r, nu = cop.r, cop.nu
        yi = sps.t.ppf(ug, df=nu)
        s = np.sqrt((nu + yi * yi) * (1.0 - r * r) / (nu + 1.0))
        return sps.t.cdf(r * yi + s * sps.t.ppf(v, df=nu + 1), df=nu)
    if isinstance(cop, BvArchimedean):
        gen = cop.generator
        ai = gen.psi_inv(ug)
        arg = gen.psi_dot_inv(v * gen.psi_dot(ai)) - ai
        return gen.psi(np.maximum(arg, 0.0))
    raise CopulaError(f"unknown copula {cop!r}")


def conditional_quantile(
    cop: BivariateCopulaSpec,
    v,
    xi,
    fi: DistributionSpec,
    fj: DistributionSpec,
):
    """Conditional quantile of X_j given X_i = xi at level v, on the value scale."""
    ui = dist_eval(fi, "cdf", xi)
    return dist_eval(fj, "quantile", cop_cond_quantile(cop, v, ui))


def psi1(
    cop: BivariateCopulaSpec,
    xi,
    xj,
    fi: DistributionSpec,
    fj: DistributionSpec,
):
    """Derivative of the inverse Rosenblatt transform in its first argument.

    Evaluated pointwise at a realised pair (xi, xj) of the coordinates, with
    the conditional rank held fixed. Raises on density underflow rather than
    returning a silent zero.
    """
    scalar = np.ndim(xi) == 0 and np.ndim(xj) == 0
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    dens_i = np.atleast_1d(dist_eval(fi, "pdf", xi))
    dens_j = np.atleast_1d(dist_eval(fj, "pdf", xj))
    if np.any(dens_i < _TINY) or np.any(dens_j < _TINY) or np.any(~np.isfinite(dens_j)):
        raise CopulaError("marginal density underflow in psi1 near the support boundary")
    ui = _clip_u(dist_eval(fi, "cdf", xi))
    uj = _clip_u(dist_eval(fj, "cdf", xj))

    if isinstance(cop, BvGaussian):
        yi = ndtri(ui)
        yj = ndtri(uj)
        out = cop.r * (dens_i / _phi(yi)) * (_phi(yj) / dens_j)
    elif isinstance(cop, BvStudentT):
        nu, r = cop.nu, cop.r
        yi = sps.t.ppf(ui, df=nu)
        yj = sps.t.ppf(uj, df=nu)
        factor = r + (yi * yj - r * yi * yi) / (nu + yi * yi)
        out = factor * (dens_i / sps.t.pdf(yi, df=nu)) * (sps.t.pdf(yj, df=nu) / dens_j)
    elif isinstance(cop, BvArchimedean):
        gen = cop.generator
        ai = gen.psi_inv(ui)
        aj = gen.psi_inv(uj)
        s = ai + aj
        bracket = (gen.psi_dot(s) / gen.psi_ddot(s)) * (gen.psi_ddot(ai) / gen.psi_dot(ai)) - 1.0
        out = (gen.psi_dot(aj) / gen.psi_dot(ai)) * bracket * (dens_i / dens_j)
    else:
        raise CopulaError(f"unknown copula {cop!r}")
    out = np.asarray(out)
    return float(out[0]) if scalar else out


def _phi(z):
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


def sample_bivariate(cop: BivariateCopulaSpec, n: int, seed: int) -> np.ndarray:
    """n pairs of copula uniforms via the conditional method."""
    u1 = uniforms(n, seed, stream=(0,))
    v = uniforms(n, seed, stream=(1,))
    u2 = cop_cond_quantile(cop, v, u1)
    return np.column_stack([u1, u2])


# ---------------------------------------------------------------------------
# Multivariate t copula
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MultivariateTSpec:
    """t copula with correlation matrix sigma and nu degrees of freedom."""

    sigma: tuple
    nu: int

    def __post_init__(self):
        s = self.sigma_matrix
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise CopulaError("sigma must be square")
        if np.max(np.abs(s - s.T)) > 1e-12:
            raise CopulaError("sigma must be symmetric (tolerance 1e-12)")
        if np.max(np.abs(np.diag(s) - 1.0)) > 1e-12:
            raise CopulaError("sigma must have unit diagonal")
        if self.nu < 3:
            raise CopulaError(f"nu must be >= 3, got {self.nu}")
        try:
            np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            lam = float(np.linalg.eigvalsh(s)[0])
            raise CopulaError(f"sigma not positive definite; smallest eigenvalue {lam:.3e}")

    @staticmethod
    def from_matrix(sigma: np.ndarray, nu: int) -> "MultivariateTSpec":
        s = np.asarray(sigma, dtype=float)
        return MultivariateTSpec(sigma=tuple(map(tuple, s)), nu=int(nu))

    @property
    def sigma_matrix(self) -> np.ndarray:
        return np.asarray(self.sigma, dtype=float)

    @property
    def dimension(self) -> int:
        return self.sigma_matrix.shape[0]


@dataclass
class RosenblattAux:
    """Latents of a simulated scenario set, read-only after creation.

    ``uniforms`` are the copula uniforms (column per coordinate); ``w`` is the
    normal-mixture variable of a t-copula draw (None otherwise). The latent
    correlated normals of the t construction are recoverable as
    t_nu^-1(U) / sqrt(w).
    """

    uniforms: np.ndarray
    w: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


def _std_normals(n: int, seed: int, stream: tuple[int, ...]) -> np.ndarray:
    return ndtri(np.clip(uniforms(n, seed, stream), 1e-300, 1.0 - 1e-16))


def _invgamma_draws(n: int, seed: int, stream: tuple[int, ...], shape: float, scale: float):
    u = np.clip(uniforms(n, seed, stream), 1e-300, 1.0 - 1e-16)
    return sps.invgamma.ppf(u, a=shape, scale=scale)


def sample_mvt(spec: MultivariateTSpec, n: int, seed: int) -> tuple[np.ndarray, RosenblattAux]:
    """Copula uniforms U = t_nu(sqrt(W) Z) with Z ~ N(0, sigma), W ~ InvGamma(nu/2, nu/2)."""
    d = spec.dimension
    chol = np.linalg.cholesky(spec.sigma_matrix)
    z = np.empty((n, d))
    for k in range(d):
        z[:, k] = _std_normals(n, seed, stream=(0, k))
    z = z @ chol.T
    w = _invgamma_draws(n, seed, stream=(1,), shape=spec.nu / 2.0, scale=spec.nu / 2.0)
    t = np.sqrt(w)[:, None] * z
    u = sps.t.cdf(t, df=spec.nu)
    return u, RosenblattAux(uniforms=u, w=w)


def conditional_mvt_uniforms(
    spec: MultivariateTSpec, cond_index: int, u_cond: np.ndarray, seed: int
) -> np.ndarray:
    """Draw the remaining coordinates of the t copula given one coordinate.

    Uses the exact conditional law: with T ~ t_nu(0, sigma) and T_j = y, the
    other coordinates are multivariate t with nu+1 df, location sigma_j * y
    and scale ((nu + y^2) / (nu + 1)) * (sigma_-j,-j - sigma_j sigma_j^T).
    """
    d = spec.dimension
    nu = spec.nu
    n = len(u_cond)
    others = [k for k in range(d) if k != cond_index]
    sig = spec.sigma_matrix
    s_cross = sig[others, cond_index]
    s_rest = sig[np.ix_(others, others)] - np.outer(s_cross, s_cross)
    s_rest = 0.5 * (s_rest + s_rest.T)
    try:
        chol = np.linalg.cholesky(s_rest)
    except np.linalg.LinAlgError:
        lam = float(np.linalg.eigvalsh(s_rest)[0])
        raise CopulaError(f"conditional scale not positive definite; smallest eigenvalue {lam:.3e}")

    y = sps.t.ppf(_clip_u(u_cond), df=nu)
    z = np.empty((n, d - 1))
    for k in range(d - 1):
        z[:, k] = _std_normals(n, seed, stream=(2, k))
    chi2 = sps.chi2.ppf(
        np.clip(uniforms(n, seed, stream=(3,)), 1e-300, 1.0 - 1e-16), df=nu + 1
    )
    mix = np.sqrt((nu + y * y) / chi2)
    t_rest = s_cross[None, :] * y[:, None] + mix[:, None] * (z @ chol.T)

    u = np.empty((n, d))
    u[:, cond_index] = u_cond
    u[:, others] = sps.t.cdf(t_rest, df=nu)
    return u


def build_factor_sigma(R: np.ndarray, lam: float, m: int, nu: int = 4) -> MultivariateTSpec:
    """Correlation matrix of the joint (X, Z) t copula from a single-factor link.

    X coordinates get the homogeneous correlation ``lam``; Z keeps R; the
    cross block is sqrt(lam / beta) times the row sums of R, where beta is the
    sum of all entries of R (the variance of the summed standardised Z factors).
    """
    R = np.asarray(R, dtype=float)
    if not 0 < lam < 1:
        raise CopulaError(f"lambda must be in (0, 1), got {lam}")
    nz = R.shape[0]
    beta = float(R.sum())
    cross = np.sqrt(lam / beta) * R.sum(axis=1)
    d = m + nz
    sigma = np.empty((d, d))
    sigma[:m, :m] = lam
    np.fill_diagonal(sigma[:m, :m], 1.0)
    sigma[m:, m:] = R
    sigma[:m, m:] = np.tile(cross, (m, 1))
    sigma[m:, :m] = sigma[:m, m:].T
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        lam_min = float(np.linalg.eigvalsh(sigma)[0])
        raise CopulaError(
            f"factor sigma not positive definite; smallest eigenvalue {lam_min:.3e}"
        )
    return MultivariateTSpec.from_matrix(sigma, nu=nu)


def load_correlation_csv(path) -> np.ndarray:
    """Square correlation matrix from CSV; optional header row and row labels."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([tok.strip() for tok in line.split(",")])
    if not _is_number(rows[0][-1]):
        rows = rows[1:]  # header row
    if rows and not _is_number(rows[0][0]):
        rows = [r[1:] for r in rows]  # row labels
    mat = np.array([[float(v) for v in r] for r in rows], dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise CopulaError(f"correlation matrix must be square, got {mat.shape}")
    if np.max(np.abs(mat - mat.T)) > 1e-12:
        raise CopulaError("correlation matrix asymmetric beyond 1e-12")
    return mat


def _is_number(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------------------
# Dependence structures over a model's (X, Z) coordinates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Independence:
    dim: int

    def sample_uniforms(self, n: int, seed: int) -> tuple[np.ndarray, RosenblattAux]:
        u = np.empty((n, self.dim))
        for k in range(self.dim):
            u[:, k] = uniforms(n, seed, stream=(0, k))
        return u, RosenblattAux(uniforms=u)

    def conditional_uniforms(self, cond_index: int, u_cond: np.ndarray, seed: int) -> np.ndarray:
        n = len(u_cond)
        u = np.empty((n, self.dim))
        u[:, cond_index] = u_cond
        for k in range(self.dim):
            if k != cond_index:
                u[:, k] = uniforms(n, seed, stream=(0, k))
        return u

    def pair_copula(self, i: int, j: int) -> BivariateCopulaSpec | None:
        return None


@dataclass(frozen=True)
class PairwiseDependence:
    """Product copula over disjoint coordinate pairs; unpaired coordinates free."""

    dim: int
    pairs: tuple  # of (i, j, BivariateCopulaSpec)

    def __post_init__(self):
        seen = set()
        for i, j, _ in self.pairs:
            if i == j or not (0 <= i < self.dim and 0 <= j < self.dim):
                raise CopulaError(f"invalid pair ({i}, {j}) for dimension {self.dim}")
            if i in seen or j in seen:
                raise CopulaError("pairs must use disjoint coordinates")
            seen.update((i, j))

    def _partner(self, k: int):
        for i, j, cop in self.pairs:
            if k == i:
                return j, cop
            if k == j:
                return i, cop
        return None, None

    def sample_uniforms(self, n: int, seed: int) -> tuple[np.ndarray, RosenblattAux]:
        u = np.empty((n, self.dim))
        driven = set()
        for i, j, _ in self.pairs:
            driven.add(j)
        for k in range(self.dim):
            if k not in driven:
                u[:, k] = uniforms(n, seed, stream=(0, k))
        for i, j, cop in self.pairs:
            v = uniforms(n, seed, stream=(1, j))
            u[:, j] = cop_cond_quantile(cop, v, u[:, i])
        return u, RosenblattAux(uniforms=u)

    def conditional_uniforms(self, cond_index: int, u_cond: np.ndarray, seed: int) -> np.ndarray:
        n = len(u_cond)
        u = np.empty((n, self.dim))
        u[:, cond_index] = u_cond
        partner, cop = self._partner(cond_index)
        for k in range(self.dim):
            if k in (cond_index, partner):
                continue
            u[:, k] = uniforms(n, seed, stream=(0, k))
        if partner is not None:
            v = uniforms(n, seed, stream=(1, partner))
            u[:, partner] = cop_cond_quantile(cop, v, u_cond)
        # re-impose remaining pairs not involving the conditioned coordinate
        for i, j, cop_ij in self.pairs:
            if cond_index in (i, j):
                continue
            v = uniforms(n, seed, stream=(1, j))
            u[:, j] = cop_cond_quantile(cop_ij, v, u[:, i])
        return u

    def pair_copula(self, i: int, j: int) -> BivariateCopulaSpec | None:
        for a, b, cop in self.pairs:
            if {a, b} == {i, j}:
                return cop
        return None


@dataclass(frozen=True)
class MvtDependence:
    spec: MultivariateTSpec

    @property
    def dim(self) -> int:
        return self.spec.dimension

    def sample_uniforms(self, n: int, seed: int) -> tuple[np.ndarray, RosenblattAux]:
        return sample_mvt(self.spec, n, seed)

    def conditional_uniforms(self, cond_index: int, u_cond: np.ndarray, seed: int) -> np.ndarray:
        return conditional_mvt_uniforms(self.spec, cond_index, u_cond, seed)

    def pair_copula(self, i: int, j: int) -> BivariateCopulaSpec | None:
        # bivariate margins of a t copula are t copulas with the same nu
        return BvStudentT(r=float(self.spec.sigma_matrix[i, j]), nu=self.spec.nu)


DependenceStructure = Independence | PairwiseDependence | MvtDependence
