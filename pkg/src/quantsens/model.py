"""Loss-model specification and Monte-Carlo scenario generation.

The continuous-factor model is  L = sum_j g_j(Z) 1{X_j <= d_j}  (with the
general variant letting g_j read X as well). Coordinates are indexed globally
with the X block first: coordinate i is X_{i+1} for i < m and Z_{i-m+1}
otherwise.

The discrete model T = h(W, Y) lives here too, in the simulated form needed
by the discrete estimators.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .copula import DependenceStructure, Independence, RosenblattAux
from .distributions import (
    DistributionSpec,
    NegativeBinomial,
    dist_eval,
    nb_support,
    sample,
    uniforms,
)
from .stress import StressSpec, apply_stress, inverse_apply

__all__ = [
    "LinearG",
    "LayerSum",
    "IdentityG",
    "GFunctionSpec",
    "LossModelSpec",
    "ScenarioSet",
    "DiscreteModelSpec",
    "DiscreteSample",
    "ModelError",
    "parse_target",
    "partial_g",
    "evaluate_loss",
    "loss_components",
    "simulate",
    "simulate_stressed",
    "simulate_discrete",
    "export_scenarios",
    "import_scenarios",
    "model_hash",
]


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Jump functions g_j
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearG:
    """g_j = const + <z_coeffs, Z> (+ <x_coeffs, X> in general mode)."""

    z_coeffs: tuple
    x_coeffs: tuple = ()
    const: float = 0.0


@dataclass(frozen=True)
class LayerSum:
    """Sum of reinsurance layers min((Z_k - s)_+, t) over (z_index, s, t) terms."""

    terms: tuple  # of (z_index, attachment, limit)

    def __post_init__(self):
        for k, s, t in self.terms:
            if s < 0 or t <= 0:
                raise ModelError(f"layer needs s >= 0 and t > 0, got (s={s}, t={t})")


@dataclass(frozen=True)
class IdentityG:
    z_index: int


GFunctionSpec = LinearG | LayerSum | IdentityG


def g_values(g: GFunctionSpec, Z: np.ndarray, X: np.ndarray | None = None) -> np.ndarray:
    """Evaluate one jump function on scenario rows."""
    if isinstance(g, LinearG):
        out = np.full(Z.shape[0], g.const, dtype=float)
        for k, c in enumerate(g.z_coeffs):
            if c != 0.0:
                out += c * Z[:, k]
        if g.x_coeffs:
            if X is None:
                raise ModelError("x_coeffs present but no X supplied")
            for j, c in enumerate(g.x_coeffs):
                if c != 0.0:
                    out += c * X[:, j]
        return out
    if isinstance(g, LayerSum):
        out = np.zeros(Z.shape[0])
        for k, s, t in g.terms:
            out += np.minimum(np.maximum(Z[:, k] - s, 0.0), t)
        return out
    if isinstance(g, IdentityG):
        return Z[:, g.z_index].astype(float, copy=True)
    raise ModelError(f"unknown g function {g!r}")


def partial_g(g: GFunctionSpec, z: np.ndarray, x: np.ndarray | None, wrt: tuple) -> np.ndarray:
    """Partial derivative of g in one coordinate, vectorised over scenarios.

    ``wrt`` is ("z", k) or ("x", j). Layer kinks (z exactly at the attachment
    or the limit) get derivative 0; they carry no probability mass under
    absolutely continuous marginals.
    """
    kind, idx = wrt
    n = z.shape[0]
    if isinstance(g, LinearG):
        if kind == "z":
            c = g.z_coeffs[idx] if idx < len(g.z_coeffs) else 0.0
        else:
            c = g.x_coeffs[idx] if idx < len(g.x_coeffs) else 0.0
        return np.full(n, float(c))
    if isinstance(g, LayerSum):
        if kind == "x":
            return np.zeros(n)
        out = np.zeros(n)
        for k, s, t in g.terms:
            if k == idx:
                zk = z[:, k]
                out += ((zk > s) & (zk < s + t)).astype(float)
        return out
    if isinstance(g, IdentityG):
        if kind == "z" and idx == g.z_index:
            return np.ones(n)
        return np.zeros(n)
    raise ModelError(f"unknown g function {g!r}")


# ---------------------------------------------------------------------------
# Loss model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossModelSpec:
    x_marginals: tuple  # m DistributionSpecs
    z_marginals: tuple  # n DistributionSpecs
    thresholds: tuple  # m reals, d_j
    g: tuple  # m GFunctionSpecs
    dependence: DependenceStructure
    general_mode: bool = False

    def __post_init__(self):
        m, n = self.m, self.n
        if not (len(self.thresholds) == len(self.g) == m):
            raise ModelError("thresholds and g must have one entry per X factor")
        for d in self.x_marginals:
            if isinstance(d, NegativeBinomial):
                raise ModelError("X marginals must be continuous (P(X_j = d_j) = 0)")
        if self.dependence.dim != m + n:
            raise ModelError(
                f"dependence dimension {self.dependence.dim} != m + n = {m + n}"
            )

    @property
    def m(self) -> int:
        return len(self.x_marginals)

    @property
    def n(self) -> int:
        return len(self.z_marginals)

    def default_prob(self, j: int) -> float:
        return float(dist_eval(self.x_marginals[j], "cdf", self.thresholds[j]))

    def coord(self, target: tuple) -> int:
        kind, idx = target
        return idx if kind == "x" else self.m + idx

    def marginal(self, target: tuple) -> DistributionSpec:
        kind, idx = target
        return self.x_marginals[idx] if kind == "x" else self.z_marginals[idx]


def parse_target(label: str) -> tuple:
    """'X3' or 'Z10' (1-based, paper style) to ('x'|'z', 0-based index)."""
    s = label.strip().lower()
    if not s or s[0] not in "xz" or not s[1:].isdigit() or int(s[1:]) < 1:
        raise ModelError(f"target must look like 'X1' or 'Z2', got {label!r}")
    return (s[0], int(s[1:]) - 1)


def loss_components(
    spec: LossModelSpec, X: np.ndarray, Z: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(g matrix, indicator matrix, loss column) for scenario rows."""
    n = X.shape[0]
    gm = np.empty((n, spec.m))
    ind = np.empty((n, spec.m))
    for j in range(spec.m):
        gm[:, j] = g_values(spec.g[j], Z, X if spec.general_mode else None)
        ind[:, j] = X[:, j] <= spec.thresholds[j]
    return gm, ind, (gm * ind).sum(axis=1)


def evaluate_loss(spec: LossModelSpec, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    return loss_components(spec, X, Z)[2]


def cached_components(spec: LossModelSpec, scen: "ScenarioSet"):
    """loss_components of a scenario set, memoised on the set itself."""
    key = ("components", scen.model_hash)
    if key not in scen.aux.extras:
        scen.aux.extras[key] = loss_components(spec, scen.X, scen.Z)
    return scen.aux.extras[key]


@dataclass
class ScenarioSet:
    """Immutable Monte-Carlo draws of (X, Z, L) plus the generating latents."""

    X: np.ndarray
    Z: np.ndarray
    L: np.ndarray
    aux: RosenblattAux
    seed: int
    model_hash: str

    def __post_init__(self):
        for a in (self.X, self.Z, self.L, self.aux.uniforms):
            a.setflags(write=False)
        if self.aux.w is not None:
            self.aux.w.setflags(write=False)

    @property
    def n_scenarios(self) -> int:
        return len(self.L)


def subset_scenarios(scen: ScenarioSet, idx: np.ndarray) -> ScenarioSet:
    """New ScenarioSet restricted to (or resampled over) the given rows."""
    aux = RosenblattAux(
        uniforms=scen.aux.uniforms[idx].copy(),
        w=None if scen.aux.w is None else scen.aux.w[idx].copy(),
        extras=dict(scen.aux.extras),
    )
    return ScenarioSet(
        X=scen.X[idx].copy(),
        Z=scen.Z[idx].copy(),
        L=scen.L[idx].copy(),
        aux=aux,
        seed=scen.seed,
        model_hash=scen.model_hash,
    )


def model_hash(spec: LossModelSpec) -> str:
    import hashlib

    from .serde import spec_to_jsonable

    payload = json.dumps(spec_to_jsonable(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


def simulate(spec: LossModelSpec, n: int, seed: int) -> ScenarioSet:
    """Draw n scenarios: copula uniforms, marginal quantiles, loss evaluation."""
    if n < 1:
        raise ModelError(f"n must be >= 1, got {n}")
    u, aux = spec.dependence.sample_uniforms(n, seed)
    X = np.empty((n, spec.m))
    Z = np.empty((n, spec.n))
    for j in range(spec.m):
        X[:, j] = dist_eval(spec.x_marginals[j], "quantile", _interior(u[:, j]))
    for k in range(spec.n):
        Z[:, k] = dist_eval(spec.z_marginals[k], "quantile", _interior(u[:, spec.m + k]))
    L = evaluate_loss(spec, X, Z)
    return ScenarioSet(X=X, Z=Z, L=L, aux=aux, seed=int(seed), model_hash=model_hash(spec))


def _interior(u: np.ndarray) -> np.ndarray:
    # keep quantile arguments strictly inside (0, 1)
    return np.clip(u, 1e-15, 1.0 - 1e-16)


def check_scenarios(spec: LossModelSpec, scen: ScenarioSet) -> None:
    if scen.model_hash != model_hash(spec):
        raise ModelError("scenario set was generated from a different model spec")


def simulate_stressed(
    base: ScenarioSet,
    spec: LossModelSpec,
    target: tuple,
    stress: StressSpec,
    eps: float,
    mode: str = "marginal",
) -> np.ndarray:
    """Loss column of the stressed model on the base scenarios (common random numbers).

    Marginal mode replaces only the targeted factor by kappa_eps of itself.
    Cascade mode additionally regenerates every other coordinate through its
    bivariate conditional transform given the stressed target, holding each
    coordinate's conditional rank fixed.
    """
    check_scenarios(spec, base)
    if mode not in ("marginal", "cascade"):
        raise ModelError(f"mode must be 'marginal' or 'cascade', got {mode!r}")
    if eps == 0.0:
        return base.L.copy()
    kind, idx = target
    coord = spec.coord(target)
    marg = spec.marginal(target)

    if mode == "marginal" and kind == "x" and not spec.general_mode:
        # only the i-th indicator moves: kappa_eps(X_i) <= d_i iff
        # X_i <= kappa_eps^-1(d_i), so no stressed values are materialised
        d_eps = float(inverse_apply(stress, eps, spec.thresholds[idx]))
        gm, ind, L = cached_components(spec, base)
        moved = (base.X[:, idx] <= d_eps).astype(float) - ind[:, idx]
        return L + gm[:, idx] * moved

    base_col = base.X[:, idx] if kind == "x" else base.Z[:, idx]
    stressed_col = apply_stress(stress, eps, base_col)

    if mode == "marginal":
        if kind == "x":
            X = base.X.copy()
            X[:, idx] = stressed_col
            return evaluate_loss(spec, X, base.Z)
        Z = base.Z.copy()
        Z[:, idx] = stressed_col
        return evaluate_loss(spec, base.X, Z)

    # cascade: move every dependent coordinate along its conditional transform
    u_base = base.aux.uniforms
    u_target = u_base[:, coord]
    u_stressed = _interior(dist_eval(marg, "cdf", stressed_col))
    X = base.X.copy()
    Z = base.Z.copy()
    if kind == "x":
        X[:, idx] = stressed_col
    else:
        Z[:, idx] = stressed_col
    from .copula import cop_cond_cdf, cop_cond_quantile

    for c in range(spec.m + spec.n):
        if c == coord:
            continue
        cop = spec.dependence.pair_copula(coord, c)
        if cop is None:
            continue
        v = cop_cond_cdf(cop, u_base[:, c], u_target)
        u_new = _interior(cop_cond_quantile(cop, v, u_stressed))
        if c < spec.m:
            X[:, c] = dist_eval(spec.x_marginals[c], "quantile", u_new)
        else:
            Z[:, c - spec.m] = dist_eval(spec.z_marginals[c - spec.m], "quantile", u_new)
    return evaluate_loss(spec, X, Z)


# ---------------------------------------------------------------------------
# Discrete / compound model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteModelSpec:
    """T = h(W, Y) with W on a finite ordered support.

    ``cum_probs[k]`` is P(W <= support[k]); the last entry must be 1. The
    aggregation h is either the compound sum of iid severities (severity
    marginal required) or a table of values h(w_k) ignoring Y.
    """

    support: tuple
    cum_probs: tuple
    severity: DistributionSpec | None = None
    h_values: tuple | None = None  # tabulated h(w_k); None means compound sum

    def __post_init__(self):
        w = np.asarray(self.support, dtype=float)
        p = np.asarray(self.cum_probs, dtype=float)
        if len(w) != len(p) or len(w) < 2:
            raise ModelError("support and cum_probs must align, length >= 2")
        if np.any(np.diff(w) <= 0) or np.any(np.diff(p) <= 0):
            raise ModelError("support and cum_probs must be strictly increasing")
        if abs(p[-1] - 1.0) > 1e-12:
            raise ModelError(f"cum_probs must end at 1, got {p[-1]}")
        if self.h_values is None:
            if self.severity is None:
                raise ModelError("compound sum needs a severity marginal")
            if np.any(w != np.arange(len(w))):
                raise ModelError("compound sum needs support 0, 1, ..., d")
        elif len(self.h_values) != len(w):
            raise ModelError("h_values must have one entry per support point")

    @staticmethod
    def compound_nb_gamma(
        freq: NegativeBinomial, severity: DistributionSpec
    ) -> "DiscreteModelSpec":
        ks, pmf = nb_support(freq)
        return DiscreteModelSpec(
            support=tuple(float(k) for k in ks),
            cum_probs=tuple(np.cumsum(pmf).tolist()),
            severity=severity,
        )

    @property
    def r(self) -> int:
        return len(self.support)

    def delta_h_tabulated(self, k: int) -> float:
        # h(w_k) - h(w_{k+1}) for k < r-1, h(w_r) for the last cell (0-based k)
        vals = self.h_values
        return float(vals[k] - vals[k + 1]) if k < self.r - 1 else float(vals[-1])


@dataclass
class DiscreteSample:
    """Simulated (W, T) sample with just enough severity detail for estimators.

    For compound sums, ``y_next`` holds the first unused severity of each
    scenario (the jump to the next frequency cell) and ``sev_weight`` the
    accumulated phi(Phi^-1(U_l)) / f_Y(Y_l) over the severities used.
    """

    model: DiscreteModelSpec
    W: np.ndarray
    T: np.ndarray
    y_next: np.ndarray | None
    sev_weight: np.ndarray | None
    seed: int

    @property
    def n_scenarios(self) -> int:
        return len(self.T)


def simulate_discrete(dm: DiscreteModelSpec, n: int, seed: int) -> DiscreteSample:
    w = np.asarray(dm.support, dtype=float)
    p = np.asarray(dm.cum_probs, dtype=float)
    u_w = uniforms(n, seed, stream=(0,))
    cell = np.searchsorted(p, u_w, side="left").clip(0, len(w) - 1)
    W = w[cell]

    if dm.h_values is not None:
        T = np.asarray(dm.h_values, dtype=float)[cell]
        return DiscreteSample(model=dm, W=W, T=T, y_next=None, sev_weight=None, seed=int(seed))

    d = int(w[-1])
    T = np.zeros(n)
    y_next = np.zeros(n)
    sev_weight = np.zeros(n)
    counts = cell  # W = cell index for 0..d support
    for ell in range(1, d + 2):
        u = _interior(uniforms(n, seed, stream=(1, ell)))
        used = counts >= ell
        nxt = counts == ell - 1
        need = used | nxt
        if not need.any():
            continue
        y = np.zeros(n)
        y[need] = dist_eval(dm.severity, "quantile", u[need])
        if used.any():
            T[used] += y[used]
            dens = dist_eval(dm.severity, "pdf", y[used])
            sev_weight[used] += _phi(ndtri(u[used])) / dens
        if nxt.any():
            y_next[nxt] = y[nxt]
    return DiscreteSample(
        model=dm, W=W, T=T, y_next=y_next, sev_weight=sev_weight, seed=int(seed)
    )


def _phi(z):
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Scenario CSV round trip
# ---------------------------------------------------------------------------


def export_scenarios(scen: ScenarioSet, csv_path, sidecar_path) -> None:
    """CSV with columns X1..Xm, Z1..Zn, L at 17 significant digits, plus sidecar."""
    m = scen.X.shape[1]
    nz = scen.Z.shape[1]
    header = ",".join(
        [f"X{j + 1}" for j in range(m)] + [f"Z{k + 1}" for k in range(nz)] + ["L"]
    )
    data = np.column_stack([scen.X, scen.Z, scen.L])
    np.savetxt(csv_path, data, delimiter=",", header=header, comments="", fmt="%.17g")
    sidecar = {"seed": scen.seed, "model_hash": scen.model_hash, "n": scen.n_scenarios}
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)


def import_scenarios(spec: LossModelSpec, csv_path, sidecar_path) -> ScenarioSet:
    """Rebuild a ScenarioSet from its CSV export; the generating spec is required."""
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    if sidecar["model_hash"] != model_hash(spec):
        raise ModelError("sidecar model_hash does not match the supplied spec")
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    m, nz = spec.m, spec.n
    X = data[:, :m].copy()
    Z = data[:, m : m + nz].copy()
    L = data[:, m + nz].copy()
    if not np.array_equal(evaluate_loss(spec, X, Z), L):
        raise ModelError("imported loss column does not reproduce evaluate_loss(X, Z)")
    u = np.empty((len(L), m + nz))
    for j in range(m):
        u[:, j] = dist_eval(spec.x_marginals[j], "cdf", X[:, j])
    for k in range(nz):
        u[:, m + k] = dist_eval(spec.z_marginals[k], "cdf", Z[:, k])
    return ScenarioSet(
        X=X, Z=Z, L=L, aux=RosenblattAux(uniforms=u), seed=int(sidecar["seed"]),
        model_hash=sidecar["model_hash"],
    )
