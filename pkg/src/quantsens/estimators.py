"""Sensitivity estimators for VaR, ES and the mean of discontinuous losses.

Conditioning conventions
------------------------
Expectations conditional on {L = q_alpha} use the delta-band estimator: the
band between the empirical alpha-delta and alpha+delta quantiles, divided by
the empirical band probability (a conditional sample mean over the band).
Expectations conditional on {X_j = d_j} use dedicated scenario sets whose
rank of X_j is uniform in (p_j - delta, p_j + delta), p_j = F_j(d_j).

At the threshold the loss is discontinuous in X_j, so the conditional loss
must be read from the side the stress-flip set approaches: the jump term g_j
belongs in L iff the (per-pair) stress direction is +1. Folding that into
the formulas leaves sign-unified expressions in the loss-without-term-j,
which is what the implementations below evaluate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .copula import psi1 as copula_psi1
from .distributions import dist_eval, uniforms
from .model import (
    DiscreteSample,
    LossModelSpec,
    ScenarioSet,
    cached_components,
    check_scenarios,
    partial_g,
    simulate,
)
from .stress import StressSpec, deriv_K, deriv_Kinv, direction

__all__ = [
    "VaR",
    "ES",
    "Mean",
    "RiskMeasureSpec",
    "BandSpec",
    "BootstrapSpec",
    "SensitivityEstimate",
    "EstimatorError",
    "risk_measure",
    "density_at_quantile",
    "conditional_scenarios",
    "marginal_sens",
    "cascade_sens",
    "discrete_sens",
    "compound_freq_sens",
    "compound_sev_sens",
    "bootstrap",
    "write_estimates_csv",
]

_PSI1_SIGN_AGREEMENT = 0.999


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class VaR:
    alpha: float

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise EstimatorError(f"VaR alpha must be in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class ES:
    alpha: float

    def __post_init__(self):
        if not 0 <= self.alpha < 1:
            raise EstimatorError(f"ES alpha must be in [0, 1), got {self.alpha}")


@dataclass(frozen=True)
class Mean:
    pass


RiskMeasureSpec = VaR | ES | Mean


@dataclass(frozen=True)
class BandSpec:
    delta: float = 0.005

    def __post_init__(self):
        if not 0 < self.delta < 0.5:
            raise EstimatorError(f"delta must be in (0, 0.5), got {self.delta}")

    def check_alpha(self, alpha: float) -> None:
        if not (alpha - self.delta > 0 and alpha + self.delta < 1):
            raise EstimatorError(
                f"band delta={self.delta} invalid at alpha={alpha}: needs "
                "0 < alpha - delta and alpha + delta < 1"
            )


@dataclass(frozen=True)
class BootstrapSpec:
    n_replicates: int = 100
    fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.n_replicates < 2:
            raise EstimatorError("bootstrap needs at least 2 replicates")
        if not 0 < self.fraction <= 1:
            raise EstimatorError(f"fraction must be in (0, 1], got {self.fraction}")


@dataclass
class SensitivityEstimate:
    value: float
    stderr: float
    ci_low: float
    ci_high: float
    n_bootstrap: int
    n_effective: int
    decomposition: dict | None = None
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Risk measures
# ---------------------------------------------------------------------------


def _loss_of(scen) -> np.ndarray:
    return scen.L if isinstance(scen, ScenarioSet) else np.asarray(scen, dtype=float)


def empirical_var(loss: np.ndarray, alpha: float) -> float:
    """Left empirical quantile: the ceil(alpha n)-th order statistic."""
    n = len(loss)
    if n == 0:
        raise EstimatorError("empty sample")
    k = max(1, int(np.ceil(alpha * n)))
    return float(np.partition(loss, k - 1)[k - 1])


def risk_measure(scen, rm: RiskMeasureSpec) -> float:
    """Empirical VaR (left quantile), boundary-corrected ES, or the mean."""
    loss = _loss_of(scen)
    if len(loss) == 0:
        raise EstimatorError("empty sample")
    if isinstance(rm, Mean):
        return float(loss.mean())
    if isinstance(rm, VaR):
        return empirical_var(loss, rm.alpha)
    q = empirical_var(loss, rm.alpha) if rm.alpha > 0 else float(loss.min())
    above = loss > q
    p_le = 1.0 - above.mean()
    return float(
        (loss * above).mean() / (1.0 - rm.alpha) + q * (p_le - rm.alpha) / (1.0 - rm.alpha)
    )


def density_at_quantile(scen, alpha: float, band: BandSpec = BandSpec()) -> float:
    """Quantile-spacing density estimate 2 delta / (q_{a+d} - q_{a-d})."""
    band.check_alpha(alpha)
    loss = _loss_of(scen)
    q_lo = empirical_var(loss, alpha - band.delta)
    q_hi = empirical_var(loss, alpha + band.delta)
    if q_hi <= q_lo:
        raise EstimatorError(
            f"degenerate quantile spacing around alpha={alpha}: ties in the sample"
        )
    return 2.0 * band.delta / (q_hi - q_lo)


def _band_mask(loss: np.ndarray, alpha: float, band: BandSpec) -> np.ndarray:
    band.check_alpha(alpha)
    q_lo = empirical_var(loss, alpha - band.delta)
    q_hi = empirical_var(loss, alpha + band.delta)
    return (loss > q_lo) & (loss <= q_hi)


# ---------------------------------------------------------------------------
# Conditional scenario generation for {X_j = d_j}
# ---------------------------------------------------------------------------


def conditional_scenarios(
    spec: LossModelSpec, j: int, band: BandSpec, n: int, seed: int
) -> ScenarioSet:
    """Scenarios whose rank of X_j is uniform in (p_j - delta, p_j + delta).

    The band uniform is drawn directly and the remaining copula coordinates
    are sampled from their exact conditional law given it (no rejection).
    """
    p_j = spec.default_prob(j)
    lo, hi = p_j - band.delta, p_j + band.delta
    if not (0 < lo and hi < 1):
        raise EstimatorError(
            f"infeasible band around p_{j + 1} = {p_j:.6g} with delta = {band.delta}"
        )
    u_band = lo + (hi - lo) * uniforms(n, seed, stream=(10,))
    u = spec.dependence.conditional_uniforms(j, u_band, seed)
    X = np.empty((n, spec.m))
    Z = np.empty((n, spec.n))
    from .model import RosenblattAux, _interior, evaluate_loss, model_hash

    for jj in range(spec.m):
        X[:, jj] = dist_eval(spec.x_marginals[jj], "quantile", _interior(u[:, jj]))
    for k in range(spec.n):
        Z[:, k] = dist_eval(spec.z_marginals[k], "quantile", _interior(u[:, spec.m + k]))
    L = evaluate_loss(spec, X, Z)
    aux = RosenblattAux(uniforms=u, extras={"conditioned_on": j, "band": (lo, hi)})
    return ScenarioSet(X=X, Z=Z, L=L, aux=aux, seed=int(seed), model_hash=model_hash(spec))


def _derived_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------------------
# Bootstrap machinery
# ---------------------------------------------------------------------------


def _run_with_bootstrap(point, sizes: dict, boot: BootstrapSpec | None):
    """Evaluate ``point`` on the full data and optionally on B resamples.

    ``point`` maps a dict of index arrays (or None for the full dataset) to
    (value, decomposition | None). The reported value under bootstrap is the
    mean of the replicates, matching the averaging used in the study runs.
    """
    full_value, full_dec = point({name: None for name in sizes})
    if boot is None:
        return full_value, 0.0, full_value, full_value, 0, full_dec

    values = []
    decs = []
    failures = 0
    for b in range(boot.n_replicates):
        idx = {}
        for pos, (name, size) in enumerate(sorted(sizes.items())):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=int(boot.seed), spawn_key=(b, pos))
            )
            idx[name] = rng.integers(0, size, size=max(1, int(round(boot.fraction * size))))
        try:
            v, dec = point(idx)
        except EstimatorError:
            failures += 1
            continue
        values.append(v)
        decs.append(dec)
    if failures > 0.1 * boot.n_replicates:
        raise EstimatorError(
            f"bootstrap failed on {failures}/{boot.n_replicates} replicates"
        )
    values = np.asarray(values)
    value = float(values.mean())
    stderr = float(values.std(ddof=1))
    ci_low, ci_high = (float(x) for x in np.percentile(values, [2.5, 97.5]))
    dec = None
    if decs and decs[0] is not None:
        keys = decs[0].keys()
        dec = {k: float(np.mean([d[k] for d in decs])) for k in keys}
    return value, stderr, ci_low, ci_high, len(values), dec


def bootstrap(est, scen: ScenarioSet, B: int, resample_size: int, seed: int):
    """Generic scenario bootstrap of an estimator closure.

    ``est`` maps a ScenarioSet to a float. Returns (value, stderr, ci) where
    the value is the mean over replicates and the ci the 2.5/97.5 percentile
    interval. Failing replicates are dropped; more than 10% failures raises.
    """
    if B < 2:
        raise EstimatorError("B must be >= 2")
    from .model import subset_scenarios

    values = []
    failures = 0
    for b in range(B):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(b,)))
        idx = rng.integers(0, scen.n_scenarios, size=resample_size)
        try:
            values.append(float(est(subset_scenarios(scen, idx))))
        except Exception:
            failures += 1
    if failures > 0.1 * B:
        raise EstimatorError(f"bootstrap failed on {failures}/{B} replicates")
    values = np.asarray(values)
    ci = tuple(float(x) for x in np.percentile(values, [2.5, 97.5]))
    return float(values.mean()), float(values.std(ddof=1)), ci


# ---------------------------------------------------------------------------
# Marginal sensitivities (continuous factors and default indicators)
# ---------------------------------------------------------------------------


def _z_integrand(spec: LossModelSpec, scen: ScenarioSet, target: tuple, stress: StressSpec):
    """Per-scenario K(target) * sum_j d_target g_j * 1{X_j <= d_j} on a scenario set."""
    kind, idx = target
    gm, ind, _ = cached_components(spec, scen)
    acc = np.zeros(scen.n_scenarios)
    x_arg = scen.X if spec.general_mode else None
    for j in range(spec.m):
        pd = partial_g(spec.g[j], scen.Z, x_arg, (kind, idx))
        if np.any(pd != 0.0):
            acc += pd * ind[:, j]
    col = scen.X[:, idx] if kind == "x" else scen.Z[:, idx]
    return deriv_K(stress, col) * acc


def _conditional_parts(spec: LossModelSpec, cond: ScenarioSet, j: int):
    """(loss without term j, g_j) on a conditional scenario set."""
    gm, ind, L = cached_components(spec, cond)
    l_minus = L - gm[:, j] * ind[:, j]
    return l_minus, gm[:, j]


def _take(a: np.ndarray, idx):
    return a if idx is None else a[idx]


def marginal_sens(
    scen: ScenarioSet,
    spec: LossModelSpec,
    target: tuple,
    stress: StressSpec,
    rm: RiskMeasureSpec,
    band: BandSpec = BandSpec(),
    boot: BootstrapSpec | None = None,
    conditional: ScenarioSet | None = None,
    n_conditional: int | None = None,
) -> SensitivityEstimate:
    """Marginal sensitivity of VaR/ES/mean to one factor under one stress.

    Z-targets are conditional (band, tail, or plain) averages of the
    stress-speed-weighted jump derivatives on the base scenarios. X-targets
    evaluate the threshold formulas on a scenario set conditional on
    {X_i = d_i}, generated internally unless supplied.
    """
    check_scenarios(spec, scen)
    kind, idx = target
    if kind == "z" and not 0 <= idx < spec.n:
        raise EstimatorError(f"Z index out of range: {idx}")
    if kind == "x" and not 0 <= idx < spec.m:
        raise EstimatorError(f"X index out of range: {idx}")
    alpha = getattr(rm, "alpha", None)
    diagnostics: dict = {}

    if kind == "z":
        A = _z_integrand(spec, scen, target, stress)
        sizes = {"base": scen.n_scenarios}

        def point(sel):
            L = _take(scen.L, sel["base"])
            a = _take(A, sel["base"])
            if isinstance(rm, Mean):
                return float(a.mean()), None
            if isinstance(rm, VaR):
                mask = _band_mask(L, alpha, band)
                if not mask.any():
                    raise EstimatorError("empty conditioning band")
                return float(a[mask].mean()), None
            q = empirical_var(L, alpha) if alpha > 0 else float(L.min())
            mask = L >= q
            return float(a[mask].mean()), None

        value, stderr, lo, hi, nb, _ = _run_with_bootstrap(point, sizes, boot)
        if isinstance(rm, VaR):
            n_eff = int(_band_mask(scen.L, alpha, band).sum())
        elif isinstance(rm, ES):
            n_eff = int((scen.L >= empirical_var(scen.L, alpha)).sum()) if alpha > 0 else scen.n_scenarios
        else:
            n_eff = scen.n_scenarios
        return SensitivityEstimate(value, stderr, lo, hi, nb, n_eff, None, diagnostics)

    # X-target
    if conditional is None:
        n_cond = n_conditional or min(scen.n_scenarios, 200_000)
        conditional = conditional_scenarios(
            spec, idx, band, n_cond, _derived_seed(scen.seed, 100, idx)
        )
    l_minus, g_i = _conditional_parts(spec, conditional, idx)
    d_i = spec.thresholds[idx]
    f_i = float(dist_eval(spec.x_marginals[idx], "pdf", d_i))
    kinv = float(deriv_Kinv(stress, d_i))
    diagnostics["f_i(d_i)"] = f_i
    diagnostics["Kinv(d_i)"] = kinv
    diagnostics["c_kappa"] = direction(stress)
    A_gen = _z_integrand(spec, scen, target, stress) if spec.general_mode else None

    sizes = {"base": scen.n_scenarios, "cond": conditional.n_scenarios}

    def point(sel):
        L = _take(scen.L, sel["base"])
        lm = _take(l_minus, sel["cond"])
        gi = _take(g_i, sel["cond"])
        if isinstance(rm, Mean):
            val = kinv * f_i * float(gi.mean())
            if A_gen is not None:
                val += float(_take(A_gen, sel["base"]).mean())
            return val, None
        if isinstance(rm, VaR):
            q = empirical_var(L, alpha)
            fq = density_at_quantile(L, alpha, band)
            val = kinv * f_i / fq * float((lm <= q).mean() - (lm + gi <= q).mean())
            if A_gen is not None:
                mask = _band_mask(L, alpha, band)
                ag = _take(A_gen, sel["base"])
                val += float(ag[mask].mean())
            return val, None
        q = empirical_var(L, alpha) if alpha > 0 else float(L.min())
        val = kinv * f_i / (1.0 - alpha) * float(
            (np.maximum(lm + gi - q, 0.0) - np.maximum(lm - q, 0.0)).mean()
        )
        if A_gen is not None:
            ag = _take(A_gen, sel["base"])
            val += float(ag[L >= q].mean())
        return val, None

    value, stderr, lo, hi, nb, _ = _run_with_bootstrap(point, sizes, boot)
    return SensitivityEstimate(
        value, stderr, lo, hi, nb, conditional.n_scenarios, None, diagnostics
    )


# ---------------------------------------------------------------------------
# Cascade sensitivities
# ---------------------------------------------------------------------------


def _pair_psi1(spec: LossModelSpec, target: tuple, other_coord: int, y_vals, other_vals):
    """psi1 between the stressed factor and another coordinate, per scenario."""
    coord = spec.coord(target)
    cop = spec.dependence.pair_copula(coord, other_coord)
    if cop is None:
        return None
    fi = spec.marginal(target)
    if other_coord < spec.m:
        fj = spec.x_marginals[other_coord]
    else:
        fj = spec.z_marginals[other_coord - spec.m]
    return copula_psi1(cop, y_vals, other_vals, fi, fj)


def cascade_sens(
    scen: ScenarioSet,
    spec: LossModelSpec,
    target: tuple,
    stress: StressSpec,
    rm: RiskMeasureSpec,
    band: BandSpec = BandSpec(),
    boot: BootstrapSpec | None = None,
    conditional_sets: dict | None = None,
    n_conditional: int | None = None,
) -> SensitivityEstimate:
    """Cascade (dependence-propagated) sensitivity with its decomposition.

    Returns the sum over per-factor contributions: continuous-factor terms on
    the base scenarios (psi1-weighted jump derivatives) and one threshold term
    per indicator, each on its own {X_j = d_j} conditional set. The self term
    reduces to the marginal formula. Per-pair directions c(kappa; j) are
    resolved empirically from the sign of psi1 and must be scenario-constant
    (99.9% agreement), otherwise the monotonicity assumption fails.
    """
    check_scenarios(spec, scen)
    if not isinstance(rm, (VaR, ES)):
        raise EstimatorError("cascade sensitivity is defined for VaR and ES")
    kind, idx = target
    alpha = rm.alpha
    c_kappa = direction(stress)
    coord = spec.coord(target)
    y_base = scen.X[:, idx] if kind == "x" else scen.Z[:, idx]
    diagnostics: dict = {"c_kappa": c_kappa}

    # continuous-factor terms: per-scenario integrand per Z coordinate
    cont: dict[str, np.ndarray] = {}
    gm, ind, _ = cached_components(spec, scen)
    x_arg = scen.X if spec.general_mode else None
    for k in range(spec.n):
        acc = np.zeros(scen.n_scenarios)
        any_nz = False
        for j in range(spec.m):
            pd = partial_g(spec.g[j], scen.Z, x_arg, ("z", k))
            if np.any(pd != 0.0):
                acc += pd * ind[:, j]
                any_nz = True
        if not any_nz:
            continue
        if kind == "z" and k == idx:
            psi = 1.0
        else:
            psi = _pair_psi1(spec, target, spec.m + k, y_base, scen.Z[:, k])
            if psi is None:
                continue
        cont[f"Z{k + 1}"] = deriv_K(stress, y_base) * acc * psi

    # general mode adds continuous-style terms in the X coordinates
    if spec.general_mode:
        for jx in range(spec.m):
            acc = np.zeros(scen.n_scenarios)
            any_nz = False
            for j in range(spec.m):
                pd = partial_g(spec.g[j], scen.Z, scen.X, ("x", jx))
                if np.any(pd != 0.0):
                    acc += pd * ind[:, j]
                    any_nz = True
            if not any_nz:
                continue
            if kind == "x" and jx == idx:
                psi = 1.0
            else:
                psi = _pair_psi1(spec, target, jx, y_base, scen.X[:, jx])
                if psi is None:
                    continue
            key = f"X{jx + 1}:g"
            cont[key] = deriv_K(stress, y_base) * acc * psi

    # threshold terms: one conditional dataset per reachable indicator
    cond_sets: dict[int, ScenarioSet] = dict(conditional_sets or {})
    thresh: dict[int, dict] = {}
    for j in range(spec.m):
        is_self = kind == "x" and j == idx
        if not is_self and spec.dependence.pair_copula(coord, j) is None:
            continue
        if j not in cond_sets:
            n_cond = n_conditional or min(scen.n_scenarios, 200_000)
            cond_sets[j] = conditional_scenarios(
                spec, j, band, n_cond, _derived_seed(scen.seed, 100, j)
            )
        cond = cond_sets[j]
        l_minus, g_j = _conditional_parts(spec, cond, j)
        y_cond = cond.X[:, idx] if kind == "x" else cond.Z[:, idx]
        if is_self:
            psi = np.ones(cond.n_scenarios)
            c_j = c_kappa
        else:
            psi = np.asarray(
                _pair_psi1(spec, target, j, y_cond, cond.X[:, j]), dtype=float
            )
            moving = np.abs(psi) > 1e-14
            if moving.any():
                signs = np.sign(psi[moving])
                agree = max((signs > 0).mean(), (signs < 0).mean())
                if agree < _PSI1_SIGN_AGREEMENT:
                    raise EstimatorError(
                        f"psi1 sign not scenario-constant for X{j + 1} "
                        f"(agreement {agree:.4f}); local monotonicity of the "
                        "conditional transform fails"
                    )
                c_j = int(c_kappa * (1 if (signs > 0).mean() >= 0.5 else -1))
            else:
                c_j = 0
        diagnostics[f"c_kappa_X{j + 1}"] = c_j
        f_j = float(dist_eval(spec.x_marginals[j], "pdf", spec.thresholds[j]))
        thresh[j] = {
            "w": deriv_Kinv(stress, y_cond) * psi,
            "l_minus": l_minus,
            "g": g_j,
            "f_j": f_j,
        }

    sizes = {"base": scen.n_scenarios}
    for j in thresh:
        sizes[f"cond{j}"] = cond_sets[j].n_scenarios

    def point(sel):
        L = _take(scen.L, sel["base"])
        dec = {}
        if isinstance(rm, VaR):
            q = empirical_var(L, alpha)
            fq = density_at_quantile(L, alpha, band)
            mask = _band_mask(L, alpha, band)
            if not mask.any():
                raise EstimatorError("empty conditioning band")
            for key, vec in cont.items():
                dec[key] = float(_take(vec, sel["base"])[mask].mean())
            for j, parts in thresh.items():
                w = _take(parts["w"], sel[f"cond{j}"])
                lm = _take(parts["l_minus"], sel[f"cond{j}"])
                gj = _take(parts["g"], sel[f"cond{j}"])
                flip = (lm <= q).astype(float) - (lm + gj <= q)
                dec[f"X{j + 1}"] = dec.get(f"X{j + 1}", 0.0) + float(
                    parts["f_j"] / fq * (w * flip).mean()
                )
        else:
            q = empirical_var(L, alpha) if alpha > 0 else float(L.min())
            tail = L >= q
            for key, vec in cont.items():
                dec[key] = float(_take(vec, sel["base"])[tail].mean())
            for j, parts in thresh.items():
                w = _take(parts["w"], sel[f"cond{j}"])
                lm = _take(parts["l_minus"], sel[f"cond{j}"])
                gj = _take(parts["g"], sel[f"cond{j}"])
                stoploss = np.maximum(lm + gj - q, 0.0) - np.maximum(lm - q, 0.0)
                dec[f"X{j + 1}"] = dec.get(f"X{j + 1}", 0.0) + float(
                    parts["f_j"] / (1.0 - alpha) * (w * stoploss).mean()
                )
        # merge the general-mode X continuous parts into the X terms
        for key in list(dec):
            if key.endswith(":g"):
                base = key[:-2]
                dec[base] = dec.get(base, 0.0) + dec.pop(key)
        return float(sum(dec.values())), dec

    value, stderr, lo, hi, nb, dec = _run_with_bootstrap(point, sizes, boot)
    n_eff = min(
        [int(_band_mask(scen.L, alpha, band).sum()) if isinstance(rm, VaR) else int((scen.L >= empirical_var(scen.L, alpha)).sum())]
        + [cond_sets[j].n_scenarios for j in thresh]
    )
    return SensitivityEstimate(value, stderr, lo, hi, nb, n_eff, dec, diagnostics)


# ---------------------------------------------------------------------------
# Discrete-input sensitivity and the compound closed forms
# ---------------------------------------------------------------------------


def discrete_sens(
    dsamp: DiscreteSample,
    stress: StressSpec,
    rm: RiskMeasureSpec,
    band: BandSpec = BandSpec(),
    boot: BootstrapSpec | None = None,
) -> SensitivityEstimate:
    """Sensitivity of VaR/ES to the discrete frequency through a stress on its rank.

    The stress acts on the uniform generating W, so the speeds are evaluated
    at the cell probabilities p_k. For compound sums the jump to the next
    cell is the scenario's first unused severity.
    """
    if not isinstance(rm, (VaR, ES)):
        raise EstimatorError("discrete sensitivity is defined for VaR and ES")
    dm = dsamp.model
    alpha = rm.alpha
    c = direction(stress)
    p = np.asarray(dm.cum_probs)
    kinv = np.array([float(deriv_Kinv(stress, pk)) for pk in p])
    cells = []
    for k in range(dm.r):
        sel = np.flatnonzero(dsamp.W == dm.support[k])
        if len(sel) == 0:
            if kinv[k] != 0.0:
                raise EstimatorError(
                    f"support value w_{k + 1} = {dm.support[k]} has no simulated mass"
                )
            continue
        if dm.h_values is not None:
            delta = np.full(len(sel), dm.delta_h_tabulated(k))
        elif k < dm.r - 1:
            delta = -dsamp.y_next[sel]
        else:
            delta = dsamp.T[sel]  # h(w_r, Y) itself; weight is 0 for Wang-type stresses
        cells.append((k, sel, delta))

    sizes = {"all": dsamp.n_scenarios}

    def point(sel_map):
        idx = sel_map["all"]
        if idx is None:
            T = dsamp.T
            members = {k: (s, d) for k, s, d in cells}
        else:
            T = dsamp.T[idx]
            W = dsamp.W[idx]
            members = {}
            for k, _, _ in cells:
                m = np.flatnonzero(W == dm.support[k])
                if dm.h_values is not None:
                    d = np.full(len(m), dm.delta_h_tabulated(k))
                elif k < dm.r - 1:
                    d = -dsamp.y_next[idx][m]
                else:
                    d = T[m]
                members[k] = (m, d)
        q = empirical_var(T, alpha)
        total = 0.0
        if isinstance(rm, VaR):
            fq = density_at_quantile(T, alpha, band)
            for k, (m, d) in members.items():
                if len(m) == 0 or kinv[k] == 0.0:
                    continue
                tk = T[m]
                total += kinv[k] * float((tk <= q + c * d).mean() - (tk <= q).mean())
            total *= c / fq
        else:
            for k, (m, d) in members.items():
                if len(m) == 0 or kinv[k] == 0.0:
                    continue
                tk = T[m]
                total += kinv[k] * float(
                    (np.maximum(tk - c * d - q, 0.0) - np.maximum(tk - q, 0.0)).mean()
                )
            total *= -c / (1.0 - alpha)
        return total, None

    value, stderr, lo, hi, nb, _ = _run_with_bootstrap(point, sizes, boot)
    n_eff = min(len(s) for _, s, _ in cells) if cells else 0
    return SensitivityEstimate(
        value, stderr, lo, hi, nb, n_eff, None, {"c_kappa": c}
    )


def _wang_v(p: np.ndarray, alpha: float) -> np.ndarray:
    from scipy.special import ndtri

    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    inner = (p > 0) & (p < 1)
    z = ndtri(p[inner])
    out[inner] = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi) / (1.0 - alpha)
    return out


def compound_freq_sens(cm, alpha: float, n: int, seed: int) -> SensitivityEstimate:
    """Closed-form Wang-stress frequency sensitivity of a compound sum's ES.

    Weighted sum over cells of stop-loss expectations of the first-k severity
    sums, with weights v(p_k) - v(p_{k+1}) and v(p) = phi(Phi^-1(p))/(1-alpha).
    Stop-loss terms are evaluated by Monte Carlo on fresh severity draws.
    """
    from .model import simulate_discrete

    if cm.h_values is not None:
        raise EstimatorError("compound closed forms need a compound-sum model")
    dsamp = simulate_discrete(cm, n, seed)
    q = empirical_var(dsamp.T, alpha)
    es = risk_measure(dsamp.T, ES(alpha))
    p = np.asarray(cm.cum_probs)
    d = cm.r - 1
    v = _wang_v(p, alpha)
    weights = v[:d] - v[1:]
    s = np.zeros(n)
    infl = np.zeros(n)
    total = 0.0
    for k in range(1, d + 1):
        u = np.clip(uniforms(n, _derived_seed(seed, 7, k), stream=(20,)), 1e-15, 1 - 1e-16)
        s = s + dist_eval(cm.severity, "quantile", u)
        contrib = weights[k - 1] * np.maximum(s - q, 0.0)
        infl += contrib
        total += float(contrib.mean())
    stderr = float(infl.std(ddof=1) / np.sqrt(n))
    return SensitivityEstimate(
        value=total,
        stderr=stderr,
        ci_low=total - 1.96 * stderr,
        ci_high=total + 1.96 * stderr,
        n_bootstrap=0,
        n_effective=n,
        diagnostics={"es": es, "scaled": total / es, "q_alpha": q},
    )


def compound_sev_sens(cm, alpha: float, n: int, seed: int) -> SensitivityEstimate:
    """Wang-stress severity sensitivity of a compound sum's ES.

    Tail average of the accumulated severity score sum_l v(U_l)/f_Y(Y_l) over
    the severities actually used by each scenario.
    """
    from .model import simulate_discrete

    if cm.h_values is not None:
        raise EstimatorError("compound closed forms need a compound-sum model")
    dsamp = simulate_discrete(cm, n, seed)
    q = empirical_var(dsamp.T, alpha)
    es = risk_measure(dsamp.T, ES(alpha))
    contrib = (dsamp.T > q) * dsamp.sev_weight / (1.0 - alpha)
    value = float(contrib.mean())
    stderr = float(contrib.std(ddof=1) / np.sqrt(n))
    return SensitivityEstimate(
        value=value,
        stderr=stderr,
        ci_low=value - 1.96 * stderr,
        ci_high=value + 1.96 * stderr,
        n_bootstrap=0,
        n_effective=int((dsamp.T > q).sum()),
        diagnostics={"es": es, "scaled": value / es, "q_alpha": q},
    )


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------


def write_estimates_csv(rows: list[dict], path) -> None:
    """Rows of estimate records to CSV; decomposition keys become columns."""
    base_cols = [
        "target",
        "rm",
        "alpha",
        "stress_type",
        "value",
        "stderr",
        "ci_low",
        "ci_high",
        "n_effective",
    ]
    dec_cols: list[str] = []
    for r in rows:
        for k in (r.get("decomposition") or {}):
            name = f"C_{k}"
            if name not in dec_cols:
                dec_cols.append(name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(base_cols + dec_cols) + "\n")
        for r in rows:
            vals = []
            for c in base_cols:
                v = r.get(c, "")
                vals.append(_render(v))
            dec = r.get("decomposition") or {}
            for c in dec_cols:
                vals.append(_render(dec.get(c[2:], "")))
            fh.write(",".join(vals) + "\n")


def _render(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)
