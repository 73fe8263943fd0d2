"""JSON (de)serialisation of every spec type.

The jsonable form doubles as the canonical content for model hashing and as
the CLI config schema, so tags and field names here are the wire format.
"""

from __future__ import annotations

import numpy as np

from . import copula as cp
from . import distributions as ds
from . import model as md
from . import stress as st

__all__ = [
    "spec_to_jsonable",
    "parse_distribution",
    "parse_stress",
    "parse_bivariate_copula",
    "parse_dependence",
    "parse_g_function",
    "parse_loss_model",
    "parse_discrete_model",
]


def spec_to_jsonable(obj):
    if isinstance(obj, ds.Normal):
        return {"type": "normal", "mean": obj.mean, "sd": obj.sd}
    if isinstance(obj, ds.Uniform01):
        return {"type": "uniform01"}
    if isinstance(obj, ds.Lognormal):
        return {"type": "lognormal", "mu": obj.mu, "sigma": obj.sigma}
    if isinstance(obj, ds.StudentT):
        return {"type": "student_t", "nu": int(obj.nu), "standardised": obj.standardised}
    if isinstance(obj, ds.Gamma):
        return {"type": "gamma", "shape": obj.shape, "scale": obj.scale}
    if isinstance(obj, ds.NegativeBinomial):
        return {
            "type": "negative_binomial",
            "mean": obj.mean,
            "overdispersion": obj.overdispersion,
            "truncation_quantile": obj.truncation_quantile,
        }
    if isinstance(obj, ds.InverseGamma):
        return {"type": "inverse_gamma", "shape": obj.shape, "rate": obj.rate}

    if isinstance(obj, st.Additive):
        return {"type": "additive", "beta": obj.beta}
    if isinstance(obj, st.Proportional):
        return {"type": "proportional", "beta": obj.beta}
    if isinstance(obj, st.Probability):
        return {"type": "probability", "beta": obj.beta, "marginal": spec_to_jsonable(obj.marginal)}
    if isinstance(obj, st.Mixture):
        return {
            "type": "mixture",
            "base": spec_to_jsonable(obj.base),
            "alternative": spec_to_jsonable(obj.alternative),
        }
    if isinstance(obj, st.TailUpper):
        return {"type": "tail_upper", "t": obj.t}
    if isinstance(obj, st.TailLower):
        return {"type": "tail_lower", "t": obj.t}
    if isinstance(obj, st.Wang):
        return {"type": "wang", "sign": obj.sign}

    if isinstance(obj, cp.Clayton):
        return {"type": "clayton", "theta": obj.theta}
    if isinstance(obj, cp.Gumbel):
        return {"type": "gumbel", "theta": obj.theta}
    if isinstance(obj, cp.BvGaussian):
        return {"type": "gaussian", "r": obj.r}
    if isinstance(obj, cp.BvStudentT):
        return {"type": "student_t", "r": obj.r, "nu": int(obj.nu)}
    if isinstance(obj, cp.BvArchimedean):
        return {"type": "archimedean", "generator": spec_to_jsonable(obj.generator)}
    if isinstance(obj, cp.MultivariateTSpec):
        return {
            "type": "multivariate_t",
            "sigma": [list(row) for row in obj.sigma],
            "nu": int(obj.nu),
        }
    if isinstance(obj, cp.Independence):
        return {"type": "independence", "dim": obj.dim}
    if isinstance(obj, cp.PairwiseDependence):
        return {
            "type": "pairwise",
            "dim": obj.dim,
            "pairs": [
                {"i": int(i), "j": int(j), "copula": spec_to_jsonable(c)}
                for i, j, c in obj.pairs
            ],
        }
    if isinstance(obj, cp.MvtDependence):
        return spec_to_jsonable(obj.spec)

    if isinstance(obj, md.LinearG):
        return {
            "type": "linear",
            "z_coeffs": list(obj.z_coeffs),
            "x_coeffs": list(obj.x_coeffs),
            "const": obj.const,
        }
    if isinstance(obj, md.LayerSum):
        return {
            "type": "layer_sum",
            "terms": [
                {"z_index": int(k), "attachment": s, "limit": t} for k, s, t in obj.terms
            ],
        }
    if isinstance(obj, md.IdentityG):
        return {"type": "identity", "z_index": int(obj.z_index)}

    if isinstance(obj, md.LossModelSpec):
        return {
            "type": "loss_model",
            "x_marginals": [spec_to_jsonable(d) for d in obj.x_marginals],
            "z_marginals": [spec_to_jsonable(d) for d in obj.z_marginals],
            "thresholds": list(obj.thresholds),
            "g": [spec_to_jsonable(g) for g in obj.g],
            "dependence": spec_to_jsonable(obj.dependence),
            "general_mode": obj.general_mode,
        }
    if isinstance(obj, md.DiscreteModelSpec):
        return {
            "type": "discrete_model",
            "support": list(obj.support),
            "cum_probs": list(obj.cum_probs),
            "severity": None if obj.severity is None else spec_to_jsonable(obj.severity),
            "h_values": None if obj.h_values is None else list(obj.h_values),
        }
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _tag(d: dict, ctx: str) -> str:
    if not isinstance(d, dict) or "type" not in d:
        raise ValueError(f"{ctx}: expected an object with a 'type' field")
    return d["type"]


def parse_distribution(d: dict) -> ds.DistributionSpec:
    t = _tag(d, "distribution")
    if t == "normal":
        return ds.Normal(mean=d.get("mean", 0.0), sd=d.get("sd", 1.0))
    if t == "uniform01":
        return ds.Uniform01()
    if t == "lognormal":
        return ds.Lognormal(mu=d["mu"], sigma=d["sigma"])
    if t == "student_t":
        return ds.StudentT(nu=int(d["nu"]), standardised=bool(d.get("standardised", False)))
    if t == "gamma":
        return ds.Gamma(shape=d["shape"], scale=d.get("scale", 1.0))
    if t == "negative_binomial":
        return ds.NegativeBinomial(
            mean=d["mean"],
            overdispersion=d["overdispersion"],
            truncation_quantile=d.get("truncation_quantile", 0.999),
        )
    if t == "inverse_gamma":
        return ds.InverseGamma(shape=d["shape"], rate=d["rate"])
    raise ValueError(f"unknown distribution type {t!r}")


def parse_stress(d: dict) -> st.StressSpec:
    t = _tag(d, "stress")
    if t == "additive":
        return st.Additive(beta=d["beta"])
    if t == "proportional":
        return st.Proportional(beta=d["beta"])
    if t == "probability":
        return st.Probability(beta=d["beta"], marginal=parse_distribution(d["marginal"]))
    if t == "mixture":
        return st.Mixture(
            base=parse_distribution(d["base"]),
            alternative=parse_distribution(d["alternative"]),
        )
    if t == "tail_upper":
        return st.TailUpper(t=d["t"])
    if t == "tail_lower":
        return st.TailLower(t=d["t"])
    if t == "wang":
        return st.Wang(sign=int(d.get("sign", 1)))
    raise ValueError(f"unknown stress type {t!r}")


def parse_bivariate_copula(d: dict) -> cp.BivariateCopulaSpec:
    t = _tag(d, "copula")
    if t == "gaussian":
        return cp.BvGaussian(r=d["r"])
    if t == "student_t":
        return cp.BvStudentT(r=d["r"], nu=int(d["nu"]))
    if t == "archimedean":
        g = d["generator"]
        gt = _tag(g, "generator")
        if gt == "clayton":
            return cp.BvArchimedean(cp.Clayton(theta=g["theta"]))
        if gt == "gumbel":
            return cp.BvArchimedean(cp.Gumbel(theta=g["theta"]))
        raise ValueError(f"unknown generator type {gt!r}")
    raise ValueError(f"unknown copula type {t!r}")


def parse_dependence(d: dict) -> cp.DependenceStructure:
    t = _tag(d, "dependence")
    if t == "independence":
        return cp.Independence(dim=int(d["dim"]))
    if t == "pairwise":
        pairs = tuple(
            (int(p["i"]), int(p["j"]), parse_bivariate_copula(p["copula"]))
            for p in d["pairs"]
        )
        return cp.PairwiseDependence(dim=int(d["dim"]), pairs=pairs)
    if t == "multivariate_t":
        sigma = np.asarray(d["sigma"], dtype=float)
        return cp.MvtDependence(cp.MultivariateTSpec.from_matrix(sigma, nu=int(d["nu"])))
    raise ValueError(f"unknown dependence type {t!r}")


def parse_g_function(d: dict) -> md.GFunctionSpec:
    t = _tag(d, "g function")
    if t == "linear":
        return md.LinearG(
            z_coeffs=tuple(d["z_coeffs"]),
            x_coeffs=tuple(d.get("x_coeffs", ())),
            const=d.get("const", 0.0),
        )
    if t == "layer_sum":
        terms = tuple(
            (int(x["z_index"]), x["attachment"], x["limit"]) for x in d["terms"]
        )
        return md.LayerSum(terms=terms)
    if t == "identity":
        return md.IdentityG(z_index=int(d["z_index"]))
    raise ValueError(f"unknown g function type {t!r}")


def parse_loss_model(d: dict) -> md.LossModelSpec:
    if _tag(d, "model") != "loss_model":
        raise ValueError("expected a loss_model object")
    return md.LossModelSpec(
        x_marginals=tuple(parse_distribution(x) for x in d["x_marginals"]),
        z_marginals=tuple(parse_distribution(z) for z in d["z_marginals"]),
        thresholds=tuple(float(x) for x in d["thresholds"]),
        g=tuple(parse_g_function(g) for g in d["g"]),
        dependence=parse_dependence(d["dependence"]),
        general_mode=bool(d.get("general_mode", False)),
    )


def parse_discrete_model(d: dict) -> md.DiscreteModelSpec:
    if _tag(d, "model") != "discrete_model":
        raise ValueError("expected a discrete_model object")
    return md.DiscreteModelSpec(
        support=tuple(float(x) for x in d["support"]),
        cum_probs=tuple(float(x) for x in d["cum_probs"]),
        severity=None if d.get("severity") is None else parse_distribution(d["severity"]),
        h_values=None if d.get("h_values") is None else tuple(float(x) for x in d["h_values"]),
    )
