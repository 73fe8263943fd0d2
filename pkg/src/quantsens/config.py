"""Run-configuration schema and validation for the command line.

Configs are JSON with an explicit schema_version; unknown keys are rejected
everywhere. Validation errors carry the JSON pointer of the offending node.
"""

from __future__ import annotations

import json

import jsonschema

from . import serde

SCHEMA_VERSION = 1

_DISTRIBUTION = {
    "type": "object",
    "properties": {
        "type": {
            "enum": [
                "normal",
                "uniform01",
                "lognormal",
                "student_t",
                "gamma",
                "negative_binomial",
                "inverse_gamma",
            ]
        },
        "mean": {"type": "number"},
        "sd": {"type": "number"},
        "mu": {"type": "number"},
        "sigma": {"type": "number"},
        "nu": {"type": "integer"},
        "standardised": {"type": "boolean"},
        "shape": {"type": "number"},
        "scale": {"type": "number"},
        "overdispersion": {"type": "number"},
        "truncation_quantile": {"type": "number"},
        "rate": {"type": "number"},
    },
    "required": ["type"],
    "additionalProperties": False,
}

_STRESS = {
    "type": "object",
    "properties": {
        "type": {
            "enum": [
                "additive",
                "proportional",
                "probability",
                "mixture",
                "tail_upper",
                "tail_lower",
                "wang",
            ]
        },
        "beta": {"type": "number"},
        "marginal": _DISTRIBUTION,
        "base": _DISTRIBUTION,
        "alternative": _DISTRIBUTION,
        "t": {"type": "number"},
        "sign": {"enum": [-1, 1]},
    },
    "required": ["type"],
    "additionalProperties": False,
}

_GENERATOR = {
    "type": "object",
    "properties": {
        "type": {"enum": ["clayton", "gumbel"]},
        "theta": {"type": "number"},
    },
    "required": ["type", "theta"],
    "additionalProperties": False,
}

_BIV_COPULA = {
    "type": "object",
    "properties": {
        "type": {"enum": ["gaussian", "student_t", "archimedean"]},
        "r": {"type": "number"},
        "nu": {"type": "integer"},
        "generator": _GENERATOR,
    },
    "required": ["type"],
    "additionalProperties": False,
}

_DEPENDENCE = {
    "type": "object",
    "properties": {
        "type": {"enum": ["independence", "pairwise", "multivariate_t"]},
        "dim": {"type": "integer"},
        "pairs": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "i": {"type": "integer"},
                    "j": {"type": "integer"},
                    "copula": _BIV_COPULA,
                },
                "required": ["i", "j", "copula"],
                "additionalProperties": False,
            },
        },
        "sigma": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "nu": {"type": "integer"},
    },
    "required": ["type"],
    "additionalProperties": False,
}

_G_FUNCTION = {
    "type": "object",
    "properties": {
        "type": {"enum": ["linear", "layer_sum", "identity"]},
        "z_coeffs": {"type": "array", "items": {"type": "number"}},
        "x_coeffs": {"type": "array", "items": {"type": "number"}},
        "const": {"type": "number"},
        "terms": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "z_index": {"type": "integer"},
                    "attachment": {"type": "number"},
                    "limit": {"type": "number"},
                },
                "required": ["z_index", "attachment", "limit"],
                "additionalProperties": False,
            },
        },
        "z_index": {"type": "integer"},
    },
    "required": ["type"],
    "additionalProperties": False,
}

_LOSS_MODEL = {
    "type": "object",
    "properties": {
        "type": {"const": "loss_model"},
        "x_marginals": {"type": "array", "items": _DISTRIBUTION, "minItems": 1},
        "z_marginals": {"type": "array", "items": _DISTRIBUTION, "minItems": 1},
        "thresholds": {"type": "array", "items": {"type": "number"}},
        "g": {"type": "array", "items": _G_FUNCTION},
        "dependence": _DEPENDENCE,
        "general_mode": {"type": "boolean"},
    },
    "required": ["type", "x_marginals", "z_marginals", "thresholds", "g", "dependence"],
    "additionalProperties": False,
}

_DISCRETE_MODEL = {
    "type": "object",
    "properties": {
        "type": {"const": "discrete_model"},
        "support": {"type": "array", "items": {"type": "number"}, "minItems": 2},
        "cum_probs": {"type": "array", "items": {"type": "number"}, "minItems": 2},
        "severity": {"oneOf": [_DISTRIBUTION, {"type": "null"}]},
        "h_values": {
            "oneOf": [{"type": "array", "items": {"type": "number"}}, {"type": "null"}]
        },
    },
    "required": ["type", "support", "cum_probs"],
    "additionalProperties": False,
}

RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "model": {"oneOf": [_LOSS_MODEL, _DISCRETE_MODEL]},
        "targets": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "stresses": {"type": "array", "items": _STRESS, "minItems": 1},
        "risk_measures": {
            "type": "array",
            "items": {"enum": ["var", "es", "mean"]},
            "minItems": 1,
        },
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "n_scenarios": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
        "bootstrap": {
            "type": "object",
            "properties": {
                "n_replicates": {"type": "integer", "minimum": 0},
                "fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "seed": {"type": "integer"},
            },
            "additionalProperties": False,
        },
        "n_conditional": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string"},
    },
    "required": ["schema_version", "model"],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{message}" + (f" (at {pointer})" if pointer else ""))
        self.pointer = pointer


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    validate_config(raw)
    return raw


def validate_config(raw: dict) -> None:
    if isinstance(raw, dict) and raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}",
            "/schema_version",
        )
    validator = jsonschema.Draft202012Validator(RUN_CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: e.json_path)
    if errors:
        e = errors[0]
        raise ConfigError(e.message, e.json_path)


def parse_model(raw: dict):
    model = raw["model"]
    if model["type"] == "loss_model":
        return serde.parse_loss_model(model)
    return serde.parse_discrete_model(model)
