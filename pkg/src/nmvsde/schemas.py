"""JSON Schemas for the documents written by the command-line tools."""

from __future__ import annotations

import jsonschema

__all__ = ["SCHEMAS", "validate"]

_num = {"type": ["number", "null"]}
_num_list = {"type": "array", "items": _num}
_int_list = {"type": "array", "items": {"type": "integer"}}

_common = {
    "command": {"type": "string"},
    "config": {"type": "object"},
    "status": {"enum": ["pass", "fail", "diverged", "error"]},
}

_check = {
    "type": "object",
    "required": ["name", "passed", "max_z", "threshold", "max_abs_deviation", "details"],
    "properties": {
        "name": {"type": "string"},
        "passed": {"type": "boolean"},
        "max_z": _num,
        "threshold": {"type": "number"},
        "max_abs_deviation": _num,
        "details": {"type": "object"},
    },
}

FBM_CHECK = {
    "type": "object",
    "required": ["command", "config", "status", "passed", "checks", "max_deviation"],
    "properties": {
        **_common,
        "passed": {"type": "boolean"},
        "checks": {"type": "array", "items": _check},
        "max_deviation": _num,
        "dump": {"type": ["string", "null"]},
    },
}

SIMULATE = {
    "type": "object",
    "required": ["command", "config", "status", "model", "terminal", "diverged", "warnings"],
    "properties": {
        **_common,
        "model": {"type": "string"},
        "diverged": {"type": "boolean"},
        "divergence": {
            "type": ["object", "null"],
            "properties": {"step": {"type": "integer"}, "particle": {"type": "integer"}},
        },
        "terminal": {
            "type": ["object", "null"],
            "properties": {
                "time": {"type": "number"},
                "mean": _num_list,
                "second_moment": _num,
                "theta_moment": _num,
                "min": _num_list,
                "max": _num_list,
            },
        },
        "exact_check": {
            "type": ["object", "null"],
            "required": ["max_deviation", "tolerance", "passed"],
            "properties": {"max_deviation": _num, "tolerance": {"type": "number"}, "passed": {"type": "boolean"}},
        },
        "warnings": {"type": "array", "items": {"type": "string"}},
    },
}

_study_common = {
    "errors": _num_list,
    "error_stderr": _num_list,
    "mse": _num_list,
    "mse_stderr": _num_list,
    "n_effective": _int_list,
    "n_diverged": _int_list,
    "p": {"type": "number"},
    "n_mc": {"type": "integer"},
    "slope": _num,
    "intercept": _num,
    "slope_stderr": _num,
    "r_squared": _num,
    "exact": {"type": "boolean"},
    "dropped": {"type": "array"},
    "notes": {"type": "array", "items": {"type": "string"}},
}

CONVERGENCE_REPORT = {
    "type": "object",
    "required": ["kind", "deltas", "errors", "slope", "slope_stderr", "mse_slope", "exact"],
    "properties": {
        "kind": {"const": "convergence"},
        "deltas": _num_list,
        "factors": _int_list,
        "mse_slope": _num,
        "mse_slope_stderr": _num,
        **_study_common,
    },
}

CHAOS_REPORT = {
    "type": "object",
    "required": ["kind", "particle_counts", "errors", "slope", "slope_stderr", "rms_slope", "reference_count", "exact"],
    "properties": {
        "kind": {"const": "chaos"},
        "particle_counts": _int_list,
        "reference_count": {"type": "integer"},
        "rms_slope": _num,
        "rms_slope_stderr": _num,
        **_study_common,
    },
}


def _study(report_schema):
    return {
        "type": "object",
        "required": ["command", "config", "status", "report"],
        "properties": {**_common, "report": {"oneOf": [report_schema, {"type": "null"}]}, "error": {"type": "string"}},
    }


CONVERGENCE = _study(CONVERGENCE_REPORT)
CHAOS = _study(CHAOS_REPORT)

VALIDATE_MODEL = {
    "type": "object",
    "required": ["command", "config", "status", "model", "report"],
    "properties": {
        **_common,
        "model": {"type": "string"},
        "report": {
            "type": "object",
            "required": [
                "all_ok", "contraction_ok", "contraction_ratio", "drift_lipschitz_ok", "drift_ratio",
                "diffusion_lipschitz_ok", "diffusion_ratio", "growth_ok", "growth_ratio",
                "diffusion_x_dependent", "n_probes", "seed", "witnesses",
            ],
        },
    },
}

SCHEMAS = {
    "fbm-check": FBM_CHECK,
    "simulate": SIMULATE,
    "convergence": CONVERGENCE,
    "chaos": CHAOS,
    "validate-model": VALIDATE_MODEL,
}


def validate(command: str, document: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``document`` does not match the schema of ``command``."""
    jsonschema.validate(document, SCHEMAS[command])
