"""JSON schemas of the reports written by ``smalltime <command> --json``."""

from __future__ import annotations

_NUM = {"type": "number"}
_SCALING = {
    "oneOf": [
        {"type": "object", "required": ["num1", "num2"], "properties": {"num1": {"type": "integer"}, "num2": {"type": "integer"}}},
        {"type": "object", "required": ["inf"], "properties": {"inf": {"const": True}}},
    ]
}
_MONOMIAL = {
    "type": "object",
    "required": ["c", "e"],
    "properties": {"c": {"type": "string"}, "e": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
}
_FIELD = {"type": "array", "items": {"type": "array", "items": _MONOMIAL}}
_PROPAGATION = {
    "type": "object",
    "required": ["mode", "verdict", "dim", "layers", "scalings", "limit_drift"],
    "properties": {
        "mode": {"enum": ["lil", "dist"]},
        "verdict": {"enum": ["NoisePropagating", "NoiseDefective"]},
        "dim": {"type": ["integer", "null"]},
        "layers": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
        "scalings": {"type": "array", "items": _SCALING},
        "limit_drift": _FIELD,
    },
}
_MATRIX = {"type": "array", "items": {"type": "array", "items": _NUM}}

RESULTS = {
    "classify": {
        "type": "object",
        "required": ["system", "n", "lil", "dist", "differ"],
        "properties": {"n": {"type": "integer"}, "lil": _PROPAGATION, "dist": _PROPAGATION,
                       "differ": {"type": "array", "items": {"type": "string"}},
                       "invariants": {"type": "object", "additionalProperties": {"type": "boolean"}}},
    },
    "rescale": {
        "type": "object",
        "required": ["mode", "scalings", "remainder", "decreasing"],
        "properties": {
            "scalings": {"type": "array", "items": _SCALING},
            "remainder": {"type": "object", "required": ["terms", "vanishing", "C", "table"]},
            "decreasing": {"type": "boolean"},
        },
    },
    "simulate": {
        "type": "object",
        "required": ["seed", "t", "x0", "final", "dead"],
        "properties": {"seed": {"type": "integer"}, "final": {"type": "array", "items": {"type": ["number", "null"]}},
                       "limit_check": {"type": "object", "required": ["rows", "sup_decreasing", "config"]}},
    },
    "brackets": {
        "type": "object",
        "required": ["rank", "spanning", "n_fields", "depth", "point"],
        "properties": {"rank": {"type": "integer"}, "spanning": {"type": "boolean"}},
    },
    "saturate": {
        "type": "object",
        "required": ["directions", "exact_controllable", "basis_certificate", "steps", "trace"],
        "properties": {
            "directions": {"type": "object", "required": ["span", "cone"]},
            "exact_controllable": {"type": "boolean"},
            "basis_certificate": {
                "oneOf": [{"type": "null"}, {"type": "object", "required": ["basis", "det"]}],
            },
            "trace": {"type": "array", "items": {"type": "object", "required": ["step", "rule", "element"]}},
        },
    },
    "gramian": {
        "type": "object",
        "required": ["gramian"],
        "properties": {
            "gramian": {"type": "object", "required": ["G", "det", "min_eig", "invertible"],
                        "properties": {"G": _MATRIX, "det": _NUM, "invertible": {"type": "boolean"}}},
            "malliavin": {"type": "object", "required": ["invertible_freq", "crosscheck_ok", "config"]},
        },
    },
    "regular": {
        "type": "object",
        "required": ["verdict", "stage", "evidence"],
        "properties": {
            "verdict": {"enum": ["Regular", "Inconclusive"]},
            "stage": {"enum": [None, "propagation", "domain", "containment", "reachability"]},
            "evidence": {"type": "object", "required": ["point", "rules", "propagation"]},
        },
    },
}


def report_schema(command: str) -> dict:
    """Schema of the full report (envelope plus command-specific result)."""
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "type": "object",
        "required": ["command", "version", "config", "result"],
        "properties": {
            "command": {"const": command},
            "version": {"type": "string"},
            "config": {"type": "object"},
            "result": RESULTS[command],
        },
    }


SYSTEM_SPEC = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["n", "sigma", "drift"],
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "sigma": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "drift": _FIELD,
        "name": {"type": "string"},
    },
}
