"""JSON Schemas (draft 2020-12) for the documents the package emits."""

NUMBER_LIST = {"type": "array", "items": {"type": "number"}}
MATRIX = {"type": "array", "items": NUMBER_LIST}

CONTROL_SEGMENT = {
    "type": "object",
    "required": ["t0", "t1", "w", "a", "b"],
    "additionalProperties": False,
    "properties": {
        "t0": {"type": "number"},
        "t1": {"type": "number"},
        "w": NUMBER_LIST,
        "a": NUMBER_LIST,
        "b": {"type": "number"},
    },
}

SCHEDULE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ControlSchedule",
    "type": "object",
    "required": ["horizon", "segments"],
    "additionalProperties": False,
    "properties": {
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "segments": {"type": "array", "items": CONTROL_SEGMENT},
    },
}

GRID_DENSITY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "GridDensity",
    "type": "object",
    "required": ["R", "h", "shape", "values"],
    "additionalProperties": False,
    "properties": {
        "R": {"type": "number", "exclusiveMinimum": 0},
        "h": {"type": "number", "exclusiveMinimum": 0},
        "shape": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "values": NUMBER_LIST,
    },
}

LINEAR_SEGMENT = {
    "type": "object",
    "required": ["t0", "t1", "w", "b"],
    "additionalProperties": False,
    "properties": {
        "t0": {"type": "number"},
        "t1": {"type": "number"},
        "w": MATRIX,
        "b": NUMBER_LIST,
    },
}

PERMUTATION = {"type": "array", "items": {"type": "integer", "minimum": 0}}

MATCHING_PLAN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "MatchingPlan",
    "type": "object",
    "required": ["horizon", "segments", "relabeling", "constants", "witnesses"],
    "additionalProperties": False,
    "properties": {
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "segments": {"type": "array", "minItems": 1, "items": LINEAR_SEGMENT},
        "relabeling": {
            "type": "object",
            "required": ["second", "first"],
            "properties": {"second": PERMUTATION, "first": PERMUTATION},
        },
        "constants": {"type": "object"},
        "witnesses": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["stage", "step", "ok"],
                "properties": {"stage": {"type": "string"}, "step": {"type": "integer"}, "ok": {"type": "boolean"}},
            },
        },
    },
}

CONTROL_PATH_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ControlPath",
    "type": "object",
    "required": ["horizon", "times", "w", "b", "max_norm", "empirical_constant", "operator_bound"],
    "additionalProperties": False,
    "properties": {
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "times": NUMBER_LIST,
        "w": {"type": "array", "items": MATRIX},
        "b": {"anyOf": [{"type": "null"}, MATRIX]},
        "max_norm": {"type": "number"},
        "empirical_constant": {"type": "number"},
        "operator_bound": {"type": "number"},
    },
}

NULLABLE_NUMBER = {"type": ["number", "null"]}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "SynthesisReport",
    "type": "object",
    "required": [
        "objective", "epsilon", "horizon", "tv_achieved", "kl_achieved", "kl_error", "sup_ratio",
        "switch_count", "switch_budget", "tail_plan", "schedule", "certificates",
    ],
    "properties": {
        "objective": {"enum": ["kl", "reverse_kl"]},
        "epsilon": {"type": "number"},
        "horizon": {"type": "number"},
        "tv_achieved": {"type": "number"},
        "kl_achieved": {"type": "number"},
        "kl_error": {"type": "number"},
        "sup_ratio": NULLABLE_NUMBER,
        "switch_count": {"type": "integer", "minimum": 0},
        "switch_budget": {"type": "integer", "minimum": 0},
        "R": NULLABLE_NUMBER,
        "h": NULLABLE_NUMBER,
        "tail_plan": {"type": "object"},
        "certificates": {"type": "object"},
        "schedule": SCHEDULE_SCHEMA,
    },
}

ERROR_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "Error",
    "type": "object",
    "required": ["error", "message"],
    "properties": {"error": {"type": "string"}, "message": {"type": "string"}, "details": {}},
}
