"""Pipeline run configuration (JSON, ``format_version`` 1).

Relative paths are resolved against the directory holding the config file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .model import SubjectAnthropometry
from .postprocess import AcceptanceThresholds, SmoothingConfig
from .staticopt import SoConfig

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["format_version", "model", "output"],
    "properties": {
        "format_version": {"const": 1},
        "model": {"type": "string"},
        "subject": {
            "type": "object",
            "additionalProperties": False,
            "required": ["height", "mass"],
            "properties": {
                "height": {"type": "number", "exclusiveMinimum": 0},
                "mass": {"type": "number", "exclusiveMinimum": 0},
                "scale_overrides": {"type": "object", "additionalProperties": {
                    "type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 3, "maxItems": 3}},
            },
        },
        "markers": {"type": "string"},
        "coordinates": {"type": "string"},
        "grf": {"type": "string"},
        "ground_truth": {"type": "string"},
        "output": {"type": "string"},
        "static_optimization": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "p": {"type": "number", "minimum": 1},
                "reserve_weight": {"type": "number", "exclusiveMinimum": 0},
                "max_iterations": {"type": "integer", "minimum": 1},
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "smoothing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "window": {"type": "integer", "minimum": 1},
                "poly_order": {"type": "integer", "minimum": 0},
            },
        },
        "thresholds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_marker_error": {"type": "number", "exclusiveMinimum": 0},
                "max_constraint_violation": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "frame_rate": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "jobs": {"type": "integer", "minimum": 1},
    },
}


@dataclass
class PipelineConfig:
    model: Path
    output: Path
    subject: SubjectAnthropometry | None = None
    markers: Path | None = None
    coordinates: Path | None = None
    grf: Path | None = None
    ground_truth: Path | None = None
    so: SoConfig = field(default_factory=SoConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    thresholds: AcceptanceThresholds = field(default_factory=AcceptanceThresholds)
    frame_rate: float | None = None
    jobs: int = 1


def config_from_dict(doc, base_dir=".") -> PipelineConfig:
    from .storage import DocumentError, schema_diagnostics

    diags = schema_diagnostics(doc, CONFIG_SCHEMA)
    if not diags and ("markers" in doc) == ("coordinates" in doc):
        diags.append("<root>: exactly one of 'markers' or 'coordinates' is required")
    if diags:
        raise DocumentError(diags)
    base = Path(base_dir)

    def path(key):
        return None if doc.get(key) is None else (base / doc[key])

    subject = None
    if "subject" in doc:
        s = doc["subject"]
        subject = SubjectAnthropometry(s["height"], s["mass"], dict(s.get("scale_overrides", {})))
    try:
        so = SoConfig(**doc.get("static_optimization", {}))
        smoothing = SmoothingConfig(**doc.get("smoothing", {}))
        thresholds = AcceptanceThresholds(**doc.get("thresholds", {}))
    except ValueError as e:
        raise DocumentError([str(e)]) from None
    return PipelineConfig(
        model=path("model"),
        output=path("output"),
        subject=subject,
        markers=path("markers"),
        coordinates=path("coordinates"),
        grf=path("grf"),
        ground_truth=path("ground_truth"),
        so=so,
        smoothing=smoothing,
        thresholds=thresholds,
        frame_rate=doc.get("frame_rate"),
        jobs=doc.get("jobs", 1),
    )


def read_config(path) -> PipelineConfig:
    from .storage import DocumentError, StorageError

    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise StorageError(f"invalid JSON: {e.msg}", path, e.lineno) from None
    try:
        return config_from_dict(doc, path.parent)
    except DocumentError as e:
        raise DocumentError(e.diagnostics, path) from None
