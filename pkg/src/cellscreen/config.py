"""YAML configuration documents with line-aware error reporting.

Plan document::

    name: my-plan              # or just `preset: standard`
    setpoint_temp: 25
    safety_cutoff_temp: 50
    segments:
      - {kind: CC, current_a: 244.8, balancing: true, tag: charge,
         exits: [{kind: module_voltage, threshold: 12.6}]}
      - {kind: CV, voltage_v: 12.6, balancing: true,
         exits: [{kind: current_below, threshold: 0.5}]}
      - {kind: Rest, duration_s: 3600}
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Optional

import yaml

from .protocol import ExitCondition, Segment, TestPlan, preset


class ConfigError(ValueError):
    def __init__(self, message: str, path=None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class LineDict(dict):
    """Mapping that remembers the 1-based source line of itself and of each key."""

    line: Optional[int] = None
    key_lines: dict


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = LineDict()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        out[key] = loader.construct_object(value_node, deep=True)
        out.key_lines[key] = key_node.start_mark.line + 1
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def load_yaml(text: str, path=None) -> Any:
    try:
        return yaml.load(text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"invalid YAML: {exc.problem}", path, line) from None


def load_yaml_file(path) -> Any:
    return load_yaml(Path(path).read_text(encoding="utf-8"), path)


def line_of(doc: Any, key: Optional[str] = None) -> Optional[int]:
    if isinstance(doc, LineDict):
        if key is not None and key in doc.key_lines:
            return doc.key_lines[key]
        return doc.line
    return None


def require_mapping(doc: Any, what: str, path=None) -> LineDict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{what} must be a mapping", path, line_of(doc))
    return doc


def check_keys(doc: dict, allowed: set[str], what: str, path=None) -> None:
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {what}", path, line_of(doc, key))


def get_number(doc: dict, key: str, default=None, path=None) -> float:
    if key not in doc:
        if default is None:
            raise ConfigError(f"missing required key {key!r}", path, line_of(doc))
        return default
    value = doc[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key!r} must be a number, got {value!r}", path, line_of(doc, key))
    return float(value)


_SEGMENT_KEYS = {"kind", "current_a", "voltage_v", "duration_s", "exits", "balancing", "tag", "timeout_s"}


def segment_from_dict(doc: Any, path=None) -> Segment:
    doc = require_mapping(doc, "segment", path)
    check_keys(doc, _SEGMENT_KEYS, "segment", path)
    exits = []
    for item in doc.get("exits", []) or []:
        item = require_mapping(item, "exit condition", path)
        check_keys(item, {"kind", "threshold"}, "exit condition", path)
        try:
            exits.append(ExitCondition(str(item.get("kind")), get_number(item, "threshold", path=path)))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), path, line_of(item)) from None
    try:
        return Segment(
            kind=str(doc.get("kind")),
            current_a=get_number(doc, "current_a", 0.0, path),
            voltage_v=get_number(doc, "voltage_v", 0.0, path),
            duration_s=get_number(doc, "duration_s", 0.0, path),
            exits=tuple(exits),
            balancing=bool(doc.get("balancing", False)),
            tag=str(doc.get("tag", "")),
            timeout_s=get_number(doc, "timeout_s", 48 * 3600.0, path),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), path, line_of(doc)) from None


def plan_from_dict(doc: Any, path=None) -> TestPlan:
    doc = require_mapping(doc, "plan document", path)
    check_keys(doc, {"name", "preset", "setpoint_temp", "safety_cutoff_temp", "segments", "pulse_order"},
               "plan document", path)
    setpoint = get_number(doc, "setpoint_temp", 25.0, path)
    if "preset" in doc:
        try:
            return preset(str(doc["preset"]), setpoint)
        except ValueError as exc:
            raise ConfigError(str(exc), path, line_of(doc, "preset")) from None
    segs = doc.get("segments")
    if not isinstance(segs, list) or not segs:
        raise ConfigError("plan needs a non-empty 'segments' list", path, line_of(doc, "segments"))
    try:
        return TestPlan(
            tuple(segment_from_dict(s, path) for s in segs),
            setpoint_temp=setpoint,
            safety_cutoff_temp=get_number(doc, "safety_cutoff_temp", 50.0, path),
            name=str(doc.get("name", "custom")),
            pulse_order=tuple(float(x) for x in doc.get("pulse_order", []) or []),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), path, line_of(doc)) from None


def load_plan(path) -> TestPlan:
    return plan_from_dict(load_yaml_file(path), path)
