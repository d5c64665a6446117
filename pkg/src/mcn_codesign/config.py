"""JSON problem configuration: schema, semantic checks and problem assembly.

Polynomial coefficients are given in descending powers.  Times are in
seconds, rate bounds in Hz.  Every error names the offending location as a
JSON pointer.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema

from . import network as nw
from .network import QuantizationSpec, RadioGraph, Scheduling
from .optimize import CodesignProblem, NetworkSide
from .poly import Polynomial, RationalTF, StableUnstableSplit, split_stable, zoh_discretize
from .scheduler import InterferenceSpec

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_OPT_POS = {"anyOf": [_POS, {"type": "null"}]}
_COEFFS = {"type": "array", "items": _NUM, "minItems": 1}
_EDGE = {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2}
_SLOTS = {"type": "array", "items": {"type": "array", "items": _EDGE}, "minItems": 1}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "Multi-hop control network co-design problem",
    "type": "object",
    "required": ["plant", "slot_duration", "networks", "quantization"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "plant": {
            "type": "object",
            "required": ["num", "den", "domain"],
            "additionalProperties": False,
            "properties": {
                "domain": {"enum": ["continuous", "discrete"]},
                "num": _COEFFS,
                "den": _COEFFS,
                "sample_time": _POS,
            },
        },
        "slot_duration": _POS,
        "networks": {
            "type": "object",
            "required": ["controllability"],
            "additionalProperties": False,
            "properties": {
                "controllability": {"$ref": "#/$defs/network"},
                "observability": {"$ref": "#/$defs/network"},
            },
        },
        "quantization": {
            "type": "object",
            "required": ["delta_u", "u_max"],
            "additionalProperties": False,
            "properties": {"delta_u": _POS, "u_max": _POS, "delta_y": _POS, "y_max": _POS},
        },
        "model": {"enum": [1, 2]},
        "bounds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "overshoot_u": _OPT_POS,
                "overshoot_y": {"anyOf": [{"type": "number", "minimum": 0}, {"type": "null"}]},
                "rate_hz": _OPT_POS,
                "rate_hz_controllability": _OPT_POS,
                "rate_hz_observability": _OPT_POS,
            },
        },
        "controller": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"s": {"type": "integer", "minimum": 0}},
        },
        "amplitude": _NUM,
        "reference_lead": {"type": "integer", "minimum": 0},
        "horizon": {"type": "integer", "minimum": 1},
        "sweep": {"type": "string", "pattern": r"^[^:]+:[^:]+:[^:]+$"},
    },
    "$defs": {
        "network": {
            "type": "object",
            "required": ["nodes", "edges", "source", "sink", "scheduling"],
            "additionalProperties": False,
            "properties": {
                "nodes": {"type": "array", "items": {"type": "string"}, "minItems": 2, "uniqueItems": True},
                "edges": {"type": "array", "items": _EDGE, "minItems": 1},
                "source": {"type": "string"},
                "sink": {"type": "string"},
                "weights": {
                    "anyOf": [
                        {"enum": ["free", "uniform_indegree"]},
                        {"type": "object", "additionalProperties": _NUM},
                    ]
                },
                "gamma": {"type": "object", "patternProperties": {"^[0-9]+$": _NUM}, "additionalProperties": False},
                "alpha_targets": {"type": "object", "additionalProperties": _POS},
                "scheduling": {
                    "oneOf": [
                        {
                            "type": "object",
                            "required": ["slots"],
                            "additionalProperties": False,
                            "properties": {"slots": _SLOTS},
                        },
                        {
                            "type": "object",
                            "required": ["candidates"],
                            "additionalProperties": False,
                            "properties": {
                                "candidates": {
                                    "type": "array",
                                    "minItems": 1,
                                    "items": {
                                        "type": "object",
                                        "required": ["id", "slots"],
                                        "additionalProperties": False,
                                        "properties": {"id": {"type": "string"}, "slots": _SLOTS},
                                    },
                                }
                            },
                        },
                        {
                            "type": "object",
                            "required": ["search"],
                            "additionalProperties": False,
                            "properties": {
                                "search": {
                                    "type": "object",
                                    "required": ["compat_sets", "pi_max"],
                                    "additionalProperties": False,
                                    "properties": {
                                        "compat_sets": {
                                            "type": "array",
                                            "minItems": 1,
                                            "items": {"type": "array", "items": {"type": "string"}},
                                        },
                                        "pi_max": {"type": "integer", "minimum": 1},
                                        "budget": {"type": "integer", "minimum": 1},
                                    },
                                }
                            },
                        },
                    ]
                },
            },
        }
    },
}

DEFAULTS = {"model": 2, "bounds": {}, "controller": {"s": 0}, "amplitude": 1.0, "reference_lead": 1}


class ConfigError(ValueError):
    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer or "/"
        self.message = message


def pointer(parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def read_config(path: str | Path) -> dict:
    """Load a config file, or the resolved config echoed inside a run report."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"not valid JSON (line {exc.lineno}, column {exc.colno}): {exc.msg}") from None
    if isinstance(data, dict) and "config" in data and "config_hash" in data:
        data = data["config"]
    return resolve(data)


def resolve(raw: Any) -> dict:
    """Validate against the schema and the semantic rules, then fill defaults."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        raise ConfigError(pointer(err.absolute_path), err.message)
    cfg = copy.deepcopy(raw)
    for k, v in DEFAULTS.items():
        cfg.setdefault(k, copy.deepcopy(v))
    cfg["controller"].setdefault("s", 0)
    _check_semantics(cfg)
    return cfg


def _check_semantics(cfg: dict) -> None:
    plant = cfg["plant"]
    if plant["domain"] == "discrete" and "sample_time" not in plant:
        raise ConfigError("/plant/sample_time", "a discrete plant needs its sample time")
    if all(c == 0 for c in plant["den"]):
        raise ConfigError("/plant/den", "denominator is zero")
    for kind, net in cfg["networks"].items():
        base = ["networks", kind]
        nodes = set(net["nodes"])
        for key in ("source", "sink"):
            if net[key] not in nodes:
                raise ConfigError(pointer(base + [key]), f"undeclared node {net[key]!r}")
        edges = set()
        for i, (a, b) in enumerate(net["edges"]):
            for j, v in enumerate((a, b)):
                if v not in nodes:
                    raise ConfigError(pointer(base + ["edges", i, j]), f"undeclared node {v!r}")
            edges.add((a, b))
        weights = net.get("weights", "free")
        if isinstance(weights, dict):
            labels = {nw.edge_label(e) for e in edges}
            for lab in weights:
                if lab not in labels:
                    raise ConfigError(pointer(base + ["weights", lab]), "weight for an undeclared link")
            missing = sorted(labels - set(weights))
            if missing:
                raise ConfigError(pointer(base + ["weights"]), f"explicit weights missing for {missing}")
        for v in net.get("alpha_targets", {}):
            if v not in nodes:
                raise ConfigError(pointer(base + ["alpha_targets", v]), f"undeclared node {v!r}")
        sch = net["scheduling"]
        slot_lists = []
        if "slots" in sch:
            slot_lists.append((base + ["scheduling", "slots"], sch["slots"]))
        elif "candidates" in sch:
            slot_lists += [(base + ["scheduling", "candidates", i, "slots"], c["slots"])
                           for i, c in enumerate(sch["candidates"])]
        else:
            for i, cs in enumerate(sch["search"]["compat_sets"]):
                for j, v in enumerate(cs):
                    if v not in nodes:
                        raise ConfigError(pointer(base + ["scheduling", "search", "compat_sets", i, j]),
                                          f"undeclared node {v!r}")
        for where, slots in slot_lists:
            seen = set()
            for h, es in enumerate(slots):
                for j, (a, b) in enumerate(es):
                    if (a, b) not in edges:
                        raise ConfigError(pointer(where + [h, j]), f"link {a}->{b} is not in the graph")
                    if (a, b) in seen:
                        raise ConfigError(pointer(where + [h, j]), f"link {a}->{b} scheduled twice")
                    seen.add((a, b))
            if seen != edges:
                raise ConfigError(pointer(where), f"unscheduled links {sorted(nw.edge_label(e) for e in edges - seen)}")
    if "observability" in cfg["networks"] and ("delta_y" not in cfg["quantization"] or "y_max" not in cfg["quantization"]):
        raise ConfigError("/quantization", "an observability network needs delta_y and y_max")
    try:
        _graph(cfg, "controllability")
        if "observability" in cfg["networks"]:
            _graph(cfg, "observability")
    except nw.NetworkError as exc:
        raise ConfigError(f"/networks", str(exc)) from None


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON of the problem-defining fields."""
    core = {k: v for k, v in cfg.items() if k not in ("horizon", "sweep", "name")}
    blob = json.dumps(core, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# assembly


def _graph(cfg: dict, kind: str) -> RadioGraph:
    net = cfg["networks"][kind]
    g = RadioGraph(tuple(net["nodes"]), tuple(tuple(e) for e in net["edges"]), net["source"], net["sink"], kind)
    weights = net.get("weights", "free")
    if weights == "uniform_indegree":
        return g.with_weights(nw.uniform_indegree_weights(g))
    if isinstance(weights, dict):
        return g.with_weights({tuple(lab.split("->")): float(w) for lab, w in weights.items()})
    return g


def graph(cfg: dict, kind: str) -> RadioGraph:
    return _graph(cfg, kind)


def schedule_from_slots(slots, slot_duration: float, period: int | None = None) -> Scheduling:
    assign = {(a, b): h for h, es in enumerate(slots, 1) for a, b in es}
    return Scheduling.from_assignment(assign, slot_duration, period or len(slots))


@dataclass(frozen=True)
class ScheduleChoice:
    mode: str  # explicit | candidates | search
    schedules: tuple[Scheduling, ...]
    ids: tuple[str, ...]
    interference: InterferenceSpec | None = None
    pi_max: int | None = None
    budget: int | None = None


def schedule_choice(cfg: dict, kind: str) -> ScheduleChoice:
    sch = cfg["networks"][kind]["scheduling"]
    dt = cfg["slot_duration"]
    if "slots" in sch:
        return ScheduleChoice("explicit", (schedule_from_slots(sch["slots"], dt),), ("explicit",))
    if "candidates" in sch:
        return ScheduleChoice("candidates", tuple(schedule_from_slots(c["slots"], dt) for c in sch["candidates"]),
                              tuple(c["id"] for c in sch["candidates"]))
    s = sch["search"]
    return ScheduleChoice("search", (), (), InterferenceSpec(tuple(frozenset(c) for c in s["compat_sets"])),
                          s["pi_max"], s.get("budget"))


def has_observability(cfg: dict) -> bool:
    return "observability" in cfg["networks"]


def plant_at(plant_cfg: dict, frame_duration: float) -> StableUnstableSplit:
    """Discrete plant at the frame rate: ZOH for a continuous plant, as given otherwise."""
    num = Polynomial.from_descending(plant_cfg["num"])
    den = Polynomial.from_descending(plant_cfg["den"])
    if plant_cfg["domain"] == "continuous":
        return split_stable(zoh_discretize(RationalTF(num, den), frame_duration))
    return split_stable(RationalTF(num, den, plant_cfg["sample_time"]))


def rate_bounds(cfg: dict) -> tuple[float | None, float | None]:
    b = cfg.get("bounds", {})
    glob = b.get("rate_hz")
    return b.get("rate_hz_controllability", glob), b.get("rate_hz_observability", glob)


def _side(cfg: dict, kind: str, sched: Scheduling, rate_bound) -> NetworkSide:
    net = cfg["networks"][kind]
    g = _graph(cfg, kind)
    q = cfg["quantization"]
    quant = QuantizationSpec(q["delta_u"], q["u_max"]) if kind == "controllability" else \
        QuantizationSpec(q["delta_y"], q["y_max"])
    gamma = {int(k): float(v) for k, v in net["gamma"].items()} if "gamma" in net else None
    return NetworkSide(g, sched, quant, rate_bound, gamma=gamma, weights=g.weights,
                       alpha_targets=net.get("alpha_targets"))


def build_problem(cfg: dict, sched_R: Scheduling, sched_O: Scheduling | None = None,
                  model: int | None = None) -> CodesignProblem:
    """Problem for one schedule pair, padded to a common frame."""
    period = max(sched_R.period, sched_O.period if sched_O is not None else 1)
    sched_R = sched_R.padded(period)
    rb_R, rb_O = rate_bounds(cfg)
    R = _side(cfg, "controllability", sched_R, rb_R)
    O = None
    if has_observability(cfg):
        if sched_O is None:
            raise ConfigError("/networks/observability/scheduling", "observability schedule required")
        O = _side(cfg, "observability", sched_O.padded(period), rb_O)
    b = cfg.get("bounds", {})
    return CodesignProblem(plant_at(cfg["plant"], sched_R.frame_duration), R, O, model or cfg["model"],
                           b.get("overshoot_u"), b.get("overshoot_y"), s=cfg["controller"]["s"],
                           amplitude=float(cfg["amplitude"]), reference_lead=cfg["reference_lead"])


def single_schedule(cfg: dict, kind: str) -> Scheduling | None:
    if kind == "observability" and not has_observability(cfg):
        return None
    choice = schedule_choice(cfg, kind)
    if choice.mode != "explicit":
        raise ConfigError(pointer(["networks", kind, "scheduling"]), "this command needs an explicit slot map")
    return choice.schedules[0]
