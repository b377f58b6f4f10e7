"""Scenario files: JSON schema, loading, re-serialisation, bundled scenarios."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any, Union

import jsonschema

from .controller import CoordinationGains
from .engine import BoundsOptions, PaceProfile, Scenario, VehicleSpec
from .topology import Digraph, DigraphSchedule
from .trajectory import TrajectorySet
from .vehicle import DISTURBANCE_KINDS, DisturbanceProfile

BUNDLED = ("paper_sec5", "disconnected", "two_agent_analytic", "switch_free")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["t_f", "trajectories", "schedule", "gains"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "t_f": _pos,
        "trajectories": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["control_points"],
                "additionalProperties": False,
                "properties": {
                    "control_points": {"type": "array", "items": _vec3, "minItems": 2}
                },
            },
        },
        "schedule": {
            "type": "object",
            "required": ["segments"],
            "additionalProperties": False,
            "properties": {
                "segments": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["edges", "dwell"],
                        "additionalProperties": False,
                        "properties": {
                            "edges": {
                                "type": "array",
                                "items": {
                                    "type": "array",
                                    "items": {"type": "integer", "minimum": 0},
                                    "minItems": 2,
                                    "maxItems": 2,
                                },
                            },
                            "dwell": _pos,
                        },
                    },
                },
                "cycle": {"type": "boolean"},
            },
        },
        "gains": {
            "type": "object",
            "required": ["a", "b", "epsilon"],
            "additionalProperties": False,
            "properties": {"a": _num, "b": _num, "epsilon": _num},
        },
        "vehicles": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "initial_pf_error": _vec3,
                    "k_pf": _pos,
                    "disturbance": {
                        "type": "object",
                        "required": ["kind"],
                        "additionalProperties": False,
                        "properties": {
                            "kind": {"enum": list(DISTURBANCE_KINDS)},
                            "vector": _vec3,
                            "window": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                        },
                    },
                },
            },
        },
        "gamma0": {"type": "array", "items": _num},
        "gamma_dot0": {"type": "array", "items": _num},
        "gamma_dot_d": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        },
        "dt": _pos,
        "t_end": _pos,
        "seed": {"type": "integer"},
        "pf_error_noise": {"type": "number", "minimum": 0},
        "qos": {
            "type": "object",
            "required": ["T", "delta"],
            "additionalProperties": False,
            "properties": {"T": _pos, "delta": _pos},
        },
        "bounds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "c3": _pos,
                "beta": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "lambda_tc": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "ramp": _pos,
            },
        },
    },
}


class ScenarioFormatError(ValueError):
    """Scenario document does not match the schema; ``errors`` lists each problem."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("\n".join(errors))


def schema_errors(doc: Any) -> list[str]:
    v = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(v.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    return [f"{e.json_path}: {e.message}" for e in errs]


def scenario_from_dict(doc: dict) -> Scenario:
    errs = schema_errors(doc)
    if errs:
        raise ScenarioFormatError(errs)

    n = len(doc["trajectories"])
    t_f = float(doc["t_f"])
    errs = []

    segments = []
    for k, seg in enumerate(doc["schedule"]["segments"]):
        try:
            g = Digraph.from_edges(n, seg["edges"])
        except ValueError as exc:
            errs.append(f"$.schedule.segments[{k}].edges: {exc}")
            continue
        segments.append((g, float(seg["dwell"])))

    vehicles = []
    for i, v in enumerate(doc.get("vehicles", [{}] * n)):
        d = v.get("disturbance", {"kind": "none"})
        try:
            dist = DisturbanceProfile(
                d["kind"],
                tuple(d.get("vector", (0.0, 0.0, 0.0))),
                tuple(d["window"]) if "window" in d else None,
            )
        except ValueError as exc:
            errs.append(f"$.vehicles[{i}].disturbance: {exc}")
            continue
        vehicles.append(
            VehicleSpec(
                tuple(float(x) for x in v.get("initial_pf_error", (0.0, 0.0, 0.0))),
                float(v.get("k_pf", 1.0)),
                dist,
            )
        )
    if errs:
        raise ScenarioFormatError(errs)

    qos = doc.get("qos")
    b = doc.get("bounds", {})
    return Scenario(
        trajectories=TrajectorySet.from_control_points(
            [tr["control_points"] for tr in doc["trajectories"]], t_f
        ),
        schedule=DigraphSchedule(tuple(segments), bool(doc["schedule"].get("cycle", True))),
        gains=CoordinationGains(
            float(doc["gains"]["a"]), float(doc["gains"]["b"]), float(doc["gains"]["epsilon"])
        ),
        vehicles=tuple(vehicles),
        gamma0=tuple(float(x) for x in doc.get("gamma0", [0.0] * n)),
        gamma_dot0=tuple(float(x) for x in doc.get("gamma_dot0", [1.0] * n)),
        gamma_dot_d=PaceProfile(tuple(tuple(p) for p in doc.get("gamma_dot_d", [[0.0, 1.0]]))),
        dt=float(doc.get("dt", 0.005)),
        t_end=float(doc.get("t_end", t_f)),
        seed=int(doc.get("seed", 0)),
        qos=None if qos is None else (float(qos["T"]), float(qos["delta"])),
        pf_error_noise=float(doc.get("pf_error_noise", 0.0)),
        bounds=BoundsOptions(
            c3=float(b.get("c3", 1.0)),
            beta=b.get("beta"),
            lambda_tc=b.get("lambda_tc"),
            ramp=float(b.get("ramp", 0.5)),
        ),
        name=doc.get("name", ""),
    )


def scenario_to_dict(sc: Scenario) -> dict:
    doc: dict[str, Any] = {
        "name": sc.name,
        "t_f": sc.trajectories.t_f,
        "trajectories": [
            {"control_points": tr.control_points.tolist()} for tr in sc.trajectories.trajectories
        ],
        "schedule": {
            "segments": [
                {"edges": [list(e) for e in g.edges()], "dwell": d}
                for g, d in sc.schedule.segments
            ],
            "cycle": sc.schedule.cycle,
        },
        "gains": sc.gains.to_dict(),
        "vehicles": [
            {
                "initial_pf_error": list(v.initial_pf_error),
                "k_pf": v.k_pf,
                "disturbance": v.disturbance.to_dict(),
            }
            for v in sc.vehicles
        ],
        "gamma0": list(sc.gamma0),
        "gamma_dot0": list(sc.gamma_dot0),
        "gamma_dot_d": [list(p) for p in sc.gamma_dot_d.steps],
        "dt": sc.dt,
        "t_end": sc.t_end,
        "seed": sc.seed,
        "pf_error_noise": sc.pf_error_noise,
        "bounds": {
            "c3": sc.bounds.c3,
            "beta": sc.bounds.beta,
            "lambda_tc": sc.bounds.lambda_tc,
            "ramp": sc.bounds.ramp,
        },
    }
    if sc.qos is not None:
        doc["qos"] = {"T": sc.qos[0], "delta": sc.qos[1]}
    return doc


def load_scenario(path: Union[str, Path]) -> Scenario:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioFormatError([f"$: invalid JSON ({exc})"]) from exc
    return scenario_from_dict(doc)


def bundled_path(name: str) -> Path:
    """Filesystem path of a bundled scenario (``paper_sec5``, ``disconnected``, ...)."""
    stem = name[:-5] if name.endswith(".json") else name
    if stem not in BUNDLED:
        raise KeyError(f"no bundled scenario {name!r}; choose from {BUNDLED}")
    return Path(str(resources.files("tcoord") / "scenarios" / f"{stem}.json"))


def load_bundled(name: str) -> Scenario:
    return load_scenario(bundled_path(name))
