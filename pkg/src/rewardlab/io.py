"""JSON schemas, loaders and writers for MDPs, objectives, verdicts and configs.

Files are written atomically: the payload goes to a temporary file in the
target directory, which is then renamed over the destination.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Sequence

import jsonschema
import numpy as np

from .errors import LabError
from .mdp import MOMDP, TabularMDP
from .modal import Affordance, AffordanceMDP, ModalForm


class ParseError(LabError, ValueError):
    """A file could not be decoded or failed schema validation."""


_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM}
_MAT = {"type": "array", "items": _VEC}
_TEN = {"type": "array", "items": _MAT}
_NAMES = {"type": "array", "items": {"type": "string"}}

MDP_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["gamma", "mu0", "transition"],
    "properties": {
        "states": _NAMES,
        "actions": _NAMES,
        "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "mu0": _VEC,
        "transition": _TEN,
        "rewards": {"type": "array", "items": _MAT},
    },
}

MOMDP_SCHEMA: dict[str, Any] = {**MDP_SCHEMA, "required": [*MDP_SCHEMA["required"], "rewards"]}

AFFORDANCE_MDP_SCHEMA: dict[str, Any] = {
    **MDP_SCHEMA,
    "required": [*MDP_SCHEMA["required"], "modal_form"],
    "properties": {
        **MDP_SCHEMA["properties"],
        "affordances": {"type": "array", "items": {
            "type": "object", "required": ["reward", "gamma"],
            "properties": {"reward": {"type": "array"}, "gamma": _NUM}}},
        "modal_form": {"type": "object", "required": ["kind", "base_reward"], "properties": {
            "kind": {"enum": ["tanh_gate", "value_penalty", "fixed"]},
            "base_reward": {"type": "array"},
            "affordance_index": {"type": "integer", "minimum": 0},
            "scale": _NUM}},
    },
}

OBJECTIVE_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"type": "string"}, "thresholds": _VEC, "c": _NUM, "alpha": _NUM, "weights": _VEC},
}

TRANSFORM_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"enum": ["Exponential", "Isoelastic", "Logarithmic", "Quadratic", "Affine"]},
                   "alpha": _NUM, "b": _NUM, "a": _NUM},
}

VERDICT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["outcome", "margin"],
    "properties": {
        "outcome": {"enum": ["Scalarizable", "Unscalarizable"]},
        "margin": _NUM,
        "weights": _VEC,
        "degenerate_tag": {"type": "string"},
        "witness_pairs": {"type": "array"},
        "sample_relative": {"type": "boolean"},
    },
}

FEASIBILITY_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["outcome", "residual"],
    "properties": {
        "outcome": {"enum": ["Realizable", "Infeasible", "Indeterminate"]},
        "residual": _NUM,
        "fitted_affine": {"type": "object", "required": ["b", "a"]},
        "violating_pair": {"type": "array"},
    },
}

INSTANCE_SPEC_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["n_states", "n_actions", "k"],
    "properties": {
        "n_states": {"type": "integer", "minimum": 1},
        "n_actions": {"type": "integer", "minimum": 1},
        "k": {"type": "integer", "minimum": 1},
        "gamma_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "reward_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "support": {"type": ["integer", "null"], "minimum": 1},
        "seed": {"type": "integer"},
    },
}

EXPERIMENT_KINDS = ("scalarize", "risk_transform", "modal_learn", "morl_solve", "corollary_suite")

CONFIG_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["kind", "seed"],
    "properties": {
        "kind": {"enum": list(EXPERIMENT_KINDS)},
        "seed": {"type": "integer"},
        "input": {"type": "string"},
        "objective": OBJECTIVE_SCHEMA,
        "transform": TRANSFORM_SCHEMA,
        "reward_index": {"type": "integer", "minimum": 0},
        "budget": {"type": "integer", "minimum": 1},
        "probes": {"type": "integer", "minimum": 1},
        "episodes": {"type": "integer", "minimum": 0},
        "steps": {"type": "integer", "minimum": 1},
        "restarts": {"type": "integer", "minimum": 1},
        "count": {"type": "integer", "minimum": 1},
        "output": {"type": "string"},
    },
    "allOf": [{"if": {"properties": {"kind": {"enum": ["scalarize", "risk_transform", "modal_learn", "morl_solve"]}}},
               "then": {"required": ["input"]}}],
}

SCHEMAS = {"mdp": MDP_SCHEMA, "momdp": MOMDP_SCHEMA, "affordance_mdp": AFFORDANCE_MDP_SCHEMA,
           "objective": OBJECTIVE_SCHEMA, "transform": TRANSFORM_SCHEMA, "verdict": VERDICT_SCHEMA,
           "feasibility": FEASIBILITY_SCHEMA, "instance_spec": INSTANCE_SPEC_SCHEMA, "config": CONFIG_SCHEMA}


# ------------------------------------------------------------------ decoding

def parse_json(text: str, source: str = "<string>") -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def read_json(path: str | os.PathLike) -> Any:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{p}: cannot read ({exc.strerror})") from exc
    return parse_json(text, str(p))


def validate(data: Any, schema: str | dict[str, Any], source: str = "<data>") -> None:
    sch = SCHEMAS[schema] if isinstance(schema, str) else schema
    try:
        jsonschema.validate(data, sch)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ParseError(f"{source}: schema violation at {where}: {exc.message}") from exc


def detect_schema(data: Any) -> str:
    """Best guess of which schema a loaded document claims to follow."""
    if not isinstance(data, dict):
        return "mdp"
    if "transition" in data:
        if "modal_form" in data:
            return "affordance_mdp"
        return "momdp" if "rewards" in data else "mdp"
    if "outcome" in data:
        return "verdict" if data.get("outcome") in ("Scalarizable", "Unscalarizable") else "feasibility"
    if "n_states" in data:
        return "instance_spec"
    if "seed" in data and data.get("kind") in EXPERIMENT_KINDS:
        return "config"
    if data.get("kind") in TRANSFORM_SCHEMA["properties"]["kind"]["enum"]:
        return "transform"
    return "objective"


# ------------------------------------------------------------------ domain objects

def mdp_to_json(mdp: TabularMDP, rewards: np.ndarray | None = None) -> dict[str, Any]:
    out: dict[str, Any] = {"states": list(mdp.state_names), "actions": list(mdp.action_names),
                           "gamma": mdp.gamma, "mu0": mdp.initial.tolist(), "transition": mdp.transition.tolist()}
    if rewards is not None:
        out["rewards"] = np.asarray(rewards).tolist()
    return out


def momdp_to_json(momdp: MOMDP) -> dict[str, Any]:
    return mdp_to_json(momdp.skeleton, momdp.rewards)


def _build(fn, *args):
    try:
        return fn(*args)
    except (LabError, ValueError, TypeError) as exc:
        raise ParseError(str(exc)) from exc


def mdp_from_json(data: dict[str, Any], source: str = "<data>") -> TabularMDP:
    validate(data, "mdp", source)
    return _build(lambda: TabularMDP(np.array(data["transition"], dtype=float), np.array(data["mu0"], dtype=float),
                                     data["gamma"], tuple(data.get("states", ())), tuple(data.get("actions", ()))))


def momdp_from_json(data: dict[str, Any], source: str = "<data>") -> MOMDP:
    validate(data, "momdp", source)
    mdp = mdp_from_json({k: v for k, v in data.items() if k != "rewards"}, source)
    return _build(lambda: MOMDP(mdp, np.array(data["rewards"], dtype=float)))


def amdp_to_json(amdp: AffordanceMDP) -> dict[str, Any]:
    out = mdp_to_json(amdp.skeleton)
    out["affordances"] = [{"reward": np.asarray(a.reward).tolist(), "gamma": a.gamma} for a in amdp.affordances]
    out["modal_form"] = amdp.form.to_json()
    return out


def amdp_from_json(data: dict[str, Any], source: str = "<data>") -> AffordanceMDP:
    validate(data, "affordance_mdp", source)
    mdp = mdp_from_json({k: v for k, v in data.items() if k not in ("affordances", "modal_form")}, source)
    f = data["modal_form"]

    def make():
        form = ModalForm(f["kind"], np.array(f["base_reward"], dtype=float), int(f.get("affordance_index", 0)),
                         float(f.get("scale", 1.0)))
        affs = tuple(Affordance(np.array(a["reward"], dtype=float), float(a["gamma"]))
                     for a in data.get("affordances", []))
        return AffordanceMDP(mdp, form, affs)

    return _build(make)


def load_momdp(path) -> MOMDP:
    return momdp_from_json(read_json(path), str(path))


def load_amdp(path) -> AffordanceMDP:
    return amdp_from_json(read_json(path), str(path))


def validate_document(data: Any, source: str = "<data>") -> str:
    """Schema-check a document and, for MDP-like files, its domain invariants; returns the schema name."""
    kind = detect_schema(data)
    validate(data, kind, source)
    if kind == "mdp":
        mdp_from_json(data, source)
    elif kind == "momdp":
        momdp_from_json(data, source)
    elif kind == "affordance_mdp":
        amdp_from_json(data, source)
    return kind


# ------------------------------------------------------------------ writing

def dumps(data: Any) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n"


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{p.name}.", dir=p.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, p)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return p


def write_json(path, data: Any) -> Path:
    return atomic_write_text(path, dumps(data))


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    return atomic_write_text(path, csv_text(header, rows))


def fixture_path(name: str) -> Path:
    """Filesystem path of a bundled fixture file."""
    from importlib.resources import files

    return Path(str(files("rewardlab") / "fixtures" / name))
