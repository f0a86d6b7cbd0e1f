"""Experiment configuration: YAML with an explicit schema version.

Unknown keys, wrong types and empty lists are rejected with the line of the
offending entry.  See ``README.md`` for the full schema.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .models import (REACTOR_INPUT_BOX, REACTOR_STATE_BOX, ControlSystem, CostFunction, ReactorParams,
                     cost_from_polynomial, economic_cost, parse_polynomial, polynomial_system,
                     polynomialize_reactor, reactor_system)
from .nlp import NlpOptions

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str = ""):
        where = f"line {line}: " if line else ""
        key = f"{path}: " if path else ""
        super().__init__(f"{where}{key}{message}")
        self.line = line
        self.path = path


_NUM = (int, float)

# key -> (accepted types, default); a nested dict is a sub-schema; REQUIRED marks mandatory keys
REQUIRED = object()

MODEL_REACTOR = {
    "kind": (str, REQUIRED), "label": (str, "reactor"),
    "params": (dict, {}), "cost": (dict, {"kind": "economic", "beta": 1.0}),
    "taylor": (dict, {"order": 4, "center": 110.0}),
}
MODEL_POLY = {
    "kind": (str, REQUIRED), "label": (str, "polynomial"),
    "states": (list, REQUIRED), "inputs": (list, REQUIRED), "dynamics": (list, REQUIRED),
    "state_box": (list, REQUIRED), "input_box": (list, REQUIRED), "cost": (str, REQUIRED),
}
SOLVER = {
    "tol": (_NUM, 1e-6), "max_outer": (int, 40), "max_inner": (int, 3000), "penalty_init": (_NUM, 1.0),
    "penalty_factor": (_NUM, 10.0), "penalty_max": (_NUM, 1e10), "multistart_k": (int, 16),
    "steady_state_tol": (_NUM, 1e-8),
}
SIMULATE = {"T": (_NUM, 1.0), "u": (list, None), "step": (_NUM, 1e-3)}
OCP = {
    "x0": (list, REQUIRED), "T": (list, REQUIRED), "N": (int, None), "control_interval": (_NUM, None),
    "max_intervals": (int, 400), "step": (_NUM, 1e-3), "objective_mode": (str, "averaged"),
    "constraint_tol": (_NUM, 1e-4), "defect_tol": (_NUM, 1e-6),
}
TURNPIKE = {
    "epsilons": (list, [0.05, 0.1, 0.2]), "delta0": (_NUM, 1e-6), "kind": (str, "x"),
    "scaled": (bool, True), "check_epsilon": (_NUM, 0.05), "max_variation": (_NUM, 0.2),
}
DISSIPATIVITY = {
    "enabled": (bool, True), "storage_degree": (int, 2), "multiplier_degree": (int, None),
    "alpha_on": (str, "x"), "mode": (str, "auto"), "method": (str, "direct"), "psd_cap": (int, 400),
    "reduce_degree": (bool, True), "check_grid": (int, 21), "check_random": (int, 2000),
    "check_tol": (_NUM, 1e-7), "residual_tol": (_NUM, 1e-3), "min_alpha": (_NUM, 0.5),
    "bisection_tol": (_NUM, 1e-3),
}
STORAGE = {
    "x0": (list, REQUIRED), "T_grid": (list, REQUIRED), "strict": (bool, False),
    "mode": (str, "free"), "control_interval": (_NUM, 0.25), "max_intervals": (int, 50),
    "step": (_NUM, 1e-2),
}
TOP = {
    "schema_version": (int, REQUIRED), "model": (dict, REQUIRED), "solver": (dict, {}),
    "simulate": (dict, {}), "ocp": (dict, REQUIRED), "turnpike": (dict, {}),
    "dissipativity": (dict, {}), "storage": (dict, None), "output": (str, "out"),
}
SUBSCHEMA = {"solver": SOLVER, "simulate": SIMULATE, "ocp": OCP, "turnpike": TURNPIKE,
             "dissipativity": DISSIPATIVITY, "storage": STORAGE}
REACTOR_PARAM_KEYS = set(ReactorParams.__dataclass_fields__)


def _node_line(node, path: list) -> int | None:
    """1-based line of the YAML node at ``path`` (deepest existing ancestor)."""
    line = node.start_mark.line + 1 if node is not None else None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == key), None)
            if nxt is None:
                key_node = next((k for k, _ in node.value if k.value == key), None)
                return key_node.start_mark.line + 1 if key_node is not None else line
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            break
        line = node.start_mark.line + 1
    return line


def _key_line(node, path: list, key: str) -> int | None:
    for p in path:
        if isinstance(node, yaml.MappingNode):
            node = next((v for k, v in node.value if k.value == p), node)
    if isinstance(node, yaml.MappingNode):
        for k, _ in node.value:
            if k.value == key:
                return k.start_mark.line + 1
    return None


def _check_block(data: dict, schema: dict, root, path: list) -> dict:
    out = {}
    dotted = ".".join(str(p) for p in path)
    for key in data:
        if key not in schema:
            raise ConfigError(f"unknown key {key!r}", _key_line(root, path, key), dotted)
    for key, (types, default) in schema.items():
        if key not in data or data[key] is None:
            if default is REQUIRED:
                raise ConfigError(f"missing required key {key!r}", _node_line(root, path), dotted)
            out[key] = default
            continue
        val = data[key]
        ok = isinstance(val, types) and not (types in (_NUM, int) and isinstance(val, bool))
        if types is _NUM and isinstance(val, bool):
            ok = False
        if not ok:
            raise ConfigError(f"{key!r} has the wrong type ({type(val).__name__})",
                              _node_line(root, path + [key]), dotted)
        if isinstance(val, list) and not val:
            raise ConfigError(f"{key!r} must be a nonempty list", _node_line(root, path + [key]), dotted)
        out[key] = val
    return out


@dataclass
class ExperimentConfig:
    raw: dict
    model: dict
    solver: dict
    simulate: dict
    ocp: dict
    turnpike: dict
    dissipativity: dict
    storage: dict | None
    output: str
    source: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    # -- model construction ---------------------------------------------------
    def system(self) -> ControlSystem:
        if "system" not in self._cache:
            self._cache["system"] = build_system(self.model)
        return self._cache["system"]

    def cost(self) -> CostFunction:
        if "cost" not in self._cache:
            self._cache["cost"] = build_cost(self.model)
        return self._cache["cost"]

    def polynomial_system(self) -> ControlSystem:
        """The system used for certificate synthesis (polynomialised for the reactor)."""
        if "poly" not in self._cache:
            m = self.model
            if m["kind"] == "reactor":
                params = ReactorParams(**m["params"])
                t = {"order": 4, "center": 110.0, **m["taylor"]}
                vf = polynomialize_reactor(params, int(t["order"]), float(t["center"]))
                self._cache["poly"] = vf.to_system(REACTOR_STATE_BOX, REACTOR_INPUT_BOX,
                                                   m["label"] + "-polynomial")
            else:
                self._cache["poly"] = self.system()
        return self._cache["poly"]

    def nlp_options(self) -> NlpOptions:
        s = self.solver
        return NlpOptions(tol=float(s["tol"]), max_outer=s["max_outer"], max_inner=s["max_inner"],
                          penalty_init=float(s["penalty_init"]), penalty_factor=float(s["penalty_factor"]),
                          penalty_max=float(s["penalty_max"]))

    def x0_list(self) -> list[np.ndarray]:
        return [np.asarray(x, float) for x in self.ocp["x0"]]

    def horizons(self) -> list[float]:
        return [float(T) for T in self.ocp["T"]]

    def intervals(self, T: float) -> int:
        o = self.ocp
        if o["N"] is not None:
            return int(o["N"])
        return max(1, min(int(o["max_intervals"]), int(round(T / float(o["control_interval"])))))

    def runs(self) -> list[tuple[int, np.ndarray, float]]:
        """OCP runs ordered by (x0 index, T index)."""
        out = []
        for x0 in self.x0_list():
            for T in self.horizons():
                out.append((len(out), x0, T))
        return out


def build_system(model: dict) -> ControlSystem:
    if model["kind"] == "reactor":
        return reactor_system(ReactorParams(**model["params"]), label=model["label"])
    return polynomial_system(model["states"], model["inputs"], model["dynamics"], model["state_box"],
                             model["input_box"], label=model["label"])


def build_cost(model: dict) -> CostFunction:
    if model["kind"] == "reactor":
        return economic_cost(float(model["cost"].get("beta", 1.0)))
    names = tuple(model["states"]) + tuple(model["inputs"])
    return cost_from_polynomial(parse_polynomial(model["cost"], names), len(model["states"]))


def parse_config(text: str, source: str = "") -> ExperimentConfig:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1)
    top = _check_block(data, TOP, root, [])
    if top["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {top['schema_version']} (expected {SCHEMA_VERSION})",
                          _node_line(root, ["schema_version"]), "schema_version")
    model = top["model"]
    kind = model.get("kind")
    if kind not in ("reactor", "polynomial"):
        raise ConfigError("model.kind must be 'reactor' or 'polynomial'", _node_line(root, ["model", "kind"]),
                          "model.kind")
    model = _check_block(model, MODEL_REACTOR if kind == "reactor" else MODEL_POLY, root, ["model"])
    if kind == "reactor":
        for key in model["params"]:
            if key not in REACTOR_PARAM_KEYS:
                raise ConfigError(f"unknown reactor parameter {key!r}",
                                  _key_line(root, ["model", "params"], key), "model.params")
        for key in model["cost"]:
            if key not in ("kind", "beta"):
                raise ConfigError(f"unknown key {key!r}", _key_line(root, ["model", "cost"], key), "model.cost")
        for key in model["taylor"]:
            if key not in ("order", "center"):
                raise ConfigError(f"unknown key {key!r}", _key_line(root, ["model", "taylor"], key),
                                  "model.taylor")
    blocks = {}
    for name, schema in SUBSCHEMA.items():
        val = top[name]
        blocks[name] = None if val is None else _check_block(val, schema, root, [name])
    cfg = ExperimentConfig(data, model, blocks["solver"], blocks["simulate"], blocks["ocp"],
                           blocks["turnpike"], blocks["dissipativity"], blocks["storage"], top["output"],
                           source)
    try:
        sys = cfg.system()
        cfg.cost()
    except ValueError as exc:
        raise ConfigError(str(exc), _node_line(root, ["model"]), "model") from None
    _semantic_checks(cfg, sys, root)
    return cfg


def _semantic_checks(cfg: ExperimentConfig, sys: ControlSystem, root) -> None:
    o = cfg.ocp
    for i, x0 in enumerate(o["x0"]):
        if not isinstance(x0, list) or len(x0) != sys.n_x or not all(isinstance(v, _NUM) for v in x0):
            raise ConfigError(f"x0 entry {i} must be a list of {sys.n_x} numbers",
                              _node_line(root, ["ocp", "x0", i]), "ocp.x0")
    for i, T in enumerate(o["T"]):
        if not isinstance(T, _NUM) or not T > 0:
            raise ConfigError("horizons must be positive numbers", _node_line(root, ["ocp", "T", i]), "ocp.T")
    if o["N"] is None and o["control_interval"] is None:
        raise ConfigError("give either N or control_interval", _node_line(root, ["ocp"]), "ocp")
    if o["objective_mode"] not in ("averaged", "integral"):
        raise ConfigError("objective_mode must be 'averaged' or 'integral'",
                          _node_line(root, ["ocp", "objective_mode"]), "ocp.objective_mode")
    tp = cfg.turnpike
    if tp["kind"] not in ("x", "z"):
        raise ConfigError("turnpike.kind must be 'x' or 'z'", _node_line(root, ["turnpike", "kind"]), "turnpike.kind")
    eps = tp["epsilons"]
    if not all(isinstance(e, _NUM) and e > 0 for e in eps) or any(b <= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("epsilons must be positive and increasing", _node_line(root, ["turnpike", "epsilons"]),
                          "turnpike.epsilons")
    d = cfg.dissipativity
    if d["alpha_on"] not in ("x", "z") or d["mode"] not in ("auto", "vertex", "joint") \
            or d["method"] not in ("direct", "bisection"):
        raise ConfigError("invalid alpha_on/mode/method", _node_line(root, ["dissipativity"]), "dissipativity")
    if cfg.storage is not None:
        s = cfg.storage
        grid = s["T_grid"]
        if not all(isinstance(t, _NUM) for t in grid) or grid[0] != 0 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("T_grid must be increasing and start at 0", _node_line(root, ["storage", "T_grid"]),
                              "storage.T_grid")
        if s["mode"] not in ("free", "restricted"):
            raise ConfigError("storage.mode must be 'free' or 'restricted'", _node_line(root, ["storage", "mode"]),
                              "storage.mode")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, str(path))


def dump_plain(obj: Any) -> Any:
    """Convert numpy containers to JSON-ready Python values."""
    if isinstance(obj, dict):
        return {str(k): dump_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [dump_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return dump_plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
