"""Experiment configuration files.

A config is a YAML mapping. Example::

    experiment: reselect-anomaly
    state: up
    observables: [x, x]
    precisions: [4, 8, 16]
    trajectories: 10000000
    seed: 20140101
    output_path: anomaly.csv

Everything is parsed and checked (states and observables are built) before an
experiment runs, so a bad file never starts a computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..errors import ContractViolation
from ..qcore import Observable, PostSelection, QuantumState, pauli_along
from .. import wigner

EXPERIMENTS = ("correlate", "simulate", "reselect-anomaly", "spin-compare", "tomography", "quasi-dist")

REQUIRED = {
    "correlate": ("observables", "state"),
    "simulate": ("observables", "state", "precisions", "trajectories", "seed"),
    "reselect-anomaly": ("observables", "state", "precisions", "trajectories", "seed"),
    "spin-compare": ("directions", "state", "precisions", "trajectories", "seed"),
    "tomography": ("state", "precisions", "trajectories", "seed"),
    "quasi-dist": ("observables", "state"),
}

KNOWN = {
    "experiment",
    "dimension",
    "observables",
    "directions",
    "precisions",
    "trajectories",
    "seed",
    "postselection",
    "output_path",
    "state",
    "guard_sigma",
    "mixed_order",
}

NAMED_PAULIS = {"x": (1, 0, 0), "y": (0, 1, 0), "z": (0, 0, 1)}
NAMED_SPIN_STATES = {
    "up": [1, 0],
    "down": [0, 1],
    "plus": [1, 1],
    "minus": [1, -1],
    "plus_i": [1, 1j],
    "minus_i": [1, -1j],
}


class ConfigError(Exception):
    """Invalid configuration; ``code`` is stable and machine-readable."""

    def __init__(self, code: str, message: str, line: int | None = None, field: str | None = None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.line = line
        self.field = field

    def as_dict(self) -> dict:
        return {"error": self.code, "message": self.message, "line": self.line, "field": self.field}

    def __str__(self):
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.message} [{self.code}]"


@dataclass
class ExperimentConfig:
    experiment: str
    dimension: int
    state: QuantumState
    observables: list[Observable] = field(default_factory=list)
    directions: list[np.ndarray] = field(default_factory=list)
    precisions: list[float] = field(default_factory=list)
    trajectories: int = 0
    seed: int = 0
    postselection: PostSelection | None = None
    reselect: bool = False
    output_path: str = ""
    guard_sigma: float | None = 5.0
    mixed_order: str = "qpqp"
    raw: dict = field(default_factory=dict)


def _lines(text: str) -> dict[str, int]:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[str(k.value)] = v.start_mark.line + 1
    return out


def _complex(x, name, line):
    try:
        if isinstance(x, str):
            return complex(x.replace(" ", ""))
        return complex(x)
    except (TypeError, ValueError):
        raise ConfigError("invalid-value", f"{name}: cannot read {x!r} as a number", line, name) from None


def _matrix(x, name, line) -> np.ndarray:
    if not isinstance(x, list) or not x or not all(isinstance(r, list) for r in x):
        raise ConfigError("invalid-value", f"{name}: expected a nested list matrix", line, name)
    m = np.array([[_complex(v, name, line) for v in row] for row in x])
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError("invalid-value", f"{name}: matrix must be square", line, name)
    return m


def _vector(x, name, line) -> np.ndarray:
    if not isinstance(x, list) or not x:
        raise ConfigError("invalid-value", f"{name}: expected a list of amplitudes", line, name)
    v = np.array([_complex(a, name, line) for a in x])
    if np.linalg.norm(v) == 0:
        raise ConfigError("invalid-value", f"{name}: zero vector", line, name)
    return v


def _parse_state(x, dim: int | None, line) -> QuantumState:
    name = "state"
    try:
        if isinstance(x, str):
            if x in NAMED_SPIN_STATES:
                return QuantumState.from_vector(NAMED_SPIN_STATES[x])
            if x == "vacuum":
                return wigner.vacuum(dim or wigner.DEFAULT_DIM)
            if x == "mixed":
                if not dim:
                    raise ConfigError("missing-field", "state 'mixed' needs 'dimension'", line, "dimension")
                return QuantumState.maximally_mixed(dim)
            raise ConfigError("invalid-value", f"unknown named state {x!r}", line, name)
        if isinstance(x, dict) and len(x) == 1:
            (kind, val), = x.items()
            d = dim or wigner.DEFAULT_DIM
            if kind == "vector":
                return QuantumState.from_vector(_vector(val, name, line))
            if kind == "density":
                return QuantumState.from_matrix(_matrix(val, name, line))
            if kind == "fock":
                return wigner.fock_state(d, int(val))
            if kind == "coherent":
                return wigner.displaced_vacuum(d, _complex(val, name, line))
            if kind == "squeezed":
                return wigner.squeezed_vacuum(d, float(val))
            if kind == "thermal":
                return wigner.thermal_state(d, float(val))
        raise ConfigError("invalid-value", f"cannot interpret state {x!r}", line, name)
    except (ContractViolation, TypeError, ValueError, IndexError) as exc:
        raise ConfigError("invalid-value", f"state: {exc}", line, name) from None


def _parse_observable(x, dim: int, line, pair_cache: dict) -> Observable:
    name = "observables"
    try:
        if isinstance(x, str):
            key = x.lower().removeprefix("sigma_")
            if key in NAMED_PAULIS:
                return pauli_along(NAMED_PAULIS[key])
            if key in ("q", "p"):
                pair = pair_cache.setdefault(dim, wigner.canonical_pair(dim))
                return pair.q_op if key == "q" else pair.p_op
            raise ConfigError("invalid-value", f"unknown observable name {x!r}", line, name)
        if isinstance(x, list) and len(x) == 3 and all(isinstance(c, (int, float)) for c in x):
            return pauli_along(x)
        if isinstance(x, dict) and set(x) == {"u", "v"}:
            pair = pair_cache.setdefault(dim, wigner.canonical_pair(dim))
            return pair.linear(float(x["u"]), float(x["v"]))
        if isinstance(x, dict) and set(x) == {"matrix"}:
            return Observable(_matrix(x["matrix"], name, line))
    except ContractViolation as exc:
        raise ConfigError("invalid-value", f"observable {x!r}: {exc}", line, name) from None
    raise ConfigError("invalid-value", f"cannot interpret observable {x!r}", line, name)


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and fully validate a config document."""
    lines = _lines(text)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError("parse-error", f"{source}: {exc}", mark.line + 1 if mark else None) from None
    if not isinstance(raw, dict):
        raise ConfigError("parse-error", f"{source}: top level must be a mapping")

    def line(key):
        return lines.get(key)

    for key in raw:
        if key not in KNOWN:
            raise ConfigError("unknown-field", f"unknown field {key!r}", line(key), key)
    if "experiment" not in raw:
        raise ConfigError("missing-field", "missing field 'experiment'", None, "experiment")
    exp = raw["experiment"]
    if exp not in EXPERIMENTS:
        raise ConfigError(
            "unknown-experiment",
            f"unknown experiment {exp!r}; options: {', '.join(EXPERIMENTS)}",
            line("experiment"),
            "experiment",
        )
    for key in REQUIRED[exp]:
        if key not in raw:
            raise ConfigError("missing-field", f"experiment {exp!r} requires field {key!r}", None, key)

    dim = raw.get("dimension")
    if dim is not None and (not isinstance(dim, int) or isinstance(dim, bool) or dim < 1):
        raise ConfigError("invalid-value", "dimension must be a positive integer", line("dimension"), "dimension")

    precisions = raw.get("precisions", [])
    if not isinstance(precisions, list):
        precisions = [precisions]
    for p in precisions:
        if isinstance(p, bool) or not isinstance(p, (int, float)):
            raise ConfigError("invalid-value", f"precision {p!r} is not a number", line("precisions"), "precisions")
        if not p > 0:
            raise ConfigError(
                "non-positive-precision", f"precision {p!r} must be > 0", line("precisions"), "precisions"
            )

    trajectories = raw.get("trajectories", 0)
    if "trajectories" in raw and (not isinstance(trajectories, int) or isinstance(trajectories, bool) or trajectories < 1):
        raise ConfigError("invalid-value", "trajectories must be an integer >= 1", line("trajectories"), "trajectories")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError("invalid-value", "seed must be a 64-bit unsigned integer", line("seed"), "seed")

    if exp == "tomography":
        dim = dim or wigner.DEFAULT_DIM
    state = _parse_state(raw["state"], dim, line("state"))
    if dim is not None and state.dim != dim:
        raise ConfigError("invalid-value", f"state dimension {state.dim} != dimension {dim}", line("state"), "state")
    dim = state.dim

    cfg = ExperimentConfig(exp, dim, state, seed=seed, trajectories=trajectories, raw=raw)
    cfg.precisions = [float(p) for p in precisions]
    cfg.output_path = str(raw.get("output_path") or f"{exp}.csv")

    gs = raw.get("guard_sigma", 5.0)
    if gs is not None and (isinstance(gs, bool) or not isinstance(gs, (int, float)) or gs <= 0):
        raise ConfigError("invalid-value", "guard_sigma must be positive or null", line("guard_sigma"), "guard_sigma")
    cfg.guard_sigma = None if gs is None else float(gs)

    pairs: dict = {}
    if "observables" in raw:
        obs = raw["observables"]
        if not isinstance(obs, list) or not obs:
            raise ConfigError("invalid-value", "observables must be a non-empty list", line("observables"), "observables")
        cfg.observables = [_parse_observable(o, dim, line("observables"), pairs) for o in obs]
        for o in cfg.observables:
            if o.dim != dim:
                raise ConfigError(
                    "invalid-value", f"observable dimension {o.dim} != state dimension {dim}", line("observables"), "observables"
                )
    if "directions" in raw:
        dirs = raw["directions"]
        if not isinstance(dirs, list) or not dirs:
            raise ConfigError("invalid-value", "directions must be a non-empty list", line("directions"), "directions")
        out = []
        for e in dirs:
            if isinstance(e, str) and e.lower() in NAMED_PAULIS:
                e = NAMED_PAULIS[e.lower()]
            v = np.asarray(e, dtype=float) if isinstance(e, list) or isinstance(e, tuple) else None
            if v is None or v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > 1e-10:
                raise ConfigError("invalid-value", f"direction {e!r} is not a unit 3-vector", line("directions"), "directions")
            out.append(v)
        if dim != 2:
            raise ConfigError("invalid-value", "spin experiments need a 2-dimensional state", line("state"), "state")
        cfg.directions = out

    post = raw.get("postselection")
    if post is not None:
        pl = line("postselection")
        if post == "initial":
            cfg.reselect = True
            cfg.postselection = PostSelection.onto(state.pure_vector())
        elif isinstance(post, dict) and set(post) == {"effect"}:
            try:
                cfg.postselection = PostSelection(_matrix(post["effect"], "postselection", pl))
            except ContractViolation as exc:
                raise ConfigError("invalid-value", f"postselection: {exc}", pl, "postselection") from None
        else:
            try:
                cfg.postselection = PostSelection.onto(_parse_state(post, dim, pl).pure_vector())
            except (ConfigError, ContractViolation) as exc:
                raise ConfigError("invalid-value", f"postselection: {exc}", pl, "postselection") from None
        if cfg.postselection.dim != dim:
            raise ConfigError("invalid-value", "postselection dimension mismatch", pl, "postselection")

    if exp == "simulate" and len(cfg.precisions) != len(cfg.observables):
        raise ConfigError(
            "invalid-value", "simulate needs one precision per observable", line("precisions"), "precisions"
        )
    if exp in ("spin-compare", "tomography") and len(cfg.precisions) != 1:
        raise ConfigError("invalid-value", f"{exp} takes a single precision", line("precisions"), "precisions")
    if exp == "reselect-anomaly":
        if cfg.postselection is None:
            try:
                cfg.postselection = PostSelection.onto(state.pure_vector())
            except ContractViolation:
                raise ConfigError("invalid-value", "re-selection needs a pure state", line("state"), "state") from None
            cfg.reselect = True
    if exp == "tomography":
        order = str(raw.get("mixed_order", "qpqp"))
        if sorted(order) != sorted("qqpp"):
            raise ConfigError("invalid-value", "mixed_order must contain two q and two p", line("mixed_order"), "mixed_order")
        cfg.mixed_order = order
        try:
            wigner.check_edge(state)
        except Exception as exc:  # TruncationError
            raise ConfigError("invalid-value", f"state: {exc}", line("state"), "state") from None
    if exp == "quasi-dist" and (dim * dim) ** len(cfg.observables) > 10**7:
        raise ConfigError("invalid-value", "quasi-distribution path count exceeds 1e7", line("observables"), "observables")
    return cfg


def validate_config(path) -> ExperimentConfig:
    """Read and validate the config file at ``path``."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError("file-not-found", f"config file {str(p)!r} does not exist")
    return parse_config(p.read_text(), str(p))


def config_echo(cfg: ExperimentConfig) -> dict[str, Any]:
    return dict(cfg.raw)
