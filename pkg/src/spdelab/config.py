"""Experiment configuration: strict JSON schema, validation and run manifests.

A config is a JSON object with these sections (all optional except where
noted; unknown keys anywhere are errors)::

    {
      "grid":     {"T": 1.0, "D": 1.0, "nt": 64, "nx": 32},
      "operator": {"a": 1.0, "b": 0.0, "boundary": "dirichlet", "scheme": "central"},
      "model":    {"g": "zero", "sigma": 1.0, "u0": 0.0,
                   "lipschitz": {"L_g": 0.0, "L_sigma": 0.0, "K_sigma": 1.0}},
      "drift":    {"name": "constant", "value": 1.0},
      "kernel":   {"tol_neg": 1e-10, "alphas": [1.2, 1.5, 1.8]},
      "stats":    {"n_boot": 1000, "level": 0.95},
      "w2":       {"a": "a.csv", "b": "b.csv", "metric": "euclidean", "epsilon": null},
      "repr":     {"case": "linear", "degree": 2, "nx": 4, "nt": 32},
      "replicas": 1000, "seed": 0, "mode": "sup", "out": "out"
    }

Coefficients are preset names, numbers (constants) or ``{"name": ...}``
mappings with parameters; see :mod:`spdelab.presets`.  Declared Lipschitz
data may be omitted, in which case the closed forms are used.  A declared
value below the closed form is rejected.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .constants import LipschitzData
from .errors import ConfigurationError
from .girsanov import DriftSpec, drift_preset
from .grid import Grid, make_grid
from .kernel import Boundary, OperatorSpec
from .presets import Coefficient, noise_coefficient, reaction, spatial
from .solver import ModelSpec

DEFAULTS = {
    "grid": {"T": 1.0, "D": 1.0, "nt": 64, "nx": 32},
    "operator": {"a": 1.0, "b": 0.0, "boundary": "dirichlet", "scheme": "central"},
    "model": {"g": "zero", "sigma": 1.0, "u0": 0.0, "lipschitz": {}},
    "drift": {"name": "constant", "value": 0.0},
    "kernel": {"tol_neg": 1e-10, "alphas": [1.2, 1.5, 1.8]},
    "stats": {"n_boot": 1000, "level": 0.95},
    "w2": {"a": None, "b": None, "metric": "euclidean", "epsilon": None},
    "repr": {"case": "linear", "degree": 2, "nx": 4, "nt": 32},
    "replicas": 1000,
    "seed": 0,
    "mode": "sup",
    "out": "out",
}
# sections whose values are free-form preset specs rather than fixed keys
_FREE = {("operator", "a"), ("operator", "b"), ("model", "g"), ("model", "sigma"),
         ("model", "u0"), ("drift",)}
_LIPSCHITZ_KEYS = ("L_g", "L_sigma", "K_sigma")
_REL_TOL = 1e-9


@dataclass
class ExperimentConfig:
    raw: dict
    grid: Grid
    operator: OperatorSpec
    model: ModelSpec
    drift: DriftSpec
    replicas: int
    seed: int
    mode: str
    out: Path
    kernel: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    w2: dict = field(default_factory=dict)
    repr: dict = field(default_factory=dict)
    source: Path | None = None

    def digest(self) -> str:
        """SHA-256 of the canonical JSON of the resolved config, output directory excluded."""
        return config_hash({k: v for k, v in self.raw.items() if k != "out"})

    def with_overrides(self, **kw) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        for k, v in kw.items():
            if v is not None:
                raw[k] = str(v) if isinstance(v, Path) else v
        return from_dict(raw, self.source)


def config_hash(raw: dict) -> str:
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _merge(defaults: dict, given: dict, path: tuple = ()) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        here = path + (k,)
        if k not in defaults:
            where = ".".join(here)
            raise ConfigurationError(f"unknown config key {where!r}")
        if here in _FREE:
            out[k] = copy.deepcopy(v)
        elif isinstance(defaults[k], dict) and here != ("model", "lipschitz"):
            if not isinstance(v, dict):
                raise ConfigurationError(f"{'.'.join(here)} must be a mapping")
            out[k] = _merge(defaults[k], v, here)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _int(v, name, lo):
    if isinstance(v, bool) or not isinstance(v, int):
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        else:
            raise ConfigurationError(f"{name} must be an integer, got {v!r}")
    if v < lo:
        raise ConfigurationError(f"{name} must be ≥ {lo}, got {v}")
    return v


def _num(v, name, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigurationError(f"{name} must be a finite number, got {v!r}")
    if positive and v <= 0:
        raise ConfigurationError(f"{name} must be > 0, got {v}")
    return float(v)


def _lipschitz(declared: dict, g: Coefficient, sigma: Coefficient) -> LipschitzData:
    if not isinstance(declared, dict):
        raise ConfigurationError("model.lipschitz must be a mapping")
    unknown = set(declared) - set(_LIPSCHITZ_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown config key(s) in model.lipschitz: {sorted(unknown)}")
    closed = {"L_g": g.lipschitz, "L_sigma": sigma.lipschitz, "K_sigma": sigma.bound}
    values = {}
    for key in _LIPSCHITZ_KEYS:
        ref = closed[key]
        if key in declared:
            v = _num(declared[key], f"model.lipschitz.{key}")
            if ref is not None and v < ref * (1 - _REL_TOL) - 1e-15:
                raise ConfigurationError(
                    f"model.lipschitz.{key} = {v} is below the closed-form value {ref:.6g} "
                    f"of the chosen preset")
            values[key] = v
        else:
            if ref is None:
                raise ConfigurationError(f"model.lipschitz.{key} has no closed form for this "
                                         "preset and must be declared")
            values[key] = ref
    return LipschitzData(**values)


def from_dict(given: dict, source: Path | None = None) -> ExperimentConfig:
    if not isinstance(given, dict):
        raise ConfigurationError("config must be a JSON object")
    raw = _merge(DEFAULTS, given)
    g = raw["grid"]
    grid = make_grid(_num(g["T"], "T", True), _num(g["D"], "D", True),
                     _int(g["nt"], "nt", 2), _int(g["nx"], "nx", 2))
    D = grid.D

    op = raw["operator"]
    try:
        boundary = Boundary(op["boundary"])
    except ValueError:
        raise ConfigurationError(f"operator.boundary must be one of "
                                 f"{[b.value for b in Boundary]}, got {op['boundary']!r}") from None
    operator = OperatorSpec(spatial(op["a"], D, "operator.a"), spatial(op["b"], D, "operator.b"),
                            boundary, op["scheme"], label={"a": op["a"], "b": op["b"]})

    m = raw["model"]
    gfun, sig = reaction(m["g"]), noise_coefficient(m["sigma"])
    u0 = spatial(m["u0"], D, "model.u0")
    model = ModelSpec(gfun, sig, u0, _lipschitz(m["lipschitz"], gfun, sig), operator)

    drift = drift_preset(raw["drift"], D)

    mode = raw["mode"]
    if mode not in ("sup", "l2"):
        raise ConfigurationError(f"mode must be 'sup' or 'l2', got {mode!r}")
    k = raw["kernel"]
    _num(k["tol_neg"], "kernel.tol_neg", True)
    for a in k["alphas"]:
        if not 1.0 < _num(a, "kernel.alphas") < 2.0:
            raise ConfigurationError(f"kernel.alphas entries must lie in (1, 2), got {a}")
    s = raw["stats"]
    _int(s["n_boot"], "stats.n_boot", 2)
    if not 0 < _num(s["level"], "stats.level") < 1:
        raise ConfigurationError("stats.level must lie in (0, 1)")
    r = raw["repr"]
    if r["case"] not in ("linear", "quadratic", "mixed"):
        raise ConfigurationError(f"repr.case must be linear, quadratic or mixed, got {r['case']!r}")
    _int(r["degree"], "repr.degree", 1)
    _int(r["nx"], "repr.nx", 2)
    _int(r["nt"], "repr.nt", 2)
    if raw["w2"]["metric"] not in ("euclidean", "sup", "l2"):
        raise ConfigurationError("w2.metric must be euclidean, sup or l2")
    if raw["w2"]["epsilon"] is not None:
        _num(raw["w2"]["epsilon"], "w2.epsilon", True)

    return ExperimentConfig(raw, grid, operator, model, drift,
                            _int(raw["replicas"], "replicas", 1),
                            _int(raw["seed"], "seed", 0), mode, Path(raw["out"]),
                            k, s, raw["w2"], r, source)


def loads(text: str, source: Path | None = None) -> ExperimentConfig:
    try:
        given = json.loads(text)
    except json.JSONDecodeError as exc:
        where = f"{source}:" if source else ""
        raise ConfigurationError(f"{where}{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return from_dict(given, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return loads(text, path)


@dataclass
class RunManifest:
    """Provenance of one CLI run.

    Timestamps live only here; data files never contain them, so two runs
    with the same config and seed produce byte-identical data files.
    """

    command: str
    config_hash: str
    seed: int
    replicas: int
    version: str = __version__
    started: str = ""
    finished: str = ""
    outputs: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    partial: bool = False
    error: str | None = None

    @property
    def passed(self) -> bool:
        return not self.partial and all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "command": self.command, "config_hash": self.config_hash, "seed": self.seed,
            "replicas": self.replicas, "version": self.version, "started": self.started,
            "finished": self.finished, "outputs": self.outputs, "checks": self.checks,
            "partial": self.partial, "error": self.error, "passed": self.passed,
        }
