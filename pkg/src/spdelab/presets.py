"""Named coefficient families with closed-form Lipschitz data.

Every preset returns the function together with its exact Lipschitz
constant in u (and sup bound, where it exists), so the Lipschitz data a
config declares can be checked against the closed forms at load time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class Coefficient:
    """f(t, x, u) plus its Lipschitz constant in u and sup bound (None if unbounded)."""

    fn: Callable
    lipschitz: float
    bound: float | None
    name: str
    params: dict
    constant: float | None = None


def _params(params: dict, allowed: dict, family: str) -> dict:
    unknown = set(params) - set(allowed)
    if unknown:
        raise ConfigurationError(f"{family}: unknown parameter(s) {sorted(unknown)}")
    out = dict(allowed)
    out.update(params)
    for k, v in out.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise ConfigurationError(f"{family}.{k} must be a finite number, got {v!r}")
    return out


# -- reaction term g(t, x, u) -------------------------------------------------

def _g_zero(p):
    return Coefficient(lambda t, x, u: np.zeros_like(u), 0.0, 0.0, "zero", p, constant=0.0)


def _g_linear(p):
    c, f0 = p["slope"], p["offset"]
    return Coefficient(lambda t, x, u: c * u + f0, abs(c), None, "linear", p)


def _g_sine(p):
    A, k = p["amplitude"], p["frequency"]
    return Coefficient(lambda t, x, u: A * np.sin(k * u), abs(A * k), abs(A), "sine", p)


def _g_tanh(p):
    A = p["amplitude"]
    return Coefficient(lambda t, x, u: A * np.tanh(u), abs(A), abs(A), "tanh", p)


G_PRESETS = {
    "zero": (_g_zero, {}),
    "linear": (_g_linear, {"slope": -1.0, "offset": 0.0}),
    "sine": (_g_sine, {"amplitude": 1.0, "frequency": 1.0}),
    "tanh": (_g_tanh, {"amplitude": 1.0}),
}


# -- noise coefficient sigma(t, x, u) -----------------------------------------

def _s_constant(p):
    c = p["value"]
    return Coefficient(lambda t, x, u: np.full_like(u, c), 0.0, abs(c), "constant", p,
                       constant=c)


def _s_inverse_sqrt(p):
    A = p["amplitude"]
    # max |d/du (1+u^2)^(-1/2)| = 2/(3*sqrt(3)) at u = 1/sqrt(2)
    return Coefficient(lambda t, x, u: A / np.sqrt(1.0 + u * u),
                       abs(A) * 2.0 / (3.0 * math.sqrt(3.0)), abs(A), "inverse_sqrt", p)


def _s_bounded_sigmoid(p):
    A, k, floor = p["amplitude"], p["steepness"], p["floor"]
    return Coefficient(lambda t, x, u: floor + A * 0.5 * (1.0 + np.tanh(k * u)),
                       abs(A * k) / 2.0, max(abs(floor), abs(floor + A)),
                       "bounded_sigmoid", p)


def _s_cosine(p):
    A, c = p["amplitude"], p["center"]
    return Coefficient(lambda t, x, u: c + A * np.cos(u), abs(A), abs(c) + abs(A), "cosine", p)


SIGMA_PRESETS = {
    "constant": (_s_constant, {"value": 1.0}),
    "inverse_sqrt": (_s_inverse_sqrt, {"amplitude": 1.0}),
    "bounded_sigmoid": (_s_bounded_sigmoid, {"amplitude": 1.0, "steepness": 1.0, "floor": 0.0}),
    "cosine": (_s_cosine, {"amplitude": 0.5, "center": 1.0}),
}


# -- initial condition u0(x), spatial coefficients a(x), b(x) -----------------

def _x_constant(p, D):
    c = p["value"]
    return lambda x: np.full_like(np.asarray(x, dtype=float), c)


def _x_sine_mode(p, D):
    A, m = p["amplitude"], p["mode"]
    return lambda x: A * np.sin(m * np.pi * np.asarray(x, dtype=float) / D)


def _x_cosine_mode(p, D):
    A, m, c = p["amplitude"], p["mode"], p["offset"]
    return lambda x: c + A * np.cos(m * np.pi * np.asarray(x, dtype=float) / D)


def _x_modulated(p, D):
    base, eps = p["base"], p["depth"]
    return lambda x: base * (1.0 + eps * np.sin(2.0 * np.pi * np.asarray(x, dtype=float) / D))


SPATIAL_PRESETS = {
    "constant": (_x_constant, {"value": 1.0}),
    "sine_mode": (_x_sine_mode, {"amplitude": 1.0, "mode": 1.0}),
    "cosine_mode": (_x_cosine_mode, {"amplitude": 1.0, "mode": 1.0, "offset": 0.0}),
    "modulated": (_x_modulated, {"base": 1.0, "depth": 0.25}),
}


def lookup_preset(registry, spec, family):
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        spec = {"name": "constant", "value": float(spec)}
    if isinstance(spec, str):
        spec = {"name": spec}
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigurationError(f"{family}: expected a preset name or {{'name': ...}} mapping")
    name = spec["name"]
    if name not in registry:
        raise ConfigurationError(f"{family}: unknown preset {name!r}; "
                                 f"choose from {sorted(registry)}")
    factory, defaults = registry[name]
    params = _params({k: v for k, v in spec.items() if k != "name"}, defaults, f"{family}.{name}")
    return factory, params


def reaction(spec) -> Coefficient:
    factory, params = lookup_preset(G_PRESETS, spec, "g")
    return factory(params)


def noise_coefficient(spec) -> Coefficient:
    factory, params = lookup_preset(SIGMA_PRESETS, spec, "sigma")
    return factory(params)


def spatial(spec, D: float, family: str = "profile") -> Callable[[np.ndarray], np.ndarray]:
    factory, params = lookup_preset(SPATIAL_PRESETS, spec, family)
    return factory(params, D)
