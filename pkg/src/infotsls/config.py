"""Run configuration: schema validation and population/design construction.

A config is a JSON document. Numeric agent parameters may be given as a
number or as a distribution ``{"dist": ..., ...}`` drawn once per agent from
the population stream. Draw order is fixed: prior parameters, channel
parameters, rule parameters (by group label, then parameter name), action
parameters, then covariates in listed order.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import jsonschema
import numpy as np

from .actions import AffineInFeature, Link, MonotoneLink, Polynomial, action_from_config
from .beliefs import (
    Anchored,
    Bayesian,
    Drift,
    Feature,
    GaussianBelief,
    Grether,
    GridBelief,
    NoUpdate,
    SignalFamily,
)
from .errors import ConfigError
from .experiment import ACTIVE_GROUPS, PASSIVE_GROUPS, POPULATION_STREAM, Active, Agent, Design, Passive, rng_stream

_NUM = {"type": "number"}
_DIST = {
    "oneOf": [
        _NUM,
        {
            "type": "object",
            "required": ["dist"],
            "properties": {
                "dist": {"enum": ["constant", "normal", "uniform", "lognormal", "choice"]},
                "value": _NUM, "loc": _NUM, "scale": {"type": "number", "minimum": 0},
                "low": _NUM, "high": _NUM, "mean": _NUM, "sigma": {"type": "number", "minimum": 0},
                "values": {"type": "array", "items": _NUM, "minItems": 1},
                "probs": {"type": "array", "items": {"type": "number", "minimum": 0}},
            },
            "additionalProperties": False,
        },
    ]
}
_RULE = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["bayesian", "none", "grether", "anchored", "drift"]},
        "chi0": _DIST, "chi1": _DIST, "tau": _DIST, "shift": _DIST,
        "base": {"$ref": "#/definitions/rule"},
    },
    "additionalProperties": False,
}
_SIGNAL = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["constant", "covariate", "prior_shift"]},
        "value": _NUM, "name": {"type": "string", "pattern": "^x[1-9][0-9]*$"},
        "scale": _NUM, "shift": _NUM,
    },
    "additionalProperties": False,
}
_GRID = {
    "type": "object",
    "required": ["lo", "hi", "points"],
    "properties": {"lo": _NUM, "hi": _NUM, "points": {"type": "integer", "minimum": 2}},
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "definitions": {"rule": _RULE},
    "type": "object",
    "required": ["seed", "population", "design"],
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output_dir": {"type": "string"},
        "feature": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["mean", "second_moment", "variance"]}},
            "additionalProperties": False,
        },
        "population": {
            "type": "object",
            "required": ["n", "prior", "channel", "rules", "action"],
            "properties": {
                "n": {"type": "integer", "minimum": 2},
                "prior": {
                    "type": "object",
                    "required": ["kind", "mean"],
                    "properties": {
                        "kind": {"enum": ["gaussian", "grid"]},
                        "mean": _DIST, "variance": _DIST, "sd": _DIST, "states": _GRID,
                    },
                    "additionalProperties": False,
                },
                "channel": {
                    "type": "object",
                    "properties": {"noise": _DIST, "noise_sd": {"type": "number", "exclusiveMinimum": 0},
                                   "signals": _GRID},
                    "additionalProperties": False,
                },
                "rules": {
                    "type": "object",
                    "additionalProperties": {"$ref": "#/definitions/rule"},
                },
                "action": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["affine", "polynomial", "link", "binary_latent"]},
                        "intercept": _DIST, "slope": _DIST,
                        "coefficients": {"type": "array", "items": _NUM, "minItems": 1},
                        "link": {"enum": ["identity", "logistic"]},
                        "theta": {"type": "array", "items": _NUM, "minItems": 1},
                        "focal": {"type": "integer", "minimum": 0},
                        "frozen": {"type": "array", "items": _NUM},
                        "thresholds": {"type": "array", "items": _NUM, "minItems": 1},
                        "masses": {"type": "array", "items": {"type": "number", "minimum": 0}},
                    },
                    "additionalProperties": False,
                },
                "covariates": {"type": "array", "items": _DIST},
            },
            "additionalProperties": False,
        },
        "design": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["passive", "active"]},
                "assignment_prob": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "signal": _SIGNAL, "low": _SIGNAL, "high": _SIGNAL,
            },
            "additionalProperties": False,
        },
        "specs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "spec"],
                "properties": {
                    "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                    "spec": {"enum": ["passive", "active", "conditional"]},
                    "interaction": {"enum": ["sign", "gap", "one_gap", "one_prior", "one_signal_prior"]},
                    "gap_normalization": {"enum": ["none", "percent"]},
                    "elasticity": {"type": "integer", "minimum": 1},
                    "correction": {"enum": ["sign_gap", "one", "sign_signal_spread"]},
                    "controls": {"type": "array", "items": {"type": "string"}},
                },
                "additionalProperties": False,
            },
        },
        "diagnostics": {
            "type": "object",
            "properties": {"bins": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def _path(parts) -> str:
    return ".".join(str(p) for p in parts) or "<root>"


def validate(cfg: dict) -> dict:
    """Schema plus semantic validation; raises :class:`ConfigError` with a field path."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        # the most specific error is the deepest one
        err = max(errors, key=lambda e: len(e.absolute_path))
        raise ConfigError(err.message, _path(err.absolute_path))
    pop, design = cfg["population"], cfg["design"]
    groups = PASSIVE_GROUPS if design["kind"] == "passive" else ACTIVE_GROUPS
    for g in groups:
        if g not in pop["rules"]:
            raise ConfigError(f"missing update rule for group {g!r}", f"population.rules.{g}")
    extra = sorted(set(pop["rules"]) - set(groups))
    if extra:
        raise ConfigError(f"rules for groups {extra} not in the design {groups}", "population.rules")
    if design["kind"] == "passive":
        if "signal" not in design:
            raise ConfigError("passive designs need a treatment signal", "design.signal")
    else:
        for key in ("low", "high"):
            if key not in design:
                raise ConfigError("active designs need low and high signals", f"design.{key}")
    prior = pop["prior"]
    if prior["kind"] == "gaussian":
        if "variance" not in prior:
            raise ConfigError("gaussian priors need a variance", "population.prior.variance")
        if "noise" not in pop["channel"]:
            raise ConfigError("gaussian agents need a perceived noise variance", "population.channel.noise")
    else:
        for key in ("sd", "states"):
            if key not in prior:
                raise ConfigError(f"grid priors need {key!r}", f"population.prior.{key}")
        for key in ("noise_sd", "signals"):
            if key not in pop["channel"]:
                raise ConfigError(f"grid agents need {key!r}", f"population.channel.{key}")
    k = len(pop.get("covariates", []))
    for key in ("signal", "low", "high"):
        sig = design.get(key)
        if sig and sig["kind"] == "covariate":
            if "name" not in sig:
                raise ConfigError("covariate signals need a name", f"design.{key}.name")
            if int(sig["name"][1:]) > k:
                raise ConfigError(f"unknown covariate {sig['name']!r}", f"design.{key}.name")
        if sig and sig["kind"] == "constant" and "value" not in sig:
            raise ConfigError("constant signals need a value", f"design.{key}.value")
    names = set()
    for j, spec in enumerate(cfg.get("specs", [])):
        if spec["name"] in names:
            raise ConfigError(f"duplicate spec name {spec['name']!r}", f"specs.{j}.name")
        names.add(spec["name"])
        kind = spec["spec"]
        if kind == "conditional":
            if "correction" not in spec:
                raise ConfigError("conditional specs need a correction", f"specs.{j}.correction")
        elif kind != design["kind"]:
            raise ConfigError(f"{kind} spec on a {design['kind']} design", f"specs.{j}.spec")
        for c in spec.get("controls", []):
            if not c.startswith("x") or not c[1:].isdigit() or not 1 <= int(c[1:]) <= k:
                raise ConfigError(f"unknown control {c!r}", f"specs.{j}.controls")
    return cfg


def load(path) -> tuple[dict, bytes]:
    """Read and validate a config file; returns ``(config, raw bytes)``."""
    raw = Path(path).read_bytes()
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return validate(cfg), raw


def config_hash(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def draw(spec, rng: np.random.Generator, n: int) -> np.ndarray:
    if isinstance(spec, (int, float)):
        return np.full(n, float(spec))
    d = spec["dist"]
    if d == "constant":
        return np.full(n, float(spec["value"]))
    if d == "normal":
        return rng.normal(spec.get("loc", 0.0), spec.get("scale", 1.0), n)
    if d == "uniform":
        return rng.uniform(spec.get("low", 0.0), spec.get("high", 1.0), n)
    if d == "lognormal":
        return rng.lognormal(spec.get("mean", 0.0), spec.get("sigma", 1.0), n)
    values = np.asarray(spec["values"], dtype=np.float64)
    probs = spec.get("probs")
    if probs is not None:
        probs = np.asarray(probs, dtype=np.float64)
        probs = probs / probs.sum()
    return rng.choice(values, size=n, p=probs)


def _grid(spec) -> np.ndarray:
    return np.linspace(spec["lo"], spec["hi"], spec["points"])


def feature_from_config(cfg: dict) -> Feature:
    return Feature(cfg.get("feature", {"kind": "mean"})["kind"])


def _rules(spec: dict, rng, n: int, where: str):
    """One rule per agent, drawing heterogeneous parameters."""
    kind = spec["kind"]
    params = {}
    for name in sorted(k for k in spec if k not in ("kind", "base")):
        params[name] = draw(spec[name], rng, n)
    try:
        if kind == "bayesian":
            return [Bayesian()] * n
        if kind == "none":
            return [NoUpdate()] * n
        if kind == "grether":
            return [Grether(float(a), float(b)) for a, b in zip(params.get("chi0", np.ones(n)),
                                                                params.get("chi1", np.ones(n)))]
        if kind == "anchored":
            if "tau" not in params:
                raise ConfigError("anchored rules need tau", f"{where}.tau")
            return [Anchored(float(t)) for t in params["tau"]]
        base = _rules(spec.get("base", {"kind": "none"}), rng, n, f"{where}.base")
        if "shift" not in params:
            raise ConfigError("drift rules need a shift", f"{where}.shift")
        return [Drift(float(s), b) for s, b in zip(params["shift"], base)]
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), where) from exc


def _actions(spec: dict, rng, n: int):
    kind = spec["kind"]
    if kind == "affine":
        a = draw(spec.get("intercept", 0.0), rng, n)
        b = draw(spec["slope"], rng, n)
        return [AffineInFeature(float(x), float(y)) for x, y in zip(a, b)]
    try:
        if kind == "link":
            fn = Link(MonotoneLink.logistic() if spec.get("link") == "logistic" else MonotoneLink.identity(),
                      tuple(spec["theta"]), int(spec.get("focal", 0)), tuple(spec.get("frozen", ())))
        elif kind == "polynomial":
            fn = Polynomial(tuple(spec["coefficients"]))
        else:
            fn = action_from_config(spec)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc), "population.action") from exc
    return [fn] * n


def _signal_fn(spec: dict):
    kind = spec["kind"]
    scale = float(spec.get("scale", 1.0))
    shift = float(spec.get("shift", 0.0))
    if kind == "constant":
        value = float(spec["value"])
        return lambda agent: value
    if kind == "covariate":
        j = int(spec["name"][1:]) - 1
        return lambda agent: scale * float(agent.covariates[j]) + shift
    return lambda agent: scale * float(_prior_mean(agent.prior)) + shift


def _prior_mean(prior):
    return prior.mean


def build(cfg: dict):
    """Construct ``(population, design, feature)`` from a validated config."""
    seed = int(cfg["seed"])
    rng = rng_stream(seed, POPULATION_STREAM)
    pop = cfg["population"]
    n = int(pop["n"])
    prior_cfg = pop["prior"]
    if prior_cfg["kind"] == "gaussian":
        means = draw(prior_cfg["mean"], rng, n)
        variances = draw(prior_cfg["variance"], rng, n)
        if np.any(variances <= 0):
            raise ConfigError("prior variances must be positive", "population.prior.variance")
        priors = [GaussianBelief(float(m), float(v)) for m, v in zip(means, variances)]
        noise = draw(pop["channel"]["noise"], rng, n)
        if np.any(noise <= 0):
            raise ConfigError("perceived noise variances must be positive", "population.channel.noise")
        channels = [float(x) for x in noise]
    else:
        states = _grid(prior_cfg["states"])
        means = draw(prior_cfg["mean"], rng, n)
        sds = draw(prior_cfg["sd"], rng, n)
        if np.any(sds <= 0):
            raise ConfigError("prior standard deviations must be positive", "population.prior.sd")
        priors = [GridBelief.discretized_normal(states, float(m), float(s)) for m, s in zip(means, sds)]
        family = SignalFamily.gaussian(states, _grid(pop["channel"]["signals"]), pop["channel"]["noise_sd"])
        channels = [family] * n
    rules = {g: _rules(pop["rules"][g], rng, n, f"population.rules.{g}") for g in sorted(pop["rules"])}
    actions = _actions(pop["action"], rng, n)
    cov_specs = pop.get("covariates", [])
    cov = np.column_stack([draw(c, rng, n) for c in cov_specs]) if cov_specs else np.zeros((n, 0))
    agents = [
        Agent(i, priors[i], {g: rules[g][i] for g in rules}, channels[i], actions[i], cov[i])
        for i in range(n)
    ]
    d = cfg["design"]
    p = float(d.get("assignment_prob", 0.5))
    if d["kind"] == "passive":
        arm = Passive(_signal_fn(d["signal"]))
    else:
        arm = Active(_signal_fn(d["low"]), _signal_fn(d["high"]))
    return agents, Design(arm, p, seed), feature_from_config(cfg)


def bundled_config_path(name: str) -> Path:
    path = Path(__file__).with_name("configs") / f"{name}.json"
    if not path.exists():
        raise ConfigError(f"no bundled config named {name!r}")
    return path
