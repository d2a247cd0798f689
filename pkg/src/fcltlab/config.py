"""YAML experiment configs: schema, validation and content hash.

A config is a mapping with ``schema_version: 1``, a mandatory ``seed``, a
``model`` section and optional ``blocks``, ``fclt``, ``mixing``, ``delta``
and ``subexp`` sections.  ``n`` may be a single length or a list; each
command runs once per length.  Everything is checked against the owning
module's preconditions before any computation starts.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ._numerics import PreconditionError
from .models import (INNOVATIONS, MarkovArrayModel, MDepArrayModel, common_factor_model,
                     iid_model, ma1_model, two_state_chain)
from .subexp import SubexpSpec

SCHEMA_VERSION = 1
MODEL_KINDS = ("iid", "ma1", "chain", "common_factor", "markov", "mdep")
COMMON_FACTOR_MAX_N = 5000
SECTIONS = {"schema_version", "seed", "n", "model", "blocks", "fclt", "mixing", "delta",
            "subexp", "output_dir"}


class ConfigError(PreconditionError):
    """Malformed or out-of-range configuration value."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _pos_int(value, name: str, minimum: int = 1) -> int:
    _require(isinstance(value, int) and not isinstance(value, bool) and value >= minimum,
             f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def _pos_float(value, name: str) -> float:
    _require(isinstance(value, (int, float)) and not isinstance(value, bool)
             and math.isfinite(value) and value > 0, f"{name} must be a positive number, got {value!r}")
    return float(value)


def build_model(spec: dict, n: int):
    """Model for one row length from a ``model`` section."""
    kind = spec.get("kind")
    if kind == "iid":
        return iid_model(n, spec.get("innovation", "gaussian"))
    if kind == "ma1":
        return ma1_model(n, spec.get("innovation", "gaussian"))
    if kind == "chain":
        return two_state_chain(n, float(spec.get("flip", 0.3)))
    if kind == "common_factor":
        _require(n <= COMMON_FACTOR_MAX_N, f"common_factor rows are capped at n = {COMMON_FACTOR_MAX_N}")
        return common_factor_model(n)
    if kind == "markov":
        return MarkovArrayModel(n, spec["initial"], spec["transitions"], spec["observables"])
    if kind == "mdep":
        return MDepArrayModel(n, spec["coefficients"], spec.get("innovation", "gaussian"),
                              spec.get("bernoulli_p", 0.5))
    raise ConfigError(f"model.kind must be one of {MODEL_KINDS}, got {kind!r}")


def _grid_from(section: dict) -> list:
    if "grid" in section:
        g = [float(t) for t in section["grid"]]
    else:
        step = _pos_float(section.get("grid_step", 0.05), "fclt.grid_step")
        count = round(1 / step)
        _require(abs(count * step - 1) < 1e-9, "fclt.grid_step must divide 1")
        g = [k / count for k in range(count + 1)]
    _require(len(g) > 0 and all(0 <= t <= 1 for t in g) and g == sorted(g),
             "fclt.grid must be sorted values in [0, 1]")
    return g


@dataclass
class ExperimentConfig:
    seed: int
    n_list: list
    model: dict
    blocks: dict | None = None
    fclt: dict | None = None
    mixing: dict | None = None
    delta: dict | None = None
    subexp: dict | None = None
    output_dir: str = "out"
    schema_version: int = SCHEMA_VERSION
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def header(self) -> str:
        return f"# config_sha256={self.hash} seed={self.seed}"

    def models(self):
        return [(n, build_model(self.model, n)) for n in self.n_list]

    def subexp_spec(self) -> SubexpSpec | None:
        if not self.blocks or self.blocks.get("scheme", "rho") != "rho":
            return None
        return SubexpSpec.from_dict(self.blocks.get("subexp", {"family": "power", "q": 1.0}))


def config_hash(data: dict) -> str:
    blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _validate_blocks(sec: dict) -> dict:
    sec = dict(sec)
    scheme = sec.setdefault("scheme", "rho")
    _require(scheme in ("rho", "projective"), f"blocks.scheme must be 'rho' or 'projective', got {scheme!r}")
    A = _pos_float(sec.get("A", 8.0), "blocks.A")
    _require(A > 1, "blocks.A must exceed 1")
    sec["A"] = A
    sec["pair_budget"] = _pos_int(sec.get("pair_budget", 500), "blocks.pair_budget", 0)
    sec["strict_hypotheses"] = bool(sec.get("strict_hypotheses", False))
    if scheme == "rho":
        sub = sec.setdefault("subexp", {"family": "power", "q": 1.0})
        try:
            SubexpSpec.from_dict(sub)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"blocks.subexp: {exc}") from exc
    else:
        sec["eps"] = _pos_float(sec.get("eps"), "blocks.eps")
        sec["r"] = _pos_int(sec.get("r"), "blocks.r", 0)
        _require(A > sec["r"], f"blocks.A = {A} must exceed r = {sec['r']}")
    return sec


def _validate_fclt(sec: dict) -> dict:
    sec = dict(sec)
    sec["reps"] = _pos_int(sec.get("reps", 2000), "fclt.reps")
    sec["grid"] = _grid_from(sec)
    sec.pop("grid_step", None)
    sec["ks_tol"] = _pos_float(sec.get("ks_tol", 0.05), "fclt.ks_tol")
    sec["cov_tol"] = _pos_float(sec.get("cov_tol", 0.06), "fclt.cov_tol")
    eps = sec.get("eps_list", [0.1])
    _require(isinstance(eps, list) and all(isinstance(e, (int, float)) and e > 0 for e in eps),
             "fclt.eps_list must be a list of positive numbers")
    sec["eps_list"] = [float(e) for e in eps]
    sec["lindeberg_reps"] = _pos_int(sec.get("lindeberg_reps", sec["reps"]), "fclt.lindeberg_reps")
    sec["write_ensemble"] = bool(sec.get("write_ensemble", True))
    return sec


def _validate_mixing(sec: dict, n_min: int) -> dict:
    sec = dict(sec)
    lags = sec.get("lags", list(range(1, min(10, n_min - 1) + 1)))
    _require(isinstance(lags, list) and len(lags) > 0
             and all(isinstance(k, int) and 1 <= k < n_min for k in lags),
             f"mixing.lags must be integers in 1..{n_min - 1}")
    sec["lags"] = lags
    sec["scope"] = sec.get("scope", "single")
    _require(sec["scope"] in ("single", "window"), "mixing.scope must be 'single' or 'window'")
    sec["window"] = _pos_int(sec.get("window", 2), "mixing.window")
    return sec


def _validate_delta(sec: dict) -> dict:
    sec = dict(sec)
    m = sec.get("m", [1, 2, 3])
    _require(isinstance(m, list) and all(isinstance(v, int) and v >= 0 for v in m),
             "delta.m must be a list of non-negative integers")
    sec["m"] = m
    sec["window"] = _pos_int(sec.get("window", 64), "delta.window")
    sec["q"] = _pos_float(sec.get("q", 4.0), "delta.q")
    _require(sec["q"] > 2, "delta.q must exceed 2")
    sec["C_q"] = _pos_float(sec.get("C_q", 4.0), "delta.C_q")
    sec["A_q"] = _pos_float(sec.get("A_q", 1.0), "delta.A_q")
    return sec


def _validate_subexp(sec: dict) -> dict:
    sec = dict(sec)
    specs = sec.get("specs")
    _require(isinstance(specs, list) and len(specs) > 0, "subexp.specs must be a non-empty list")
    for s in specs:
        try:
            SubexpSpec.from_dict(s)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"subexp.specs entry {s!r}: {exc}") from exc
    sec["p_list"] = [float(p) for p in sec.get("p_list", [3, 4])]
    _require(all(p > 2 for p in sec["p_list"]), "subexp.p_list entries must exceed 2")
    sec["u_list"] = [int(u) for u in sec.get("u_list", [100, 1000, 10000, 100000])]
    _require(all(u >= 1 for u in sec["u_list"]), "subexp.u_list entries must be >= 1")
    sec["max_spread"] = _pos_float(sec.get("max_spread", 3.0), "subexp.max_spread")
    return sec


def validate(data: dict, seed_override: int | None = None) -> ExperimentConfig:
    """Check every section; raises :class:`ConfigError` on the first problem."""
    _require(isinstance(data, dict), "config must be a mapping")
    unknown = set(data) - SECTIONS
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")
    _require(data.get("schema_version") == SCHEMA_VERSION,
             f"schema_version must be {SCHEMA_VERSION}, got {data.get('schema_version')!r}")
    data = dict(data)
    if seed_override is not None:
        data["seed"] = seed_override
    _require("seed" in data, "seed is mandatory")
    seed = data["seed"]
    _require(isinstance(seed, int) and not isinstance(seed, bool) and 0 <= seed < 2**64,
             f"seed must be an unsigned 64-bit integer, got {seed!r}")

    model = data.get("model")
    _require(isinstance(model, dict), "model section is required")
    _require(model.get("kind") in MODEL_KINDS, f"model.kind must be one of {MODEL_KINDS}")
    if "innovation" in model:
        _require(model["innovation"] in INNOVATIONS, f"model.innovation must be one of {INNOVATIONS}")
    n = data.get("n", model.get("n"))
    n_list = n if isinstance(n, list) else [n]
    n_list = [_pos_int(v, "n", 2) for v in n_list]

    cfg = ExperimentConfig(seed=int(seed), n_list=n_list, model=dict(model),
                           output_dir=str(data.get("output_dir", "out")))
    # building validates transition matrices, coefficients and sizes
    for v in n_list:
        try:
            build_model(model, v)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"model: missing or bad field {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from exc

    if data.get("blocks") is not None:
        cfg.blocks = _validate_blocks(data["blocks"])
    if data.get("fclt") is not None:
        cfg.fclt = _validate_fclt(data["fclt"])
    if data.get("mixing") is not None:
        cfg.mixing = _validate_mixing(data["mixing"], min(n_list))
    if data.get("delta") is not None:
        cfg.delta = _validate_delta(data["delta"])
    if data.get("subexp") is not None:
        cfg.subexp = _validate_subexp(data["subexp"])
    cfg.raw = _canonical(data)
    return cfg


def _canonical(data):
    if isinstance(data, dict):
        return {str(k): _canonical(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [_canonical(v) for v in data]
    if isinstance(data, np.generic):
        return data.item()
    return data


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return validate(data, seed_override)
