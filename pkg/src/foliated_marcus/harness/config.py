"""Experiment configuration: a single versioned TOML file.

Example::

    schema_version = 1
    example = "circle"
    experiment = "all"          # eta | gap | averaging | all
    seed = 42
    replicas = 500

    [circle]
    perturbation = "linear"     # linear | constant
    A = [[1.0, 0.0], [0.0, 1.0]]
    slow_noise = "radial"       # radial | additive | none

    [circle.fast]
    kind = "density"
    rate = 2.0
    distribution = "t"
    params = { df = 5 }
    moment_order = 5.0
    symmetric = true

    [averaging]
    epsilons = [0.1, 0.05, 0.02, 0.01]
    p = 2
    lambda = 0.8
    c = 0.5                     # or "calibrate"
    T = 0.5

Unknown keys are rejected so typos surface as errors.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np
from scipy import stats

from ..circle import CircleExample, default_fast_levy, default_slow_levy
from ..levy import DensityLevyMeasure, DiscreteLevyMeasure, LevyMeasureSpec, TruncatedStableLevyMeasure

SCHEMA_VERSION = 1
EXPERIMENTS = ("eta", "gap", "averaging", "all")
CHECKS = ("eta_slope", "gap_slope", "averaging_monotone", "averaging_envelope", "triangle")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field or line."""


@dataclass(frozen=True)
class EtaSection:
    t_grid: tuple = (5.0, 10.0, 20.0, 50.0, 100.0)
    p: float = 2.0
    replicas: Optional[int] = None
    mesh_dt: float = 1.0


@dataclass(frozen=True)
class GapSection:
    epsilons: tuple = (0.1, 0.05, 0.025)
    T: float = 1.0
    p: float = 2.0
    replicas: Optional[int] = None
    mesh_dt: float = 0.01


@dataclass(frozen=True)
class CalibrationSection:
    eps: float = 0.1
    T_values: tuple = (1.0, 2.0, 4.0, 8.0)
    replicas: Optional[int] = None
    mesh_dt: float = 0.05


@dataclass(frozen=True)
class AveragingSection:
    epsilons: tuple = (0.1, 0.05, 0.02, 0.01)
    p: float = 2.0
    lam: float = 0.8
    c: Any = 0.5
    T: float = 0.5
    coupling: str = "synchronous"
    mesh_points: int = 2048
    replicas: Optional[int] = None

    @property
    def calibrate(self) -> bool:
        return self.c == "calibrate"


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description."""

    example: str = "circle"
    experiment: str = "all"
    seed: int = 42
    replicas: int = 200
    workers: int = 1
    output_dir: str = "results"
    circle: dict = field(default_factory=dict)
    eta: EtaSection = field(default_factory=EtaSection)
    gap: GapSection = field(default_factory=GapSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    averaging: AveragingSection = field(default_factory=AveragingSection)
    tol: float = 1e-10
    fast_threshold: Optional[float] = None
    slow_threshold: Optional[float] = None
    checks: tuple = CHECKS
    schema_version: int = SCHEMA_VERSION

    def replicas_for(self, section: str) -> int:
        own = getattr(self, section).replicas
        return self.replicas if own is None else own

    def to_dict(self, include_runtime: bool = False) -> dict:
        d = asdict(self)
        if not include_runtime:
            d.pop("workers")
            d.pop("output_dir")
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=list)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def build_example(self) -> CircleExample:
        return circle_from_dict(self.circle)


def _err(path: str, msg: str) -> ConfigError:
    return ConfigError(f"field '{path}': {msg}")


def _take(table: dict, path: str, allowed: dict) -> dict:
    """Pop known keys with type coercion; reject leftovers."""
    if not isinstance(table, dict):
        raise _err(path, "expected a table")
    unknown = set(table) - set(allowed)
    if unknown:
        raise _err(f"{path}.{sorted(unknown)[0]}" if path else sorted(unknown)[0], "unknown key")
    out = {}
    for key, kind in allowed.items():
        if key not in table:
            continue
        where = f"{path}.{key}" if path else key
        out[key] = _coerce(table[key], kind, where)
    return out


def _coerce(value, kind, where):
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _err(where, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise _err(where, "must be finite")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise _err(where, f"expected an integer, got {value!r}")
        return int(value)
    if kind == "str":
        if not isinstance(value, str):
            raise _err(where, f"expected a string, got {value!r}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise _err(where, f"expected true or false, got {value!r}")
        return value
    if kind == "floats":
        if not isinstance(value, list) or not value:
            raise _err(where, "expected a nonempty list of numbers")
        return tuple(_coerce(v, "float", f"{where}[{i}]") for i, v in enumerate(value))
    if kind == "strs":
        if not isinstance(value, list):
            raise _err(where, "expected a list of strings")
        return tuple(_coerce(v, "str", f"{where}[{i}]") for i, v in enumerate(value))
    if kind == "any":
        return value
    raise AssertionError(kind)


def levy_from_dict(d: dict, path: str, dim: int) -> LevyMeasureSpec:
    """Build a Lévy measure from a tagged record (``kind`` = discrete | density | truncated_stable)."""
    if not isinstance(d, dict) or "kind" not in d:
        raise _err(path, "a Lévy measure needs a 'kind'")
    kind = d["kind"]
    if kind == "discrete":
        t = _take(d, path, {"kind": "str", "atoms": "any"})
        atoms = t.get("atoms")
        if not isinstance(atoms, list) or not atoms:
            raise _err(f"{path}.atoms", "expected a nonempty list of {mass, vector} records")
        masses, vectors = [], []
        for i, a in enumerate(atoms):
            at = _take(a, f"{path}.atoms[{i}]", {"mass": "float", "vector": "floats"})
            if "mass" not in at or "vector" not in at:
                raise _err(f"{path}.atoms[{i}]", "needs mass and vector")
            if len(at["vector"]) != dim:
                raise _err(f"{path}.atoms[{i}].vector", f"expected dimension {dim}")
            masses.append(at["mass"])
            vectors.append(at["vector"])
        try:
            return DiscreteLevyMeasure(np.array(masses), np.array(vectors))
        except ValueError as exc:
            raise _err(f"{path}.atoms", str(exc)) from None
    if dim != 1:
        raise _err(f"{path}.kind", f"kind {kind!r} is one-dimensional; use 'discrete' for dimension {dim}")
    if kind == "density":
        t = _take(
            d,
            path,
            {"kind": "str", "rate": "float", "distribution": "str", "params": "any", "moment_order": "float", "symmetric": "bool"},
        )
        name = t.get("distribution")
        dist = getattr(stats, name or "", None)
        if dist is None or not hasattr(dist, "ppf"):
            raise _err(f"{path}.distribution", f"unknown scipy.stats distribution {name!r}")
        params = t.get("params", {})
        if not isinstance(params, dict):
            raise _err(f"{path}.params", "expected a table")
        try:
            law = dist(**params)
        except TypeError as exc:
            raise _err(f"{path}.params", str(exc)) from None
        if "rate" not in t or t["rate"] < 0:
            raise _err(f"{path}.rate", "a nonnegative rate is required")
        return DensityLevyMeasure(
            rate=t["rate"],
            law=law,
            declared_order=t.get("moment_order", math.inf),
            is_symmetric=t.get("symmetric", False),
        )
    if kind == "truncated_stable":
        t = _take(
            d, path, {"kind": "str", "alpha": "float", "scale": "float", "delta_inner": "float", "tail_index": "float"}
        )
        if "alpha" not in t:
            raise _err(f"{path}.alpha", "required")
        try:
            return TruncatedStableLevyMeasure(
                t["alpha"], t.get("scale", 1.0), t.get("delta_inner", 0.0), t.get("tail_index")
            )
        except ValueError as exc:
            raise _err(path, str(exc)) from None
    raise _err(f"{path}.kind", f"unknown kind {kind!r}")


def circle_from_dict(d: dict) -> CircleExample:
    t = _take(
        d,
        "circle",
        {
            "perturbation": "str",
            "A": "any",
            "K": "floats",
            "slow_noise": "str",
            "radial_k": "floats",
            "x0": "floats",
            "fast": "any",
            "slow": "any",
        },
    )
    kw = {}
    if "perturbation" in t:
        kw["perturbation"] = {"linear": "linear", "constant": "constant"}.get(t["perturbation"])
        if kw["perturbation"] is None:
            raise _err("circle.perturbation", "expected 'linear' or 'constant'")
    if "A" in t:
        A = np.asarray(t["A"], dtype=float) if isinstance(t["A"], list) else None
        if A is None or A.shape != (2, 2):
            raise _err("circle.A", "expected a 2x2 matrix [[a, b], [c, d]]")
        kw["A"] = A
    if "K" in t:
        if len(t["K"]) != 2:
            raise _err("circle.K", "expected two entries")
        kw["K_vec"] = np.array(t["K"])
    if "slow_noise" in t:
        if t["slow_noise"] not in ("radial", "additive", "none"):
            raise _err("circle.slow_noise", "expected 'radial', 'additive' or 'none'")
        kw["slow_kind"] = t["slow_noise"]
    for key, name in (("radial_k", "radial_k"), ("x0", "x0")):
        if key in t:
            if len(t[key]) != 2:
                raise _err(f"circle.{key}", "expected two entries")
            kw[name] = np.array(t[key])
    if "x0" in kw and not np.any(kw["x0"]):
        raise _err("circle.x0", "must differ from the origin")
    kw["fast"] = levy_from_dict(t["fast"], "circle.fast", 1) if "fast" in t else default_fast_levy()
    kw["slow"] = levy_from_dict(t["slow"], "circle.slow", 2) if "slow" in t else default_slow_levy()
    return CircleExample(**kw)


def _decreasing_unit(eps, where):
    if any(not 0.0 < e < 1.0 for e in eps):
        raise _err(where, "every eps must lie in (0, 1)")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise _err(where, "eps values must be strictly decreasing")


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a decoded TOML document."""
    top = _take(
        data,
        "",
        {
            "schema_version": "int",
            "example": "str",
            "experiment": "str",
            "seed": "int",
            "replicas": "int",
            "workers": "int",
            "output_dir": "str",
            "circle": "any",
            "eta": "any",
            "gap": "any",
            "calibration": "any",
            "averaging": "any",
            "numerics": "any",
            "checks": "any",
        },
    )
    if top.get("schema_version") != SCHEMA_VERSION:
        raise _err("schema_version", f"must be {SCHEMA_VERSION}")
    if top.get("example", "circle") != "circle":
        raise _err("example", "only 'circle' is available")
    if top.get("experiment", "all") not in EXPERIMENTS:
        raise _err("experiment", f"expected one of {EXPERIMENTS}")
    for key in ("seed", "replicas", "workers"):
        if key in top and top[key] < (0 if key == "seed" else 1):
            raise _err(key, "out of range")
    kw = {k: top[k] for k in ("experiment", "seed", "replicas", "workers", "output_dir") if k in top}

    circle = top.get("circle", {})
    example = circle_from_dict(circle)
    kw["circle"] = circle

    e = _take(top.get("eta", {}), "eta", {"t_grid": "floats", "p": "float", "replicas": "int", "mesh_dt": "float"})
    eta = EtaSection(**e)
    if any(t <= 0 for t in eta.t_grid) or list(eta.t_grid) != sorted(set(eta.t_grid)):
        raise _err("eta.t_grid", "times must be positive and strictly increasing")
    if eta.p < 1:
        raise _err("eta.p", "must be at least 1")
    kw["eta"] = eta

    g = _take(top.get("gap", {}), "gap", {"epsilons": "floats", "T": "float", "p": "float", "replicas": "int", "mesh_dt": "float"})
    gap = GapSection(**g)
    _decreasing_unit(gap.epsilons, "gap.epsilons")
    if gap.p < 2:
        raise _err("gap.p", "must be at least 2")
    if gap.T <= 0:
        raise _err("gap.T", "must be positive")
    kw["gap"] = gap

    cal = _take(
        top.get("calibration", {}),
        "calibration",
        {"eps": "float", "T_values": "floats", "replicas": "int", "mesh_dt": "float"},
    )
    calibration = CalibrationSection(**cal)
    if not 0 < calibration.eps < 1:
        raise _err("calibration.eps", "must lie in (0, 1)")
    kw["calibration"] = calibration

    a = _take(
        top.get("averaging", {}),
        "averaging",
        {
            "epsilons": "floats",
            "p": "float",
            "lambda": "float",
            "c": "any",
            "T": "float",
            "coupling": "str",
            "mesh_points": "int",
            "replicas": "int",
        },
    )
    if "lambda" in a:
        a["lam"] = a.pop("lambda")
    avg = AveragingSection(**a)
    _decreasing_unit(avg.epsilons, "averaging.epsilons")
    if not 0.0 < avg.T <= 1.0:
        raise _err("averaging.T", "must lie in (0, 1]")
    if avg.p < 2:
        raise _err("averaging.p", "must be at least 2 (use [eta] for p in [1, 2))")
    if not 0.0 < avg.lam < 1.0:
        raise _err("averaging.lambda", "must lie in (0, 1)")
    if not (avg.c == "calibrate" or (isinstance(avg.c, (int, float)) and not isinstance(avg.c, bool) and avg.c > 0)):
        raise _err("averaging.c", "expected a positive number or 'calibrate'")
    if avg.c != "calibrate":
        avg = AveragingSection(**{**asdict(avg), "c": float(avg.c)})
    if avg.coupling not in ("synchronous", "physical"):
        raise _err("averaging.coupling", "expected 'synchronous' or 'physical'")
    if avg.coupling == "synchronous" and example.slow_kind == "additive":
        raise _err("averaging.coupling", "synchronous coupling needs slow_noise = 'radial' or 'none'")
    if avg.mesh_points < 2:
        raise _err("averaging.mesh_points", "must be at least 2")
    kw["averaging"] = avg

    n = _take(top.get("numerics", {}), "numerics", {"tol": "float", "fast_threshold": "float", "slow_threshold": "float"})
    if n.get("tol", 1e-10) <= 0:
        raise _err("numerics.tol", "must be positive")
    for key in ("fast_threshold", "slow_threshold"):
        if n.get(key, 0.0) < 0:
            raise _err(f"numerics.{key}", "must be nonnegative")
    kw.update(n)

    if "checks" in top:
        ch = _take(top["checks"], "checks", {"enabled": "strs"})
        bad = [c for c in ch.get("enabled", ()) if c not in CHECKS]
        if bad:
            raise _err("checks.enabled", f"unknown check {bad[0]!r}; known: {CHECKS}")
        kw["checks"] = ch.get("enabled", ())
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    """Read and validate a TOML config file.

    Raises:
        ConfigError: with the line (syntax errors) or field (schema errors).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data)
