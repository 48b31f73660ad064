"""Experiment configuration: strict TOML parsing, defaults and validation.

Layout::

    experiment = "hardrod_msd"
    replicas = 200
    seed = 1
    output_dir = "runs/hardrod"

    [model.sampler]      # SamplerSpec fields (kind, intensity, n_particles, ...)
    [model.potential]    # PotentialSpec fields (kind, beta, range, amplitude)
    [integrator]         # IntegratorSpec fields
    [analysis]           # experiment-specific post-processing

Unknown keys anywhere are errors.  ``box_length`` defaults to
``n_particles / intensity``.
"""
from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .dynamics import IntegratorSpec
from .errors import ConfigError
from .models import POTENTIAL_KINDS, SAMPLER_KINDS, PotentialSpec, SamplerSpec

EXPERIMENTS = ("msd_scan", "dyson_msd", "hardrod_msd", "free_baseline", "corrector_solve", "telescoping",
               "env_consistency")

# analysis keys and their defaults
ANALYSIS_DEFAULTS = {
    "fit_model": "linear",
    "fit_window": [1.0, 10.0],
    "slope_centers": [],
    "n_log_points": 0,
    "paths": "tagged",
    "frame": "lab",
    "tags_per_replica": 1,
    "periodic": True,
    "gaussianity_times": [],
    "n_samples": 1000,
    "n_list": [1, 2, 4, 8, 16, 32, 64],
    "basis_centers": [0.5, 1.0, 1.5, 2.0, 3.0],
    "basis_width": 0.5,
    "basis_parity": "even",
    "ridge": 0.0,
    "dt_levels": [1e-4, 5e-5],
    "reference_ratio": 16,
    "n_env": 5,
}
_ANALYSIS_CHOICES = {
    "fit_model": ("power_law", "log_linear", "linear"),
    "paths": ("tagged", "all"),
    "frame": ("lab", "com"),
    "basis_parity": ("even", "odd", "both"),
}


@dataclass
class ExperimentConfig:
    experiment: str
    sampler: SamplerSpec
    potential: PotentialSpec
    integrator: IntegratorSpec
    replicas: int = 1
    seed: int = 0
    output_dir: str = "out"
    analysis: dict = field(default_factory=lambda: dict(ANALYSIS_DEFAULTS))

    def to_dict(self) -> dict:
        integ = dataclasses.asdict(self.integrator)
        return {
            "experiment": self.experiment,
            "replicas": self.replicas,
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "model": {"sampler": dataclasses.asdict(self.sampler),
                      "potential": dataclasses.asdict(self.potential)},
            "integrator": integ,
            "analysis": dict(self.analysis),
        }

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _check_keys(table: dict, allowed, where: str):
    for k in table:
        if k not in allowed:
            name = f"{where}.{k}" if where else k
            raise ConfigError(f"unknown key {name!r}", key=name)


def _typed(value, kind, key):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number", key=key)
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer", key=key)
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false", key=key)
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string", key=key)
        return value
    return value


def _spec_from_table(cls, table, where, checks):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _check_keys(table, fields, where)
    kw = {}
    for name, value in table.items():
        kind = {"float": float, "int": int, "str": str, "bool": bool}[fields[name].type] \
            if fields[name].type in ("float", "int", "str", "bool") else None
        kw[name] = _typed(value, kind, f"{where}.{name}")
    for name, (ok, msg) in checks.items():
        if name in kw and not ok(kw[name]):
            raise ConfigError(f"{where}.{name}: {msg}", key=f"{where}.{name}")
    return kw


_INTEGRATOR_CHECKS = {
    "dt": (lambda v: v > 0, "must be positive"),
    "t_end": (lambda v: v > 0, "must be positive"),
    "scheme": (lambda v: v in ("euler_maruyama", "adaptive_euler"), "must be euler_maruyama or adaptive_euler"),
    "drift_cutoff": (lambda v: v > 0, "must be positive"),
    "min_gap_guard": (lambda v: v >= 0, "must be non-negative"),
    "record_stride": (lambda v: v >= 1, "must be >= 1"),
}
_SAMPLER_CHECKS = {
    "kind": (lambda v: v in SAMPLER_KINDS, f"must be one of {SAMPLER_KINDS}"),
    "intensity": (lambda v: v > 0, "must be positive"),
    "n_particles": (lambda v: v >= 1, "must be >= 1"),
    "box_length": (lambda v: v > 0, "must be positive"),
    "mcmc_burn_in": (lambda v: v >= 0, "must be >= 0"),
    "thinning": (lambda v: v >= 1, "must be >= 1"),
    "rod_length": (lambda v: v >= 0, "must be non-negative"),
}
_POTENTIAL_CHECKS = {
    "kind": (lambda v: v in POTENTIAL_KINDS, f"must be one of {POTENTIAL_KINDS}"),
    "beta": (lambda v: v >= 0, "must be non-negative"),
    "range": (lambda v: v >= 0, "must be non-negative"),
    "amplitude": (lambda v: v >= 0, "must be non-negative"),
}


def _build(cls, kw, where):
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}", key=where) from None


def _analysis(table):
    _check_keys(table, ANALYSIS_DEFAULTS, "analysis")
    out = dict(ANALYSIS_DEFAULTS)
    for k, v in table.items():
        key = f"analysis.{k}"
        default = ANALYSIS_DEFAULTS[k]
        if isinstance(default, list):
            if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
                raise ConfigError(f"{key} must be a list of numbers", key=key)
            v = [type(default[0])(x) if default else float(x) for x in v] if k != "n_list" else [int(x) for x in v]
        elif isinstance(default, bool):
            v = _typed(v, bool, key)
        elif isinstance(default, int):
            v = _typed(v, int, key)
        elif isinstance(default, float):
            v = _typed(v, float, key)
        else:
            v = _typed(v, str, key)
        if k in _ANALYSIS_CHOICES and v not in _ANALYSIS_CHOICES[k]:
            raise ConfigError(f"{key} must be one of {_ANALYSIS_CHOICES[k]}", key=key)
        out[k] = v
    if len(out["fit_window"]) != 2 or not out["fit_window"][1] > out["fit_window"][0]:
        raise ConfigError("analysis.fit_window must be [t_lo, t_hi] with t_lo < t_hi", key="analysis.fit_window")
    if any(n < 1 for n in out["n_list"]):
        raise ConfigError("analysis.n_list entries must be >= 1", key="analysis.n_list")
    if out["n_samples"] < 1 or out["tags_per_replica"] < 1 or out["n_env"] < 1:
        raise ConfigError("analysis counts must be >= 1", key="analysis")
    return out


def from_dict(data: dict) -> ExperimentConfig:
    _check_keys(data, ("experiment", "replicas", "seed", "output_dir", "model", "integrator", "analysis"), "")
    if "experiment" not in data:
        raise ConfigError("missing key 'experiment'", key="experiment")
    exp = _typed(data["experiment"], str, "experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}", key="experiment")
    replicas = _typed(data.get("replicas", 1), int, "replicas")
    if replicas < 1:
        raise ConfigError("replicas must be >= 1", key="replicas")
    seed = _typed(data.get("seed", 0), int, "seed")
    if seed < 0:
        raise ConfigError("seed must be non-negative", key="seed")
    out_dir = _typed(data.get("output_dir", "out"), str, "output_dir")

    model = data.get("model", {})
    if not isinstance(model, dict):
        raise ConfigError("model must be a table", key="model")
    _check_keys(model, ("sampler", "potential"), "model")
    skw = _spec_from_table(SamplerSpec, model.get("sampler", {}), "model.sampler", _SAMPLER_CHECKS)
    if "box_length" not in skw:
        skw["box_length"] = skw.get("n_particles", 100) / skw.get("intensity", 1.0)
    sampler = _build(SamplerSpec, skw, "model.sampler")
    pkw = _spec_from_table(PotentialSpec, model.get("potential", {}), "model.potential", _POTENTIAL_CHECKS)
    potential = _build(PotentialSpec, pkw, "model.potential")
    ikw = _spec_from_table(IntegratorSpec, data.get("integrator", {}), "integrator", _INTEGRATOR_CHECKS)
    integrator = _build(IntegratorSpec, ikw, "integrator")
    analysis = _analysis(data.get("analysis", {}))

    cfg = ExperimentConfig(exp, sampler, potential, integrator, replicas, seed, out_dir, analysis)
    _cross_checks(cfg)
    return cfg


def _cross_checks(cfg: ExperimentConfig):
    half = 0.5 * cfg.sampler.box_length
    periodic = cfg.analysis["periodic"]
    if periodic and math.isfinite(cfg.integrator.drift_cutoff) and cfg.integrator.drift_cutoff > half:
        raise ConfigError(f"integrator.drift_cutoff exceeds box_length / 2 = {half:g}", key="integrator.drift_cutoff")
    if cfg.experiment == "dyson_msd" and cfg.potential.beta < 1:
        raise ConfigError("model.potential.beta must be >= 1 for Dyson dynamics", key="model.potential.beta")
    if cfg.experiment in ("msd_scan", "env_consistency") and cfg.potential.kind in ("log", "hard_rod"):
        raise ConfigError(f"{cfg.experiment} needs a free or smooth_compact potential", key="model.potential.kind")
    if (cfg.experiment == "msd_scan" and periodic and cfg.potential.kind == "smooth_compact"
            and cfg.potential.range > half):
        raise ConfigError("model.potential.range exceeds box_length / 2", key="model.potential.range")


def loads(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from None
    return from_dict(data)


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return loads(text)
