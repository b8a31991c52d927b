"""YAML run configuration.

Schema (every key optional, defaults shown by ``ucs <cmd> --dump-config``)::

    kind: single | snr_sweep | nm_grid | sparsity_rank_grid | p_local
    grid: {N: [...], M: [...], R: [...], p: [...], rho: [...], snr_db: [...]}
    trials_per_cell: int
    master_seed: int
    prior: {sigma_x2: float}
    sensing_scale: float or null (null means 1/sqrt(N))
    se_enabled: bool
    se: {t_max: int}
    solver: {xi, t_max, damping, llr_clamp, precision_floor, seed,
             u_score, onsager, anneal, anneal_start, anneal_rate, bp_inner}
    instance: path to an .npz holding Y, A, gamma (used by ``solve`` only)

Unknown keys are errors. ``--set a.b=value`` overrides are parsed as YAML
scalars and applied after the file.
"""
from __future__ import annotations

from dataclasses import asdict

import yaml

from .errors import ConfigError, InputError
from .harness import ExperimentSpec
from .model import SolverConfig


def default_config():
    return {
        "kind": "single",
        "grid": {"N": [20], "M": [100], "R": [20], "p": [None], "rho": [0.0],
                 "snr_db": [40.0]},
        "trials_per_cell": 1,
        "master_seed": 0,
        "prior": {"sigma_x2": 1.0},
        "sensing_scale": None,
        "se_enabled": False,
        "se": {"t_max": 500},
        "solver": asdict(SolverConfig()),
        "instance": None,
    }


def _merge(base, update, path=""):
    for key, val in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            _merge(base[key], val, where + ".")
        else:
            base[key] = val
    return base


def load_config(path=None, overrides=()):
    cfg = default_config()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed YAML in {path!r}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        _merge(cfg, data)
    for item in overrides:
        apply_override(cfg, item)
    return cfg


def apply_override(cfg, item):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value of {key!r}: {exc}") from exc
    nested = value
    for part in reversed(parts):
        nested = {part: nested}
    _merge(cfg, nested)
    return cfg


def dump_config(cfg):
    return yaml.safe_dump(cfg, sort_keys=True)


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def solver_config(cfg):
    try:
        return SolverConfig(**cfg["solver"])
    except (TypeError, InputError) as exc:
        raise ConfigError(f"invalid solver config: {exc}") from exc


def spec_from_config(cfg):
    g = cfg["grid"]
    try:
        p_list = [None if p is None else int(p) for p in _as_list(g["p"])]
        return ExperimentSpec(
            kind=cfg["kind"],
            N=[int(v) for v in _as_list(g["N"])],
            M=[int(v) for v in _as_list(g["M"])],
            R=[int(v) for v in _as_list(g["R"])],
            p=p_list,
            rho=[float(v) for v in _as_list(g["rho"])],
            snr_db=[float(v) for v in _as_list(g["snr_db"])],
            trials_per_cell=int(cfg["trials_per_cell"]),
            master_seed=int(cfg["master_seed"]),
            sigma_x2=float(cfg["prior"]["sigma_x2"]),
            sensing_scale=(None if cfg["sensing_scale"] is None
                           else float(cfg["sensing_scale"])),
            solver=solver_config(cfg),
            se_enabled=bool(cfg["se_enabled"]),
            se_t_max=int(cfg["se"]["t_max"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc

