"""Line-oriented `key = value` configuration files with [sections].

The schema is strict: unknown sections or keys raise, values are parsed by
per-key parsers (numbers may use the dyadic shorthand `2^-6`).  Profiles
provide baseline run sizes; file values override the profile and CLI flags
override the file.  See docs/config.md for the documented schema.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .errors import ConfigurationError
from .experiments import SimConfig

__all__ = ["parse_number", "parse_config_text", "load_config", "PROFILES"]

PROFILES = {
    "desk": {},  # the SimConfig defaults: n=8, eps 2^-3..2^-8, 256 paths, T=1
    "full": {"paths": 1024, "n_outputs": 33},
}


def parse_number(s: str) -> float:
    s = s.strip()
    if "^" in s:
        base, expo = s.split("^", 1)
        return float(base) ** float(expo)
    return float(s)


def _num_list(s: str) -> tuple:
    return tuple(parse_number(tok) for tok in s.split(",") if tok.strip())


def _int_list(s: str) -> tuple:
    return tuple(int(parse_number(tok)) for tok in s.split(",") if tok.strip())


def _str_list(s: str) -> tuple:
    return tuple(tok.strip() for tok in s.split(",") if tok.strip())


def _dt(s: str):
    s = s.strip()
    if s == "default" or s.startswith("default/") or s.startswith("eps/"):
        return s
    return parse_number(s)


_MODEL_KEYS = {
    "name": str,
    "c": _num_list,
    "f0": _num_list,
    "k_diag": _num_list,
    "m": lambda s: int(parse_number(s)),
    "eta": parse_number,
    "c1": parse_number,
}

_RUN_KEYS = {
    "n": lambda s: int(parse_number(s)),
    "epsilons": _num_list,
    "t": parse_number,
    "dt": _dt,
    "gammas": _num_list,
    "qs": _num_list,
    "paths": lambda s: int(parse_number(s)),
    "seed": lambda s: int(parse_number(s)),
    "threads": lambda s: int(parse_number(s)),
    "profile": str,
    "n_outputs": lambda s: int(parse_number(s)),
    "n_list": _int_list,
    "galerkin_epsilon": parse_number,
    "phis": _str_list,
}

_OUTPUT_KEYS = {"dir": str}

_SECTIONS = {"model": _MODEL_KEYS, "run": _RUN_KEYS, "output": _OUTPUT_KEYS}


def parse_config_text(text: str) -> dict:
    """Parse config text into {"model": {...}, "run": {...}, "output": {...}}."""
    out: dict = {"model": {}, "run": {}, "output": {}}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise ConfigurationError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value, got {raw!r}")
        if section is None:
            raise ConfigurationError(f"line {lineno}: key before any [section]")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        schema = _SECTIONS[section]
        if key not in schema:
            raise ConfigurationError(
                f"line {lineno}: unknown key {key!r} in [{section}] "
                f"(known: {sorted(schema)})"
            )
        try:
            out[section][key] = schema[key](value.strip())
        except ConfigurationError:
            raise
        except Exception as exc:
            raise ConfigurationError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return out


def _to_simconfig(parsed: dict, overrides: dict | None = None) -> SimConfig:
    run = dict(parsed.get("run", {}))
    model_sec = dict(parsed.get("model", {}))
    output = dict(parsed.get("output", {}))
    overrides = overrides or {}

    profile = overrides.get("profile") or run.pop("profile", None) or "desk"
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}")
    cfg = replace(SimConfig(), profile=profile, **PROFILES[profile])

    if model_sec:
        # an explicit [model] section fully defines the benchmark; absent
        # one, the profile's default benchmark parameters stand
        model_name = model_sec.pop("name", cfg.model)
        model_params = model_sec
    else:
        model_name = cfg.model
        model_params = cfg.model_params

    field_map = {
        "n": "n", "epsilons": "epsilons", "t": "T", "dt": "dt", "gammas": "gammas",
        "qs": "qs", "paths": "paths", "seed": "seed", "threads": "threads",
        "n_outputs": "n_outputs", "n_list": "n_list",
        "galerkin_epsilon": "galerkin_epsilon", "phis": "phis",
    }
    updates = {field_map[k]: v for k, v in run.items() if k in field_map}
    if "dir" in output:
        updates["out_dir"] = output["dir"]
    cfg = replace(cfg, model=model_name, model_params=model_params, **updates)

    clean = {k: v for k, v in overrides.items()
             if v is not None and k in {"seed", "threads", "out_dir", "paths", "epsilons"}}
    if clean:
        cfg = replace(cfg, **clean)
    return cfg


def load_config(path: str | None = None, overrides: dict | None = None) -> SimConfig:
    if path is None:
        return _to_simconfig({}, overrides)
    with open(path, encoding="utf8") as fh:
        return _to_simconfig(parse_config_text(fh.read()), overrides)


def build_K(config: SimConfig) -> np.ndarray | None:
    kd = config.model_params.get("k_diag")
    if kd is None:
        return None
    return np.diag(np.asarray(kd, dtype=float))
