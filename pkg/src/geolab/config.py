"""Run configuration: TOML files with a versioned schema.

Unknown sections or keys are errors; every error names the offending field.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import sys
from dataclasses import dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# section -> {key: (types, default)}
_NUM = (int, float)
SCHEMA = {
    "": {
        "schema_version": (int, SCHEMA_VERSION),
        "seed": (int, 0),
        "energy_bound": (_NUM, None),
        "output": (str, "geolab_out"),
    },
    "manifold": {
        "model": (str, "sphere"),
        "radius": (_NUM, 1.0),
        "axes": (list, [1.0, 1.1, 1.2]),
        "basis": (list, None),
        "length": (_NUM, None),
    },
    "isometry": {
        "kind": (str, "identity"),
        "axis": (list, [0.0, 0.0, 1.0]),
        "angle": (_NUM, 0.0),
        "vector": (list, None),
        "shift": (_NUM, 0.0),
    },
    "grid": {
        "k": ((int, str), "auto"),
        "q": (_NUM, 1.0),
        "q_prime": (_NUM, 0.0),
        "closure": (str, "periodic"),
        "spacing": (str, "strict"),
    },
    "flow": {
        "step_rule": (str, "backtracking"),
        "step": (_NUM, 0.01),
        "armijo": (_NUM, 1e-4),
        "grad_tol": (_NUM, 1e-8),
        "max_iters": (int, 5000),
        "finite_diff_h": (_NUM, 1e-6),
    },
    "find": {
        "starts": (int, 32),
        "search": (str, "descent"),
        "amplitude": (_NUM, 0.3),
        "winding": (list, None),
        "start_plane": (str, "none"),
        "dedup_tol": (_NUM, 0.06),
    },
    "iterate": {
        "p": ((int, float, str), 1),
        "m_max": (int, 10),
        "threshold": (int, None),
    },
    "family": {
        "kind": (str, "sweep"),
        "samples": (int, 33),
        "amplitude": (_NUM, 0.15),
        "winding": (list, [1, 0]),
        "radius": (_NUM, 0.12),
        "base": (list, None),
    },
    "minimax": {
        "rounds": (int, 3000),
        "window": (int, 50),
        "stable_tol": (_NUM, 1e-6),
        "critical_tol": (_NUM, 1e-4),
        "max_samples": (int, 1024),
    },
    "bangert": {
        "m_values": (list, [2, 4, 8, 16]),
        "s_samples": (int, 5),
    },
    "shell": {
        "rho1": (_NUM, None),
        "rho2": (_NUM, None),
        "n_samples": (int, 1000),
    },
}

CHOICES = {
    ("manifold", "model"): {"sphere", "torus", "ellipsoid", "circle_sphere"},
    ("isometry", "kind"): {"identity", "translation", "rotation", "product"},
    ("grid", "closure"): {"periodic", "invariant"},
    ("grid", "spacing"): {"strict", "warn"},
    ("flow", "step_rule"): {"backtracking", "fixed"},
    ("find", "search"): {"descent", "critical"},
    ("find", "start_plane"): {"none", "equator"},
    ("family", "kind"): {"sweep", "translates", "point_circle"},
}


@dataclass
class RunConfig:
    data: dict
    source: str = "<memory>"
    digest: str = ""

    def section(self, name):
        return self.data.get(name, {})

    @property
    def seed(self):
        return self.data[""]["seed"]

    def with_seed(self, seed):
        out = copy.deepcopy(self)
        out.data[""]["seed"] = int(seed)
        return out


class _FieldError(ConfigError):
    def __init__(self, message, where):
        super().__init__(message)
        self.where = where


def _line_of(text, where):
    """1-based line of ``where`` (``key``, ``section.key`` or ``[section]``) in TOML ``text``."""
    section, _, key = where.rpartition(".") if not where.startswith("[") else (where[1:-1], "", "")
    current = ""
    for n, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if stripped.startswith("["):
            current = stripped.strip("[] ")
            if not key and current == section:
                return n
            continue
        if key and current == section and stripped.split("=", 1)[0].strip() == key:
            return n
    return None


def _typename(types):
    types = types if isinstance(types, tuple) else (types,)
    return " or ".join(t.__name__ for t in types)


def validate(raw, source="<memory>", digest=""):
    """Check ``raw`` (parsed TOML) against the schema and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a table")
    data = {}
    top = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in raw.items() if isinstance(v, dict)}
    for name in tables:
        if name not in SCHEMA or name == "":
            raise _FieldError(f"{source}: unknown section [{name}]", f"[{name}]")
    for name, schema in SCHEMA.items():
        given = top if name == "" else tables.get(name, {})
        out = {}
        for key, value in given.items():
            where = key if name == "" else f"{name}.{key}"
            if key not in schema:
                raise _FieldError(f"{source}: unknown key '{where}'", where)
            types = schema[key][0]
            types = types if isinstance(types, tuple) else (types,)
            if isinstance(value, bool) or not isinstance(value, types):
                raise _FieldError(f"{source}: '{where}' must be {_typename(types)}, got {value!r}", where)
            choices = CHOICES.get((name, key))
            if choices is not None and value not in choices:
                raise _FieldError(f"{source}: '{where}' must be one of {sorted(choices)}, got {value!r}",
                                  where)
            out[key] = value
        for key, (_, default) in schema.items():
            out.setdefault(key, copy.deepcopy(default))
        data[name] = out
    if data[""]["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"{source}: schema_version {data['']['schema_version']} is not supported "
                          f"(expected {SCHEMA_VERSION})")
    k = data["grid"]["k"]
    if isinstance(k, str) and k != "auto":
        raise ConfigError(f"{source}: 'grid.k' must be an integer or \"auto\"")
    if isinstance(k, int) and k < 2:
        raise ConfigError(f"{source}: 'grid.k' must be >= 2")
    g = data["grid"]
    if not 0 <= g["q_prime"] < g["q"]:
        raise ConfigError(f"{source}: 'grid.q_prime' must lie in [0, grid.q)")
    if data["find"]["starts"] < 1:
        raise ConfigError(f"{source}: 'find.starts' must be >= 1")
    return RunConfig(data, source, digest)


def load_config(path):
    """Read and validate a TOML configuration; the digest is the SHA-256 of the file bytes."""
    try:
        with open(path, "rb") as fh:
            raw_bytes = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = tomllib.loads(raw_bytes.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        return validate(raw, str(path), hashlib.sha256(raw_bytes).hexdigest())
    except _FieldError as exc:
        line = _line_of(raw_bytes.decode("utf-8"), exc.where)
        if line is None:
            raise
        raise ConfigError(f"{exc} (line {line})") from exc


def config_from_dict(raw):
    import json

    digest = hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()
    return validate(raw, "<dict>", digest)
