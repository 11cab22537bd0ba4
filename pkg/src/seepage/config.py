"""Scenario files: line-based ``key = value`` with ``[section]`` headers.

Top-level keys come before the first section.  Values are numbers, words or
comma-separated number lists.  Unknown keys are rejected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .fsi_contact import ChannelGeometry
from .mesh import ReservoirGeometry
from .stokes_darcy import LoadSchedule, PhysParams

KINDS = ("two_reservoir", "channel_contact", "verify")
SUITES = ("mms", "poiseuille", "slip", "all")


class ConfigError(ValueError):
    """Bad scenario file; ``key`` is the dotted key and ``line`` the 1-based line, when known."""

    def __init__(self, message, key=None, line=None):
        self.key, self.line = key, line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


# section -> key -> (type, default per kind or plain default)
_FLOAT, _INT, _STR, _LIST = "float", "int", "str", "list"

_MESH_KEYS = {
    "channel_contact": {"length": (_FLOAT, 4.0), "height": (_FLOAT, 1.0), "nx": (_INT, 40), "ny": (_INT, 8)},
    "two_reservoir": {"width1": (_FLOAT, 1.0), "height1": (_FLOAT, 1.0), "gap": (_FLOAT, 1.0),
                      "width2": (_FLOAT, 1.0), "height2": (_FLOAT, 1.0), "cells_per_unit": (_INT, 16)},
    "verify": {},
}

_SCHEMA = {
    "": {"kind": (_STR, None), "suite": (_STR, "all")},
    "fluid": {"mu": (_FLOAT, 0.03), "rho": (_FLOAT, 1.0), "delta_stab": (_FLOAT, 0.1)},
    "layer": {"epsilon": (_FLOAT, 0.01), "k_tau": (_FLOAT, None), "k_n": (_FLOAT, 1.0),
              "sigma_p_sign": (_FLOAT, -1.0), "pl_start": (_FLOAT, None), "pl_end": (_FLOAT, None)},
    "solid": {"rho_s": (_FLOAT, 1.0), "c1": (_FLOAT, 1.0), "c0": (_FLOAT, 0.0), "gamma_fsi": (_FLOAT, None)},
    "contact": {"gamma_c": (_FLOAT, None), "g_min": (_FLOAT, 1e-3), "max_iter": (_INT, 30),
                "newton_tol": (_FLOAT, 1e-9)},
    "time": {"t_end": (_FLOAT, None), "dt": (_FLOAT, None)},
    "load": {"times": (_LIST, None), "values": (_LIST, None)},
    "output": {"every": (_INT, 10), "vtk": (_STR, "yes"), "csv": (_STR, "series.csv")},
}

# defaults that depend on the scenario kind
_KIND_DEFAULTS = {
    "two_reservoir": {"layer.k_tau": 1.0, "time.t_end": 5.0, "time.dt": 0.1,
                      "load.times": (0.0,), "load.values": (1.0,)},
    "channel_contact": {"layer.k_tau": 10.0, "time.t_end": 10.0, "time.dt": 0.02,
                        "load.times": (0.0, 6.0), "load.values": (4.0, 0.0)},
    "verify": {"layer.k_tau": 1.0, "time.t_end": 0.0, "time.dt": 1.0,
               "load.times": (0.0,), "load.values": (0.0,)},
}


@dataclass(frozen=True)
class Scenario:
    kind: str
    params: PhysParams
    geometry: object = None
    t_end: float = 0.0
    dt: float = 1.0
    output_every: int = 10
    write_vtk: bool = True
    csv_name: str = "series.csv"
    suite: str = "all"
    pl_dirichlet: dict = field(default_factory=dict)
    max_iter: int = 30
    newton_tol: float = 1e-9

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))


def _convert(kind, raw, key, line):
    try:
        if kind == _FLOAT:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
        if kind == _INT:
            return int(raw)
        if kind == _LIST:
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if not items:
                raise ValueError
            return tuple(_convert(_FLOAT, s, key, line) for s in items)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind}", key, line) from None
    return raw


def parse_text(text):
    """Parse scenario text into a validated :class:`Scenario`."""
    raw, lines = {}, {}
    section = ""
    for no, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("["):
            if not body.endswith("]"):
                raise ConfigError(f"malformed section header {body!r}", line=no)
            section = body[1:-1].strip()
            if section not in _SCHEMA and section != "mesh":
                raise ConfigError(f"unknown section [{section}]", key=section, line=no)
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", line=no)
        k, v = (s.strip() for s in body.split("=", 1))
        if not k or not v:
            raise ConfigError(f"expected 'key = value', got {body!r}", line=no)
        dotted = f"{section}.{k}" if section else k
        if dotted in raw:
            raise ConfigError(f"duplicate key {dotted}", dotted, no)
        raw[dotted], lines[dotted] = v, no
    return _build(raw, lines)


def parse_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_text(text)


def _build(raw, lines):
    kind = raw.get("kind")
    if kind is None:
        raise ConfigError("missing top-level key 'kind'", "kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {', '.join(KINDS)}, got {kind!r}", "kind", lines["kind"])
    schema = dict(_SCHEMA)
    schema["mesh"] = _MESH_KEYS[kind]
    vals = {}
    for dotted, v in raw.items():
        sec, _, k = dotted.rpartition(".")
        if k not in schema.get(sec, {}):
            raise ConfigError(f"unknown key {dotted}", dotted, lines[dotted])
        vals[dotted] = _convert(schema[sec][k][0], v, dotted, lines[dotted])
    for sec, keys in schema.items():
        for k, (_, default) in keys.items():
            dotted = f"{sec}.{k}" if sec else k
            if dotted not in vals:
                vals[dotted] = _KIND_DEFAULTS[kind].get(dotted, default)

    def fail(key, msg):
        raise ConfigError(f"{key}: {msg}", key, lines.get(key))

    for key in ("fluid.mu", "fluid.rho", "layer.epsilon", "layer.k_n", "time.dt"):
        if not vals[key] > 0:
            fail(key, "must be positive")
    for key in ("layer.k_tau", "fluid.delta_stab", "solid.c1", "solid.c0"):
        if vals[key] < 0:
            fail(key, "must be non-negative")
    for key in ("solid.rho_s", "contact.g_min", "contact.newton_tol"):
        if not vals[key] > 0:
            fail(key, "must be positive")
    for key in ("contact.gamma_c", "solid.gamma_fsi"):
        if vals[key] is not None and not vals[key] > 0:
            fail(key, "must be positive")
    if vals["layer.sigma_p_sign"] not in (-1.0, 1.0):
        fail("layer.sigma_p_sign", "must be -1 or 1")
    if kind != "verify" and vals["time.t_end"] < vals["time.dt"]:
        fail("time.t_end", "must be at least time.dt")
    if vals["contact.max_iter"] < 1:
        fail("contact.max_iter", "must be at least 1")
    if vals["output.every"] < 0:
        fail("output.every", "must be non-negative")
    if vals["output.vtk"] not in ("yes", "no"):
        fail("output.vtk", "must be yes or no")
    if vals["suite"] not in SUITES:
        fail("suite", f"must be one of {', '.join(SUITES)}")
    times, values = vals["load.times"], vals["load.values"]
    if len(times) != len(values):
        fail("load.values", "needs one value per entry of load.times")
    if any(b <= a for a, b in zip(times, times[1:])):
        fail("load.times", "breakpoint times must be strictly increasing")

    for k in _MESH_KEYS[kind]:
        key = f"mesh.{k}"
        if not vals[key] > 0:
            fail(key, "must be positive")
    geometry = None
    if kind == "channel_contact":
        geometry = ChannelGeometry(**{k: vals[f"mesh.{k}"] for k in _MESH_KEYS[kind]})
    elif kind == "two_reservoir":
        geometry = ReservoirGeometry(**{k: vals[f"mesh.{k}"] for k in _MESH_KEYS[kind]})

    params = PhysParams(
        mu=vals["fluid.mu"], rho_f=vals["fluid.rho"], delta_stab=vals["fluid.delta_stab"],
        epsilon=vals["layer.epsilon"], k_tau=vals["layer.k_tau"], k_n=vals["layer.k_n"],
        sigma_p_sign=vals["layer.sigma_p_sign"], pbar=LoadSchedule(times, values),
        rho_s=vals["solid.rho_s"], c1=vals["solid.c1"], c0=vals["solid.c0"], gamma_fsi=vals["solid.gamma_fsi"],
        gamma_c=vals["contact.gamma_c"], g_min=vals["contact.g_min"])
    pl = {end: vals[f"layer.pl_{end}"] for end in ("start", "end") if vals[f"layer.pl_{end}"] is not None}
    return Scenario(kind, params, geometry, vals["time.t_end"], vals["time.dt"], vals["output.every"],
                    vals["output.vtk"] == "yes", vals["output.csv"], vals["suite"], pl,
                    vals["contact.max_iter"], vals["contact.newton_tol"])


def default_scenario(kind):
    return parse_text(f"kind = {kind}\n")
