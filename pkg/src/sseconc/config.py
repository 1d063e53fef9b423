"""TOML run configuration with documented defaults; unknown keys are errors.

Example::

    [model]
    kind = "xxz"        # "xxz" or "tfim"
    beta = 4.0
    delta = 1.0         # xxz only
    h_stag = 0.0        # xxz only
    lambda = 0.3        # tfim only; or lambda_over_lc = 1.0
    h_x = 0.0           # tfim only
    epsilon = 0.1

    [lattice]
    Lx = 4
    Ly = 1

    [run]
    separations = [[1, 0], [2, 0]]
    sweeps = 100000
    thermalization = 10000   # default: 10% of sweeps
    bins = 100
    chains = 1
    seed = 1
    out = "runs/xxz"
    checkpoint_every = 0     # sweeps, 0 disables

    [sweep]                  # only for the sweep subcommand
    parameter = "delta"      # delta, lambda, lambda_over_lc, h_x, h_stag, beta
    values = [-1.5, -1.0, 0.0, 1.0]
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import tomli

from .lattice import LatticeGeometry, build_lattice, canonical_separation
from .model import LAMBDA_C, ModelSpec

DEFAULTS = {
    "model": {"kind": "xxz", "beta": 1.0, "delta": 0.0, "h_stag": 0.0, "lambda": None, "lambda_over_lc": None,
              "h_x": 0.0, "epsilon": 0.1},
    "lattice": {"Lx": 4, "Ly": 1, "periodic": True},
    "run": {"separations": [[1, 0]], "sweeps": 10000, "thermalization": None, "bins": 100, "chains": 1,
            "seed": 1, "out": "sseconc-out", "checkpoint_every": 0},
    "sweep": {"parameter": None, "values": []},
}
SWEEP_PARAMETERS = ("delta", "lambda", "lambda_over_lc", "h_x", "h_stag", "beta")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec
    Lx: int
    Ly: int
    periodic: bool
    separations: tuple
    sweeps: int
    thermalization: int
    bins: int
    chains: int
    seed: int
    out: str
    checkpoint_every: int
    sweep_parameter: str | None = None
    sweep_values: tuple = field(default_factory=tuple)

    def geometry(self) -> LatticeGeometry:
        return build_lattice(self.Lx, self.Ly, self.periodic)

    @property
    def bin_size(self) -> int:
        return self.sweeps // self.bins

    def to_dict(self) -> dict:
        m = self.model
        d = {
            "model": {"kind": m.kind, "beta": m.beta, "epsilon": m.epsilon},
            "lattice": {"Lx": self.Lx, "Ly": self.Ly, "periodic": self.periodic},
            "run": {"separations": [list(s) for s in self.separations], "sweeps": self.sweeps,
                    "thermalization": self.thermalization, "bins": self.bins, "chains": self.chains,
                    "seed": self.seed, "out": self.out, "checkpoint_every": self.checkpoint_every},
        }
        if m.kind == "xxz":
            d["model"].update(delta=m.delta, h_stag=m.h_stag)
        else:
            d["model"].update({"lambda": m.lam, "h_x": m.h_x})
        if self.sweep_parameter:
            d["sweep"] = {"parameter": self.sweep_parameter, "values": list(self.sweep_values)}
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def with_parameter(self, name: str, value: float) -> "RunConfig":
        """Copy with one model parameter changed (sweep axis helper)."""
        m = self.model
        if name == "lambda_over_lc":
            name, value = "lambda", value * LAMBDA_C
        key = {"lambda": "lam"}.get(name, name)
        return replace(self, model=replace(m, **{key: float(value)}), sweep_parameter=None, sweep_values=())

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        if not kw:
            return self
        return from_dict(_merge(self.to_dict(), {"run": kw}))


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for sec, vals in extra.items():
        out.setdefault(sec, {}).update(vals)
    return out


def load_config(path) -> RunConfig:
    try:
        raw = tomli.loads(Path(path).read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc
    return from_dict(raw)


def from_dict(raw: dict) -> RunConfig:
    """Validate a nested mapping and build a RunConfig, reporting every problem at once."""
    problems = []
    merged = copy.deepcopy(DEFAULTS)
    for sec, vals in raw.items():
        if sec not in DEFAULTS:
            problems.append(f"unknown section [{sec}]")
            continue
        if not isinstance(vals, dict):
            problems.append(f"[{sec}] must be a table")
            continue
        for k, v in vals.items():
            if k not in DEFAULTS[sec]:
                problems.append(f"unknown key {sec}.{k}")
            else:
                merged[sec][k] = v
    mdl, lat, run, swp = merged["model"], merged["lattice"], merged["run"], merged["sweep"]

    def num(sec, key, kind=float, minimum=None, strict=False):
        v = merged[sec][key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (kind is int and not isinstance(v, int)):
            problems.append(f"{sec}.{key} must be {'an integer' if kind is int else 'a number'}, got {v!r}")
            return None
        if minimum is not None and (v <= minimum if strict else v < minimum):
            problems.append(f"{sec}.{key} must be {'>' if strict else '>='} {minimum}, got {v}")
            return None
        return kind(v)

    kind = str(mdl["kind"]).lower()
    if kind not in ("xxz", "tfim"):
        problems.append(f"model.kind must be 'xxz' or 'tfim', got {mdl['kind']!r}")
    beta = num("model", "beta", minimum=0, strict=True)
    eps = num("model", "epsilon", minimum=0, strict=True)
    delta = num("model", "delta")
    h_stag = num("model", "h_stag", minimum=0)
    h_x = num("model", "h_x", minimum=0)
    lam = 0.0
    if mdl["lambda"] is not None and mdl["lambda_over_lc"] is not None:
        problems.append("give model.lambda or model.lambda_over_lc, not both")
    elif mdl["lambda"] is not None:
        lam = num("model", "lambda", minimum=0)
    elif mdl["lambda_over_lc"] is not None:
        r = num("model", "lambda_over_lc", minimum=0)
        lam = None if r is None else r * LAMBDA_C
    elif kind == "tfim":
        problems.append("tfim needs model.lambda or model.lambda_over_lc")

    Lx = num("lattice", "Lx", int, 1)
    Ly = num("lattice", "Ly", int, 1)
    periodic = lat["periodic"]
    if not isinstance(periodic, bool):
        problems.append("lattice.periodic must be true or false")
    geom = None
    if Lx is not None and Ly is not None and isinstance(periodic, bool):
        try:
            geom = build_lattice(Lx, Ly, periodic)
        except ValueError as exc:
            problems.append(f"lattice: {exc}")

    sweeps = num("run", "sweeps", int, 1)
    bins = num("run", "bins", int, 2)
    chains = num("run", "chains", int, 1)
    seed = num("run", "seed", int, 0)
    if seed is not None and seed >= 2**64:
        problems.append("run.seed must fit in 64 bits")
    ckpt = num("run", "checkpoint_every", int, 0)
    therm = run["thermalization"]
    if therm is None:
        therm = None if sweeps is None else max(1, sweeps // 10)
    else:
        therm = num("run", "thermalization", int, 0)
    if sweeps is not None and bins is not None and sweeps % bins:
        problems.append(f"run.sweeps ({sweeps}) must be divisible by run.bins ({bins})")
    seps = []
    raw_seps = run["separations"]
    if not isinstance(raw_seps, list) or not raw_seps:
        problems.append("run.separations must be a non-empty list of [dx, dy] pairs")
    else:
        for s in raw_seps:
            if isinstance(s, int):
                s = [s, 0]
            if not (isinstance(s, list) and len(s) in (1, 2) and all(isinstance(v, int) for v in s)):
                problems.append(f"separation {s!r} must be [dx, dy] integers")
                continue
            if geom is not None:
                try:
                    seps.append(canonical_separation(geom, s))
                except ValueError as exc:
                    problems.append(f"run.separations: {exc}")
    if not isinstance(run["out"], str) or not run["out"]:
        problems.append("run.out must be a non-empty path string")

    param = swp["parameter"]
    values = swp["values"]
    if param is not None:
        if param not in SWEEP_PARAMETERS:
            problems.append(f"sweep.parameter must be one of {', '.join(SWEEP_PARAMETERS)}, got {param!r}")
        if not isinstance(values, list) or not values or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
            problems.append("sweep.values must be a non-empty list of numbers")

    model = None
    if not problems:
        try:
            model = ModelSpec(kind, beta, delta=delta, lam=lam, h_x=h_x, h_stag=h_stag, epsilon=eps)
        except ValueError as exc:
            problems.append(f"model: {exc}")
    if problems:
        raise ConfigError(problems)
    return RunConfig(model, Lx, Ly, periodic, tuple(dict.fromkeys(seps)), sweeps, therm, bins, chains, seed,
                     run["out"], ckpt, param, tuple(float(v) for v in values) if param else ())
