"""JSON run configuration: versioned schema, strict validation, builders.

Validation is hand-rolled so every error names the offending key by its
full dotted path (e.g. "nh.Q"); unknown keys are rejected at every level.
The validated RunConfig can build all pipeline objects (equations, initial
density, integrator, grid) deterministically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .core import APRState, GridSpec, NHState, NVEState, ParticleSet, Units
from .dynamics import (APREquations, APRExactEquations, IntegratorSpec,
                       NHEquations, NVEEquations)
from .ensemble import (Explicit, InitialDensity, Lattice, MaxwellBoltzmann,
                       ZeroMomentum)
from .fields import LucyKernel
from .potentials import (HarmonicPair, HarmonicTrap, LennardJones,
                         UniformField)

__all__ = ["ConfigError", "RunConfig", "parse_config", "validate_config",
           "SCHEMA_VERSION"]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Configuration rejected; the message names the key path."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}" if path else reason)


def _check_keys(d: dict, path: str, required, optional=()):
    unknown = set(d) - set(required) - set(optional)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    for key in required:
        if key not in d:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required key")


def _number(d, path, key, positive=False, nonnegative=False, default=None):
    if key not in d:
        if default is not None:
            return default
        raise ConfigError(f"{path}.{key}", "missing required key")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", "must be a number")
    if positive and v <= 0:
        raise ConfigError(f"{path}.{key}", "must be positive")
    if nonnegative and v < 0:
        raise ConfigError(f"{path}.{key}", "must be non-negative")
    return float(v)


def _integer(d, path, key, minimum=None, default=None):
    if key not in d:
        if default is not None:
            return default
        raise ConfigError(f"{path}.{key}", "missing required key")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}.{key}", "must be an integer")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}.{key}", f"must be at least {minimum}")
    return v


def _vector(d, path, key, length, default=None):
    if key not in d:
        if default is not None:
            return list(default)
        raise ConfigError(f"{path}.{key}", "missing required key")
    v = d[key]
    if not isinstance(v, list) or len(v) != length or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ConfigError(f"{path}.{key}", f"must be a list of {length} numbers")
    return [float(x) for x in v]


@dataclass
class RunConfig:
    """Validated run configuration; all builder methods are deterministic."""

    raw: Dict
    backend: str
    seed: int

    # -- builders -----------------------------------------------------------

    def particles(self) -> ParticleSet:
        p = self.raw["particles"]
        return ParticleSet.uniform(p["n"], p.get("mass", 1.0))

    def pair_potential(self):
        pot = self.raw.get("potential", {})
        spec = pot.get("pair")
        if spec is None:
            return None
        if spec["type"] == "lennard_jones":
            return LennardJones(spec.get("epsilon", 1.0), spec.get("sigma", 1.0),
                                spec.get("cutoff", 2.5))
        return HarmonicPair(spec.get("spring", 1.0), spec.get("rest_length", 1.0))

    def external_potential(self):
        pot = self.raw.get("potential", {})
        spec = pot.get("external")
        if spec is None:
            return None
        if spec["type"] == "harmonic_trap":
            return HarmonicTrap(spec.get("kappa", 1.0),
                                tuple(spec.get("center", (0.0, 0.0, 0.0))))
        return UniformField(tuple(spec["g"]))

    def equations(self):
        ps = self.particles()
        pair = self.pair_potential()
        ext = self.external_potential()
        units = Units()
        if self.backend == "nve":
            return NVEEquations(ps, pair, ext, units)
        if self.backend == "nh":
            nh = self.raw["nh"]
            return NHEquations(ps, nh["Q"], nh["T_target"], pair, ext, units)
        apr = self.raw["apr"]
        cls = APRExactEquations if apr.get("kinetic", "pr") == "exact" else APREquations
        piola = np.asarray(apr["P"], dtype=float).reshape(3, 3)
        return cls(ps, apr["W"], apr.get("ref_volume", 1.0), piola, pair, units)

    def integrator(self) -> IntegratorSpec:
        ig = self.raw["integrator"]
        return IntegratorSpec(ig.get("scheme", "implicit_midpoint"), ig["dt"])

    def n_steps(self) -> int:
        return self.raw["integrator"]["n_steps"]

    def sample_every(self) -> int:
        return self.raw["integrator"].get("sample_every", 1)

    def density(self) -> InitialDensity:
        p = self.raw["particles"]
        ens = self.raw["ensemble"]
        if "positions" in p:
            pos = Explicit(np.asarray(p["positions"], dtype=float))
        else:
            pos = Lattice(p["spacing"], p.get("jitter", 0.0))
        vel_spec = ens.get("velocities", {"type": "zero"})
        if vel_spec["type"] == "maxwell_boltzmann":
            vel = MaxwellBoltzmann(vel_spec["temperature"])
        else:
            vel = ZeroMomentum()
        return InitialDensity(pos, vel, ens.get("sigma_s", 0.0),
                              ens.get("sigma_ps", 0.0), ens.get("sigma_cell", 0.0),
                              self.seed)

    def ensemble_size(self) -> int:
        return self.raw["ensemble"]["m"]

    def grid(self) -> GridSpec:
        g = self.raw["grid"]
        times = np.linspace(g["t_start"], g["t_stop"], g["n_times"])
        return GridSpec(np.asarray(g["lo"]), np.asarray(g["hi"]), g["dx"],
                        g["h"], times)

    def kernel(self) -> LucyKernel:
        return LucyKernel(self.raw["grid"]["h"])

    def nh_ref_volume(self) -> float:
        return self.raw.get("nh", {}).get("ref_volume", 1.0)

    def balance_mode(self) -> str:
        return self.raw.get("balance", {}).get("mode", "collective")

    def output_format(self) -> str:
        return self.raw.get("output", {}).get("format", "both")


def validate_config(data: Dict, seed_override: Optional[int] = None) -> RunConfig:
    """Validate a parsed JSON document and return the RunConfig."""
    if not isinstance(data, dict):
        raise ConfigError("", "top level must be a JSON object")
    _check_keys(data, "", ["schema_version", "backend", "particles",
                           "integrator", "ensemble", "grid"],
                ["potential", "nh", "apr", "balance", "output"])
    if data["schema_version"] != SCHEMA_VERSION:
        raise ConfigError("schema_version",
                          f"unsupported version {data['schema_version']!r}; "
                          f"this build reads version {SCHEMA_VERSION}")
    backend = data["backend"]
    if backend not in ("nve", "nh", "apr"):
        raise ConfigError("backend", "must be one of 'nve', 'nh', 'apr'")

    p = data["particles"]
    _check_keys(p, "particles", ["n"], ["mass", "spacing", "jitter", "positions"])
    n = _integer(p, "particles", "n", minimum=1)
    _number(p, "particles", "mass", positive=True, default=1.0)
    if "positions" in p:
        pos = p["positions"]
        if (not isinstance(pos, list) or len(pos) != n
                or not all(isinstance(row, list) and len(row) == 3 for row in pos)):
            raise ConfigError("particles.positions", f"must be a list of {n} 3-vectors")
    else:
        _number(p, "particles", "spacing", positive=True)
        _number(p, "particles", "jitter", nonnegative=True, default=0.0)

    pot = data.get("potential", {})
    _check_keys(pot, "potential", [], ["pair", "external"])
    pair = pot.get("pair")
    if pair is not None:
        _check_keys(pair, "potential.pair", ["type"],
                    ["epsilon", "sigma", "cutoff", "spring", "rest_length"])
        if pair["type"] not in ("lennard_jones", "harmonic"):
            raise ConfigError("potential.pair.type",
                              "must be 'lennard_jones' or 'harmonic'")
    ext = pot.get("external")
    if ext is not None:
        _check_keys(ext, "potential.external", ["type"], ["kappa", "center", "g"])
        if ext["type"] not in ("harmonic_trap", "uniform"):
            raise ConfigError("potential.external.type",
                              "must be 'harmonic_trap' or 'uniform'")
        if ext["type"] == "uniform":
            _vector(ext, "potential.external", "g", 3)
        else:
            _number(ext, "potential.external", "kappa", positive=True, default=1.0)
        if backend == "apr":
            raise ConfigError("potential.external",
                              "the APR backend does not support external potentials")

    ig = data["integrator"]
    _check_keys(ig, "integrator", ["dt", "n_steps"], ["scheme", "sample_every"])
    _number(ig, "integrator", "dt", positive=True)
    _integer(ig, "integrator", "n_steps", minimum=1)
    _integer(ig, "integrator", "sample_every", minimum=1, default=1)
    if ig.get("scheme", "implicit_midpoint") not in ("implicit_midpoint", "rk4"):
        raise ConfigError("integrator.scheme",
                          "must be 'implicit_midpoint' or 'rk4'")

    ens = data["ensemble"]
    _check_keys(ens, "ensemble", ["m"],
                ["seed", "velocities", "sigma_s", "sigma_ps", "sigma_cell"])
    _integer(ens, "ensemble", "m", minimum=1)
    _integer(ens, "ensemble", "seed", minimum=0, default=0)
    for key in ("sigma_s", "sigma_ps", "sigma_cell"):
        _number(ens, "ensemble", key, nonnegative=True, default=0.0)
    vel = ens.get("velocities")
    if vel is not None:
        _check_keys(vel, "ensemble.velocities", ["type"], ["temperature"])
        if vel["type"] not in ("maxwell_boltzmann", "zero"):
            raise ConfigError("ensemble.velocities.type",
                              "must be 'maxwell_boltzmann' or 'zero'")
        if vel["type"] == "maxwell_boltzmann":
            _number(vel, "ensemble.velocities", "temperature", positive=True)

    if backend == "nh":
        if "nh" not in data:
            raise ConfigError("nh", "required for the NH backend")
        nh = data["nh"]
        _check_keys(nh, "nh", ["Q", "T_target"], ["ref_volume"])
        _number(nh, "nh", "Q", positive=True)
        _number(nh, "nh", "T_target", positive=True)
        _number(nh, "nh", "ref_volume", positive=True, default=1.0)
    if backend == "apr":
        if "apr" not in data:
            raise ConfigError("apr", "required for the APR backend")
        apr = data["apr"]
        _check_keys(apr, "apr", ["W", "P"], ["ref_volume", "kinetic"])
        _number(apr, "apr", "W", positive=True)
        _vector(apr, "apr", "P", 9)
        _number(apr, "apr", "ref_volume", positive=True, default=1.0)
        if apr.get("kinetic", "pr") not in ("pr", "exact"):
            raise ConfigError("apr.kinetic", "must be 'pr' or 'exact'")

    g = data["grid"]
    _check_keys(g, "grid", ["lo", "hi", "dx", "h", "t_start", "t_stop", "n_times"], [])
    lo = _vector(g, "grid", "lo", 3)
    hi = _vector(g, "grid", "hi", 3)
    dx = _number(g, "grid", "dx", positive=True)
    h = _number(g, "grid", "h", positive=True)
    _number(g, "grid", "t_start", nonnegative=True)
    _number(g, "grid", "t_stop", positive=True)
    _integer(g, "grid", "n_times", minimum=3)
    if h < 2 * dx:
        raise ConfigError("grid.h", "must be at least 2*dx")
    if any(b <= a for a, b in zip(lo, hi)):
        raise ConfigError("grid.hi", "must exceed grid.lo componentwise")
    if g["t_stop"] <= g["t_start"]:
        raise ConfigError("grid.t_stop", "must exceed grid.t_start")

    bal = data.get("balance", {})
    _check_keys(bal, "balance", [], ["mode"])
    if bal.get("mode", "collective") not in ("collective", "distributed"):
        raise ConfigError("balance.mode", "must be 'collective' or 'distributed'")

    out = data.get("output", {})
    _check_keys(out, "output", [], ["format"])
    if out.get("format", "both") not in ("csv", "binary", "both"):
        raise ConfigError("output.format", "must be 'csv', 'binary' or 'both'")

    seed = seed_override if seed_override is not None else ens.get("seed", 0)
    return RunConfig(raw=data, backend=backend, seed=int(seed))


def parse_config(path, seed_override: Optional[int] = None) -> RunConfig:
    """Load and validate a JSON config file."""
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(str(path), "config file not found")
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}")
    return validate_config(data, seed_override)
