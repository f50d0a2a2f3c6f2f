"""Domain types shared by all modules: units, particle sets, extended
phase-space states, trajectories, grids, and field containers.

Reduced units throughout (k_B = 1 by default); all state containers are
immutable after construction and safe to share between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

__all__ = [
    "Units",
    "ParticleSet",
    "NHState",
    "APRState",
    "NVEState",
    "Trajectory",
    "GridSpec",
    "Field",
    "FieldSet",
    "physical_momentum_nh",
    "physical_velocity_apr",
    "current_positions_apr",
    "DET_F_TOL",
]

# determinants of the cell tensor closer to zero than this are treated as singular
DET_F_TOL = 1e-12


class StateError(ValueError):
    """A state container violates one of its invariants."""


def _frozen_array(a, shape=None, dtype=float):
    a = np.asarray(a, dtype=dtype)
    if shape is not None and a.shape != shape:
        raise StateError(f"expected array of shape {shape}, got {a.shape}")
    a = a.copy()
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Units:
    """Units convention.  Reduced units by default: k_B = 1."""

    k_b: float = 1.0

    def __post_init__(self):
        if self.k_b <= 0:
            raise StateError("k_b must be positive")


@dataclass(frozen=True)
class ParticleSet:
    """N material points with positive masses."""

    masses: np.ndarray

    def __post_init__(self):
        m = _frozen_array(self.masses)
        if m.ndim != 1 or m.size < 1:
            raise StateError("masses must be a non-empty 1-d array")
        if np.any(m <= 0):
            raise StateError("all masses must be positive")
        object.__setattr__(self, "masses", m)

    @property
    def n(self) -> int:
        return self.masses.size

    @staticmethod
    def uniform(n: int, mass: float = 1.0) -> "ParticleSet":
        return ParticleSet(np.full(n, float(mass)))


@dataclass(frozen=True)
class NVEState:
    """Plain Hamiltonian phase point: positions and physical momenta."""

    particles: ParticleSet
    positions: np.ndarray  # (N, 3)
    momenta: np.ndarray  # (N, 3)
    units: Units = Units()

    def __post_init__(self):
        n = self.particles.n
        object.__setattr__(self, "positions", _frozen_array(self.positions, (n, 3)))
        object.__setattr__(self, "momenta", _frozen_array(self.momenta, (n, 3)))

    def velocities(self) -> np.ndarray:
        return self.momenta / self.particles.masses[:, None]


@dataclass(frozen=True)
class NHState:
    """Nose extended phase point.

    Carries the physical coordinates, the virtual momenta, the dimensionless
    thermostat coordinate s (> 0) with its conjugate momentum p_s, and the
    thermostat parameters (thermal inertia Q, target temperature T).  The
    physical momentum of particle k is recovered as p_k / s.
    """

    particles: ParticleSet
    positions: np.ndarray  # (N, 3)
    momenta: np.ndarray  # (N, 3) virtual momenta
    s: float
    p_s: float
    thermal_inertia: float  # Q
    target_temperature: float  # T
    units: Units = Units()

    def __post_init__(self):
        n = self.particles.n
        object.__setattr__(self, "positions", _frozen_array(self.positions, (n, 3)))
        object.__setattr__(self, "momenta", _frozen_array(self.momenta, (n, 3)))
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "p_s", float(self.p_s))
        if self.s <= 0:
            raise StateError("thermostat coordinate s must be positive")
        if self.thermal_inertia <= 0:
            raise StateError("thermal inertia Q must be positive")
        if self.target_temperature <= 0:
            raise StateError("target temperature must be positive")

    @property
    def entropic_coefficient(self) -> float:
        """A = (3N + 1) k_B T, the prefactor of the entropic potential."""
        return (3 * self.particles.n + 1) * self.units.k_b * self.target_temperature

    def velocities(self) -> np.ndarray:
        return self.momenta / (self.s * self.particles.masses[:, None])


@dataclass(frozen=True)
class APRState:
    """Extended phase point with a dynamic cell tensor.

    Referential coordinates s_k live in the undeformed cell; current
    positions are r_k = F s_k.  G is the momentum conjugate to F.  The
    prescribed Piola stress P enters through the enthalpic energy
    -ref_volume * (P : F).  cell_inertia W is used by the Parrinello-Rahman
    kinetic-energy backend.
    """

    particles: ParticleSet
    ref_positions: np.ndarray  # (N, 3)
    momenta: np.ndarray  # (N, 3) conjugate momenta
    cell: np.ndarray  # F, (3, 3), det > 0
    cell_momentum: np.ndarray  # G, (3, 3)
    ref_volume: float  # omega_ref
    piola: np.ndarray  # P, (3, 3)
    cell_inertia: float  # W
    backend: str = "pr"  # "pr" or "exact"
    units: Units = Units()

    def __post_init__(self):
        n = self.particles.n
        object.__setattr__(self, "ref_positions", _frozen_array(self.ref_positions, (n, 3)))
        object.__setattr__(self, "momenta", _frozen_array(self.momenta, (n, 3)))
        object.__setattr__(self, "cell", _frozen_array(self.cell, (3, 3)))
        object.__setattr__(self, "cell_momentum", _frozen_array(self.cell_momentum, (3, 3)))
        object.__setattr__(self, "piola", _frozen_array(self.piola, (3, 3)))
        if np.linalg.det(self.cell) <= DET_F_TOL:
            raise StateError("cell tensor F must have positive determinant")
        if self.ref_volume <= 0:
            raise StateError("ref_volume must be positive")
        if self.cell_inertia <= 0:
            raise StateError("cell inertia W must be positive")
        if self.backend not in ("pr", "exact"):
            raise StateError("backend must be 'pr' or 'exact'")

    def current_positions(self) -> np.ndarray:
        return self.ref_positions @ self.cell.T

    def velocities(self) -> np.ndarray:
        f_inv_t = np.linalg.inv(self.cell).T
        return (self.momenta @ f_inv_t.T) / self.particles.masses[:, None]


def physical_momentum_nh(state: NHState, k: int) -> np.ndarray:
    """Physical momentum m_k v_k = p_k / s of particle k (0-based index)."""
    if not 0 <= k < state.particles.n:
        raise IndexError(f"particle index {k} out of range")
    if state.s <= 0:
        raise StateError("corrupt state: s <= 0")
    return state.momenta[k] / state.s


def physical_velocity_apr(state: APRState, k: int) -> np.ndarray:
    """Physical velocity (1/m_k) F^{-T} p_k of particle k (0-based index)."""
    if not 0 <= k < state.particles.n:
        raise IndexError(f"particle index {k} out of range")
    det = np.linalg.det(state.cell)
    if abs(det) <= DET_F_TOL:
        raise StateError("cell tensor is singular")
    f_inv_t = np.linalg.inv(state.cell).T
    return f_inv_t @ state.momenta[k] / state.particles.masses[k]


def current_positions_apr(state: APRState) -> np.ndarray:
    """Current positions r_k = F s_k for all particles, shape (N, 3)."""
    return state.current_positions()


@dataclass(frozen=True)
class Trajectory:
    """Time series of states sampled along one integrated trajectory.

    For the NH backend the evolution parameter is the virtual time tau and
    the physical time t is the quadrature of 1/s; for NVE and APR, t == tau.
    Per-step state data are stored as stacked arrays; `aux` holds the
    backend-specific auxiliary coordinates ("s", "p_s" or "cell",
    "cell_momentum") as arrays with leading time axis.
    """

    backend: str  # "nve" | "nh" | "apr"
    particles: ParticleSet
    tau: np.ndarray  # (n_samples,)
    t: np.ndarray  # (n_samples,) physical time
    positions: np.ndarray  # (n_samples, N, 3); referential for APR
    momenta: np.ndarray  # (n_samples, N, 3)
    aux: Dict[str, np.ndarray] = field(default_factory=dict)
    step: float = 0.0
    meta: Dict[str, float] = field(default_factory=dict)
    units: Units = Units()

    def __post_init__(self):
        tau = _frozen_array(self.tau)
        t = _frozen_array(self.t)
        if np.any(np.diff(tau) <= 0):
            raise StateError("tau must be strictly increasing")
        if np.any(np.diff(t) <= 0):
            raise StateError("physical time must be strictly increasing")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "positions", _frozen_array(self.positions))
        object.__setattr__(self, "momenta", _frozen_array(self.momenta))
        aux = {k: _frozen_array(v) for k, v in self.aux.items()}
        object.__setattr__(self, "aux", aux)

    @property
    def n_samples(self) -> int:
        return self.tau.size

    def _bracket(self, t: float):
        tgrid = self.t
        if t < tgrid[0] - 1e-12 or t > tgrid[-1] + 1e-12:
            raise ValueError(f"time {t} outside trajectory range [{tgrid[0]}, {tgrid[-1]}]")
        i = int(np.searchsorted(tgrid, t, side="right")) - 1
        i = min(max(i, 0), tgrid.size - 2)
        lam = (t - tgrid[i]) / (tgrid[i + 1] - tgrid[i])
        lam = min(max(lam, 0.0), 1.0)
        # exact node pass-through
        if abs(t - tgrid[i]) <= 1e-12 * max(1.0, abs(t)):
            lam = 0.0
        elif abs(t - tgrid[i + 1]) <= 1e-12 * max(1.0, abs(t)):
            lam = 1.0
        return i, lam

    def _lerp(self, arr, i, lam):
        if lam == 0.0:
            return arr[i]
        if lam == 1.0:
            return arr[i + 1]
        return (1.0 - lam) * arr[i] + lam * arr[i + 1]

    def snapshot(self, t: float) -> "Snapshot":
        """Linearly interpolate the stored samples to physical time t."""
        i, lam = self._bracket(t)
        pos = self._lerp(self.positions, i, lam)
        mom = self._lerp(self.momenta, i, lam)
        masses = self.particles.masses[:, None]
        if self.backend == "nh":
            s = float(self._lerp(self.aux["s"], i, lam))
            p_s = float(self._lerp(self.aux["p_s"], i, lam))
            vel = mom / (s * masses)
            weight = s / float(self.aux["s"][0])
            extra = {"s": s, "p_s": p_s,
                     "thermal_inertia": self.meta["thermal_inertia"],
                     "entropic_coefficient": self.meta["entropic_coefficient"]}
            r = pos
        elif self.backend == "apr":
            F = self._lerp(self.aux["cell"], i, lam)
            G = self._lerp(self.aux["cell_momentum"], i, lam)
            vel = (mom @ np.linalg.inv(F)) / masses  # F^{-T} p_k / m_k
            weight = 1.0
            extra = {"cell": F, "cell_momentum": G,
                     "ref_volume": self.meta["ref_volume"],
                     "cell_inertia": self.meta["cell_inertia"],
                     "piola": np.asarray(self.meta["piola"], dtype=float)}
            r = pos @ F.T
        else:
            vel = mom / masses
            weight = 1.0
            extra = {}
            r = pos
        return Snapshot(backend=self.backend, t=float(t), positions=r,
                        velocities=vel, masses=self.particles.masses,
                        weight=weight, extra=extra)


@dataclass(frozen=True)
class Snapshot:
    """State data interpolated to one physical time, in physical variables.

    `weight` is the statistical weight of the sample in ensemble averages at
    fixed physical time; it equals s(t)/s(0) for the NH backend (Jacobian of
    the virtual-to-physical time change along the trajectory) and 1
    otherwise.
    """

    backend: str
    t: float
    positions: np.ndarray  # (N, 3) current positions
    velocities: np.ndarray  # (N, 3) physical velocities
    masses: np.ndarray  # (N,)
    weight: float
    extra: Dict[str, object]


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned rectilinear evaluation grid with a time sample grid.

    The kernel width h must satisfy h >= 2 dx so that divergence stencils
    resolve the mollified fields.  Particles are required to stay at least h
    away from the box faces (padding), so no kernel mass leaks outside.
    """

    lo: np.ndarray  # (3,)
    hi: np.ndarray  # (3,)
    dx: float
    h: float
    times: np.ndarray  # (n_times,) physical times, uniform spacing

    def __post_init__(self):
        lo = _frozen_array(self.lo, (3,))
        hi = _frozen_array(self.hi, (3,))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "times", _frozen_array(self.times))
        if self.dx <= 0:
            raise StateError("dx must be positive")
        if self.h < 2 * self.dx:
            raise StateError("kernel width h must be at least 2*dx")
        if np.any(hi - lo <= 0):
            raise StateError("box must have positive extent")
        counts = (hi - lo) / self.dx
        if np.any(np.abs(counts - np.round(counts)) > 1e-9):
            raise StateError("box extents must be integer multiples of dx")
        if self.times.size >= 2:
            dt = np.diff(self.times)
            if np.any(dt <= 0) or np.ptp(dt) > 1e-9 * dt[0]:
                raise StateError("time samples must be uniform and increasing")

    @property
    def shape(self):
        return tuple(int(round(x)) + 1 for x in (self.hi - self.lo) / self.dx)

    @property
    def dt(self) -> float:
        if self.times.size < 2:
            raise StateError("need at least two time samples for dt")
        return float(self.times[1] - self.times[0])

    def axes(self):
        return tuple(self.lo[i] + self.dx * np.arange(self.shape[i]) for i in range(3))

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (nx*ny*nz, 3), C order."""
        ax = self.axes()
        g = np.meshgrid(*ax, indexing="ij")
        return np.stack([gi.ravel() for gi in g], axis=1)

    def check_inside(self, positions: np.ndarray):
        """Raise if any particle leaves the h-padded interior of the box."""
        lo = self.lo + self.h
        hi = self.hi - self.h
        if np.any(positions < lo) or np.any(positions > hi):
            raise ValueError("particle outside the kernel-padded box; enlarge the grid box")

    def cell_volume(self) -> float:
        return self.dx ** 3


#: tensor order -> trailing component shape of a field value array
_ORDER_SHAPE = {0: (), 1: (3,), 2: (3, 3)}


@dataclass(frozen=True)
class Field:
    """One named field: values and standard errors on grid x time samples.

    values has shape (n_times, nx, ny, nz) + component shape, where the
    component shape is () / (3,) / (3, 3) for tensor order 0 / 1 / 2.
    """

    order: int
    values: np.ndarray
    stderr: np.ndarray

    def __post_init__(self):
        if self.order not in _ORDER_SHAPE:
            raise StateError("tensor order must be 0, 1 or 2")
        v = np.asarray(self.values, dtype=float)
        e = np.asarray(self.stderr, dtype=float)
        if v.shape != e.shape:
            raise StateError("values and stderr shapes differ")
        comp = _ORDER_SHAPE[self.order]
        if comp and v.shape[-len(comp):] != comp:
            raise StateError(f"order-{self.order} field must end with shape {comp}")
        if np.any(e[np.isfinite(e)] < 0):
            raise StateError("standard errors must be non-negative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "stderr", e)


@dataclass
class FieldSet:
    """Named fields sharing one grid and one set of time samples."""

    grid: GridSpec
    fields: Dict[str, Field] = field(default_factory=dict)

    def add(self, name: str, order: int, values, stderr=None):
        values = np.asarray(values, dtype=float)
        if stderr is None:
            stderr = np.zeros_like(values)
        expected = (self.grid.times.size,) + self.grid.shape + _ORDER_SHAPE[order]
        if values.shape != expected:
            raise StateError(f"field {name}: expected shape {expected}, got {values.shape}")
        self.fields[name] = Field(order, values, stderr)

    def __contains__(self, name):
        return name in self.fields

    def __getitem__(self, name) -> Field:
        return self.fields[name]

    def names(self):
        return sorted(self.fields)

    def update(self, other: "FieldSet"):
        if other.grid is not self.grid and not (
            np.array_equal(other.grid.times, self.grid.times)
            and np.array_equal(other.grid.lo, self.grid.lo)
            and other.grid.dx == self.grid.dx
        ):
            raise StateError("cannot merge field sets on different grids")
        self.fields.update(other.fields)

    def integrate(self, name: str, time_index: int) -> np.ndarray:
        """Box integral of a field at one time sample (plain Riemann sum)."""
        f = self.fields[name]
        vals = f.values[time_index]
        axes = (0, 1, 2)
        return np.nansum(vals, axis=axes) * self.grid.cell_volume()
