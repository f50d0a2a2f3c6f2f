"""Initial-condition sampling, trajectory batches, and ensemble averages.

Expected values are realized by the method of characteristics: draw M
independent phase points from the declared initial density, push each along
its Hamiltonian trajectory, and average.  Per-sample RNG streams are spawned
from one SeedSequence, so results are independent of the worker count.

For the NH backend, averages at fixed physical time carry the per-sample
weight s(t)/s(0): the initial density is declared in the virtual-time
Liouville picture and the weight is the Jacobian of the per-trajectory
virtual-to-physical time change.  This is what makes the thermostat source
terms (sigma_rho and friends) come out as genuine balance-law sources
rather than statistical bias.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import (APRState, NHState, NVEState, ParticleSet, StateError,
                   Trajectory, Units)
from .dynamics import (APREquations, APRExactEquations, Equations,
                       IntegratorSpec, NHEquations, NVEEquations, integrate)

__all__ = [
    "Lattice",
    "Explicit",
    "MaxwellBoltzmann",
    "ZeroMomentum",
    "InitialDensity",
    "EnsembleBatch",
    "sample_initial",
    "run_batch",
    "ensemble_average",
    "nve_batch_as_nh",
    "nve_batch_as_apr",
]

_RETRY_CAP = 100


@dataclass(frozen=True)
class Lattice:
    """Cubic lattice centered at the origin, with optional Gaussian jitter."""

    spacing: float
    jitter: float = 0.0

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        side = int(np.ceil(n ** (1.0 / 3.0)))
        idx = np.arange(side, dtype=float) - 0.5 * (side - 1)
        g = np.meshgrid(idx, idx, idx, indexing="ij")
        sites = np.stack([gi.ravel() for gi in g], axis=1)[:n] * self.spacing
        if self.jitter > 0:
            sites = sites + rng.normal(0.0, self.jitter, sites.shape)
        return sites


@dataclass(frozen=True)
class Explicit:
    positions: np.ndarray

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != (n, 3):
            raise StateError(f"explicit positions must have shape ({n}, 3)")
        return pos.copy()


@dataclass(frozen=True)
class MaxwellBoltzmann:
    """Physical velocities with component variance k_B T0 / m_k."""

    temperature: float

    def sample(self, masses: np.ndarray, rng: np.random.Generator,
               k_b: float) -> np.ndarray:
        sig = np.sqrt(k_b * self.temperature / masses)
        return rng.normal(0.0, 1.0, (masses.size, 3)) * sig[:, None]


@dataclass(frozen=True)
class ZeroMomentum:
    def sample(self, masses, rng, k_b) -> np.ndarray:
        return np.zeros((masses.size, 3))


@dataclass(frozen=True)
class InitialDensity:
    """Declared initial probability density over the extended phase space.

    Auxiliary NH coordinates: s ~ LogNormal(0, sigma_s) (always positive),
    p_s ~ Normal(0, sigma_ps).  APR: F = I + sigma_cell * Normal entries
    (resampled, up to a retry cap, until det F > 0), G = 0.
    """

    positions: Union[Lattice, Explicit]
    velocities: Union[MaxwellBoltzmann, ZeroMomentum]
    sigma_s: float = 0.0
    sigma_ps: float = 0.0
    sigma_cell: float = 0.0
    seed: int = 0


def _sample_one(eq: Equations, density: InitialDensity, rng: np.random.Generator):
    particles = eq.particles
    masses = particles.masses
    k_b = eq.units.k_b
    pos = density.positions.sample(particles.n, rng)
    vel = density.velocities.sample(masses, rng, k_b)
    if isinstance(eq, NHEquations):
        s = float(np.exp(rng.normal(0.0, density.sigma_s))) if density.sigma_s > 0 else 1.0
        p_s = float(rng.normal(0.0, density.sigma_ps)) if density.sigma_ps > 0 else 0.0
        virtual = s * masses[:, None] * vel
        return NHState(particles, pos, virtual, s, p_s, eq.q_inertia,
                       eq.temperature, eq.units)
    if isinstance(eq, APREquations):
        for attempt in range(_RETRY_CAP):
            F = np.eye(3)
            if density.sigma_cell > 0:
                F = F + rng.normal(0.0, density.sigma_cell, (3, 3))
            if np.linalg.det(F) > 1e-12:
                break
        else:
            raise StateError("retry cap exceeded while sampling a valid cell tensor")
        # positions are referential; conjugate momenta p_k = m_k F^T v_k
        mom = (vel @ F) * masses[:, None]
        backend = "exact" if isinstance(eq, APRExactEquations) else "pr"
        cell_mom = np.zeros((3, 3))
        if backend == "exact":
            # admissible momenta satisfy G = sum_k F^{-T} p_k (x) s_k
            cell_mom = (vel * masses[:, None]).T @ pos
        return APRState(particles, pos, mom, F, cell_mom, eq.ref_volume,
                        eq.piola, eq.cell_inertia, backend, eq.units)
    return NVEState(particles, pos, vel * masses[:, None], eq.units)


def sample_initial(density: InitialDensity, m: int, eq: Equations) -> List:
    """Draw M independent initial states; deterministic given density.seed."""
    if m < 1:
        raise ValueError("M must be at least 1")
    streams = np.random.SeedSequence(density.seed).spawn(m)
    return [_sample_one(eq, density, np.random.default_rng(ss)) for ss in streams]


@dataclass
class EnsembleBatch:
    """M independent trajectories sharing backend, potentials and stepping."""

    trajectories: List[Trajectory]
    seed: int
    backend: str

    @property
    def m(self) -> int:
        return len(self.trajectories)

    def common_time_range(self) -> Tuple[float, float]:
        t0 = max(tr.t[0] for tr in self.trajectories)
        t1 = min(tr.t[-1] for tr in self.trajectories)
        return float(t0), float(t1)


def _integrate_one(args):
    eq, state, n_steps, spec, sample_every = args
    return integrate(eq, state, n_steps, spec, sample_every)


def run_batch(density: InitialDensity, m: int, eq: Equations,
              spec: IntegratorSpec, n_steps: int, sample_every: int = 1,
              workers: int = 1) -> EnsembleBatch:
    """Integrate M trajectories from the sampled initial density.

    Results are bit-identical for any worker count: sampling happens up
    front from per-sample spawned streams and trajectories are collected in
    sample order.
    """
    states = sample_initial(density, m, eq)
    jobs = [(eq, st, n_steps, spec, sample_every) for st in states]
    if workers > 1 and m > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trajectories = list(pool.map(_integrate_one, jobs))
    else:
        trajectories = [_integrate_one(j) for j in jobs]
    return EnsembleBatch(trajectories, density.seed, eq.backend)


def ensemble_average(batch: EnsembleBatch, observable: Callable, t: float,
                     weighted: bool = False):
    """Monte Carlo estimate of <o>(t) with its standard error.

    `observable` maps a Snapshot (state interpolated to physical time t) to
    a scalar or array.  With weighted=True each sample is multiplied by its
    Snapshot weight (s(t)/s(0) for NH), realizing the virtual-time Liouville
    measure at fixed physical time.
    """
    values = []
    for tr in batch.trajectories:
        snap = tr.snapshot(t)
        v = np.asarray(observable(snap), dtype=float)
        if weighted:
            v = v * snap.weight
        values.append(v)
    values = np.stack(values)
    mean = values.mean(axis=0)
    if len(values) > 1:
        stderr = values.std(axis=0, ddof=1) / np.sqrt(len(values))
    else:
        stderr = np.zeros_like(mean)
    return mean, stderr


def nve_batch_as_nh(batch: EnsembleBatch, thermal_inertia: float,
                    target_temperature: float) -> EnsembleBatch:
    """Re-tag NVE trajectories as NH with frozen s = 1, p_s = 0.

    Emulates the infinite-thermal-inertia limit on shared trajectories; every
    NH field computed from the result must equal its NVE counterpart.
    """
    out = []
    for tr in batch.trajectories:
        n = tr.n_samples
        units = tr.units
        a = (3 * tr.particles.n + 1) * units.k_b * target_temperature
        aux = {"s": np.ones(n), "p_s": np.zeros(n)}
        meta = dict(tr.meta)
        meta.update(thermal_inertia=thermal_inertia,
                    target_temperature=target_temperature,
                    entropic_coefficient=a)
        out.append(Trajectory("nh", tr.particles, tr.tau, tr.t, tr.positions,
                              tr.momenta, aux, tr.step, meta, units))
    return EnsembleBatch(out, batch.seed, "nh")


def nve_batch_as_apr(batch: EnsembleBatch, cell_inertia: float,
                     ref_volume: float) -> EnsembleBatch:
    """Re-tag NVE trajectories as APR with F = I frozen, G = 0, P = 0."""
    out = []
    for tr in batch.trajectories:
        n = tr.n_samples
        aux = {"cell": np.broadcast_to(np.eye(3), (n, 3, 3)).copy(),
               "cell_momentum": np.zeros((n, 3, 3))}
        meta = dict(tr.meta)
        meta.update(ref_volume=ref_volume, cell_inertia=cell_inertia,
                    piola=np.zeros((3, 3)))
        out.append(Trajectory("apr", tr.particles, tr.tau, tr.t, tr.positions,
                              tr.momenta, aux, tr.step, meta, tr.units))
    return EnsembleBatch(out, batch.seed, "apr")
