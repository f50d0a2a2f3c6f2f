"""Pairwise interaction potentials and unary external potentials.

All evaluators are pure functions of positions and are written to be
dtype-preserving (they accept complex inputs, with branching done on real
parts) so that complex-step differentiation of the dynamics works.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "PairPotential",
    "LennardJones",
    "HarmonicPair",
    "ExternalPotential",
    "NoExternal",
    "HarmonicTrap",
    "UniformField",
    "pair_energy",
    "pair_force_scalar",
    "total_potential",
    "force_on_particle",
    "internal_energy_forces",
    "pair_site_energies",
]


class PairPotential:
    """Scalar pair law V(r) with derivative V'(r), r > 0."""

    cutoff: Optional[float] = None

    def energy(self, r):
        raise NotImplementedError

    def derivative(self, r):
        raise NotImplementedError


@dataclass(frozen=True)
class LennardJones(PairPotential):
    """12-6 Lennard-Jones, optionally energy-and-force shifted at a cutoff.

    With a cutoff r_c the potential is replaced by
    V(r) - V(r_c) - V'(r_c) (r - r_c) for r < r_c and 0 beyond, which keeps
    both V and V' continuous (C^1) so conservation monitors stay meaningful.
    """

    epsilon: float = 1.0
    sigma: float = 1.0
    cutoff: Optional[float] = 2.5

    def _raw(self, r):
        sr6 = (self.sigma / r) ** 6
        return 4.0 * self.epsilon * (sr6 * sr6 - sr6)

    def _raw_derivative(self, r):
        sr6 = (self.sigma / r) ** 6
        return 4.0 * self.epsilon * (-12.0 * sr6 * sr6 + 6.0 * sr6) / r

    def energy(self, r):
        r = np.asarray(r)
        if np.any(np.real(r) <= 0):
            raise ValueError("pair separation must be positive")
        if self.cutoff is None:
            return self._raw(r)
        rc = self.cutoff
        inside = np.real(r) < rc
        shifted = self._raw(r) - self._raw(rc) - self._raw_derivative(rc) * (r - rc)
        return np.where(inside, shifted, np.zeros_like(r))

    def derivative(self, r):
        r = np.asarray(r)
        if np.any(np.real(r) <= 0):
            raise ValueError("pair separation must be positive")
        if self.cutoff is None:
            return self._raw_derivative(r)
        rc = self.cutoff
        inside = np.real(r) < rc
        return np.where(inside, self._raw_derivative(r) - self._raw_derivative(rc),
                        np.zeros_like(r))


@dataclass(frozen=True)
class HarmonicPair(PairPotential):
    """Harmonic bond V(r) = (k/2)(r - r0)^2 between every pair."""

    spring: float = 1.0
    rest_length: float = 1.0
    cutoff: Optional[float] = None

    def energy(self, r):
        r = np.asarray(r)
        if np.any(np.real(r) <= 0):
            raise ValueError("pair separation must be positive")
        return 0.5 * self.spring * (r - self.rest_length) ** 2

    def derivative(self, r):
        r = np.asarray(r)
        if np.any(np.real(r) <= 0):
            raise ValueError("pair separation must be positive")
        return self.spring * (r - self.rest_length)


class ExternalPotential:
    """Unary external potential V^e_k(r) acting on each particle."""

    def value(self, positions):
        """Per-particle potential values, shape (N,)."""
        raise NotImplementedError

    def gradient(self, positions):
        """Per-particle gradients dV^e/dr_k, shape (N, 3)."""
        raise NotImplementedError


@dataclass(frozen=True)
class NoExternal(ExternalPotential):
    def value(self, positions):
        positions = np.asarray(positions)
        return np.zeros(positions.shape[0], dtype=positions.dtype)

    def gradient(self, positions):
        positions = np.asarray(positions)
        return np.zeros_like(positions)


@dataclass(frozen=True)
class HarmonicTrap(ExternalPotential):
    """V^e(r) = (kappa/2) |r - center|^2."""

    kappa: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)

    def value(self, positions):
        d = np.asarray(positions) - np.asarray(self.center)
        return 0.5 * self.kappa * np.sum(d * d, axis=-1)

    def gradient(self, positions):
        d = np.asarray(positions) - np.asarray(self.center)
        return self.kappa * d


@dataclass(frozen=True)
class UniformField(ExternalPotential):
    """V^e(r) = g . r (constant external force -g on every particle)."""

    g: tuple = (0.0, 0.0, -1.0)

    def value(self, positions):
        return np.asarray(positions) @ np.asarray(self.g)

    def gradient(self, positions):
        positions = np.asarray(positions)
        return np.broadcast_to(np.asarray(self.g, dtype=positions.dtype),
                               positions.shape).copy()


def pair_energy(potential: PairPotential, r):
    """V(r) for scalar separation r > 0."""
    return potential.energy(r)


def pair_force_scalar(potential: PairPotential, r):
    """V'(r) for scalar separation r > 0."""
    return potential.derivative(r)


def _pair_geometry(positions):
    """Separation vectors x_jk = r_j - r_k and distances for all j != k."""
    positions = np.asarray(positions)
    diff = positions[:, None, :] - positions[None, :, :]  # diff[j, k] = r_j - r_k
    dist2 = np.sum(diff * diff, axis=-1)
    n = positions.shape[0]
    off = ~np.eye(n, dtype=bool)
    if np.any(np.real(dist2[off]) <= 0):
        raise ValueError("coincident particles")
    dist = np.sqrt(np.where(off, dist2, np.ones_like(dist2)))
    return diff, dist, off


def internal_energy_forces(positions, pair: Optional[PairPotential]):
    """Total pair energy and per-particle internal forces -dV^i/dr_k.

    O(N^2) full pair sum; forces on j and k come from one shared pair
    evaluation, so Newton's third law holds exactly.
    """
    positions = np.asarray(positions)
    if pair is None or positions.shape[0] < 2:
        return 0.0, np.zeros_like(positions)
    diff, dist, off = _pair_geometry(positions)
    v = np.where(off, pair.energy(np.where(off, dist, np.ones_like(dist))), 0.0)
    dv = np.where(off, pair.derivative(np.where(off, dist, np.ones_like(dist))), 0.0)
    energy = 0.5 * np.sum(v)
    # force on j: -sum_k V'(|x_jk|) x_jk/|x_jk|
    coef = np.where(off, dv / dist, 0.0)
    forces = -np.sum(coef[:, :, None] * diff, axis=1)
    return energy, forces


def pair_site_energies(positions, pair: Optional[PairPotential]):
    """Per-site pair energies e_k = sum_{j != k} V_jk / 2, shape (N,)."""
    positions = np.asarray(positions)
    if pair is None or positions.shape[0] < 2:
        return np.zeros(positions.shape[0], dtype=positions.dtype)
    diff, dist, off = _pair_geometry(positions)
    v = np.where(off, pair.energy(np.where(off, dist, np.ones_like(dist))), 0.0)
    return 0.5 * np.sum(v, axis=0)


def total_potential(positions, pair: Optional[PairPotential],
                    ext: Optional[ExternalPotential]) -> float:
    """V = (1/2) sum_{j != k} V_jk(|r_j - r_k|) + sum_k V^e_k(r_k)."""
    energy, _ = internal_energy_forces(positions, pair)
    if ext is not None:
        energy = energy + np.sum(ext.value(positions))
    return energy


def total_forces(positions, pair: Optional[PairPotential],
                 ext: Optional[ExternalPotential]):
    """-dV/dr_k for all particles, shape (N, 3)."""
    _, forces = internal_energy_forces(positions, pair)
    if ext is not None:
        forces = forces - ext.gradient(positions)
    return forces


def force_on_particle(positions, pair: Optional[PairPotential],
                      ext: Optional[ExternalPotential], k: int):
    """-dV/dr_k for particle k."""
    return total_forces(positions, pair, ext)[k]
