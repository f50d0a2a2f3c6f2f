"""Pair and external potentials, energies and forces."""

import numpy as np
import pytest

from iknmd.potentials import (HarmonicPair, HarmonicTrap, LennardJones,
                              UniformField, force_on_particle,
                              internal_energy_forces, pair_energy,
                              pair_force_scalar, pair_site_energies,
                              total_forces, total_potential)


def test_lj_analytic_points():
    lj = LennardJones(cutoff=None)
    rmin = 2.0 ** (1.0 / 6.0)
    assert lj.energy(rmin) == pytest.approx(-1.0, abs=1e-14)
    assert lj.derivative(rmin) == pytest.approx(0.0, abs=1e-12)
    assert lj.energy(1.0) == pytest.approx(0.0, abs=1e-14)
    assert lj.derivative(1.0) == pytest.approx(-24.0)


def test_lj_shifted_cutoff_is_c1():
    lj = LennardJones(cutoff=2.5)
    assert lj.energy(2.5) == 0.0
    assert lj.derivative(2.5) == 0.0
    assert lj.energy(3.0) == 0.0
    # V and V' continuous across the cutoff
    eps = 1e-7
    assert abs(lj.energy(2.5 - eps)) < 1e-6
    assert abs(lj.derivative(2.5 - eps)) < 1e-6
    with pytest.raises(ValueError):
        lj.energy(-1.0)


def test_harmonic_pair():
    hp = HarmonicPair(spring=1.0, rest_length=1.0)
    assert pair_energy(hp, 1.0) == 0.0
    assert hp.derivative(1.0) == 0.0
    assert pair_energy(hp, 2.0) == pytest.approx(0.5)
    # radial derivative V'(r)
    assert pair_force_scalar(hp, 2.0) == pytest.approx(1.0)


def test_total_potential_two_particles():
    hp = HarmonicPair(spring=1.0, rest_length=1.0)
    r = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    assert total_potential(r, hp, None) == pytest.approx(0.0)
    r = np.array([[0.0, 0, 0], [2.0, 0, 0]])
    assert total_potential(r, hp, None) == pytest.approx(0.5)


def test_total_potential_brute_force_lj_cluster():
    lj = LennardJones()
    rng = np.random.default_rng(11)
    r = rng.uniform(0.0, 1.5, (4, 3)) + np.arange(4)[:, None] * 0.9
    ref = 0.0
    for j in range(4):
        for k in range(4):
            if j == k:
                continue
            ref += 0.5 * lj.energy(np.linalg.norm(r[j] - r[k]))
    assert total_potential(r, lj, None) == pytest.approx(ref, abs=1e-12)
    # site energies carry half of each bond and sum to the total
    assert np.sum(pair_site_energies(r, lj)) == pytest.approx(ref, abs=1e-12)


def test_uniform_field_force():
    g = UniformField(g=(0.0, 0.0, -1.0))
    r = np.array([[0.3, -0.2, 0.9]])
    assert np.allclose(force_on_particle(r, None, g, 0), [0, 0, 1])
    assert g.value(r)[0] == pytest.approx(-0.9)


def test_lj_dimer_zero_force_at_minimum():
    lj = LennardJones(cutoff=None)
    r = np.array([[0.0, 0, 0], [2.0 ** (1.0 / 6.0), 0, 0]])
    f = total_forces(r, lj, None)
    assert np.allclose(f, 0.0, atol=1e-12)


def test_forces_match_finite_difference_gradient():
    lj = LennardJones()
    trap = HarmonicTrap(kappa=0.7, center=(0.1, 0.0, -0.2))
    rng = np.random.default_rng(5)
    r = rng.uniform(0.0, 2.0, (5, 3)) + np.arange(5)[:, None]
    f = total_forces(r, lj, trap)
    eps = 1e-6
    for k in range(5):
        for a in range(3):
            rp = r.copy()
            rm = r.copy()
            rp[k, a] += eps
            rm[k, a] -= eps
            fd = -(total_potential(rp, lj, trap)
                   - total_potential(rm, lj, trap)) / (2 * eps)
            assert f[k, a] == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_newton_third_law():
    lj = LennardJones()
    rng = np.random.default_rng(9)
    r = rng.uniform(0.0, 1.0, (6, 3)) + np.arange(6)[:, None] * 0.8
    _, forces = internal_energy_forces(r, lj)
    assert np.allclose(np.sum(forces, axis=0), 0.0, atol=1e-13)


def test_complex_step_safety():
    # potentials must preserve complex dtype for complex-step derivatives
    hp = HarmonicPair(spring=2.0, rest_length=1.0)
    r = np.array([[0.0, 0, 0], [1.5 + 1e-20j, 0, 0]])
    e = total_potential(r, hp, None)
    assert np.iscomplexobj(e)
    assert np.imag(e) / 1e-20 == pytest.approx(float(np.real(hp.derivative(1.5))))
