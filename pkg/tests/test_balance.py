"""Discrete balance operators and residual assembly."""

import numpy as np
import pytest

from iknmd.balance import (BalanceReport, BalanceSpec, balance_report,
                           convergence_report, divergence, interior_mask,
                           manufactured_fieldset, mass_balance_residual,
                           time_derivative)
from iknmd.core import GridSpec, ParticleSet
from iknmd.dynamics import IntegratorSpec, NVEEquations
from iknmd.ensemble import (Explicit, InitialDensity, MaxwellBoltzmann,
                            ZeroMomentum, nve_batch_as_apr, nve_batch_as_nh,
                            run_batch)
from iknmd.fields import LucyKernel, assemble_fields
from iknmd.potentials import HarmonicPair


def _grid(L=2.0, dx=0.25, h=0.6, times=None):
    if times is None:
        times = np.linspace(0.0, 0.3, 4)
    return GridSpec(lo=np.full(3, -L), hi=np.full(3, L), dx=dx, h=h,
                    times=np.asarray(times, dtype=float))


def test_divergence_exact_on_affine():
    g = _grid()
    A = np.array([[0.3, -0.1, 0.2], [0.0, 0.5, 0.4], [0.7, 0.2, -0.6]])

    def vec(t, X, Y, Z):
        pts = np.stack([X, Y, Z], axis=-1)
        return pts @ A.T + 1.0

    fs = manufactured_fieldset(g, {"w": (1, vec)})
    div = divergence(fs["w"].values, g.dx)
    inner = div[:, 1:-1, 1:-1, 1:-1]
    assert np.allclose(inner, np.trace(A), atol=1e-12)
    # boundary one-sided values are NaN
    assert np.all(np.isnan(div[:, 0]))


def test_divergence_tensor_rows():
    """(div T)_i = d_j T_ji contracts the first tensor index."""
    g = _grid()
    B = np.zeros((3, 3, 3))
    B[1, 0] = [0.0, 2.0, 0.0]  # T_10 = 2y, so (div T)_0 = d_y T_10 = 2

    def tens(t, X, Y, Z):
        pts = np.stack([X, Y, Z], axis=-1)
        return np.einsum("ijk,...k->...ij", B, pts)

    fs = manufactured_fieldset(g, {"T": (2, tens)})
    div = divergence(fs["T"].values, g.dx)
    inner = div[:, 1:-1, 1:-1, 1:-1]
    assert np.allclose(inner[..., 0], 2.0, atol=1e-12)
    assert np.allclose(inner[..., 1:], 0.0, atol=1e-12)


def test_divergence_second_order():
    errs = []
    for dx in (0.2, 0.1):
        g = _grid(L=2.0, dx=dx, h=0.5)

        def vec(t, X, Y, Z):
            return np.stack([np.sin(X), np.zeros_like(Y), np.zeros_like(Z)],
                            axis=-1)

        fs = manufactured_fieldset(g, {"w": (1, vec)})
        div = divergence(fs["w"].values, dx)
        X = g.axes()[0][1:-1]
        exact = np.cos(X)[:, None, None]
        errs.append(np.max(np.abs(div[0, 1:-1, 1:-1, 1:-1] - exact)))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_time_derivative_exact_on_linear():
    g = _grid()
    vals = 2.0 * g.times[:, None, None, None] * np.ones((1,) + g.shape)[0]
    ddt = time_derivative(vals, g.dt)
    assert np.allclose(ddt[1:-1], 2.0, atol=1e-12)
    assert np.all(np.isnan(ddt[0])) and np.all(np.isnan(ddt[-1]))
    with pytest.raises(ValueError):
        time_derivative(vals[:2], g.dt)


def test_time_derivative_second_order():
    errs = []
    for nt in (9, 17):
        times = np.linspace(0.0, 1.0, nt)
        vals = np.sin(times)[:, None, None, None] * np.ones((nt, 3, 3, 3))
        ddt = time_derivative(vals, times[1] - times[0])
        exact = np.cos(times)[1:-1, None, None, None]
        errs.append(np.max(np.abs(ddt[1:-1] - exact)))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_interior_mask_pad():
    g = _grid(L=2.0, dx=0.25, h=0.6)
    mask = interior_mask(g)
    ax = g.axes()[0]
    keep = (ax >= -2.0 + 0.85 - 1e-12) & (ax <= 2.0 - 0.85 + 1e-12)
    assert mask.sum() == keep.sum() ** 3
    with pytest.raises(ValueError):
        interior_mask(_grid(L=0.5, dx=0.25, h=0.6))


def test_manufactured_mass_balance_convergence():
    """Residual of an analytically balanced pair decays at O(dx^2 + dt^2)."""

    def rho(t, X, Y, Z):
        return 2.0 + np.sin(X - t)

    def rho_v(t, X, Y, Z):
        # flux with div(rho v) = -d(rho)/dt = cos(x - t)
        w = np.zeros(X.shape + (3,))
        w[..., 0] = np.sin(X - t)
        return w

    l2 = []
    for dx, nt in ((0.2, 6), (0.1, 11)):
        g = _grid(L=2.0, dx=dx, h=0.5, times=np.linspace(0.0, 0.5, nt))
        fs = manufactured_fieldset(g, {"rho": (0, rho), "rho_v": (1, rho_v)})
        entry = mass_balance_residual(fs, BalanceSpec("nve"))
        l2.append(entry.l2)
    assert l2[0] / l2[1] == pytest.approx(4.0, rel=0.2)


def _static_batch():
    # single free particle at rest: every flux and time derivative vanishes
    pos = np.array([[0.1, -0.2, 0.0]])
    dens = InitialDensity(Explicit(pos), ZeroMomentum(), seed=0)
    eq = NVEEquations(ParticleSet.uniform(1))
    return run_batch(dens, 2, eq, IntegratorSpec(dt=1e-3), n_steps=30,
                     sample_every=10)


def test_exact_zero_static_suite():
    batch = _static_batch()
    g = _grid(L=3.0, dx=0.5, h=1.5, times=np.linspace(0.0, 0.03, 4))
    kern = LucyKernel(1.5)
    suites = [
        (batch, BalanceSpec("nve")),
        (nve_batch_as_nh(batch, thermal_inertia=5.0, target_temperature=1.0),
         BalanceSpec("nh", "collective")),
        (nve_batch_as_nh(batch, thermal_inertia=5.0, target_temperature=1.0),
         BalanceSpec("nh", "distributed")),
        (nve_batch_as_apr(batch, cell_inertia=4.0, ref_volume=1.0),
         BalanceSpec("apr", "collective")),
        (nve_batch_as_apr(batch, cell_inertia=4.0, ref_volume=1.0),
         BalanceSpec("apr", "distributed")),
    ]
    for b, spec in suites:
        fs = assemble_fields(b, g, kern)
        rep = balance_report(fs, spec)
        for name, entry in rep.entries.items():
            assert entry.linf <= 1e-10, (spec.backend, spec.mode, name)


def test_frozen_nh_matches_nve_residuals():
    pair = HarmonicPair(spring=2.0, rest_length=0.8)
    pos = np.array([[-0.5, 0, 0], [0.5, 0, 0]])
    dens = InitialDensity(Explicit(pos),
                          MaxwellBoltzmann(temperature=0.5), seed=11)
    eq = NVEEquations(ParticleSet.uniform(2), pair)
    batch = run_batch(dens, 4, eq, IntegratorSpec(dt=1e-3), n_steps=30,
                      sample_every=10)
    g = _grid(L=3.0, dx=0.5, h=1.5, times=np.linspace(0.0, 0.03, 4))
    kern = LucyKernel(1.5)
    fs = assemble_fields(batch, g, kern, pair=pair)
    rep = balance_report(fs, BalanceSpec("nve"))
    nh = nve_batch_as_nh(batch, thermal_inertia=5.0, target_temperature=1.0)
    fs_nh = assemble_fields(nh, g, kern, pair=pair)
    rep_nh = balance_report(fs_nh, BalanceSpec("nh", "collective"))
    for name in ("mass", "momentum", "energy"):
        a, b = rep[name].residual, rep_nh[name].residual
        assert np.array_equal(a, b, equal_nan=True), name


def test_integrated_residual_shape():
    batch = _static_batch()
    g = _grid(L=3.0, dx=0.5, h=1.5, times=np.linspace(0.0, 0.03, 4))
    fs = assemble_fields(batch, g, LucyKernel(1.5))
    entry = mass_balance_residual(fs, BalanceSpec("nve"))
    integ = entry.integrated(g)
    assert integ.shape == (2,)
    assert np.all(np.abs(integ) <= 1e-12)


def test_spec_and_report_validation():
    with pytest.raises(ValueError):
        BalanceSpec("grand_canonical")
    with pytest.raises(ValueError):
        BalanceSpec("nve", mode="bogus")
    with pytest.raises(ValueError):
        convergence_report(lambda m: {"mass": 1.0 / m}, [16, 64])
    batch = _static_batch()
    g = _grid(L=3.0, dx=0.5, h=1.5, times=np.linspace(0.0, 0.03, 4))
    fs = assemble_fields(batch, g, LucyKernel(1.5), names=["rho"])
    with pytest.raises(KeyError, match="fields missing"):
        mass_balance_residual(fs, BalanceSpec("nve"))


def test_convergence_report_slope_fit():
    rep = convergence_report(lambda m: {"x": 3.0 * m ** -0.5}, [16, 64, 256])
    assert rep["x"]["slope"] == pytest.approx(-0.5, abs=1e-12)
    assert rep["x"]["slope_err"] == pytest.approx(0.0, abs=1e-9)
    assert len(rep["x"]["residuals"]) == 3
