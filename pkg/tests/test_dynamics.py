"""Extended-Hamiltonian equations of motion and symplectic integration."""

import numpy as np
import pytest

from iknmd.core import APRState, NHState, NVEState, ParticleSet, StateError
from iknmd.dynamics import (APREquations, APRExactEquations, ConstraintError,
                            IntegratorSpec, NHEquations, NVEEquations,
                            eom_apr_exact, eom_apr_pr, eom_nh,
                            hamiltonian_apr_pr, hamiltonian_nh, integrate,
                            kinetic_energy_exact_apr, make_equations,
                            phase_volume_check, real_time_map, rhs_divergence,
                            rhs_jacobian, step)
from iknmd.potentials import HarmonicPair, HarmonicTrap, LennardJones


def _nh_state(n=1, s=1.0, p_s=0.0, q=1.0, temp=1.0, positions=None,
              momenta=None, seed=None):
    ps = ParticleSet.uniform(n)
    if seed is not None:
        rng = np.random.default_rng(seed)
        positions = rng.uniform(-0.5, 0.5, (n, 3)) + np.arange(n)[:, None]
        momenta = rng.normal(size=(n, 3))
    return NHState(particles=ps,
                   positions=np.zeros((n, 3)) if positions is None else positions,
                   momenta=np.zeros((n, 3)) if momenta is None else momenta,
                   s=s, p_s=p_s, thermal_inertia=q, target_temperature=temp)


def _apr_state(n=1, cell=None, mom=None, g=None, piola=None, w=1.0,
               omega=1.0, backend="pr", seed=None):
    ps = ParticleSet.uniform(n)
    rng = np.random.default_rng(0 if seed is None else seed)
    ref = rng.uniform(-0.5, 0.5, (n, 3)) + np.arange(n)[:, None]
    return APRState(particles=ps, ref_positions=ref,
                    momenta=np.zeros((n, 3)) if mom is None else mom,
                    cell=np.eye(3) if cell is None else cell,
                    cell_momentum=np.zeros((3, 3)) if g is None else g,
                    ref_volume=omega,
                    piola=np.zeros((3, 3)) if piola is None else piola,
                    cell_inertia=w, backend=backend)


def test_hamiltonian_nh_analytic_points():
    # N=1, everything zero, s=1, T=1: H = A (ln 1 - 1) = -(3+1)
    st = _nh_state()
    assert hamiltonian_nh(st) == pytest.approx(-4.0)
    st = _nh_state(s=float(np.e))
    assert hamiltonian_nh(st) == pytest.approx(0.0, abs=1e-12)


def test_hamiltonian_nh_term_by_term():
    lj = LennardJones()
    rng = np.random.default_rng(21)
    st = _nh_state(n=2, s=1.3, p_s=0.4, q=2.0, temp=1.5, seed=21)
    r = st.positions
    ref = (np.sum(st.momenta ** 2) / (2.0 * st.s ** 2)
           + st.p_s ** 2 / (2.0 * st.thermal_inertia)
           + lj.energy(np.linalg.norm(r[0] - r[1]))
           + st.entropic_coefficient * (np.log(st.s) - 1.0))
    assert hamiltonian_nh(st, pair=lj) == pytest.approx(ref, abs=1e-12)


def test_eom_nh_analytic_points():
    eq = NHEquations(ParticleSet.uniform(1), 1.0, 1.0)
    st = _nh_state()
    rhs = eom_nh(st)
    dq, dp, ds, dps = (rhs[:3], rhs[eq.half:eq.half + 3],
                       rhs[eq.half - 1], rhs[-1])
    assert np.allclose(dq, 0.0)
    assert np.allclose(dp, 0.0)
    assert ds == 0.0
    assert dps == pytest.approx(-4.0)
    st = _nh_state(momenta=np.array([[1.0, 0, 0]]))
    rhs = eom_nh(st)
    assert np.allclose(rhs[:3], [1, 0, 0])
    assert rhs[-1] == pytest.approx(1.0 - 4.0)


def test_eom_is_symplectic_gradient():
    """RHS = J grad H at random states, via central finite differences."""
    lj = LennardJones()
    for name, state in [("nh", _nh_state(n=2, s=1.2, p_s=-0.3, q=3.0, seed=4)),
                        ("apr", _apr_state(n=2, cell=np.eye(3) + 0.1,
                                           mom=np.ones((2, 3)) * 0.3,
                                           g=0.2 * np.eye(3),
                                           piola=0.1 * np.eye(3), seed=4))]:
        eq = make_equations(state, pair=lj)
        z = eq.pack(state)
        rhs = eq.rhs(z)
        d = z.size
        half = eq.half
        eps = 1e-6
        grad = np.empty(d)
        for i in range(d):
            zp = z.copy()
            zm = z.copy()
            zp[i] += eps
            zm[i] -= eps
            grad[i] = (eq.hamiltonian(zp) - eq.hamiltonian(zm)) / (2 * eps)
        expected = np.concatenate([grad[half:], -grad[:half]])
        assert np.allclose(rhs, expected, rtol=1e-6, atol=1e-7), name


def test_real_time_map():
    tau = np.linspace(0.0, 1.0, 1001)
    assert np.allclose(real_time_map(np.ones_like(tau), tau), tau)
    assert np.allclose(real_time_map(2.0 * np.ones_like(tau), tau), tau / 2)
    t = real_time_map(np.exp(tau), tau)
    assert t[-1] == pytest.approx(1.0 - np.exp(-1.0), abs=1e-6)


def test_kinetic_energy_exact_apr_expansion():
    ps = ParticleSet.uniform(3, 1.5)
    rng = np.random.default_rng(8)
    s = rng.normal(size=(3, 3))
    F = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
    sdot = rng.normal(size=(3, 3))
    fdot = rng.normal(size=(3, 3))
    total, (t_ss, t_ff, t_mx) = kinetic_energy_exact_apr(ps, s, F, sdot, fdot)
    direct = 0.5 * np.sum(1.5 * np.sum((sdot @ F.T + s @ fdot.T) ** 2, axis=1))
    assert total == pytest.approx(direct, abs=1e-12)
    assert t_ss + t_ff + t_mx == pytest.approx(direct, abs=1e-12)
    # frozen cell: only the Cauchy-Born term
    total, (t_ss, t_ff, t_mx) = kinetic_energy_exact_apr(ps, s, np.eye(3),
                                                         sdot, np.zeros((3, 3)))
    assert total == pytest.approx(0.5 * np.sum(1.5 * sdot ** 2))
    assert t_ff == 0.0 and t_mx == 0.0


def test_hamiltonian_apr_analytic_points():
    st = _apr_state(piola=2.0 * np.eye(3))
    # F = I, everything else zero: H = -omega tr(P) = -6
    assert hamiltonian_apr_pr(st) == pytest.approx(-6.0)
    st = _apr_state(mom=np.array([[1.0, 0, 0]]))
    assert hamiltonian_apr_pr(st) == pytest.approx(0.5)


def test_eom_apr_enthalpic_driving():
    st = _apr_state(piola=np.eye(3), omega=2.0)
    eq = APREquations(st.particles, st.cell_inertia, st.ref_volume, st.piola)
    rhs = eq.rhs(eq.pack(st))
    # only Gdot = omega P is nonzero
    n = st.particles.n
    dq = rhs[:eq.half]
    assert np.allclose(dq, 0.0)
    gdot = rhs[eq.half + 3 * n:].reshape(3, 3)
    assert np.allclose(gdot, 2.0 * np.eye(3))


def test_apr_exact_matches_pr_on_constraint_set():
    """Fdot = 0 construction: G = 0 and referential momenta balanced so the
    exact backend's minimal-norm velocities coincide with the PR ones."""
    ps = ParticleSet.uniform(4)
    rng = np.random.default_rng(13)
    s = rng.uniform(-1.0, 1.0, (4, 3))
    F = np.eye(3) + 0.15 * rng.normal(size=(3, 3))
    hp = HarmonicPair(spring=1.0, rest_length=1.0)
    # momenta with sum_k F^{-T} p_k (x) s_k = 0: antisymmetrize over a pair
    p = rng.normal(size=(4, 3))
    # project out the constraint by least squares on the 9 conditions
    finv_t = np.linalg.inv(F).T
    a = np.zeros((9, 12))
    for k in range(4):
        for i in range(3):
            for j in range(3):
                a[3 * i + j, 3 * k:3 * k + 3] += finv_t[i] * s[k, j]
    p_flat = p.ravel() - np.linalg.lstsq(a, a @ p.ravel(), rcond=None)[0] @ np.eye(12)
    p = p_flat.reshape(4, 3)
    base = dict(particles=ps, ref_positions=s, momenta=p, cell=F,
                cell_momentum=np.zeros((3, 3)), ref_volume=1.0,
                piola=0.2 * np.eye(3), cell_inertia=2.0)
    st_pr = APRState(backend="pr", **base)
    st_ex = APRState(backend="exact", **base)
    rhs_pr = eom_apr_pr(st_pr, pair=hp)
    rhs_ex = eom_apr_exact(st_ex, pair=hp)
    # particle blocks agree; the Gdot blocks agree since Fdot = 0
    assert np.allclose(rhs_pr, rhs_ex, atol=1e-8)


def test_apr_exact_constraint_error():
    st = _apr_state(n=2, mom=np.ones((2, 3)), backend="exact", seed=2)
    with pytest.raises(ConstraintError):
        eom_apr_exact(st)


def test_make_equations_dispatch():
    ps = ParticleSet.uniform(1)
    nve = NVEState(particles=ps, positions=np.zeros((1, 3)),
                   momenta=np.zeros((1, 3)))
    assert isinstance(make_equations(nve), NVEEquations)
    assert isinstance(make_equations(_nh_state()), NHEquations)
    assert isinstance(make_equations(_apr_state()), APREquations)
    assert isinstance(make_equations(_apr_state(backend="exact")),
                      APRExactEquations)
    with pytest.raises(ValueError):
        make_equations(_apr_state(), external=HarmonicTrap())


def test_integrate_harmonic_oscillator_drift():
    ps = ParticleSet.uniform(1)
    trap = HarmonicTrap(kappa=1.0)
    st = NVEState(particles=ps, positions=np.array([[1.0, 0, 0]]),
                  momenta=np.zeros((1, 3)))
    eq = make_equations(st, external=trap)
    spec = IntegratorSpec(scheme="implicit_midpoint", dt=0.01)
    tr = integrate(eq, st, 10 ** 4, spec, sample_every=100)
    assert tr.meta["max_rel_h_drift"] <= 1e-6
    # position matches the closed-form cosine
    t_end = tr.t[-1]
    assert tr.positions[-1, 0, 0] == pytest.approx(np.cos(t_end), abs=1e-3)


def test_integrate_fixed_point_is_constant():
    ps = ParticleSet.uniform(2)
    st = NVEState(particles=ps, positions=np.array([[0.0, 0, 0], [1.0, 0, 0]]),
                  momenta=np.zeros((2, 3)))
    eq = make_equations(st, pair=HarmonicPair(spring=1.0, rest_length=1.0))
    tr = integrate(eq, st, 100, IntegratorSpec(dt=0.01))
    assert np.allclose(tr.positions, tr.positions[0])
    assert np.allclose(tr.momenta, 0.0)


def test_nh_free_particle_conservation():
    st = _nh_state(momenta=np.array([[0.7, -0.2, 0.1]]), s=1.1, p_s=0.2,
                   q=2.0)
    eq = make_equations(st)
    spec = IntegratorSpec(dt=5e-5)
    tr = integrate(eq, st, 1000, spec, sample_every=10)
    assert tr.meta["max_rel_h_drift"] <= 1e-8


def test_rk4_cross_check():
    st = _nh_state(n=2, s=1.1, p_s=0.1, q=2.0, seed=7)
    lj = LennardJones()
    eq = make_equations(st, pair=lj)
    mid = integrate(eq, st, 200, IntegratorSpec(scheme="implicit_midpoint", dt=1e-3))
    rk = integrate(eq, st, 200, IntegratorSpec(scheme="rk4", dt=1e-3))
    assert np.allclose(mid.positions[-1], rk.positions[-1], atol=1e-8)


def test_step_single():
    st = _nh_state(momenta=np.array([[1.0, 0, 0]]))
    eq = make_equations(st)
    nxt = step(eq, st, IntegratorSpec(dt=1e-3))
    assert isinstance(nxt, NHState)
    assert nxt.positions[0, 0] == pytest.approx(1e-3, rel=1e-3)


def test_rhs_divergence_zero():
    lj = LennardJones()
    rng = np.random.default_rng(31)
    st = _nh_state(n=2, s=1.2, p_s=0.3, q=2.0, seed=31)
    eq = make_equations(st, pair=lj)
    z = eq.pack(st)
    assert abs(rhs_divergence(eq, z)) <= 1e-10
    jac = rhs_jacobian(eq, z)
    assert abs(np.trace(jac)) <= 1e-8


def test_phase_volume_unit_determinant():
    st = _nh_state(n=1, s=1.1, p_s=0.2, q=2.0,
                   momenta=np.array([[0.4, 0.1, -0.3]]))
    eq = make_equations(st)
    det = phase_volume_check(eq, st, IntegratorSpec(dt=1e-3), 0)
    assert det == 1.0
    det = phase_volume_check(eq, st, IntegratorSpec(dt=1e-3), 200)
    assert det == pytest.approx(1.0, abs=1e-8)


def test_integrator_spec_validation():
    with pytest.raises(ValueError):
        IntegratorSpec(dt=-0.1)
    with pytest.raises(ValueError):
        IntegratorSpec(dt=0.1, scheme="euler")
