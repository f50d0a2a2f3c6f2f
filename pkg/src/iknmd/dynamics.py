"""Hamiltonians, equations of motion, and structure-respecting integrators.

Every backend exposes the flattened phase vector z = (q, p) in canonical
order, so the right-hand side is exactly the symplectic pairing
dq = dH/dp, dp = -dH/dq.  Both extended Hamiltonians are non-separable, so
the default integrator is the implicit midpoint rule (symplectic for
general Hamiltonians); classical RK4 is provided for cross-checks only.

All right-hand sides are dtype-preserving: evaluating them on complex phase
vectors enables machine-accurate complex-step Jacobians, which back the
Liouville (phase-volume) diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .core import (APRState, NHState, NVEState, ParticleSet, StateError,
                   Trajectory, Units)
from .potentials import (ExternalPotential, PairPotential,
                         internal_energy_forces, total_forces,
                         total_potential)

__all__ = [
    "IntegratorSpec",
    "ConservationMonitor",
    "NVEEquations",
    "NHEquations",
    "APREquations",
    "APRExactEquations",
    "make_equations",
    "hamiltonian_nh",
    "eom_nh",
    "hamiltonian_apr_pr",
    "eom_apr_pr",
    "eom_apr_exact",
    "kinetic_energy_exact_apr",
    "real_time_map",
    "step",
    "integrate",
    "phase_volume_check",
    "rhs_jacobian",
    "rhs_divergence",
    "ConvergenceError",
    "IntegrationAbort",
    "ConstraintError",
]


class ConvergenceError(RuntimeError):
    """Fixed-point iteration of the implicit midpoint rule did not converge."""


class ConstraintError(ValueError):
    """Momenta are off the admissible set of the degenerate Legendre map."""

    def __init__(self, defect: float, tol: float):
        self.defect = defect
        self.tol = tol
        super().__init__(
            f"momenta violate the Legendre constraint set: defect {defect:.3e} > {tol:.1e}")


class IntegrationAbort(RuntimeError):
    """A state invariant failed mid-run; carries the last good trajectory."""

    def __init__(self, message, trajectory: Optional[Trajectory]):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class IntegratorSpec:
    """Scheme and step controls shared by all backends."""

    scheme: str = "implicit_midpoint"  # or "rk4"
    dt: float = 1e-3
    fixed_point_tol: float = 1e-12
    max_iterations: int = 50

    def __post_init__(self):
        if self.scheme not in ("implicit_midpoint", "rk4"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.dt <= 0:
            raise ValueError("step must be positive")


@dataclass
class ConservationMonitor:
    """Running extrema of the invariants every trajectory must respect."""

    h0: float = 0.0
    max_rel_h_drift: float = 0.0
    max_momentum_drift: float = 0.0  # NVE only

    def update_h(self, h):
        drift = abs(h - self.h0) / max(1.0, abs(self.h0))
        if drift > self.max_rel_h_drift:
            self.max_rel_h_drift = drift


# ---------------------------------------------------------------------------
# Equations of motion
# ---------------------------------------------------------------------------


class Equations:
    """Common interface: flattened canonical phase vector z = (q, p)."""

    backend = "?"
    dim = 0
    half = 0  # len(q) == len(p)

    def hamiltonian(self, z):
        raise NotImplementedError

    def rhs(self, z):
        raise NotImplementedError

    def pack(self, state):
        raise NotImplementedError

    def unpack(self, z):
        raise NotImplementedError

    def check(self, z):
        """Raise StateError if z violates a hard state invariant."""


class NVEEquations(Equations):
    """Classical Hamiltonian dynamics: H = sum |p|^2/2m + V(q)."""

    backend = "nve"

    def __init__(self, particles: ParticleSet, pair: Optional[PairPotential] = None,
                 external: Optional[ExternalPotential] = None, units: Units = Units()):
        self.particles = particles
        self.pair = pair
        self.external = external
        self.units = units
        self.half = 3 * particles.n
        self.dim = 2 * self.half

    def hamiltonian(self, z):
        n = self.particles.n
        r = z[:3 * n].reshape(n, 3)
        p = z[3 * n:].reshape(n, 3)
        kin = 0.5 * np.sum(np.sum(p * p, axis=1) / self.particles.masses)
        return kin + total_potential(r, self.pair, self.external)

    def rhs(self, z):
        n = self.particles.n
        r = z[:3 * n].reshape(n, 3)
        p = z[3 * n:].reshape(n, 3)
        dr = p / self.particles.masses[:, None]
        dp = total_forces(r, self.pair, self.external)
        return np.concatenate([dr.ravel(), dp.ravel()])

    def pack(self, state: NVEState):
        return np.concatenate([state.positions.ravel(), state.momenta.ravel()])

    def unpack(self, z) -> NVEState:
        n = self.particles.n
        return NVEState(self.particles, z[:3 * n].reshape(n, 3),
                        z[3 * n:].reshape(n, 3), self.units)


class NHEquations(Equations):
    """Nose extended dynamics in virtual time.

    H = sum |p_k|^2/(2 m_k s^2) + p_s^2/(2Q) + V(q) + A (ln s - 1),
    with A = (3N + 1) k_B T.
    """

    def __init__(self, particles: ParticleSet, thermal_inertia: float,
                 target_temperature: float, pair: Optional[PairPotential] = None,
                 external: Optional[ExternalPotential] = None, units: Units = Units()):
        if thermal_inertia <= 0 or target_temperature <= 0:
            raise StateError("Q and T must be positive")
        self.particles = particles
        self.q_inertia = thermal_inertia
        self.temperature = target_temperature
        self.pair = pair
        self.external = external
        self.units = units
        self.half = 3 * particles.n + 1
        self.dim = 2 * self.half
        self.entropic_coefficient = (3 * particles.n + 1) * units.k_b * target_temperature

    backend = "nh"

    def _split(self, z):
        n = self.particles.n
        r = z[:3 * n].reshape(n, 3)
        s = z[3 * n]
        p = z[self.half:self.half + 3 * n].reshape(n, 3)
        p_s = z[-1]
        return r, s, p, p_s

    def hamiltonian(self, z):
        r, s, p, p_s = self._split(z)
        m = self.particles.masses
        kin = 0.5 * np.sum(np.sum(p * p, axis=1) / m) / s ** 2
        aux = p_s ** 2 / (2.0 * self.q_inertia)
        ent = self.entropic_coefficient * (np.log(s) - 1.0)
        return kin + aux + total_potential(r, self.pair, self.external) + ent

    def rhs(self, z):
        r, s, p, p_s = self._split(z)
        m = self.particles.masses
        dr = p / (m[:, None] * s ** 2)
        ds = p_s / self.q_inertia
        dp = total_forces(r, self.pair, self.external)
        dps = np.sum(np.sum(p * p, axis=1) / m) / s ** 3 - self.entropic_coefficient / s
        return np.concatenate([dr.ravel(), [ds], dp.ravel(), [dps]])

    def pack(self, state: NHState):
        return np.concatenate([state.positions.ravel(), [state.s],
                               state.momenta.ravel(), [state.p_s]])

    def unpack(self, z) -> NHState:
        n = self.particles.n
        return NHState(self.particles, z[:3 * n].reshape(n, 3),
                       z[self.half:self.half + 3 * n].reshape(n, 3),
                       float(z[3 * n]), float(z[-1]),
                       self.q_inertia, self.temperature, self.units)

    def check(self, z):
        if np.real(z[3 * self.particles.n]) <= 0:
            raise StateError("thermostat coordinate s <= 0")


class APREquations(Equations):
    """Andersen-Parrinello-Rahman dynamics with the PR kinetic energy.

    H = sum p_k.(F^T F)^{-1} p_k/(2 m_k) + |G|^2/(2W) + V(F s) - omega_ref P:F.
    """

    backend = "apr"

    def __init__(self, particles: ParticleSet, cell_inertia: float, ref_volume: float,
                 piola, pair: Optional[PairPotential] = None, units: Units = Units()):
        if cell_inertia <= 0 or ref_volume <= 0:
            raise StateError("W and ref_volume must be positive")
        self.particles = particles
        self.cell_inertia = cell_inertia
        self.ref_volume = ref_volume
        self.piola = np.asarray(piola, dtype=float).reshape(3, 3)
        self.pair = pair
        self.units = units
        self.half = 3 * particles.n + 9
        self.dim = 2 * self.half

    def _split(self, z):
        n = self.particles.n
        s = z[:3 * n].reshape(n, 3)
        F = z[3 * n:3 * n + 9].reshape(3, 3)
        p = z[self.half:self.half + 3 * n].reshape(n, 3)
        G = z[self.half + 3 * n:].reshape(3, 3)
        return s, F, p, G

    def hamiltonian(self, z):
        s, F, p, G = self._split(z)
        m = self.particles.masses
        c_inv = np.linalg.inv(F.T @ F)
        kin = 0.5 * np.sum(np.sum((p @ c_inv) * p, axis=1) / m)
        cell_kin = np.sum(G * G) / (2.0 * self.cell_inertia)
        r = s @ F.T
        pot = total_potential(r, self.pair, None)
        enth = -self.ref_volume * np.sum(self.piola * F)
        return kin + cell_kin + pot + enth

    def rhs(self, z):
        s, F, p, G = self._split(z)
        m = self.particles.masses
        c_inv = np.linalg.inv(F.T @ F)
        sdot = (p @ c_inv) / m[:, None]  # (F^T F)^{-1} p_k / m_k
        fdot = G / self.cell_inertia
        r = s @ F.T
        f_phys = total_forces(r, self.pair, None)  # -dV/dr_k
        dp = f_phys @ F  # F^T f_k, row-vector convention
        # -dK/dF = + sum_k m_k (F sdot_k) (x) sdot_k ; -dV/dF = sum_k f_k (x) s_k
        v_aff = sdot @ F.T
        dG = (v_aff * m[:, None]).T @ sdot + f_phys.T @ s + self.ref_volume * self.piola
        return np.concatenate([sdot.ravel(), fdot.ravel(), dp.ravel(), dG.ravel()])

    def pack(self, state: APRState):
        return np.concatenate([state.ref_positions.ravel(), state.cell.ravel(),
                               state.momenta.ravel(), state.cell_momentum.ravel()])

    def unpack(self, z) -> APRState:
        n = self.particles.n
        return APRState(self.particles, z[:3 * n].reshape(n, 3),
                        z[self.half:self.half + 3 * n].reshape(n, 3),
                        z[3 * n:3 * n + 9].reshape(3, 3),
                        z[self.half + 3 * n:].reshape(3, 3),
                        self.ref_volume, self.piola, self.cell_inertia,
                        "pr", self.units)

    def check(self, z):
        n = self.particles.n
        F = np.real(z[3 * n:3 * n + 9]).reshape(3, 3)
        if np.linalg.det(F) <= 1e-12:
            raise StateError("cell tensor determinant <= 0")


class APRExactEquations(APREquations):
    """APR dynamics with the exact (degenerate) Lagrangian kinetic energy.

    The Legendre map of K_L is singular with a structural 9-dimensional
    kernel; admissible momenta satisfy G = sum_k F^{-T} p_k (x) s_k.
    Velocities are taken as the minimal-norm solution of the velocity
    reconstruction problem, and the configurational forces follow from
    dK/dq = -dK_L/dq evaluated at those velocities.
    """

    backend = "apr"
    constraint_tol = 1e-10

    def constraint_defect(self, z) -> float:
        s, F, p, G = self._split(z)
        m = self.particles.masses
        v = (p @ np.linalg.inv(F)) / m[:, None]  # F^{-T} p_k / m_k
        g_adm = (v * m[:, None]).T @ s
        return float(np.linalg.norm(np.real(G - g_adm)))

    def hamiltonian(self, z):
        s, F, p, G = self._split(z)
        m = self.particles.masses
        v = (p @ np.linalg.inv(F)) / m[:, None]
        kin = 0.5 * np.sum(m * np.sum(v * v, axis=1))
        r = s @ F.T
        pot = total_potential(r, self.pair, None)
        enth = -self.ref_volume * np.sum(self.piola * F)
        return kin + pot + enth

    def _velocity_matrix(self, s, F):
        """B with (B u)_k = F sdot_k + Fdot s_k for u = (sdot, vec Fdot)."""
        n = self.particles.n
        B = np.zeros((3 * n, 3 * n + 9))
        for k in range(n):
            B[3 * k:3 * k + 3, 3 * k:3 * k + 3] = F
            for a in range(3):
                # component a of Fdot s_k is Fdot[a, :] . s_k
                B[3 * k + a, 3 * n + 3 * a:3 * n + 3 * a + 3] = s[k]
        return B

    def rhs(self, z):
        defect = self.constraint_defect(z)
        if defect > self.constraint_tol:
            raise ConstraintError(defect, self.constraint_tol)
        s, F, p, G = self._split(z)
        m = self.particles.masses
        v = (p @ np.linalg.inv(F)) / m[:, None]
        B = self._velocity_matrix(np.real(s), np.real(F))
        u, *_ = np.linalg.lstsq(B.astype(v.dtype), v.ravel(), rcond=None)
        n = self.particles.n
        sdot = u[:3 * n].reshape(n, 3)
        fdot = u[3 * n:].reshape(3, 3)
        r = s @ F.T
        f_phys = total_forces(r, self.pair, None)
        # dp_k = dK_L/ds_k - dV/ds_k = m_k Fdot^T v_k + F^T f_k
        dp = (v * m[:, None]) @ fdot + f_phys @ F
        # dG = dK_L/dF - dV/dF + omega P = sum m_k v_k (x) sdot_k + sum f_k (x) s_k + omega P
        dG = (v * m[:, None]).T @ sdot + f_phys.T @ s + self.ref_volume * self.piola
        return np.concatenate([sdot.ravel(), fdot.ravel(), dp.ravel(), dG.ravel()])

    def unpack(self, z) -> APRState:
        state = super().unpack(z)
        return replace(state, backend="exact")


def make_equations(state, pair=None, external=None) -> Equations:
    """Build the equations of motion matching a state container."""
    if isinstance(state, NVEState):
        return NVEEquations(state.particles, pair, external, state.units)
    if isinstance(state, NHState):
        return NHEquations(state.particles, state.thermal_inertia,
                           state.target_temperature, pair, external, state.units)
    if isinstance(state, APRState):
        cls = APRExactEquations if state.backend == "exact" else APREquations
        if external is not None:
            raise ValueError("APR dynamics does not support external potentials")
        return cls(state.particles, state.cell_inertia, state.ref_volume,
                   state.piola, pair, state.units)
    raise TypeError(f"unsupported state type {type(state)!r}")


# convenience wrappers mirroring the operation-level API


def hamiltonian_nh(state: NHState, pair=None, external=None) -> float:
    eq = make_equations(state, pair, external)
    return float(eq.hamiltonian(eq.pack(state)))


def eom_nh(state: NHState, pair=None, external=None) -> np.ndarray:
    eq = make_equations(state, pair, external)
    return eq.rhs(eq.pack(state))


def hamiltonian_apr_pr(state: APRState, pair=None) -> float:
    eq = APREquations(state.particles, state.cell_inertia, state.ref_volume,
                      state.piola, pair, state.units)
    return float(eq.hamiltonian(eq.pack(state)))


def eom_apr_pr(state: APRState, pair=None) -> np.ndarray:
    eq = APREquations(state.particles, state.cell_inertia, state.ref_volume,
                      state.piola, pair, state.units)
    return eq.rhs(eq.pack(state))


def eom_apr_exact(state: APRState, pair=None) -> np.ndarray:
    eq = APRExactEquations(state.particles, state.cell_inertia, state.ref_volume,
                           state.piola, pair, state.units)
    return eq.rhs(eq.pack(state))


def kinetic_energy_exact_apr(particles: ParticleSet, ref_positions, cell,
                             ref_velocities, cell_velocity):
    """Exact Lagrangian kinetic energy (1/2) sum m_k |F sdot_k + Fdot s_k|^2.

    Returns (total, (term_ss, term_FF, term_mixed)) where the three terms are
    the quadratic-form expansion in (sdot, Fdot).
    """
    s = np.asarray(ref_positions, dtype=float)
    F = np.asarray(cell, dtype=float)
    sdot = np.asarray(ref_velocities, dtype=float)
    fdot = np.asarray(cell_velocity, dtype=float)
    m = particles.masses
    v = sdot @ F.T + s @ fdot.T
    total = 0.5 * np.sum(m * np.sum(v * v, axis=1))
    mom2_sdot = (sdot * m[:, None]).T @ sdot
    mom2_s = (s * m[:, None]).T @ s
    term_ss = 0.5 * np.sum((F.T @ F) * mom2_sdot)
    term_ff = 0.5 * np.sum((fdot.T @ fdot) * mom2_s)
    # cross term sum_k m_k (F sdot_k) . (Fdot s_k) = (F^T Fdot) : sum m sdot (x) s
    term_mixed = np.sum((F.T @ fdot) * ((sdot * m[:, None]).T @ s))
    return total, (term_ss, term_ff, term_mixed)


def real_time_map(s_samples, tau) -> np.ndarray:
    """Physical time t(tau) = int_0^tau d alpha / s(alpha), composite trapezoid.

    `s_samples` and `tau` are aligned arrays on the integrator's tau grid.
    """
    s = np.asarray(s_samples, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(s <= 0):
        raise StateError("non-positive s encountered in real-time map")
    inv = 1.0 / s
    t = np.zeros_like(tau)
    t[1:] = np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(tau))
    return t


# ---------------------------------------------------------------------------
# Integrators
# ---------------------------------------------------------------------------


def _implicit_midpoint(eq: Equations, z, spec: IntegratorSpec):
    dt = spec.dt
    w = z + dt * eq.rhs(z)  # explicit Euler predictor
    for _ in range(spec.max_iterations):
        w_new = z + dt * eq.rhs(0.5 * (z + w))
        err = np.max(np.abs(w_new - w))
        w = w_new
        if err <= spec.fixed_point_tol * (1.0 + np.max(np.abs(w))):
            return w
    raise ConvergenceError(
        f"implicit midpoint fixed point not converged after {spec.max_iterations}"
        " iterations; try a smaller step")


def _rk4(eq: Equations, z, spec: IntegratorSpec):
    dt = spec.dt
    k1 = eq.rhs(z)
    k2 = eq.rhs(z + 0.5 * dt * k1)
    k3 = eq.rhs(z + 0.5 * dt * k2)
    k4 = eq.rhs(z + dt * k3)
    return z + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def step(eq: Equations, state, spec: IntegratorSpec):
    """Advance one state by one integrator step; returns the new state."""
    z = eq.pack(state)
    stepper = _implicit_midpoint if spec.scheme == "implicit_midpoint" else _rk4
    z_next = stepper(eq, z, spec)
    eq.check(z_next)
    return eq.unpack(z_next)


def _total_momentum(eq, z):
    n = eq.particles.n
    p = z[eq.half:eq.half + 3 * n].reshape(n, 3)
    return np.sum(p, axis=0)


def integrate(eq: Equations, state0, n_steps: int, spec: IntegratorSpec,
              sample_every: int = 1) -> Trajectory:
    """Integrate n_steps steps and return the sampled Trajectory.

    Conservation diagnostics land in Trajectory.meta.  A state-invariant
    failure raises IntegrationAbort carrying the trajectory up to the last
    good sample.
    """
    z = eq.pack(state0)
    eq.check(z)
    stepper = _implicit_midpoint if spec.scheme == "implicit_midpoint" else _rk4
    monitor = ConservationMonitor(h0=float(eq.hamiltonian(z)))
    nh = isinstance(eq, NHEquations)
    p0 = _total_momentum(eq, z) if eq.backend == "nve" else None

    taus = [0.0]
    samples = [z]
    t_phys = 0.0
    t_samples = [0.0]
    n_part = eq.particles.n

    def record(i, z, t):
        taus.append(i * spec.dt)
        samples.append(z)
        t_samples.append(t)

    def build_trajectory():
        tau_arr = np.asarray(taus)
        zs = np.stack(samples)
        pos = zs[:, :3 * n_part].reshape(-1, n_part, 3)
        mom = zs[:, eq.half:eq.half + 3 * n_part].reshape(-1, n_part, 3)
        aux = {}
        meta = {"max_rel_h_drift": monitor.max_rel_h_drift,
                "max_momentum_drift": monitor.max_momentum_drift,
                "h0": monitor.h0}
        if nh:
            aux["s"] = zs[:, 3 * n_part]
            aux["p_s"] = zs[:, -1]
            t_arr = np.asarray(t_samples)
            meta.update(thermal_inertia=eq.q_inertia,
                        target_temperature=eq.temperature,
                        entropic_coefficient=eq.entropic_coefficient)
        elif eq.backend == "apr":
            aux["cell"] = zs[:, 3 * n_part:3 * n_part + 9].reshape(-1, 3, 3)
            aux["cell_momentum"] = zs[:, eq.half + 3 * n_part:].reshape(-1, 3, 3)
            t_arr = tau_arr
            meta.update(ref_volume=eq.ref_volume, cell_inertia=eq.cell_inertia,
                        piola=eq.piola)
        else:
            t_arr = tau_arr
        return Trajectory(eq.backend, eq.particles, tau_arr, t_arr, pos, mom,
                          aux, spec.dt, meta, eq.units)

    s_prev = float(np.real(z[3 * n_part])) if nh else 1.0
    for i in range(1, n_steps + 1):
        z_new = stepper(eq, z, spec)
        try:
            eq.check(z_new)
        except StateError as exc:
            raise IntegrationAbort(str(exc), build_trajectory()) from exc
        z = z_new
        if nh:
            s_now = float(np.real(z[3 * n_part]))
            t_phys += 0.5 * (1.0 / s_prev + 1.0 / s_now) * spec.dt
            s_prev = s_now
        else:
            t_phys = i * spec.dt
        monitor.update_h(float(eq.hamiltonian(z)))
        if p0 is not None:
            monitor.max_momentum_drift = max(
                monitor.max_momentum_drift,
                float(np.max(np.abs(_total_momentum(eq, z) - p0))))
        if i % sample_every == 0 or i == n_steps:
            record(i, z, t_phys)
    return build_trajectory()


# ---------------------------------------------------------------------------
# Liouville diagnostics
# ---------------------------------------------------------------------------


def rhs_jacobian(eq: Equations, z, h: float = 1e-20) -> np.ndarray:
    """Jacobian of the RHS by complex-step differentiation (machine accurate)."""
    z = np.asarray(z, dtype=float)
    d = z.size
    jac = np.empty((d, d))
    for i in range(d):
        dz = np.zeros(d, dtype=complex)
        dz[i] = 1j * h
        jac[:, i] = np.imag(eq.rhs(z.astype(complex) + dz)) / h
    return jac


def rhs_divergence(eq: Equations, z, h: float = 1e-20) -> float:
    """Divergence (trace of the RHS Jacobian) of the phase-space velocity."""
    z = np.asarray(z, dtype=float)
    tr = 0.0
    for i in range(z.size):
        dz = np.zeros(z.size, dtype=complex)
        dz[i] = 1j * h
        tr += float(np.imag(eq.rhs(z.astype(complex) + dz))[i]) / h
    return tr


def phase_volume_check(eq: Equations, state0, spec: IntegratorSpec,
                       n_steps: int) -> float:
    """Determinant of the flow tangent map after n_steps midpoint steps.

    Propagates the variational equation with the exact tangent of the
    implicit midpoint map, (I - dt/2 A)^{-1} (I + dt/2 A) with A the RHS
    Jacobian at the step midpoint.  Liouville's theorem predicts 1.
    """
    if eq.dim > 60:
        raise ValueError("dense tangent propagation limited to <= 60 dimensions")
    if spec.scheme != "implicit_midpoint":
        raise ValueError("phase-volume check requires the implicit midpoint scheme")
    z = eq.pack(state0)
    eq.check(z)
    eye = np.eye(eq.dim)
    log_det = 0.0
    tangent = eye.copy()
    for _ in range(n_steps):
        z_next = _implicit_midpoint(eq, z, spec)
        a = rhs_jacobian(eq, 0.5 * (z + z_next))
        plus = eye + 0.5 * spec.dt * a
        minus = eye - 0.5 * spec.dt * a
        tangent = np.linalg.solve(minus, plus @ tangent)
        sign_p, ld_p = np.linalg.slogdet(plus)
        sign_m, ld_m = np.linalg.slogdet(minus)
        log_det += ld_p - ld_m
        z = z_next
        eq.check(z)
    return float(np.exp(log_det))
