"""Thermostat a trapped Lennard-Jones cluster with the Nose-Hoover
extended Hamiltonian and measure the sampled kinetic temperature.

With the (3N+1) entropic coefficient, canonical averages of observables
of (q, p/s) come out as plain uniform averages over the stored samples.
The kinetic temperature should settle near the target.
"""

import numpy as np

from iknmd import (HarmonicTrap, InitialDensity, IntegratorSpec, Lattice,
                   LennardJones, MaxwellBoltzmann, NHEquations, NVEEquations,
                   ParticleSet, run_batch, sample_initial)

n = 32
pair = LennardJones()
particles = ParticleSet.uniform(n)

# center the confining trap on the lattice the cluster starts from
seed_density = InitialDensity(positions=Lattice(spacing=1.3),
                              velocities=MaxwellBoltzmann(temperature=1.0),
                              seed=5)
center = sample_initial(seed_density, 1, NVEEquations(particles, pair))[0] \
    .positions.mean(axis=0)

eq = NHEquations(particles, thermal_inertia=10.0, target_temperature=1.0,
                 pair=pair, external=HarmonicTrap(5.0, tuple(center)))
density = InitialDensity(positions=Lattice(spacing=1.3, jitter=0.05),
                         velocities=MaxwellBoltzmann(temperature=1.0),
                         sigma_s=0.3, sigma_ps=1.0, seed=5)

batch = run_batch(density, 8, eq, IntegratorSpec(dt=4e-3), n_steps=8000,
                  sample_every=50)

temps = []
for tr in batch.trajectories:
    kt = (np.sum(tr.momenta ** 2 / particles.masses[None, :, None],
                 axis=(1, 2)) / (tr.aux["s"] ** 2 * 3 * n))
    temps.append(kt)
temps = np.asarray(temps)
half = temps.shape[1] // 2
print(f"target temperature 1.0")
print(f"early-half kinetic temperature {temps[:, :half].mean():.3f}")
print(f"late-half  kinetic temperature {temps[:, half:].mean():.3f}")
