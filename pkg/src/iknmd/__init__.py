"""Extended-Hamiltonian particle dynamics with Irving-Kirkwood-Noll
continuum field extraction and balance-law verification.

The package integrates three families of dynamics (plain Hamiltonian,
Nose-Hoover thermostatted, and Andersen-Parrinello-Rahman cell dynamics),
extracts continuum fields (densities, stress, heat flux, sources) from
trajectory ensembles by kernel-regularized phase averages, and evaluates
the residuals of the continuum balance laws those fields must satisfy.
"""

__version__ = "0.1.0"

from .core import (APRState, Field, FieldSet, GridSpec, NHState, NVEState,
                   ParticleSet, Snapshot, StateError, Trajectory, Units)
from .potentials import (HarmonicPair, HarmonicTrap, LennardJones, NoExternal,
                         UniformField)
from .dynamics import (APREquations, APRExactEquations, ConservationMonitor,
                       ConstraintError, ConvergenceError, IntegrationAbort,
                       IntegratorSpec, NHEquations, NVEEquations, integrate,
                       make_equations, phase_volume_check, real_time_map,
                       rhs_divergence, rhs_jacobian, step)
from .ensemble import (EnsembleBatch, Explicit, InitialDensity, Lattice,
                       MaxwellBoltzmann, ZeroMomentum, ensemble_average,
                       nve_batch_as_apr, nve_batch_as_nh, run_batch,
                       sample_initial)
from .fields import (CATALOG, BondQuadrature, LucyKernel, assemble_fields,
                     bond_function, extended_energy_fields_apr,
                     extended_energy_fields_nh, external_force_field,
                     heat_flux_fields, primary_fields, source_fields,
                     stress_fields)
from .balance import (BalanceReport, BalanceSpec, balance_report,
                      convergence_report, divergence, energy_balance_residual,
                      interior_mask, manufactured_fieldset,
                      mass_balance_residual, momentum_balance_residual,
                      time_derivative)
from .config import ConfigError, RunConfig, parse_config, validate_config
