"""Residuals of the continuum balance laws on assembled field sets.

Each balance is evaluated as a pointwise residual

    R = d(density)/dt + div(flux) - source

with 2nd-order central differences in space and time, restricted to an
interior mask that excludes the kernel support plus one stencil layer from
every box face (the balances hold in open space; near the boundary kernel
truncation is an artifact, not physics).

Backend/mode dispatch for the energy balance:

* NVE: e = eps_K + eps_V, flux = q + e v - T^T v, source = sigma_eps_0.
* NH collective: the thermostat energies eps_ps, eps_s are spatially
  uniform and not convected; their evolution shows up purely as uniform
  sources sigma_eps_ps, sigma_eps_s.
* NH distributed: epsbar_ps, epsbar_s ride on the number-density comb and
  contribute convective terms and the fluxes q_ps, q_s.
* APR collective: e includes eps_P and the only source is the cell power
  sigma_eps_apr = d eps_P / dt.
* APR distributed: no source at all; q gains q_P and epsbar_P is convected.

The relative residual is normalized by the largest constituent term's norm,
giving a scale-free number.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .core import Field, FieldSet, GridSpec

__all__ = [
    "BalanceSpec",
    "ResidualEntry",
    "BalanceReport",
    "divergence",
    "time_derivative",
    "interior_mask",
    "mass_balance_residual",
    "momentum_balance_residual",
    "energy_balance_residual",
    "balance_report",
    "convergence_report",
    "manufactured_fieldset",
]

_MODES = ("collective", "distributed")
_BACKENDS = ("nve", "nh", "apr")


@dataclass(frozen=True)
class BalanceSpec:
    """Which backend's balances to assemble and in which energy mode."""

    backend: str
    mode: str = "collective"

    def __post_init__(self):
        if self.backend not in _BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.mode not in _MODES:
            raise ValueError(f"unknown energy mode {self.mode!r}")


# ---------------------------------------------------------------------------
# Discrete operators
# ---------------------------------------------------------------------------


def _central_axis(values, dx, axis):
    out = np.full_like(values, np.nan)
    sl_lo = [slice(None)] * values.ndim
    sl_hi = [slice(None)] * values.ndim
    sl_mid = [slice(None)] * values.ndim
    sl_lo[axis] = slice(0, -2)
    sl_hi[axis] = slice(2, None)
    sl_mid[axis] = slice(1, -1)
    out[tuple(sl_mid)] = (values[tuple(sl_hi)] - values[tuple(sl_lo)]) / (2.0 * dx)
    return out


def divergence(values: np.ndarray, dx: float) -> np.ndarray:
    """2nd-order central divergence; boundary layer comes out NaN.

    Vector input of shape (..., nx, ny, nz, 3) gives a scalar; tensor input
    of shape (..., nx, ny, nz, 3, 3) gives the vector with components
    (div T)_i = d_j T_{ji} (contraction on the first tensor index, as in
    div(rho v (x) v - T) of the momentum balance).
    """
    values = np.asarray(values, dtype=float)
    if values.ndim not in (5, 6):
        raise ValueError("expected (nt, nx, ny, nz, 3[, 3]) field values")
    if any(n < 3 for n in values.shape[1:4]):
        raise ValueError("field too small for the central stencil")
    if values.ndim == 6:
        if values.shape[-2:] != (3, 3):
            raise ValueError("tensor field must end with shape (3, 3)")
        out = np.zeros(values.shape[:4] + (3,))
        for j in range(3):
            out += _central_axis(values[..., j, :], dx, 1 + j)
        return out
    if values.shape[-1] != 3:
        raise ValueError("vector field must end with shape (3,)")
    out = np.zeros(values.shape[:4])
    for j in range(3):
        out += _central_axis(values[..., j], dx, 1 + j)
    return out


def time_derivative(values: np.ndarray, dt: float) -> np.ndarray:
    """Central time derivative along axis 0; endpoint samples come out NaN."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 3:
        raise ValueError("need at least three time samples")
    return _central_axis(values, dt, 0)


def interior_mask(grid: GridSpec) -> np.ndarray:
    """Boolean mask of nodes at least h + dx away from every box face."""
    pad = grid.h + grid.dx
    axes = grid.axes()
    masks = [(ax >= grid.lo[i] + pad - 1e-12) & (ax <= grid.hi[i] - pad + 1e-12)
             for i, ax in enumerate(axes)]
    mask = masks[0][:, None, None] & masks[1][None, :, None] & masks[2][None, None, :]
    if not mask.any():
        raise ValueError("interior mask is empty; enlarge the box or shrink h")
    return mask


# ---------------------------------------------------------------------------
# Residual assembly
# ---------------------------------------------------------------------------


@dataclass
class ResidualEntry:
    """One balance residual with its norms over the masked interior."""

    name: str
    residual: np.ndarray  # (n_times, nx, ny, nz) [+ (3,)], NaN off the mask
    l2: float
    linf: float
    reference: float  # L2 norm of the largest constituent term
    relative: float
    term_norms: Dict[str, float]

    def integrated(self, grid: GridSpec) -> np.ndarray:
        """Box integral of the residual at the interior time samples."""
        return np.nansum(self.residual, axis=(1, 2, 3))[1:-1] * grid.cell_volume()


@dataclass
class BalanceReport:
    spec: BalanceSpec
    entries: Dict[str, ResidualEntry] = field(default_factory=dict)

    def __getitem__(self, name) -> ResidualEntry:
        return self.entries[name]

    def summary_lines(self) -> List[str]:
        lines = [f"balance report: backend={self.spec.backend} mode={self.spec.mode}"]
        for name, e in self.entries.items():
            lines.append(f"  {name:<10s} L2={e.l2:.3e} Linf={e.linf:.3e} "
                         f"ref={e.reference:.3e} relative={e.relative:.3e}")
        return lines


def _require(fs: FieldSet, names: Sequence[str]):
    missing = [n for n in names if n not in fs]
    if missing:
        raise KeyError(f"fields missing: {', '.join(sorted(missing))}")


def _masked(values, mask):
    out = values.copy()
    out[(slice(None),) + np.nonzero(~mask)] = np.nan
    return out


def _finalize(name, terms: Dict[str, np.ndarray], mask) -> ResidualEntry:
    """Sum the constituent terms, apply the space-time mask, compute norms."""
    residual = sum(terms.values())
    residual = _masked(residual, mask)
    residual[0] = np.nan
    residual[-1] = np.nan
    valid = np.isfinite(residual)
    if not valid.any():
        raise ValueError(f"{name}: no valid interior nodes")

    def rms(a):
        va = np.isfinite(a)
        va[0] = False
        va[-1] = False
        va &= np.broadcast_to(mask.reshape((1,) + mask.shape + (1,) * (a.ndim - 4)),
                              a.shape)
        return float(np.sqrt(np.mean(a[va] ** 2))) if va.any() else 0.0

    term_norms = {k: rms(v) for k, v in terms.items()}
    l2 = rms(residual)
    linf = float(np.nanmax(np.abs(residual[valid])))
    reference = max(term_norms.values()) if term_norms else 0.0
    relative = l2 / reference if reference > 0 else l2
    return ResidualEntry(name, residual, l2, linf, reference, relative, term_norms)


def _values(fs, name):
    return fs[name].values


def mass_balance_residual(fs: FieldSet, spec: BalanceSpec) -> ResidualEntry:
    """R = d rho/dt + div(rho v) - sigma_rho (NH) or without the source."""
    need = ["rho", "rho_v"]
    if spec.backend == "nh":
        need.append("sigma_rho")
    _require(fs, need)
    grid = fs.grid
    mask = interior_mask(grid)
    terms = {
        "d(rho)/dt": time_derivative(_values(fs, "rho"), grid.dt),
        "div(rho v)": divergence(_values(fs, "rho_v"), grid.dx),
    }
    if spec.backend == "nh":
        terms["-sigma_rho"] = -_values(fs, "sigma_rho")
    return _finalize("mass", terms, mask)


def momentum_balance_residual(fs: FieldSet, spec: BalanceSpec) -> ResidualEntry:
    """R = d(rho v)/dt + div(rho v (x) v - T) - f_e (same for all backends)."""
    _require(fs, ["rho", "rho_v", "v", "T"])
    grid = fs.grid
    mask = interior_mask(grid)
    rho = _values(fs, "rho")
    v = _values(fs, "v")
    conv = rho[..., None, None] * v[..., :, None] * v[..., None, :]
    terms = {
        "d(rho v)/dt": time_derivative(_values(fs, "rho_v"), grid.dt),
        "div(rho v x v)": divergence(conv, grid.dx),
        "-div(T)": -divergence(_values(fs, "T"), grid.dx),
    }
    if "f_e" in fs:
        terms["-f_e"] = -_values(fs, "f_e")
    return _finalize("momentum", terms, mask)


def _transpose_stress_times_v(fs):
    t_vals = _values(fs, "T")
    v = _values(fs, "v")
    # (T^T v)_i = T_{ji} v_j
    return np.einsum("...ji,...j->...i", t_vals, v)


def energy_balance_residual(fs: FieldSet, spec: BalanceSpec) -> ResidualEntry:
    """Residual of the mode- and backend-appropriate energy balance."""
    grid = fs.grid
    mask = interior_mask(grid)
    base = ["eps_K", "eps_V", "v", "T", "q_K", "q_V", "q_T"]
    backend, mode = spec.backend, spec.mode

    extended = None  # non-convected extended-variable energy, differentiated apart
    if backend == "nve":
        _require(fs, base)
        density = _values(fs, "eps_K") + _values(fs, "eps_V")
        convected = density
        q = _values(fs, "q_K") + _values(fs, "q_V") + _values(fs, "q_T")
        source = _values(fs, "sigma_eps_0") if "sigma_eps_0" in fs else 0.0
    elif backend == "nh":
        if mode == "collective":
            _require(fs, base + ["eps_ps", "eps_s", "sigma_eps_K", "sigma_eps_V",
                                 "sigma_eps_ps", "sigma_eps_s"])
            convected = _values(fs, "eps_K") + _values(fs, "eps_V")
            density = convected
            extended = _values(fs, "eps_ps") + _values(fs, "eps_s")
            q = _values(fs, "q_K") + _values(fs, "q_V") + _values(fs, "q_T")
            source = (_values(fs, "sigma_eps_K") + _values(fs, "sigma_eps_V")
                      + _values(fs, "sigma_eps_ps") + _values(fs, "sigma_eps_s"))
        else:
            _require(fs, base + ["epsbar_ps", "epsbar_s", "q_ps", "q_s",
                                 "sigma_eps_K", "sigma_eps_V",
                                 "sigma_epsbar_ps", "sigma_epsbar_s"])
            density = (_values(fs, "eps_K") + _values(fs, "eps_V")
                       + _values(fs, "epsbar_ps") + _values(fs, "epsbar_s"))
            convected = density
            q = (_values(fs, "q_K") + _values(fs, "q_V") + _values(fs, "q_T")
                 + _values(fs, "q_ps") + _values(fs, "q_s"))
            source = (_values(fs, "sigma_eps_K") + _values(fs, "sigma_eps_V")
                      + _values(fs, "sigma_epsbar_ps") + _values(fs, "sigma_epsbar_s"))
        if "sigma_eps_0" in fs:
            source = source + _values(fs, "sigma_eps_0")
    else:  # apr
        if mode == "collective":
            _require(fs, base + ["eps_P", "sigma_eps_apr"])
            convected = _values(fs, "eps_K") + _values(fs, "eps_V")
            density = convected
            extended = _values(fs, "eps_P")
            q = _values(fs, "q_K") + _values(fs, "q_V") + _values(fs, "q_T")
            source = _values(fs, "sigma_eps_apr")
        else:
            _require(fs, base + ["epsbar_P", "q_P"])
            density = (_values(fs, "eps_K") + _values(fs, "eps_V")
                       + _values(fs, "epsbar_P"))
            convected = density
            q = (_values(fs, "q_K") + _values(fs, "q_V") + _values(fs, "q_T")
                 + _values(fs, "q_P"))
            source = 0.0

    v = _values(fs, "v")
    flux = q + convected[..., None] * v - _transpose_stress_times_v(fs)
    # collective extended energies are differentiated apart so their constant
    # part cancels exactly instead of perturbing the central difference
    ddt = time_derivative(density, grid.dt)
    if extended is not None:
        ddt = ddt + time_derivative(extended, grid.dt)
    terms = {
        "d(eps)/dt": ddt,
        "div(flux)": divergence(flux, grid.dx),
    }
    if np.ndim(source) > 0 or source != 0.0:
        terms["-source"] = -np.broadcast_to(source, density.shape).copy()
    return _finalize(f"energy[{mode}]", terms, mask)


def balance_report(fs: FieldSet, spec: BalanceSpec) -> BalanceReport:
    """All three balance residuals for the given backend and energy mode."""
    report = BalanceReport(spec)
    report.entries["mass"] = mass_balance_residual(fs, spec)
    report.entries["momentum"] = momentum_balance_residual(fs, spec)
    report.entries["energy"] = energy_balance_residual(fs, spec)
    return report


def convergence_report(pipeline: Callable[[int], Dict[str, float]],
                       m_values: Sequence[int]) -> Dict[str, Dict[str, float]]:
    """Fit the statistical decay of residuals against the ensemble size.

    `pipeline` maps an ensemble size M to a dict of residual norms (one per
    balance name).  Returns, per name, the fitted log-log slope of residual
    vs M with its least-squares fit error.  Monte Carlo theory predicts a
    slope of -1/2 for noise-dominated residuals.
    """
    m_values = list(m_values)
    if len(m_values) < 3:
        raise ValueError("slope fit needs at least three ensemble sizes")
    results = [pipeline(m) for m in m_values]
    names = results[0].keys()
    logm = np.log(np.asarray(m_values, dtype=float))
    out = {}
    for name in names:
        logr = np.log(np.asarray([r[name] for r in results]))
        coeffs, res, *_ = np.polyfit(logm, logr, 1, full=True)
        slope = float(coeffs[0])
        n = logm.size
        resid = float(res[0]) if res.size else 0.0
        denom = float(np.sum((logm - logm.mean()) ** 2))
        slope_err = np.sqrt(resid / max(n - 2, 1) / denom) if denom > 0 else 0.0
        out[name] = {"slope": slope, "slope_err": float(slope_err),
                     "residuals": [float(r[name]) for r in results]}
    return out


def manufactured_fieldset(grid: GridSpec, definitions: Dict[str, tuple]) -> FieldSet:
    """Sample analytic fields onto the grid, bypassing particles entirely.

    `definitions` maps field name to (order, fn) where fn(t, x, y, z) returns
    the field value; for order 1/2 the function must return trailing (3,) or
    (3, 3) components.  Used to certify the discrete residual operators at
    O(dx^2) + O(dt^2) independently of statistical error.
    """
    ax = grid.axes()
    X, Y, Z = np.meshgrid(*ax, indexing="ij")
    fs = FieldSet(grid)
    for name, (order, fn) in definitions.items():
        frames = [np.asarray(fn(float(t), X, Y, Z), dtype=float) for t in grid.times]
        fs.add(name, order, np.stack(frames))
    return fs
