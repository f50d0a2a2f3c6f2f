"""Command-line pipeline: run | fields | balance | check.

Stages mirror the module boundaries: `run` integrates the ensemble and
persists trajectories plus conservation logs, `fields` assembles and
persists every backend-applicable field, `balance` evaluates the residuals
of the continuum balances from persisted fields, and `check` runs the
built-in desk-scale verification suite.

Field persistence is dual format: CSV (one file per field per time sample,
columns t, x, y, z, value components, stderr components) for inspection,
and a compact binary with a 64-byte header (magic "IKNF") for round-trips.
Every output directory carries a manifest sufficient to reproduce the run
bit-identically.

Exit codes: 0 success, 1 config error, 2 numerical failure, 3 check-suite
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import struct
import sys
from typing import Dict, Optional

import numpy as np

from . import __version__
from .balance import BalanceSpec, balance_report, interior_mask
from .config import ConfigError, RunConfig, parse_config
from .core import Field, FieldSet, GridSpec, StateError
from .dynamics import (ConstraintError, ConvergenceError, IntegrationAbort,
                       IntegratorSpec)
from .ensemble import EnsembleBatch, run_batch
from .fields import CATALOG, LucyKernel, assemble_fields
from .potentials import HarmonicPair

__all__ = ["main", "cmd_run", "cmd_fields", "cmd_balance", "cmd_check",
           "write_field_binary", "read_field_binary", "write_field_csv"]

IKNF_MAGIC = b"IKNF"
IKNF_VERSION = 1
# magic, version, tensor order, (nt, nx, ny, nz), lo[3], dx, h -> 64 bytes
_HEADER = struct.Struct("<4sHH4I3ddd")
assert _HEADER.size == 64


# ---------------------------------------------------------------------------
# Field persistence
# ---------------------------------------------------------------------------


def write_field_binary(path, grid: GridSpec, f: Field):
    """Little-endian contiguous dump: header, times, values, stderr."""
    nt = grid.times.size
    nx, ny, nz = grid.shape
    header = _HEADER.pack(IKNF_MAGIC, IKNF_VERSION, f.order, nt, nx, ny, nz,
                          *grid.lo.tolist(), grid.dx, grid.h)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(grid.times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(f.stderr, dtype="<f8").tobytes())


def read_field_binary(path):
    """Inverse of write_field_binary; returns (grid, Field)."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        magic, version, order, nt, nx, ny, nz, lx, ly, lz, dx, h = _HEADER.unpack(raw)
        if magic != IKNF_MAGIC:
            raise ValueError(f"{path}: not an IKNF file")
        if version != IKNF_VERSION:
            raise ValueError(f"{path}: unsupported IKNF version {version}")
        comp = {0: 1, 1: 3, 2: 9}[order]
        times = np.frombuffer(fh.read(8 * nt), dtype="<f8")
        count = nt * nx * ny * nz * comp
        shape = (nt, nx, ny, nz) + {0: (), 1: (3,), 2: (3, 3)}[order]
        values = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
        stderr = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
    lo = np.array([lx, ly, lz])
    hi = lo + dx * (np.array([nx, ny, nz]) - 1)
    grid = GridSpec(lo, hi, dx, h, times)
    return grid, Field(order, values.copy(), stderr.copy())


def write_field_csv(path, grid: GridSpec, f: Field, time_index: int):
    """One time sample as CSV with header t,x,y,z,values...,stderrs..."""
    comp = {0: 1, 1: 3, 2: 9}[f.order]
    labels = {0: ["value"], 1: ["v0", "v1", "v2"],
              2: [f"v{i}{j}" for i in range(3) for j in range(3)]}[f.order]
    nodes = grid.nodes()
    t = float(grid.times[time_index])
    vals = f.values[time_index].reshape(-1, comp)
    errs = f.stderr[time_index].reshape(-1, comp)
    with open(path, "w") as fh:
        fh.write("t,x,y,z," + ",".join(labels) + ","
                 + ",".join("e" + lab[1:] if lab != "value" else "stderr"
                            for lab in labels) + "\n")
        for i in range(nodes.shape[0]):
            row = [t, *nodes[i]] + vals[i].tolist() + errs[i].tolist()
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(outdir, cfg: RunConfig, files):
    manifest = {
        "schema_version": cfg.raw["schema_version"],
        "package_version": __version__,
        "numpy_version": np.__version__,
        "seed": cfg.seed,
        "config": cfg.raw,
        "files": {os.path.relpath(p, outdir): _sha256(p) for p in sorted(files)},
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------


def _run_ensemble(cfg: RunConfig, threads: int) -> EnsembleBatch:
    eq = cfg.equations()
    return run_batch(cfg.density(), cfg.ensemble_size(), eq, cfg.integrator(),
                     cfg.n_steps(), cfg.sample_every(), workers=threads)


def cmd_run(cfg: RunConfig, outdir: str, threads: int = 1) -> Dict:
    """Integrate the ensemble; persist trajectories and conservation logs."""
    os.makedirs(outdir, exist_ok=True)
    batch = _run_ensemble(cfg, threads)
    files = []
    arrays = {}
    for i, tr in enumerate(batch.trajectories):
        arrays[f"tau_{i}"] = tr.tau
        arrays[f"t_{i}"] = tr.t
        arrays[f"positions_{i}"] = tr.positions
        arrays[f"momenta_{i}"] = tr.momenta
        for key, val in tr.aux.items():
            arrays[f"{key}_{i}"] = val
    traj_path = os.path.join(outdir, "trajectories.npz")
    np.savez(traj_path, **arrays)
    files.append(traj_path)

    cons_path = os.path.join(outdir, "conservation.csv")
    with open(cons_path, "w") as fh:
        fh.write("sample,h0,max_rel_h_drift,max_momentum_drift\n")
        for i, tr in enumerate(batch.trajectories):
            fh.write(f"{i},{tr.meta['h0']:.17g},{tr.meta['max_rel_h_drift']:.17g},"
                     f"{tr.meta['max_momentum_drift']:.17g}\n")
    files.append(cons_path)
    manifest = _write_manifest(outdir, cfg, files)
    return {"batch": batch, "files": files + [manifest]}


def cmd_fields(cfg: RunConfig, outdir: str, threads: int = 1) -> Dict:
    """Assemble all backend-applicable fields and persist them."""
    os.makedirs(os.path.join(outdir, "fields"), exist_ok=True)
    batch = _run_ensemble(cfg, threads)
    grid = cfg.grid()
    fs = assemble_fields(batch, grid, cfg.kernel(), pair=cfg.pair_potential(),
                         external=cfg.external_potential(),
                         nh_ref_volume=cfg.nh_ref_volume())
    files = []
    fmt = cfg.output_format()
    for name in fs.names():
        f = fs[name]
        if fmt in ("binary", "both"):
            path = os.path.join(outdir, "fields", f"{name}.iknf")
            write_field_binary(path, grid, f)
            files.append(path)
        if fmt in ("csv", "both"):
            for k in range(grid.times.size):
                path = os.path.join(outdir, "fields", f"{name}_t{k}.csv")
                write_field_csv(path, grid, f, k)
                files.append(path)
    manifest = _write_manifest(outdir, cfg, files)
    return {"fieldset": fs, "files": files + [manifest]}


def _load_fieldset(outdir: str) -> FieldSet:
    fdir = os.path.join(outdir, "fields")
    if not os.path.isdir(fdir):
        raise FileNotFoundError("fields missing: run the 'fields' stage first")
    paths = sorted(p for p in os.listdir(fdir) if p.endswith(".iknf"))
    if not paths:
        raise FileNotFoundError("fields missing: no .iknf files found")
    fs = None
    for p in paths:
        grid, f = read_field_binary(os.path.join(fdir, p))
        if fs is None:
            fs = FieldSet(grid)
        fs.fields[p[:-5]] = f
    return fs


def cmd_balance(cfg: RunConfig, outdir: str) -> Dict:
    """Evaluate the balance residuals from persisted fields."""
    fs = _load_fieldset(outdir)
    spec = BalanceSpec(cfg.backend, cfg.balance_mode())
    report = balance_report(fs, spec)
    files = []
    report_path = os.path.join(outdir, "balance_report.txt")
    with open(report_path, "w") as fh:
        fh.write("\n".join(report.summary_lines()) + "\n")
    files.append(report_path)
    for name, entry in report.entries.items():
        order = 1 if entry.residual.ndim == 5 else 0
        res_field = Field(order, entry.residual, np.zeros_like(entry.residual))
        path = os.path.join(outdir, f"residual_{name.replace('[', '_').rstrip(']')}.iknf")
        write_field_binary(path, fs.grid, res_field)
        files.append(path)
    manifest = _write_manifest(outdir, cfg, files)
    return {"report": report, "files": files + [manifest]}


# ---------------------------------------------------------------------------
# Built-in verification suite
# ---------------------------------------------------------------------------


def cmd_check(verbose: bool = True) -> bool:
    """Desk-scale verification: gradients, Liouville, normalizations,
    exact-zero residuals, backend reductions.  Returns overall pass."""
    from .core import NVEState, ParticleSet
    from .dynamics import (integrate, make_equations, phase_volume_check,
                           rhs_divergence, rhs_jacobian)
    from .ensemble import (Explicit, InitialDensity, ZeroMomentum,
                           nve_batch_as_nh, run_batch)
    from .fields import BondQuadrature, bond_function

    results = []

    def record(name, ok, detail=""):
        results.append((name, ok))
        if verbose:
            status = "pass" if ok else "FAIL"
            print(f"[{status}] {name}" + (f" ({detail})" if detail else ""))

    rng = np.random.default_rng(20260823)
    ps = ParticleSet.uniform(3)
    pair = HarmonicPair(1.0, 1.0)
    spec = IntegratorSpec(dt=1e-3)

    # gradient cross-check (complex step vs canonical pairing)
    st = NVEState(ps, rng.normal(0, 1, (3, 3)) * 2.0, rng.normal(0, 0.3, (3, 3)))
    eq = make_equations(st, pair)
    z = eq.pack(st)
    jac_ok = True
    rhs = eq.rhs(z)
    grad = np.empty_like(z)
    for i in range(z.size):
        dz = np.zeros(z.size, dtype=complex)
        dz[i] = 1e-20j
        grad[i] = np.imag(eq.hamiltonian(z.astype(complex) + dz)) / 1e-20
    expected = np.concatenate([grad[eq.half:], -grad[:eq.half]])
    err = np.max(np.abs(rhs - expected)) / max(1.0, np.max(np.abs(rhs)))
    record("hamiltonian gradient cross-check", err < 1e-10, f"err {err:.2e}")

    # phase-volume / Liouville
    det = phase_volume_check(eq, st, spec, 100)
    record("phase-volume determinant", abs(det - 1.0) < 1e-8, f"det {det:.12f}")
    div = abs(rhs_divergence(eq, z))
    record("phase-space divergence", div < 1e-8, f"|div| {div:.2e}")

    # kernel and bond normalization
    h = 1.0
    dx = h / 10.0
    kernel = LucyKernel(h)
    ax = np.arange(-1.6, 1.6 + 1e-9, dx)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel(), Z.ravel()], 1)
    ksum = kernel.weight_points(np.array([[0.03, -0.01, 0.02]]), nodes).sum() * dx ** 3
    record("kernel normalization", abs(ksum - 1.0) < 1e-6, f"int w = {ksum:.9f}")
    b = bond_function(kernel, BondQuadrature(), np.array([0.2, 0.0, 0.0]),
                      np.array([-0.2, 0.1, 0.0]), nodes).sum() * dx ** 3
    record("bond-function normalization", abs(b - 1.0) < 1e-6, f"int b = {b:.9f}")

    # exact-zero balance residuals on a static configuration
    pos = np.array([[0.0, 0.0, 0.0]])
    st0 = NVEState(ParticleSet.uniform(1), pos, np.zeros((1, 3)))
    eq0 = make_equations(st0)
    dens = InitialDensity(Explicit(pos), ZeroMomentum(), seed=0)
    batch = run_batch(dens, 2, eq0, spec, 30, sample_every=10)
    grid = GridSpec(np.array([-3.0, -3.0, -3.0]), np.array([3.0, 3.0, 3.0]),
                    0.5, 1.5, np.linspace(0.0, 0.03, 4))
    fs = assemble_fields(batch, grid, LucyKernel(1.5))
    rep = balance_report(fs, BalanceSpec("nve"))
    worst = max(e.linf for e in rep.entries.values())
    record("exact-zero balance residuals", worst <= 1e-10, f"worst {worst:.2e}")

    # backend reduction: frozen NH equals NVE bit for bit
    nh_batch = nve_batch_as_nh(batch, thermal_inertia=10.0, target_temperature=1.0)
    fs_nh = assemble_fields(nh_batch, grid, LucyKernel(1.5))
    same = all(np.array_equal(fs[n].values, fs_nh[n].values, equal_nan=True)
               for n in fs.names())
    record("frozen-NH backend reduction", same)

    ok = all(flag for _, flag in results)
    if verbose:
        n_pass = sum(flag for _, flag in results)
        print(f"{n_pass}/{len(results)} checks passed")
    return ok


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="iknmd",
        description="Extended-Hamiltonian particle dynamics with "
                    "Irving-Kirkwood-Noll continuum field extraction")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, needs_config in (("run", True), ("fields", True),
                               ("balance", True), ("check", False)):
        p = sub.add_parser(verb)
        if needs_config:
            p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--seed", type=int, default=None, help="seed override")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.verb == "check":
            return 0 if cmd_check() else 3
        cfg = parse_config(args.config, seed_override=args.seed)
        if args.verb == "run":
            cmd_run(cfg, args.out, args.threads)
        elif args.verb == "fields":
            cmd_fields(cfg, args.out, args.threads)
        elif args.verb == "balance":
            cmd_balance(cfg, args.out)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, ConstraintError, StateError, IntegrationAbort) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
