"""Batch driver: single designs, (d12, P/gamma) sweeps, reference curves.

Configuration is a flat key=value text file ('#' starts a comment).
Normative keys and defaults:

    dims            = 8,8,8          voxel counts nx,ny,nz
    spacing         = 0.0625         voxel edge in lambda units
    origin          = auto           'auto' (centered on the emitter
                                     midpoint) or 'x,y,z'
    d12             = 0.25           emitter separation (lambda units)
    eps_max         = 9.0
    delta_eps       = 0.05
    delta_eps_min   = 0.001
    tol_accept      = 1e-9
    eta_converge    = 0.01
    max_iterations  = 200
    sweep_mode      = sequential     or frozen-reference
    bidirectional   = false
    exclusion_radius= 2.0            frozen shell around emitters, in spacings
    symmetry        = none           or mirror-z, z-axis-rotation-4fold
    target          = concurrence    or negativity
    pump_ratio      = 0.005          P / gamma, held fixed during design
    solver_method   = auto           or dense, iterative
    solver_rtol     = 1e-10
    d12_list        = 0.25           list for sweep/freespace; either
                                     comma-separated values or
                                     'logspace:min,max,count'
    pump_list       = 0.005          same forms
    seed            = 0

All emitted numbers are dimensionless (lambda, gamma0 units); column
headers carry the unit names.  Exit codes: 0 success, 1 validation
failure, 2 configuration error, 3 solver failure, 4 degenerate steady
state.
"""

import argparse
import csv
import json
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields as dc_fields
from pathlib import Path

import numpy as np

from . import quantum, validate as validate_mod
from .emcore import couplings_from_green, free_space_green
from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateSteadyStateError,
    EntcloakError,
    SolverInconsistencyError,
)
from .optimizer import DesignConfig, optimize, _params_from_couplings
from .vie import PermittivityGrid

META_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "entcloak permittivity-map metadata",
    "type": "object",
    "required": ["format_version", "dims", "spacing", "origin", "emitters",
                 "lambda0", "eps_max"],
    "properties": {
        "format_version": {"const": 1},
        "dims": {"type": "array", "items": {"type": "integer", "minimum": 1},
                 "minItems": 3, "maxItems": 3},
        "spacing": {"type": "number", "exclusiveMinimum": 0},
        "origin": {"type": "array", "items": {"type": "number"},
                   "minItems": 3, "maxItems": 3},
        "emitters": {"type": "array", "minItems": 2, "maxItems": 2,
                     "items": {"type": "array", "items": {"type": "number"},
                               "minItems": 3, "maxItems": 3}},
        "lambda0": {"type": "number"},
        "eps_max": {"type": "number", "minimum": 1},
        "d12": {"type": "number"},
        "target": {"type": "string"},
        "pump_ratio": {"type": "number"},
        "seed": {"type": "integer"},
    },
}

_ZHAT = np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_DESIGN_KEYS = {f.name for f in dc_fields(DesignConfig)} - {"p_hat"}


@dataclass
class RunConfig:
    """Parsed configuration of one CLI invocation."""

    dims: tuple = (8, 8, 8)
    spacing: float = 0.0625
    origin: object = "auto"
    d12: float = 0.25
    d12_list: tuple = (0.25,)
    pump_list: tuple = (0.005,)
    seed: int = 0
    design: DesignConfig = None

    def __post_init__(self):
        if self.design is None:
            self.design = DesignConfig()
        if self.d12 <= 0:
            raise ConfigError("d12 must be positive")
        if len(self.d12_list) == 0 or any(d <= 0 for d in self.d12_list):
            raise ConfigError("d12_list must be non-empty and positive")
        if len(self.pump_list) == 0 or any(p <= 0 for p in self.pump_list):
            raise ConfigError("pump_list must be non-empty and positive")


def _parse_scalar_list(text):
    text = text.strip()
    if text.startswith("logspace:"):
        try:
            lo, hi, num = text[len("logspace:"):].split(",")
            return tuple(np.geomspace(float(lo), float(hi), int(num)))
        except Exception as exc:
            raise ConfigError(f"bad logspace spec {text!r}: {exc}") from exc
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"bad numeric list {text!r}") from exc


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"bad boolean {text!r}")


def read_config_file(path):
    """Flat key=value file -> dict of raw string values."""
    raw = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, val = (part.strip() for part in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = val
    return raw


def parse_config(path, seed_override=None):
    """Parse and validate a config file into a RunConfig."""
    raw = read_config_file(path)

    design_kwargs = {}
    run_kwargs = {}
    for key, val in raw.items():
        try:
            if key == "dims":
                parts = tuple(int(tok) for tok in val.split(","))
                if len(parts) != 3 or any(p < 1 for p in parts):
                    raise ConfigError(f"dims must be three positive ints, got {val!r}")
                run_kwargs["dims"] = parts
            elif key in ("spacing", "d12"):
                run_kwargs[key] = float(val)
            elif key == "origin":
                run_kwargs["origin"] = ("auto" if val.strip() == "auto" else
                                        tuple(float(t) for t in val.split(",")))
            elif key in ("d12_list", "pump_list"):
                run_kwargs[key] = _parse_scalar_list(val)
            elif key == "seed":
                run_kwargs["seed"] = int(val)
            elif key == "bidirectional":
                design_kwargs[key] = _parse_bool(val)
            elif key in ("sweep_mode", "symmetry", "target", "solver_method"):
                design_kwargs[key] = val.strip()
            elif key == "max_iterations":
                design_kwargs[key] = int(val)
            elif key in _DESIGN_KEYS:
                design_kwargs[key] = float(val)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {val!r}") from exc

    if seed_override is not None:
        run_kwargs["seed"] = seed_override
    try:
        design = DesignConfig(**design_kwargs)
        return RunConfig(design=design, **run_kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def build_grid(cfg, d12=None):
    """Grid and emitter pair for one design run."""
    d12 = cfg.d12 if d12 is None else d12
    emitters = (np.array([0.0, 0.0, -d12 / 2.0]),
                np.array([0.0, 0.0, d12 / 2.0]))
    if cfg.origin == "auto":
        origin = None
    else:
        origin = np.asarray(cfg.origin, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        grid = PermittivityGrid.vacuum(cfg.dims, cfg.spacing, origin=origin,
                                       eps_max=cfg.design.eps_max)
    zc = grid.centers()[:, 2]
    for r in emitters:
        gap = np.min(np.abs(zc - r[2]))
        if gap < 1e-6:
            raise ConfigError(
                f"emitter at z={r[2]} coincides with a voxel center; "
                "shift origin or adjust d12/spacing"
            )
        if gap < cfg.spacing / 2.0 - 1e-12:
            warnings.warn(
                f"emitter at z={r[2]} is {gap:.3g} from the nearest voxel "
                f"center plane (< spacing/2); consider shifting the grid",
                stacklevel=2,
            )
    return grid, emitters


# ---------------------------------------------------------------------------
# CSV / JSON export
# ---------------------------------------------------------------------------

def save_grid_csv(grid, path):
    """(ix, iy, iz, eps) rows; eps written with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ix", "iy", "iz", "eps"])
        nx, ny, nz = grid.dims
        eps = grid.eps.reshape(nx, ny, nz)
        for ix in range(nx):
            for iy in range(ny):
                for iz in range(nz):
                    w.writerow([ix, iy, iz, f"{eps[ix, iy, iz]:.17g}"])


def load_grid(csv_path, meta_path):
    """Inverse of save_grid_csv + save_meta; returns (grid, meta dict)."""
    with open(meta_path) as fh:
        meta = json.load(fh)
    validate_meta(meta)
    dims = tuple(meta["dims"])
    eps = np.ones(dims[0] * dims[1] * dims[2])
    with open(csv_path, newline="") as fh:
        rd = csv.DictReader(fh)
        for row in rd:
            idx = np.ravel_multi_index(
                (int(row["ix"]), int(row["iy"]), int(row["iz"])), dims)
            eps[idx] = float(row["eps"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        grid = PermittivityGrid(origin=np.asarray(meta["origin"], dtype=float),
                                spacing=float(meta["spacing"]), dims=dims,
                                eps=eps, eps_max=float(meta["eps_max"]))
    return grid, meta


def validate_meta(meta):
    """Minimal structural validation against META_SCHEMA (no dependency)."""
    for key in META_SCHEMA["required"]:
        if key not in meta:
            raise ConfigError(f"metadata missing required key {key!r}")
    if meta["format_version"] != 1:
        raise ConfigError(f"unsupported format_version {meta['format_version']}")
    if len(meta["dims"]) != 3 or len(meta["origin"]) != 3:
        raise ConfigError("dims and origin must have 3 entries")
    if len(meta["emitters"]) != 2:
        raise ConfigError("metadata must list exactly two emitters")
    return meta


def save_meta(cfg, grid, emitters, path, d12=None):
    meta = {
        "format_version": 1,
        "dims": list(grid.dims),
        "spacing": grid.spacing,
        "origin": [float(x) for x in grid.origin],
        "emitters": [[float(x) for x in r] for r in emitters],
        "lambda0": 1.0,
        "eps_max": grid.eps_max,
        "d12": cfg.d12 if d12 is None else d12,
        "target": cfg.design.target,
        "pump_ratio": cfg.design.pump_ratio,
        "seed": cfg.seed,
    }
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta


def _trace_rows(record):
    for e in record.entries:
        cs = e.couplings
        yield [e.n, f"{e.target_value:.17g}", e.accepted_count,
               f"{cs.gamma12 / cs.gamma11:.17g}",
               f"{cs.g12 / cs.gamma11:.17g}",
               f"{cs.gamma11:.17g}",
               f"{e.convergence_mismatch:.17g}",
               f"{e.delta_eps_used:.17g}"]


def save_trace_csv(record, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "target_value", "accepted_count", "gamma12_over_gamma",
                    "g12_over_gamma", "purcell", "eq3_mismatch", "delta_eps"])
        for row in _trace_rows(record):
            w.writerow(row)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_optimize(cfg, out_dir):
    grid, emitters = build_grid(cfg)
    record = optimize(grid, emitters, cfg.design)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_grid_csv(record.final_grid, out_dir / "design.eps.csv")
    save_meta(cfg, record.final_grid, emitters, out_dir / "design.meta.json")
    save_trace_csv(record, out_dir / "trace.csv")
    final = record.entries[-1]
    print(f"{cfg.design.target}: {record.initial_value:.6f} -> "
          f"{final.target_value:.6f} in {final.n} iterations")
    return 0


def _witness_triple(rho):
    return (quantum.concurrence(rho), quantum.negativity(rho),
            quantum.linear_entropy(rho))


def _sweep_point(args):
    """One (d12, pump) optimization; returns the sweep.csv row values."""
    cfg, d12, pump = args
    design = DesignConfig(**{**_design_as_dict(cfg.design),
                             "pump_ratio": pump})
    grid, emitters = build_grid(cfg, d12=d12)
    record = optimize(grid, emitters, design)
    cs = record.entries[-1].couplings
    rho = record.final_rho
    C, N, SL = _witness_triple(rho)
    rho0 = quantum.steady_state(
        _params_from_couplings(record.entries[0].couplings, pump))
    C0, N0, SL0 = _witness_triple(rho0)
    return [d12, pump, C, C0, C - C0, cs.gamma12 / cs.gamma11,
            cs.g12 / cs.gamma11, cs.gamma11, SL, SL0, N, N0]


def _design_as_dict(design):
    return {f.name: getattr(design, f.name) for f in dc_fields(DesignConfig)}


def cmd_sweep(cfg, out_dir, threads=1):
    tasks = [(cfg, d, p) for d in cfg.d12_list for p in cfg.pump_list]
    results = {}
    failures = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for task, outcome in zip(tasks, pool.map(_sweep_point_safe, tasks)):
                _record_outcome(task, outcome, results, failures)
    else:
        for task in tasks:
            _record_outcome(task, _sweep_point_safe(task), results, failures)

    out_dir.mkdir(parents=True, exist_ok=True)
    header = ["d12_over_lambda", "P_over_gamma", "C", "C0", "C_minus_C0",
              "gamma12_over_gamma", "g12_over_gamma", "purcell",
              "S_L", "S_L0", "N", "N0"]
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for task in tasks:  # deterministic (d, P) order
            key = (task[1], task[2])
            if key in results:
                w.writerow([f"{v:.17g}" for v in results[key]])
    if failures:
        with open(out_dir / "failures.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["d12_over_lambda", "P_over_gamma", "error"])
            w.writerows(failures)
        print(f"{len(failures)} sweep points failed; see failures.csv",
              file=sys.stderr)
    print(f"sweep: {len(results)}/{len(tasks)} points written")
    return 0


def _sweep_point_safe(task):
    try:
        return _sweep_point(task)
    except Exception as exc:  # record the point, keep the sweep alive
        return ("error", f"{type(exc).__name__}: {exc}")


def _record_outcome(task, outcome, results, failures):
    _, d12, pump = task
    if isinstance(outcome, tuple) and outcome and outcome[0] == "error":
        failures.append([d12, pump, outcome[1]])
    else:
        results[(d12, pump)] = outcome


def cmd_freespace(cfg, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    header = ["d12_over_lambda", "gamma12_over_gamma0", "g12_over_gamma0"]
    header += [f"C0_P_over_gamma_{p:g}" for p in cfg.pump_list]
    with open(out_dir / "freespace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        vac_self = 1j * 2 * np.pi / (6 * np.pi) * np.eye(3)
        for d in cfg.d12_list:
            G12 = free_space_green((0, 0, 0), (0, 0, d))
            cs = couplings_from_green(vac_self, vac_self, G12, _ZHAT)
            row = [d, cs.gamma12, cs.g12]
            for p in cfg.pump_list:
                rho = quantum.steady_state(quantum.MasterEqParams(
                    1.0, 1.0, cs.gamma12, cs.g12, p))
                row.append(quantum.concurrence(rho))
            w.writerow([f"{v:.17g}" for v in row])
    print(f"freespace: {len(cfg.d12_list)} distances written")
    return 0


def cmd_mems(out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "mems.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "C", "S_L"])
        for r in np.linspace(0.0, 1.0, 201):
            c, sl = quantum.mems_curve(r)
            w.writerow([f"{r:.17g}", f"{c:.17g}", f"{sl:.17g}"])
    print("mems: 201 points written")
    return 0


def cmd_validate(seed=0, corrupt_self_term=False):
    ok = validate_mod.run_all(seed=seed, corrupt_self_term=corrupt_self_term)
    print("validate:", "all checks passed" if ok else "FAILURES detected")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser():
    ap = argparse.ArgumentParser(
        prog="entcloak",
        description="Inverse design of dielectric maps for emitter-pair "
                    "entanglement; emits CSV/JSON data only.",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, needs_config in (("optimize", True), ("sweep", True),
                               ("freespace", True), ("mems", False),
                               ("validate", False)):
        p = sub.add_parser(name)
        if needs_config:
            p.add_argument("--config", required=True, help="key=value config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        if name == "validate":
            p.add_argument("--corrupt-self-term", action="store_true",
                           help=argparse.SUPPRESS)  # negative-control fixture
    return ap


def main(argv=None):
    args = _build_parser().parse_args(argv)
    out_dir = Path(args.out)
    try:
        if args.command == "mems":
            return cmd_mems(out_dir)
        if args.command == "validate":
            return cmd_validate(seed=args.seed or 0,
                                corrupt_self_term=args.corrupt_self_term)
        cfg = parse_config(args.config, seed_override=args.seed)
        if args.command == "optimize":
            return cmd_optimize(cfg, out_dir)
        if args.command == "sweep":
            return cmd_sweep(cfg, out_dir, threads=max(1, args.threads))
        if args.command == "freespace":
            return cmd_freespace(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DegenerateSteadyStateError as exc:
        print(f"degenerate steady state: {exc}", file=sys.stderr)
        return 4
    except (ConvergenceError, SolverInconsistencyError, EntcloakError) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
