"""Named invariant suite covering every module; backs the `validate` command.

Each check returns (ok, detail).  `run_all` executes all of them, prints
one PASS/FAIL line per check, and reports overall success.  The
`corrupt_self_term` flag deliberately breaks the voxel self-interaction
constant so the electromagnetic checks must fail; it exists as a
negative control for the suite itself.
"""

import time
import warnings
from contextlib import contextmanager

import numpy as np

from . import emcore, optimizer, quantum, vie

__all__ = ["run_all", "CHECKS"]


@contextmanager
def _corrupted_self_term():
    orig = vie.self_interaction
    vie.self_interaction = lambda spacing, k: 0.0 * orig(spacing, k)
    try:
        yield
    finally:
        vie.self_interaction = orig


def _quiet():
    return warnings.catch_warnings()


# ---------------------------------------------------------------------------
# em-core
# ---------------------------------------------------------------------------

def check_aligned_closed_forms(rng):
    k = 2 * np.pi
    ds = np.geomspace(0.05, 5.0, 100)
    zhat = np.array([0.0, 0.0, 1.0])
    worst = 0.0
    for d in ds:
        G = emcore.free_space_green((0, 0, 0), (0, 0, d), k)
        g12 = 6 * np.pi / k * (zhat @ G @ zhat).imag
        c12 = 3 * np.pi / k * (zhat @ G @ zhat).real
        worst = max(worst,
                    abs(g12 / emcore.aligned_gamma12(d) - 1.0),
                    abs(c12 / emcore.aligned_g12(d) - 1.0))
    return worst <= 1e-10, f"max rel err {worst:.2e} (tol 1e-10)"


def check_green_reciprocity(rng):
    worst = 0.0
    for _ in range(50):
        r1 = rng.uniform(-2, 2, 3)
        r2 = rng.uniform(-2, 2, 3)
        if np.linalg.norm(r1 - r2) < 0.05:
            continue
        Ga = emcore.free_space_green(r1, r2)
        Gb = emcore.free_space_green(r2, r1).T
        worst = max(worst, np.max(np.abs(Ga - Gb)))
    return worst <= 1e-14, f"max transposition defect {worst:.2e} (tol 1e-14)"


def check_self_limit_richardson(rng):
    k = 2 * np.pi
    zhat = np.array([0.0, 0.0, 1.0])

    def f(R):
        G = emcore.free_space_green((0, 0, 0), (0, 0, R), k)
        return 6 * np.pi / k * (zhat @ G @ zhat).imag

    a, b, c = f(1e-3), f(5e-4), f(2.5e-4)
    # two Richardson levels for the even (h^2) error series
    r1 = (4 * b - a) / 3.0
    r2 = (4 * c - b) / 3.0
    val = (16 * r2 - r1) / 15.0
    return abs(val - 1.0) <= 1e-6, f"extrapolated diagonal {val:.9f} (tol 1e-6)"


# ---------------------------------------------------------------------------
# vie-solver
# ---------------------------------------------------------------------------

def _random_grid(rng, max_dim=6, contrast=2.5):
    dims = tuple(int(d) for d in rng.integers(2, max_dim + 1, 3))
    g = vie.PermittivityGrid.vacuum(dims, 1.0 / 20.0)
    g.eps[:] = rng.uniform(1.0, contrast, g.n_voxels)
    return g


def check_vacuum_identity(rng):
    with _quiet():
        warnings.simplefilter("ignore")
        g = vie.PermittivityGrid.vacuum((4, 4, 4), 1.0 / 16.0)
    A = vie.assemble_dense(g)
    d1 = np.max(np.abs(A - np.eye(3 * g.n_voxels)))
    src = np.array([0.0, 0.0, 0.37])
    zhat = np.array([0.0, 0.0, 1.0])
    f = vie.solve_fields(g, src, zhat, method="dense")
    ref = np.array([emcore.free_space_green(p, src) @ zhat for p in g.centers()])
    d2 = np.max(np.abs(f - ref))
    ok = d1 <= 1e-14 and d2 <= 1e-13
    return ok, f"operator defect {d1:.2e}, field defect {d2:.2e}"


def check_dense_fft_matvec(rng):
    worst = 0.0
    for _ in range(6):
        g = _random_grid(rng)
        A = vie.assemble_dense(g)
        x = rng.standard_normal(3 * g.n_voxels) + 1j * rng.standard_normal(3 * g.n_voxels)
        y1 = A @ x
        y2 = vie.fft_matvec(g, x)
        worst = max(worst, np.linalg.norm(y1 - y2) / np.linalg.norm(y1))
    return worst <= 1e-10, f"max rel defect {worst:.2e} (tol 1e-10)"


def check_dense_iterative_solve(rng):
    src = np.array([0.0, 0.0, 0.5])
    zhat = np.array([0.0, 0.0, 1.0])
    worst = 0.0
    for _ in range(5):
        g = _random_grid(rng)
        fd = vie.solve_fields(g, src, zhat, method="dense")
        fi = vie.solve_fields(g, src, zhat, method="iterative", rtol=1e-10)
        worst = max(worst, np.max(np.abs(fd - fi)) / np.max(np.abs(fd)))
    return worst <= 1e-6, f"max rel difference {worst:.2e} (tol 1e-6)"


def rayleigh_sphere_polarizability(method="iterative"):
    """Induced dipole of the a = lambda/20, eps = 2.25 reference sphere."""
    n, delta, radius_vox, eps = 11, 1.0 / 100.0, 5, 2.25
    with _quiet():
        warnings.simplefilter("ignore")
        g = vie.PermittivityGrid.vacuum((n, n, n), delta)
    r = np.linalg.norm(g.centers(), axis=1)
    g.eps[r <= radius_vox * delta + 1e-12] = eps
    src = np.array([10.0, 0.0, 0.0])
    zhat = np.array([0.0, 0.0, 1.0])
    field = vie.solve_fields(g, src, zhat, method=method, rtol=1e-10)
    p_ind = ((g.chi() * g.voxel_volume)[:, None] * field).sum(axis=0)
    e_inc = emcore.free_space_green((0, 0, 0), src) @ zhat
    alpha = p_ind[2] / e_inc[2]
    a = radius_vox * delta
    alpha_ref = 4 * np.pi * a**3 * (eps - 1) / (eps + 2)
    return abs(alpha), alpha_ref


def check_rayleigh_sphere(rng):
    alpha, alpha_ref = rayleigh_sphere_polarizability()
    rel = abs(alpha / alpha_ref - 1.0)
    return rel <= 0.05, f"polarizability rel err {rel:.4f} (tol 0.05)"


def check_passivity_reciprocity(rng):
    """Passivity and reciprocity of the structured Green's tensors."""
    zhat = np.array([0.0, 0.0, 1.0])
    worst_rec = 0.0
    for _ in range(20):
        g = _random_grid(rng, max_dim=4)
        span = g.spacing * max(g.dims)
        r1 = np.array([0.0, 0.0, -0.6 * span - 0.05])
        r2 = np.array([0.0, 0.0, 0.6 * span + 0.08])
        s1 = vie.solve_green_block(g, r1, method="dense")
        s2 = vie.solve_green_block(g, r2, method="dense")
        G11 = s1.self_green()
        G22 = s2.self_green()
        G12 = s2.green_at(r1)
        cs = emcore.couplings_from_green(G11, G22, G12, zhat)  # raises if unphysical
        if cs.gamma11 <= 0 or cs.gamma22 <= 0:
            return False, "non-positive decay rate on a lossless grid"
        G12_b = s1.green_at(r2).T
        worst_rec = max(worst_rec,
                        np.max(np.abs(G12 - G12_b)) / np.max(np.abs(G12)))
    ok = worst_rec <= 1e-8
    return ok, f"20 grids passive; max reciprocity defect {worst_rec:.2e} (tol 1e-8)"


def check_vacuum_power_ratio(rng):
    with _quiet():
        warnings.simplefilter("ignore")
        g = vie.PermittivityGrid.vacuum((5, 5, 5), 1.0 / 16.0)
    out = vie.scattered_green_pair(g, (0, 0, -0.3), (0, 0, 0.3), method="dense")
    cs = emcore.couplings_from_green(out[0], out[1], out[2], (0, 0, 1))
    ok = cs.purcell == 1.0 and cs.purcell2 == 1.0
    return ok, f"emitted power ratios ({cs.purcell}, {cs.purcell2}) (expect exactly 1)"


# ---------------------------------------------------------------------------
# quantum
# ---------------------------------------------------------------------------

def check_steady_state_invariants(rng):
    worst = {"herm": 0.0, "trace": 0.0, "eig": 0.0, "resid": 0.0, "x": 0.0}
    for _ in range(10_000):
        params = quantum.random_params(rng)
        rho = quantum.steady_state(params, check=False)
        m = rho.matrix
        worst["herm"] = max(worst["herm"], np.max(np.abs(m - m.conj().T)))
        worst["trace"] = max(worst["trace"], abs(np.trace(m) - 1.0))
        worst["eig"] = max(worst["eig"], max(0.0, -np.linalg.eigvalsh(m).min()))
        L = quantum.build_liouvillian(params)
        worst["resid"] = max(worst["resid"],
                             np.linalg.norm(L @ m.reshape(-1, order="F")))
        mask = np.zeros((4, 4), dtype=bool)
        mask[np.diag_indices(4)] = True
        mask[1, 2] = mask[2, 1] = True
        worst["x"] = max(worst["x"], np.max(np.abs(m[~mask])))
    ok = (worst["herm"] <= 1e-10 and worst["trace"] <= 1e-10
          and worst["eig"] <= 1e-9 and worst["resid"] <= 1e-10
          and worst["x"] <= 1e-10)
    return ok, ", ".join(f"{k}={v:.1e}" for k, v in worst.items())


def check_propagation_oracle(rng):
    worst = 0.0
    for _ in range(100):
        params = quantum.random_params(rng, pump_range=(0.05, 1.0))
        a = quantum.steady_state(params).matrix
        b = quantum.propagate_to_steady(params).matrix
        worst = max(worst, np.max(np.abs(a - b)))
    return worst <= 1e-8, f"max entrywise gap {worst:.2e} (tol 1e-8)"


def check_witness_equivalence(rng):
    worst_c = worst_n = 0.0
    for _ in range(10_000):
        params = quantum.random_params(rng)
        rho = quantum.steady_state(params, check=False)
        worst_c = max(worst_c, abs(quantum.concurrence(rho)
                                   - quantum.concurrence_wootters(rho)))
        worst_n = max(worst_n, abs(quantum.negativity(rho)
                                   - quantum.negativity_partial_transpose(rho)))
    ok = worst_c <= 1e-10 and worst_n <= 1e-10
    return ok, f"concurrence gap {worst_c:.1e}, negativity gap {worst_n:.1e}"


def check_witness_threshold_agreement(rng):
    for _ in range(10_000):
        m = quantum.random_x_state(rng)
        c = quantum.concurrence(m)
        n = quantum.negativity(m)
        if (c > 0) != (n > 0):
            return False, f"C={c}, N={n} disagree on entanglement onset"
    return True, "C > 0 iff N > 0 on 10^4 random X states"


def check_sign_flip_invariance(rng):
    worst = 0.0
    for _ in range(200):
        params = quantum.random_params(rng)
        c0 = quantum.concurrence(quantum.steady_state(params, check=False))
        for flip in ("gamma12", "g12"):
            kw = {"gamma11": params.gamma11, "gamma22": params.gamma22,
                  "gamma12": params.gamma12, "g12": params.g12, "P": params.P}
            kw[flip] = -kw[flip]
            c1 = quantum.concurrence(
                quantum.steady_state(quantum.MasterEqParams(**kw), check=False))
            worst = max(worst, abs(c0 - c1))
    return worst <= 1e-10, f"max concurrence shift {worst:.2e} (tol 1e-10)"


def check_isolation_populations(rng):
    worst = 0.0
    for _ in range(100):
        gam = rng.uniform(0.1, 3.0)
        P = rng.uniform(1e-4, 2.0)
        rho = quantum.steady_state(
            quantum.MasterEqParams(gam, gam, 0.0, 0.0, P), check=False)
        pop = rho.rho11 + rho.rho33
        worst = max(worst, abs(pop - P / (P + gam)))
    return worst <= 1e-12, f"max |pop - P/(P+gamma)| = {worst:.2e} (tol 1e-12)"


def check_mems_bound(rng):
    r0, sl0 = quantum.mems_curve(0.0)
    r1, sl1 = quantum.mems_curve(1.0)
    lo = quantum.mems_curve(2.0 / 3.0 - 1e-12)[1]
    hi = quantum.mems_curve(2.0 / 3.0)[1]
    if not (abs(sl0 - 8.0 / 9.0) < 1e-12 and sl1 == 0.0
            and abs(lo - hi) < 1e-9 and abs(hi - 16.0 / 27.0) < 1e-12):
        return False, "endpoint or branch-continuity defect"
    # Random states never beat the curve at comparable mixedness.
    rs = np.linspace(0.0, 1.0, 2001)
    curve_sl = np.array([quantum.mems_curve(r)[1] for r in rs])
    violations = 0
    for _ in range(100_000):
        m = quantum.random_density_matrix(rng)
        sl = quantum.linear_entropy(m)
        c = quantum.concurrence_wootters(m)
        idx = np.abs(curve_sl - sl) <= 0.005
        if np.any(idx) and c > rs[idx].max() + 1e-9:
            violations += 1
    return violations == 0, f"{violations} samples above the curve (expect 0)"


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def _toy_setup(dims=(6, 6, 6), spacing=1.0 / 16.0, d12=0.25, **cfg_kw):
    with _quiet():
        warnings.simplefilter("ignore")
        grid = vie.PermittivityGrid.vacuum(dims, spacing)
    emitters = (np.array([0.0, 0.0, -d12 / 2]), np.array([0.0, 0.0, d12 / 2]))
    cfg = optimizer.DesignConfig(**cfg_kw)
    return grid, emitters, cfg


def check_born_linearity(rng):
    G1 = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    G2 = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    zero = optimizer.born_delta_green(G1, G2, 0.0, 1e-4)
    one = optimizer.born_delta_green(G1, G2, 0.05, 1e-4)
    two = optimizer.born_delta_green(G1, G2, 0.10, 1e-4)
    ok = np.all(zero == 0.0) and np.array_equal(two, 2.0 * one)
    return ok, "zero at delta_eps=0 and exactly linear"


def check_one_voxel_convergence(rng):
    grid, emitters, cfg = _toy_setup(dims=(4, 4, 4))
    state = optimizer.compute_state(grid, emitters, cfg)
    idx = int(np.argmax(~grid.frozen))
    grid2 = grid.copy()
    grid2.eps[idx] += 0.05
    kk2 = (2 * np.pi)**2 * grid.voxel_volume
    sum_dG = {key: np.zeros((3, 3), dtype=complex) for key in state.tensors}
    optimizer._accumulate_dG(sum_dG, state, [idx], 0.05, kk2)
    mism = optimizer.verify_convergence(state.tensors, sum_dG, grid2, emitters, cfg)
    return mism <= 1e-3, f"one-voxel mismatch {mism:.2e} (tol 1e-3)"


def check_frozen_reference_order_independence(rng):
    grid, emitters, cfg = _toy_setup(dims=(4, 4, 4),
                                     sweep_mode="frozen-reference")
    state = optimizer.compute_state(grid, emitters, cfg)
    reps = sorted(optimizer._symmetry_orbits(grid, cfg, state.emitters))
    baseline = None
    for trial in range(5):
        g = grid.copy()
        st = optimizer.compute_state(g, emitters, cfg)
        order = list(rng.permutation(reps))
        _, _, acc = optimizer.sweep_once(g, cfg, st, order=order)
        key = (acc, tuple(np.round(g.eps, 12)))
        if baseline is None:
            baseline = key
        elif key != baseline:
            return False, f"accepted set changed under permutation {trial}"
    return True, f"accepted set stable over 5 random orders ({baseline[0]} voxels)"


def check_design_run_invariants(rng):
    grid, emitters, cfg = _toy_setup(dims=(6, 6, 6), max_iterations=6,
                                     symmetry="mirror-z", pump_ratio=5e-3)
    rec = optimizer.optimize(grid, emitters, cfg)
    values = rec.values
    mono = all(b >= a for a, b in zip(values, values[1:]))
    eps_ok = np.all(rec.final_grid.eps >= 1.0) and np.all(
        rec.final_grid.eps <= cfg.eps_max + 1e-12)
    mism_ok = all(e.convergence_mismatch <= cfg.eta_converge for e in rec.entries)
    purcell_gap = max(
        abs(e.couplings.gamma11 - e.couplings.gamma22)
        / e.couplings.gamma11 for e in rec.entries)
    ok = mono and eps_ok and mism_ok and purcell_gap <= 1e-6
    return ok, (f"monotone={mono}, bounds={eps_ok}, mismatch ok={mism_ok}, "
                f"Purcell asymmetry {purcell_gap:.1e} (tol 1e-6)")


CHECKS = [
    ("emcore/aligned-closed-forms", check_aligned_closed_forms),
    ("emcore/transposition-reciprocity", check_green_reciprocity),
    ("emcore/self-limit-richardson", check_self_limit_richardson),
    ("vie/vacuum-identity", check_vacuum_identity),
    ("vie/dense-vs-fft-matvec", check_dense_fft_matvec),
    ("vie/dense-vs-iterative-solve", check_dense_iterative_solve),
    ("vie/rayleigh-sphere", check_rayleigh_sphere),
    ("vie/passivity-reciprocity", check_passivity_reciprocity),
    ("vie/vacuum-power-ratio", check_vacuum_power_ratio),
    ("quantum/steady-state-invariants", check_steady_state_invariants),
    ("quantum/propagation-oracle", check_propagation_oracle),
    ("quantum/witness-equivalence", check_witness_equivalence),
    ("quantum/witness-threshold-agreement", check_witness_threshold_agreement),
    ("quantum/sign-flip-invariance", check_sign_flip_invariance),
    ("quantum/isolation-populations", check_isolation_populations),
    ("quantum/mems-bound", check_mems_bound),
    ("optimizer/born-linearity", check_born_linearity),
    ("optimizer/one-voxel-convergence-identity", check_one_voxel_convergence),
    ("optimizer/frozen-reference-order-independence",
     check_frozen_reference_order_independence),
    ("optimizer/design-run-invariants", check_design_run_invariants),
]


def run_all(seed=0, corrupt_self_term=False, stream=None):
    """Run every named check; returns True iff all pass.

    Prints one `PASS name (detail)` / `FAIL name (detail)` line per
    check to `stream` (default stdout).
    """
    import sys

    out = stream if stream is not None else sys.stdout
    ok_all = True
    ctx = _corrupted_self_term() if corrupt_self_term else _null_ctx()
    with ctx:
        for name, fn in CHECKS:
            rng = np.random.default_rng(seed)
            t0 = time.time()
            try:
                ok, detail = fn(rng)
            except Exception as exc:  # a crashed check is a failed check
                ok, detail = False, f"raised {type(exc).__name__}: {exc}"
            ok_all &= ok
            status = "PASS" if ok else "FAIL"
            print(f"{status}  {name:45s} {detail}  [{time.time() - t0:.1f}s]",
                  file=out)
    return ok_all


@contextmanager
def _null_ctx():
    yield
