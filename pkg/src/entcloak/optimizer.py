"""Greedy per-voxel topology optimization of the emitter-pair witness.

One iteration: solve the two emitter field problems on the current
permittivity map, sweep every eligible voxel once, score each trial
increment +delta_eps through the first-Born perturbation of the three
emitter Green's tensors

    dG_ij = k^2 G(r_i, r_k) d_eps G(r_k, r_j) dV,

keep the increment when the steady-state witness improves, then
re-solve and verify that the accumulated perturbative estimate matches
the re-solved tensors (the convergence identity of the scheme).  The
pump is held at a fixed ratio P/gamma11 of the current device decay
rate, so the steady state depends only on the coupling ratios and the
loop effectively shapes (gamma12/gamma, g12/gamma) and the Purcell
factor.

Safeguard: if a completed sweep lowers the re-solved target or breaks
the convergence identity beyond eta_converge, the sweep is reverted and
delta_eps halved; the loop stops once delta_eps falls below
delta_eps_min.  The recorded per-iteration target is therefore
non-decreasing.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import quantum
from .emcore import CouplingSet, as_position
from .errors import SolverInconsistencyError
from .vie import PermittivityGrid, solve_green_block

__all__ = [
    "DesignConfig",
    "IterationEntry",
    "DesignRecord",
    "born_delta_green",
    "evaluate_candidate",
    "sweep_once",
    "verify_convergence",
    "optimize",
    "compute_state",
    "freeze_exclusion_zone",
]

log = logging.getLogger(__name__)

_TARGETS = ("concurrence", "negativity")
_SWEEP_MODES = ("sequential", "frozen-reference")
_SYMMETRIES = ("none", "mirror-z", "z-axis-rotation-4fold")


@dataclass(frozen=True)
class DesignConfig:
    """Knobs of the greedy design loop (all lengths in lambda units)."""

    delta_eps: float = 0.05
    delta_eps_min: float = 1e-3
    eps_max: float = 9.0
    tol_accept: float = 1e-9
    eta_converge: float = 1e-2
    max_iterations: int = 200
    sweep_mode: str = "sequential"
    bidirectional: bool = False
    exclusion_radius: float = 2.0  # in voxel spacings
    symmetry: str = "none"
    target: str = "concurrence"
    pump_ratio: float = 5e-3  # P / gamma11, held fixed
    p_hat: tuple = (0.0, 0.0, 1.0)
    solver_method: str = "auto"
    solver_rtol: float = 1e-10

    def __post_init__(self):
        if self.delta_eps <= 0:
            raise ValueError("delta_eps must be positive")
        if self.eps_max < 1.0 + self.delta_eps:
            raise ValueError("eps_max must allow at least one increment")
        if self.pump_ratio <= 0:
            raise ValueError("pump_ratio must be positive")
        if self.target not in _TARGETS:
            raise ValueError(f"target must be one of {_TARGETS}")
        if self.sweep_mode not in _SWEEP_MODES:
            raise ValueError(f"sweep_mode must be one of {_SWEEP_MODES}")
        if self.symmetry not in _SYMMETRIES:
            raise ValueError(f"symmetry must be one of {_SYMMETRIES}")

    def witness(self):
        return quantum.concurrence if self.target == "concurrence" else quantum.negativity


@dataclass
class IterationEntry:
    """One completed iteration of the design trace."""

    n: int
    target_value: float
    accepted_count: int
    couplings: CouplingSet
    convergence_mismatch: float
    delta_eps_used: float


@dataclass
class DesignRecord:
    """Full result of one design run."""

    entries: list
    final_grid: PermittivityGrid
    final_rho: quantum.DensityMatrix4
    target: str
    emitters: tuple

    @property
    def values(self):
        return [e.target_value for e in self.entries]

    @property
    def final_value(self):
        return self.entries[-1].target_value

    @property
    def initial_value(self):
        return self.entries[0].target_value


def born_delta_green(G_ik, G_kj, delta_eps, voxel_volume, k=2.0 * np.pi):
    """First-Born Green's-tensor increment of one voxel perturbation.

    k^2 G(r_i, r_k) . delta_eps . G(r_k, r_j) . dV; exactly linear in
    delta_eps.
    """
    return (k**2 * delta_eps * voxel_volume) * (np.asarray(G_ik) @ np.asarray(G_kj))


def _params_from_couplings(cs, pump_ratio):
    return quantum.MasterEqParams(
        gamma11=cs.gamma11, gamma22=cs.gamma22, gamma12=cs.gamma12,
        g12=cs.g12, P=pump_ratio * cs.gamma11,
    )


def _value_from_q(q11, q22, q12, k, config, return_state=False):
    """Witness value from the p-projected Green's scalars.

    Returns None for candidates whose perturbed couplings leave the
    physical manifold (negative decay rate or positivity-bound
    violation); the caller treats those as rejected.
    """
    pref = 6.0 * np.pi / k
    cs = CouplingSet(
        gamma11=pref * q11.imag,
        gamma22=pref * q22.imag,
        gamma12=pref * q12.imag,
        g12=0.5 * pref * q12.real,
    )
    try:
        cs.validate()
        params = _params_from_couplings(cs, config.pump_ratio)
    except (SolverInconsistencyError, ValueError):
        return None
    rho = quantum.steady_state(params, check=False)
    value = config.witness()(rho)
    if return_state:
        return value, cs, rho
    return value, cs


@dataclass
class IterationState:
    """Everything one sweep needs from the latest full solve."""

    grid: PermittivityGrid
    emitters: tuple
    k: float
    p_hat: np.ndarray
    sol1: object
    sol2: object
    tensors: dict          # {(1,1): 3x3, (2,2): 3x3, (1,2): 3x3}
    q11: complex
    q22: complex
    q12: complex
    s11: np.ndarray        # per-voxel products f_i[k] . f_j[k], no conjugation
    s22: np.ndarray
    s12: np.ndarray
    couplings: CouplingSet
    target_value: float
    rho: quantum.DensityMatrix4


def compute_state(grid, emitters, config, k=2.0 * np.pi):
    """Full solve at the current map plus everything the sweep consumes."""
    r1, r2 = (as_position(r) for r in emitters)
    p = np.asarray(config.p_hat, dtype=complex)
    sol1 = solve_green_block(grid, r1, k, method=config.solver_method,
                             rtol=config.solver_rtol)
    sol2 = solve_green_block(grid, r2, k, method=config.solver_method,
                             rtol=config.solver_rtol)
    G11 = sol1.self_green()
    G22 = sol2.self_green()
    G12 = sol2.green_at(r1)
    f1 = sol1.column(p)
    f2 = sol2.column(p)
    q11 = complex(p.conj() @ G11 @ p)
    q22 = complex(p.conj() @ G22 @ p)
    q12 = complex(p.conj() @ G12 @ p)
    out = _value_from_q(q11, q22, q12, k, config, return_state=True)
    if out is None:
        raise SolverInconsistencyError(
            "solved Green's tensors yield an unphysical coupling set"
        )
    value, cs, rho = out
    return IterationState(
        grid=grid, emitters=(r1, r2), k=k, p_hat=p, sol1=sol1, sol2=sol2,
        tensors={(1, 1): G11, (2, 2): G22, (1, 2): G12},
        q11=q11, q22=q22, q12=q12,
        s11=np.einsum("ka,ka->k", f1, f1),
        s22=np.einsum("ka,ka->k", f2, f2),
        s12=np.einsum("ka,ka->k", f1, f2),
        couplings=cs, target_value=value, rho=rho,
    )


def evaluate_candidate(G11, G22, G12, fields1, fields2, voxel, delta_eps,
                       config, voxel_volume, k=2.0 * np.pi):
    """Witness value if voxel `voxel` were incremented by delta_eps.

    Applies the first-Born update to all three emitter tensors through
    the p_hat-projected field maps (reciprocity supplies the transposed
    factors), renormalizes the pump to P = pump_ratio * gamma11 of the
    candidate device, and solves the steady state.  Returns
    (value, CouplingSet), or (None, None) when the perturbed couplings
    leave the physical manifold.
    """
    p = np.asarray(config.p_hat, dtype=complex)
    q11 = complex(p.conj() @ np.asarray(G11) @ p)
    q22 = complex(p.conj() @ np.asarray(G22) @ p)
    q12 = complex(p.conj() @ np.asarray(G12) @ p)
    f1k = np.asarray(fields1)[voxel]
    f2k = np.asarray(fields2)[voxel]
    scale = k**2 * delta_eps * voxel_volume
    out = _value_from_q(
        q11 + scale * (f1k @ f1k),
        q22 + scale * (f2k @ f2k),
        q12 + scale * (f1k @ f2k),
        k, config,
    )
    if out is None:
        return None, None
    return out


def sweep_once(grid, config, state, delta_eps=None, order=None):
    """Visit every eligible voxel once; returns (grid, sum_dG, accepted).

    Sequential mode folds each accepted increment into the running
    tensor estimate before scoring later voxels; frozen-reference mode
    scores every voxel against the iteration-start tensors and applies
    all accepted increments jointly (order independent).  The grid is
    updated in place.  sum_dG maps the pair keys (1,1), (2,2), (1,2) to
    the accumulated first-Born tensor increments consumed by
    `verify_convergence`.
    """
    if delta_eps is None:
        delta_eps = config.delta_eps
    k = state.k
    dV = grid.voxel_volume
    kk2 = k**2 * dV

    orbits = _symmetry_orbits(grid, config, state.emitters)
    reps = sorted(orbits)
    if order is not None:
        order = list(order)
        if sorted(order) != reps:
            raise ValueError("order must be a permutation of the orbit representatives")
        reps = order

    q11, q22, q12 = state.q11, state.q22, state.q12
    current = state.target_value
    sum_dG = {key: np.zeros((3, 3), dtype=complex) for key in state.tensors}
    accepted = 0
    rejected_unphysical = 0
    pending = []  # frozen-reference: (members, signed delta_eps)

    for rep in reps:
        members = orbits[rep]
        for sign in (1.0,) if not config.bidirectional else (1.0, -1.0):
            if sign > 0:
                headroom = min(config.eps_max - grid.eps[m] for m in members)
            else:
                headroom = min(grid.eps[m] - 1.0 for m in members)
            step = sign * min(delta_eps, headroom)
            if abs(step) < 1e-15:
                continue
            dq11 = kk2 * step * sum(state.s11[m] for m in members)
            dq22 = kk2 * step * sum(state.s22[m] for m in members)
            dq12 = kk2 * step * sum(state.s12[m] for m in members)
            out = _value_from_q(q11 + dq11, q22 + dq22, q12 + dq12, k, config)
            if out is None:
                rejected_unphysical += 1
                continue
            value, _ = out
            if value - current <= config.tol_accept:
                continue
            # accepted
            accepted += len(members)
            if config.sweep_mode == "sequential":
                q11 += dq11
                q22 += dq22
                q12 += dq12
                current = value
                for m in members:
                    grid.eps[m] += step
                _accumulate_dG(sum_dG, state, members, step, kk2)
            else:
                pending.append((members, step))
            break  # do not also try the opposite sign

    if config.sweep_mode == "frozen-reference":
        for members, step in pending:
            for m in members:
                grid.eps[m] += step
            _accumulate_dG(sum_dG, state, members, step, kk2)

    if rejected_unphysical:
        log.debug("sweep rejected %d candidates whose perturbed couplings "
                  "left the physical manifold", rejected_unphysical)
    return grid, sum_dG, accepted


def _accumulate_dG(sum_dG, state, members, step, kk2):
    for m in members:
        X1 = state.sol1.block[m]  # G(r_k, r1)
        X2 = state.sol2.block[m]
        sum_dG[(1, 1)] += kk2 * step * (X1.T @ X1)
        sum_dG[(2, 2)] += kk2 * step * (X2.T @ X2)
        sum_dG[(1, 2)] += kk2 * step * (X1.T @ X2)


def _symmetry_orbits(grid, config, emitters):
    """Map orbit representative -> member voxel indices (non-frozen only)."""
    nx, ny, nz = grid.dims
    n = grid.n_voxels
    idx = np.arange(n)
    ix, iy, iz = np.unravel_index(idx, grid.dims)

    def flat(ax, ay, az):
        return np.ravel_multi_index((ax, ay, az), grid.dims)

    if config.symmetry == "none":
        groups = idx[:, None]
    elif config.symmetry == "mirror-z":
        _require_axis_symmetry(grid, emitters, mirror=True)
        groups = np.stack([idx, flat(ix, iy, nz - 1 - iz)], axis=1)
    else:  # z-axis-rotation-4fold
        if nx != ny:
            raise ValueError("4-fold rotation symmetry requires nx == ny")
        _require_axis_symmetry(grid, emitters, mirror=False)
        g1 = flat(iy, nx - 1 - ix, iz)
        g2 = flat(nx - 1 - ix, ny - 1 - iy, iz)
        g3 = flat(ny - 1 - iy, ix, iz)
        groups = np.stack([idx, g1, g2, g3], axis=1)

    orbits = {}
    for row in groups:
        members = sorted(set(int(m) for m in row))
        rep = members[0]
        if any(grid.frozen[m] for m in members):
            continue
        orbits[rep] = members
    return orbits


def _require_axis_symmetry(grid, emitters, mirror):
    """The symmetry constraint only makes sense on a compatible layout."""
    r1, r2 = emitters
    cx = grid.origin[0] + grid.spacing * (grid.dims[0] - 1) / 2.0
    cy = grid.origin[1] + grid.spacing * (grid.dims[1] - 1) / 2.0
    tol = 1e-9
    if abs(r1[0] - cx) > tol or abs(r1[1] - cy) > tol \
            or abs(r2[0] - cx) > tol or abs(r2[1] - cy) > tol:
        raise ValueError("symmetry constraints require emitters on the grid's "
                         "central z axis")
    if mirror:
        cz = grid.origin[2] + grid.spacing * (grid.dims[2] - 1) / 2.0
        if abs((r1[2] + r2[2]) / 2.0 - cz) > tol:
            raise ValueError("mirror-z requires emitters placed symmetrically "
                             "about the grid midplane")


def _mismatch(old_tensors, sum_dG, new_tensors):
    """Max over pairs of ||G_old + sum_dG - G_new||_F / ||G_new||_F."""
    worst = 0.0
    for key in new_tensors:
        predicted = old_tensors[key] + sum_dG[key]
        denom = np.linalg.norm(new_tensors[key])
        worst = max(worst, np.linalg.norm(predicted - new_tensors[key]) / denom)
    return worst


def verify_convergence(old_tensors, sum_dG, grid_next, emitters, config=None,
                       k=2.0 * np.pi):
    """Re-solve at grid_next and measure the accumulated-vs-resolved mismatch.

    Pure measurement: returns the max relative Frobenius mismatch over
    the (1,1), (2,2), (1,2) tensors.
    """
    if config is None:
        config = DesignConfig()
    new_state = compute_state(grid_next, emitters, config, k)
    return _mismatch(old_tensors, sum_dG, new_state.tensors)


def freeze_exclusion_zone(grid, emitters, exclusion_radius):
    """Freeze (at eps = 1) all voxels within exclusion_radius spacings
    of either emitter; keeps the field solves away from the source
    singularities."""
    pts = grid.centers()
    for r in emitters:
        d = np.linalg.norm(pts - as_position(r)[None, :], axis=1)
        near = d <= exclusion_radius * grid.spacing + 1e-12
        grid.frozen |= near
        grid.eps[near] = 1.0
    return grid


def optimize(grid0, emitters, config, k=2.0 * np.pi):
    """Run the greedy design loop; returns the full DesignRecord.

    Starts from grid0 (normally all vacuum), freezes the exclusion zone
    around both emitters, and iterates sweep / re-solve / verify until
    no voxel improves the target, the improvement falls below
    tol_accept, max_iterations is reached, or adaptive halving exhausts
    delta_eps.
    """
    grid = grid0.copy()
    freeze_exclusion_zone(grid, emitters, config.exclusion_radius)

    state = compute_state(grid, emitters, config, k)
    entries = [IterationEntry(
        n=0, target_value=state.target_value, accepted_count=0,
        couplings=state.couplings, convergence_mismatch=0.0,
        delta_eps_used=config.delta_eps,
    )]

    delta_eps = config.delta_eps
    n = 0
    while n < config.max_iterations:
        eps_backup = grid.eps.copy()
        grid, sum_dG, accepted = sweep_once(grid, config, state,
                                            delta_eps=delta_eps)
        if accepted == 0:
            break
        new_state = compute_state(grid, emitters, config, k)
        mismatch = _mismatch(state.tensors, sum_dG, new_state.tensors)
        regressed = new_state.target_value < state.target_value
        if regressed or mismatch > config.eta_converge:
            grid.eps[:] = eps_backup
            delta_eps *= 0.5
            log.info("iteration %d rejected (%s); delta_eps halved to %g",
                     n + 1, "target regression" if regressed else
                     f"convergence mismatch {mismatch:.2e}", delta_eps)
            if delta_eps < config.delta_eps_min:
                break
            continue
        n += 1
        gain = new_state.target_value - state.target_value
        state = new_state
        entries.append(IterationEntry(
            n=n, target_value=state.target_value, accepted_count=accepted,
            couplings=state.couplings, convergence_mismatch=mismatch,
            delta_eps_used=delta_eps,
        ))
        log.info("iteration %d: %s=%.6f (+%.2e), %d voxels accepted, "
                 "mismatch %.2e", n, config.target, state.target_value,
                 gain, accepted, mismatch)
        if gain < config.tol_accept:
            break

    return DesignRecord(entries=entries, final_grid=grid, final_rho=state.rho,
                        target=config.target, emitters=state.emitters)
