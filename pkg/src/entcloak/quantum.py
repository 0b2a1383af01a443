"""Steady state of two incoherently pumped emitters and entanglement witnesses.

The two-emitter master equation (rotating frame, resonant emitters)

    drho/dt = -i[H, rho]
              + sum_ij (gamma_ij / 2) (2 s_j rho s_i+ - s_i+ s_j rho - rho s_i+ s_j)
              + sum_i  (P / 2)        (2 s_i+ rho s_i - s_i s_i+ rho - rho s_i s_i+)

with H = g12 (s1+ s2 + s2+ s1), acts on the basis
{|g1 g2>, |e1 g2>, |g1 e2>, |e1 e2>} (indices 0..3).  All rates are in
units of gamma0.  The frequency term omega sum_i s_i+ s_i is dropped:
every other generator conserves excitation number, so the steady state
is frame independent.

Steady states of this model are X-type: the only surviving coherence is
rho12 = <e1 g2| rho |g1 e2>.  The closed-form witnesses below exploit
that structure; the general (eigenvalue-based) constructions are kept as
independent paths and cross-checked in the test suite.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DegenerateSteadyStateError

__all__ = [
    "MasterEqParams",
    "DensityMatrix4",
    "NonXStateWarning",
    "build_liouvillian",
    "steady_state",
    "propagate_to_steady",
    "concurrence",
    "concurrence_wootters",
    "negativity",
    "negativity_partial_transpose",
    "linear_entropy",
    "mems_curve",
    "random_density_matrix",
    "random_x_state",
    "random_params",
]


class NonXStateWarning(UserWarning):
    """Emitted when a closed-form X-state witness falls back to the general path."""


# ---------------------------------------------------------------------------
# Operators and Liouvillian
# ---------------------------------------------------------------------------

def _lowering_ops():
    s1 = np.zeros((4, 4), dtype=complex)
    s1[0, 1] = 1.0
    s1[2, 3] = 1.0
    s2 = np.zeros((4, 4), dtype=complex)
    s2[0, 2] = 1.0
    s2[1, 3] = 1.0
    return s1, s2


_S1, _S2 = _lowering_ops()
_I4 = np.eye(4, dtype=complex)


def _spre_spost(A, B):
    """Superoperator matrix of rho -> A rho B for column-stacked vec(rho)."""
    return np.kron(B.T, A)


def _dissipator(c):
    """Superoperator of rho -> c rho c+ - (c+c rho + rho c+c)/2."""
    cd = c.conj().T
    cdc = cd @ c
    return (
        _spre_spost(c, cd)
        - 0.5 * _spre_spost(cdc, _I4)
        - 0.5 * _spre_spost(_I4, cdc)
    )


def _cross_dissipator(ci, cj):
    """Superoperator of the (i, j) cross Lindblad term at unit rate.

    rho -> c_j rho c_i+ - (c_i+ c_j rho + rho c_i+ c_j)/2, plus the
    transposed (j, i) term; both cross terms always appear together with
    the same rate for non-chiral coupling.
    """
    out = np.zeros((16, 16), dtype=complex)
    for a, b in ((ci, cj), (cj, ci)):
        ad = a.conj().T
        adb = ad @ b
        out += (
            _spre_spost(b, ad)
            - 0.5 * _spre_spost(adb, _I4)
            - 0.5 * _spre_spost(_I4, adb)
        )
    return out


def _hamiltonian_part():
    H0 = _S1.conj().T @ _S2 + _S2.conj().T @ _S1
    return -1j * (_spre_spost(H0, _I4) - _spre_spost(_I4, H0))


# Constant generator pieces; build_liouvillian is a linear combination.
_L_G11 = _dissipator(_S1)
_L_G22 = _dissipator(_S2)
_L_G12 = _cross_dissipator(_S1, _S2)
_L_PUMP = _dissipator(_S1.conj().T) + _dissipator(_S2.conj().T)
_L_COH = _hamiltonian_part()

#: Row vector implementing rho -> Tr(rho) on vec(rho); used for trace checks.
TRACE_FUNCTIONAL = np.eye(4, dtype=complex).reshape(-1, order="F").conj()


@dataclass(frozen=True)
class MasterEqParams:
    """Dimensionless master-equation rates, all in units of gamma0.

    P is the symmetric incoherent pump applied to both emitters.
    """

    gamma11: float
    gamma22: float
    gamma12: float
    g12: float
    P: float

    def __post_init__(self):
        if not (self.gamma11 > 0 and self.gamma22 > 0):
            raise ValueError("gamma11 and gamma22 must be positive")
        if self.P < 0:
            raise ValueError("pump rate must be non-negative")
        bound = np.sqrt(self.gamma11 * self.gamma22) * (1 + 1e-12) + 1e-9
        if abs(self.gamma12) > bound:
            raise ValueError(
                f"|gamma12|={abs(self.gamma12)} violates the positivity bound "
                f"sqrt(gamma11*gamma22)={np.sqrt(self.gamma11 * self.gamma22)}"
            )


class DensityMatrix4:
    """4x4 two-qubit density matrix in the basis {gg, eg, ge, ee}.

    Thin wrapper over the ndarray with the named entries the witnesses
    read.  `matrix` is the raw array; arithmetic should use it directly.
    """

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=complex)
        if m.shape != (4, 4):
            raise ValueError(f"density matrix must be 4x4, got {m.shape}")
        self.matrix = m

    @property
    def rho00(self):
        return self.matrix[0, 0].real

    @property
    def rho11(self):
        return self.matrix[1, 1].real

    @property
    def rho22(self):
        return self.matrix[2, 2].real

    @property
    def rho33(self):
        return self.matrix[3, 3].real

    @property
    def rho12(self):
        return self.matrix[1, 2]

    def validate(self, herm_tol=1e-10, trace_tol=1e-10, eig_tol=1e-9):
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > herm_tol:
            raise ValueError("density matrix not Hermitian within tolerance")
        if abs(np.trace(m).real - 1.0) > trace_tol or abs(np.trace(m).imag) > trace_tol:
            raise ValueError("density matrix trace differs from 1")
        if np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() < -eig_tol:
            raise ValueError("density matrix has a significantly negative eigenvalue")
        return self

    def __repr__(self):
        return f"DensityMatrix4({self.matrix!r})"


def _as_matrix(rho):
    if isinstance(rho, DensityMatrix4):
        return rho.matrix
    return np.asarray(rho, dtype=complex)


def build_liouvillian(params):
    """16x16 matrix L with vec(drho/dt) = L vec(rho), column-stacked vec.

    Contains the coherent term -i[H, rho] with H = g12 (s1+ s2 + h.c.),
    the full gamma_ij Lindblad sum (cross terms included), and the
    incoherent pump on both emitters.
    """
    return (
        params.g12 * _L_COH
        + params.gamma11 * _L_G11
        + params.gamma22 * _L_G22
        + params.gamma12 * _L_G12
        + params.P * _L_PUMP
    )


# Relative threshold separating "numerically zero" singular values of L.
_KERNEL_RTOL = 1e-12


def steady_state(params, check=True):
    """Unique steady state of the master equation.

    Solves L vec(rho) = 0 by smallest-singular-vector extraction and
    normalizes the trace.

    Raises
    ------
    DegenerateSteadyStateError
        If the kernel dimension exceeds 1 (e.g. P = 0 with gamma12 =
        +/- gamma, which decouples a dark state).
    """
    L = build_liouvillian(params)
    _, s, vh = np.linalg.svd(L)
    tol = max(s[0] * _KERNEL_RTOL, 1e-13)
    kernel_dim = int(np.sum(s < tol))
    if kernel_dim > 1:
        raise DegenerateSteadyStateError(
            f"Liouvillian kernel has dimension {kernel_dim}; "
            "steady state is not unique",
            kernel_dim=kernel_dim,
        )
    v = vh[-1].conj()
    rho = v.reshape(4, 4, order="F")
    rho = rho / np.trace(rho)
    rho = 0.5 * (rho + rho.conj().T)
    out = DensityMatrix4(rho)
    if check:
        out.validate()
        residual = np.linalg.norm(L @ rho.reshape(-1, order="F"))
        if residual > 1e-10 * max(1.0, s[0]):
            raise ConvergenceError(
                f"steady-state residual {residual:.3e} above tolerance",
                residual=residual,
            )
    return out


def propagate_to_steady(params, rho0=None, t_max=None, dt=None,
                        residual_tol=1e-12, check_every=200):
    """Independent steady-state oracle: fixed-step RK4 time integration.

    Integrates drho/dt = L rho from rho0 (default: both emitters in the
    ground state) until ||L rho|| <= residual_tol, then returns the
    final state.  Because L is linear, any stable fixed step converges
    to the exact kernel direction; dt only has to satisfy the stated
    precondition dt <= 0.01 / max rate.

    Raises
    ------
    ConvergenceError
        If t_max is reached first.
    """
    L = build_liouvillian(params)
    max_rate = max(params.gamma11, params.gamma22, abs(params.gamma12),
                   abs(params.g12), params.P, 1e-12)
    if dt is None:
        dt = 0.01 / max_rate
    elif dt > 0.01 / max_rate:
        raise ValueError(f"dt={dt} violates the bound 0.01/max_rate={0.01 / max_rate}")
    if t_max is None:
        # Slowest relevant timescale is set by the weakest mixing rate.
        slow = min(x for x in (params.P, params.gamma11, params.gamma22) if x > 0)
        t_max = 60.0 / slow

    if rho0 is None:
        rho = np.zeros((4, 4), dtype=complex)
        rho[0, 0] = 1.0
    else:
        rho = _as_matrix(rho0).copy()
    v = rho.reshape(-1, order="F")

    n_steps = int(np.ceil(t_max / dt))
    for step in range(n_steps):
        k1 = L @ v
        k2 = L @ (v + 0.5 * dt * k1)
        k3 = L @ (v + 0.5 * dt * k2)
        k4 = L @ (v + dt * k3)
        v = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if step % check_every == 0 and np.linalg.norm(L @ v) <= residual_tol:
            break
    else:
        residual = float(np.linalg.norm(L @ v))
        raise ConvergenceError(
            f"time propagation hit t_max={t_max} with residual {residual:.3e}",
            residual=residual,
        )
    rho = v.reshape(4, 4, order="F")
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix4(rho / np.trace(rho))


# ---------------------------------------------------------------------------
# Witnesses
# ---------------------------------------------------------------------------

#: Magnitude above which a non-rho12 off-diagonal disqualifies the X closed form.
_X_TOL = 1e-8


def _is_x_state(m, tol=_X_TOL):
    mask = np.zeros((4, 4), dtype=bool)
    mask[np.diag_indices(4)] = True
    mask[1, 2] = mask[2, 1] = True
    return np.max(np.abs(m[~mask])) <= tol


def concurrence(rho):
    """Wootters concurrence via the single-coherence X-state closed form.

    C = 2 max{0, |rho12| - sqrt(rho00 rho33)}.  Valid for the steady
    states of this model; non-X input falls back to the general
    eigenvalue construction and emits NonXStateWarning.
    """
    m = _as_matrix(rho)
    if not _is_x_state(m):
        warnings.warn(
            "density matrix is not X-type with a single rho12 coherence; "
            "falling back to the general Wootters construction",
            NonXStateWarning,
            stacklevel=2,
        )
        return concurrence_wootters(m)
    val = 2.0 * (abs(m[1, 2]) - np.sqrt(max(m[0, 0].real * m[3, 3].real, 0.0)))
    return max(0.0, float(val))


_SY2 = np.kron(np.array([[0, -1j], [1j, 0]]), np.array([[0, -1j], [1j, 0]]))


def concurrence_wootters(rho):
    """General two-qubit concurrence from the spin-flipped spectrum.

    max{0, l1 - l2 - l3 - l4} with l_i the decreasing square roots of
    the eigenvalues of rho (sy x sy) rho* (sy x sy).
    """
    m = _as_matrix(rho)
    R = m @ _SY2 @ m.conj() @ _SY2
    ev = np.linalg.eigvals(R).real
    lam = np.sqrt(np.abs(np.sort(ev)[::-1]))
    return max(0.0, float(lam[0] - lam[1] - lam[2] - lam[3]))


def negativity(rho):
    """Negativity via the X-state closed form.

    N = max{0, sqrt((rho00 - rho33)^2 + 4 |rho12|^2) - (rho00 + rho33)}.
    Non-X input falls back to the partial-transpose construction and
    emits NonXStateWarning.
    """
    m = _as_matrix(rho)
    if not _is_x_state(m):
        warnings.warn(
            "density matrix is not X-type with a single rho12 coherence; "
            "falling back to the partial-transpose construction",
            NonXStateWarning,
            stacklevel=2,
        )
        return negativity_partial_transpose(m)
    a, d = m[0, 0].real, m[3, 3].real
    val = np.sqrt((a - d) ** 2 + 4.0 * abs(m[1, 2]) ** 2) - (a + d)
    return max(0.0, float(val))


def negativity_partial_transpose(rho):
    """Negativity from the partial transpose: 2 sum |negative eigenvalues|."""
    m = _as_matrix(rho)
    pt = m.reshape(2, 2, 2, 2).transpose(0, 3, 2, 1).reshape(4, 4)
    ev = np.linalg.eigvalsh(0.5 * (pt + pt.conj().T))
    return float(2.0 * np.sum(np.abs(ev[ev < 0])))


def linear_entropy(rho):
    """Linear entropy S_L = (4/3)(1 - Tr rho^2); 0 pure, 1 maximally mixed."""
    m = _as_matrix(rho)
    return float((4.0 / 3.0) * (1.0 - np.trace(m @ m).real))


def mems_curve(r):
    """(C, S_L) of the maximally-entangled-mixed-state family at parameter r.

    The family has coherence r/2 and populations {g, 1-2g, 0, g} with
    g = max{r/2, 1/3}, giving C = r and

        S_L = (8/3) r (1 - r)        for r >= 2/3
        S_L = 8/9 - (2/3) r^2        for r <  2/3

    Both branches meet at S_L = 16/27 for r = 2/3.
    """
    r = float(r)
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"MEMS parameter must lie in [0, 1], got {r}")
    if r >= 2.0 / 3.0:
        sl = (8.0 / 3.0) * r * (1.0 - r)
    else:
        sl = 8.0 / 9.0 - (2.0 / 3.0) * r**2
    return r, sl


# ---------------------------------------------------------------------------
# Random-state sampling for test oracles
# ---------------------------------------------------------------------------

def random_density_matrix(rng, dim=4):
    """Ginibre-induced random density matrix (normalized A A+)."""
    A = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    m = A @ A.conj().T
    return m / np.trace(m).real


def random_x_state(rng):
    """Random X-type density matrix with only the rho12 coherence."""
    pops = rng.dirichlet(np.ones(4))
    c = rng.uniform(0, 1) * np.sqrt(pops[1] * pops[2])
    phase = np.exp(2j * np.pi * rng.uniform())
    m = np.diag(pops).astype(complex)
    m[1, 2] = c * phase
    m[2, 1] = np.conj(m[1, 2])
    return m


def random_params(rng, pump_range=(0.02, 1.0), rate_range=(0.2, 2.0)):
    """Random valid MasterEqParams for property tests."""
    g11 = rng.uniform(*rate_range)
    g22 = rng.uniform(*rate_range)
    s = rng.uniform(-0.999, 0.999)
    return MasterEqParams(
        gamma11=g11,
        gamma22=g22,
        gamma12=s * np.sqrt(g11 * g22),
        g12=rng.uniform(-2.0, 2.0),
        P=rng.uniform(*pump_range),
    )
