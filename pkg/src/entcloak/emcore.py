"""Homogeneous-medium dyadic Green's tensor and coupling-rate conversion.

Internal unit system: lengths are measured in units of the emitter
wavelength (lambda0 = 1, so k0 = 2*pi), all rates in units of the
free-space decay rate gamma0 = 1, and hbar = eps0 = c = 1.  Every
quantity the quantum model consumes is a dimensionless ratio, so the
dipole moment magnitude cancels and never appears.

The dyadic convention is G = [I + grad grad / k^2] e^{ikR} / (4 pi R),
for which Im G_aa(r, r) -> k / (6 pi) as R -> 0.  With that convention

    gamma_ij / gamma0 = (6 pi / k) Im{ p^* . G(r_i, r_j) . p }
    g_ij   / gamma0   = (3 pi / k) Re{ p^* . G(r_i, r_j) . p }   (i != j)

with p a unit dipole orientation.  The factor-2 asymmetry between the
dissipative and coherent conversions is intentional and load-bearing.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CoincidentPointsError, SolverInconsistencyError

__all__ = [
    "UnitSystem",
    "CouplingSet",
    "free_space_green",
    "couplings_from_green",
    "aligned_gamma12",
    "aligned_g12",
    "COINCIDENT_THRESHOLD",
]

#: Separations below this (in lambda0 units) are treated as coincident.
COINCIDENT_THRESHOLD = 1e-6

#: Tolerance on the cross-spectral positivity bound |gamma12| <= sqrt(g11*g22).
POSITIVITY_TOL = 1e-9


@dataclass(frozen=True)
class UnitSystem:
    """Reference units: all lengths in lambda0, all rates in gamma0."""

    lambda0: float = 1.0
    k0: float = 2.0 * np.pi
    rate_unit: float = 1.0

    def __post_init__(self):
        if not np.isclose(self.k0 * self.lambda0, 2.0 * np.pi, rtol=0, atol=1e-15):
            raise ValueError("k0 * lambda0 must equal 2*pi exactly")
        if self.rate_unit != 1.0:
            raise ValueError("gamma0 is 1 by construction in internal units")


def as_position(r):
    """Coerce a 3-component position (lambda0 units) to a float array."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3,):
        raise ValueError(f"position must have 3 components, got shape {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("position components must be finite")
    return r


@dataclass(frozen=True)
class CouplingSet:
    """Dimensionless master-equation inputs, all in units of gamma0.

    gamma11/gamma22 are the single-emitter decay rates (Purcell-scaled),
    gamma12 the correlated-decay rate and g12 the coherent
    excitation-exchange rate.
    """

    gamma11: float
    gamma22: float
    gamma12: float
    g12: float

    @property
    def purcell(self):
        """Purcell factor of emitter 1 (gamma11 / gamma0 with gamma0 = 1)."""
        return self.gamma11

    @property
    def purcell2(self):
        return self.gamma22

    def validate(self):
        """Raise SolverInconsistencyError if the set is unphysical."""
        if not (self.gamma11 > 0 and self.gamma22 > 0):
            raise SolverInconsistencyError(
                f"decay rates must be positive, got gamma11={self.gamma11}, "
                f"gamma22={self.gamma22}"
            )
        bound = np.sqrt(self.gamma11 * self.gamma22) + POSITIVITY_TOL
        if abs(self.gamma12) > bound:
            raise SolverInconsistencyError(
                f"|gamma12|={abs(self.gamma12)} exceeds sqrt(gamma11*gamma22)="
                f"{np.sqrt(self.gamma11 * self.gamma22)} beyond tolerance"
            )
        return self


def free_space_green(r1, r2, k=2.0 * np.pi):
    """Dyadic Green's tensor of vacuum between two points.

    Parameters
    ----------
    r1, r2 : array_like, shape (3,)
        Positions in lambda0 units.
    k : float
        Wavenumber (2*pi in internal units).

    Returns
    -------
    (3, 3) complex ndarray
        G(r1, r2) in units of 1/lambda0.  Symmetric under simultaneous
        index exchange and transposition (here the tensor itself is
        symmetric because it depends on the separation only through R
        and the even dyad R_hat R_hat).

    Raises
    ------
    CoincidentPointsError
        If |r1 - r2| < COINCIDENT_THRESHOLD; the caller must use the
        regularized self-term path instead.
    """
    r1 = as_position(r1)
    r2 = as_position(r2)
    d = r1 - r2
    R = float(np.linalg.norm(d))
    if R < COINCIDENT_THRESHOLD:
        raise CoincidentPointsError(
            f"separation {R:.3e} below threshold {COINCIDENT_THRESHOLD:.0e}; "
            "use the self-term path for coincident points"
        )
    x = k * R
    rhat = d / R
    outer = np.outer(rhat, rhat)
    phase = np.exp(1j * x) / (4.0 * np.pi * R)
    ca = 1.0 + (1j * x - 1.0) / x**2
    cb = (3.0 - 3j * x - x**2) / x**2
    return phase * (ca * np.eye(3) + cb * outer)


def couplings_from_green(G11, G22, G12, p_hat, k=2.0 * np.pi):
    """Convert Green's tensor samples to normalized coupling rates.

    Parameters
    ----------
    G11, G22, G12 : (3, 3) complex ndarray
        Green's tensors at (r1, r1), (r2, r2), (r1, r2).  The self
        tensors only need a physically meaningful imaginary part (their
        real diagonal is a Lamb-type shift absorbed into the emitter
        frequency and never read).
    p_hat : array_like, shape (3,)
        Unit dipole orientation (normalized to 1e-12).
    k : float
        Wavenumber.

    Returns
    -------
    CouplingSet
        gamma_ij = (6 pi / k) Im{p*.G.p}, g12 = (3 pi / k) Re{p*.G12.p}.

    Raises
    ------
    SolverInconsistencyError
        If gamma11/gamma22 are not positive or the positivity bound
        |gamma12| <= sqrt(gamma11 gamma22) is violated beyond tolerance.
    """
    p = np.asarray(p_hat, dtype=complex)
    norm = np.linalg.norm(p)
    if abs(norm - 1.0) > 1e-12:
        raise ValueError(f"p_hat must be normalized, |p|={norm!r}")

    def project(G):
        return complex(np.conjugate(p) @ np.asarray(G) @ p)

    pref = 6.0 * np.pi / k
    cs = CouplingSet(
        gamma11=pref * project(G11).imag,
        gamma22=pref * project(G22).imag,
        gamma12=pref * project(G12).imag,
        g12=0.5 * pref * project(G12).real,
    )
    return cs.validate()


def aligned_gamma12(d, k=2.0 * np.pi):
    """Closed-form gamma12/gamma0 for z-aligned dipoles separated by d along z.

    3 (sin x - x cos x) / x^3 with x = k d.
    """
    x = np.asarray(d, dtype=float) * k
    return 3.0 * (np.sin(x) - x * np.cos(x)) / x**3


def aligned_g12(d, k=2.0 * np.pi):
    """Closed-form g12/gamma0 for the same configuration.

    (3/2) (cos x + x sin x) / x^3 with x = k d.
    """
    x = np.asarray(d, dtype=float) * k
    return 1.5 * (np.cos(x) + x * np.sin(x)) / x**3
