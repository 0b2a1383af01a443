"""Volume-integral (coupled-dipole) solver for voxelized dielectric maps.

Discretizes the Lippmann-Schwinger equation on a uniform Cartesian voxel
grid: each voxel carries the total field x_k = E(r_k), coupled through
the vacuum dyadic tensor,

    x_k = b_k + k^2 [ sum_{j != k} G0(r_k, r_j) chi_j dV x_j + m chi_k x_k ]

with chi = eps - 1, b_k = G0(r_k, r_source) p_hat, and m the
equivalent-volume-sphere self-integral of G0 over one voxel.  Solving
this system with b the vacuum Green's column makes x_k exactly the
column G(r_k, r_source) p_hat of the structured-medium Green's tensor,
and the tensor anywhere else follows from the re-radiation sum

    G(r, r_s) = G0(r, r_s) + k^2 sum_k G0(r, r_k) chi_k dV x_k.

The self term m = -1/(3 k^2) + (2/(3 k^2)) [(1 - i k a) e^{i k a} - 1],
with a the radius of the sphere of volume dV, carries the static
depolarization (Clausius-Mossotti limit) plus the finite-size radiative
correction; it is isolated in `self_interaction` so alternative schemes
can be swapped in.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy.sparse.linalg import LinearOperator, bicgstab

from .emcore import as_position, free_space_green
from .errors import CoincidentPointsError, ConvergenceError, GridTooLargeError

__all__ = [
    "PermittivityGrid",
    "GreenSolution",
    "self_interaction",
    "assemble_dense",
    "fft_matvec",
    "solve_fields",
    "solve_green_block",
    "scattered_green_pair",
    "DENSE_UNKNOWN_LIMIT",
]

#: Dense assembly is refused above this many scalar unknowns (3 per voxel).
DENSE_UNKNOWN_LIMIT = 6000

#: Default Krylov iteration cap.
MAX_KRYLOV_ITER = 2000


class GridResolutionWarning(UserWarning):
    """Voxel spacing too coarse for the permitted dielectric contrast."""


@dataclass
class PermittivityGrid:
    """Uniform voxel grid of real dielectric constants.

    origin is the center of voxel (0, 0, 0); voxel (ix, iy, iz) is
    centered at origin + spacing * (ix, iy, iz).  Voxels are stored flat
    in lexicographic (ix, iy, iz) order (C order).  `frozen` marks
    voxels excluded from optimization.
    """

    origin: np.ndarray
    spacing: float
    dims: tuple
    eps: np.ndarray
    eps_max: float = 9.0
    frozen: np.ndarray = None

    def __post_init__(self):
        self.origin = as_position(self.origin)
        self.dims = tuple(int(n) for n in self.dims)
        n = self.n_voxels
        self.eps = np.asarray(self.eps, dtype=float).reshape(n)
        if self.frozen is None:
            self.frozen = np.zeros(n, dtype=bool)
        else:
            self.frozen = np.asarray(self.frozen, dtype=bool).reshape(n)
        if self.spacing <= 0:
            raise ValueError("voxel spacing must be positive")
        if np.any(self.eps < 1.0) or np.any(self.eps > self.eps_max):
            raise ValueError(f"eps must lie in [1, eps_max={self.eps_max}]")
        limit = 1.0 / (10.0 * np.sqrt(self.eps_max))
        if self.spacing > limit + 1e-15:
            warnings.warn(
                f"spacing {self.spacing:.4g} exceeds lambda/(10 sqrt(eps_max))"
                f" = {limit:.4g}; solves remain valid but discretization error"
                " grows",
                GridResolutionWarning,
                stacklevel=2,
            )

    @classmethod
    def vacuum(cls, dims, spacing, origin=None, eps_max=9.0):
        """All-vacuum grid; default origin centers the grid on (0, 0, 0)."""
        dims = tuple(int(n) for n in dims)
        if origin is None:
            origin = -spacing * (np.asarray(dims, dtype=float) - 1.0) / 2.0
        n = dims[0] * dims[1] * dims[2]
        return cls(origin=np.asarray(origin, dtype=float), spacing=spacing,
                   dims=dims, eps=np.ones(n), eps_max=eps_max)

    @property
    def n_voxels(self):
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def voxel_volume(self):
        return self.spacing**3

    def centers(self):
        """(N, 3) array of voxel centers in lexicographic order."""
        nx, ny, nz = self.dims
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                                 indexing="ij")
        idx = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3)
        return self.origin[None, :] + self.spacing * idx

    def copy(self):
        with warnings.catch_warnings():
            # the original already carried the resolution warning
            warnings.simplefilter("ignore", GridResolutionWarning)
            return PermittivityGrid(
                origin=self.origin.copy(), spacing=self.spacing, dims=self.dims,
                eps=self.eps.copy(), eps_max=self.eps_max,
                frozen=self.frozen.copy(),
            )

    def chi(self):
        return self.eps - 1.0


def self_interaction(spacing, k):
    """Self-integral of G0 over one voxel (equivalent-volume sphere).

    Returns the complex scalar m with  integral_{voxel} G0 dV' = m * I.
    The real part carries the L = I/3 depolarization plus the finite-size
    correction, the imaginary part the radiative reaction that keeps the
    scheme consistent with the optical theorem.
    """
    dV = spacing**3
    a = (3.0 * dV / (4.0 * np.pi)) ** (1.0 / 3.0)
    ka = k * a
    return (-1.0 + 2.0 * ((1.0 - 1j * ka) * np.exp(1j * ka) - 1.0)) / (3.0 * k**2)


def _pairwise_components(points_a, points_b, k):
    """Vacuum dyadic components between two point sets.

    Returns (R, parts) where parts[a][b] yields the (Na, Nb) complex
    array of G0 component (a, b); entries with R == 0 are set to zero
    (used only for same-set assembly where the diagonal is replaced by
    the self term).
    """
    diff = points_a[:, None, :] - points_b[None, :, :]
    R = np.linalg.norm(diff, axis=-1)
    same = R < 1e-300
    Rsafe = np.where(same, 1.0, R)
    x = k * Rsafe
    with np.errstate(invalid="ignore"):
        rhat = diff / Rsafe[..., None]
    phase = np.exp(1j * x) / (4.0 * np.pi * Rsafe)
    ca = phase * (1.0 + (1j * x - 1.0) / x**2)
    cb = phase * ((3.0 - 3j * x - x**2) / x**2)
    comps = {}
    for a in range(3):
        for b in range(a, 3):
            c = cb * rhat[..., a] * rhat[..., b]
            if a == b:
                c = c + ca
            c[same] = 0.0
            comps[(a, b)] = c
    return comps


def _green_blocks(points_a, points_b, k):
    """(Na, Nb, 3, 3) vacuum dyadic blocks; zero where points coincide."""
    comps = _pairwise_components(points_a, points_b, k)
    na, nb = comps[(0, 0)].shape
    G = np.empty((na, nb, 3, 3), dtype=complex)
    for a in range(3):
        for b in range(a, 3):
            G[..., a, b] = comps[(a, b)]
            G[..., b, a] = comps[(a, b)]
    return G


def assemble_dense(grid, k=2.0 * np.pi):
    """Dense operator [I - k^2 (G0 chi dV + self term)] over voxel fields.

    Oracle path: refuses grids with more than DENSE_UNKNOWN_LIMIT scalar
    unknowns; use the iterative path for anything larger.
    """
    n = grid.n_voxels
    if 3 * n > DENSE_UNKNOWN_LIMIT:
        raise GridTooLargeError(
            f"{3 * n} unknowns exceed the dense limit {DENSE_UNKNOWN_LIMIT}; "
            "use method='iterative'"
        )
    pts = grid.centers()
    chi = grid.chi()
    dV = grid.voxel_volume
    m = self_interaction(grid.spacing, k)
    comps = _pairwise_components(pts, pts, k)
    A = np.zeros((n, 3, n, 3), dtype=complex)
    scale = -(k**2) * dV
    for a in range(3):
        for b in range(a, 3):
            block = comps[(a, b)] * chi[None, :]
            A[:, a, :, b] = scale * block
            if a != b:
                A[:, b, :, a] = scale * block
    diag_idx = np.arange(n)
    for a in range(3):
        A[diag_idx, a, diag_idx, a] += 1.0 - k**2 * m * chi
    return A.reshape(3 * n, 3 * n)


class _FftInteraction:
    """Block-Toeplitz application of the off-diagonal G0 coupling via FFT."""

    def __init__(self, dims, spacing, k):
        self.dims = dims
        self.spacing = spacing
        self.k = k
        nx, ny, nz = dims
        px, py, pz = 2 * nx, 2 * ny, 2 * nz
        lag = []
        for n, p in zip(dims, (px, py, pz)):
            idx = np.arange(p)
            lag.append(np.where(idx < n, idx, idx - p))
        LX, LY, LZ = np.meshgrid(*lag, indexing="ij")
        disp = spacing * np.stack([LX, LY, LZ], axis=-1).reshape(-1, 3)
        R = np.linalg.norm(disp, axis=-1)
        zero = R < 1e-300
        Rsafe = np.where(zero, 1.0, R)
        x = k * Rsafe
        rhat = disp / Rsafe[:, None]
        phase = np.exp(1j * x) / (4.0 * np.pi * Rsafe)
        ca = phase * (1.0 + (1j * x - 1.0) / x**2)
        cb = phase * ((3.0 - 3j * x - x**2) / x**2)
        self.khat = {}
        for a in range(3):
            for b in range(a, 3):
                comp = cb * rhat[:, a] * rhat[:, b]
                if a == b:
                    comp = comp + ca
                comp[zero] = 0.0
                self.khat[(a, b)] = sfft.fftn(comp.reshape(px, py, pz))
        self.pad_shape = (px, py, pz)

    def apply(self, w):
        """Convolve (N, 3) voxel weights with the off-diagonal kernel."""
        nx, ny, nz = self.dims
        w3 = w.reshape(nx, ny, nz, 3)
        what = [
            sfft.fftn(w3[..., b], s=self.pad_shape) for b in range(3)
        ]
        out = np.empty((nx, ny, nz, 3), dtype=complex)
        for a in range(3):
            acc = np.zeros(self.pad_shape, dtype=complex)
            for b in range(3):
                key = (a, b) if a <= b else (b, a)
                acc += self.khat[key] * what[b]
            out[..., a] = sfft.ifftn(acc)[:nx, :ny, :nz]
        return out.reshape(-1, 3)


_KERNEL_CACHE = {}


def _get_kernel(grid, k):
    key = (grid.dims, round(grid.spacing, 15), round(k, 12))
    kern = _KERNEL_CACHE.get(key)
    if kern is None:
        if len(_KERNEL_CACHE) > 8:
            _KERNEL_CACHE.clear()
        kern = _FftInteraction(grid.dims, grid.spacing, k)
        _KERNEL_CACHE[key] = kern
    return kern


def fft_matvec(grid, x, k=2.0 * np.pi):
    """Apply [I - k^2 (G0 chi dV + self term)] to a voxel field vector.

    Matches the dense matvec to floating-point roundoff; x may be flat
    (3N,) or shaped (N, 3).
    """
    n = grid.n_voxels
    xv = np.asarray(x, dtype=complex).reshape(n, 3)
    kern = _get_kernel(grid, k)
    chi = grid.chi()
    m = self_interaction(grid.spacing, k)
    w = xv * (chi * grid.voxel_volume)[:, None]
    out = xv - k**2 * (kern.apply(w) + m * chi[:, None] * xv)
    return out.reshape(np.asarray(x).shape)


def _source_columns(grid, source, k):
    """(N, 3, 3) blocks G0(r_k, r_source) for every voxel center."""
    pts = grid.centers()
    src = as_position(source)[None, :]
    if np.min(np.linalg.norm(pts - src, axis=1)) < 1e-6:
        # Same threshold as free_space_green; emitters are placed off-center
        # by construction, so this only trips on misconfigured inputs.
        raise CoincidentPointsError("source coincides with a voxel center")
    return _green_blocks(pts, src, k)[:, 0]


def _solve_system(grid, B, k, method, rtol, maxiter):
    """Solve the VIE for each column of B ((N, 3, m) right-hand sides)."""
    n = grid.n_voxels
    nrhs = B.shape[2]
    X = np.empty_like(B)
    if method == "dense":
        A = assemble_dense(grid, k)
        sol = np.linalg.solve(A, B.reshape(3 * n, nrhs))
        return sol.reshape(n, 3, nrhs)
    kern = _get_kernel(grid, k)
    chi = grid.chi()
    m = self_interaction(grid.spacing, k)
    w_scale = (chi * grid.voxel_volume)[:, None]

    def matvec(v):
        xv = v.reshape(n, 3)
        return (xv - k**2 * (kern.apply(xv * w_scale) + m * chi[:, None] * xv)).ravel()

    op = LinearOperator((3 * n, 3 * n), matvec=matvec, dtype=complex)
    for c in range(nrhs):
        b = B[:, :, c].ravel()
        x, info = bicgstab(op, b, x0=b.copy(), rtol=rtol, atol=0.0,
                           maxiter=maxiter)
        if info != 0:
            res = np.linalg.norm(matvec(x) - b) / np.linalg.norm(b)
            raise ConvergenceError(
                f"Krylov iteration failed (info={info}) with relative "
                f"residual {res:.3e}",
                residual=res,
            )
        X[:, :, c] = x.reshape(n, 3)
    return X


def solve_fields(grid, source, p_hat, k=2.0 * np.pi, method="auto",
                 rtol=1e-8, maxiter=MAX_KRYLOV_ITER):
    """Total-field map of a unit point dipole inside the voxel map.

    Returns the (N, 3) array whose row k is the Green's column
    G(r_k, r_source) p_hat of the structured medium.  For an all-vacuum
    grid this equals the free-space columns exactly.

    The source should stay at least one voxel spacing away from centers
    of voxels with eps > 1 (recommended, not enforced).

    Raises
    ------
    ConvergenceError
        If the Krylov iteration does not reach the residual within
        `maxiter` steps (the error carries the final residual).
    """
    p = np.asarray(p_hat, dtype=complex)
    if method == "auto":
        method = "dense" if 3 * grid.n_voxels <= DENSE_UNKNOWN_LIMIT else "iterative"
    cols = _source_columns(grid, source, k)
    b = (cols @ p)[:, :, None]
    return _solve_system(grid, b, k, method, rtol, maxiter)[:, :, 0]


@dataclass
class GreenSolution:
    """Solved field blocks of one point source inside a voxel map.

    `block` has shape (N, 3, 3); block[k] = G(r_k, r_source) for all
    three source orientations at once.  `green_at` re-radiates the
    solution to arbitrary points outside the scatterer voxels.
    """

    grid: PermittivityGrid
    source: np.ndarray
    k: float
    block: np.ndarray
    _weights: np.ndarray = field(default=None, repr=False)

    def _scatter_weights(self):
        if self._weights is None:
            w = (self.grid.chi() * self.grid.voxel_volume)[:, None, None]
            self._weights = w * self.block
        return self._weights

    def scattered_at(self, r):
        """Scattered part of G(r, source): k^2 sum_j G0(r, r_j) chi dV X_j."""
        w = self._scatter_weights()
        active = np.abs(w).max(axis=(1, 2)) > 0
        if not np.any(active):
            return np.zeros((3, 3), dtype=complex)
        pts = self.grid.centers()[active]
        G0 = _green_blocks(as_position(r)[None, :], pts, self.k)[0]
        return self.k**2 * np.einsum("jab,jbc->ac", G0, w[active])

    def green_at(self, r):
        """Total G(r, source), r away from the source and scatterer voxels."""
        return free_space_green(as_position(r), self.source, self.k) + self.scattered_at(r)

    def self_green(self):
        """G at the source point: analytic imaginary vacuum diagonal
        i k/(6 pi) I plus the scattered correction (the divergent real
        vacuum part is a Lamb-type shift and is dropped)."""
        vac = 1j * self.k / (6.0 * np.pi) * np.eye(3)
        return vac + self.scattered_at(self.source)

    def column(self, p_hat):
        """FieldMap for one source orientation: (N, 3) rows G(r_k, src) p."""
        return self.block @ np.asarray(p_hat, dtype=complex)


def solve_green_block(grid, source, k=2.0 * np.pi, method="auto",
                      rtol=1e-8, maxiter=MAX_KRYLOV_ITER):
    """Solve the VIE for all three source orientations of one emitter."""
    if method == "auto":
        method = "dense" if 3 * grid.n_voxels <= DENSE_UNKNOWN_LIMIT else "iterative"
    src = as_position(source)
    B = _source_columns(grid, src, k)
    X = _solve_system(grid, B, k, method, rtol, maxiter)
    return GreenSolution(grid=grid, source=src, k=k, block=X)


def scattered_green_pair(grid, r1, r2, p_hat=(0.0, 0.0, 1.0), k=2.0 * np.pi,
                         method="auto", rtol=1e-8, maxiter=MAX_KRYLOV_ITER):
    """All Green's tensors the two-emitter model needs, from two solves.

    Returns (G11, G22, G12, fields1, fields2): the self tensors carry
    the analytic vacuum imaginary diagonal k/(6 pi) plus the scattered
    correction at the source point, G12 = G(r1, r2) in the structured
    medium, and fields1/fields2 are the (N, 3) p_hat field maps used by
    the optimizer's perturbative updates.
    """
    r1 = as_position(r1)
    r2 = as_position(r2)
    if np.linalg.norm(r1 - r2) < 1e-6:
        raise ValueError("emitters must be separated")
    sol1 = solve_green_block(grid, r1, k, method, rtol, maxiter)
    sol2 = solve_green_block(grid, r2, k, method, rtol, maxiter)
    G11 = sol1.self_green()
    G22 = sol2.self_green()
    G12 = sol2.green_at(r1)
    return G11, G22, G12, sol1.column(p_hat), sol2.column(p_hat)
