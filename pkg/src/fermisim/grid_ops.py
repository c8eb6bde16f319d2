"""Periodic one-particle grids and the spectral operators living on them.

The one-particle Hilbert space is discretized on a periodic box [0, L)^dim
with n points per axis.  Functions are vectors of values at the lattice
points x_j = j L / n, with the inner product

    <f, g> = (L/n)^dim sum_j conj(f_j) g_j ,

so that sums approximate integrals.  Operators are stored as the matrix that
acts on value vectors (the measure weight is folded in: if A has integral
kernel A(x, y), the stored matrix is (L/n)^dim * A(x_i, x_j)).  With this
convention matrix products compose operators, the matrix trace is the
operator trace, and the Frobenius norm is the Hilbert-Schmidt norm.

The momentum lattice uses the asymmetric FFT convention
p_k = 2 pi k / L, k in {-n/2, ..., n/2 - 1}.  Plane waves exp(i p_k x) are
exactly orthogonal in the grid inner product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """Invalid grid construction or mismatched grid operands."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice for the one-particle configuration space.

    Attributes
    ----------
    dim : spatial dimension (1, 2 or 3)
    n : points per axis (even)
    length : box side L
    epsilon : semiclassical parameter (effective Planck constant)
    """

    dim: int
    n: int
    length: float
    epsilon: float

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def weight(self) -> float:
        """Quadrature weight of the grid inner product, (L/n)^dim."""
        return self.dx ** self.dim

    @property
    def npoints(self) -> int:
        return self.n ** self.dim

    @property
    def points_axis(self) -> np.ndarray:
        """Lattice points along one axis."""
        return np.arange(self.n) * self.dx

    @property
    def momenta_axis(self) -> np.ndarray:
        """Momentum lattice along one axis, ordered like the points.

        Entries are 2*pi*k/L with k in {-n/2, ..., n/2-1}, arranged in FFT
        order (k = 0, 1, ..., -n/2, ..., -1) so that ``np.fft.fft`` output
        aligns index-by-index.
        """
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=1.0 / self.n) / self.length

    def points(self) -> np.ndarray:
        """All lattice points, shape (npoints, dim)."""
        axes = [self.points_axis] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def momenta(self) -> np.ndarray:
        """All momentum lattice vectors in FFT order, shape (npoints, dim)."""
        axes = [self.momenta_axis] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    def fourier_coefficients(self, f: np.ndarray) -> np.ndarray:
        """Physical Fourier coefficients f_hat(p) = integral f e^{-ipx} dx.

        Input in grid shape, output in FFT order with the grid measure
        weight, so values approximate the continuum transform.
        """
        return np.fft.fftn(f.reshape(self.shape())) * self.weight

    def from_fourier(self, fhat: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`fourier_coefficients`."""
        return np.fft.ifftn(fhat.reshape(self.shape())) / self.weight


def build_grid(dim: int, n: int, length: float, epsilon: float) -> Grid:
    """Validate parameters and build a :class:`Grid`.

    n must be even (keeps the momentum window {-n/2, ..., n/2-1} and the
    plane-wave orthogonality exact); length and epsilon must be positive.
    """
    if dim not in (1, 2, 3):
        raise GridError(f"dim must be 1, 2 or 3, got {dim}")
    if n < 2 or n % 2 != 0:
        raise GridError(f"n must be even and >= 2, got {n}")
    if length <= 0:
        raise GridError(f"length must be positive, got {length}")
    if epsilon <= 0:
        raise GridError(f"epsilon must be positive, got {epsilon}")
    return Grid(dim=dim, n=n, length=float(length), epsilon=float(epsilon))


@dataclass
class OneBodyOperator:
    """Complex matrix acting on grid functions (measure weight included).

    ``mat[i, j]`` relates to the integral kernel by
    ``kernel(x_i, x_j) = mat[i, j] / grid.weight``.
    """

    grid: Grid
    mat: np.ndarray
    hermitian: bool = False

    def __post_init__(self):
        m = self.grid.npoints
        self.mat = np.asarray(self.mat, dtype=complex)
        if self.mat.shape != (m, m):
            raise GridError(
                f"operator shape {self.mat.shape} does not match grid ({m}, {m})"
            )
        if self.hermitian:
            dev = np.abs(self.mat - self.mat.conj().T).max()
            scale = max(np.abs(self.mat).max(), 1.0)
            if dev > 1e-12 * scale:
                raise GridError(f"operator flagged Hermitian but deviation {dev:.3e}")

    @property
    def kernel(self) -> np.ndarray:
        """Integral kernel values A(x_i, x_j)."""
        return self.mat / self.grid.weight

    def same_grid(self, other: "OneBodyOperator") -> None:
        if self.grid != other.grid:
            raise GridError("operators live on different grids")


def _fourier_basis(grid: Grid) -> np.ndarray:
    """Unitary matrix whose columns are normalized plane waves.

    B[j, k] = exp(i p_k x_j) / sqrt(n) per axis (kron over axes); satisfies
    B^dagger B = 1 in the plain matrix sense, and sqrt(weight)-rescaled
    columns are orthonormal in the grid inner product.
    """
    x = grid.points_axis
    p = grid.momenta_axis
    b1 = np.exp(1j * np.outer(x, p)) / np.sqrt(grid.n)
    b = b1
    for _ in range(grid.dim - 1):
        b = np.kron(b, b1)
    return b


def canonical_operators(grid: Grid):
    """Position, momentum and kinetic operators on the grid.

    Returns (position_ops, momentum_ops, kinetic_op):

    * position_ops: per axis, multiplication by the coordinate (diagonal,
      real; not periodic, only meaningful inside commutator-free uses).
    * momentum_ops: per axis, the spectral derivative eps * d/dx_axis,
      diagonal in the Fourier basis with eigenvalue i*eps*p.  The unpaired
      Nyquist mode k = -n/2 is zeroed so the operator is exactly
      skew-Hermitian and maps real functions to real functions.
    * kinetic_op: -eps^2 * Laplacian, Fourier eigenvalues eps^2 |p|^2
      (Nyquist retained; real eigenvalues keep it Hermitian).
    """
    b = _fourier_basis(grid)
    eps = grid.epsilon
    pts = grid.points()
    mom = grid.momenta()

    position_ops = []
    for axis in range(grid.dim):
        position_ops.append(
            OneBodyOperator(grid, np.diag(pts[:, axis]).astype(complex), hermitian=True)
        )

    nyq = -np.pi * grid.n / grid.length  # unpaired mode p = -pi n / L
    momentum_ops = []
    for axis in range(grid.dim):
        pvals = mom[:, axis].copy()
        pvals[np.isclose(pvals, nyq)] = 0.0
        diag = 1j * eps * pvals
        m = (b * diag) @ b.conj().T
        momentum_ops.append(OneBodyOperator(grid, m))

    ksq = (mom ** 2).sum(axis=1)
    kin = (b * (eps ** 2 * ksq)) @ b.conj().T
    kin = 0.5 * (kin + kin.conj().T)
    kinetic_op = OneBodyOperator(grid, kin, hermitian=True)

    return position_ops, momentum_ops, kinetic_op


class PotentialError(ValueError):
    """Invalid interaction potential specification."""


@dataclass
class PotentialSpec:
    """Real, even two-body potential, stored through its Fourier coefficients.

    ``fourier_coefficients`` holds V_hat(p) = integral V(x) e^{-ipx} dx on
    the grid's momentum lattice (grid shape, FFT order along each axis).
    Realness and evenness of V make V_hat real; this is validated.  The
    weighted decay sum sum_p (1+|p|)^2 |V_hat(p)| over the truncated lattice
    is computed and reported as ``decay_sum`` (a finiteness diagnostic
    mirroring the regularity condition on the interaction).
    """

    kind: str
    grid: Grid
    parameters: dict
    fourier_coefficients: np.ndarray = field(repr=False)
    decay_sum: float = field(init=False)

    def __post_init__(self):
        vhat = np.asarray(self.fourier_coefficients)
        if vhat.shape != self.grid.shape():
            raise PotentialError(
                f"fourier_coefficients shape {vhat.shape} != grid shape {self.grid.shape()}"
            )
        if np.iscomplexobj(vhat):
            if np.abs(vhat.imag).max() > 1e-12 * max(np.abs(vhat).max(), 1.0):
                raise PotentialError("V_hat must be real (V real and even)")
            vhat = vhat.real
        # evenness: V_hat(-p) = V_hat(p) for paired modes
        flipped = vhat.copy()
        for ax in range(self.grid.dim):
            idx = np.arange(self.grid.n)
            rev = (-idx) % self.grid.n
            flipped = np.take(flipped, rev, axis=ax)
        if np.abs(vhat - flipped).max() > 1e-10 * max(np.abs(vhat).max(), 1.0):
            raise PotentialError("V_hat must be even in p")
        self.fourier_coefficients = vhat.astype(float)
        pnorm = np.linalg.norm(self.grid.momenta(), axis=1).reshape(self.grid.shape())
        self.decay_sum = float(np.sum((1.0 + pnorm) ** 2 * np.abs(vhat)))

    def real_space(self) -> np.ndarray:
        """V sampled at the grid points (grid shape, real)."""
        v = self.grid.from_fourier(self.fourier_coefficients.astype(complex))
        return v.real

    def sampled_difference(self) -> np.ndarray:
        """Matrix V(x_i - x_j) over all grid point pairs (npoints x npoints)."""
        v = self.real_space()
        n, d = self.grid.n, self.grid.dim
        flat = np.arange(self.grid.npoints)
        multi = np.array(np.unravel_index(flat, self.grid.shape())).T  # (np, dim)
        diff = (multi[:, None, :] - multi[None, :, :]) % n
        out = v[tuple(diff[..., ax] for ax in range(d))]
        return out


def gaussian_potential(grid: Grid, amplitude: float = 1.0, sigma: float = 1.0) -> PotentialSpec:
    """Periodicized Gaussian V(x) = A exp(-|x|^2 / (2 sigma^2)).

    Defined through its exact continuum transform sampled on the momentum
    lattice, which periodizes the Gaussian on the torus.
    """
    if sigma <= 0:
        raise PotentialError("sigma must be positive")
    psq = (grid.momenta() ** 2).sum(axis=1).reshape(grid.shape())
    vhat = amplitude * (2.0 * np.pi * sigma ** 2) ** (grid.dim / 2.0) * np.exp(-0.5 * sigma ** 2 * psq)
    return PotentialSpec("gaussian", grid, {"amplitude": amplitude, "sigma": sigma}, vhat)


def cosine_potential(grid: Grid, terms: list[tuple[float, tuple[int, ...]]]) -> PotentialSpec:
    """Sum of cosines: V(x) = sum_m c_m cos(q_m . x), q_m on the momentum lattice.

    ``terms`` is a list of (coefficient, integer mode vector) pairs; the mode
    vector has one integer per axis (q = 2 pi k / L).
    """
    vhat = np.zeros(grid.shape())
    vol = grid.length ** grid.dim
    for coeff, kvec in terms:
        kvec = tuple(int(k) for k in (kvec if isinstance(kvec, (tuple, list)) else (kvec,)))
        if len(kvec) != grid.dim:
            raise PotentialError(f"mode vector {kvec} has wrong dimension")
        if any(abs(k) > grid.n // 2 - 1 and k != 0 for k in kvec):
            raise PotentialError(f"mode vector {kvec} off the resolvable lattice")
        plus = tuple(k % grid.n for k in kvec)
        minus = tuple((-k) % grid.n for k in kvec)
        if plus == minus:
            vhat[plus] += coeff * vol
        else:
            vhat[plus] += 0.5 * coeff * vol
            vhat[minus] += 0.5 * coeff * vol
    return PotentialSpec("cosine-sum", grid, {"terms": terms}, vhat)


def yukawa_potential(grid: Grid, amplitude: float = 1.0, mass: float = 1.0) -> PotentialSpec:
    """Periodicized Yukawa-type interaction, V_hat(p) = A / (|p|^2 + mass^2)."""
    if mass <= 0:
        raise PotentialError("mass must be positive")
    psq = (grid.momenta() ** 2).sum(axis=1).reshape(grid.shape())
    vhat = amplitude / (psq + mass ** 2)
    return PotentialSpec("yukawa-periodicized", grid, {"amplitude": amplitude, "mass": mass}, vhat)


def tabulated_potential(grid: Grid, values: np.ndarray) -> PotentialSpec:
    """Potential given by real-space samples on the grid (must be real, even)."""
    values = np.asarray(values, dtype=float).reshape(grid.shape())
    vhat = grid.fourier_coefficients(values.astype(complex))
    return PotentialSpec("tabulated", grid, {}, vhat)


def zero_potential(grid: Grid) -> PotentialSpec:
    return PotentialSpec("cosine-sum", grid, {"terms": []}, np.zeros(grid.shape()))


def apply_convolution(grid: Grid, potential: PotentialSpec, density: np.ndarray) -> np.ndarray:
    """Spectral evaluation of (V * rho)(x) on the grid.

    density is a real grid function (grid shape or flat); the result is the
    inverse transform of V_hat(p) rho_hat(p), returned real in the same
    layout as the input.
    """
    if potential.grid != grid:
        raise GridError("potential and grid do not match")
    rho = np.asarray(density)
    flat_in = rho.ndim == 1
    if rho.size != grid.npoints:
        raise GridError(f"density has {rho.size} values, grid has {grid.npoints}")
    if np.iscomplexobj(rho) and np.abs(rho.imag).max() > 1e-12 * max(np.abs(rho).max(), 1.0):
        raise GridError("density must be real")
    rho = rho.real.reshape(grid.shape())
    conv_hat = potential.fourier_coefficients * grid.fourier_coefficients(rho.astype(complex))
    conv = grid.from_fourier(conv_hat)
    imag = np.abs(conv.imag).max()
    scale = max(np.abs(conv.real).max(), 1.0)
    if imag > 1e-12 * scale:
        raise GridError(f"convolution result not real (imag residue {imag:.3e})")
    out = conv.real
    return out.ravel() if flat_in else out
