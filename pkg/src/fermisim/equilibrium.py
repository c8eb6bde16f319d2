"""Thermal initial data: Thomas-Fermi densities, Fermi-Dirac phase-space
profiles, and the discrete Weyl quantization / Wigner transform pair.

Phase-space conventions
-----------------------
A phase-space density W(x, v) lives on the position grid times a uniform
symmetric velocity lattice with spacing dv = 2 pi eps / L (the only spacing
compatible with the torus: e^{i v x / eps} must be L-periodic).  The
quantization uses the kernel

    Op_W(x, y) = (2 pi eps)^{-dim} sum_v dv^dim  W((x+y)/2, v) e^{i v (x-y)/eps}

with midpoints taken along the shortest chord on the torus and W evaluated
at half-grid points by trigonometric interpolation.  The Wigner transform
implemented here is the exact linear inverse of this map, with the sign
convention W(x, v) ~ int dy kernel(x + eps y/2, x - eps y/2) e^{-i y v}, so
a projector onto the plane wave e^{i p0 x} transforms to weight at
v = +eps p0.

Mass normalization: (2 pi eps)^{-dim} * integral W dx dv = tr(omega).
Thermal data is normalized so this equals the particle number N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid_ops import Grid, GridError, OneBodyOperator, PotentialSpec, apply_convolution
from .states import DensityMatrix, make_density


class PhaseSpaceError(ValueError):
    """Incompatible phase-space lattice or unreachable normalization."""


@dataclass
class PhaseSpaceDensity:
    """Real function W(x, v) on the position grid times a velocity lattice.

    ``values`` has shape grid.shape() + (nv,)*dim; x-axes first, velocity
    axes last, both in ascending natural order (v_k = (k - nv/2) dv).
    Small negativity (Wigner transforms) is kept and flagged, not clipped.
    """

    grid: Grid
    nv: int
    dv: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = self.grid.shape() + (self.nv,) * self.grid.dim
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != expected:
            raise PhaseSpaceError(
                f"values shape {self.values.shape} != expected {expected}"
            )
        if not np.isfinite(self.values).all():
            raise PhaseSpaceError("phase-space density contains non-finite values")

    @property
    def v_axis(self) -> np.ndarray:
        return (np.arange(self.nv) - self.nv // 2) * self.dv

    @property
    def v_max(self) -> float:
        return (self.nv // 2) * self.dv

    @property
    def cell(self) -> float:
        """Phase-space cell volume dx^dim * dv^dim."""
        return self.grid.weight * self.dv ** self.grid.dim

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.cell)

    @property
    def negative_min(self) -> float:
        return float(min(self.values.min(), 0.0))

    @property
    def flagged_negative(self) -> bool:
        return self.values.min() < -1e-10

    def spatial_density(self) -> np.ndarray:
        """rho(x) = integral W dv, grid shape."""
        axes = tuple(range(self.grid.dim, 2 * self.grid.dim))
        return self.values.sum(axis=axes) * self.dv ** self.grid.dim


def velocity_spacing(grid: Grid) -> float:
    """Torus-compatible velocity lattice spacing 2 pi eps / L."""
    return 2.0 * np.pi * grid.epsilon / grid.length


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def tf_coupling(grid: Grid, exponent_dim: int | None = None) -> float:
    """Default Thomas-Fermi coupling c with ((2 pi eps)^d / omega_d)^(2/d').

    Chosen so the T -> 0 phase-space filling rho = (2 pi eps)^{-d} vol(|v| <=
    v_F) is self-consistent with v_F^2 = c rho^{2/d'}; in three dimensions it
    reduces to the familiar eps^2 (6 pi^2)^{2/3} of spinless fermions.
    """
    d = grid.dim
    dp = exponent_dim if exponent_dim is not None else d
    return ((2.0 * np.pi * grid.epsilon) ** d / unit_ball_volume(d)) ** (2.0 / dp)


# ---------------------------------------------------------------------------
# Thomas-Fermi minimization
# ---------------------------------------------------------------------------


class ThomasFermiError(RuntimeError):
    """Fixed-point iteration failed to converge."""


@dataclass
class TFResult:
    rho: np.ndarray
    lam: float
    residual: float
    iterations: int


def tf_energy(
    grid: Grid,
    rho: np.ndarray,
    v_ext: np.ndarray,
    potential: PotentialSpec,
    n_target: float,
    exponent_dim: int | None = None,
    coupling: float | None = None,
) -> float:
    """Discretized Thomas-Fermi energy functional.

    E = c_kin int rho^{1+2/d'} + int V_ext rho + (2N)^{-1} int int V rho rho,
    with c_kin = c1 d'/(d'+2) so the variational derivative of the kinetic
    term is c1 rho^{2/d'}.
    """
    dp = exponent_dim if exponent_dim is not None else grid.dim
    c1 = coupling if coupling is not None else tf_coupling(grid, dp)
    c_kin = c1 * dp / (dp + 2.0)
    w = grid.weight
    rho = np.asarray(rho, dtype=float).reshape(grid.shape())
    kin = c_kin * w * np.sum(rho ** (1.0 + 2.0 / dp))
    ext = w * np.sum(np.asarray(v_ext).reshape(grid.shape()) * rho)
    conv = apply_convolution(grid, potential, rho)
    inter = 0.5 / n_target * w * np.sum(conv * rho)
    return float(kin + ext + inter)


def _tf_lambda_for_mass(u_eff, c1, dp, w, n_target):
    """Bisection on the Lagrange multiplier so the candidate density has mass N."""

    def mass(lam):
        return w * np.sum(((np.maximum(lam - u_eff, 0.0)) / c1) ** (dp / 2.0))

    lo = float(u_eff.min())
    hi = float(u_eff.max()) + 1.0
    while mass(hi) < n_target:
        hi = u_eff.max() + 2.0 * (hi - u_eff.max())
        if hi > 1e12:
            raise ThomasFermiError("Lagrange multiplier bracket exploded")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mass(mid) < n_target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_thomas_fermi(
    grid: Grid,
    v_ext: np.ndarray,
    potential: PotentialSpec,
    n_target: float,
    exponent_dim: int | None = None,
    coupling: float | None = None,
    damping: float = 0.5,
    max_iter: int = 10_000,
    residual_tol: float = 1e-6,
) -> TFResult:
    """Minimize the Thomas-Fermi functional under int rho = N.

    Damped fixed-point iteration on
    rho <- ((lam - V_ext - N^{-1} V*rho)_+ / c1)^(d'/2), with lam adjusted by
    bisection at each sweep so the candidate carries mass N.  Convergence is
    declared when the first-order condition
    c1 rho^{2/d'} + V_ext + N^{-1} V*rho - lam = 0 holds on the support of
    rho to ``residual_tol`` in the sup norm.
    """
    if n_target <= 0:
        raise ThomasFermiError("n_target must be positive")
    dp = exponent_dim if exponent_dim is not None else grid.dim
    c1 = coupling if coupling is not None else tf_coupling(grid, dp)
    v_ext = np.asarray(v_ext, dtype=float).reshape(grid.shape())
    if not np.isfinite(v_ext).all():
        raise ThomasFermiError("external potential must be bounded")
    w = grid.weight

    rho = np.full(grid.shape(), n_target / grid.length ** grid.dim)
    lam = 0.0
    residual = np.inf
    for it in range(1, max_iter + 1):
        u_eff = v_ext + apply_convolution(grid, potential, rho) / n_target
        lam = _tf_lambda_for_mass(u_eff, c1, dp, w, n_target)
        rho_new = ((np.maximum(lam - u_eff, 0.0)) / c1) ** (dp / 2.0)
        support = rho > 1e-12 * max(rho.max(), 1e-300)
        if support.any():
            foc = c1 * rho ** (2.0 / dp) + u_eff - lam
            residual = float(np.abs(foc[support]).max())
        else:
            residual = np.inf
        if residual <= residual_tol and abs(w * rho.sum() - n_target) <= 1e-8 * n_target:
            return TFResult(rho=rho, lam=float(lam), residual=residual, iterations=it)
        rho = (1.0 - damping) * rho + damping * rho_new
    raise ThomasFermiError(
        f"Thomas-Fermi iteration did not converge in {max_iter} steps "
        f"(last residual {residual:.3e})"
    )


# ---------------------------------------------------------------------------
# Fermi-Dirac phase-space data
# ---------------------------------------------------------------------------


@dataclass
class FermiDiracParams:
    """Smooth occupation profile g_{T,mu}(E) = 1 / (1 + exp((E - mu)/T)).

    The energy argument is E = v^2 - c rho_TF^{2/d'}(x); ``mu`` is filled in
    by the mass-matching bisection, ``c`` defaults to the grid's
    Thomas-Fermi coupling.
    """

    T: float
    mu: float | None = None
    c: float | None = None
    exponent_dim: int | None = None

    def __post_init__(self):
        if self.T <= 0:
            raise PhaseSpaceError(f"temperature must be positive, got {self.T}")


def logistic(x: np.ndarray) -> np.ndarray:
    """Numerically safe 1 / (1 + e^x)."""
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = np.exp(-x[pos]) / (1.0 + np.exp(-x[pos]))
    out[~pos] = 1.0 / (1.0 + np.exp(x[~pos]))
    return out


def default_velocity_count(grid: Grid, params: FermiDiracParams, rho_tf: np.ndarray) -> int:
    """Velocity lattice size covering both operator momenta and thermal tails.

    Extent max(eps p_max, 4 sqrt(T) + max sqrt(c) rho^{1/d'}), rounded up to
    an even count and at least n.
    """
    dp = params.exponent_dim if params.exponent_dim is not None else grid.dim
    c = params.c if params.c is not None else tf_coupling(grid, dp)
    dv = velocity_spacing(grid)
    p_max = np.pi * grid.n / grid.length
    v_need = max(
        grid.epsilon * p_max,
        4.0 * np.sqrt(params.T) + float(np.sqrt(c) * np.max(rho_tf) ** (1.0 / dp)),
    )
    half = int(np.ceil(v_need / dv))
    return max(grid.n, 2 * half)


def fermi_dirac_density(
    rho_tf: np.ndarray,
    params: FermiDiracParams,
    grid: Grid,
    n_target: float,
    nv: int | None = None,
) -> tuple[PhaseSpaceDensity, float]:
    """Sample M(x, v) = g_{T,mu}(v^2 - c rho_TF^{2/d'}(x)) on the phase grid.

    The chemical potential is solved by bisection on mu in [-1e6, 1e6] so
    the total mass satisfies (2 pi eps)^{-dim} int M dx dv = n_target
    (relative tolerance 1e-10).  Returns the density and the solved mu.
    """
    dp = params.exponent_dim if params.exponent_dim is not None else grid.dim
    c = params.c if params.c is not None else tf_coupling(grid, dp)
    rho_tf = np.asarray(rho_tf, dtype=float).reshape(grid.shape())
    if nv is None:
        nv = default_velocity_count(grid, params, rho_tf)
    if nv % 2 != 0:
        raise PhaseSpaceError("velocity count must be even")
    dv = velocity_spacing(grid)
    v_axis = (np.arange(nv) - nv // 2) * dv

    d = grid.dim
    vsq = np.zeros((nv,) * d)
    for ax in range(d):
        shape = [1] * d
        shape[ax] = nv
        vsq = vsq + (v_axis ** 2).reshape(shape)
    well = c * rho_tf ** (2.0 / dp)  # grid shape
    # E - mu = v^2 - well - mu, broadcast to x-axes + v-axes
    e_x = (-well).reshape(grid.shape() + (1,) * d)
    e_v = vsq.reshape((1,) * d + (nv,) * d)

    cell = grid.weight * dv ** d
    target = n_target * (2.0 * np.pi * grid.epsilon) ** d

    def mass(mu):
        return cell * logistic((e_x + e_v - mu) / params.T).sum()

    lo, hi = -1e6, 1e6
    if mass(hi) < target * (1.0 - 1e-12) or mass(lo) > target * (1.0 + 1e-12):
        raise PhaseSpaceError(
            f"target mass {target:.6g} unreachable within mu in [-1e6, 1e6] "
            f"(range [{mass(lo):.6g}, {mass(hi):.6g}])"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        m = mass(mid)
        if abs(m - target) <= 1e-10 * target:
            lo = hi = mid
            break
        if m < target:
            lo = mid
        else:
            hi = mid
    mu = 0.5 * (lo + hi)
    values = logistic((e_x + e_v - mu) / params.T)
    return PhaseSpaceDensity(grid=grid, nv=nv, dv=dv, values=values), float(mu)


# ---------------------------------------------------------------------------
# Discrete Weyl quantization and Wigner transform (mutually exact inverses)
# ---------------------------------------------------------------------------


def _short_chord(n: int) -> np.ndarray:
    """s[a, b] = (a - b) mapped to the symmetric window [-n/2, n/2)."""
    a = np.arange(n)
    return ((a[:, None] - a[None, :] + n // 2) % n) - n // 2


def _half_interp_matrix(n: int) -> np.ndarray:
    """Trigonometric interpolation from the n-grid to the 2n half-grid.

    T[mu, j] such that f_half = T @ f reproduces the band-limited
    interpolant sum_q fhat(q) e^{pi i q mu / n} with q in {-n/2,...,n/2-1}.
    """
    q = np.fft.fftfreq(n, d=1.0 / n)  # signed integer frequencies
    mu = np.arange(2 * n)
    # DFT analysis then evaluation at half-integer points
    j = np.arange(n)
    analysis = np.exp(-2j * np.pi * np.outer(q, j) / n) / n  # (q, j)
    synth = np.exp(1j * np.pi * np.outer(mu, q) / n)  # (mu, q)
    # real-symmetric convention for the unpaired Nyquist mode: cos(pi mu / 2)
    # keeps the interpolant of real data real (it is exact on grid points,
    # where cos(pi j) = e^{+-i pi j})
    nyq_col = np.where(np.isclose(q, -n // 2))[0]
    synth[:, nyq_col] = np.cos(np.pi * mu / 2.0)[:, None]
    return synth @ analysis


def _fold_velocity(values: np.ndarray, grid: Grid, nv: int) -> tuple[np.ndarray, float]:
    """Alias-fold the velocity axes onto the n-bin operator window.

    Velocity modes v_k with index k outside [-n/2, n/2) produce the same
    chord phases as k mod n; folding represents exactly what the finite
    grid resolves.  Returns the folded array and the fraction of |W| mass
    that was folded in from outside the principal window.
    """
    n, d = grid.n, grid.dim
    folded = values
    out_mass = 0.0
    tot_mass = float(np.abs(values).sum()) + 1e-300
    for ax in range(d):
        vax = grid.dim + ax  # velocity axes sit after position axes
        k = np.arange(nv) - nv // 2
        dest = ((k + n // 2) % n)  # position in ascending folded window
        new_shape = list(folded.shape)
        new_shape[vax] = n
        acc = np.zeros(new_shape, dtype=folded.dtype)
        outside = (k < -n // 2) | (k >= n // 2)
        for src in range(nv):
            sl_src = [slice(None)] * folded.ndim
            sl_src[vax] = src
            sl_dst = [slice(None)] * folded.ndim
            sl_dst[vax] = int(dest[src])
            acc[tuple(sl_dst)] += folded[tuple(sl_src)]
            if outside[src]:
                out_mass += float(np.abs(folded[tuple(sl_src)]).sum())
        folded = acc
    return folded, out_mass / tot_mass


def weyl_quantize(
    density: PhaseSpaceDensity,
    grid: Grid,
    n_target: float | None = None,
    aliasing_warn: float = 1e-6,
) -> tuple[DensityMatrix, dict]:
    """Midpoint-sampled discrete Weyl quantization of a phase-space density.

    The kernel is assembled chord by chord: for grid points x_a, x_b with
    shortest signed chord s, the midpoint x_b + s dx/2 lies on the half
    grid, where the density is evaluated by trigonometric interpolation.
    The result is Hermitized (deviation asserted tiny), passed through
    ``make_density`` with trace target ``n_target`` (default: the mass
    convention value of the input).

    Velocity lattices finer than 2 pi eps / L or with fewer than n points
    are rejected; tails beyond the operator window are alias-folded and the
    folded fraction is reported in the info dict.
    """
    if density.grid != grid:
        raise PhaseSpaceError("density and grid do not match")
    n, d = grid.n, grid.dim
    dv = velocity_spacing(grid)
    if abs(density.dv - dv) > 1e-9 * dv:
        raise PhaseSpaceError(
            f"velocity spacing {density.dv} incompatible with torus value {dv}"
        )
    if density.nv < n:
        raise PhaseSpaceError(
            f"velocity grid too coarse: extent {density.v_max:.4g} does not cover "
            f"the operator momenta (need at least n = {n} points)"
        )

    folded, alias_fraction = _fold_velocity(density.values, grid, density.nv)

    # interpolate position axes to the half grid
    t_half = _half_interp_matrix(n)
    arr = folded.astype(complex)
    for ax in range(d):
        arr = np.moveaxis(np.tensordot(t_half, np.moveaxis(arr, ax, 0), axes=(1, 0)), 0, ax)

    # velocity axes -> chord-phase representation
    k = np.arange(n) - n // 2
    s = np.arange(n) - n // 2
    e_mat = np.exp(2j * np.pi * np.outer(k, s) / n)  # (k, s)
    for ax in range(d, 2 * d):
        arr = np.moveaxis(np.tensordot(e_mat.T, np.moveaxis(arr, ax, 0), axes=(1, 0)), 0, ax)
    # arr now indexed by (mu_1..mu_d on half grid, s_1..s_d ascending window)

    # The Nyquist chord s = -n/2 has two equally short midpoints (antipodal
    # pairs); average them so the kernel is exactly Hermitian.  The odd
    # x-modes of that chord are unresolvable on an even grid and drop out.
    for ax in range(d):
        sl = [slice(None)] * (2 * d)
        sl[d + ax] = 0  # position of s = -n/2 in the ascending window
        sub = arr[tuple(sl)]
        arr[tuple(sl)] = 0.5 * (sub + np.roll(sub, -n, axis=ax))

    chord = _short_chord(n)  # s[a, b]
    spos = chord + n // 2
    mu = (2 * np.arange(n)[None, :] + chord) % (2 * n)  # mu[a, b]

    idx = []
    for ax in range(d):
        shape = [1] * (2 * d)
        shape[ax] = n
        shape[d + ax] = n
        idx.append(mu.reshape(shape))
    for ax in range(d):
        shape = [1] * (2 * d)
        shape[ax] = n
        shape[d + ax] = n
        idx.append(spos.reshape(shape))
    kernel = arr[tuple(idx)] * grid.length ** (-d)
    mdim = grid.npoints
    kernel = kernel.reshape(mdim, mdim)

    mat = kernel * grid.weight
    dev = np.abs(mat - mat.conj().T).max()
    scale = max(np.abs(mat).max(), 1e-300)
    if dev > 1e-10 * scale:
        raise PhaseSpaceError(f"quantized kernel not Hermitian (deviation {dev:.3e})")
    mat = 0.5 * (mat + mat.conj().T)

    raw_trace = float(np.trace(mat).real)
    if n_target is None:
        n_target = density.mass / (2.0 * np.pi * grid.epsilon) ** d

    # quantization lets eigenvalues exit [0, 1] by O(eps); clamp here (the
    # magnitude is reported) before the admissibility gate of make_density,
    # whose tight tolerance is meant for integrator drift, not this step
    lam, vec = np.linalg.eigh(mat)
    clamp_mag = float(max(0.0, -lam.min(), lam.max() - 1.0))
    lam = np.clip(lam, 0.0, 1.0)
    mat = (vec * lam) @ vec.conj().T
    mat = 0.5 * (mat + mat.conj().T)

    op = OneBodyOperator(grid, mat, hermitian=True)
    dm = make_density(op, n_target)
    dm.clamp_magnitude = clamp_mag
    info = {
        "alias_fraction": alias_fraction,
        "alias_warning": alias_fraction > aliasing_warn,
        "raw_trace": raw_trace,
        "clamp_magnitude": clamp_mag,
        "hermiticity_deviation": float(dev),
    }
    return dm, info


def wigner_transform(
    omega: DensityMatrix | OneBodyOperator,
    nv: int | None = None,
) -> PhaseSpaceDensity:
    """Exact inverse of the discrete Weyl quantization.

    Returns W on the position grid with velocity lattice spacing
    2 pi eps / L; natural content lives on n velocity points (the operator
    resolves nothing finer), and a larger even ``nv`` zero-pads the tails.
    The imaginary residue (zero for Hermitian input up to rounding) is
    checked against 1e-10 and discarded; the mass convention
    integral W dx dv = (2 pi eps)^dim tr(omega) is asserted.
    """
    op = omega.op if isinstance(omega, DensityMatrix) else omega
    grid = op.grid
    n, d = grid.n, grid.dim
    if nv is None:
        nv = n
    if nv < n or nv % 2 != 0:
        raise PhaseSpaceError("nv must be even and at least n")
    dv = velocity_spacing(grid)

    kernel = (op.mat / grid.weight).reshape(grid.shape() * 2)

    # gather diagonals: D[s_1.., b_1..] = K[(b+s) % n .., b ..]
    srange = np.arange(n) - n // 2
    b = np.arange(n)
    a_of = (b[None, :] + srange[:, None]) % n  # (s, b)
    idx = []
    for ax in range(d):
        shape = [1] * (2 * d)
        shape[ax] = n
        shape[d + ax] = n
        idx.append(a_of.reshape(shape))
    for ax in range(d):
        shape = [1] * (2 * d)
        shape[ax] = n
        shape[d + ax] = n
        idx.append(b.reshape([1] * (d + ax) + [n] + [1] * (d - ax - 1)))
    diag = kernel[tuple(idx)]  # (s_1..s_d, b_1..b_d)

    # analysis over b-axes -> signed q, then remove midpoint phase
    q = np.fft.fftfreq(n, d=1.0 / n)
    analysis = np.exp(-2j * np.pi * np.outer(q, b) / n) / n  # (q, b)
    arr = diag
    for ax in range(d, 2 * d):
        arr = np.moveaxis(np.tensordot(analysis, np.moveaxis(arr, ax, 0), axes=(1, 0)), 0, ax)
    # phase e^{-pi i q s / n} per axis pair (s at ax, q at d+ax)
    for ax in range(d):
        ph = np.exp(-1j * np.pi * np.outer(srange, q) / n)  # (s, q)
        shape = [1] * (2 * d)
        shape[ax] = n
        shape[d + ax] = n
        arr = arr * ph.reshape(shape)
    # project out the corners an even grid cannot resolve (the quantizer
    # maps them to zero): odd x-modes on the Nyquist chord, and the
    # x-Nyquist mode on odd chords
    for ax in range(d):
        mask = np.ones((n, n))
        odd_q = (np.abs(q) % 2) == 1
        mask[0, odd_q] = 0.0  # s = -n/2 row kills odd q
        nyq_q = np.isclose(q, -n // 2)
        odd_s = (np.abs(srange) % 2) == 1
        mask[np.ix_(odd_s, nyq_q)] = 0.0
        shape = [1] * (2 * d)
        shape[ax] = n
        shape[d + ax] = n
        arr = arr * mask.reshape(shape)
    # invert chord DFT over s-axes -> velocity bins (ascending window)
    k = np.arange(n) - n // 2
    inv_e = np.exp(-2j * np.pi * np.outer(k, srange) / n) / n  # (k, s)
    for ax in range(d):
        arr = np.moveaxis(np.tensordot(inv_e, np.moveaxis(arr, ax, 0), axes=(1, 0)), 0, ax)
    # synthesize x from q-axes
    synth = np.exp(2j * np.pi * np.outer(b, q) / n)  # (x, q)
    for ax in range(d, 2 * d):
        arr = np.moveaxis(np.tensordot(synth, np.moveaxis(arr, ax, 0), axes=(1, 0)), 0, ax)
    # arr indexed (v-bins.., x..) -> reorder to (x.., v..)
    arr = np.moveaxis(arr, list(range(d, 2 * d)), list(range(d)))
    arr = arr * grid.length ** d  # undo the L^-d prefactor of the quantization
    imag = np.abs(arr.imag).max()
    scale = max(np.abs(arr.real).max(), 1e-300)
    if imag > 1e-10 * scale:
        raise PhaseSpaceError(f"Wigner transform has imaginary residue {imag:.3e}")
    w_vals = arr.real

    if nv > n:
        padded = np.zeros(grid.shape() + (nv,) * d)
        sl = [slice(None)] * d + [slice(nv // 2 - n // 2, nv // 2 + n // 2)] * d
        padded[tuple(sl)] = w_vals
        w_vals = padded

    out = PhaseSpaceDensity(grid=grid, nv=nv, dv=dv, values=w_vals)
    tr = float(np.trace(op.mat).real)
    expect = tr * (2.0 * np.pi * grid.epsilon) ** d
    if abs(out.mass - expect) > 1e-8 * max(abs(expect), 1e-300):
        raise PhaseSpaceError(
            f"mass convention violated: int W = {out.mass:.12g}, "
            f"(2 pi eps)^d tr = {expect:.12g}"
        )
    return out
