"""Admissible one-body density matrices and their semiclassical diagnostics.

A density matrix is a Hermitian operator with eigenvalues in [0, 1] and
trace N.  The square roots v = sqrt(omega), u = sqrt(1 - omega) share its
eigenbasis, so [u, v] = 0 holds by construction.

On the torus the raw position commutator [x, .] is ill-defined, so the
semiclassical structure of a state is probed through the plane-wave family
[., e^{ipx}] for lattice momenta p, together with [., eps grad].  The
normalized ratios

    r(p) = ||[., e^{ipx}]||_HS / (eps sqrt(N) (1 + |p|)),
    r_grad = ||[., eps grad]||_HS / (eps sqrt(N)),

expose the empirical constant of the commutator bounds; the constants are
reported, never asserted against absolute thresholds.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .grid_ops import Grid, GridError, OneBodyOperator, canonical_operators


class DensityError(ValueError):
    """Input too far from an admissible density matrix."""


CLAMP_HARD = 1e-6   # eigenvalues beyond this are a bug in the caller
CLAMP_SOFT = 1e-10  # silent clamping below this (integrator rounding)


@dataclass
class DensityMatrix:
    """Hermitian operator with spectrum in [0, 1] and trace N.

    The spectral decomposition is computed once at construction and cached;
    ``eigenvalues`` are clamped to [0, 1] exactly.
    """

    op: OneBodyOperator
    particle_number: float
    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)
    clamp_magnitude: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.op.grid

    @property
    def mat(self) -> np.ndarray:
        return self.op.mat

    def density_profile(self) -> np.ndarray:
        """Normalized spatial density rho(x) = omega(x, x) / N, grid shape."""
        diag = np.real(np.diagonal(self.op.kernel))
        return (diag / self.particle_number).reshape(self.grid.shape())


def make_density(op: OneBodyOperator, n_target: float) -> DensityMatrix:
    """Clamp and rescale a Hermitian operator into an admissible density.

    Eigenvalues are clamped to [0, 1] (hard failure beyond +-1e-6), then
    rescaled by a uniform multiplicative factor (re-clamping iteratively,
    at most 50 rounds) until |tr - N| <= 1e-8 N.  Uniform spectral scaling
    keeps the eigenvectors, hence [u, v] = 0 exactly.
    """
    if n_target <= 0:
        raise DensityError(f"target particle number must be positive, got {n_target}")
    m = op.grid.npoints
    if n_target > m * (1.0 + 1e-12):
        raise DensityError(
            f"trace target {n_target} exceeds the rank bound {m} of the grid"
        )
    herm_dev = np.abs(op.mat - op.mat.conj().T).max()
    if herm_dev > 1e-10 * max(np.abs(op.mat).max(), 1.0):
        raise DensityError(f"operator not Hermitian (deviation {herm_dev:.3e})")
    lam, vec = np.linalg.eigh(0.5 * (op.mat + op.mat.conj().T))
    if lam.min() < -CLAMP_HARD or lam.max() > 1.0 + CLAMP_HARD:
        raise DensityError(
            f"spectrum [{lam.min():.3e}, {lam.max():.3e}] too far outside [0, 1]"
        )
    clamp_mag = float(max(0.0, -lam.min(), lam.max() - 1.0))
    lam = np.clip(lam, 0.0, 1.0)
    # snap the spectrum edges: rounding-level occupations would otherwise be
    # amplified by the square root (sqrt(1e-17) ~ 3e-9 pollutes u, v)
    lam[lam < CLAMP_SOFT] = 0.0
    lam[lam > 1.0 - CLAMP_SOFT] = 1.0

    tol = 1e-8 * n_target
    for _ in range(50):
        tr = lam.sum()
        if abs(tr - n_target) <= tol:
            break
        if tr <= 0:
            raise DensityError("operator has zero trace, cannot rescale")
        lam = np.clip(lam * (n_target / tr), 0.0, 1.0)
    else:
        raise DensityError(
            f"trace rescaling did not converge: tr = {lam.sum():.12g}, target {n_target}"
        )

    mat = (vec * lam) @ vec.conj().T
    mat = 0.5 * (mat + mat.conj().T)
    out_op = OneBodyOperator(op.grid, mat, hermitian=True)
    return DensityMatrix(
        op=out_op,
        particle_number=float(n_target),
        eigenvalues=lam,
        eigenvectors=vec,
        clamp_magnitude=clamp_mag,
    )


@dataclass
class SqrtPair:
    """u = sqrt(1 - omega), v = sqrt(omega), computed in a shared eigenbasis."""

    u: OneBodyOperator
    v: OneBodyOperator


def sqrt_pair(omega: DensityMatrix) -> SqrtPair:
    lam = omega.eigenvalues
    vec = omega.eigenvectors
    vmat = (vec * np.sqrt(lam)) @ vec.conj().T
    umat = (vec * np.sqrt(1.0 - lam)) @ vec.conj().T
    vmat = 0.5 * (vmat + vmat.conj().T)
    umat = 0.5 * (umat + umat.conj().T)
    return SqrtPair(
        u=OneBodyOperator(omega.grid, umat, hermitian=True),
        v=OneBodyOperator(omega.grid, vmat, hermitian=True),
    )


def operator_metrics(a: OneBodyOperator) -> dict:
    """Hilbert-Schmidt norm, trace norm, operator norm and trace.

    The grid measure is already folded into the stored matrix, so the
    Frobenius norm / singular values / matrix trace are the weighted
    (continuum-approximating) quantities directly.
    """
    sv = np.linalg.svd(a.mat, compute_uv=False)
    return {
        "hs_norm": float(np.linalg.norm(a.mat)),
        "trace_norm": float(sv.sum()),
        "op_norm": float(sv.max()) if sv.size else 0.0,
        "trace": complex(np.trace(a.mat)),
    }


def commutator(a: OneBodyOperator, b: OneBodyOperator) -> OneBodyOperator:
    a.same_grid(b)
    return OneBodyOperator(a.grid, a.mat @ b.mat - b.mat @ a.mat)


def plane_wave_operator(grid: Grid, kvec) -> OneBodyOperator:
    """Multiplication operator by e^{i p . x} for an integer lattice mode."""
    kvec = tuple(int(k) for k in (kvec if isinstance(kvec, (tuple, list, np.ndarray)) else (kvec,)))
    if len(kvec) != grid.dim:
        raise GridError(f"mode vector {kvec} has wrong dimension for dim={grid.dim}")
    for k in kvec:
        if not (-grid.n // 2 <= k <= grid.n // 2 - 1):
            raise GridError(f"probe momentum index {k} off the lattice window")
    pts = grid.points()
    p = 2.0 * np.pi * np.array(kvec) / grid.length
    phases = np.exp(1j * pts @ p)
    return OneBodyOperator(grid, np.diag(phases))


@dataclass
class SemiclassicalReport:
    """Commutator-norm families probing the semiclassical structure.

    For each probe momentum p: ||[v, e^{ipx}]||_HS and ||[u, e^{ipx}]||_HS,
    plus normalized ratios and the gradient-commutator row.  ``constant`` is
    the largest normalized ratio found (empirical constant of the bounds).
    """

    probe_modes: list
    probe_abs_p: np.ndarray
    comm_v: np.ndarray
    comm_u: np.ndarray
    ratio_v: np.ndarray
    ratio_u: np.ndarray
    comm_grad_v: float
    comm_grad_u: float
    ratio_grad_v: float
    ratio_grad_u: float
    constant: float

    def to_csv(self) -> str:
        """CSV with columns p, comm_v, comm_u, ratio_v, ratio_u and one
        gradient row appended (p column holds the label 'grad')."""
        buf = io.StringIO()
        buf.write("p,comm_v,comm_u,ratio_v,ratio_u\n")
        for i, mode in enumerate(self.probe_modes):
            ptag = "+".join(str(k) for k in mode)
            buf.write(
                f"{ptag},{self.comm_v[i]:.17g},{self.comm_u[i]:.17g},"
                f"{self.ratio_v[i]:.17g},{self.ratio_u[i]:.17g}\n"
            )
        buf.write(
            f"grad,{self.comm_grad_v:.17g},{self.comm_grad_u:.17g},"
            f"{self.ratio_grad_v:.17g},{self.ratio_grad_u:.17g}\n"
        )
        return buf.getvalue()


def default_probe_modes(grid: Grid, kmax: int = 3) -> list:
    """Probe set {+-1, ..., +-kmax} along each axis (lattice-resolvable only)."""
    kmax = min(kmax, grid.n // 2 - 1)
    modes = []
    for axis in range(grid.dim):
        for k in range(1, kmax + 1):
            for s in (+1, -1):
                vec = [0] * grid.dim
                vec[axis] = s * k
                modes.append(tuple(vec))
    return modes


def semiclassical_report(
    omega: DensityMatrix, probe_modes: list | None = None
) -> SemiclassicalReport:
    """Evaluate the commutator-bound diagnostics of a density matrix."""
    grid = omega.grid
    if probe_modes is None:
        probe_modes = default_probe_modes(grid)
    pair = sqrt_pair(omega)
    eps = grid.epsilon
    n_sqrt = np.sqrt(omega.particle_number)

    comm_v, comm_u, abs_p = [], [], []
    for mode in probe_modes:
        e_p = plane_wave_operator(grid, mode)  # raises if off-lattice
        p = 2.0 * np.pi * np.array(mode) / grid.length
        abs_p.append(np.linalg.norm(p))
        comm_v.append(np.linalg.norm(commutator(pair.v, e_p).mat))
        comm_u.append(np.linalg.norm(commutator(pair.u, e_p).mat))
    comm_v = np.array(comm_v)
    comm_u = np.array(comm_u)
    abs_p = np.array(abs_p)
    denom = eps * n_sqrt * (1.0 + abs_p)
    ratio_v = comm_v / denom
    ratio_u = comm_u / denom

    _, momentum_ops, _ = canonical_operators(grid)
    cgv = 0.0
    cgu = 0.0
    for mop in momentum_ops:
        cgv += np.linalg.norm(commutator(pair.v, mop).mat) ** 2
        cgu += np.linalg.norm(commutator(pair.u, mop).mat) ** 2
    cgv, cgu = np.sqrt(cgv), np.sqrt(cgu)
    rgv = cgv / (eps * n_sqrt)
    rgu = cgu / (eps * n_sqrt)

    ratios = np.concatenate([ratio_v, ratio_u, [rgv, rgu]])
    return SemiclassicalReport(
        probe_modes=list(probe_modes),
        probe_abs_p=abs_p,
        comm_v=comm_v,
        comm_u=comm_u,
        ratio_v=ratio_v,
        ratio_u=ratio_u,
        comm_grad_v=float(cgv),
        comm_grad_u=float(cgu),
        ratio_grad_v=float(rgv),
        ratio_grad_u=float(rgu),
        constant=float(ratios.max()) if ratios.size else 0.0,
    )
