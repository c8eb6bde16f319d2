"""Exact finite-dimensional fermionic Fock space machinery.

The one-particle space is truncated to d modes; mixed-state dynamics runs
on the doubled space with 2d modes (left block then right block).  Basis
states are occupation bitstrings: bit j of the basis index is the
occupation of mode j; the vacuum is index 0.  Ladder operators use the
Jordan-Wigner sign string over the fixed global ordering, which realizes
the (-1)^N twist of the left/right construction implicitly: left and right
operators anticommute exactly, and all CAR relations hold in integer
arithmetic.

Contents: ladder operators, second quantization, the interacting
Liouvillian, Bogoliubov implementors of quasi-free mixed states, reduced
densities and wedge powers, Wick residuals, exact many-body evolution, the
fluctuation dynamics and its quartic generator.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid_ops import Grid, PotentialSpec


class FockError(ValueError):
    """Dimension caps or mismatched Fock-space operands."""


MAX_MODES = 14  # hard cap: matrices at most 16384 x 16384


@dataclass
class FockSpace:
    """Occupation-number basis over d (or doubled 2d) fermionic modes."""

    modes: int
    doubled: bool
    _ladder_cache: dict = field(default_factory=dict, repr=False, compare=False)
    _popcount: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def total_modes(self) -> int:
        return 2 * self.modes if self.doubled else self.modes

    @property
    def dimension(self) -> int:
        return 1 << self.total_modes

    def popcounts(self) -> np.ndarray:
        if self._popcount is None:
            self._popcount = np.array(
                [bin(i).count("1") for i in range(self.dimension)], dtype=np.int64
            )
        return self._popcount

    def vacuum(self) -> np.ndarray:
        psi = np.zeros(self.dimension, dtype=complex)
        psi[0] = 1.0
        return psi

    def mode_index(self, k: int, side: str) -> int:
        if not 0 <= k < self.modes:
            raise FockError(f"mode {k} out of range for d = {self.modes}")
        if side == "l":
            return k
        if side == "r":
            if not self.doubled:
                raise FockError("right modes require a doubled space")
            return self.modes + k
        raise FockError(f"side must be 'l' or 'r', got {side!r}")


def build_fock_space(d: int, doubled: bool) -> FockSpace:
    m = 2 * d if doubled else d
    if d < 1:
        raise FockError(f"need at least one mode, got d = {d}")
    if m > MAX_MODES:
        raise FockError(f"total modes {m} exceeds the cap {MAX_MODES}")
    return FockSpace(modes=d, doubled=doubled)


@dataclass
class FockOperator:
    """Sparse operator on a Fock space."""

    space: FockSpace
    matrix: sp.spmatrix

    def __post_init__(self):
        dim = self.space.dimension
        if self.matrix.shape != (dim, dim):
            raise FockError(f"matrix shape {self.matrix.shape} != ({dim}, {dim})")

    def dagger(self) -> "FockOperator":
        return FockOperator(self.space, self.matrix.conj().T.tocsr())

    def apply(self, psi: np.ndarray) -> np.ndarray:
        return self.matrix @ psi

    def expectation(self, psi: np.ndarray) -> complex:
        return complex(np.vdot(psi, self.matrix @ psi))

    def hermiticity_deviation(self) -> float:
        dev = (self.matrix - self.matrix.conj().T).tocoo()
        return float(np.abs(dev.data).max()) if dev.nnz else 0.0

    def __add__(self, other):
        return FockOperator(self.space, (self.matrix + other.matrix).tocsr())

    def __sub__(self, other):
        return FockOperator(self.space, (self.matrix - other.matrix).tocsr())

    def __matmul__(self, other):
        return FockOperator(self.space, (self.matrix @ other.matrix).tocsr())

    def scaled(self, c) -> "FockOperator":
        return FockOperator(self.space, (self.matrix * c).tocsr())


def _raw_annihilator(space: FockSpace, mode: int) -> sp.csr_matrix:
    """Jordan-Wigner annihilator with integer entries (exact signs)."""
    dim = space.dimension
    basis = np.arange(dim, dtype=np.int64)
    occupied = (basis >> mode) & 1 == 1
    cols = basis[occupied]
    rows = cols ^ (1 << mode)
    below = cols & ((1 << mode) - 1)
    signs = 1 - 2 * (space.popcounts()[below] & 1)
    return sp.csr_matrix((signs.astype(np.int64), (rows, cols)), shape=(dim, dim))


def ladder_operator(space: FockSpace, k: int, side: str = "l", dagger: bool = False) -> FockOperator:
    """a_{k,side} (or its adjoint): one integer entry per eligible column."""
    mode = space.mode_index(k, side)
    key = (mode, dagger)
    if key not in space._ladder_cache:
        a = _raw_annihilator(space, mode)
        space._ladder_cache[(mode, False)] = a
        space._ladder_cache[(mode, True)] = a.conj().T.tocsr()
    return FockOperator(space, space._ladder_cache[key])


def number_operator(space: FockSpace, side: str = "total") -> FockOperator:
    """Diagonal particle-number operator (popcount of the chosen block)."""
    basis = np.arange(space.dimension, dtype=np.int64)
    d = space.modes
    if side == "total":
        vals = space.popcounts().astype(float)
    elif side == "l":
        vals = space.popcounts()[basis & ((1 << d) - 1)].astype(float)
    elif side == "r":
        if not space.doubled:
            raise FockError("right block requires a doubled space")
        vals = space.popcounts()[basis >> d].astype(float)
    else:
        raise FockError(f"side must be 'l', 'r' or 'total', got {side!r}")
    return FockOperator(space, sp.diags(vals).tocsr())


def dressed_annihilator(space: FockSpace, f: np.ndarray, side: str) -> FockOperator:
    """a_side(f) = sum_j conj(f_j) a_{j,side} (antilinear in f)."""
    f = np.asarray(f, dtype=complex)
    acc = None
    for j in range(space.modes):
        if f[j] == 0:
            continue
        term = ladder_operator(space, j, side, False).matrix * np.conj(f[j])
        acc = term if acc is None else acc + term
    if acc is None:
        acc = sp.csr_matrix((space.dimension, space.dimension), dtype=complex)
    return FockOperator(space, acc.tocsr())


def dressed_creator(space: FockSpace, f: np.ndarray, side: str) -> FockOperator:
    """a*_side(f) = sum_j f_j a*_{j,side} (linear in f; adjoint of a_side(f))."""
    return dressed_annihilator(space, f, side).dagger()


def second_quantize(space: FockSpace, one_body: np.ndarray, side: str = "l") -> FockOperator:
    """dGamma_side(O) = sum_{jk} O[j, k] a*_{j,side} a_{k,side}."""
    one_body = np.asarray(one_body, dtype=complex)
    d = space.modes
    if one_body.shape != (d, d):
        raise FockError(f"one-body matrix shape {one_body.shape} != ({d}, {d})")
    acc = sp.csr_matrix((space.dimension, space.dimension), dtype=complex)
    for j in range(d):
        adag = ladder_operator(space, j, side, True).matrix
        row = None
        for k in range(d):
            if one_body[j, k] == 0:
                continue
            a = ladder_operator(space, k, side, False).matrix
            term = a * one_body[j, k]
            row = term if row is None else row + term
        if row is not None:
            acc = acc + adag @ row
    return FockOperator(space, acc.tocsr())


# ---------------------------------------------------------------------------
# Mode systems: momentum-mode truncation of the grid problem
# ---------------------------------------------------------------------------


@dataclass
class ModeSystem:
    """d lowest-|p| momentum modes of a grid, with their interaction data.

    Modes are plane waves e^{i p x}/sqrt(L^dim); the kinetic term is
    diagonal, and the two-body interaction reduces to the tensor

        W[k1,k2,k3,k4] = V_hat(p_1 - p_4) delta(p_1 + p_2 = p_3 + p_4) / L^dim

    multiplying a*_{k1} a*_{k2} a_{k3} a_{k4} in (2N)^{-1} sum W a*a*aa.
    """

    grid: Grid
    int_momenta: np.ndarray  # (d, dim) integers
    momenta: np.ndarray      # (d, dim) physical p
    h0: np.ndarray           # (d, d)
    vhat_table: dict

    @property
    def d(self) -> int:
        return self.int_momenta.shape[0]

    def vhat(self, q_int: tuple) -> float:
        return self.vhat_table[q_int]

    def mode_functions(self) -> np.ndarray:
        """Columns phi_k(x_j) on the grid, orthonormal in the grid product."""
        pts = self.grid.points()
        vol = self.grid.length ** self.grid.dim
        return np.exp(1j * pts @ self.momenta.T) / np.sqrt(vol)


def mode_system(grid: Grid, potential: PotentialSpec, d: int) -> ModeSystem:
    """Select the d lowest-|p| momentum modes (ties: more negative first)."""
    if d > grid.npoints:
        raise FockError(f"cannot select {d} modes from {grid.npoints} grid modes")
    n = grid.n
    kvals = np.fft.fftfreq(n, d=1.0 / n).astype(int)
    kvecs = np.array(
        list(itertools.product(kvals, repeat=grid.dim)), dtype=int
    )
    norms = np.linalg.norm(kvecs, axis=1)
    order = sorted(range(len(kvecs)), key=lambda i: (norms[i],) + tuple(kvecs[i]))
    sel = np.array(order[:d])
    int_momenta = kvecs[sel]
    momenta = 2.0 * np.pi * int_momenta / grid.length
    eps = grid.epsilon
    h0 = np.diag((eps ** 2) * (momenta ** 2).sum(axis=1)).astype(complex)

    vhat_grid = potential.fourier_coefficients
    half = n // 2
    table: dict = {}
    for ka in int_momenta:
        for kb in int_momenta:
            for sa in (+1, -1):
                for sb in (+1, -1):
                    q = tuple(sa * ka + sb * kb)
                    if q in table:
                        continue
                    if any(qc < -half or qc > half - 1 for qc in q):
                        raise FockError(
                            f"momentum transfer {q} leaves the grid window; "
                            f"use a finer grid (n >= 4 d)"
                        )
                    idx = tuple(qc % n for qc in q)
                    table[q] = float(vhat_grid[idx])
    zero = tuple([0] * grid.dim)
    table.setdefault(zero, float(vhat_grid[zero]))
    return ModeSystem(grid=grid, int_momenta=int_momenta, momenta=momenta, h0=h0, vhat_table=table)


def interaction_tensor(ms: ModeSystem) -> np.ndarray:
    """The quartic tensor W of the truncated interaction (momentum basis)."""
    d = ms.d
    vol = ms.grid.length ** ms.grid.dim
    w = np.zeros((d, d, d, d))
    km = ms.int_momenta
    for i1, i2, i3, i4 in itertools.product(range(d), repeat=4):
        if not np.array_equal(km[i1] + km[i2], km[i3] + km[i4]):
            continue
        w[i1, i2, i3, i4] = ms.vhat(tuple(km[i1] - km[i4])) / vol
    return w


def build_liouvillian(
    space: FockSpace, h0: np.ndarray, interaction, n_target: float
) -> FockOperator:
    """L = dGamma_l(h0) - dGamma_r(h0) + (2N)^-1 (quartic_l - quartic_r).

    ``interaction`` is either a (d, d) real symmetric matrix V[j, k]
    multiplying the density-density form a*_j a*_k a_k a_j, or the full
    (d, d, d, d) tensor W multiplying a*_1 a*_2 a_3 a_4.  The result is
    Hermitian and commutes with both block number operators exactly.
    """
    if not space.doubled:
        raise FockError("the Liouvillian lives on the doubled space")
    d = space.modes
    interaction = np.asarray(interaction)
    if interaction.shape == (d, d):
        w = np.zeros((d, d, d, d), dtype=interaction.dtype)
        for j in range(d):
            for k in range(d):
                w[j, k, k, j] = interaction[j, k]
    elif interaction.shape == (d, d, d, d):
        w = interaction
    else:
        raise FockError(
            f"interaction must be (d,d) or (d,d,d,d) with d={d}, got {interaction.shape}"
        )

    total = second_quantize(space, h0, "l") - second_quantize(space, np.asarray(h0), "r")
    for side, sign in (("l", +1.0), ("r", -1.0)):
        quart = _quartic_from_tensor(space, w, side)
        total = total + quart.scaled(sign / (2.0 * n_target))
    return total


def _quartic_from_tensor(space: FockSpace, w: np.ndarray, side: str) -> FockOperator:
    """sum W[1234] a*_1 a*_2 a_3 a_4 on one side, paired for efficiency."""
    d = space.modes
    dim = space.dimension
    acc = sp.csr_matrix((dim, dim), dtype=complex)
    pair_ann = {}
    for i3 in range(d):
        a3 = ladder_operator(space, i3, side, False).matrix
        for i4 in range(d):
            a4 = ladder_operator(space, i4, side, False).matrix
            pair_ann[(i3, i4)] = (a3 @ a4).tocsr()
    for i1 in range(d):
        c1 = ladder_operator(space, i1, side, True).matrix
        for i2 in range(d):
            block = None
            for (i3, i4), p in pair_ann.items():
                coef = w[i1, i2, i3, i4]
                if coef == 0:
                    continue
                term = p * coef
                block = term if block is None else block + term
            if block is None:
                continue
            c2 = ladder_operator(space, i2, side, True).matrix
            acc = acc + c1 @ (c2 @ block)
    return FockOperator(space, acc.tocsr())


# ---------------------------------------------------------------------------
# Bogoliubov implementors (Araki-Wyss construction)
# ---------------------------------------------------------------------------


@dataclass
class BogoliubovMap:
    """Unitary implementor data of the quasi-free state with density omega.

    In the eigenbasis of omega (occupations lambda_k, angles
    theta_k = arcsin(sqrt(lambda_k))) the generator is

        G = sum_k theta_k (c_{k,r} c_{k,l} - c*_{k,l} c*_{k,r}),

    where c_{k,l} annihilates the k-th eigenmode on the left and c_{k,r}
    the conjugate eigenmode on the right.  R = exp(G) then satisfies
    R* a_{x,l} R = a_l(u_x) - a*_r(vbar_x) mode by mode.
    """

    space: FockSpace
    omega: np.ndarray
    u: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    generator: FockOperator
    _dense_r: np.ndarray | None = field(default=None, repr=False)

    def u_block(self) -> np.ndarray:
        """U block of the Bogoliubov map on h + h: diag(u, conj(u))."""
        d = self.space.modes
        out = np.zeros((2 * d, 2 * d), dtype=complex)
        out[:d, :d] = self.u
        out[d:, d:] = self.u.conj()
        return out

    def v_block(self) -> np.ndarray:
        """V block: [[0, conj(v)], [-v, 0]]."""
        d = self.space.modes
        out = np.zeros((2 * d, 2 * d), dtype=complex)
        out[:d, d:] = self.v.conj()
        out[d:, :d] = -self.v
        return out

    def block_relations_deviation(self) -> float:
        """max deviation of U*U + V*V = 1 and U*Vbar + V*Ubar = 0."""
        ub, vb = self.u_block(), self.v_block()
        eye = np.eye(ub.shape[0])
        r1 = ub.conj().T @ ub + vb.conj().T @ vb - eye
        r2 = ub.conj().T @ vb.conj() + vb.conj().T @ ub.conj()
        return float(max(np.abs(r1).max(), np.abs(r2).max()))

    @property
    def implementor(self) -> np.ndarray:
        """Dense unitary R = exp(G) (cached; use the apply methods at scale)."""
        if self._dense_r is None:
            self._dense_r = _expm_dense_antihermitian(self.generator.matrix)
        return self._dense_r

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """R psi without materializing R."""
        if self._dense_r is not None:
            return self._dense_r @ psi
        return spla.expm_multiply(self.generator.matrix, psi)

    def apply_dagger(self, psi: np.ndarray) -> np.ndarray:
        """R^dagger psi = exp(-G) psi (G is anti-Hermitian)."""
        if self._dense_r is not None:
            return self._dense_r.conj().T @ psi
        return spla.expm_multiply(-self.generator.matrix, psi)


def _expm_dense_antihermitian(g: sp.spmatrix) -> np.ndarray:
    """exp(G) for anti-Hermitian G via the eigendecomposition of iG."""
    h = (1j * g).toarray()
    h = 0.5 * (h + h.conj().T)
    lam, vec = np.linalg.eigh(h)
    return (vec * np.exp(-1j * lam)) @ vec.conj().T


def bogoliubov_implementor(space: FockSpace, omega: np.ndarray) -> BogoliubovMap:
    """Build the Araki-Wyss implementor of the quasi-free state for omega."""
    if not space.doubled:
        raise FockError("the implementor lives on the doubled space")
    d = space.modes
    omega = np.asarray(omega, dtype=complex)
    if omega.shape != (d, d):
        raise FockError(f"omega shape {omega.shape} != ({d}, {d})")
    herm = np.abs(omega - omega.conj().T).max()
    if herm > 1e-10 * max(1.0, np.abs(omega).max()):
        raise FockError(f"omega not Hermitian (deviation {herm:.3e})")
    lam, basis = np.linalg.eigh(0.5 * (omega + omega.conj().T))
    if lam.min() < -1e-8 or lam.max() > 1.0 + 1e-8:
        raise FockError(f"omega spectrum [{lam.min():.3e}, {lam.max():.3e}] not in [0,1]")
    lam = np.clip(lam, 0.0, 1.0)
    theta = np.arcsin(np.sqrt(lam))
    u = (basis * np.sqrt(1.0 - lam)) @ basis.conj().T
    v = (basis * np.sqrt(lam)) @ basis.conj().T

    dim = space.dimension
    gen = sp.csr_matrix((dim, dim), dtype=complex)
    for k in range(d):
        if theta[k] == 0.0:
            continue
        phi = basis[:, k]
        c_l = dressed_annihilator(space, phi, "l")
        c_r = dressed_annihilator(space, np.conj(phi), "r")
        pair = c_r.matrix @ c_l.matrix
        gen = gen + theta[k] * (pair - pair.conj().T)
    return BogoliubovMap(
        space=space,
        omega=omega,
        u=0.5 * (u + u.conj().T),
        v=0.5 * (v + v.conj().T),
        theta=theta,
        generator=FockOperator(space, gen.tocsr()),
    )


@dataclass
class QuasiFreeState:
    """Vector R Omega on the doubled space together with its source density."""

    vector: np.ndarray
    omega: np.ndarray
    bogoliubov: BogoliubovMap


def quasi_free_state(space: FockSpace, omega: np.ndarray) -> QuasiFreeState:
    bog = bogoliubov_implementor(space, omega)
    psi = bog.apply(space.vacuum())
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > 1e-10:
        raise FockError(f"implementor not norm-preserving ({nrm - 1.0:.3e})")
    gamma, alpha, _ = reduced_densities(space, psi, 1)
    pairing = np.abs(alpha).max()
    if pairing > 1e-10:
        raise FockError(f"quasi-free state has pairing {pairing:.3e}")
    del gamma
    return QuasiFreeState(vector=psi, omega=omega, bogoliubov=bog)


# ---------------------------------------------------------------------------
# Reduced densities, wedge powers, Wick residuals
# ---------------------------------------------------------------------------


def reduced_densities(space: FockSpace, psi: np.ndarray, k: int):
    """k-particle reduced density of the left modes.

    gamma^(k)[(x1..xk), (y1..yk)] =
        (k!)^{-1} <psi, a*_{y1,l} .. a*_{yk,l} a_{xk,l} .. a_{x1,l} psi>,
    assembled as a Gram matrix of the vectors a_{xk} .. a_{x1} psi (so it
    is Hermitian PSD by construction).  For k = 1 the pairing density
    alpha[x, y] = <psi, a_{y,l} a_{x,l} psi> and the generalized density
    Gamma = [[gamma, alpha], [alpha*, 1 - conj(gamma)]] are also returned
    (as the tuple (gamma, alpha, Gamma)); for k >= 2 the return is
    (gamma_k, None, None).
    """
    if k > 3:
        raise FockError("reduced densities implemented for k <= 3 (cost cap)")
    if k < 1:
        raise FockError("k must be >= 1")
    d = space.modes
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > 1e-8:
        raise FockError(f"state not normalized (|psi| = {nrm:.12g})")

    ann = [ladder_operator(space, x, "l", False).matrix for x in range(d)]

    # Q[(x1..xk)] = a_{xk} ... a_{x1} psi  -> stored under key (x1..xk)
    keys = list(itertools.product(range(d), repeat=k))
    qmat = np.empty((len(keys), space.dimension), dtype=complex)
    for i, key in enumerate(keys):
        vec = psi
        for x in key:  # apply a_{x1} first, then a_{x2}, ...
            vec = ann[x] @ vec
        qmat[i] = vec
    gram = qmat.conj() @ qmat.T  # gram[y, x] = <Q_y, Q_x>
    gamma_k = gram.T / math.factorial(k)

    if k == 1:
        alpha = np.empty((d, d), dtype=complex)
        for x in range(d):
            for y in range(d):
                alpha[x, y] = np.vdot(psi, ann[y] @ (ann[x] @ psi))
        gamma = gamma_k
        big = np.zeros((2 * d, 2 * d), dtype=complex)
        big[:d, :d] = gamma
        big[:d, d:] = alpha
        big[d:, :d] = alpha.conj().T
        big[d:, d:] = np.eye(d) - gamma.conj()
        ev = np.linalg.eigvalsh(0.5 * (big + big.conj().T))
        if ev.min() < -1e-10 or ev.max() > 1.0 + 1e-10:
            raise FockError(
                f"generalized density spectrum [{ev.min():.3e}, {ev.max():.3e}] "
                "violates 0 <= Gamma <= 1"
            )
        return gamma, alpha, big
    return gamma_k, None, None


def wedge_power(omega: np.ndarray, k: int) -> np.ndarray:
    """Antisymmetrized tensor power with the (k!)^{-1} normalization.

    (omega^wedge-k)[(x...), (y...)] =
        (k!)^{-1} sum_{pi in S_k} sgn(pi) prod_j omega[x_j, y_pi(j)],
    so that tr(omega^wedge-k) = e_k(eigenvalues) and gamma^(k) of a
    quasi-free state equals omega^wedge-k exactly.
    """
    if k > 3:
        raise FockError("wedge powers implemented for k <= 3")
    omega = np.asarray(omega, dtype=complex)
    d = omega.shape[0]
    out = np.zeros((d,) * (2 * k), dtype=complex)
    xs = "abc"[:k]
    for perm in itertools.permutations(range(k)):
        sign = _perm_sign(perm)
        ys = "".join("xyz"[perm[j]] for j in range(k))
        sub = ",".join(f"{xs[j]}{ys[j]}" for j in range(k))
        out += sign * np.einsum(f"{sub}->{xs}{'xyz'[:k]}", *([omega] * k))
    out /= math.factorial(k)
    return out.reshape(d ** k, d ** k)


def _perm_sign(perm) -> int:
    sign = 1
    seen = [False] * len(perm)
    for i in range(len(perm)):
        if seen[i]:
            continue
        j = i
        length = 0
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def wick_residual(space: FockSpace, psi: np.ndarray, test_vectors) -> float:
    """Largest deviation from Wick's rule over all 4-point sharp patterns.

    For each of the 16 choices of daggers on a^#(f1)..a^#(f4), compare the
    4-point function with its pairing expansion
    <12><34> - <13><24> + <14><23>; the maximum of these deviations and of
    all odd (1- and 3-point) moments is returned.
    """
    fs = [np.asarray(f, dtype=complex) for f in test_vectors]
    if len(fs) != 4:
        raise FockError("need exactly four test vectors")
    ops = {}
    for i, f in enumerate(fs):
        ops[(i, False)] = dressed_annihilator(space, f, "l").matrix
        ops[(i, True)] = dressed_creator(space, f, "l").matrix

    worst = 0.0
    for pattern in itertools.product((False, True), repeat=4):
        mats = [ops[(i, dag)] for i, dag in enumerate(pattern)]
        four = np.vdot(psi, mats[0] @ (mats[1] @ (mats[2] @ (mats[3] @ psi))))

        def two(i, j):
            return np.vdot(psi, mats[i] @ (mats[j] @ psi))

        wick = two(0, 1) * two(2, 3) - two(0, 2) * two(1, 3) + two(0, 3) * two(1, 2)
        worst = max(worst, abs(four - wick))

    for pattern in itertools.product((False, True), repeat=1):
        for i in range(4):
            worst = max(worst, abs(np.vdot(psi, ops[(i, pattern[0])] @ psi)))
    for trip in itertools.combinations(range(4), 3):
        for pattern in itertools.product((False, True), repeat=3):
            m = [ops[(trip[j], pattern[j])] for j in range(3)]
            worst = max(worst, abs(np.vdot(psi, m[0] @ (m[1] @ (m[2] @ psi)))))
    return float(worst)


# ---------------------------------------------------------------------------
# Exact evolution, fluctuation dynamics and its generator
# ---------------------------------------------------------------------------


DENSE_EVOLUTION_CAP = 1 << 10  # use the eigensolver up to this dimension


def evolve_many_body(
    psi0: np.ndarray, liouvillian: FockOperator, t: float, epsilon: float
) -> np.ndarray:
    """psi_t = exp(-i L t / eps) psi0, dense below 2^10, Krylov action above."""
    nrm = np.linalg.norm(psi0)
    if abs(nrm - 1.0) > 1e-10:
        raise FockError(f"initial state not normalized (|psi| = {nrm:.12g})")
    if t == 0.0:
        return psi0.copy()
    mat = liouvillian.matrix
    if liouvillian.space.dimension <= DENSE_EVOLUTION_CAP:
        h = mat.toarray()
        h = 0.5 * (h + h.conj().T)
        lam, vec = np.linalg.eigh(h)
        psi = (vec * np.exp(-1j * t / epsilon * lam)) @ (vec.conj().T @ psi0)
    else:
        psi = spla.expm_multiply((-1j * t / epsilon) * mat, psi0)
    drift = abs(np.linalg.norm(psi) - 1.0)
    if drift > 1e-10:
        raise FockError(f"evolution norm drift {drift:.3e} exceeds 1e-10")
    return psi


def number_moments(space: FockSpace, psi: np.ndarray, k: int) -> float:
    """<psi, (N + 1)^k psi> computed exactly on the diagonal."""
    if k > 10:
        raise FockError("moment order capped at 10")
    pops = space.popcounts().astype(float)
    return float(np.sum(np.abs(psi) ** 2 * (pops + 1.0) ** k))


@dataclass
class FluctuationGenerator:
    """The generator split into its quadratic and quartic parts."""

    total: FockOperator
    quadratic: FockOperator
    number_conserving: FockOperator  # quartics commuting with N
    number_mixing: FockOperator      # quartics not commuting with N


def _family_operator(space: FockSpace, w_tensor: np.ndarray, mats: dict, family, prefactor: float) -> sp.spmatrix:
    """Assemble one quartic family of the conjugated interaction.

    Each printed operator descends from one slot of the original quartic
    a*(1) a*(2) a(3) a(4) through the Bogoliubov substitution: symbols u /
    ubar with a dagger (and v / vbar without) come from an original
    creator, the others from an original annihilator; the x label pairs
    with slots (1, 4), the y label with (2, 3).  The coefficient tensor is
    the W tensor contracted with the substitution matrices (printed symbol
    for daggers, its conjugate for annihilators, all conjugations taken
    componentwise in the mode basis), and the ladder operators multiply in
    the printed order.
    """
    d = w_tensor.shape[0]
    coeff_mats = []
    orig_slots = []
    for (side, dagger, symbol, slot) in family:
        w = mats[symbol]
        coeff_mats.append(w if dagger else w.conj())
        creator_origin = (symbol in ("u", "ubar")) == dagger
        if creator_origin:
            orig_slots.append(0 if slot == "x" else 1)
        else:
            orig_slots.append(3 if slot == "x" else 2)
    if sorted(orig_slots) != [0, 1, 2, 3]:
        raise FockError(f"inconsistent family slot assignment {orig_slots}")
    out_letters = "abcd"
    w_letters = "ABCD"
    subs = ",".join(
        f"{out_letters[t]}{w_letters[orig_slots[t]]}" for t in range(4)
    )
    coeff = prefactor * np.einsum(
        f"{subs},ABCD->abcd", *coeff_mats, w_tensor, optimize=True
    )

    ops = []
    for (side, dagger, _, _) in family:
        ops.append([ladder_operator(space, j, side, dagger).matrix for j in range(d)])
    dim = space.dimension
    acc = sp.csr_matrix((dim, dim), dtype=complex)
    pair34 = {}
    for j3 in range(d):
        for j4 in range(d):
            pair34[(j3, j4)] = (ops[2][j3] @ ops[3][j4]).tocsr()
    for j1 in range(d):
        for j2 in range(d):
            block = None
            for (j3, j4), p in pair34.items():
                c = coeff[j1, j2, j3, j4]
                if c == 0:
                    continue
                term = p * c
                block = term if block is None else block + term
            if block is None:
                continue
            acc = acc + ops[0][j1] @ (ops[1][j2] @ block)
    return acc


# quartic families of the generator; entries are
# (coefficient, [(side, dagger, symbol, slot) x 4]) in printed operator order
_CN_FAMILIES = [
    (+1.0, [("l", True, "u", "x"), ("l", True, "u", "y"), ("l", False, "u", "y"), ("l", False, "u", "x")]),
    (+2.0, [("l", True, "u", "x"), ("r", True, "vbar", "x"), ("r", False, "vbar", "y"), ("l", False, "u", "y")]),
    (-2.0, [("l", True, "u", "x"), ("r", True, "vbar", "y"), ("r", False, "vbar", "y"), ("l", False, "u", "x")]),
    (+1.0, [("r", True, "vbar", "y"), ("r", True, "vbar", "x"), ("r", False, "vbar", "x"), ("r", False, "vbar", "y")]),
    (-1.0, [("r", True, "ubar", "x"), ("r", True, "ubar", "y"), ("r", False, "ubar", "y"), ("r", False, "ubar", "x")]),
    (-2.0, [("r", True, "ubar", "x"), ("l", True, "v", "x"), ("l", False, "v", "y"), ("r", False, "ubar", "y")]),
    (+2.0, [("r", True, "ubar", "x"), ("l", True, "v", "y"), ("l", False, "v", "y"), ("r", False, "ubar", "x")]),
    (-1.0, [("l", True, "v", "y"), ("l", True, "v", "x"), ("l", False, "v", "x"), ("l", False, "v", "y")]),
]

_QN_FAMILIES = [
    (+1.0, [("l", True, "u", "x"), ("l", True, "u", "y"), ("r", True, "vbar", "y"), ("r", True, "vbar", "x")]),
    (+2.0, [("l", True, "u", "x"), ("l", True, "u", "y"), ("r", True, "vbar", "x"), ("l", False, "u", "y")]),
    (-2.0, [("l", True, "u", "x"), ("r", True, "vbar", "y"), ("r", True, "vbar", "x"), ("r", False, "vbar", "y")]),
    (-1.0, [("r", True, "ubar", "x"), ("r", True, "ubar", "y"), ("l", True, "v", "y"), ("l", True, "v", "x")]),
    (+2.0, [("r", True, "ubar", "x"), ("r", True, "ubar", "y"), ("l", True, "v", "x"), ("r", False, "ubar", "y")]),
    (-2.0, [("r", True, "ubar", "x"), ("l", True, "v", "y"), ("l", True, "v", "x"), ("l", False, "v", "y")]),
]


def fluctuation_generator(
    space: FockSpace,
    w_tensor: np.ndarray,
    omega: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    h_hf: np.ndarray,
    n_target: float,
) -> FluctuationGenerator:
    """Assemble the fluctuation-dynamics generator term by term.

    G = dGamma_l(h_HF) - dGamma_r(conj(h_HF)) + C_N + Q_N, with C_N the
    eight quartic families commuting with the total number operator and
    Q_N the six number-mixing families plus their adjoints, all carrying
    the (2N)^{-1} interaction prefactor.
    """
    if not space.doubled:
        raise FockError("the fluctuation generator lives on the doubled space")
    d = space.modes
    for name, m in (("omega", omega), ("u", u), ("v", v), ("h_hf", h_hf)):
        if np.asarray(m).shape != (d, d):
            raise FockError(f"{name} has shape {np.asarray(m).shape}, expected ({d}, {d})")
    mats = {
        "u": np.asarray(u, dtype=complex),
        "v": np.asarray(v, dtype=complex),
        "ubar": np.asarray(u, dtype=complex).conj(),
        "vbar": np.asarray(v, dtype=complex).conj(),
    }

    quad = second_quantize(space, h_hf, "l") - second_quantize(space, np.conj(h_hf), "r")

    pref = 1.0 / (2.0 * n_target)
    dim = space.dimension
    w_tensor = np.asarray(w_tensor)
    if w_tensor.shape != (d, d, d, d):
        raise FockError(f"interaction tensor shape {w_tensor.shape} != {(d, d, d, d)}")
    cn = sp.csr_matrix((dim, dim), dtype=complex)
    for coeff, family in _CN_FAMILIES:
        cn = cn + _family_operator(space, w_tensor, mats, family, coeff * pref)
    qn = sp.csr_matrix((dim, dim), dtype=complex)
    for coeff, family in _QN_FAMILIES:
        qn = qn + _family_operator(space, w_tensor, mats, family, coeff * pref)
    qn = qn + qn.conj().T

    cn_op = FockOperator(space, cn.tocsr())
    qn_op = FockOperator(space, qn.tocsr())
    total = quad + cn_op + qn_op
    dev = total.hermiticity_deviation()
    if dev > 1e-10 * max(1.0, float(np.abs(total.matrix).max())):
        raise FockError(f"assembled generator not Hermitian (deviation {dev:.3e})")
    return FluctuationGenerator(
        total=total, quadratic=quad, number_conserving=cn_op, number_mixing=qn_op
    )


def fluctuation_dynamics(
    xi: np.ndarray,
    omega_trajectory: list,
    liouvillian: FockOperator,
    t: float,
    epsilon: float,
    space: FockSpace,
    t_tol: float = 1e-9,
) -> np.ndarray:
    """xi_t = R_t^dagger exp(-i L t / eps) R_0 xi.

    ``omega_trajectory`` is a list of (time, omega) samples from the
    mode-basis Hartree-Fock flow; the sample matching ``t`` (within
    ``t_tol``) provides R_t, built fresh by exponentiation.
    """
    omega_t = None
    omega_0 = None
    for ts, om in omega_trajectory:
        if abs(ts - 0.0) <= t_tol:
            omega_0 = om
        if abs(ts - t) <= t_tol:
            omega_t = om
    if omega_0 is None or omega_t is None:
        raise FockError(f"trajectory does not cover t = 0 and t = {t}")
    r0 = bogoliubov_implementor(space, omega_0)
    psi = r0.apply(np.asarray(xi, dtype=complex))
    psi = evolve_many_body(psi / np.linalg.norm(psi), liouvillian, t, epsilon)
    rt = bogoliubov_implementor(space, omega_t)
    out = rt.apply_dagger(psi) * np.linalg.norm(xi)
    drift = abs(np.linalg.norm(out) - np.linalg.norm(xi))
    if drift > 1e-8 * max(np.linalg.norm(xi), 1e-300):
        raise FockError(f"fluctuation dynamics norm drift {drift:.3e}")
    return out
