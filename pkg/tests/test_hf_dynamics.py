import numpy as np
import pytest

from fermisim.grid_ops import (
    OneBodyOperator,
    build_grid,
    canonical_operators,
    cosine_potential,
    gaussian_potential,
    zero_potential,
)
from fermisim.states import make_density, sqrt_pair
from fermisim.hf_dynamics import (
    HFError,
    HFState,
    build_hf_hamiltonian,
    evolve_hf,
    evolve_mode_hf,
    hf_energy,
    hf_step,
    mode_hf_hamiltonian,
)


def wavepacket_density(grid, n_target=1.0, width=0.4, center=None):
    center = np.pi if center is None else center
    f = np.exp(-((grid.points_axis - center) ** 2) / (2 * width ** 2)).astype(complex)
    f /= np.sqrt(grid.weight * np.sum(np.abs(f) ** 2))
    return make_density(OneBodyOperator(grid, grid.weight * np.outer(f, f.conj())), n_target), f


def thermal_like(grid, n_target, seed=0):
    rng = np.random.default_rng(seed)
    m = grid.npoints
    a = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    h = 0.5 * (a + a.conj().T)
    lam, vec = np.linalg.eigh(h)
    occ = 1.0 / (1.0 + np.exp(lam))
    return make_density(OneBodyOperator(grid, (vec * occ) @ vec.conj().T), n_target)


def test_hamiltonian_reduces_to_kinetic_for_zero_potential():
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    dm = thermal_like(g, 4.0)
    h = build_hf_hamiltonian(dm, zero_potential(g), g)
    _, _, kin = canonical_operators(g)
    assert np.abs(h.mat - kin.mat).max() < 1e-12


def test_hamiltonian_momentum_space_oracle():
    # translation-invariant omega: direct term constant, exchange diagonal
    # in momentum with a convolution symbol; oracle = explicit mode sums
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    n = g.n
    b = np.exp(1j * np.outer(g.points_axis, g.momenta_axis)) / np.sqrt(n)
    occ = 0.9 * np.exp(-0.5 * np.abs(np.fft.fftfreq(n, 1.0 / n)))
    n_tar = float(occ.sum())
    mat = (b * occ) @ b.conj().T
    dm = make_density(OneBodyOperator(g, mat), n_tar)
    pot = gaussian_potential(g, 0.8, 0.5)
    h = build_hf_hamiltonian(dm, pot, g)
    h_mom = b.conj().T @ h.mat @ b
    off = h_mom - np.diag(np.diagonal(h_mom))
    assert np.abs(off).max() < 1e-9

    vhat = pot.fourier_coefficients
    n_target = n_tar
    kvals = np.fft.fftfreq(n, 1.0 / n).astype(int)
    direct_const = vhat[0] * occ.sum() / (g.length * n_target)
    expected = np.zeros(n)
    for i, k in enumerate(kvals):
        exch = 0.0
        for j, q in enumerate(kvals):
            diff = (k - q) % n  # V_hat sampled on the lattice
            exch += vhat[diff] * occ[j]
        expected[i] = (
            g.epsilon ** 2 * (2 * np.pi * k / g.length) ** 2
            + direct_const
            - exch / (g.length * n_target)
        )
    assert np.abs(np.diagonal(h_mom).real - expected).max() < 1e-9


def test_exchange_kernel_rank_one():
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    dm, f = wavepacket_density(g)
    pot = gaussian_potential(g, 1.0, 0.5)
    h_with = build_hf_hamiltonian(dm, pot, g, exchange=-1.0)
    h_without = build_hf_hamiltonian(dm, pot, g, exchange=0.0)
    x_mat = h_without.mat - h_with.mat
    v = pot.real_space()
    rng = np.random.default_rng(0)
    for _ in range(5):
        i, j = rng.integers(0, 16, size=2)
        expected = v[(i - j) % 16] * g.weight * f[i] * np.conj(f[j]) / 1.0
        assert abs(x_mat[i, j] - expected) < 1e-10


def test_energy_kinetic_plane_wave():
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    k0 = 3
    phi = np.exp(1j * k0 * g.points_axis) / np.sqrt(g.length)
    dm = make_density(OneBodyOperator(g, g.weight * np.outer(phi, phi.conj())), 1.0)
    e = hf_energy(dm, zero_potential(g), g)
    assert abs(e - g.epsilon ** 2 * (2 * np.pi * k0 / g.length) ** 2) < 1e-12


def test_energy_constant_potential_double_sum_oracle():
    g = build_grid(1, 12, 2 * np.pi, 0.5)
    v0 = 0.7
    pot = cosine_potential(g, [(v0, (0,))])
    dm = thermal_like(g, 3.0, seed=8)
    m = dm.op.mat
    e = hf_energy(dm, pot, g)
    # closed form: v0 (2N)^-1 [(tr m)^2 - ||m||_F^2]
    interaction = v0 / (2 * 3.0) * (np.trace(m).real ** 2 - np.linalg.norm(m) ** 2)
    _, _, kin = canonical_operators(g)
    assert abs(e - np.trace(kin.mat @ m).real - interaction) < 1e-10
    # and against the direct double sum
    vdiff = pot.sampled_difference()
    diag = np.real(np.diagonal(m))
    direct = 0.0
    exch = 0.0
    for i in range(12):
        for j in range(12):
            direct += vdiff[i, j] * diag[i] * diag[j]
            exch += vdiff[i, j] * abs(m[i, j]) ** 2
    assert abs(e - np.trace(kin.mat @ m).real - (direct - exch) / 6.0) < 1e-10


def test_energy_real_for_random_admissible():
    g = build_grid(1, 12, 2 * np.pi, 0.5)
    pot = gaussian_potential(g, 1.0, 0.5)
    for seed in range(3):
        dm = thermal_like(g, 4.0, seed=seed)
        e = hf_energy(dm, pot, g)
        assert isinstance(e, float) and np.isfinite(e)


def test_step_commuting_hamiltonian_is_identity():
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    # momentum-diagonal omega with V = 0 commutes with the kinetic term
    n = g.n
    b = np.exp(1j * np.outer(g.points_axis, g.momenta_axis)) / np.sqrt(n)
    occ = 0.8 / (1.0 + np.exp(np.fft.fftfreq(n, 1.0 / n) ** 2 / 4.0))
    dm = make_density(OneBodyOperator(g, (b * occ) @ b.conj().T), float(occ.sum()))
    _, _, kin = canonical_operators(g)
    st = HFState(omega=dm, time=0.0)
    out = hf_step(st, zero_potential(g), 0.3, kin)
    assert np.abs(out.omega.op.mat - dm.op.mat).max() < 1e-12


def test_free_evolution_matches_spectral_propagator():
    g = build_grid(1, 32, 2 * np.pi, 0.5)
    dm, f = wavepacket_density(g)
    st = evolve_hf(dm, zero_potential(g), t_final=1.0, dt=1e-3)
    _, _, kin = canonical_operators(g)
    lam, vec = np.linalg.eigh(kin.mat)
    u = (vec * np.exp(-1j * 1.0 / g.epsilon * lam)) @ vec.conj().T
    ft = u @ f
    ref = g.weight * np.outer(ft, ft.conj())
    assert np.linalg.norm(st.omega.op.mat - ref) < 1e-9


def test_dt_halving_second_order():
    g = build_grid(1, 24, 2 * np.pi, 0.5)
    pot = gaussian_potential(g, 1.0, 0.6)
    dm = thermal_like(g, 3.0, seed=4)
    t = 0.4

    def final(dt):
        return evolve_hf(dm, pot, t, dt).omega.op.mat

    ref = final(0.04 / 8)
    e1 = np.linalg.norm(final(0.04) - ref)
    e2 = np.linalg.norm(final(0.02) - ref)
    assert 3.0 <= e1 / e2 <= 5.0


def test_conservation_and_spectrum():
    g = build_grid(1, 24, 2 * np.pi, 0.4)
    pot = gaussian_potential(g, 0.8, 0.6)
    dm = thermal_like(g, 3.0, seed=6)
    st = evolve_hf(dm, pot, t_final=0.5, dt=5e-3, record_every=25)
    tr = [r[1] for r in st.log]
    en = [r[2] for r in st.log]
    assert abs(tr[-1] - tr[0]) < 1e-9 * 3.0
    assert abs(en[-1] - en[0]) < 1e-6 * abs(en[0])
    ev0 = np.sort(dm.eigenvalues)
    ev1 = np.sort(np.linalg.eigvalsh(st.omega.op.mat))
    assert np.abs(ev1 - ev0).max() < 1e-8


def test_time_reversibility():
    g = build_grid(1, 24, 2 * np.pi, 0.4)
    pot = gaussian_potential(g, 0.8, 0.6)
    dm = thermal_like(g, 3.0, seed=7)
    fwd = evolve_hf(dm, pot, t_final=0.3, dt=5e-3)
    back = evolve_hf(fwd.omega, pot, t_final=0.3, dt=-5e-3)
    assert np.linalg.norm(back.omega.op.mat - dm.op.mat) < 1e-8


def test_nonconvergent_midpoint_raises():
    g = build_grid(1, 16, 2 * np.pi, 0.05)
    pot = gaussian_potential(g, 50.0, 0.3)
    dm = thermal_like(g, 4.0, seed=2)
    _, _, kin = canonical_operators(g)
    with pytest.raises(HFError):
        hf_step(HFState(omega=dm, time=0.0), pot, 5.0, kin)


def test_t_zero_returns_initial():
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    dm = thermal_like(g, 2.0, seed=1)
    st = evolve_hf(dm, gaussian_potential(g, 1.0, 0.5), t_final=0.0, dt=1e-2)
    assert np.abs(st.omega.op.mat - dm.op.mat).max() == 0


def test_mode_hf_matches_grid_hf_for_full_mode_set():
    # with d = n the mode-basis flow is the grid flow rotated to momentum space
    from fermisim.fock_car import interaction_tensor, mode_system

    g = build_grid(1, 16, 2 * np.pi, 0.5)
    pot = gaussian_potential(g, 0.8, 0.7)
    ms = mode_system(g, pot, 4)
    w_tensor = interaction_tensor(ms)
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    h = 0.5 * (a + a.conj().T)
    lam, vec = np.linalg.eigh(h)
    occ = 1 / (1 + np.exp(lam))
    omega0 = (vec * occ) @ vec.conj().T

    # energy conservation of the mode flow
    from fermisim.hf_dynamics import mode_hf_energy

    n_tar = float(occ.sum())
    traj = evolve_mode_hf(omega0, ms.h0, w_tensor, n_tar, g.epsilon, 0.4, 2e-3)
    e0 = mode_hf_energy(ms.h0, w_tensor, traj[0][1], n_tar)
    e1 = mode_hf_energy(ms.h0, w_tensor, traj[-1][1], n_tar)
    assert abs(e1 - e0) < 1e-8 * max(abs(e0), 1.0)
    # spectrum preserved
    assert np.abs(
        np.sort(np.linalg.eigvalsh(traj[-1][1])) - np.sort(occ)
    ).max() < 1e-10


def test_mode_hf_hamiltonian_position_basis_reduction():
    # density-density tensor W[j,k,k,j] = V[j,k] reduces to diag(V rho) - X
    d = 5
    rng = np.random.default_rng(9)
    vmat = rng.normal(size=(d, d))
    vmat = 0.5 * (vmat + vmat.T)
    w = np.zeros((d, d, d, d))
    for j in range(d):
        for k in range(d):
            w[j, k, k, j] = vmat[j, k]
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    omega = a @ a.conj().T
    omega /= np.trace(omega).real
    h0 = np.zeros((d, d))
    h = mode_hf_hamiltonian(h0, w, omega, 1.0)
    direct = np.diag(vmat @ np.real(np.diagonal(omega)))
    exch = vmat * omega
    assert np.abs(h - (direct - exch)).max() < 1e-12
