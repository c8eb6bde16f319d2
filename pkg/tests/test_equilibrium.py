import numpy as np
import pytest

from fermisim.grid_ops import OneBodyOperator, build_grid, gaussian_potential, zero_potential
from fermisim.states import make_density
from fermisim.equilibrium import (
    FermiDiracParams,
    PhaseSpaceDensity,
    PhaseSpaceError,
    ThomasFermiError,
    fermi_dirac_density,
    logistic,
    solve_thomas_fermi,
    tf_coupling,
    tf_energy,
    velocity_spacing,
    weyl_quantize,
    wigner_transform,
)


# ---------------------------------------------------------------------------
# Thomas-Fermi
# ---------------------------------------------------------------------------


def test_tf_uniform_for_flat_trap():
    g = build_grid(1, 32, 2 * np.pi, 0.5)
    pot = gaussian_potential(g, 0.5, 0.6)
    res = solve_thomas_fermi(g, np.zeros(g.shape()), pot, 3.0)
    assert np.abs(res.rho - 3.0 / g.length).max() < 1e-10
    assert res.residual < 1e-6


def test_tf_density_scales_with_n_when_free():
    g = build_grid(1, 32, 2 * np.pi, 0.5)
    pot = zero_potential(g)
    r1 = solve_thomas_fermi(g, np.zeros(g.shape()), pot, 1.0)
    r2 = solve_thomas_fermi(g, np.zeros(g.shape()), pot, 2.0)
    assert np.abs(r2.rho - 2.0 * r1.rho).max() < 1e-9


def _project_simplex(x, total):
    """Euclidean projection onto {x >= 0, sum x = total} (sort-based)."""
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, len(u) + 1)
    cond = u - css / idx > 0
    rho_idx = idx[cond][-1]
    theta = css[cond][-1] / rho_idx
    return np.maximum(x - theta, 0.0)


def test_tf_matches_projected_gradient_oracle():
    # V_ext = 1 - cos(2 pi x / L), V = 0, d' = 3, N = 1: compare the damped
    # fixed-point solution with direct projected-gradient minimization of
    # the discretized functional on the simplex
    g = build_grid(1, 32, 2 * np.pi, 0.5)
    pot = zero_potential(g)
    v_ext = 1.0 - np.cos(2 * np.pi * g.points_axis / g.length)
    n_target = 1.0
    dprime = 3
    res = solve_thomas_fermi(g, v_ext, pot, n_target, exponent_dim=dprime)

    c1 = tf_coupling(g, dprime)
    c_kin = c1 * dprime / (dprime + 2.0)
    w = g.weight
    rho = np.full(g.n, n_target / g.length)
    step = 0.05
    for _ in range(60000):
        grad = c1 * rho ** (2.0 / dprime) + v_ext
        new = _project_simplex(rho - step * grad, n_target / w)
        if np.abs(new - rho).max() < 1e-13:
            rho = new
            break
        rho = new
    l1 = w * np.abs(res.rho.ravel() - rho).sum()
    assert l1 < 1e-4
    # exact profile shape: rho = ((lam - V_ext)_+ / c1)^{3/2}
    shape = ((np.maximum(res.lam - v_ext, 0.0)) / c1) ** 1.5
    assert np.abs(res.rho.ravel() - shape).max() < 1e-6
    # oracle energy not lower than the converged energy (both feasible)
    e_fixed = tf_energy(g, res.rho, v_ext, pot, n_target, exponent_dim=dprime)
    e_pg = tf_energy(g, rho, v_ext, pot, n_target, exponent_dim=dprime)
    assert e_fixed <= e_pg + 1e-8


def test_tf_nonconvergence_reports():
    g = build_grid(1, 8, 2 * np.pi, 0.5)
    pot = zero_potential(g)
    with pytest.raises(ThomasFermiError):
        solve_thomas_fermi(g, np.zeros(g.shape()), pot, 1.0, max_iter=0)


# ---------------------------------------------------------------------------
# Fermi-Dirac phase-space data
# ---------------------------------------------------------------------------


def test_fermi_dirac_half_at_chemical_potential():
    assert logistic(np.array([0.0]))[0] == pytest.approx(0.5)
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    rho = np.full(g.shape(), 2.0 / g.length)
    fd, mu = fermi_dirac_density(rho, FermiDiracParams(T=0.4), g, 2.0)
    c = tf_coupling(g)
    # at phase points with v^2 - c rho^{2/d} = mu the value is exactly 1/2
    e_val = fd.v_axis[fd.nv // 2 + 1] ** 2 - c * rho.ravel()[0] ** 2
    idx = (1, fd.nv // 2 + 1)
    expected = logistic(np.array([(e_val - mu) / 0.4]))[0]
    assert fd.values[idx] == pytest.approx(expected, rel=1e-12)


def test_fermi_dirac_sharp_limit():
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    rho = np.full(g.shape(), 2.0 / g.length)
    params = FermiDiracParams(T=1e-4)
    fd, mu = fermi_dirac_density(rho, params, g, 2.0)
    c = tf_coupling(g)
    vsq = fd.v_axis ** 2
    energy = vsq[None, :] - c * rho.ravel()[0] ** 2
    indicator = (energy < mu).astype(float)
    shell = np.abs(energy - mu) < 40 * 1e-4  # O(T log) transition shell
    diff = np.abs(fd.values - indicator)
    assert diff[~np.broadcast_to(shell, diff.shape)].max() < 1e-3


def test_fermi_dirac_mu_matches_quadrature_root_oracle():
    # uniform density, d' = 1: solve the same mass equation with a
    # high-resolution quadrature + brentq and compare mu to 1e-8
    from scipy.optimize import brentq

    g = build_grid(1, 16, 2 * np.pi, 0.5)
    rho = np.full(g.shape(), 1.0 / g.length)
    params = FermiDiracParams(T=0.5, exponent_dim=1)
    fd, mu = fermi_dirac_density(rho, params, g, 1.0)
    c = tf_coupling(g, 1)
    target = 1.0 * (2 * np.pi * g.epsilon)
    v = fd.v_axis
    well = c * rho.ravel()[0] ** 2.0

    def mass(m):
        vals = logistic((v ** 2 - well - m) / params.T)
        return g.length * fd.dv * vals.sum()

    mu_oracle = brentq(lambda m: mass(m) - target, -1e3, 1e3, xtol=1e-12)
    assert abs(mu - mu_oracle) < 1e-8


def test_fermi_dirac_range_and_unreachable():
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    rho = np.full(g.shape(), 2.0 / g.length)
    fd, _ = fermi_dirac_density(rho, FermiDiracParams(T=0.4), g, 2.0)
    assert fd.values.min() >= 0.0 and fd.values.max() <= 1.0
    with pytest.raises(PhaseSpaceError):
        fermi_dirac_density(rho, FermiDiracParams(T=0.4), g, 1e9, nv=16)


# ---------------------------------------------------------------------------
# Weyl quantization / Wigner transform
# ---------------------------------------------------------------------------


def test_weyl_momentum_function_diagonal():
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    n, dv = g.n, velocity_spacing(g)
    v = (np.arange(n) - n // 2) * dv
    f = np.exp(-(v ** 2))
    psd = PhaseSpaceDensity(grid=g, nv=n, dv=dv, values=np.tile(f, (n, 1)))
    dm, info = weyl_quantize(psd, g)
    scale = dm.particle_number / (psd.mass / (2 * np.pi * g.epsilon))
    b = np.exp(1j * np.outer(g.points_axis, g.momenta_axis)) / np.sqrt(n)
    in_mom = b.conj().T @ dm.op.mat @ b
    off = in_mom - np.diag(np.diagonal(in_mom))
    assert np.abs(off).max() < 1e-8
    expected = np.exp(-((g.epsilon * g.momenta_axis) ** 2)) * scale
    assert np.abs(np.diagonal(in_mom).real - expected).max() < 1e-8


def test_weyl_position_function_multiplication():
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    n, dv = g.n, velocity_spacing(g)
    h = 0.4 + 0.2 * np.cos(g.points_axis)
    psd = PhaseSpaceDensity(grid=g, nv=n, dv=dv, values=np.tile(h[:, None], (1, n)))
    dm, _ = weyl_quantize(psd, g)
    scale = dm.particle_number / (psd.mass / (2 * np.pi * g.epsilon))
    assert np.abs(dm.op.mat - np.diag(h) * scale).max() < 1e-8


def test_weyl_velocity_grid_guards():
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    dv = velocity_spacing(g)
    vals = np.ones((16, 8))
    with pytest.raises(PhaseSpaceError):
        weyl_quantize(PhaseSpaceDensity(grid=g, nv=8, dv=dv, values=vals), g)
    vals = np.ones((16, 16))
    with pytest.raises(PhaseSpaceError):
        weyl_quantize(PhaseSpaceDensity(grid=g, nv=16, dv=0.9 * dv, values=vals), g)


def test_weyl_semiclassical_ratios_bounded_over_epsilon_sweep():
    # mirrors the claim that thermal Weyl data satisfies the commutator
    # bounds uniformly in epsilon (at matched N = 1/eps)
    from fermisim.states import semiclassical_report

    consts = []
    for eps in (0.5, 0.25, 0.125):
        g = build_grid(1, 32, 2 * np.pi, eps)
        n_target = 1.0 / eps
        rho = np.full(g.shape(), n_target / g.length)
        fd, _ = fermi_dirac_density(rho, FermiDiracParams(T=0.3), g, n_target)
        dm, _ = weyl_quantize(fd, g, n_target=n_target)
        consts.append(semiclassical_report(dm).constant)
    consts = np.array(consts)
    assert consts.max() / consts.min() < 2.5


def test_wigner_plane_wave_projector():
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    k0 = 2
    phi = np.exp(1j * k0 * g.points_axis) / np.sqrt(g.length)
    mat = g.weight * np.outer(phi, phi.conj())
    dm = make_density(OneBodyOperator(g, mat), 1.0)
    w = wigner_transform(dm, nv=32)
    vals = w.values
    idx = int(np.argmax(np.abs(vals).sum(axis=0)))
    assert w.v_axis[idx] == pytest.approx(g.epsilon * k0 * 2 * np.pi / g.length)
    assert np.ptp(vals[:, idx]) < 1e-12  # uniform in x
    assert abs(w.mass - 2 * np.pi * g.epsilon) < 1e-10
    assert np.abs(np.delete(vals, idx, axis=1)).max() < 1e-12


def test_wigner_identity_over_two_constant():
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    dm = make_density(OneBodyOperator(g, 0.5 * np.eye(16).astype(complex)), 8.0)
    w = wigner_transform(dm)
    assert np.ptp(w.values) < 1e-12


def test_roundtrip_band_limited_exact():
    rng = np.random.default_rng(1)
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    n, dv = g.n, velocity_spacing(g)
    kbins = np.arange(n) - n // 2
    m_vals = np.zeros((n, n))
    for qx in range(-3, 4):
        for sig in range(-3, 4):
            phase = rng.normal()
            m_vals += rng.normal() * np.real(
                np.exp(2j * np.pi * (qx * np.arange(n)[:, None] / n + sig * kbins[None, :] / n))
                * np.exp(1j * phase)
            )
    m_vals = (m_vals - m_vals.min()) / np.ptp(m_vals) * 0.4 + 0.05
    psd = PhaseSpaceDensity(grid=g, nv=n, dv=dv, values=m_vals)
    dm, info = weyl_quantize(psd, g)
    scale = dm.particle_number / (psd.mass / (2 * np.pi * g.epsilon))
    w = wigner_transform(dm)
    assert np.abs(w.values - m_vals * scale).max() < 1e-8
    assert info["hermiticity_deviation"] < 1e-12


def test_roundtrip_2d():
    g = build_grid(2, 8, 2 * np.pi, 0.5)
    n, dv = g.n, velocity_spacing(g)
    x = g.points_axis
    kb = np.arange(n) - n // 2
    mx = 0.3 + 0.1 * np.cos(x)[:, None] * np.cos(x)[None, :]
    # band-limited velocity profile (low chord frequencies only)
    mv1 = 0.5 + 0.3 * np.cos(2 * np.pi * kb / n) + 0.1 * np.cos(4 * np.pi * kb / n)
    mv = mv1[:, None] * mv1[None, :]
    m_vals = mx[:, :, None, None] * mv[None, None, :, :]
    psd = PhaseSpaceDensity(grid=g, nv=n, dv=dv, values=m_vals)
    dm, _ = weyl_quantize(psd, g)
    scale = dm.particle_number / (psd.mass / (2 * np.pi * g.epsilon) ** 2)
    w = wigner_transform(dm)
    assert np.abs(w.values - m_vals * scale).max() < 1e-8


def test_wigner_mass_convention_asserted():
    g = build_grid(1, 12, 2 * np.pi, 0.4)
    rng = np.random.default_rng(4)
    a = rng.normal(size=(12, 12)) + 1j * rng.normal(size=(12, 12))
    h = 0.5 * (a + a.conj().T)
    lam, vec = np.linalg.eigh(h)
    occ = 1 / (1 + np.exp(lam))
    dm = make_density(OneBodyOperator(g, (vec * occ) @ vec.conj().T), 5.0)
    w = wigner_transform(dm)
    assert abs(w.mass - (2 * np.pi * g.epsilon) * 5.0) < 1e-8 * 5.0


def test_weyl_aliasing_reported():
    # velocity tails beyond the operator window fold back and are reported
    g = build_grid(1, 8, 2 * np.pi, 0.5)
    n, dv = g.n, velocity_spacing(g)
    nv = 16
    v = (np.arange(nv) - nv // 2) * dv
    vals = np.tile(np.exp(-np.abs(v) / 2.0), (n, 1))  # heavy tails
    psd = PhaseSpaceDensity(grid=g, nv=nv, dv=dv, values=vals)
    dm, info = weyl_quantize(psd, g)
    assert info["alias_fraction"] > 0
