import numpy as np
import pytest

from fermisim.grid_ops import build_grid, cosine_potential, gaussian_potential, zero_potential
from fermisim.equilibrium import PhaseSpaceDensity, PhaseSpaceError, velocity_spacing
from fermisim.phase_space import (
    evolve_vlasov,
    phase_space_distance,
    vlasov_energy,
)


def band_limited_blob(grid, nv, x0=np.pi, v0=0.0, sv=0.5):
    dv = velocity_spacing(grid)
    x = grid.points_axis
    v = (np.arange(nv) - nv // 2) * dv
    fx = 1.0 + 0.6 * np.cos(x - x0) + 0.25 * np.cos(2 * (x - x0))
    fv = np.exp(-((v - v0) ** 2) / (2 * sv ** 2))
    return PhaseSpaceDensity(grid=grid, nv=nv, dv=dv, values=fx[:, None] * fv[None, :])


def test_free_transport_closed_form():
    g = build_grid(1, 32, 2 * np.pi, 0.25)
    w0 = band_limited_blob(g, 64)
    st = evolve_vlasov(w0, zero_potential(g), t_final=1.0, dt=0.02)
    x = g.points_axis
    v = w0.v_axis
    fx = 1.0 + 0.6 * np.cos(x[:, None] - v[None, :] * 1.0 - np.pi) + 0.25 * np.cos(
        2 * (x[:, None] - v[None, :] * 1.0 - np.pi)
    )
    fv = np.exp(-(v ** 2) / (2 * 0.5 ** 2))
    expected = fx * fv[None, :]
    assert np.abs(st.w.values - expected).max() < 1e-9


def test_mass_exactly_conserved():
    g = build_grid(1, 32, 2 * np.pi, 0.25)
    w0 = band_limited_blob(g, 64)
    pot = gaussian_potential(g, 1.0, 0.7)
    st = evolve_vlasov(w0, pot, t_final=1.0, dt=0.01)
    assert abs(st.w.mass - w0.mass) < 1e-10 * w0.mass


def test_centroid_ballistic_by_momentum_conservation():
    # the mean-field force of a translation-invariant interaction exerts no
    # net momentum (Newton's third law): the blob centroid is exactly
    # ballistic even though the blob itself deforms
    g = build_grid(1, 64, 2 * np.pi, 0.25)
    nv = 128
    dv = velocity_spacing(g)
    x = g.points_axis
    v = (np.arange(nv) - nv // 2) * dv
    x0, v0 = np.pi * 0.8, 0.6
    fx = np.exp((np.cos(x - x0) - 1.0) / 0.1)
    fv = np.exp(-((v - v0) ** 2) / (2 * 0.25 ** 2))
    w0 = PhaseSpaceDensity(grid=g, nv=nv, dv=dv, values=fx[:, None] * fv[None, :])
    pot = cosine_potential(g, [(0.5, (1,))])
    n_target = w0.mass / (2 * np.pi * g.epsilon)
    st = evolve_vlasov(w0, pot, t_final=1.0, dt=0.002, n_target=n_target)

    wgt0 = w0.values
    v_mean0 = float(np.sum(wgt0 * v[None, :]) / wgt0.sum())
    x_mean0 = float(np.angle(np.sum(wgt0 * np.exp(1j * x)[:, None])))
    wgt = st.w.values
    cv = float(np.sum(wgt * v[None, :]) / wgt.sum())
    cx = float(np.angle(np.sum(wgt * np.exp(1j * x)[:, None])))
    assert abs(cv - v_mean0) < 1e-4  # splitting is second order
    drift = np.angle(np.exp(1j * (cx - x_mean0 - v_mean0 * 1.0)))
    assert abs(drift) < 1e-3


def test_point_value_follows_characteristic_ode_oracle():
    # W is constant along characteristics xdot = v, vdot = F(t, x); oracle:
    # back-propagate a probe point with a high-order ODE solver through the
    # recorded mean-field forces and compare W(t, z) with W0 at the foot
    from scipy.integrate import solve_ivp
    from fermisim.phase_space import _force

    g = build_grid(1, 64, 2 * np.pi, 0.25)
    nv = 128
    dv = velocity_spacing(g)
    x = g.points_axis
    v = (np.arange(nv) - nv // 2) * dv
    x0, v0 = np.pi * 0.8, 0.4
    fx = np.exp((np.cos(x - x0) - 1.0) / 0.3)
    fv = np.exp(-((v - v0) ** 2) / (2 * 0.4 ** 2))
    w0 = PhaseSpaceDensity(grid=g, nv=nv, dv=dv, values=fx[:, None] * fv[None, :])
    pot = cosine_potential(g, [(0.8, (1,))])
    n_target = w0.mass / (2 * np.pi * g.epsilon)

    t_final, dt = 1.0, 0.002
    # record force fields along the way
    forces, times = [], []
    w = w0
    for k in range(int(round(t_final / dt)) + 1):
        times.append(k * dt)
        forces.append(_force(g, pot, w, n_target)[0])
        if k < int(round(t_final / dt)):
            w = evolve_vlasov(w, pot, dt, dt, n_target=n_target).w
    times = np.array(times)
    forces = np.array(forces)

    def rhs(t, y):
        i = min(int(t / dt), len(times) - 2)
        frac = (t - times[i]) / dt
        field = (1 - frac) * forces[i] + frac * forces[i + 1]
        fi = np.interp(y[0] % g.length, x, field, period=g.length)
        return [y[1], fi]

    # probe a point with significant density at the final time
    iq, jq = 40, nv // 2 + 8
    sol = solve_ivp(
        rhs, (t_final, 0.0), [x[iq], v[jq]], rtol=1e-10, atol=1e-12, max_step=dt
    )
    xb, vb = sol.y[0][-1] % g.length, sol.y[1][-1]
    # interpolate W0 at the foot of the characteristic (bilinear, periodic x)
    fxb = np.interp(xb, x, np.arange(64), period=g.length)
    i0 = int(fxb) % 64
    i1 = (i0 + 1) % 64
    ax = fxb - int(fxb)
    fvb = (vb - v[0]) / dv
    j0 = int(np.clip(fvb, 0, nv - 2))
    av = fvb - j0
    w0v = (
        (1 - ax) * (1 - av) * w0.values[i0, j0]
        + ax * (1 - av) * w0.values[i1, j0]
        + (1 - ax) * av * w0.values[i0, j0 + 1]
        + ax * av * w0.values[i1, j0 + 1]
    )
    assert abs(w.values[iq, jq] - w0v) < 1e-3


def test_distance_identical_and_disjoint():
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    w1 = band_limited_blob(g, 32)
    d = phase_space_distance(w1, w1)
    assert d["l1"] == 0 and d["l2"] == 0 and d["sup"] == 0

    dv = velocity_spacing(g)
    a = np.zeros((16, 32))
    b = np.zeros((16, 32))
    a[2, 5] = 1.0
    b[7, 20] = 2.0
    wa = PhaseSpaceDensity(grid=g, nv=32, dv=dv, values=a)
    wb = PhaseSpaceDensity(grid=g, nv=32, dv=dv, values=b)
    d = phase_space_distance(wa, wb)
    assert d["l1"] == pytest.approx(wa.mass + wb.mass)


def test_distance_gaussians_quadrature_oracle():
    g = build_grid(1, 32, 2 * np.pi, 0.5)
    nv = 32
    dv = velocity_spacing(g)
    v = (np.arange(nv) - nv // 2) * dv
    x = g.points_axis
    w1 = PhaseSpaceDensity(
        grid=g, nv=nv, dv=dv,
        values=np.exp(-((x - np.pi) ** 2))[:, None] * np.exp(-(v ** 2))[None, :],
    )
    w2 = PhaseSpaceDensity(
        grid=g, nv=nv, dv=dv,
        values=np.exp(-((x - np.pi - 0.5) ** 2))[:, None] * np.exp(-((v - 0.7) ** 2))[None, :],
    )
    d = phase_space_distance(w1, w2)
    direct = 0.0
    for i in range(32):
        for j in range(nv):
            direct += abs(w1.values[i, j] - w2.values[i, j]) * g.weight * dv
    assert abs(d["l1"] - direct) < 1e-8


def test_distance_grid_mismatch():
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    w1 = band_limited_blob(g, 32)
    w2 = band_limited_blob(g, 64)
    with pytest.raises(PhaseSpaceError):
        phase_space_distance(w1, w2)


def test_energy_conserved_interacting():
    g = build_grid(1, 32, 2 * np.pi, 0.25)
    w0 = band_limited_blob(g, 64)
    pot = gaussian_potential(g, 1.0, 0.7)
    n_target = w0.mass / (2 * np.pi * g.epsilon)
    st = evolve_vlasov(w0, pot, t_final=1.0, dt=0.005, n_target=n_target, record_every=50)
    energies = [r[3] for r in st.log]
    assert abs(energies[-1] - energies[0]) < 1e-4 * abs(energies[0])


def test_cfl_warning_recorded():
    g = build_grid(1, 16, 2 * np.pi, 0.5)
    w0 = band_limited_blob(g, 64)
    with pytest.warns(UserWarning):
        st = evolve_vlasov(w0, zero_potential(g), t_final=0.1, dt=0.1)
    assert st.cfl_warnings == 1
