"""Time-dependent Hartree-Fock flow i eps d/dt omega = [h(omega), omega].

The effective Hamiltonian is h = -eps^2 Laplacian + diag(V * rho) - X with
rho(x) = omega(x, x)/N and exchange kernel X(x, y) = V(x - y) omega(x, y)/N.
Time stepping uses a self-consistent midpoint unitary step,

    omega' = U omega U^dagger,   U = exp(-i dt h(omega_half) / eps),

which preserves the spectrum of omega exactly (conjugation) and is second
order in dt.  The exchange term carries a sign/strength multiplier:
-1 is Hartree-Fock (the default), 0 drops exchange (fermionic Hartree, used
in Vlasov comparisons), +1 selects the opposite-sign variant.

A mode-basis variant of the same flow (plain d x d arrays, quartic
interaction tensor) drives the truncated Fock-space experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid_ops import Grid, OneBodyOperator, PotentialSpec
from .states import DensityMatrix, semiclassical_report


class HFError(RuntimeError):
    """Self-consistency iteration failed; reduce dt."""


def build_hf_hamiltonian(
    omega: DensityMatrix,
    potential: PotentialSpec,
    grid: Grid,
    n_target: float | None = None,
    kinetic: OneBodyOperator | None = None,
    v_ext: np.ndarray | None = None,
    exchange: float = -1.0,
) -> OneBodyOperator:
    """Hermitian h = kinetic + diag(V * rho) + exchange * X.

    ``exchange`` multiplies the exchange operator; the default -1 subtracts
    it (Hartree-Fock).  ``kinetic`` may be passed in to avoid rebuilding the
    spectral Laplacian every step.
    """
    from .grid_ops import apply_convolution, canonical_operators

    n_target = omega.particle_number if n_target is None else n_target
    if kinetic is None:
        _, _, kinetic = canonical_operators(grid)
    rho = np.real(np.diagonal(omega.op.kernel)) / n_target
    direct = apply_convolution(grid, potential, rho.reshape(grid.shape())).ravel()
    h = kinetic.mat + np.diag(direct).astype(complex)
    if v_ext is not None:
        h = h + np.diag(np.asarray(v_ext, dtype=float).ravel())
    if exchange != 0.0:
        vdiff = potential.sampled_difference()
        x_mat = vdiff * omega.op.mat / n_target
        h = h + exchange * x_mat
    h = 0.5 * (h + h.conj().T)
    return OneBodyOperator(grid, h, hermitian=True)


def hf_energy(
    omega: DensityMatrix,
    potential: PotentialSpec,
    grid: Grid,
    n_target: float | None = None,
    v_ext: np.ndarray | None = None,
) -> float:
    """Hartree-Fock energy functional.

    tr((-eps^2 Lap + V_ext) omega)
      + (2N)^{-1} int int V(x-y) [omega(x,x) omega(y,y) - |omega(x,y)|^2].
    The conserved quantity of the free flow uses V_ext = 0.
    """
    from .grid_ops import canonical_operators

    n_target = omega.particle_number if n_target is None else n_target
    _, _, kinetic = canonical_operators(grid)
    m = omega.op.mat
    e_kin = float(np.trace(kinetic.mat @ m).real)
    e_ext = 0.0
    if v_ext is not None:
        e_ext = float(np.sum(np.asarray(v_ext).ravel() * np.real(np.diagonal(m))))
    vdiff = potential.sampled_difference()
    diag = np.real(np.diagonal(m))
    e_dir = float(diag @ vdiff @ diag)
    e_exc = float(np.sum(vdiff * np.abs(m) ** 2))
    return e_kin + e_ext + (e_dir - e_exc) / (2.0 * n_target)


@dataclass
class HFState:
    """Density matrix snapshot of the Hartree-Fock trajectory with its log.

    Log rows are (t, trace, hf_energy, eig_min, eig_max, semiclassical_C).
    """

    omega: DensityMatrix
    time: float
    log: list = field(default_factory=list)

    def log_csv(self) -> str:
        lines = ["t,trace,energy,eig_min,eig_max,semiclassical_C"]
        for row in self.log:
            lines.append(",".join(f"{x:.17g}" for x in row))
        return "\n".join(lines) + "\n"


def hf_step(
    state: HFState,
    potential: PotentialSpec,
    dt: float,
    kinetic: OneBodyOperator,
    exchange: float = -1.0,
    max_sc_iter: int = 8,
    sc_tol: float = 1e-12,
    sc_fail: float = 1e-6,
) -> HFState:
    """One self-consistent midpoint unitary step.

    The half-step density omega_half is found by fixed-point iteration
    omega_half <- (omega + U(omega_half) omega U(omega_half)^dagger) / 2,
    at most ``max_sc_iter`` sweeps, stopping at a 1e-12 increment; failure
    to reach 1e-6 raises (advice: smaller dt).  The final update conjugates
    omega with the midpoint propagator, so its spectrum is exactly kept.
    """
    if dt == 0.0:
        return HFState(omega=state.omega, time=state.time, log=state.log)
    grid = state.omega.grid
    eps = grid.epsilon
    n_target = state.omega.particle_number
    m0 = state.omega.op.mat
    half = m0.copy()
    increment = np.inf
    lam = vec = None
    for _ in range(max_sc_iter):
        dm_half = DensityMatrix(
            op=OneBodyOperator(grid, 0.5 * (half + half.conj().T)),
            particle_number=n_target,
            eigenvalues=state.omega.eigenvalues,
            eigenvectors=state.omega.eigenvectors,
        )
        h = build_hf_hamiltonian(
            dm_half, potential, grid, n_target, kinetic=kinetic, exchange=exchange
        )
        lam, vec = np.linalg.eigh(h.mat)
        phase = np.exp(-1j * dt / eps * lam)
        u = (vec * phase) @ vec.conj().T
        prop = u @ m0 @ u.conj().T
        new_half = 0.5 * (m0 + prop)
        increment = np.abs(new_half - half).max()
        half = new_half
        if increment <= sc_tol:
            break
    if increment > sc_fail:
        raise HFError(
            f"midpoint self-consistency stalled at increment {increment:.3e} "
            f"after {max_sc_iter} iterations; reduce dt"
        )
    phase = np.exp(-1j * dt / eps * lam)
    u = (vec * phase) @ vec.conj().T
    m1 = u @ m0 @ u.conj().T
    m1 = 0.5 * (m1 + m1.conj().T)
    new_omega = DensityMatrix(
        op=OneBodyOperator(grid, m1, hermitian=True),
        particle_number=n_target,
        eigenvalues=state.omega.eigenvalues,  # conjugation keeps the spectrum
        eigenvectors=u @ state.omega.eigenvectors,
        clamp_magnitude=state.omega.clamp_magnitude,
    )
    return HFState(omega=new_omega, time=state.time + dt, log=state.log)


def evolve_hf(
    omega0: DensityMatrix,
    potential: PotentialSpec,
    t_final: float,
    dt: float,
    record_every: int = 0,
    exchange: float = -1.0,
    probe_modes: list | None = None,
) -> HFState:
    """Run the Hartree-Fock flow to t_final, logging every record_every steps.

    Negative dt runs the flow backwards (time reversal).  Log rows hold
    trace, energy (V_ext = 0), spectral extrema and the semiclassical
    constant from :func:`semiclassical_report`.
    """
    from .grid_ops import canonical_operators

    grid = omega0.grid
    _, _, kinetic = canonical_operators(grid)
    if t_final < 0:
        raise HFError("t_final must be nonnegative (use negative dt to reverse)")
    nsteps = int(round(t_final / abs(dt))) if t_final > 0 else 0
    state = HFState(omega=omega0, time=0.0, log=[])

    def record(st: HFState):
        rep = semiclassical_report(st.omega, probe_modes)
        ev = st.omega.eigenvalues
        st.log.append(
            (
                st.time,
                float(np.trace(st.omega.op.mat).real),
                hf_energy(st.omega, potential, grid),
                float(ev.min()),
                float(ev.max()),
                rep.constant,
            )
        )

    if record_every:
        record(state)
    for step in range(nsteps):
        state = hf_step(state, potential, dt, kinetic, exchange=exchange)
        if record_every and ((step + 1) % record_every == 0 or step + 1 == nsteps):
            record(state)
    return state


# ---------------------------------------------------------------------------
# Mode-basis Hartree-Fock (for the truncated Fock-space experiments)
# ---------------------------------------------------------------------------


def mode_hf_hamiltonian(
    h0: np.ndarray, w_tensor: np.ndarray, omega: np.ndarray, n_target: float
) -> np.ndarray:
    """Mean-field Hamiltonian of the quartic interaction (2N)^-1 W a*a*aa.

    For W[k1,k2,k3,k4] multiplying a*_{k1} a*_{k2} a_{k3} a_{k4} (with the
    symmetry W[1234] = W[2143]), the Wick-contracted one-body field is

        h = h0 + N^-1 ( W[a,b,c,d] omega[c,b] )_{ad}   (direct)
               - N^-1 ( W[a,b,c,d] omega[d,b] )_{ac}   (exchange).

    In the position-sampled case this reduces to diag(V*rho) - X.
    """
    direct = np.einsum("abcd,cb->ad", w_tensor, omega)
    exch = np.einsum("abcd,db->ac", w_tensor, omega)
    h = h0 + (direct - exch) / n_target
    return 0.5 * (h + h.conj().T)


def mode_hf_energy(h0, w_tensor, omega, n_target) -> float:
    """tr(h0 omega) + (2N)^-1 W[(omega)(omega) - exchange] in the mode basis."""
    e0 = np.trace(h0 @ omega).real
    dir_term = np.einsum("abcd,da,cb->", w_tensor, omega, omega)
    exc_term = np.einsum("abcd,ca,db->", w_tensor, omega, omega)
    return float(e0 + (dir_term - exc_term).real / (2.0 * n_target))


def evolve_mode_hf(
    omega0: np.ndarray,
    h0: np.ndarray,
    w_tensor: np.ndarray,
    n_target: float,
    epsilon: float,
    t_final: float,
    dt: float,
    store_every: int = 1,
    max_sc_iter: int = 8,
    sc_tol: float = 1e-12,
) -> list[tuple[float, np.ndarray]]:
    """Midpoint-unitary HF flow on plain mode-basis matrices.

    Returns [(t, omega_t), ...] sampled every ``store_every`` steps
    (always including t = 0 and t_final).
    """
    omega = np.array(omega0, dtype=complex)
    nsteps = int(round(t_final / dt)) if t_final > 0 else 0
    out = [(0.0, omega.copy())]
    t = 0.0
    for step in range(nsteps):
        half = omega.copy()
        for _ in range(max_sc_iter):
            h = mode_hf_hamiltonian(h0, w_tensor, half, n_target)
            lam, vec = np.linalg.eigh(h)
            u = (vec * np.exp(-1j * dt / epsilon * lam)) @ vec.conj().T
            prop = u @ omega @ u.conj().T
            new_half = 0.5 * (omega + prop)
            inc = np.abs(new_half - half).max()
            half = new_half
            if inc <= sc_tol:
                break
        if inc > 1e-6:
            raise HFError(f"mode HF midpoint iteration stalled (increment {inc:.3e})")
        omega = u @ omega @ u.conj().T
        omega = 0.5 * (omega + omega.conj().T)
        t += dt
        if (step + 1) % store_every == 0 or step + 1 == nsteps:
            out.append((t, omega.copy()))
    return out
