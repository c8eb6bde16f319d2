"""Surgical comparison of generator pieces (debug scratch, not shipped)."""
import numpy as np
from fermisim.grid_ops import build_grid, gaussian_potential
from fermisim.fock_car import (build_fock_space, mode_system, interaction_tensor,
    build_liouvillian, bogoliubov_implementor, fluctuation_generator,
    second_quantize, ladder_operator, _quartic_from_tensor, FockOperator)
from fermisim.hf_dynamics import evolve_mode_hf, mode_hf_hamiltonian

g = build_grid(1, 16, 2*np.pi, 0.5)
pot = gaussian_potential(g, amplitude=0.8, sigma=0.8)
d = 2; N = 1.0
ms = mode_system(g, pot, d)
W = interaction_tensor(ms)
space = build_fock_space(d, True)
L = build_liouvillian(space, ms.h0, W, N)
rng = np.random.default_rng(3)
A = rng.normal(size=(d,d)) + 1j*rng.normal(size=(d,d))
H = A + A.conj().T
lam, vec = np.linalg.eigh(H)
occ = 1/(1+np.exp(lam)); occ = occ*(N/occ.sum())
omega0 = (vec*occ)@vec.conj().T
eps = g.epsilon
dt = 1.25e-4
traj = evolve_mode_hf(omega0, ms.h0, W, N, eps, t_final=0.26, dt=dt, store_every=1)
t0 = 0.25
idx = [i for i,(t,_) in enumerate(traj) if abs(t-t0)<1e-12][0]
om_m, om_t, om_p = traj[idx-1][1], traj[idx][1], traj[idx+1][1]
Rm = bogoliubov_implementor(space, om_m).implementor
Rt = bogoliubov_implementor(space, om_t).implementor
Rp = bogoliubov_implementor(space, om_p).implementor
dRdag = (Rp.conj().T - Rm.conj().T)/(2*dt)
G_dR_num = 1j*eps*dRdag@Rt

lam_t, vec_t = np.linalg.eigh(om_t); lam_t = np.clip(lam_t.real,0,1)
u = (vec_t*np.sqrt(1-lam_t))@vec_t.conj().T
v = (vec_t*np.sqrt(lam_t))@vec_t.conj().T
h = mode_hf_hamiltonian(ms.h0, W, om_t, N)

def pairing_lr(P):
    """sum_{jk} P[j,k] a+_{j,l} a+_{k,r}"""
    acc = None
    for j in range(d):
        cl = ladder_operator(space, j, 'l', True).matrix
        for k in range(d):
            if P[j,k] == 0: continue
            cr = ladder_operator(space, k, 'r', True).matrix
            t = (cl@cr)*P[j,k]
            acc = t if acc is None else acc+t
    return acc.toarray()

# analytic eq:idtRR, translated naively: pairing kernel B(x,y) = (u h v - v h u)(x,y)
B = u@h@v - v@h@u
quad_l = h - u@h@u - v@h@v
G_dR_try1 = (second_quantize(space, quad_l, 'l').matrix
             - second_quantize(space, np.conj(quad_l), 'r').matrix).toarray()
# kernel-bilinear translation: coefficient of a+_{j,l} a+_{k,r} is <phi_j| B |phi_k-bar>,
# i.e. the matrix of B against the conjugated right mode: (B)[j, kbar] -- try both
P_direct = B                      # naive: P[j,k] = B[j,k]
G1 = G_dR_try1 + pairing_lr(P_direct) + pairing_lr(P_direct).conj().T
print('dR vs analytic (P=B):        ', np.abs(G_dR_num - G1).max())
# kernel translation with conjugate-mode pairing: P[j,k] = sum_y B(x_j-ish)...
# B as kernel contracted with phi-bar on the right: P = B @ C where C flips k -> -k.
# modes are momentum plane waves: conj(phi_k) = phi_{-k}; build the flip matrix
km = [tuple(kv) for kv in ms.int_momenta]
flip = np.zeros((d,d))
for a_,ka in enumerate(km):
    target = tuple(-x for x in ka)
    if target in km:
        flip[a_, km.index(target)] = 1.0
P_flip = B @ flip
G2 = G_dR_try1 + pairing_lr(P_flip) + pairing_lr(P_flip).conj().T
print('dR vs analytic (P=B@flip):   ', np.abs(G_dR_num - G2).max())
P_t = B.T
G3 = G_dR_try1 + pairing_lr(P_t) + pairing_lr(P_t).conj().T
print('dR vs analytic (P=B.T):      ', np.abs(G_dR_num - G3).max())
# maybe the quadratic diagonal needs conjugation differently on r side
G4 = (second_quantize(space, quad_l, 'l').matrix - second_quantize(space, quad_l.T, 'r').matrix).toarray() + pairing_lr(P_direct) + pairing_lr(P_direct).conj().T
print('dR vs analytic (rT, P=B):    ', np.abs(G_dR_num - G4).max())

# conjugated Liouvillian: numeric
G_L_num = Rt.conj().T@L.matrix.toarray()@Rt
# assembled quartics + what quadratic remainder?
gen = fluctuation_generator(space, ms, om_t, u, v, h, N)
quartics = (gen.number_conserving.matrix + gen.number_mixing.matrix).toarray()
# G_true quadratic remainder after subtracting assembled quartics and dR parts:
R_quad = G_L_num + G_dR_num - quartics
# compare against dGamma_l(h) - dGamma_r(conj h)
quad_claim = (second_quantize(space, h, 'l').matrix - second_quantize(space, np.conj(h), 'r').matrix).toarray()
Dq = R_quad - quad_claim
print('quadratic remainder vs claim:', np.abs(Dq).max())
print('remainder scalar:', Dq[0,0])
Dq0 = Dq - Dq[0,0]*np.eye(space.dimension)
print('after scalar removal:', np.abs(Dq0).max())
basis = np.arange(space.dimension)
nl = space.popcounts()[basis & 3]; nr = space.popcounts()[basis >> 2]
ix, jx = np.where(np.abs(Dq0) > 1e-7)
seen = {}
for i,j in zip(ix, jx):
    key=(int(nl[i]-nl[j]), int(nr[i]-nr[j]))
    seen[key] = max(seen.get(key,0), abs(Dq0[i,j]))
print('remainder sectors:', seen)
