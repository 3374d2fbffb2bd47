"""Stencil kernels for the 2D flat-background hot loops.

All kernels are pointwise over the grid (each output node depends only on
a fixed neighborhood of inputs), compiled with fastmath disabled, so the
results are bit-identical for any thread count.  Packed symmetric layout:
component axis [g11, g12, g22]; full Christoffel layout G[k, i, j].
"""

import numpy as np
from numba import njit, prange

# packed component -> index pair, shared with grid.sym_pairs for n = 2
_PI = (0, 0, 1)
_PJ = (0, 1, 1)


@njit(cache=True, parallel=True, fastmath=False)
def christoffel_grad_2d(g, dx):
    """Full Christoffels of g (flat chart) plus squared first/second
    derivative norms, one sweep.

    Returns (gamma[N,N,2,2,2], gradsq[N,N], hesssq[N,N]) where the norms
    are the flat-reference full contractions sum_k,i,j (d_k g_ij)^2 and
    sum_k,l,i,j (d_k d_l g_ij)^2.
    """
    N = g.shape[0]
    gamma = np.empty((N, N, 2, 2, 2))
    gradsq = np.empty((N, N))
    hesssq = np.empty((N, N))
    inv2dx = 0.5 / dx
    invdx2 = 1.0 / (dx * dx)
    inv4dx2 = 0.25 / (dx * dx)
    for i in prange(N):
        d = np.empty((2, 2, 2))
        dd = np.empty((2, 2, 2, 2))
        ip = (i + 1) % N
        im = (i - 1) % N
        for j in range(N):
            jp = (j + 1) % N
            jm = (j - 1) % N
            for c in range(3):
                pi = _PI[c]
                pj = _PJ[c]
                d0 = (g[ip, j, c] - g[im, j, c]) * inv2dx
                d1 = (g[i, jp, c] - g[i, jm, c]) * inv2dx
                d[0, pi, pj] = d0
                d[0, pj, pi] = d0
                d[1, pi, pj] = d1
                d[1, pj, pi] = d1
                s00 = (g[ip, j, c] - 2.0 * g[i, j, c] + g[im, j, c]) * invdx2
                s11 = (g[i, jp, c] - 2.0 * g[i, j, c] + g[i, jm, c]) * invdx2
                s01 = (g[ip, jp, c] - g[ip, jm, c] - g[im, jp, c] + g[im, jm, c]) * inv4dx2
                dd[0, 0, pi, pj] = s00
                dd[0, 0, pj, pi] = s00
                dd[1, 1, pi, pj] = s11
                dd[1, 1, pj, pi] = s11
                dd[0, 1, pi, pj] = s01
                dd[0, 1, pj, pi] = s01
                dd[1, 0, pi, pj] = s01
                dd[1, 0, pj, pi] = s01

            a = g[i, j, 0]
            b = g[i, j, 1]
            cc = g[i, j, 2]
            det = a * cc - b * b
            gi00 = cc / det
            gi01 = -b / det
            gi11 = a / det

            gs = 0.0
            hs = 0.0
            for k in range(2):
                for pi in range(2):
                    for pj in range(2):
                        gs += d[k, pi, pj] * d[k, pi, pj]
                        for l in range(2):
                            hs += dd[k, l, pi, pj] * dd[k, l, pi, pj]
            gradsq[i, j] = gs
            hesssq[i, j] = hs

            for k in range(2):
                gk0 = gi00 if k == 0 else gi01
                gk1 = gi01 if k == 0 else gi11
                for pi in range(2):
                    for pj in range(pi, 2):
                        val = 0.5 * (
                            gk0 * (d[pi, pj, 0] + d[pj, pi, 0] - d[0, pi, pj])
                            + gk1 * (d[pi, pj, 1] + d[pj, pi, 1] - d[1, pi, pj])
                        )
                        gamma[i, j, k, pi, pj] = val
                        gamma[i, j, k, pj, pi] = val
    return gamma, gradsq, hesssq


@njit(cache=True, parallel=True, fastmath=False)
def scalar_curvature_2d(g, gamma, dx):
    """Scalar curvature from the metric and its precomputed Christoffels."""
    N = g.shape[0]
    R = np.empty((N, N))
    inv2dx = 0.5 / dx
    for i in prange(N):
        dgam = np.empty((2, 2, 2, 2))
        ric = np.empty((2, 2))
        ip = (i + 1) % N
        im = (i - 1) % N
        for j in range(N):
            jp = (j + 1) % N
            jm = (j - 1) % N
            for k in range(2):
                for pi in range(2):
                    for pj in range(2):
                        dgam[0, k, pi, pj] = (gamma[ip, j, k, pi, pj] - gamma[im, j, k, pi, pj]) * inv2dx
                        dgam[1, k, pi, pj] = (gamma[i, jp, k, pi, pj] - gamma[i, jm, k, pi, pj]) * inv2dx

            tr0 = gamma[i, j, 0, 0, 0] + gamma[i, j, 1, 1, 0]
            tr1 = gamma[i, j, 0, 0, 1] + gamma[i, j, 1, 1, 1]
            for pi in range(2):
                for pj in range(2):
                    v = 0.0
                    for k in range(2):
                        v += dgam[k, k, pi, pj] - dgam[pi, k, k, pj]
                    tr_l0 = gamma[i, j, 0, pi, pj]
                    tr_l1 = gamma[i, j, 1, pi, pj]
                    v += tr0 * tr_l0 + tr1 * tr_l1
                    for k in range(2):
                        for l in range(2):
                            v -= gamma[i, j, k, pi, l] * gamma[i, j, l, k, pj]
                    ric[pi, pj] = v

            a = g[i, j, 0]
            b = g[i, j, 1]
            cc = g[i, j, 2]
            det = a * cc - b * b
            gi00 = cc / det
            gi01 = -b / det
            gi11 = a / det
            R[i, j] = gi00 * ric[0, 0] + gi11 * ric[1, 1] + gi01 * (ric[0, 1] + ric[1, 0])
    return R


@njit(cache=True, parallel=True, fastmath=False)
def max_absdiff_pair(a, b1, b2):
    """Row-wise max |a - b1| and |a - b2| in one sweep; callers pass the
    fields flattened to (rows, rest)."""
    N = a.shape[0]
    out1 = np.zeros(N)
    out2 = np.zeros(N)
    for i in prange(N):
        m1 = 0.0
        m2 = 0.0
        for j in range(a.shape[1]):
            v = a[i, j]
            d1 = abs(v - b1[i, j])
            d2 = abs(v - b2[i, j])
            if d1 > m1:
                m1 = d1
            if d2 > m2:
                m2 = d2
        out1[i] = m1
        out2[i] = m2
    return out1, out2


@njit(cache=True, parallel=True, fastmath=False)
def conj_backward_rhs_2d(phi, m00, m01, m11, rho, R, W0, W1, dx, use_w):
    """d phi / ds for the backward solve, s = T - t:

        (1/rho) [ D-( avg(m00) D+ phi )_0 + D-( avg(m11) D+ phi )_1
                  + Dc_0( m01 Dc_1 phi ) + Dc_1( m01 Dc_0 phi ) ]
        - R phi - W . grad phi,

    with m^{ij} = rho g^{ij}.  Compact staggered diagonal fluxes keep the
    operator self-adjoint against the discrete dmu_g inner product.
    """
    N = phi.shape[0]
    out = np.empty_like(phi)
    invdx2 = 1.0 / (dx * dx)
    inv2dx = 0.5 / dx
    inv4dx2 = 0.25 / (dx * dx)
    for i in prange(N):
        ip = (i + 1) % N
        im = (i - 1) % N
        for j in range(N):
            jp = (j + 1) % N
            jm = (j - 1) % N
            pc = phi[i, j]
            diag0 = (
                0.5 * (m00[i, j] + m00[ip, j]) * (phi[ip, j] - pc)
                - 0.5 * (m00[im, j] + m00[i, j]) * (pc - phi[im, j])
            ) * invdx2
            diag1 = (
                0.5 * (m11[i, j] + m11[i, jp]) * (phi[i, jp] - pc)
                - 0.5 * (m11[i, jm] + m11[i, j]) * (pc - phi[i, jm])
            ) * invdx2
            cross0 = (
                m01[ip, j] * (phi[ip, jp] - phi[ip, jm])
                - m01[im, j] * (phi[im, jp] - phi[im, jm])
            ) * inv4dx2
            cross1 = (
                m01[i, jp] * (phi[ip, jp] - phi[im, jp])
                - m01[i, jm] * (phi[ip, jm] - phi[im, jm])
            ) * inv4dx2
            val = (diag0 + diag1 + cross0 + cross1) / rho[i, j] - R[i, j] * pc
            if use_w:
                val -= W0[i, j] * (phi[ip, j] - phi[im, j]) * inv2dx \
                    + W1[i, j] * (phi[i, jp] - phi[i, jm]) * inv2dx
            out[i, j] = val
    return out


@njit(cache=True, parallel=True, fastmath=False)
def conj_series_2d(phi, rho, R, gi00, gi01, gi11, dx, a):
    """Per-row partial reductions for the monitored series: returns
    (mass, functional, energy, min, max) row arrays; the caller finishes
    the reductions (deterministically, independent of threading)."""
    N = phi.shape[0]
    mass = np.zeros(N)
    func = np.zeros(N)
    energy = np.zeros(N)
    pmin = np.empty(N)
    pmax = np.empty(N)
    inv2dx = 0.5 / dx
    for i in prange(N):
        ip = (i + 1) % N
        im = (i - 1) % N
        s_mass = 0.0
        s_func = 0.0
        s_energy = 0.0
        lo = phi[i, 0]
        hi = phi[i, 0]
        for j in range(N):
            jp = (j + 1) % N
            jm = (j - 1) % N
            pc = phi[i, j]
            r = rho[i, j]
            s_mass += pc * r
            s_func += (R[i, j] - a) * pc * r
            d0 = (phi[ip, j] - phi[im, j]) * inv2dx
            d1 = (phi[i, jp] - phi[i, jm]) * inv2dx
            s_energy += (gi00[i, j] * d0 * d0 + 2.0 * gi01[i, j] * d0 * d1
                         + gi11[i, j] * d1 * d1) * r
            if pc < lo:
                lo = pc
            if pc > hi:
                hi = pc
        mass[i] = s_mass
        func[i] = s_func
        energy[i] = s_energy
        pmin[i] = lo
        pmax[i] = hi
    return mass, func, energy, pmin, pmax


@njit(cache=True, parallel=True, fastmath=False)
def hflow_rhs_2d_flat(g, dx):
    """Background-flow right-hand side, expanded quasilinear form, flat h:

        g^{ab} d_a d_b g_ij
        + 1/2 g^{ab} g^{pq} [ d_i g_pa d_j g_qb + 2 d_a g_jp d_q g_ib
                              - 2 d_a g_jp d_b g_iq - 2 d_j g_pa d_b g_iq
                              - 2 d_i g_pa d_b g_jq ]
    """
    N = g.shape[0]
    out = np.empty_like(g)
    inv2dx = 0.5 / dx
    invdx2 = 1.0 / (dx * dx)
    inv4dx2 = 0.25 / (dx * dx)
    for i in prange(N):
        d = np.empty((2, 2, 2))
        dd = np.empty((2, 2, 2, 2))
        gi = np.empty((2, 2))
        yc = np.empty((2, 2, 2))
        zc = np.empty((2, 2, 2))
        uc = np.empty((2, 2, 2))
        ip = (i + 1) % N
        im = (i - 1) % N
        for j in range(N):
            jp = (j + 1) % N
            jm = (j - 1) % N
            for c in range(3):
                pi = _PI[c]
                pj = _PJ[c]
                d0 = (g[ip, j, c] - g[im, j, c]) * inv2dx
                d1 = (g[i, jp, c] - g[i, jm, c]) * inv2dx
                d[0, pi, pj] = d0
                d[0, pj, pi] = d0
                d[1, pi, pj] = d1
                d[1, pj, pi] = d1
                s00 = (g[ip, j, c] - 2.0 * g[i, j, c] + g[im, j, c]) * invdx2
                s11 = (g[i, jp, c] - 2.0 * g[i, j, c] + g[i, jm, c]) * invdx2
                s01 = (g[ip, jp, c] - g[ip, jm, c] - g[im, jp, c] + g[im, jm, c]) * inv4dx2
                dd[0, 0, pi, pj] = s00
                dd[0, 0, pj, pi] = s00
                dd[1, 1, pi, pj] = s11
                dd[1, 1, pj, pi] = s11
                dd[0, 1, pi, pj] = s01
                dd[0, 1, pj, pi] = s01
                dd[1, 0, pi, pj] = s01
                dd[1, 0, pj, pi] = s01

            a = g[i, j, 0]
            b = g[i, j, 1]
            cc = g[i, j, 2]
            det = a * cc - b * b
            gi[0, 0] = cc / det
            gi[0, 1] = -b / det
            gi[1, 0] = -b / det
            gi[1, 1] = a / det

            # shared inner contractions, once per point:
            #   Y[r,p,al] = sum_{q,be} gi[al,be] gi[p,q] d[r,q,be]
            #   Z[r,p,al] = sum_{q,be} gi[al,be] gi[p,q] d[be,r,q]
            #   U[r,p,al] = sum_{q,be} gi[al,be] gi[p,q] d[q,r,be]
            for r in range(2):
                for p in range(2):
                    for al in range(2):
                        sy = 0.0
                        sz = 0.0
                        su = 0.0
                        for q in range(2):
                            gpq = gi[p, q]
                            for be in range(2):
                                w = gi[al, be] * gpq
                                sy += w * d[r, q, be]
                                sz += w * d[be, r, q]
                                su += w * d[q, r, be]
                        yc[r, p, al] = sy
                        zc[r, p, al] = sz
                        uc[r, p, al] = su

            for c in range(3):
                pi = _PI[c]
                pj = _PJ[c]
                acc = 0.0
                for al in range(2):
                    for be in range(2):
                        acc += gi[al, be] * dd[al, be, pi, pj]
                quad = 0.0
                for p in range(2):
                    for al in range(2):
                        quad += (
                            d[pi, p, al] * (yc[pj, p, al] - 2.0 * zc[pj, p, al])
                            - 2.0 * d[pj, p, al] * zc[pi, p, al]
                            + 2.0 * d[al, pj, p] * (uc[pi, p, al] - zc[pi, p, al])
                        )
                out[i, j, c] = acc + 0.5 * quad
    return out
