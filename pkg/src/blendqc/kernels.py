"""Numba-compiled inner loops for bond sums and Cauchy-Born quadrature.

Everything here is serial and accumulates in a fixed order, so results are
deterministic across runs.  The kernels mirror the radial formulas in
``potentials``; tests cross-check them against the numpy reference path.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _taper(d, r_taper, cutoff):
    if d <= r_taper:
        return 1.0, 0.0
    if d >= cutoff:
        return 0.0, 0.0
    w = cutoff - r_taper
    t = (d - r_taper) / w
    val = 1.0 - t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
    der = -30.0 * t * t * (1.0 - t) * (1.0 - t) / w
    return val, der


@njit(cache=True)
def bond_energy_gradient(x, src, dst, w, alpha, r_nn, beta_e, r_taper, cutoff,
                         has_embed, want_grad, rho, sg):
    """Weighted site-energy sum over directed bonds, with optional site-level
    gradient accumulation into ``sg``.

    x: (N, 3) deformed positions; src/dst: directed bond endpoints; w: (N,)
    per-site weights.  rho (N,) and sg (N, 3) must arrive zeroed.  Returns
    the energy, or NaN if two bonded sites (nearly) coincide.
    """
    nb = src.size
    n = w.size
    # Kahan-compensated sum: the energy feeds finite-difference checks, so
    # its roundoff must stay near machine precision even for 1e7 bonds
    energy = 0.0
    comp = 0.0
    for b in range(nb):
        i = src[b]
        j = dst[b]
        dx = x[j, 0] - x[i, 0]
        dy = x[j, 1] - x[i, 1]
        dz = x[j, 2] - x[i, 2]
        d = np.sqrt(dx * dx + dy * dy + dz * dz)
        if d < 1e-10:
            return np.nan
        if d >= cutoff:
            continue
        tap, _ = _taper(d, r_taper, cutoff)
        e1 = np.exp(-alpha * (d - r_nn))
        term = w[i] * 0.5 * (e1 * e1 - 2.0 * e1) * tap
        yk = term - comp
        tk = energy + yk
        comp = (tk - energy) - yk
        energy = tk
        if has_embed:
            rho[i] += np.exp(-2.0 * beta_e * (d - r_nn)) * tap
    if has_embed:
        for i in range(n):
            if rho[i] > 0.0:
                term = -w[i] * np.sqrt(rho[i])
                yk = term - comp
                tk = energy + yk
                comp = (tk - energy) - yk
                energy = tk
    if want_grad:
        for b in range(nb):
            i = src[b]
            j = dst[b]
            dx = x[j, 0] - x[i, 0]
            dy = x[j, 1] - x[i, 1]
            dz = x[j, 2] - x[i, 2]
            d = np.sqrt(dx * dx + dy * dy + dz * dz)
            if d >= cutoff:
                continue
            tap, dtap = _taper(d, r_taper, cutoff)
            e1 = np.exp(-alpha * (d - r_nn))
            phi = e1 * e1 - 2.0 * e1
            dphi = -2.0 * alpha * (e1 * e1 - e1)
            coeff = 0.5 * (dphi * tap + phi * dtap)
            if has_embed and rho[i] > 0.0:
                psi = np.exp(-2.0 * beta_e * (d - r_nn))
                dpsi = -2.0 * beta_e * psi
                fp = -0.5 / np.sqrt(rho[i])
                coeff += fp * (dpsi * tap + psi * dtap)
            coeff *= w[i] / d
            sg[j, 0] += coeff * dx
            sg[j, 1] += coeff * dy
            sg[j, 2] += coeff * dz
            sg[i, 0] -= coeff * dx
            sg[i, 1] -= coeff * dy
            sg[i, 2] -= coeff * dz
    return energy


@njit(cache=True)
def cb_batch(F, shell, cell_volume, alpha, r_nn, beta_e, r_taper, cutoff,
             has_embed, want_stress, W, S):
    """Cauchy-Born density W(F) and stress dW/dF for a batch of gradients.

    F: (T, 3, 3); shell: (n, 3) reference difference vectors.  Fills W (T,)
    and, when requested, S (T, 3, 3).  Returns the minimum det(F) so the
    caller can reject inverted elements.
    """
    nt = F.shape[0]
    n = shell.shape[0]
    y = np.empty((n, 3))
    dist = np.empty(n)
    min_det = 1e300
    for t in range(nt):
        f = F[t]
        det = (f[0, 0] * (f[1, 1] * f[2, 2] - f[1, 2] * f[2, 1])
               - f[0, 1] * (f[1, 0] * f[2, 2] - f[1, 2] * f[2, 0])
               + f[0, 2] * (f[1, 0] * f[2, 1] - f[1, 1] * f[2, 0]))
        if det < min_det:
            min_det = det
        pair = 0.0
        rho = 0.0
        for k in range(n):
            y0 = f[0, 0] * shell[k, 0] + f[0, 1] * shell[k, 1] + f[0, 2] * shell[k, 2]
            y1 = f[1, 0] * shell[k, 0] + f[1, 1] * shell[k, 1] + f[1, 2] * shell[k, 2]
            y2 = f[2, 0] * shell[k, 0] + f[2, 1] * shell[k, 1] + f[2, 2] * shell[k, 2]
            d = np.sqrt(y0 * y0 + y1 * y1 + y2 * y2)
            y[k, 0] = y0
            y[k, 1] = y1
            y[k, 2] = y2
            dist[k] = d
            if d >= cutoff:
                continue
            tap, _ = _taper(d, r_taper, cutoff)
            e1 = np.exp(-alpha * (d - r_nn))
            pair += 0.5 * (e1 * e1 - 2.0 * e1) * tap
            if has_embed:
                rho += np.exp(-2.0 * beta_e * (d - r_nn)) * tap
        wt = pair
        if has_embed and rho > 0.0:
            wt -= np.sqrt(rho)
        W[t] = wt / cell_volume
        if want_stress:
            fp = 0.0
            if has_embed and rho > 0.0:
                fp = -0.5 / np.sqrt(rho)
            for a in range(3):
                for bb in range(3):
                    S[t, a, bb] = 0.0
            for k in range(n):
                d = dist[k]
                if d >= cutoff:
                    continue
                tap, dtap = _taper(d, r_taper, cutoff)
                e1 = np.exp(-alpha * (d - r_nn))
                phi = e1 * e1 - 2.0 * e1
                dphi = -2.0 * alpha * (e1 * e1 - e1)
                coeff = 0.5 * (dphi * tap + phi * dtap)
                if has_embed:
                    psi = np.exp(-2.0 * beta_e * (d - r_nn))
                    dpsi = -2.0 * beta_e * psi
                    coeff += fp * (dpsi * tap + psi * dtap)
                coeff /= d * cell_volume
                for a in range(3):
                    ya = coeff * y[k, a]
                    S[t, a, 0] += ya * shell[k, 0]
                    S[t, a, 1] += ya * shell[k, 1]
                    S[t, a, 2] += ya * shell[k, 2]
    return min_det


@njit(cache=True)
def scatter_tet_forces(tets, shape_grads, weights, S, out):
    """Accumulate per-tet stress contributions onto nodal forces.

    out[v, a] += weight_t * sum_b S[t, a, b] * shape_grads[t, v, b] for each
    vertex v of tet t.
    """
    nt = tets.shape[0]
    for t in range(nt):
        q = weights[t]
        for v in range(4):
            node = tets[t, v]
            for a in range(3):
                acc = 0.0
                for bb in range(3):
                    acc += S[t, a, bb] * shape_grads[t, v, bb]
                out[node, a] += q * acc
