"""Hot numeric kernels.

Each kernel exists twice: an explicit-loop version compiled with numba
(``*_loop``) and a vectorised numpy version (``*_np``).  The public name
points at the loop version when numba is available and at the numpy
version when ``DAPPLAN_DISABLE_NUMBA`` is set.
"""
from __future__ import annotations

import numpy as np

from ._jit import NUMBA_ENABLED, jit

# --- Poisson-binomial pmf via the DFT closed form ----------------------------


@jit
def pb_pmf_dft_loop(p):
    """Returns (pmf over 0..n, largest |imag| discarded)."""
    n = p.shape[0]
    m = n + 1
    pmf = np.zeros(m)
    chi = np.empty(m, dtype=np.complex128)
    for kappa in range(m):
        w = np.exp(2j * np.pi * kappa / m)
        acc = 1.0 + 0.0j
        for k in range(n):
            acc *= p[k] * w + (1.0 - p[k])
        chi[kappa] = acc
    resid = 0.0
    for i in range(m):
        s = 0.0 + 0.0j
        for kappa in range(m):
            s += np.exp(-2j * np.pi * kappa * i / m) * chi[kappa]
        s /= m
        if abs(s.imag) > resid:
            resid = abs(s.imag)
        pmf[i] = s.real
    return pmf, resid


def pb_pmf_dft_np(p):
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    m = n + 1
    kappa = np.arange(m)
    w = np.exp(2j * np.pi * kappa / m)
    chi = np.prod(p[None, :] * w[:, None] + (1.0 - p)[None, :], axis=1) if n else np.ones(1, dtype=complex)
    basis = np.exp(-2j * np.pi * np.outer(np.arange(m), kappa) / m)
    vals = basis @ chi / m
    return vals.real.copy(), float(np.max(np.abs(vals.imag)))


# --- slotted CSMA/CA sensing recursion -----------------------------------------


@jit
def csma_phi_loop(beta1, beta2, windows, kmax):
    """phi[m, k]: probability of a sensing attempt at slot k in stage m (k >= 1)."""
    n_stage = windows.shape[0]
    phi = np.zeros((n_stage, kmax + 1))
    w0 = windows[0]
    for k in range(1, min(w0, kmax) + 1):
        phi[0, k] = 1.0 / w0
    for m in range(1, n_stage):
        wm = windows[m]
        a = beta1 / wm
        b = (1.0 - beta1) * beta2 / wm
        for j in range(1, kmax + 1):
            f = phi[m - 1, j]
            if f == 0.0:
                continue
            # busy on first CCA at j: back off 1..W_m slots
            for k in range(j + 1, min(j + wm, kmax) + 1):
                phi[m, k] += f * a
            # busy on second CCA at j+1
            for k in range(j + 2, min(j + 1 + wm, kmax) + 1):
                phi[m, k] += f * b
    return phi


@jit
def csma_theta_loop(alpha, chi, beta1, beta2, windows, n_arq, kmax):
    """theta[k] (k = 1..kmax): probability of sensing an idle channel at slot k."""
    n_stage = windows.shape[0]
    phi = csma_phi_loop(beta1, beta2, windows, kmax)
    big_m = n_stage - 1
    zeta = np.zeros((n_stage, kmax + 1))
    theta = np.zeros(kmax + 1)
    support = np.zeros(n_stage, dtype=np.int64)
    for m in range(n_stage):
        for k in range(kmax + 1):
            zeta[m, k] = phi[m, k]
            if phi[m, k] != 0.0:
                support[m] = k
    for i in range(1, n_arq + 1):
        for m in range(n_stage):
            for k in range(1, kmax + 1):
                theta[k] += zeta[m, k] * alpha
        if i == n_arq:
            break
        # failed attempt leaves slot d; the next attempt senses from d + 2 on
        g = np.zeros(kmax + 1)
        for d in range(1, kmax + 1):
            acc = 0.0
            for m in range(n_stage):
                delta = alpha * chi
                if m == big_m:
                    delta += 1.0 - alpha
                acc += zeta[m, d] * delta
            g[d] = acc
        nz = np.zeros((n_stage, kmax + 1))
        for d in range(1, kmax + 1):
            if g[d] == 0.0:
                continue
            for m in range(n_stage):
                for k in range(d + 3, min(kmax, d + 2 + support[m]) + 1):
                    nz[m, k] += g[d] * phi[m, k - d - 2]
        zeta = nz
    return theta


def csma_phi_np(beta1, beta2, windows, kmax):
    windows = np.asarray(windows)
    phi = np.zeros((len(windows), kmax + 1))
    w0 = int(windows[0])
    phi[0, 1:min(w0, kmax) + 1] = 1.0 / w0
    for m in range(1, len(windows)):
        wm = int(windows[m])
        kern = np.zeros(wm + 2)
        kern[1:wm + 1] += beta1 / wm
        kern[2:wm + 2] += (1.0 - beta1) * beta2 / wm
        phi[m] = np.convolve(phi[m - 1], kern)[: kmax + 1]
    return phi


def csma_theta_np(alpha, chi, beta1, beta2, windows, n_arq, kmax):
    phi = csma_phi_np(beta1, beta2, windows, kmax)
    n_stage = phi.shape[0]
    delta = np.full(n_stage, alpha * chi)
    delta[-1] += 1.0 - alpha
    zeta = phi.copy()
    theta = np.zeros(kmax + 1)
    for i in range(1, n_arq + 1):
        theta += alpha * zeta.sum(axis=0)
        if i == n_arq:
            break
        g = delta @ zeta
        shifted = np.zeros(kmax + 1)
        shifted[2:] = g[:-2]  # next attempt starts two slots after the failed sensing
        zeta = np.stack([np.convolve(shifted, phi[m])[: kmax + 1] for m in range(n_stage)])
    theta[0] = 0.0
    return theta


# --- TDMA attempts with ARQ ----------------------------------------------------


@jit
def tdma_cdf_loop(ell_pmf, eps, n_arq, kmax):
    """G[K] = sum_i Pr(sum of i attempt delays <= K) eps^(i-1) (1 - eps), K = 0..kmax.

    ``ell_pmf[u]`` is Pr(one attempt takes u slots), u >= 1.
    """
    n_ell = ell_pmf.shape[0]
    cur = np.zeros(kmax + 1)
    for u in range(1, min(n_ell - 1, kmax) + 1):
        cur[u] = ell_pmf[u]
    out = np.zeros(kmax + 1)
    w = 1.0 - eps
    for i in range(1, n_arq + 1):
        c = 0.0
        for k in range(kmax + 1):
            c += cur[k]
            out[k] += c * w
        if i == n_arq:
            break
        nxt = np.zeros(kmax + 1)
        for d in range(kmax + 1):
            if cur[d] == 0.0:
                continue
            for u in range(1, min(n_ell - 1, kmax - d) + 1):
                nxt[d + u] += cur[d] * ell_pmf[u]
        cur = nxt
        w *= eps
    return out


def tdma_cdf_np(ell_pmf, eps, n_arq, kmax):
    ell = np.zeros(kmax + 1)
    n = min(len(ell_pmf) - 1, kmax)
    ell[1:n + 1] = ell_pmf[1:n + 1]
    cur = ell.copy()
    out = np.zeros(kmax + 1)
    w = 1.0 - eps
    for i in range(1, n_arq + 1):
        out += np.cumsum(cur) * w
        if i == n_arq:
            break
        cur = np.convolve(cur, ell)[: kmax + 1]
        w *= eps
    return out


if NUMBA_ENABLED:
    pb_pmf_dft = pb_pmf_dft_loop
    csma_phi = csma_phi_loop
    csma_theta = csma_theta_loop
    tdma_cdf = tdma_cdf_loop
else:
    pb_pmf_dft = pb_pmf_dft_np
    csma_phi = csma_phi_np
    csma_theta = csma_theta_np
    tdma_cdf = tdma_cdf_np
