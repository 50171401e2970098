"""Batch trajectory kernels.

A block of trajectories is propagated as state vectors. Each step rotates
the vector into the eigenbasis of the next observable, picks an eigen-branch
from the Born weights, adds Gaussian noise to the eigenvalue, and applies the
diagonal Kraus factor exp(-(A - a_j)^2 / 4a^2). A zero precision marks a
projective (Lueders) step.

Two implementations share one signature:

``chain_numba``
    per-trajectory loop compiled with numba (``nogil`` so blocks can run on
    threads).
``chain_numpy``
    the same arithmetic vectorised over the block.

``chain`` points at the numba version unless numba is missing or the
environment variable ``SEQWEAK_DISABLE_NUMBA`` is set to a true value.
"""

from __future__ import annotations

import math
import os

import numpy as np

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
DEGENERACY_GAP = 1e-9


def _env_disabled() -> bool:
    return os.environ.get("SEQWEAK_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _env_disabled()


def chain_numpy(branch_vecs, branch_cum, transitions, eigvals, precisions, effect,
                u_mix, u_branch, z):
    """Vectorised reference kernel.

    Parameters
    ----------
    branch_vecs : (K, d) complex
        Pure components of the initial state, already in the first eigenbasis.
    branch_cum : (K,) float
        Cumulative mixture weights (last entry 1).
    transitions : (n, d, d) complex
        ``transitions[k]`` maps eigenbasis k-1 to eigenbasis k; entry 0 unused.
    eigvals : (n, d) float
    precisions : (n,) float
        Gaussian widths; 0 means a projective step.
    effect : (d, d) complex
        Post-selection effect in the last eigenbasis.
    u_mix, u_branch, z : arrays of shape (B,), (B, n), (B, n)
        Pre-drawn uniforms and standard normals.

    Returns
    -------
    outcomes : (B, n) float
    log_weight : (B,) float
    accept_prob : (B,) float
    """
    B, n = u_branch.shape
    k = np.searchsorted(branch_cum, u_mix, side="right")
    k = np.minimum(k, len(branch_cum) - 1)
    psi = branch_vecs[k].copy()
    outcomes = np.empty((B, n))
    logw = np.zeros(B)
    for s in range(n):
        if s > 0:
            psi = psi @ transitions[s].T
        lam = eigvals[s]
        prob = psi.real ** 2 + psi.imag ** 2
        cum = np.cumsum(prob, axis=1)
        target = u_branch[:, s] * cum[:, -1]
        idx = (target[:, None] >= cum).sum(axis=1)
        idx = np.minimum(idx, lam.size - 1)
        a = precisions[s]
        if a > 0.0:
            out = lam[idx] + a * z[:, s]
            expo = -((out[:, None] - lam[None, :]) ** 2) / (4.0 * a * a)
            top = expo.max(axis=1)
            psi = psi * np.exp(expo - top[:, None])
            t = (psi.real ** 2 + psi.imag ** 2).sum(axis=1)
            psi = psi / np.sqrt(t)[:, None]
            logw += np.log(t) + 2.0 * top - LOG_SQRT_2PI - math.log(a)
        else:
            out = lam[idx]
            keep = np.abs(lam[None, :] - out[:, None]) <= DEGENERACY_GAP
            psi = np.where(keep, psi, 0.0)
            t = (psi.real ** 2 + psi.imag ** 2).sum(axis=1)
            psi = psi / np.sqrt(t)[:, None]
            logw += np.log(t)
        outcomes[:, s] = out
    ep = np.einsum("bi,ij,bj->b", psi.conj(), effect, psi).real
    return outcomes, logw, np.clip(ep, 0.0, 1.0)


def _chain_numba_impl(branch_vecs, branch_cum, transitions, eigvals, precisions, effect,
                      u_mix, u_branch, z):
    B, n = u_branch.shape
    d = eigvals.shape[1]
    nk = branch_cum.shape[0]
    outcomes = np.empty((B, n))
    logw = np.zeros(B)
    accept = np.empty(B)
    psi = np.empty(d, dtype=np.complex128)
    tmp = np.empty(d, dtype=np.complex128)
    expo = np.empty(d)
    for b in range(B):
        k = 0
        while k < nk - 1 and u_mix[b] >= branch_cum[k]:
            k += 1
        for j in range(d):
            psi[j] = branch_vecs[k, j]
        lw = 0.0
        for s in range(n):
            if s > 0:
                m = transitions[s]
                for i in range(d):
                    acc = 0.0 + 0.0j
                    for j in range(d):
                        acc += m[i, j] * psi[j]
                    tmp[i] = acc
                for i in range(d):
                    psi[i] = tmp[i]
            total = 0.0
            for j in range(d):
                total += psi[j].real ** 2 + psi[j].imag ** 2
            target = u_branch[b, s] * total
            cum = 0.0
            idx = d - 1
            for j in range(d):
                cum += psi[j].real ** 2 + psi[j].imag ** 2
                if target < cum:
                    idx = j
                    break
            a = precisions[s]
            t = 0.0
            if a > 0.0:
                out = eigvals[s, idx] + a * z[b, s]
                top = -np.inf
                for j in range(d):
                    diff = out - eigvals[s, j]
                    expo[j] = -(diff * diff) / (4.0 * a * a)
                    if expo[j] > top:
                        top = expo[j]
                for j in range(d):
                    psi[j] = psi[j] * math.exp(expo[j] - top)
                    t += psi[j].real ** 2 + psi[j].imag ** 2
                lw += math.log(t) + 2.0 * top - LOG_SQRT_2PI - math.log(a)
            else:
                out = eigvals[s, idx]
                for j in range(d):
                    if abs(eigvals[s, j] - out) > DEGENERACY_GAP:
                        psi[j] = 0.0
                    t += psi[j].real ** 2 + psi[j].imag ** 2
                lw += math.log(t)
            norm = math.sqrt(t)
            for j in range(d):
                psi[j] = psi[j] / norm
            outcomes[b, s] = out
        ep = 0.0
        for i in range(d):
            row = 0.0 + 0.0j
            for j in range(d):
                row += effect[i, j] * psi[j]
            ep += (psi[i].conjugate() * row).real
        accept[b] = min(max(ep, 0.0), 1.0)
        logw[b] = lw
    return outcomes, logw, accept


if HAVE_NUMBA:
    chain_numba = numba.njit(cache=True, nogil=True)(_chain_numba_impl)
else:  # pragma: no cover
    chain_numba = None


def chain(*args):
    """Dispatch to the selected implementation."""
    if USE_NUMBA:
        return chain_numba(*args)
    return chain_numpy(*args)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
