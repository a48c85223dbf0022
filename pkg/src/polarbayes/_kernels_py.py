"""Pure-numpy implementations of the hot per-step kernels.

Signature-compatible with the compiled extension in ``_kernels.pyx``; the
active implementation is chosen by :mod:`polarbayes.backend`. All inputs are
C-contiguous float64 arrays.
"""

from __future__ import annotations

import numpy as np


def eta_matrix(means: np.ndarray, chols: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Per-class expected-exponential logits: mu_c.phi + 0.5*||L_c^T phi||^2."""
    lin = phi @ means.T
    half = np.einsum("nj,cji->nci", phi, chols)
    quad = 0.5 * np.einsum("nci,nci->nc", half, half)
    return lin + quad


def weighted_outer_accum(phi: np.ndarray, w: np.ndarray) -> np.ndarray:
    """out[c] = sum_n w[n, c] * phi_n phi_n^T, shape (C, d, d)."""
    return np.einsum("nc,ni,nj->cij", w, phi, phi)


def weighted_scov_vec(chols: np.ndarray, phi: np.ndarray, w: np.ndarray) -> np.ndarray:
    """out[n] = sum_c w[n, c] * L_c L_c^T phi_n, shape (B, d)."""
    half = np.einsum("nj,cji->nci", phi, chols)
    full = np.einsum("nci,cji->ncj", half, chols)
    return np.einsum("nc,ncj->nj", w, full)


def landing_direction(x: np.ndarray, g: np.ndarray, lam: float) -> np.ndarray:
    """Skew(g x^T) x + lam * 4 x (x^T x - I)."""
    outer = g @ x.T
    psi = 0.5 * (outer - outer.T)
    gram = x.T @ x
    gram[np.diag_indices_from(gram)] -= 1.0
    return psi @ x + (4.0 * lam) * (x @ gram)


def mc_predict_probs(
    means: np.ndarray, factors: np.ndarray, phi: np.ndarray, xi: np.ndarray
) -> np.ndarray:
    """Average softmax over sampled weight matrices theta_c = mu_c + L_c xi.

    xi has shape (K, C, d): one weight draw per sample index, shared across
    the whole batch.
    """
    theta = means[None, :, :] + np.einsum("cij,kcj->kci", factors, xi)
    logits = np.einsum("kci,ni->knc", theta, phi)
    logits -= logits.max(axis=2, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=2, keepdims=True)
    return logits.mean(axis=0)
