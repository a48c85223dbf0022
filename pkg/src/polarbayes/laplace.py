"""Post-hoc refinement of the last-layer covariance from exact curvature.

With the extractor and the head means frozen, the Hessian of the negative
log-joint (multinomial logistic likelihood plus Gaussian prior) at the means
is available in closed form. Its inverse gives refined per-class covariances;
the means themselves are never touched, so mean-logit predictions are
bitwise unchanged by refinement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionTooLarge
from .numerics import as_matrix, cholesky
from .vbll import VbllHead, _softmax_rows

DEFAULT_DIM_CAP = 4096


@dataclass
class LaplacePosterior:
    means: np.ndarray  # (C, d), bit-identical copy of the source head's means
    sigmas: np.ndarray  # (C, d, d) SPD
    _factors: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.means.shape[1]

    def factors(self) -> np.ndarray:
        """Cholesky factors of the covariances, computed once and cached."""
        if self._factors is None:
            self._factors = np.ascontiguousarray(
                np.stack([cholesky(s) for s in self.sigmas])
            )
        return self._factors


def full_hessian(head_means, features_all, prior_var: float, dim_cap: int = DEFAULT_DIM_CAP) -> np.ndarray:
    """Exact (C*d) x (C*d) Hessian of the negative log-joint at the means.

    Block (c, c') is sum_n (p[n,c] delta_cc' - p[n,c] p[n,c']) phi_n phi_n^T,
    plus (1/prior_var) I on the diagonal; p is the softmax of the mean logits.
    The prior term makes the result SPD. Labels never appear: the curvature of
    the multinomial log-likelihood is label-free.
    """
    means = as_matrix(head_means)
    c, d = means.shape
    if c * d > dim_cap:
        raise DimensionTooLarge(f"C*d = {c * d} exceeds the cap {dim_cap}")
    h = np.zeros((c * d, c * d))
    if features_all is not None and np.size(features_all) > 0:
        phi = as_matrix(features_all)
        p = _softmax_rows(phi @ means.T)
        same = np.einsum("nc,ni,nj->cij", p, phi, phi)
        cross = np.einsum("nc,nk,ni,nj->ckij", p, p, phi, phi)
        for ci in range(c):
            for cj in range(c):
                block = -cross[ci, cj]
                if ci == cj:
                    block = block + same[ci]
                h[ci * d : (ci + 1) * d, cj * d : (cj + 1) * d] = block
    h[np.diag_indices_from(h)] += 1.0 / prior_var
    return h


def _spd_inverse(a: np.ndarray) -> np.ndarray:
    lower = cholesky(a, check=False)
    inv_l = solve_triangular(lower, np.eye(a.shape[0]), lower=True)
    return inv_l.T @ inv_l


def refine(head: VbllHead, features_all, mode: str = "exact-full", dim_cap: int = DEFAULT_DIM_CAP) -> LaplacePosterior:
    """Refined covariances at the frozen head means.

    exact-full inverts the complete Hessian and keeps the per-class diagonal
    blocks of the inverse. block-diagonal skips the cross-class curvature and
    inverts H_c = (1/prior_var) I + sum_n p[n,c](1 - p[n,c]) phi_n phi_n^T per
    class, which scales to larger C*d.
    """
    c, d = head.means.shape
    sigmas = np.empty((c, d, d))
    if mode == "exact-full":
        h = full_hessian(head.means, features_all, head.prior_var, dim_cap=dim_cap)
        sigma_full = _spd_inverse(h)
        for ci in range(c):
            sigmas[ci] = sigma_full[ci * d : (ci + 1) * d, ci * d : (ci + 1) * d]
    elif mode == "block-diagonal":
        prior = np.eye(d) / head.prior_var
        if features_all is not None and np.size(features_all) > 0:
            phi = as_matrix(features_all)
            p = _softmax_rows(phi @ head.means.T)
            w = p * (1.0 - p)
            blocks = np.einsum("nc,ni,nj->cij", w, phi, phi)
        else:
            blocks = np.zeros((c, d, d))
        for ci in range(c):
            sigmas[ci] = _spd_inverse(prior + blocks[ci])
    else:
        raise ValueError(f"unknown refinement mode {mode!r}")
    return LaplacePosterior(means=head.means.copy(), sigmas=sigmas)
