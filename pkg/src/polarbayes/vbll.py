"""Variational Bayesian last layer for multiclass classification.

Each class weight vector carries an independent Gaussian posterior
N(mu_c, S_c) against an isotropic N(0, prior_var I) prior. Training minimizes
the negative Jensen-tightened ELBO: the intractable expected log-sum-exp is
replaced by the log of summed expectations, which is available in closed form
from the Gaussian moment generating function,

    eta[n, c] = mu_c . phi_n + 0.5 * phi_n^T S_c phi_n,

so the per-batch surrogate loss is

    -(1/B) sum_n [ sum_c y[n,c] mu_c.phi_n - logsumexp_c eta[n,c] ]
        + kl_weight * KL(q || prior).

Covariances are parameterized by lower-triangular Cholesky factors with
positive diagonals, so they stay SPD by construction and the PSD projection a
naive covariance step would need is never taken. All gradients here are of the
surrogate loss (minimization convention) and are validated against finite
differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import backend
from .errors import ShapeMismatch
from .numerics import Rng, as_matrix

CHOL_DIAG_FLOOR = 1e-8


@dataclass
class VbllHead:
    means: np.ndarray  # (C, d)
    chols: np.ndarray  # (C, d, d) lower triangular, positive diagonals
    prior_var: float
    kl_weight: float

    @classmethod
    def init(cls, num_classes: int, feature_dim: int, prior_var: float, kl_weight: float) -> "VbllHead":
        """Zero means, covariance equal to the prior."""
        if num_classes < 2:
            raise ShapeMismatch("need at least two classes")
        means = np.zeros((num_classes, feature_dim))
        chols = np.tile(np.sqrt(prior_var) * np.eye(feature_dim), (num_classes, 1, 1))
        return cls(means=means, chols=np.ascontiguousarray(chols), prior_var=prior_var, kl_weight=kl_weight)

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.means.shape[1]

    def covariances(self) -> np.ndarray:
        return np.einsum("cik,cjk->cij", self.chols, self.chols)


@dataclass
class JensenLogits:
    eta: np.ndarray  # (B, C)
    ptilde: np.ndarray  # (B, C), row-stochastic


@dataclass
class VbllGrads:
    d_mu: np.ndarray  # (C, d)
    d_chol: np.ndarray  # (C, d, d), lower triangular
    d_features: np.ndarray  # (B, d)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _logsumexp_rows(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1)
    return m + np.log(np.exp(z - m[:, None]).sum(axis=1))


def jensen_logits(head: VbllHead, features) -> JensenLogits:
    """eta and its row softmax; the quadratic term never forms S explicitly."""
    features = as_matrix(features)
    eta = backend.eta_matrix(head.means, head.chols, features)
    return JensenLogits(eta=eta, ptilde=_softmax_rows(eta))


def kl_to_prior(head: VbllHead) -> float:
    """Closed-form KL from the factorized posterior to the isotropic prior.

    Nonnegative, and exactly zero when every mean is zero and every covariance
    equals prior_var * I.
    """
    c, d = head.means.shape
    diags = np.diagonal(head.chols, axis1=1, axis2=2)
    trace_s = float(np.sum(head.chols * head.chols))
    sq_means = float(np.sum(head.means * head.means))
    logdets = 2.0 * float(np.sum(np.log(diags)))
    return (
        (trace_s + sq_means) / (2.0 * head.prior_var)
        - 0.5 * logdets
        + 0.5 * d * c * np.log(head.prior_var)
        - 0.5 * d * c
    )


def surrogate_loss(head: VbllHead, features, labels_onehot) -> float:
    """Negative Jensen-tightened ELBO, averaged per example, plus weighted KL."""
    features = as_matrix(features)
    labels_onehot = as_matrix(labels_onehot)
    jl = jensen_logits(head, features)
    mean_logits = features @ head.means.T
    fit = np.sum(labels_onehot * mean_logits, axis=1) - _logsumexp_rows(jl.eta)
    return -float(np.mean(fit)) + head.kl_weight * kl_to_prior(head)


def grads(head: VbllHead, features, labels_onehot) -> VbllGrads:
    """Analytic gradients of the surrogate loss wrt means, Cholesky factors,
    and the input features.

    The covariance gradient is taken wrt S and pushed through S = L L^T as
    (dS + dS^T) L masked to the lower triangle.
    """
    features = as_matrix(features)
    labels_onehot = as_matrix(labels_onehot)
    b = features.shape[0]
    jl = jensen_logits(head, features)
    resid = labels_onehot - jl.ptilde

    d_mu = -(resid.T @ features) / b + (head.kl_weight / head.prior_var) * head.means

    lik_outer = backend.weighted_outer_accum(features, jl.ptilde)  # (C, d, d)
    d = head.feature_dim
    eye = np.eye(d)
    d_chol = np.empty_like(head.chols)
    for c in range(head.num_classes):
        l_c = head.chols[c]
        inv_l = solve_triangular(l_c, eye, lower=True)
        s_inv = inv_l.T @ inv_l
        d_s = 0.5 * lik_outer[c] / b + head.kl_weight * (
            eye / (2.0 * head.prior_var) - 0.5 * s_inv
        )
        d_chol[c] = np.tril((d_s + d_s.T) @ l_c)

    scov = backend.weighted_scov_vec(head.chols, features, jl.ptilde)
    d_features = -(resid @ head.means - scov) / b
    return VbllGrads(d_mu=d_mu, d_chol=d_chol, d_features=d_features)


def mc_loss_draws(head: VbllHead, features, labels_onehot, rng: Rng, num_samples: int) -> np.ndarray:
    """Per-draw negative batch log-likelihood terms (KL excluded).

    Each draw samples a full weight matrix theta_c = mu_c + L_c xi and scores
    the batch; the mean of the returned vector plus weighted KL is the
    unbiased Monte Carlo counterpart of the surrogate loss.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    features = as_matrix(features)
    labels_onehot = as_matrix(labels_onehot)
    draws = np.empty(num_samples)
    for j in range(num_samples):
        xi = rng.standard_normal(head.num_classes, head.feature_dim)
        theta = head.means + np.einsum("cij,cj->ci", head.chols, xi)
        z = features @ theta.T
        fit = np.sum(labels_onehot * z, axis=1) - _logsumexp_rows(z)
        draws[j] = -float(np.mean(fit))
    return draws


def mc_loss_estimate(head: VbllHead, features, labels_onehot, rng: Rng, num_samples: int) -> float:
    """Monte Carlo estimate of the exact (un-tightened) training loss."""
    draws = mc_loss_draws(head, features, labels_onehot, rng, num_samples)
    return float(np.mean(draws)) + head.kl_weight * kl_to_prior(head)


def floor_chol_diagonals(chols: np.ndarray) -> None:
    """Clamp factor diagonals to the positivity floor, in place."""
    for c in range(chols.shape[0]):
        diag = np.diagonal(chols[c]).copy()
        np.fill_diagonal(chols[c], np.maximum(diag, CHOL_DIAG_FLOOR))
