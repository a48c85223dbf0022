"""Retraction-free optimization on the Stiefel manifold.

A factor is driven toward orthonormal columns by descending a landing field:
the product of the skew Riemannian gradient component with the factor, plus a
scaled gradient of the infeasibility penalty N(X) = ||X^T X - I||_F^2. No
retraction is ever applied; feasibility is only asymptotic, so steps that push
N(X) past a fixed safety cap fail loudly instead of silently diverging.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import NotSquare, SafetyRegionViolation, ShapeMismatch
from .numerics import as_matrix

SAFETY_CAP = 0.5


def infeasibility_value(mat: np.ndarray) -> float:
    gram = mat.T @ mat
    gram[np.diag_indices_from(gram)] -= 1.0
    return float(np.sum(gram * gram))


@dataclass
class StiefelFactor:
    """Tall matrix with (asymptotically) orthonormal columns.

    ``infeasibility`` caches N(mat) and is refreshed on every update.
    """

    mat: np.ndarray
    infeasibility: float

    @classmethod
    def from_matrix(cls, mat) -> "StiefelFactor":
        mat = as_matrix(mat)
        if mat.shape[0] < mat.shape[1]:
            raise ShapeMismatch(f"Stiefel factor needs rows >= cols, got {mat.shape}")
        return cls(mat=mat, infeasibility=infeasibility_value(mat))


def skew(a) -> np.ndarray:
    """Skew-symmetric component 0.5*(a - a^T)."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise NotSquare(f"skew needs a square matrix, got {a.shape}")
    return 0.5 * (a - a.T)


def infeasibility_gradient(x: StiefelFactor) -> np.ndarray:
    """Gradient of N at x: 4 X (X^T X - I); zero at feasible points."""
    gram = x.mat.T @ x.mat
    gram[np.diag_indices_from(gram)] -= 1.0
    return 4.0 * (x.mat @ gram)


def riemannian_component(x: StiefelFactor, euclid_grad) -> np.ndarray:
    """psi(X) = Skew(grad X^T), the skew part of the pushed-forward gradient."""
    euclid_grad = as_matrix(euclid_grad)
    if euclid_grad.shape != x.mat.shape:
        raise ShapeMismatch(
            f"gradient shape {euclid_grad.shape} does not match factor {x.mat.shape}"
        )
    return skew(euclid_grad @ x.mat.T)


def landing_field(x: StiefelFactor, euclid_grad, lam: float) -> np.ndarray:
    """psi(X) X + lam * grad N(X).

    At a feasible point the field lies in the tangent space; the penalty term
    restores feasibility when X drifts off the manifold.
    """
    euclid_grad = as_matrix(euclid_grad)
    if euclid_grad.shape != x.mat.shape:
        raise ShapeMismatch(
            f"gradient shape {euclid_grad.shape} does not match factor {x.mat.shape}"
        )
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return backend.landing_direction(x.mat, euclid_grad, lam)


def landing_step(x: StiefelFactor, euclid_grad, lam: float, step: float) -> StiefelFactor:
    """One descent step along the landing field, with the safety-region check.

    Raises SafetyRegionViolation when the new infeasibility exceeds 0.5, which
    means the step size is too large for the landing method to recover.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    field = landing_field(x, euclid_grad, lam)
    new_mat = x.mat - step * field
    feas = infeasibility_value(new_mat)
    if feas > SAFETY_CAP:
        raise SafetyRegionViolation(
            f"infeasibility {feas:.4f} exceeded the safety cap {SAFETY_CAP}"
        )
    return StiefelFactor(mat=new_mat, infeasibility=feas)
