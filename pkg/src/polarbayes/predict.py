"""Uncertainty-aware inference over precomputed features.

Features are extracted once per batch; sampling from the last-layer posterior
is lightweight, so the cost of raising the sample count never touches the
extractor. Works with either the variational head (sampling through its
Cholesky factors) or a Laplace-refined posterior (factors cached on first use).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .laplace import LaplacePosterior
from .numerics import Rng, as_matrix
from .vbll import VbllHead, _softmax_rows


@dataclass
class PredictiveDist:
    probs: np.ndarray  # (B, C), row-stochastic
    num_samples: int
    posterior_source: str  # variational | laplace | mean


def _means_and_factors(posterior) -> tuple[np.ndarray, np.ndarray, str]:
    if isinstance(posterior, VbllHead):
        return posterior.means, posterior.chols, "variational"
    if isinstance(posterior, LaplacePosterior):
        return posterior.means, posterior.factors(), "laplace"
    raise TypeError(f"unsupported posterior type {type(posterior)!r}")


def predict_mc(features, posterior, rng: Rng, k: int) -> PredictiveDist:
    """Average of softmax predictions over k weight draws theta_c = mu_c + L_c xi.

    One draw of the full weight matrix is shared across the batch, matching
    the single-pass inference recipe: features come in precomputed, and only
    last-layer evaluations repeat.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    features = as_matrix(features)
    means, factors, source = _means_and_factors(posterior)
    xi = rng.standard_normal(k, means.shape[0], means.shape[1])
    probs = backend.mc_predict_probs(means, factors, features, xi)
    return PredictiveDist(probs=probs, num_samples=k, posterior_source=source)


def predict_mean(features, posterior) -> PredictiveDist:
    """Softmax of the mean logits: the zero-covariance limit of predict_mc.

    Accepts any posterior carrying a (C, d) ``means`` attribute, including the
    deterministic baseline head.
    """
    features = as_matrix(features)
    means = as_matrix(posterior.means)
    probs = _softmax_rows(features @ means.T)
    return PredictiveDist(probs=probs, num_samples=0, posterior_source="mean")


EVAL_BATCH = 256


def batched_probs(state, dataset, *, k: int, posterior_source: str, rng: Rng | None, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Predictive probabilities for a whole dataset.

    Exactly one extractor forward runs per batch no matter how many posterior
    samples are requested; raising k only repeats last-layer work.
    """
    if posterior_source == "laplace":
        if state.laplace is None:
            raise ValueError("checkpoint has no laplace section")
        posterior = state.laplace
    elif posterior_source == "variational":
        posterior = state.head
        if not isinstance(posterior, VbllHead):
            raise TypeError("variational prediction needs a variational head")
    elif posterior_source == "mean":
        posterior = state.head
    else:
        raise ValueError(f"unknown posterior source {posterior_source!r}")

    chunks = []
    n = dataset.x.shape[0]
    for start in range(0, n, batch_size):
        feats, _ = state.extractor.forward(dataset.x[start : start + batch_size])
        if posterior_source == "mean":
            chunks.append(predict_mean(feats, posterior).probs)
        else:
            chunks.append(predict_mc(feats, posterior, rng, k).probs)
    return np.vstack(chunks)


def evaluate_checkpoint(state, dataset, *, k: int = 10, posterior_source: str = "variational", bins: int = 15, seed: int = 0, batch_size: int = EVAL_BATCH):
    """End-to-end eval: batched features, posterior prediction, metrics."""
    from .metrics import evaluate_probs

    rng = Rng(seed)
    probs = batched_probs(
        state, dataset, k=k, posterior_source=posterior_source, rng=rng, batch_size=batch_size
    )
    return evaluate_probs(probs, dataset.y, bins)
