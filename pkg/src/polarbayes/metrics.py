"""Evaluation metrics and diagnostics: accuracy, ECE, NLL, stable-rank
reports, and the gap between the closed-form surrogate loss and its Monte
Carlo counterpart."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import vbll
from .adapters import adapter_delta, stable_rank
from .errors import ShapeMismatch, ZeroMatrix
from .numerics import Rng, as_matrix

DEFAULT_ECE_BINS = 15
NLL_FLOOR = 1e-12


@dataclass
class EvalReport:
    acc: float
    ece: float
    nll: float
    n: int
    bins: int

    def to_json_dict(self) -> dict:
        return asdict(self)


def accuracy(probs, labels) -> float:
    """Fraction of argmax hits; ties break toward the lowest class index."""
    probs = as_matrix(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (probs.shape[0],):
        raise ShapeMismatch(f"labels shape {labels.shape}, probs rows {probs.shape[0]}")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ShapeMismatch("label out of range")
    preds = np.argmax(probs, axis=1)  # argmax returns the first maximum
    return float(np.mean(preds == labels))


def ece(probs, labels, bins: int = DEFAULT_ECE_BINS) -> float:
    """Top-label expected calibration error over equal-width bins on (0, 1].

    A confidence exactly on a boundary belongs to the lower bin, i.e. bin b
    covers ((b-1)/M, b/M]. Empty bins contribute nothing.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    probs = as_matrix(probs)
    labels = np.asarray(labels, dtype=np.int64)
    conf = probs.max(axis=1)
    correct = (np.argmax(probs, axis=1) == labels).astype(np.float64)
    idx = np.clip(np.ceil(conf * bins).astype(np.int64) - 1, 0, bins - 1)
    total = 0.0
    n = probs.shape[0]
    for b in range(bins):
        mask = idx == b
        n_b = int(mask.sum())
        if n_b == 0:
            continue
        gap = abs(float(correct[mask].mean()) - float(conf[mask].mean()))
        total += (n_b / n) * gap
    return total


def nll(probs, labels) -> float:
    """Mean negative log probability of the true labels, in nats.

    Probabilities are floored at 1e-12 so Monte Carlo zeros stay finite.
    """
    probs = as_matrix(probs)
    labels = np.asarray(labels, dtype=np.int64)
    p_true = probs[np.arange(probs.shape[0]), labels]
    return -float(np.mean(np.log(np.maximum(p_true, NLL_FLOOR))))


def evaluate_probs(probs, labels, bins: int = DEFAULT_ECE_BINS) -> EvalReport:
    probs = as_matrix(probs)
    return EvalReport(
        acc=accuracy(probs, labels),
        ece=ece(probs, labels, bins),
        nll=nll(probs, labels),
        n=probs.shape[0],
        bins=bins,
    )


def stable_rank_report(state) -> dict:
    """Per-adapted-layer stable ranks of the effective weight deltas.

    Layers whose delta is exactly zero (a freshly initialized two-factor
    adapter) are reported as undefined rather than raising.
    """
    layers: list[float | None] = []
    undefined: list[int] = []
    for idx, adapter in enumerate(state.extractor.adapters):
        if adapter is None:
            continue
        try:
            layers.append(stable_rank(adapter_delta(adapter)))
        except ZeroMatrix:
            layers.append(None)
            undefined.append(idx)
    defined = [v for v in layers if v is not None]
    mean = float(np.mean(defined)) if defined else None
    return {"layers": layers, "mean": mean, "undefined_layers": undefined}


def jensen_gap_record(head, extractor, probe_x, probe_y_onehot, rng: Rng, mc_samples: int) -> dict:
    """Surrogate loss vs its Monte Carlo counterpart on one probe batch."""
    feats, _ = extractor.forward(probe_x)
    jensen_loss = vbll.surrogate_loss(head, feats, probe_y_onehot)
    draws = vbll.mc_loss_draws(head, feats, probe_y_onehot, rng, mc_samples)
    mc_loss = float(np.mean(draws)) + head.kl_weight * vbll.kl_to_prior(head)
    se = float(np.std(draws, ddof=1) / np.sqrt(mc_samples)) if mc_samples > 1 else 0.0
    return {
        "jensen_loss": jensen_loss,
        "mc_loss": mc_loss,
        "abs_gap": abs(jensen_loss - mc_loss),
        "mc_se": se,
    }


def jensen_gap_trace(head, extractor, dataset, rng: Rng, mc_samples: int, probe_steps, config=None) -> list[dict]:
    """Gap records at the requested step checkpoints of a training run.

    With a config, training advances in place (mutating head and extractor)
    between probes via the incremental trainer; without one, a single record
    for the current state is returned. The probe batch is fixed: the first
    min(256, N) examples of the dataset.
    """
    from .data import one_hot
    from .train import Trainer

    probe_n = min(256, dataset.x.shape[0])
    probe_x = dataset.x[:probe_n]
    probe_y = one_hot(dataset.y[:probe_n], dataset.num_classes)

    def record(step: int) -> dict:
        rec = jensen_gap_record(head, extractor, probe_x, probe_y, rng, mc_samples)
        rec["step"] = step
        return rec

    if config is None:
        return [record(0)]
    trainer = Trainer(config, dataset, head=head, extractor=extractor)
    out = []
    for step in sorted(set(int(s) for s in probe_steps)):
        trainer.run_to(step)
        out.append(record(step))
    return out
