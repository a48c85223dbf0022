"""Joint alternating training: adapter factors by landing steps on their
Stiefel manifolds, the unconstrained core and the head by plain gradient
descent, all from one forward/backward per mini-batch.

Everything is deterministic given (config, dataset, seed): initialization
draws happen in a fixed order from one stream, batches come from seeded
epoch shuffles, and updates apply in a fixed layer order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import vbll
from .adapters import LoraAdapter, PolarAdapter, lora_factor_grads, polar_factor_grads
from .data import Dataset, one_hot
from .errors import NonFiniteLoss
from .features import FeatureExtractor
from .laplace import LaplacePosterior
from .numerics import Rng
from .stiefel import landing_step
from .vbll import VbllHead

SCHED_RESTART_PERIOD = 200
SCHED_RESTART_MULT = 2

ADAPTER_KINDS = ("polar", "lora")
HEAD_KINDS = ("vbll", "mle")
SCHEDULER_KINDS = ("cosine-restarts", "constant")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 32
    lr_polar: float = 1e-2
    lr_vbll: float = 1e-2
    landing_lambda: float = 1.0
    prior_var: float = 1.0
    kl_weight: float | None = None  # resolved to 1/N at training start
    adapter: str = "polar"
    head: str = "vbll"
    rank: int = 8
    alpha: float = 16.0
    seed: int = 0
    scheduler: str = "cosine-restarts"
    eval_every: int = 100
    hidden_dim: int = 32
    feature_dim: int = 16

    def validate(self) -> None:
        if self.steps < 0 or self.batch < 1 or self.eval_every < 1:
            raise ValueError("steps must be >= 0, batch and eval_every >= 1")
        if min(self.lr_polar, self.lr_vbll, self.landing_lambda, self.prior_var) <= 0:
            raise ValueError("rates, landing lambda, and prior variance must be positive")
        if self.kl_weight is not None and self.kl_weight < 0:
            raise ValueError("kl_weight must be nonnegative")
        if self.adapter not in ADAPTER_KINDS:
            raise ValueError(f"adapter must be one of {ADAPTER_KINDS}")
        if self.head not in HEAD_KINDS:
            raise ValueError(f"head must be one of {HEAD_KINDS}")
        if self.scheduler not in SCHEDULER_KINDS:
            raise ValueError(f"scheduler must be one of {SCHEDULER_KINDS}")
        if self.rank < 1 or self.alpha <= 0:
            raise ValueError("rank must be >= 1 and alpha positive")


@dataclass
class MleHead:
    """Deterministic softmax head trained by cross-entropy; the baseline."""

    means: np.ndarray  # (C, d)

    @classmethod
    def init(cls, num_classes: int, feature_dim: int) -> "MleHead":
        return cls(means=np.zeros((num_classes, feature_dim)))


@dataclass
class CheckpointState:
    config: TrainConfig
    extractor: FeatureExtractor
    head: VbllHead | MleHead
    laplace: LaplacePosterior | None
    rng_words: tuple[int, int, int, int]


def lr_multiplier(scheduler: str, step: int) -> float:
    """Cosine decay with period-doubling warm restarts, or flat 1.0."""
    if scheduler == "constant":
        return 1.0
    rem = step
    period = SCHED_RESTART_PERIOD
    while rem >= period:
        rem -= period
        period *= SCHED_RESTART_MULT
    return 0.5 * (1.0 + math.cos(math.pi * rem / period))


class Trainer:
    """Incrementally steppable training loop owning all mutable state."""

    def __init__(self, config: TrainConfig, dataset: Dataset, head=None, extractor=None):
        config.validate()
        n = dataset.x.shape[0]
        resolved_kl = config.kl_weight if config.kl_weight is not None else 1.0 / n
        self.config = replace(config, kl_weight=resolved_kl)
        self.dataset = dataset
        self.rng = Rng(config.seed)
        self.extractor = extractor if extractor is not None else self._build_extractor()
        self.head = head if head is not None else self._build_head()
        self.step_index = 0
        self.log: list[dict] = []
        self._perm: np.ndarray | None = None
        self._pos = 0

    def _build_extractor(self) -> FeatureExtractor:
        cfg = self.config
        dims = (self.dataset.input_dim, cfg.hidden_dim, cfg.feature_dim)
        fx = FeatureExtractor.build(self.rng, dims)
        for layer in range(fx.num_layers):
            m, n = fx.layer_bases[layer].shape
            if cfg.adapter == "polar":
                fx.adapters[layer] = PolarAdapter.init(self.rng, m, n, cfg.rank, cfg.alpha)
            else:
                fx.adapters[layer] = LoraAdapter.init(self.rng, m, n, cfg.rank, cfg.alpha)
        return fx

    def _build_head(self):
        cfg = self.config
        c = self.dataset.num_classes
        if cfg.head == "vbll":
            return VbllHead.init(c, cfg.feature_dim, cfg.prior_var, cfg.kl_weight)
        return MleHead.init(c, cfg.feature_dim)

    def _next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.dataset.x.shape[0]
        if self._perm is None or self._pos >= n:
            self._perm = self.rng.permutation(n)
            self._pos = 0
        take = self._perm[self._pos : self._pos + self.config.batch]
        self._pos += self.config.batch
        return self.dataset.x[take], self.dataset.y[take]

    def _head_grads(self, feats, y1h):
        """(loss, d_features, head update closure applied later)."""
        if isinstance(self.head, VbllHead):
            loss = vbll.surrogate_loss(self.head, feats, y1h)
            g = vbll.grads(self.head, feats, y1h)

            def apply(lr: float) -> None:
                self.head.means -= lr * g.d_mu
                self.head.chols -= lr * g.d_chol
                vbll.floor_chol_diagonals(self.head.chols)

            return loss, g.d_features, apply
        b = feats.shape[0]
        z = feats @ self.head.means.T
        shifted = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1)) + z.max(axis=1)
        loss = -float(np.mean(np.sum(y1h * z, axis=1) - lse))
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        resid = y1h - p
        d_means = -(resid.T @ feats) / b
        d_feats = -(resid @ self.head.means) / b

        def apply(lr: float) -> None:
            self.head.means -= lr * d_means

        return loss, d_feats, apply

    def step_once(self) -> float:
        cfg = self.config
        xb, yb = self._next_batch()
        y1h = one_hot(yb, self.dataset.num_classes)
        feats, tape = self.extractor.forward(xb)
        loss, d_feats, apply_head = self._head_grads(feats, y1h)
        if not np.isfinite(loss):
            raise NonFiniteLoss(self.step_index, loss)
        weight_grads = self.extractor.backward_to_adapters(tape, d_feats)

        mult = lr_multiplier(cfg.scheduler, self.step_index)
        lr_adapt = cfg.lr_polar * mult
        lr_head = cfg.lr_vbll * mult
        for layer, g in enumerate(weight_grads):
            if g is None:
                continue
            adapter = self.extractor.adapters[layer]
            if isinstance(adapter, PolarAdapter):
                fg = polar_factor_grads(adapter, g)
                adapter.u = landing_step(adapter.u, fg.g_u, cfg.landing_lambda, lr_adapt)
                adapter.v = landing_step(adapter.v, fg.g_v, cfg.landing_lambda, lr_adapt)
                adapter.lam = adapter.lam - lr_adapt * fg.g_lam
            else:
                g_b, g_a = lora_factor_grads(adapter, g)
                adapter.b = adapter.b - lr_adapt * g_b
                adapter.a = adapter.a - lr_adapt * g_a
        self.extractor.invalidate_weight_cache()
        apply_head(lr_head)

        self.step_index += 1
        if self.step_index % cfg.eval_every == 0 or self.step_index == cfg.steps:
            self.log.append(self._log_record(loss, lr_adapt))
        return loss

    def _log_record(self, loss: float, lr: float) -> dict:
        feas_u = 0.0
        feas_v = 0.0
        for adapter in self.extractor.adapters:
            if isinstance(adapter, PolarAdapter):
                feas_u = max(feas_u, adapter.u.infeasibility)
                feas_v = max(feas_v, adapter.v.infeasibility)
        return {
            "step": self.step_index,
            "loss": loss,
            "feas_u": feas_u,
            "feas_v": feas_v,
            "lr": lr,
        }

    def run_to(self, step: int) -> None:
        if step > self.config.steps:
            raise ValueError(f"step {step} beyond configured horizon {self.config.steps}")
        while self.step_index < step:
            self.step_once()

    def run(self) -> None:
        self.run_to(self.config.steps)

    def snapshot(self) -> CheckpointState:
        return CheckpointState(
            config=self.config,
            extractor=self.extractor,
            head=self.head,
            laplace=None,
            rng_words=self.rng.state_words(),
        )


def train(config: TrainConfig, dataset: Dataset) -> tuple[CheckpointState, list[dict]]:
    """Run the full loop; returns the final state and the JSONL-ready log."""
    trainer = Trainer(config, dataset)
    trainer.run()
    return trainer.snapshot(), trainer.log


def train_mle_head(config: TrainConfig, dataset: Dataset) -> tuple[CheckpointState, list[dict]]:
    """Same loop with the deterministic softmax head and cross-entropy loss."""
    trainer = Trainer(replace(config, head="mle"), dataset)
    trainer.run()
    return trainer.snapshot(), trainer.log
