"""Frozen multilayer perceptron feature extractor with per-layer adapters.

Layer l applies x -> act(x W_l^T) where W_l = W0_l + adapter delta; tanh on all
layers except the last, identity on the last so features are unconstrained
logit inputs. No biases. Forward records a tape of inputs and activations so
backprop can recover the weight-space gradient G_l = dL/dW_l for every adapted
layer without any autodiff framework.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adapters import LoraAdapter, PolarAdapter, adapter_delta
from .errors import ShapeMismatch, TapeMismatch
from .numerics import Rng, as_matrix

Adapter = PolarAdapter | LoraAdapter


@dataclass
class ForwardTape:
    """Per-layer batch inputs and post-activations from one forward call."""

    owner: "FeatureExtractor"
    inputs: list[np.ndarray]
    outputs: list[np.ndarray]


@dataclass
class FeatureExtractor:
    layer_bases: list[np.ndarray]
    adapters: list[Adapter | None]
    forward_count: int = 0
    _cached_weights: list[np.ndarray] | None = field(default=None, repr=False)

    @classmethod
    def build(cls, rng: Rng, dims: tuple[int, ...]) -> "FeatureExtractor":
        """Frozen bases W0_l ~ N(0, 1/fan_in), layer l mapping dims[l] -> dims[l+1]."""
        bases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bases.append(rng.standard_normal(fan_out, fan_in) / np.sqrt(fan_in))
        return cls(layer_bases=bases, adapters=[None] * len(bases))

    @property
    def num_layers(self) -> int:
        return len(self.layer_bases)

    @property
    def input_dim(self) -> int:
        return self.layer_bases[0].shape[1]

    @property
    def feature_dim(self) -> int:
        return self.layer_bases[-1].shape[0]

    def effective_weight(self, layer: int) -> np.ndarray:
        w = self.layer_bases[layer]
        adapter = self.adapters[layer]
        if adapter is not None:
            w = w + adapter_delta(adapter)
        return w

    def invalidate_weight_cache(self) -> None:
        self._cached_weights = None

    def _effective_weights(self) -> list[np.ndarray]:
        if self._cached_weights is None:
            self._cached_weights = [self.effective_weight(l) for l in range(self.num_layers)]
        return self._cached_weights

    def forward(self, batch_x) -> tuple[np.ndarray, ForwardTape]:
        batch_x = as_matrix(batch_x)
        if batch_x.shape[1] != self.input_dim:
            raise ShapeMismatch(
                f"input dim {batch_x.shape[1]}, extractor expects {self.input_dim}"
            )
        self.forward_count += 1
        weights = self._effective_weights()
        inputs, outputs = [], []
        h = batch_x
        last = self.num_layers - 1
        for l, w in enumerate(weights):
            inputs.append(h)
            z = h @ w.T
            h = z if l == last else np.tanh(z)
            outputs.append(h)
        return h, ForwardTape(owner=self, inputs=inputs, outputs=outputs)

    def backward_to_adapters(self, tape: ForwardTape, feature_grad) -> list[np.ndarray | None]:
        """Weight-space gradients G_l = dL/dW_l for each adapted layer.

        Entries are None for layers without an adapter. The upstream gradient
        is propagated through tanh as (1 - h^2) using activations on the tape.
        """
        if tape.owner is not self or len(tape.inputs) != self.num_layers:
            raise TapeMismatch("tape does not belong to this extractor")
        feature_grad = as_matrix(feature_grad)
        if feature_grad.shape != tape.outputs[-1].shape:
            raise ShapeMismatch(
                f"feature grad shape {feature_grad.shape}, "
                f"expected {tape.outputs[-1].shape}"
            )
        weights = self._effective_weights()
        grads: list[np.ndarray | None] = [None] * self.num_layers
        d_h = feature_grad
        last = self.num_layers - 1
        for l in range(last, -1, -1):
            d_z = d_h if l == last else d_h * (1.0 - tape.outputs[l] ** 2)
            if self.adapters[l] is not None:
                grads[l] = d_z.T @ tape.inputs[l]
            if l > 0:
                d_h = d_z @ weights[l]
        return grads
