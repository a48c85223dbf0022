"""Low-rank additive weight updates for one layer.

Two parameterizations: the polar-decomposed adapter delta = U Lam V^T with U, V
on Stiefel manifolds and an unconstrained r x r core, and the vanilla two-factor
adapter delta = B A used as the ablation baseline. Both apply the usual alpha/r
output scaling so comparisons are apples-to-apples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, ZeroMatrix
from .numerics import Rng, as_matrix, qr_orthonormalize, spectral_norm
from .stiefel import StiefelFactor

POLAR_CORE_INIT_STD = 0.01
LORA_A_INIT_STD = 0.02


@dataclass
class PolarAdapter:
    u: StiefelFactor
    v: StiefelFactor
    lam: np.ndarray
    alpha_scale: float

    @classmethod
    def init(cls, rng: Rng, m: int, n: int, r: int, alpha: float) -> "PolarAdapter":
        if r > min(m, n):
            raise ShapeMismatch(f"rank {r} exceeds min(m, n) = {min(m, n)}")
        u = StiefelFactor.from_matrix(qr_orthonormalize(rng.standard_normal(m, r)))
        v = StiefelFactor.from_matrix(qr_orthonormalize(rng.standard_normal(n, r)))
        lam = POLAR_CORE_INIT_STD * rng.standard_normal(r, r)
        return cls(u=u, v=v, lam=lam, alpha_scale=alpha / r)

    @property
    def rank(self) -> int:
        return self.lam.shape[0]


@dataclass
class LoraAdapter:
    b: np.ndarray
    a: np.ndarray
    alpha_scale: float

    @classmethod
    def init(cls, rng: Rng, m: int, n: int, r: int, alpha: float) -> "LoraAdapter":
        if r > min(m, n):
            raise ShapeMismatch(f"rank {r} exceeds min(m, n) = {min(m, n)}")
        b = np.zeros((m, r))
        a = LORA_A_INIT_STD * rng.standard_normal(r, n)
        return cls(b=b, a=a, alpha_scale=alpha / r)

    @property
    def rank(self) -> int:
        return self.b.shape[1]


@dataclass
class FactorGrads:
    g_u: np.ndarray
    g_v: np.ndarray
    g_lam: np.ndarray


def polar_delta(adapter: PolarAdapter) -> np.ndarray:
    return adapter.alpha_scale * (adapter.u.mat @ adapter.lam @ adapter.v.mat.T)


def polar_factor_grads(adapter: PolarAdapter, g) -> FactorGrads:
    """Chain rule from a weight-space gradient G to the three factors.

    g_lam = U^T G V, g_u = G V Lam^T, g_v = G^T U Lam, each times the output
    scale.
    """
    g = as_matrix(g)
    m, n = adapter.u.mat.shape[0], adapter.v.mat.shape[0]
    if g.shape != (m, n):
        raise ShapeMismatch(f"weight gradient shape {g.shape}, expected {(m, n)}")
    s = adapter.alpha_scale
    gv = g @ adapter.v.mat
    return FactorGrads(
        g_u=s * (gv @ adapter.lam.T),
        g_v=s * (g.T @ adapter.u.mat @ adapter.lam),
        g_lam=s * (adapter.u.mat.T @ gv),
    )


def lora_delta(adapter: LoraAdapter) -> np.ndarray:
    return adapter.alpha_scale * (adapter.b @ adapter.a)


def lora_factor_grads(adapter: LoraAdapter, g) -> tuple[np.ndarray, np.ndarray]:
    """(g_b, g_a) = (G A^T, B^T G), times the output scale."""
    g = as_matrix(g)
    m, n = adapter.b.shape[0], adapter.a.shape[1]
    if g.shape != (m, n):
        raise ShapeMismatch(f"weight gradient shape {g.shape}, expected {(m, n)}")
    s = adapter.alpha_scale
    return s * (g @ adapter.a.T), s * (adapter.b.T @ g)


def stable_rank(delta) -> float:
    """||delta||_F^2 / ||delta||_2^2, clamped to its theoretical range."""
    delta = as_matrix(delta)
    fro = float(np.linalg.norm(delta))
    if fro == 0.0:
        raise ZeroMatrix("stable rank of the zero matrix is undefined")
    sigma = spectral_norm(delta)
    value = (fro / sigma) ** 2
    return float(min(max(value, 1.0), min(delta.shape)))


def adapter_delta(adapter) -> np.ndarray:
    if isinstance(adapter, PolarAdapter):
        return polar_delta(adapter)
    if isinstance(adapter, LoraAdapter):
        return lora_delta(adapter)
    raise TypeError(f"not an adapter: {type(adapter)!r}")
