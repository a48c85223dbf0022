"""Dense f64 kernels and seeded randomness used by every other module.

Matrices are plain 2-D C-contiguous ``numpy.ndarray`` of float64. Randomness
goes through :class:`Rng`, a thin wrapper around numpy's PCG64 generator whose
state can be serialized bit-exactly, so identical seeds give identical draw
sequences within one build of this package (cross-build bit equality is not
promised).
"""

from __future__ import annotations

import numpy as np

from .errors import NotPositiveDefinite, NotSquare, RankDeficient, ShapeMismatch, ZeroMatrix

_SYM_TOL = 1e-10
_QR_RANK_TOL = 1e-12
_POWER_ITER_MAX = 200
_POWER_ITER_TOL = 1e-9


class Rng:
    """Seeded PCG64 stream with normal draws and serializable state."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._bits = np.random.PCG64(self.seed)
        self._gen = np.random.Generator(self._bits)

    def standard_normal(self, *shape: int) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=np.float64)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def state_words(self) -> tuple[int, int, int, int]:
        """PCG64 state as (state, inc, has_uint32, uinteger) integers."""
        s = self._bits.state
        return (s["state"]["state"], s["state"]["inc"], s["has_uint32"], s["uinteger"])

    def set_state_words(self, state: int, inc: int, has_uint32: int, uinteger: int) -> None:
        self._bits.state = {
            "bit_generator": "PCG64",
            "state": {"state": int(state), "inc": int(inc)},
            "has_uint32": int(has_uint32),
            "uinteger": int(uinteger),
        }


def as_matrix(a) -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def sample_std_normal(rng: Rng, rows: int, cols: int) -> np.ndarray:
    """i.i.d. standard-normal matrix; advances the stream deterministically."""
    return rng.standard_normal(rows, cols)


def cholesky(a, check: bool = True) -> np.ndarray:
    """Lower-triangular L with L @ L.T = a for SPD input.

    Raises NotPositiveDefinite when a pivot is nonpositive, which signals a
    degenerate covariance somewhere upstream.
    """
    a = as_matrix(a)
    n, m = a.shape
    if n != m:
        raise NotSquare(f"cholesky needs a square matrix, got {n}x{m}")
    if check:
        scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
        if float(np.max(np.abs(a - a.T))) > _SYM_TOL * scale:
            raise ShapeMismatch("matrix is not symmetric within 1e-10")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def logdet_spd(a) -> float:
    """log determinant of an SPD matrix via its Cholesky factor."""
    lower = cholesky(a)
    return 2.0 * float(np.sum(np.log(np.diag(lower))))


def qr_orthonormalize(a) -> np.ndarray:
    """Orthonormal basis of the column span, sign-fixed so diag(R) >= 0."""
    a = as_matrix(a)
    if a.shape[0] < a.shape[1]:
        raise ShapeMismatch(f"need rows >= cols, got {a.shape}")
    q, r = np.linalg.qr(a)
    diag = np.diag(r)
    if np.min(np.abs(diag)) < _QR_RANK_TOL:
        raise RankDeficient("a column norm collapsed below 1e-12")
    return np.ascontiguousarray(q * np.sign(diag)[None, :])


def spectral_norm(a) -> float:
    """Largest singular value via power iteration.

    Runs at most 200 iterations to relative tolerance 1e-9; the start vector
    comes from a fixed-seed stream for reproducibility.
    """
    a = as_matrix(a)
    if float(np.linalg.norm(a)) == 0.0:
        raise ZeroMatrix("spectral norm of the zero matrix is undefined here")
    probe = Rng(0)
    v = probe.standard_normal(a.shape[1])
    v /= float(np.linalg.norm(v))
    sigma = 0.0
    for _ in range(_POWER_ITER_MAX):
        w = a @ v
        new_sigma = float(np.linalg.norm(w))
        if new_sigma == 0.0:
            v = probe.standard_normal(a.shape[1])
            v /= float(np.linalg.norm(v))
            continue
        u = a.T @ w
        norm_u = float(np.linalg.norm(u))
        if norm_u == 0.0:
            sigma = new_sigma
            break
        v = u / norm_u
        if abs(new_sigma - sigma) <= _POWER_ITER_TOL * new_sigma:
            sigma = new_sigma
            break
        sigma = new_sigma
    return sigma
