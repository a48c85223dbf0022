"""Selects the kernel implementation at import: compiled extension if the
Cython module built, pure numpy otherwise.

``set_backend`` exists for benchmarking and tests; normal code never calls it.
Results of the two backends agree to floating-point reduction-order noise, so
bit-level reproducibility claims hold per backend, not across them.
"""

from __future__ import annotations

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_ACTIVE = _compiled if _compiled is not None else _kernels_py


def available_backends() -> list[str]:
    names = ["pure"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def active_backend() -> str:
    return "compiled" if _ACTIVE is _compiled else "pure"


def set_backend(name: str) -> None:
    global _ACTIVE
    if name == "pure":
        _ACTIVE = _kernels_py
    elif name == "compiled":
        if _compiled is None:
            raise ValueError("compiled kernels are not available in this install")
        _ACTIVE = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")


def eta_matrix(means, chols, phi):
    return _ACTIVE.eta_matrix(means, chols, phi)


def weighted_outer_accum(phi, w):
    return _ACTIVE.weighted_outer_accum(phi, w)


def weighted_scov_vec(chols, phi, w):
    return _ACTIVE.weighted_scov_vec(chols, phi, w)


def landing_direction(x, g, lam):
    return _ACTIVE.landing_direction(x, g, lam)


def mc_predict_probs(means, factors, phi, xi):
    return _ACTIVE.mc_predict_probs(means, factors, phi, xi)
