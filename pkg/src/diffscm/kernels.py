"""Hot-loop kernels, compiled when available.

The Cython build (``diffscm._ext._kernels``) is used if it imports; otherwise
the numpy versions in ``diffscm._ext._kernels_py`` are used. Set
``DIFFSCM_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from diffscm._ext import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("DIFFSCM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from diffscm._ext import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def _c2(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def silu_forward(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(z * sigmoid(z), sigmoid(z))`` for a 2-D array."""
    return _impl.silu_forward(_c2(z))


def silu_backward(grad: np.ndarray, z: np.ndarray, sig: np.ndarray) -> np.ndarray:
    return _impl.silu_backward(_c2(grad), _c2(z), _c2(sig))


def adam_update(param, grad, m, v, step_size, beta1, beta2, eps, inv_bc2) -> None:
    """In-place Adam update on flat contiguous float64 arrays."""
    _impl.adam_update(param, _c2(grad), m, v, step_size, beta1, beta2, eps, inv_bc2)


def rbf_sum(x: np.ndarray, y: np.ndarray, gamma: float, exclude_diag: bool) -> float:
    """Sum of exp(-gamma * |x_i - y_j|^2) over all pairs, optionally skipping i == j."""
    return float(_impl.rbf_sum(_c2(x), _c2(y), float(gamma), bool(exclude_diag)))


def use_backend(name: str) -> None:
    """Switch implementations at runtime (benchmarks and tests)."""
    global _impl, BACKEND
    if name == "python":
        _impl, BACKEND = _kernels_py, "python"
    elif name == "cython":
        from diffscm._ext import _kernels as compiled

        _impl, BACKEND = compiled, "cython"
    else:
        raise ValueError(f"unknown backend {name!r}")
