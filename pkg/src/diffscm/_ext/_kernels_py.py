"""Pure numpy versions of the compiled kernels."""

import numpy as np
from scipy.special import expit


def silu_forward(z):
    sig = expit(z)
    return z * sig, sig


def silu_backward(grad, z, sig):
    return grad * sig * (1.0 + z * (1.0 - sig))


def adam_update(param, grad, m, v, step_size, beta1, beta2, eps, inv_bc2):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= step_size * m / (np.sqrt(v * inv_bc2) + eps)


def rbf_sum(x, y, gamma, exclude_diag):
    sq = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(y * y, axis=1)[None, :]
        - 2.0 * (x @ y.T)
    )
    np.maximum(sq, 0.0, out=sq)
    k = np.exp(-gamma * sq)
    total = float(k.sum())
    if exclude_diag:
        total -= float(np.trace(k))
    return total
