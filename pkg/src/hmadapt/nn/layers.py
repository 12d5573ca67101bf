"""Forward/backward pairs for the few layers the classifier needs.

Activations are NHWC; convolution kernels are ``(kh, kw, C_in, C_out)``.
Each forward returns ``(out, cache)`` and the matching backward consumes the
cache.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0):
    kh, kw, c_in, c_out = w.shape
    if x.shape[-1] != c_in:
        raise ValueError(f"conv expects {c_in} input channels, got {x.shape[-1]}")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    n, ho, wo = win.shape[:3]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * c_in)
    out = (cols @ w.reshape(-1, c_out)).reshape(n, ho, wo, c_out)
    return out, (cols, w, x.shape, stride, pad)


def conv2d_backward(dout: np.ndarray, cache, need_dw: bool = True):
    cols, w, x_shape, stride, pad = cache
    kh, kw, c_in, c_out = w.shape
    n, ho, wo, _ = dout.shape
    d2 = dout.reshape(-1, c_out)
    dw = (cols.T @ d2).reshape(w.shape) if need_dw else None
    dcols = (d2 @ w.reshape(-1, c_out).T).reshape(n, ho, wo, kh, kw, c_in)
    h, wd = x_shape[1] + 2 * pad, x_shape[2] + 2 * pad
    dxp = np.zeros((n, h, wd, c_in), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
    dx = dxp[:, pad:h - pad, pad:wd - pad, :] if pad else dxp
    return dx, dw


def batchnorm_train(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float):
    """Normalise with batch statistics; also returns (mean, unbiased var)."""
    axes = (0, 1, 2)
    m = x.shape[0] * x.shape[1] * x.shape[2]
    mean = x.mean(axis=axes)
    xc = x - mean
    var = (xc * xc).mean(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = xhat * gamma + beta
    unbiased = var * (m / max(m - 1, 1))
    return out, ("train", xhat, inv_std, gamma), (mean, unbiased)


def batchnorm_eval(x, gamma, beta, mean, var, eps: float):
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return xhat * gamma + beta, ("eval", xhat, inv_std, gamma)


def batchnorm_backward(dout: np.ndarray, cache):
    mode, xhat, inv_std, gamma = cache
    axes = (0, 1, 2)
    dbeta = dout.sum(axis=axes)
    dgamma = (dout * xhat).sum(axis=axes)
    dxhat = dout * gamma
    if mode == "eval":
        return dxhat * inv_std, dgamma, dbeta
    m = dout.shape[0] * dout.shape[1] * dout.shape[2]
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


def relu(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def global_avg_pool(x: np.ndarray):
    return x.mean(axis=(1, 2)), x.shape


def global_avg_pool_backward(dout: np.ndarray, shape) -> np.ndarray:
    n, h, w, c = shape
    return np.broadcast_to(dout[:, None, None, :] / (h * w), shape).astype(dout.dtype, copy=True)


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, (x, w)


def linear_backward(dout: np.ndarray, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood and its gradient with respect to ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return float(loss), dlogits / n
