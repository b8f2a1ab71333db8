"""Row-wise numeric kernels: numba-jitted hot loops with a pure-numpy fallback.

The backend is chosen once at import time from the NACAP_KERNELS env var:

  auto   use numba when importable, else numpy (default)
  numba  require numba, fail loudly if missing
  numpy  force the pure-numpy path

Both paths compute the same math; only dispatch overhead differs. See
benchmarks/kernel_bench.py for a side-by-side timing.
"""

import math
import os

import numpy as np

# exp/softmax inputs are clamped here as an overflow guard; gradients treat
# the clamp as identity (it never bites at sane parameter scales).
EXP_CLAMP = 60.0

_VALID_BACKENDS = ("auto", "numba", "numpy")


def _pick_backend():
    requested = os.environ.get("NACAP_KERNELS", "auto").strip().lower()
    if requested not in _VALID_BACKENDS:
        raise ValueError(
            f"NACAP_KERNELS must be one of {_VALID_BACKENDS}, got {requested!r}"
        )
    if requested == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if requested == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _pick_backend()


# ---------------------------------------------------------------------------
# pure-numpy reference path
# ---------------------------------------------------------------------------

def _softmax_rows_np(x):
    x = np.clip(x, -EXP_CLAMP, EXP_CLAMP)
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _softmax_rows_masked_np(x, valid):
    x = np.clip(x, -EXP_CLAMP, EXP_CLAMP)
    masked = np.where(valid, x, -np.inf)
    e = np.exp(masked - masked.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _softmax_rows_bwd_np(probs, grad):
    dot = (probs * grad).sum(axis=1, keepdims=True)
    return probs * (grad - dot)


def _layer_norm_rows_np(x, gain, bias, eps):
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return xhat * gain + bias, xhat, inv_std[:, 0]


def _layer_norm_rows_bwd_np(grad, xhat, inv_std, gain):
    g = grad * gain
    dx = (
        g
        - g.mean(axis=1, keepdims=True)
        - xhat * (g * xhat).mean(axis=1, keepdims=True)
    ) * inv_std[:, None]
    dgain = (grad * xhat).sum(axis=0)
    dbias = grad.sum(axis=0)
    return dx, dgain, dbias


def _sigmoid_np(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -EXP_CLAMP, EXP_CLAMP)))


def _relu_np(x):
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if BACKEND == "numba":
    from numba import njit

    @njit(cache=True)
    def _softmax_rows_nb(x):
        n, v = x.shape
        out = np.empty((n, v))
        for i in range(n):
            m = -1.0e300
            for j in range(v):
                xi = min(max(x[i, j], -EXP_CLAMP), EXP_CLAMP)
                if xi > m:
                    m = xi
            total = 0.0
            for j in range(v):
                xi = min(max(x[i, j], -EXP_CLAMP), EXP_CLAMP)
                e = math.exp(xi - m)
                out[i, j] = e
                total += e
            inv = 1.0 / total
            for j in range(v):
                out[i, j] *= inv
        return out

    @njit(cache=True)
    def _softmax_rows_masked_nb(x, valid):
        n, v = x.shape
        out = np.zeros((n, v))
        for i in range(n):
            m = -1.0e300
            for j in range(v):
                if valid[i, j]:
                    xi = min(max(x[i, j], -EXP_CLAMP), EXP_CLAMP)
                    if xi > m:
                        m = xi
            total = 0.0
            for j in range(v):
                if valid[i, j]:
                    xi = min(max(x[i, j], -EXP_CLAMP), EXP_CLAMP)
                    e = math.exp(xi - m)
                    out[i, j] = e
                    total += e
            inv = 1.0 / total
            for j in range(v):
                out[i, j] *= inv
        return out

    @njit(cache=True)
    def _softmax_rows_bwd_nb(probs, grad):
        n, v = probs.shape
        out = np.empty((n, v))
        for i in range(n):
            dot = 0.0
            for j in range(v):
                dot += probs[i, j] * grad[i, j]
            for j in range(v):
                out[i, j] = probs[i, j] * (grad[i, j] - dot)
        return out

    @njit(cache=True)
    def _layer_norm_rows_nb(x, gain, bias, eps):
        n, d = x.shape
        out = np.empty((n, d))
        xhat = np.empty((n, d))
        inv_std = np.empty(n)
        for i in range(n):
            mean = 0.0
            for j in range(d):
                mean += x[i, j]
            mean /= d
            var = 0.0
            for j in range(d):
                diff = x[i, j] - mean
                var += diff * diff
            var /= d
            istd = 1.0 / math.sqrt(var + eps)
            inv_std[i] = istd
            for j in range(d):
                h = (x[i, j] - mean) * istd
                xhat[i, j] = h
                out[i, j] = h * gain[j] + bias[j]
        return out, xhat, inv_std

    @njit(cache=True)
    def _layer_norm_rows_bwd_nb(grad, xhat, inv_std, gain):
        n, d = grad.shape
        dx = np.empty((n, d))
        dgain = np.zeros(d)
        dbias = np.zeros(d)
        for i in range(n):
            g_mean = 0.0
            gx_mean = 0.0
            for j in range(d):
                g = grad[i, j] * gain[j]
                g_mean += g
                gx_mean += g * xhat[i, j]
            g_mean /= d
            gx_mean /= d
            istd = inv_std[i]
            for j in range(d):
                g = grad[i, j] * gain[j]
                dx[i, j] = (g - g_mean - xhat[i, j] * gx_mean) * istd
                dgain[j] += grad[i, j] * xhat[i, j]
                dbias[j] += grad[i, j]
        return dx, dgain, dbias

    @njit(cache=True)
    def _sigmoid_nb(x):
        n = x.shape[0]
        out = np.empty(n)
        for i in range(n):
            xi = min(max(x[i], -EXP_CLAMP), EXP_CLAMP)
            out[i] = 1.0 / (1.0 + math.exp(-xi))
        return out

    @njit(cache=True)
    def _relu_nb(x):
        n = x.shape[0]
        out = np.empty(n)
        for i in range(n):
            out[i] = x[i] if x[i] > 0.0 else 0.0
        return out


# ---------------------------------------------------------------------------
# public API (shape-normalizing wrappers around the active backend)
# ---------------------------------------------------------------------------

def softmax_rows(x):
    """Stable softmax over the last axis of a 2-D array."""
    if BACKEND == "numba":
        return _softmax_rows_nb(np.ascontiguousarray(x))
    return _softmax_rows_np(x)


def softmax_rows_masked(x, valid):
    """Softmax over the True entries of each row; masked entries get exact 0.

    Every row must contain at least one valid entry.
    """
    if BACKEND == "numba":
        return _softmax_rows_masked_nb(
            np.ascontiguousarray(x), np.ascontiguousarray(valid)
        )
    return _softmax_rows_masked_np(x, valid)


def softmax_rows_backward(probs, grad):
    if BACKEND == "numba":
        return _softmax_rows_bwd_nb(
            np.ascontiguousarray(probs), np.ascontiguousarray(grad)
        )
    return _softmax_rows_bwd_np(probs, grad)


def layer_norm_rows(x, gain, bias, eps):
    """Per-row normalization then affine. Returns (out, xhat, inv_std)."""
    if BACKEND == "numba":
        return _layer_norm_rows_nb(np.ascontiguousarray(x), gain, bias, eps)
    return _layer_norm_rows_np(x, gain, bias, eps)


def layer_norm_rows_backward(grad, xhat, inv_std, gain):
    if BACKEND == "numba":
        return _layer_norm_rows_bwd_nb(
            np.ascontiguousarray(grad), xhat, inv_std, gain
        )
    return _layer_norm_rows_bwd_np(grad, xhat, inv_std, gain)


def sigmoid(x):
    if BACKEND == "numba":
        flat = _sigmoid_nb(np.ascontiguousarray(x).reshape(-1))
        return flat.reshape(x.shape)
    return _sigmoid_np(x)


def relu(x):
    if BACKEND == "numba":
        flat = _relu_nb(np.ascontiguousarray(x).reshape(-1))
        return flat.reshape(x.shape)
    return _relu_np(x)


# numpy reference implementations stay importable regardless of backend so
# parity tests and the kernel benchmark can compare both paths.
reference = {
    "softmax_rows": _softmax_rows_np,
    "softmax_rows_masked": _softmax_rows_masked_np,
    "softmax_rows_backward": _softmax_rows_bwd_np,
    "layer_norm_rows": _layer_norm_rows_np,
    "layer_norm_rows_backward": _layer_norm_rows_bwd_np,
    "sigmoid": _sigmoid_np,
    "relu": _relu_np,
}
