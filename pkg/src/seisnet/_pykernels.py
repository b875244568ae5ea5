"""Pure-numpy kernels, used when the compiled extension is unavailable.

All arrays are channels-last batches of shape ``(batch, length, channels)``
and C-contiguous. Both backends expose exactly the same functions with the
same argument order; ``seisnet.kernels`` picks one at import time.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def _pad_time(x, pad_left, padded_len):
    b, n, c = x.shape
    xp = np.zeros((b, padded_len, c), dtype=x.dtype)
    xp[:, pad_left:pad_left + n] = x
    return xp


def conv1d_forward(x, w, bias, stride, pad_left, out_len):
    """Cross-correlate ``x`` with ``w`` of shape (kernel, c_in, c_out)."""
    b, n, c_in = x.shape
    k, _, c_out = w.shape
    padded_len = max((out_len - 1) * stride + k, pad_left + n)
    xp = _pad_time(x, pad_left, padded_len)
    if stride == 1:
        # Flatten the padded batch into one long sequence so each kernel tap
        # is a single GEMM; rows straddling two samples are discarded.
        flat = xp.reshape(b * padded_len, c_in)
        rows = b * padded_len - k + 1
        acc = np.empty((b * padded_len, c_out), dtype=x.dtype)
        np.matmul(flat[0:rows], w[0], out=acc[:rows])
        tmp = np.empty((rows, c_out), dtype=x.dtype)
        for j in range(1, k):
            np.matmul(flat[j:j + rows], w[j], out=tmp)
            acc[:rows] += tmp
        y = acc.reshape(b, padded_len, c_out)[:, :out_len]
        y = y + bias
        return np.ascontiguousarray(y)
    cols = _im2col(xp, k, stride, out_len)
    y = cols @ w.reshape(k * c_in, c_out)
    y += bias
    return y.reshape(b, out_len, c_out)


def _im2col(xp, k, stride, out_len):
    b, _, c_in = xp.shape
    win = sliding_window_view(xp, k, axis=1)[:, ::stride][:, :out_len]
    # (b, out, c_in, k) -> (b*out, k*c_in), tap-major to match w.reshape
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(b * out_len, k * c_in)


def conv1d_backward(grad_y, x, w, stride, pad_left):
    b, n, c_in = x.shape
    k, _, c_out = w.shape
    out_len = grad_y.shape[1]
    padded_len = max((out_len - 1) * stride + k, pad_left + n)
    xp = _pad_time(x, pad_left, padded_len)
    grad_b = grad_y.sum(axis=(0, 1))
    if stride == 1:
        rows = b * padded_len - k + 1
        g = np.zeros((b, padded_len, c_out), dtype=x.dtype)
        g[:, :out_len] = grad_y
        g = g.reshape(b * padded_len, c_out)[:rows]
        flat = xp.reshape(b * padded_len, c_in)
        grad_w = np.empty_like(w)
        gxp = np.zeros((b * padded_len, c_in), dtype=x.dtype)
        for j in range(k):
            np.matmul(flat[j:j + rows].T, g, out=grad_w[j])
            gxp[j:j + rows] += g @ w[j].T
        gx = gxp.reshape(b, padded_len, c_in)[:, pad_left:pad_left + n]
        return np.ascontiguousarray(gx), grad_w, grad_b
    cols = _im2col(xp, k, stride, out_len)
    g2 = grad_y.reshape(b * out_len, c_out)
    grad_w = (cols.T @ g2).reshape(k, c_in, c_out)
    gcols = (g2 @ w.reshape(k * c_in, c_out).T).reshape(b, out_len, k, c_in)
    gxp = np.zeros((b, padded_len, c_in), dtype=x.dtype)
    span = stride * (out_len - 1) + 1
    for j in range(k):
        gxp[:, j:j + span:stride] += gcols[:, :, j]
    return np.ascontiguousarray(gxp[:, pad_left:pad_left + n]), grad_w, grad_b


def _pool_counts(n, window, stride, pad_left, out_len, dtype):
    starts = np.arange(out_len) * stride - pad_left
    lo = np.clip(starts, 0, n)
    hi = np.clip(starts + window, 0, n)
    return (hi - lo).astype(dtype)


def avgpool1d_forward(x, window, stride, pad_left, out_len):
    b, n, c = x.shape
    padded_len = max((out_len - 1) * stride + window, pad_left + n)
    counts = _pool_counts(n, window, stride, pad_left, out_len, x.dtype)
    if window == stride and pad_left == 0:
        xp = _pad_time(x, 0, out_len * window) if out_len * window != n else x
        sums = xp.reshape(b, out_len, window, c).sum(axis=2)
    else:
        xp = _pad_time(x, pad_left, padded_len)
        win = sliding_window_view(xp, window, axis=1)[:, ::stride][:, :out_len]
        sums = win.sum(axis=3)
    return sums / counts[None, :, None]


def avgpool1d_backward(grad_y, n, window, stride, pad_left):
    b, out_len, c = grad_y.shape
    padded_len = max((out_len - 1) * stride + window, pad_left + n)
    counts = _pool_counts(n, window, stride, pad_left, out_len, grad_y.dtype)
    g = grad_y / counts[None, :, None]
    gxp = np.zeros((b, padded_len, c), dtype=grad_y.dtype)
    span = stride * (out_len - 1) + 1
    for j in range(window):
        gxp[:, j:j + span:stride] += g
    return np.ascontiguousarray(gxp[:, pad_left:pad_left + n])


def batchnorm_train_forward(x, gamma, beta, eps):
    """Returns ``(y, x_hat, mean, var, inv_std)`` with stats over (batch, time)."""
    mean = x.mean(axis=(0, 1))
    centered = x - mean
    var = np.mean(centered * centered, axis=(0, 1))
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std
    y = x_hat * gamma + beta
    return y, x_hat, mean, var, inv_std


def batchnorm_infer_forward(x, gamma, beta, mean, var, eps):
    scale = gamma / np.sqrt(var + eps)
    return x * scale + (beta - mean * scale)


def batchnorm_train_backward(grad_y, x_hat, gamma, inv_std):
    m = grad_y.shape[0] * grad_y.shape[1]
    grad_beta = grad_y.sum(axis=(0, 1))
    grad_gamma = (grad_y * x_hat).sum(axis=(0, 1))
    gx = (grad_y - (grad_beta + x_hat * grad_gamma) / m) * (gamma * inv_std)
    return gx, grad_gamma, grad_beta


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(grad_y, x):
    return np.where(x > 0, grad_y, 0).astype(grad_y.dtype, copy=False)
