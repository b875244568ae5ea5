# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels mirroring ``seisnet._pykernels`` one-for-one.

GEMMs go straight to BLAS through ``scipy.linalg.cython_blas``; the
elementwise and reduction passes (batch norm, ReLU, pooling, padding and
col2im scatter) are plain C loops. Arrays are channels-last and C-contiguous.
"""

import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport sqrt
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport sgemm, dgemm

cnp.import_array()

NAME = "compiled"


cdef inline void _gemm(char ta, char tb, int m, int n, int k,
                       floating *a, int lda, floating *b, int ldb,
                       floating beta, floating *c, int ldc) noexcept nogil:
    # column-major GEMM: C = op(A) op(B) + beta C
    cdef float one_f = 1.0
    cdef double one_d = 1.0
    cdef float beta_f
    cdef double beta_d
    if floating is float:
        beta_f = beta
        sgemm(&ta, &tb, &m, &n, &k, &one_f, a, &lda, b, &ldb, &beta_f, c, &ldc)
    else:
        beta_d = beta
        dgemm(&ta, &tb, &m, &n, &k, &one_d, a, &lda, b, &ldb, &beta_d, c, &ldc)


def _contig(a):
    return np.ascontiguousarray(a)


cdef void _pad_into(floating[:, :, ::1] x, floating[:, :, ::1] xp, Py_ssize_t pad_left) noexcept nogil:
    cdef Py_ssize_t b, t, c
    cdef Py_ssize_t nb = x.shape[0], n = x.shape[1], nc = x.shape[2]
    for b in range(nb):
        for t in range(n):
            for c in range(nc):
                xp[b, pad_left + t, c] = x[b, t, c]


def conv1d_forward(x, w, bias, Py_ssize_t stride, Py_ssize_t pad_left, Py_ssize_t out_len):
    x = _contig(x)
    w = _contig(w)
    cdef Py_ssize_t nb = x.shape[0], n = x.shape[1], c_in = x.shape[2]
    cdef Py_ssize_t k = w.shape[0], c_out = w.shape[2]
    cdef Py_ssize_t padded_len = max((out_len - 1) * stride + k, pad_left + n)
    xp = np.zeros((nb, padded_len, c_in), dtype=x.dtype)
    y = np.empty((nb, out_len, c_out), dtype=x.dtype)
    if x.dtype == np.float32:
        _conv_fwd[float](x, xp, w, bias.astype(np.float32, copy=False), y, stride, pad_left)
    else:
        _conv_fwd[double](x, xp, w, bias.astype(np.float64, copy=False), y, stride, pad_left)
    return y


cdef void _conv_fwd(floating[:, :, ::1] x, floating[:, :, ::1] xp, floating[:, :, ::1] w,
                    floating[::1] bias, floating[:, :, ::1] y,
                    Py_ssize_t stride, Py_ssize_t pad_left):
    cdef Py_ssize_t nb = x.shape[0], c_in = x.shape[2]
    cdef Py_ssize_t padded_len = xp.shape[1]
    cdef Py_ssize_t k = w.shape[0], c_out = w.shape[2], out_len = y.shape[1]
    cdef Py_ssize_t b, t, c, j, rows
    cdef floating[:, ::1] acc
    cdef floating[:, ::1] cols
    _pad_into(x, xp, pad_left)
    if stride == 1:
        rows = nb * padded_len - k + 1
        acc_arr = np.empty((nb * padded_len, c_out), dtype=np.asarray(x).dtype)
        acc = acc_arr
        with nogil:
            for j in range(k):
                _gemm(c'N', c'N', <int>c_out, <int>rows, <int>c_in,
                      &w[j, 0, 0], <int>c_out, &xp[0, 0, 0] + j * c_in, <int>c_in,
                      <floating>(0.0 if j == 0 else 1.0), &acc[0, 0], <int>c_out)
            for b in range(nb):
                for t in range(out_len):
                    for c in range(c_out):
                        y[b, t, c] = acc[b * padded_len + t, c] + bias[c]
        return
    cols_arr = np.empty((nb * out_len, k * c_in), dtype=np.asarray(x).dtype)
    cols = cols_arr
    with nogil:
        _im2col(xp, cols, k, stride, out_len)
        _gemm(c'N', c'N', <int>c_out, <int>(nb * out_len), <int>(k * c_in),
              &w[0, 0, 0], <int>c_out, &cols[0, 0], <int>(k * c_in),
              <floating>0.0, &y[0, 0, 0], <int>c_out)
        for b in range(nb):
            for t in range(out_len):
                for c in range(c_out):
                    y[b, t, c] += bias[c]


cdef void _im2col(floating[:, :, ::1] xp, floating[:, ::1] cols, Py_ssize_t k,
                  Py_ssize_t stride, Py_ssize_t out_len) noexcept nogil:
    cdef Py_ssize_t nb = xp.shape[0], c_in = xp.shape[2]
    cdef Py_ssize_t b, t, j, c, r
    for b in range(nb):
        for t in range(out_len):
            r = b * out_len + t
            for j in range(k):
                for c in range(c_in):
                    cols[r, j * c_in + c] = xp[b, t * stride + j, c]


def conv1d_backward(grad_y, x, w, Py_ssize_t stride, Py_ssize_t pad_left):
    grad_y = _contig(grad_y)
    x = _contig(x)
    w = _contig(w)
    cdef Py_ssize_t nb = x.shape[0], n = x.shape[1], c_in = x.shape[2]
    cdef Py_ssize_t k = w.shape[0], c_out = w.shape[2], out_len = grad_y.shape[1]
    cdef Py_ssize_t padded_len = max((out_len - 1) * stride + k, pad_left + n)
    xp = np.zeros((nb, padded_len, c_in), dtype=x.dtype)
    gxp = np.zeros((nb, padded_len, c_in), dtype=x.dtype)
    grad_w = np.empty_like(w)
    grad_b = np.empty(c_out, dtype=x.dtype)
    if x.dtype == np.float32:
        _conv_bwd[float](grad_y, x, xp, w, gxp, grad_w, grad_b, stride, pad_left)
    else:
        _conv_bwd[double](grad_y, x, xp, w, gxp, grad_w, grad_b, stride, pad_left)
    return np.ascontiguousarray(gxp[:, pad_left:pad_left + n]), grad_w, grad_b


cdef void _conv_bwd(floating[:, :, ::1] gy, floating[:, :, ::1] x, floating[:, :, ::1] xp,
                    floating[:, :, ::1] w, floating[:, :, ::1] gxp,
                    floating[:, :, ::1] grad_w, floating[::1] grad_b,
                    Py_ssize_t stride, Py_ssize_t pad_left):
    cdef Py_ssize_t nb = x.shape[0], c_in = x.shape[2]
    cdef Py_ssize_t padded_len = xp.shape[1]
    cdef Py_ssize_t k = w.shape[0], c_out = w.shape[2], out_len = gy.shape[1]
    cdef Py_ssize_t b, t, c, j, rows
    cdef double s
    cdef floating[:, ::1] g
    cdef floating[:, ::1] cols
    cdef floating[:, ::1] gcols
    dt = np.asarray(x).dtype
    _pad_into(x, xp, pad_left)
    for c in range(c_out):
        s = 0.0
        for b in range(nb):
            for t in range(out_len):
                s += gy[b, t, c]
        grad_b[c] = <floating>s
    if stride == 1:
        rows = nb * padded_len - k + 1
        g_arr = np.zeros((nb * padded_len, c_out), dtype=dt)
        g = g_arr
        with nogil:
            for b in range(nb):
                for t in range(out_len):
                    for c in range(c_out):
                        g[b * padded_len + t, c] = gy[b, t, c]
            for j in range(k):
                _gemm(c'N', c'T', <int>c_out, <int>c_in, <int>rows,
                      &g[0, 0], <int>c_out, &xp[0, 0, 0] + j * c_in, <int>c_in,
                      <floating>0.0, &grad_w[j, 0, 0], <int>c_out)
                _gemm(c'T', c'N', <int>c_in, <int>rows, <int>c_out,
                      &w[j, 0, 0], <int>c_out, &g[0, 0], <int>c_out,
                      <floating>1.0, &gxp[0, 0, 0] + j * c_in, <int>c_in)
        return
    cols_arr = np.empty((nb * out_len, k * c_in), dtype=dt)
    gcols_arr = np.empty((nb * out_len, k * c_in), dtype=dt)
    cols = cols_arr
    gcols = gcols_arr
    with nogil:
        _im2col(xp, cols, k, stride, out_len)
        _gemm(c'N', c'T', <int>c_out, <int>(k * c_in), <int>(nb * out_len),
              &gy[0, 0, 0], <int>c_out, &cols[0, 0], <int>(k * c_in),
              <floating>0.0, &grad_w[0, 0, 0], <int>c_out)
        _gemm(c'T', c'N', <int>(k * c_in), <int>(nb * out_len), <int>c_out,
              &w[0, 0, 0], <int>c_out, &gy[0, 0, 0], <int>c_out,
              <floating>0.0, &gcols[0, 0], <int>(k * c_in))
        for b in range(nb):
            for t in range(out_len):
                for j in range(k):
                    for c in range(c_in):
                        gxp[b, t * stride + j, c] += gcols[b * out_len + t, j * c_in + c]


def avgpool1d_forward(x, Py_ssize_t window, Py_ssize_t stride, Py_ssize_t pad_left, Py_ssize_t out_len):
    x = _contig(x)
    y = np.empty((x.shape[0], out_len, x.shape[2]), dtype=x.dtype)
    if x.dtype == np.float32:
        _pool_fwd[float](x, y, window, stride, pad_left)
    else:
        _pool_fwd[double](x, y, window, stride, pad_left)
    return y


cdef void _pool_fwd(floating[:, :, ::1] x, floating[:, :, ::1] y, Py_ssize_t window,
                    Py_ssize_t stride, Py_ssize_t pad_left) noexcept nogil:
    cdef Py_ssize_t nb = x.shape[0], n = x.shape[1], nc = x.shape[2], out_len = y.shape[1]
    cdef Py_ssize_t b, t, c, i, lo, hi
    cdef floating cnt
    for b in range(nb):
        for t in range(out_len):
            lo = t * stride - pad_left
            hi = lo + window
            if lo < 0:
                lo = 0
            if hi > n:
                hi = n
            cnt = <floating>(hi - lo)
            for c in range(nc):
                y[b, t, c] = 0
            for i in range(lo, hi):
                for c in range(nc):
                    y[b, t, c] += x[b, i, c]
            for c in range(nc):
                y[b, t, c] = y[b, t, c] / cnt


def avgpool1d_backward(grad_y, Py_ssize_t n, Py_ssize_t window, Py_ssize_t stride, Py_ssize_t pad_left):
    grad_y = _contig(grad_y)
    gx = np.zeros((grad_y.shape[0], n, grad_y.shape[2]), dtype=grad_y.dtype)
    if grad_y.dtype == np.float32:
        _pool_bwd[float](grad_y, gx, window, stride, pad_left)
    else:
        _pool_bwd[double](grad_y, gx, window, stride, pad_left)
    return gx


cdef void _pool_bwd(floating[:, :, ::1] gy, floating[:, :, ::1] gx, Py_ssize_t window,
                    Py_ssize_t stride, Py_ssize_t pad_left) noexcept nogil:
    cdef Py_ssize_t nb = gy.shape[0], out_len = gy.shape[1], nc = gy.shape[2], n = gx.shape[1]
    cdef Py_ssize_t b, t, c, i, lo, hi
    cdef floating cnt
    for b in range(nb):
        for t in range(out_len):
            lo = t * stride - pad_left
            hi = lo + window
            if lo < 0:
                lo = 0
            if hi > n:
                hi = n
            cnt = <floating>(hi - lo)
            for i in range(lo, hi):
                for c in range(nc):
                    gx[b, i, c] += gy[b, t, c] / cnt


def batchnorm_train_forward(x, gamma, beta, double eps):
    x = _contig(x)
    dt = x.dtype
    nc = x.shape[2]
    y = np.empty_like(x)
    x_hat = np.empty_like(x)
    mean = np.empty(nc, dtype=dt)
    var = np.empty(nc, dtype=dt)
    inv_std = np.empty(nc, dtype=dt)
    if dt == np.float32:
        _bn_train_fwd[float](x, _contig(gamma).astype(dt, copy=False), _contig(beta).astype(dt, copy=False),
                             eps, y, x_hat, mean, var, inv_std)
    else:
        _bn_train_fwd[double](x, _contig(gamma).astype(dt, copy=False), _contig(beta).astype(dt, copy=False),
                              eps, y, x_hat, mean, var, inv_std)
    return y, x_hat, mean, var, inv_std


cdef void _bn_train_fwd(floating[:, :, ::1] x, floating[::1] gamma, floating[::1] beta, double eps,
                        floating[:, :, ::1] y, floating[:, :, ::1] x_hat,
                        floating[::1] mean, floating[::1] var, floating[::1] inv_std) noexcept nogil:
    cdef Py_ssize_t nb = x.shape[0], n = x.shape[1], nc = x.shape[2]
    cdef Py_ssize_t b, t, c
    cdef double m = <double>(nb * n)
    cdef double d
    cdef floating xh
    cdef double *acc = <double *>malloc(2 * nc * sizeof(double))
    cdef double *acc2 = acc + nc
    for c in range(nc):
        acc[c] = 0
        acc2[c] = 0
    for b in range(nb):
        for t in range(n):
            for c in range(nc):
                acc[c] += x[b, t, c]
    for c in range(nc):
        acc[c] /= m
        mean[c] = <floating>acc[c]
    for b in range(nb):
        for t in range(n):
            for c in range(nc):
                d = x[b, t, c] - acc[c]
                acc2[c] += d * d
    for c in range(nc):
        var[c] = <floating>(acc2[c] / m)
        inv_std[c] = <floating>(1.0 / sqrt(acc2[c] / m + eps))
    free(acc)
    for b in range(nb):
        for t in range(n):
            for c in range(nc):
                xh = (x[b, t, c] - mean[c]) * inv_std[c]
                x_hat[b, t, c] = xh
                y[b, t, c] = xh * gamma[c] + beta[c]


def batchnorm_infer_forward(x, gamma, beta, mean, var, double eps):
    x = _contig(x)
    dt = x.dtype
    scale = (gamma / np.sqrt(var + eps)).astype(dt)
    shift = (beta - mean * scale).astype(dt)
    y = np.empty_like(x)
    if dt == np.float32:
        _affine[float](x, scale, shift, y)
    else:
        _affine[double](x, scale, shift, y)
    return y


cdef void _affine(floating[:, :, ::1] x, floating[::1] scale, floating[::1] shift,
                  floating[:, :, ::1] y) noexcept nogil:
    cdef Py_ssize_t b, t, c
    for b in range(x.shape[0]):
        for t in range(x.shape[1]):
            for c in range(x.shape[2]):
                y[b, t, c] = x[b, t, c] * scale[c] + shift[c]


def batchnorm_train_backward(grad_y, x_hat, gamma, inv_std):
    grad_y = _contig(grad_y)
    x_hat = _contig(x_hat)
    dt = grad_y.dtype
    nc = grad_y.shape[2]
    gx = np.empty_like(grad_y)
    grad_gamma = np.empty(nc, dtype=dt)
    grad_beta = np.empty(nc, dtype=dt)
    if dt == np.float32:
        _bn_train_bwd[float](grad_y, x_hat, gamma.astype(dt, copy=False), inv_std.astype(dt, copy=False),
                             gx, grad_gamma, grad_beta)
    else:
        _bn_train_bwd[double](grad_y, x_hat, gamma.astype(dt, copy=False), inv_std.astype(dt, copy=False),
                              gx, grad_gamma, grad_beta)
    return gx, grad_gamma, grad_beta


cdef void _bn_train_bwd(floating[:, :, ::1] gy, floating[:, :, ::1] x_hat, floating[::1] gamma,
                        floating[::1] inv_std, floating[:, :, ::1] gx,
                        floating[::1] grad_gamma, floating[::1] grad_beta) noexcept nogil:
    cdef Py_ssize_t nb = gy.shape[0], n = gy.shape[1], nc = gy.shape[2]
    cdef Py_ssize_t b, t, c
    cdef floating m = <floating>(nb * n)
    cdef double *acc = <double *>malloc(2 * nc * sizeof(double))
    cdef double *acc2 = acc + nc
    for c in range(nc):
        acc[c] = 0
        acc2[c] = 0
    for b in range(nb):
        for t in range(n):
            for c in range(nc):
                acc[c] += gy[b, t, c]
                acc2[c] += gy[b, t, c] * x_hat[b, t, c]
    for c in range(nc):
        grad_beta[c] = <floating>acc[c]
        grad_gamma[c] = <floating>acc2[c]
    free(acc)
    for b in range(nb):
        for t in range(n):
            for c in range(nc):
                gx[b, t, c] = (gy[b, t, c] - (grad_beta[c] + x_hat[b, t, c] * grad_gamma[c]) / m) \
                    * (gamma[c] * inv_std[c])


def relu_forward(x):
    x = _contig(x)
    y = np.empty_like(x)
    if x.dtype == np.float32:
        _relu_fwd[float](x.reshape(-1), y.reshape(-1))
    else:
        _relu_fwd[double](x.reshape(-1), y.reshape(-1))
    return y


cdef void _relu_fwd(floating[::1] x, floating[::1] y) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef floating *px = &x[0]
    cdef floating *py = &y[0]
    cdef floating zero = 0
    for i in range(n):
        py[i] = px[i] * (px[i] > 0) + zero


def relu_backward(grad_y, x):
    grad_y = _contig(grad_y)
    x = _contig(x)
    gx = np.empty_like(grad_y)
    if grad_y.dtype == np.float32:
        _relu_bwd[float](grad_y.reshape(-1), x.reshape(-1), gx.reshape(-1))
    else:
        _relu_bwd[double](grad_y.reshape(-1), x.reshape(-1), gx.reshape(-1))
    return gx


cdef void _relu_bwd(floating[::1] gy, floating[::1] x, floating[::1] gx) noexcept nogil:
    # multiply by the mask instead of branching: random signs defeat the predictor
    cdef Py_ssize_t i, n = x.shape[0]
    cdef floating *pg = &gy[0]
    cdef floating *px = &x[0]
    cdef floating *po = &gx[0]
    cdef floating zero = 0
    for i in range(n):
        po[i] = pg[i] * (px[i] > 0) + zero
