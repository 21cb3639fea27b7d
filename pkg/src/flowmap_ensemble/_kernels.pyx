# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernel: one full epoch of mini-batch updates.

Matrices are row-major; each product is issued to column-major BLAS as the
transposed problem, so no copies are needed.
"""
import numpy as np

from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport dgemm

cdef enum:
    SGD = 0


cdef inline void mm(double *a, double *w, double *c, int rows, int k, int cols) noexcept nogil:
    # c[rows, cols] = a[rows, k] @ w[k, cols]
    cdef double one = 1.0, zero = 0.0
    dgemm(b"N", b"N", &cols, &rows, &k, &one, w, &cols, a, &k, &zero, c, &cols)


cdef inline void mm_tn(double *a, double *d, double *c, int k, int rows, int cols) noexcept nogil:
    # c[rows, cols] = a[k, rows].T @ d[k, cols]
    cdef double one = 1.0, zero = 0.0
    dgemm(b"N", b"T", &cols, &rows, &k, &one, d, &cols, a, &rows, &zero, c, &cols)


cdef inline void mm_nt(double *d, double *w, double *c, int rows, int k, int cols) noexcept nogil:
    # c[rows, cols] = d[rows, k] @ w[cols, k].T
    cdef double one = 1.0, zero = 0.0
    dgemm(b"T", b"N", &cols, &rows, &k, &one, w, &k, d, &k, &zero, c, &cols)


def train_epoch(const double[:, ::1] inputs, const double[:, ::1] residuals, perm_in,
                Py_ssize_t batch_size, widths_in, double[::1] params, int method,
                double lr, double[::1] m, double[::1] v, long t,
                double beta1=0.9, double beta2=0.999, double eps=1e-8):
    """Run one epoch in place; returns the updated Adam step count."""
    cdef long long[::1] perm = np.ascontiguousarray(perm_in, dtype=np.int64)
    cdef long long[::1] widths = np.ascontiguousarray(widths_in, dtype=np.int64)
    cdef Py_ssize_t n_layers = widths.shape[0] - 1
    cdef Py_ssize_t n = perm.shape[0]
    cdef Py_ssize_t n_params = params.shape[0]
    cdef Py_ssize_t l, r, j, i, start, nb, row, off
    cdef int a_w, b_w, inb
    cdef Py_ssize_t max_w = 0
    cdef Py_ssize_t total_act = 0
    cdef double s, g, mh, vh, bc1, bc2, scale
    cdef Py_ssize_t views_nb = -1
    views = None

    if inputs.shape[1] != widths[0] or residuals.shape[1] != widths[n_layers]:
        raise ValueError("data widths do not match the architecture")

    woff_np = np.zeros(n_layers, dtype=np.int64)
    boff_np = np.zeros(n_layers, dtype=np.int64)
    aoff_np = np.zeros(n_layers + 1, dtype=np.int64)
    cdef long long[::1] woff = woff_np
    cdef long long[::1] boff = boff_np
    cdef long long[::1] aoff = aoff_np
    off = 0
    for l in range(n_layers):
        woff[l] = off
        off += widths[l] * widths[l + 1]
        boff[l] = off
        off += widths[l + 1]
    if off != n_params:
        raise ValueError("parameter vector length does not match the architecture")
    for l in range(n_layers + 1):
        aoff[l] = total_act
        total_act += batch_size * widths[l]
        if widths[l] > max_w:
            max_w = widths[l]

    acts_np = np.empty(total_act)
    d1_np = np.empty(batch_size * max_w)
    d2_np = np.empty(batch_size * max_w)
    grad_np = np.empty(n_params)
    cdef double[::1] acts = acts_np
    cdef double[::1] grad = grad_np
    cdef double[::1] d1 = d1_np
    cdef double[::1] d2 = d2_np
    cdef double *p = &params[0]
    cdef double *gp = &grad[0]
    cdef double *act = &acts[0]
    cdef double *delta = &d1[0]
    cdef double *spare = &d2[0]
    cdef double *tmp
    cdef double *mp = &m[0]
    cdef double *vp = &v[0]
    cdef double *x
    cdef double *out

    with nogil:
        start = 0
        while start < n:
            nb = batch_size if start + batch_size <= n else n - start
            inb = <int> nb
            x = act + aoff[0]
            for r in range(nb):
                row = perm[start + r]
                for j in range(widths[0]):
                    x[r * widths[0] + j] = inputs[row, j]

            # forward; the last slot of ``acts`` holds the raw output
            for l in range(n_layers):
                a_w = <int> widths[l]
                b_w = <int> widths[l + 1]
                out = act + aoff[l + 1]
                mm(act + aoff[l], p + woff[l], out, inb, a_w, b_w)
                for r in range(nb):
                    for j in range(b_w):
                        out[r * b_w + j] += p[boff[l] + j]
                if l < n_layers - 1:
                    # numpy's vectorized tanh is several times faster than libm's
                    with gil:
                        if nb != views_nb:
                            views = [acts_np[aoff[q + 1]:aoff[q + 1] + nb * widths[q + 1]]
                                     for q in range(n_layers - 1)]
                            views_nb = nb
                        np.tanh(views[l], out=views[l])

            b_w = <int> widths[n_layers]
            out = act + aoff[n_layers]
            scale = 2.0 / nb
            for r in range(nb):
                row = perm[start + r]
                for j in range(b_w):
                    delta[r * b_w + j] = scale * (out[r * b_w + j] - residuals[row, j])

            # reverse pass
            for l in range(n_layers - 1, -1, -1):
                a_w = <int> widths[l]
                b_w = <int> widths[l + 1]
                mm_tn(act + aoff[l], delta, gp + woff[l], inb, a_w, b_w)
                for j in range(b_w):
                    s = 0.0
                    for r in range(nb):
                        s += delta[r * b_w + j]
                    gp[boff[l] + j] = s
                if l > 0:
                    mm_nt(delta, p + woff[l], spare, inb, b_w, a_w)
                    x = act + aoff[l]
                    for i in range(nb * a_w):
                        spare[i] *= 1.0 - x[i] * x[i]
                    tmp = delta
                    delta = spare
                    spare = tmp

            if method == SGD:
                for i in range(n_params):
                    p[i] = p[i] - lr * gp[i]
            else:
                t += 1
                bc1 = 1.0 - beta1 ** t
                bc2 = 1.0 - beta2 ** t
                for i in range(n_params):
                    g = gp[i]
                    mp[i] = beta1 * mp[i] + (1.0 - beta1) * g
                    vp[i] = beta2 * vp[i] + (1.0 - beta2) * (g * g)
                    mh = mp[i] / bc1
                    vh = vp[i] / bc2
                    p[i] = p[i] - lr * mh / (sqrt(vh) + eps)
            start += nb
    return t
