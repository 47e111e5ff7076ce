# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled recurrent sequence kernels.

Same contract and cache layout as ``reference``: BLAS (via numpy) handles
the projections, the gate arithmetic and state carries are fused into C
loops instead of a dozen numpy temporaries per step. Input projections are
hoisted out of the time loop; only the recurrent term stays sequential.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as cexp, tanh as ctanh

cnp.import_array()


cdef inline double _sig(double z) nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + cexp(-z))
    e = cexp(z)
    return e / (1.0 + e)


def _sequence_grads(dx_proj3, dh_proj3, x3, hprev, wx, wh, Py_ssize_t steps):
    n = x3.shape[0]
    max_len = x3.shape[1]
    d = x3.shape[2]
    g_width = dx_proj3.shape[2] if steps else wx.shape[1]
    dxp = dx_proj3.transpose(1, 0, 2).reshape(n * steps, g_width)
    dhp = dh_proj3.transpose(1, 0, 2).reshape(n * steps, g_width)
    x2 = x3[:, :steps, :].reshape(n * steps, d)
    hp2 = hprev.transpose(1, 0, 2).reshape(n * steps, wh.shape[0])
    dx3 = np.zeros((n, max_len, d))
    if steps:
        dx3[:, :steps, :] = np.dot(dxp, wx.T).reshape(n, steps, d)
    dwx = np.dot(x2.T, dxp)
    dwh = np.dot(hp2.T, dhp)
    db = dxp.sum(axis=0)
    return dx3.reshape(n * max_len, d), dwx, dwh, db


def lstm_forward(x, lengths, wx, wh, b):
    lengths = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef cnp.int64_t[::1] lens = lengths
    cdef Py_ssize_t n = lengths.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t max_len = x.shape[0] // n if n else 0
    cdef Py_ssize_t h = wh.shape[0]
    x3 = np.ascontiguousarray(x).reshape(n, max_len, d)
    cdef Py_ssize_t steps = int(lengths.max()) if n else 0

    xp = np.dot(x, wx)
    xp += b
    xp3 = xp.reshape(n, max_len, 4 * h)
    hs = np.zeros((n, h))
    cs = np.zeros((n, h))
    gates = np.zeros((steps, n, 4 * h))
    tanc = np.zeros((steps, n, h))
    cprev = np.zeros((steps, n, h))
    hprev = np.zeros((steps, n, h))

    cdef double[:, ::1] hs_v = hs
    cdef double[:, ::1] cs_v = cs
    cdef double[:, :, ::1] xp_v = xp3
    cdef double[:, :, ::1] gates_v = gates
    cdef double[:, :, ::1] tanc_v = tanc
    cdef double[:, :, ::1] cprev_v = cprev
    cdef double[:, :, ::1] hprev_v = hprev
    cdef double[:, ::1] rec_v
    cdef Py_ssize_t t, i, j
    cdef double gi, gf, gc, go, c_new, tc
    cdef bint active

    for t in range(steps):
        rec = np.dot(hs, wh)
        rec_v = rec
        with nogil:
            for i in range(n):
                active = t < lens[i]
                for j in range(h):
                    gi = _sig(xp_v[i, t, j] + rec_v[i, j])
                    gf = _sig(xp_v[i, t, h + j] + rec_v[i, h + j])
                    gc = ctanh(xp_v[i, t, 2 * h + j] + rec_v[i, 2 * h + j])
                    go = _sig(xp_v[i, t, 3 * h + j] + rec_v[i, 3 * h + j])
                    gates_v[t, i, j] = gi
                    gates_v[t, i, h + j] = gf
                    gates_v[t, i, 2 * h + j] = gc
                    gates_v[t, i, 3 * h + j] = go
                    cprev_v[t, i, j] = cs_v[i, j]
                    hprev_v[t, i, j] = hs_v[i, j]
                    c_new = gf * cs_v[i, j] + gi * gc
                    tc = ctanh(c_new)
                    tanc_v[t, i, j] = tc
                    if active:
                        cs_v[i, j] = c_new
                        hs_v[i, j] = go * tc

    cache = (x3, lengths, wx, wh, steps, gates, tanc, cprev, hprev)
    return hs, cache


def lstm_backward(dh_final, cache):
    x3, lengths, wx, wh, steps_py, gates, tanc, cprev, hprev = cache
    cdef Py_ssize_t steps = steps_py
    cdef Py_ssize_t n = x3.shape[0]
    cdef Py_ssize_t h = wh.shape[0]
    cdef cnp.int64_t[::1] lens = np.ascontiguousarray(lengths, dtype=np.int64)

    dz3 = np.zeros((steps, n, 4 * h))
    dh = np.array(dh_final, dtype=np.float64, copy=True)
    dc = np.zeros((n, h))

    cdef double[:, ::1] dh_v = dh
    cdef double[:, ::1] dc_v = dc
    cdef double[:, :, ::1] dz3_v = dz3
    cdef double[:, :, ::1] gates_v = gates
    cdef double[:, :, ::1] tanc_v = tanc
    cdef double[:, :, ::1] cprev_v = cprev
    cdef Py_ssize_t t, i, j
    cdef double gi, gf, gc, go, tc, dct, dh_a, di, df, dgc, do_
    cdef bint active

    for t in range(steps - 1, -1, -1):
        with nogil:
            for i in range(n):
                active = t < lens[i]
                if active:
                    for j in range(h):
                        gi = gates_v[t, i, j]
                        gf = gates_v[t, i, h + j]
                        gc = gates_v[t, i, 2 * h + j]
                        go = gates_v[t, i, 3 * h + j]
                        tc = tanc_v[t, i, j]
                        dh_a = dh_v[i, j]
                        dct = dc_v[i, j] + dh_a * go * (1.0 - tc * tc)
                        do_ = dh_a * tc
                        di = dct * gc
                        df = dct * cprev_v[t, i, j]
                        dgc = dct * gi
                        dz3_v[t, i, j] = di * gi * (1.0 - gi)
                        dz3_v[t, i, h + j] = df * gf * (1.0 - gf)
                        dz3_v[t, i, 2 * h + j] = dgc * (1.0 - gc * gc)
                        dz3_v[t, i, 3 * h + j] = do_ * go * (1.0 - go)
                        dc_v[i, j] = dct * gf
                        dh_v[i, j] = 0.0
        dh += np.dot(dz3[t], wh.T)

    return _sequence_grads(dz3, dz3, x3, hprev, wx, wh, steps)


def gru_forward(x, lengths, wx, wh, b):
    lengths = np.ascontiguousarray(lengths, dtype=np.int64)
    cdef cnp.int64_t[::1] lens = lengths
    cdef Py_ssize_t n = lengths.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t max_len = x.shape[0] // n if n else 0
    cdef Py_ssize_t h = wh.shape[0]
    x3 = np.ascontiguousarray(x).reshape(n, max_len, d)
    cdef Py_ssize_t steps = int(lengths.max()) if n else 0

    xp = np.dot(x, wx)
    xp += b
    xp3 = xp.reshape(n, max_len, 3 * h)
    hs = np.zeros((n, h))
    gates = np.zeros((steps, n, 3 * h))
    ahn = np.zeros((steps, n, h))
    hprev = np.zeros((steps, n, h))

    cdef double[:, ::1] hs_v = hs
    cdef double[:, :, ::1] xp_v = xp3
    cdef double[:, :, ::1] gates_v = gates
    cdef double[:, :, ::1] ahn_v = ahn
    cdef double[:, :, ::1] hprev_v = hprev
    cdef double[:, ::1] ah_v
    cdef Py_ssize_t t, i, j
    cdef double gr, gz, gn
    cdef bint active

    for t in range(steps):
        ah = np.dot(hs, wh)
        ah_v = ah
        with nogil:
            for i in range(n):
                active = t < lens[i]
                for j in range(h):
                    gr = _sig(xp_v[i, t, j] + ah_v[i, j])
                    gz = _sig(xp_v[i, t, h + j] + ah_v[i, h + j])
                    gn = ctanh(xp_v[i, t, 2 * h + j] + gr * ah_v[i, 2 * h + j])
                    hprev_v[t, i, j] = hs_v[i, j]
                    ahn_v[t, i, j] = ah_v[i, 2 * h + j]
                    gates_v[t, i, j] = gr
                    gates_v[t, i, h + j] = gz
                    gates_v[t, i, 2 * h + j] = gn
                    if active:
                        hs_v[i, j] = gz * hs_v[i, j] + (1.0 - gz) * gn

    cache = (x3, lengths, wx, wh, steps, gates, ahn, hprev)
    return hs, cache


def gru_backward(dh_final, cache):
    x3, lengths, wx, wh, steps_py, gates, ahn, hprev = cache
    cdef Py_ssize_t steps = steps_py
    cdef Py_ssize_t n = x3.shape[0]
    cdef Py_ssize_t h = wh.shape[0]
    cdef cnp.int64_t[::1] lens = np.ascontiguousarray(lengths, dtype=np.int64)

    dax3 = np.zeros((steps, n, 3 * h))
    dah3 = np.zeros((steps, n, 3 * h))
    dh = np.array(dh_final, dtype=np.float64, copy=True)

    cdef double[:, ::1] dh_v = dh
    cdef double[:, :, ::1] dax3_v = dax3
    cdef double[:, :, ::1] dah3_v = dah3
    cdef double[:, :, ::1] gates_v = gates
    cdef double[:, :, ::1] ahn_v = ahn
    cdef double[:, :, ::1] hprev_v = hprev
    cdef Py_ssize_t t, i, j
    cdef double gr, gz, gn, dh_a, dzg, dn, dpre_n, dr, dpre_r, dpre_z
    cdef bint active

    for t in range(steps - 1, -1, -1):
        with nogil:
            for i in range(n):
                active = t < lens[i]
                if active:
                    for j in range(h):
                        gr = gates_v[t, i, j]
                        gz = gates_v[t, i, h + j]
                        gn = gates_v[t, i, 2 * h + j]
                        dh_a = dh_v[i, j]
                        dzg = dh_a * (hprev_v[t, i, j] - gn)
                        dn = dh_a * (1.0 - gz)
                        dpre_n = dn * (1.0 - gn * gn)
                        dr = dpre_n * ahn_v[t, i, j]
                        dpre_r = dr * gr * (1.0 - gr)
                        dpre_z = dzg * gz * (1.0 - gz)
                        dax3_v[t, i, j] = dpre_r
                        dax3_v[t, i, h + j] = dpre_z
                        dax3_v[t, i, 2 * h + j] = dpre_n
                        dah3_v[t, i, j] = dpre_r
                        dah3_v[t, i, h + j] = dpre_z
                        dah3_v[t, i, 2 * h + j] = dpre_n * gr
                        dh_v[i, j] = dh_a * gz
        dh += np.dot(dah3[t], wh.T)

    return _sequence_grads(dax3, dah3, x3, hprev, wx, wh, steps)
