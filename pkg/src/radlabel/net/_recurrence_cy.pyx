# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled LSTM recurrence kernel.

Mirrors _recurrence_py exactly (same signatures, same array conventions);
exists because the per-timestep recursion dominates training time and
cannot be vectorized across T.
"""

import numpy as np

cimport cython
from libc.math cimport exp, expf, tanh, tanhf

ctypedef fused floating:
    float
    double


cdef inline floating _sig(floating x) noexcept nogil:
    cdef floating e
    if x >= 0:
        if floating is float:
            return <floating>1 / (<floating>1 + expf(-x))
        else:
            return 1.0 / (1.0 + exp(-x))
    if floating is float:
        e = expf(x)
    else:
        e = exp(x)
    return e / (<floating>1 + e)


cdef inline floating _tanh(floating x) noexcept nogil:
    if floating is float:
        return tanhf(x)
    else:
        return tanh(x)


def sequence_forward(floating[:, :, ::1] x_gates, floating[:, ::1] wh,
                     floating[:, ::1] rec_mask):
    """Run the gate recursion over T steps from zero initial state."""
    cdef Py_ssize_t B = x_gates.shape[0]
    cdef Py_ssize_t T = x_gates.shape[1]
    cdef Py_ssize_t H4 = x_gates.shape[2]
    cdef Py_ssize_t H = H4 // 4

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    gates_arr = np.empty((B, T, H4), dtype=dtype)
    cells_arr = np.empty((B, T, H), dtype=dtype)
    tanh_arr = np.empty((B, T, H), dtype=dtype)
    hidden_arr = np.empty((B, T, H), dtype=dtype)
    pre_arr = np.empty((B, H4), dtype=dtype)
    prev_h_arr = np.zeros((B, H), dtype=dtype)
    prev_c_arr = np.zeros((B, H), dtype=dtype)

    cdef floating[:, :, ::1] gates = gates_arr
    cdef floating[:, :, ::1] cells = cells_arr
    cdef floating[:, :, ::1] tanh_cells = tanh_arr
    cdef floating[:, :, ::1] hidden = hidden_arr
    cdef floating[:, ::1] pre = pre_arr
    cdef floating[:, ::1] prev_h = prev_h_arr
    cdef floating[:, ::1] prev_c = prev_c_arr

    cdef Py_ssize_t b, t, j, k
    cdef floating hm, gi, gf, gg, go, c, tc

    with nogil:
        for t in range(T):
            for b in range(B):
                for j in range(H4):
                    pre[b, j] = x_gates[b, t, j]
                for k in range(H):
                    hm = prev_h[b, k] * rec_mask[b, k]
                    if hm != 0:
                        for j in range(H4):
                            pre[b, j] += hm * wh[k, j]
                for k in range(H):
                    gi = _sig(pre[b, k])
                    gf = _sig(pre[b, H + k])
                    gg = _tanh(pre[b, 2 * H + k])
                    go = _sig(pre[b, 3 * H + k])
                    c = gf * prev_c[b, k] + gi * gg
                    tc = _tanh(c)
                    gates[b, t, k] = gi
                    gates[b, t, H + k] = gf
                    gates[b, t, 2 * H + k] = gg
                    gates[b, t, 3 * H + k] = go
                    cells[b, t, k] = c
                    tanh_cells[b, t, k] = tc
                    hidden[b, t, k] = go * tc
                    prev_c[b, k] = c
                    prev_h[b, k] = go * tc
    return gates_arr, cells_arr, tanh_arr, hidden_arr


def sequence_backward(floating[:, :, ::1] gates, floating[:, :, ::1] cells,
                      floating[:, :, ::1] tanh_cells, floating[:, ::1] wh,
                      floating[:, ::1] rec_mask, floating[:, ::1] d_h_last):
    """Backpropagate a gradient on the final hidden state through time."""
    cdef Py_ssize_t B = gates.shape[0]
    cdef Py_ssize_t T = gates.shape[1]
    cdef Py_ssize_t H4 = gates.shape[2]
    cdef Py_ssize_t H = H4 // 4

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    d_pre_arr = np.empty((B, T, H4), dtype=dtype)
    dh_arr = np.array(d_h_last, dtype=dtype, copy=True)
    dc_arr = np.zeros((B, H), dtype=dtype)

    cdef floating[:, :, ::1] d_pre = d_pre_arr
    cdef floating[:, ::1] dh = dh_arr
    cdef floating[:, ::1] dc = dc_arr

    cdef Py_ssize_t b, t, j, k
    cdef floating gi, gf, gg, go, tc, c_prev, d_out, dck, acc

    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for k in range(H):
                    gi = gates[b, t, k]
                    gf = gates[b, t, H + k]
                    gg = gates[b, t, 2 * H + k]
                    go = gates[b, t, 3 * H + k]
                    tc = tanh_cells[b, t, k]
                    if t > 0:
                        c_prev = cells[b, t - 1, k]
                    else:
                        c_prev = 0
                    d_out = dh[b, k] * tc
                    dck = dc[b, k] + dh[b, k] * go * (<floating>1 - tc * tc)
                    d_pre[b, t, k] = dck * gg * gi * (<floating>1 - gi)
                    d_pre[b, t, H + k] = dck * c_prev * gf * (<floating>1 - gf)
                    d_pre[b, t, 2 * H + k] = dck * gi * (<floating>1 - gg * gg)
                    d_pre[b, t, 3 * H + k] = d_out * go * (<floating>1 - go)
                    dc[b, k] = dck * gf
                for k in range(H):
                    acc = 0
                    for j in range(H4):
                        acc += d_pre[b, t, j] * wh[k, j]
                    dh[b, k] = acc * rec_mask[b, k]
    return d_pre_arr
