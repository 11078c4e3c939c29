"""Pure-numpy LSTM recurrence kernel (fallback backend).

Only the inherently sequential part of the computation lives here: the
per-timestep gate recursion and its time-reversed gradient recursion. All
batch-parallel matrix lifting (input projections, weight-gradient
contractions) happens in the caller and is shared between backends.

Conventions, shared with the compiled twin in _recurrence_cy:
  x_gates  (B, T, 4H)  input projections x_t @ Wx + bias, gate order i,f,g,o
  wh       (H, 4H)     recurrent weights
  rec_mask (B, H)      variational dropout mask applied to h_{t-1}, constant
                       over the whole sequence (ones when inference)
"""

from __future__ import annotations

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, preserves dtype and shape."""
    x = np.asarray(x)
    scalar = x.ndim == 0
    if scalar:
        x = x[None]
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    e = np.exp(x[~positive])
    out[~positive] = e / (1.0 + e)
    return out[0] if scalar else out


def sequence_forward(
    x_gates: np.ndarray, wh: np.ndarray, rec_mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Run the gate recursion over T steps from zero initial state.

    Returns (gates, cells, tanh_cells, hidden), each (B, T, ...) with the
    post-activation values needed by sequence_backward.
    """
    B, T, H4 = x_gates.shape
    H = H4 // 4
    gates = np.empty((B, T, H4), dtype=x_gates.dtype)
    cells = np.empty((B, T, H), dtype=x_gates.dtype)
    tanh_cells = np.empty((B, T, H), dtype=x_gates.dtype)
    hidden = np.empty((B, T, H), dtype=x_gates.dtype)

    h = np.zeros((B, H), dtype=x_gates.dtype)
    c = np.zeros((B, H), dtype=x_gates.dtype)
    for t in range(T):
        pre = x_gates[:, t] + (h * rec_mask) @ wh
        gate_i = sigmoid(pre[:, :H])
        gate_f = sigmoid(pre[:, H : 2 * H])
        gate_g = np.tanh(pre[:, 2 * H : 3 * H])
        gate_o = sigmoid(pre[:, 3 * H :])
        c = gate_f * c + gate_i * gate_g
        tc = np.tanh(c)
        h = gate_o * tc
        gates[:, t, :H] = gate_i
        gates[:, t, H : 2 * H] = gate_f
        gates[:, t, 2 * H : 3 * H] = gate_g
        gates[:, t, 3 * H :] = gate_o
        cells[:, t] = c
        tanh_cells[:, t] = tc
        hidden[:, t] = h
    return gates, cells, tanh_cells, hidden


def sequence_backward(
    gates: np.ndarray,
    cells: np.ndarray,
    tanh_cells: np.ndarray,
    wh: np.ndarray,
    rec_mask: np.ndarray,
    d_h_last: np.ndarray,
) -> np.ndarray:
    """Backpropagate a gradient on the final hidden state through time.

    Returns d_pre (B, T, 4H): gradients on the gate pre-activations, from
    which the caller lifts weight, bias, and input gradients.
    """
    B, T, H4 = gates.shape
    H = H4 // 4
    d_pre = np.empty((B, T, H4), dtype=gates.dtype)
    dh = np.array(d_h_last, copy=True)
    dc = np.zeros((B, H), dtype=gates.dtype)
    for t in range(T - 1, -1, -1):
        gate_i = gates[:, t, :H]
        gate_f = gates[:, t, H : 2 * H]
        gate_g = gates[:, t, 2 * H : 3 * H]
        gate_o = gates[:, t, 3 * H :]
        tc = tanh_cells[:, t]
        c_prev = cells[:, t - 1] if t > 0 else np.zeros((B, H), dtype=gates.dtype)

        d_out = dh * tc
        dc = dc + dh * gate_o * (1.0 - tc * tc)
        d_pre[:, t, :H] = dc * gate_g * gate_i * (1.0 - gate_i)
        d_pre[:, t, H : 2 * H] = dc * c_prev * gate_f * (1.0 - gate_f)
        d_pre[:, t, 2 * H : 3 * H] = dc * gate_i * (1.0 - gate_g * gate_g)
        d_pre[:, t, 3 * H :] = d_out * gate_o * (1.0 - gate_o)

        dh = (d_pre[:, t] @ wh.T) * rec_mask
        dc = dc * gate_f
    return d_pre
