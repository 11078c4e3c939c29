"""Forward and backward passes for the sentence classifier.

Architecture: embedding lookup -> 1D spatial dropout -> bidirectional LSTM
(final hidden state of each direction, variational recurrent dropout) ->
single sigmoid unit. The loss is binary cross entropy computed from logits.

Batches are processed in equal-length groups so that no padding ever enters
the recurrence; only the first true_length tokens of a sentence exist as far
as the network is concerned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..corpus import EncodedSentence
from ..errors import InputError, NumericalError
from . import kernels
from ._recurrence_py import sigmoid
from .params import ModelDims, ModelParams, DropoutConfig, zeros_like_params


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------


@dataclass
class EncodedBatch:
    indices: np.ndarray  # (B, max_len) int32
    lengths: np.ndarray  # (B,) int32
    labels: np.ndarray   # (B,) float64

    @classmethod
    def from_sentences(cls, sentences: list[EncodedSentence]) -> "EncodedBatch":
        if not sentences:
            raise InputError("batch must be nonempty")
        if any(s.true_length < 1 for s in sentences):
            raise InputError("batch contains a sentence with true_length 0")
        return cls(
            indices=np.stack([s.indices for s in sentences]).astype(np.int32),
            lengths=np.array([s.true_length for s in sentences], dtype=np.int32),
            labels=np.array([s.label for s in sentences], dtype=np.float64),
        )

    def __len__(self) -> int:
        return len(self.lengths)

    def take(self, rows: np.ndarray) -> "EncodedBatch":
        return EncodedBatch(self.indices[rows], self.lengths[rows], self.labels[rows])


def group_rows_by_length(lengths: np.ndarray) -> list[tuple[int, np.ndarray]]:
    """(T, row_indices) groups in ascending T; row order within a group is stable."""
    return [
        (int(t), np.nonzero(lengths == t)[0])
        for t in sorted(set(int(v) for v in lengths))
    ]


# ---------------------------------------------------------------------------
# Dropout
# ---------------------------------------------------------------------------


@dataclass
class GroupMasks:
    spatial: np.ndarray  # (B', 1, D) inverted-dropout scale factors
    rec_fwd: np.ndarray  # (B', H)
    rec_bwd: np.ndarray  # (B', H)


def _inverted_mask(rng: np.random.Generator, shape, rate: float, dtype) -> np.ndarray:
    keep = (rng.random(shape) >= rate).astype(dtype)
    if rate > 0:
        keep /= dtype.type(1.0 - rate)
    return keep


def sample_dropout_masks(
    batch: EncodedBatch,
    dims: ModelDims,
    config: DropoutConfig,
    rng: np.random.Generator,
    dtype=np.float32,
) -> list[GroupMasks]:
    """One mask set per length group, drawn in deterministic group order."""
    dtype = np.dtype(dtype)
    masks = []
    for _, rows in group_rows_by_length(batch.lengths):
        b = len(rows)
        masks.append(
            GroupMasks(
                spatial=_inverted_mask(
                    rng, (b, 1, dims.embed_dim), config.spatial_rate, dtype
                ),
                rec_fwd=_inverted_mask(
                    rng, (b, dims.hidden_units), config.recurrent_rate, dtype
                ),
                rec_bwd=_inverted_mask(
                    rng, (b, dims.hidden_units), config.recurrent_rate, dtype
                ),
            )
        )
    return masks


def spatial_dropout(
    seq: np.ndarray, rate: float, rng: np.random.Generator, training: bool
) -> np.ndarray:
    """Drop whole embedding channels of a (T, D) sequence, inverted scaling."""
    if not 0.0 <= rate < 1.0:
        raise InputError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return seq
    mask = _inverted_mask(rng, (1, seq.shape[1]), rate, seq.dtype)
    return seq * mask


# ---------------------------------------------------------------------------
# Single-step / single-sequence operations
# ---------------------------------------------------------------------------


def embed(encoded: EncodedSentence, embedding: np.ndarray) -> np.ndarray:
    """Rows of the embedding matrix for the first true_length indices."""
    indices = encoded.indices[: encoded.true_length]
    if indices.size and (indices.min() < 0 or indices.max() >= embedding.shape[0]):
        raise InputError("token index out of embedding range")
    return embedding[indices]


def lstm_step(x_t, h_prev, c_prev, wx, wh, bias, rec_mask):
    """One gate update; returns (h_t, c_t, (i, f, g, o))."""
    for arr in (x_t, h_prev, c_prev):
        if not np.isfinite(arr).all():
            raise NumericalError("non-finite input to lstm_step")
    h = h_prev.shape[-1]
    pre = x_t @ wx + (h_prev * rec_mask) @ wh + bias
    gate_i = sigmoid(pre[..., :h])
    gate_f = sigmoid(pre[..., h : 2 * h])
    gate_g = np.tanh(pre[..., 2 * h : 3 * h])
    gate_o = sigmoid(pre[..., 3 * h :])
    c_t = gate_f * c_prev + gate_i * gate_g
    h_t = gate_o * np.tanh(c_t)
    return h_t, c_t, (gate_i, gate_f, gate_g, gate_o)


def head_forward(features: np.ndarray, w: np.ndarray, b: float):
    """Dense sigmoid head; returns (logit, score)."""
    logit = features @ w + b
    return logit, sigmoid(np.asarray(logit, dtype=features.dtype))


def bce_loss(logit, label):
    """Binary cross entropy from the logit: softplus(z) - y*z."""
    return np.logaddexp(0.0, logit) - label * logit


def bilstm_forward(
    seq: np.ndarray,
    params: ModelParams,
    dropout: DropoutConfig | None = None,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> np.ndarray:
    """Feature vector [h_fwd(T); h_bwd(1)] for one embedded sequence (T, D)."""
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise InputError("bilstm_forward requires a nonempty (T, D) sequence")
    h = params.wh_fwd.shape[0]
    dtype = params.dtype
    if training and dropout is not None and dropout.recurrent_rate > 0:
        if rng is None:
            raise InputError("training bilstm_forward needs an rng for masks")
        mask_f = _inverted_mask(rng, (1, h), dropout.recurrent_rate, np.dtype(dtype))
        mask_b = _inverted_mask(rng, (1, h), dropout.recurrent_rate, np.dtype(dtype))
    else:
        mask_f = np.ones((1, h), dtype=dtype)
        mask_b = np.ones((1, h), dtype=dtype)

    x = seq[None, :, :].astype(dtype, copy=False)
    fwd_gates = np.ascontiguousarray(x @ params.wx_fwd + params.bias_fwd)
    *_, hidden_f = kernels.sequence_forward(fwd_gates, params.wh_fwd, mask_f)
    bwd_gates = np.ascontiguousarray(x[:, ::-1] @ params.wx_bwd + params.bias_bwd)
    *_, hidden_b = kernels.sequence_forward(bwd_gates, params.wh_bwd, mask_b)
    return np.concatenate([hidden_f[0, -1], hidden_b[0, -1]])


# ---------------------------------------------------------------------------
# Batched forward/backward
# ---------------------------------------------------------------------------


@dataclass
class _GroupCache:
    rows: np.ndarray
    token_idx: np.ndarray      # (B', T)
    x_drop: np.ndarray         # (B', T, D) embedded inputs after spatial dropout
    spatial: np.ndarray | None
    rec_fwd: np.ndarray
    rec_bwd: np.ndarray
    fwd: tuple                 # (gates, cells, tanh_cells, hidden)
    bwd: tuple
    features: np.ndarray       # (B', 2H)


@dataclass
class ForwardResult:
    logits: np.ndarray   # (B,)
    scores: np.ndarray   # (B,)
    losses: np.ndarray   # (B,) float64
    caches: list[_GroupCache]


def forward_batch(
    params: ModelParams,
    batch: EncodedBatch,
    masks: list[GroupMasks] | None = None,
) -> ForwardResult:
    """Forward pass; masks=None means inference (dropout contributes nothing)."""
    dtype = params.dtype
    vocab = params.embedding.shape[0]
    h = params.wh_fwd.shape[0]
    if batch.indices.max() >= vocab or batch.indices.min() < 0:
        raise InputError("token index out of embedding range")

    n = len(batch)
    logits = np.empty(n, dtype=np.float64)
    caches: list[_GroupCache] = []
    groups = group_rows_by_length(batch.lengths)
    for g, (t_len, rows) in enumerate(groups):
        token_idx = batch.indices[rows][:, :t_len]
        x = params.embedding[token_idx]  # (B', T, D)
        if masks is not None:
            group_masks = masks[g]
            x = x * group_masks.spatial
            spatial = group_masks.spatial
            rec_fwd, rec_bwd = group_masks.rec_fwd, group_masks.rec_bwd
        else:
            spatial = None
            rec_fwd = np.ones((len(rows), h), dtype=dtype)
            rec_bwd = np.ones((len(rows), h), dtype=dtype)

        fwd_gates = np.ascontiguousarray(x @ params.wx_fwd + params.bias_fwd)
        fwd = kernels.sequence_forward(fwd_gates, params.wh_fwd, rec_fwd)
        bwd_gates = np.ascontiguousarray(x[:, ::-1] @ params.wx_bwd + params.bias_bwd)
        bwd = kernels.sequence_forward(bwd_gates, params.wh_bwd, rec_bwd)

        features = np.concatenate([fwd[3][:, -1], bwd[3][:, -1]], axis=1)
        logits[rows] = features @ params.head_w + params.head_b[0]
        caches.append(
            _GroupCache(
                rows=rows, token_idx=token_idx, x_drop=x, spatial=spatial,
                rec_fwd=rec_fwd, rec_bwd=rec_bwd, fwd=fwd, bwd=bwd,
                features=features,
            )
        )

    if not np.isfinite(logits).all():
        raise NumericalError("non-finite logit in forward pass")
    scores = sigmoid(logits)
    losses = bce_loss(logits, batch.labels)
    return ForwardResult(logits=logits, scores=scores, losses=losses, caches=caches)


def _masked_h_prev(hidden: np.ndarray, rec_mask: np.ndarray) -> np.ndarray:
    """h_{t-1} * mask per step, as seen by the recurrent weight product."""
    hm = np.zeros_like(hidden)
    hm[:, 1:] = hidden[:, :-1]
    hm *= rec_mask[:, None, :]
    return hm


def backward_batch(
    params: ModelParams, batch: EncodedBatch, result: ForwardResult
) -> dict[str, np.ndarray]:
    """Mean-over-batch gradients for every parameter block (full BPTT)."""
    if not result.caches:
        raise InputError("forward caches missing")
    dtype = params.dtype
    h = params.wh_fwd.shape[0]
    grads = zeros_like_params(params)
    # dL/dlogit of the mean BCE over the whole batch
    d_logit_all = ((result.scores - batch.labels) / len(batch)).astype(dtype)

    for cache in result.caches:
        d_logit = d_logit_all[cache.rows]
        grads["head_w"] += cache.features.T @ d_logit
        grads["head_b"] += d_logit.sum(keepdims=True)
        d_feat = d_logit[:, None] * params.head_w[None, :]

        d_pre_f = kernels.sequence_backward(
            *cache.fwd[:3], params.wh_fwd, cache.rec_fwd,
            np.ascontiguousarray(d_feat[:, :h]),
        )
        d_pre_b = kernels.sequence_backward(
            *cache.bwd[:3], params.wh_bwd, cache.rec_bwd,
            np.ascontiguousarray(d_feat[:, h:]),
        )

        x_fwd = cache.x_drop
        x_bwd = x_fwd[:, ::-1]
        grads["wx_fwd"] += np.tensordot(x_fwd, d_pre_f, axes=([0, 1], [0, 1]))
        grads["wx_bwd"] += np.tensordot(x_bwd, d_pre_b, axes=([0, 1], [0, 1]))
        grads["wh_fwd"] += np.tensordot(
            _masked_h_prev(cache.fwd[3], cache.rec_fwd), d_pre_f, axes=([0, 1], [0, 1])
        )
        grads["wh_bwd"] += np.tensordot(
            _masked_h_prev(cache.bwd[3], cache.rec_bwd), d_pre_b, axes=([0, 1], [0, 1])
        )
        grads["bias_fwd"] += d_pre_f.sum(axis=(0, 1))
        grads["bias_bwd"] += d_pre_b.sum(axis=(0, 1))

        dx = d_pre_f @ params.wx_fwd.T
        dx += (d_pre_b @ params.wx_bwd.T)[:, ::-1]
        if cache.spatial is not None:
            dx *= cache.spatial
        np.add.at(grads["embedding"], cache.token_idx, dx)
    return grads
