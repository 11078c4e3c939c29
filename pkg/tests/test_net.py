import math

import numpy as np
import pytest

from radlabel.corpus import EncodedSentence
from radlabel.errors import InputError, NumericalError
from radlabel.net import kernels
from radlabel.net._recurrence_py import sigmoid
from radlabel.net.model import (
    EncodedBatch,
    bce_loss,
    bilstm_forward,
    embed,
    forward_batch,
    head_forward,
    lstm_step,
    sample_dropout_masks,
    spatial_dropout,
)
from radlabel.net.params import DropoutConfig, ModelDims, ModelParams, init_params

TOY = ModelDims(vocab_size=7, embed_dim=3, hidden_units=4, max_len=5)


def _toy_params(seed=0, dtype=np.float64):
    return init_params(TOY, np.random.default_rng(seed), dtype)


def _enc(indices, label=0):
    arr = np.zeros(TOY.max_len, dtype=np.int32)
    arr[: len(indices)] = indices
    return EncodedSentence(indices=arr, true_length=len(indices), label=label)


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------


def test_embed_is_row_lookup():
    params = _toy_params()
    out = embed(_enc([2]), params.embedding)
    assert np.array_equal(out, params.embedding[[2]])


def test_embed_empty_sequence():
    params = _toy_params()
    assert embed(_enc([]), params.embedding).shape == (0, 3)


def test_embed_out_of_range():
    params = _toy_params()
    with pytest.raises(InputError):
        embed(_enc([7]), params.embedding)


# ---------------------------------------------------------------------------
# Spatial dropout
# ---------------------------------------------------------------------------


def test_spatial_dropout_inference_identity():
    rng = np.random.default_rng(0)
    seq = rng.standard_normal((6, 8))
    out = spatial_dropout(seq, 0.2, rng, training=False)
    assert np.array_equal(out, seq)


def test_spatial_dropout_rate_zero_identity():
    rng = np.random.default_rng(0)
    seq = rng.standard_normal((6, 8))
    assert np.array_equal(spatial_dropout(seq, 0.0, rng, training=True), seq)


def test_spatial_dropout_statistics_and_structure():
    rng = np.random.default_rng(42)
    seq = np.ones((5, 10_000))
    out = spatial_dropout(seq, 0.2, rng, training=True)
    # each channel is either zero at every timestep or scaled at every one
    per_channel = out.min(axis=0)
    assert np.array_equal(out.max(axis=0), per_channel)
    dropped = float((per_channel == 0).mean())
    assert abs(dropped - 0.2) <= 0.01
    kept = per_channel[per_channel > 0]
    assert np.allclose(kept, 1.0 / 0.8)


# ---------------------------------------------------------------------------
# LSTM step and sequence kernels
# ---------------------------------------------------------------------------


def test_lstm_step_zero_weights_zero_state():
    h = np.zeros(4)
    c = np.zeros(4)
    wx = np.zeros((3, 16))
    wh = np.zeros((4, 16))
    bias = np.zeros(16)
    x = np.array([1.0, -2.0, 3.0])
    h_t, c_t, _ = lstm_step(x, h, c, wx, wh, bias, np.ones(4))
    assert np.allclose(h_t, 0.0)
    assert np.allclose(c_t, 0.0)


def test_lstm_step_forget_saturation():
    rng = np.random.default_rng(1)
    wx = rng.standard_normal((3, 16)) * 0.1
    wh = rng.standard_normal((4, 16)) * 0.1
    bias = np.zeros(16)
    bias[4:8] = 20.0  # saturate the forget gate
    c_prev = rng.standard_normal(4)
    h_prev = rng.standard_normal(4) * 0.1
    x = rng.standard_normal(3)
    h_t, c_t, (gi, gf, gg, go) = lstm_step(x, h_prev, c_prev, wx, wh, bias, np.ones(4))
    assert np.allclose(gf, 1.0, atol=1e-6)
    assert np.allclose(c_t, c_prev + gi * gg, atol=1e-6)


def test_lstm_step_rejects_non_finite():
    with pytest.raises(NumericalError):
        lstm_step(
            np.array([np.nan]), np.zeros(1), np.zeros(1),
            np.zeros((1, 4)), np.zeros((1, 4)), np.zeros(4), np.ones(1),
        )


def test_kernel_matches_stepwise_loop_with_recurrent_mask():
    """The sequence kernel must apply one fixed mask at every timestep."""
    rng = np.random.default_rng(5)
    T, D, H = 4, 3, 4
    x = rng.standard_normal((T, D))
    wx = rng.standard_normal((D, 4 * H))
    wh = rng.standard_normal((H, 4 * H))
    bias = rng.standard_normal(4 * H)
    mask = (rng.random(H) > 0.4) / 0.6

    x_gates = (x @ wx + bias)[None]
    for name, module in kernels.available_backends().items():
        *_, hidden = module.sequence_forward(
            np.ascontiguousarray(x_gates), wh, mask[None]
        )
        h = np.zeros(H)
        c = np.zeros(H)
        for t in range(T):
            h, c, _ = lstm_step(x[t], h, c, wx, wh, bias, mask)
            assert np.allclose(hidden[0, t], h, atol=1e-10), (name, t)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backend_equivalence(dtype):
    backends = kernels.available_backends()
    if len(backends) < 2:
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(7)
    B, T, H = 3, 6, 5
    x_gates = rng.standard_normal((B, T, 4 * H)).astype(dtype)
    wh = rng.standard_normal((H, 4 * H)).astype(dtype)
    mask = ((rng.random((B, H)) > 0.4) / 0.6).astype(dtype)
    d_last = rng.standard_normal((B, H)).astype(dtype)

    results = {}
    for name, module in backends.items():
        fwd = module.sequence_forward(x_gates, wh, mask)
        bwd = module.sequence_backward(fwd[0], fwd[1], fwd[2], wh, mask, d_last)
        results[name] = (*fwd, bwd)
    tol = dict(rtol=1e-5, atol=1e-6) if dtype == np.float32 else dict(rtol=1e-11, atol=1e-13)
    for a, b in zip(results["python"], results["cython"]):
        assert np.allclose(a, b, **tol)


# ---------------------------------------------------------------------------
# Head and loss
# ---------------------------------------------------------------------------


def test_head_forward_zero_is_half():
    logit, score = head_forward(np.zeros(8), np.zeros(8), 0.0)
    assert logit == 0.0
    assert score == 0.5


def test_head_forward_large_bias_stable():
    logit, score = head_forward(np.zeros(8), np.zeros(8), 20.0)
    assert math.isfinite(score)
    assert abs(score - 1.0) <= 1e-8


def test_head_forward_monotonic():
    rng = np.random.default_rng(0)
    w = rng.standard_normal(8)
    features = [rng.standard_normal(8) for _ in range(20)]
    pairs = sorted(head_forward(f, w, 0.3) for f in features)
    scores = [s for _, s in pairs]
    assert scores == sorted(scores)


def test_bce_values():
    assert abs(bce_loss(0.0, 1) - math.log(2)) < 1e-12
    assert bce_loss(50.0, 1) < 1e-8
    assert bce_loss(50.0, 1) >= 0.0
    # extreme logits stay finite (stability invariant)
    for logit in (-500.0, 500.0):
        for label in (0, 1):
            assert math.isfinite(bce_loss(logit, label))


def test_bce_gradient_is_score_minus_label():
    eps = 1e-6
    for logit in (-3.0, -0.5, 0.0, 1.7):
        for label in (0, 1):
            numeric = (bce_loss(logit + eps, label) - bce_loss(logit - eps, label)) / (2 * eps)
            analytic = float(sigmoid(np.array(logit)) - label)
            assert abs(numeric - analytic) < 1e-8


# ---------------------------------------------------------------------------
# BiLSTM forward
# ---------------------------------------------------------------------------


def test_bilstm_single_step_concatenates_directions():
    params = _toy_params()
    seq = params.embedding[[3]]
    features = bilstm_forward(seq, params)
    assert features.shape == (8,)
    # T=1: both directions process the same single vector
    h_f, _, _ = lstm_step(
        seq[0], np.zeros(4), np.zeros(4),
        params.wx_fwd, params.wh_fwd, params.bias_fwd, np.ones(4),
    )
    h_b, _, _ = lstm_step(
        seq[0], np.zeros(4), np.zeros(4),
        params.wx_bwd, params.wh_bwd, params.bias_bwd, np.ones(4),
    )
    assert np.allclose(features, np.concatenate([h_f, h_b]), atol=1e-12)


def test_bilstm_zero_weights_zero_features():
    params = ModelParams.zeros(TOY, np.float64)
    seq = np.ones((4, 3))
    assert np.allclose(bilstm_forward(seq, params), 0.0)


def test_bilstm_empty_sequence_rejected():
    params = _toy_params()
    with pytest.raises(InputError):
        bilstm_forward(np.zeros((0, 3)), params)


def test_bilstm_reversal_swaps_directions():
    params = _toy_params(seed=3)
    swapped = params.copy()
    swapped.wx_fwd, swapped.wx_bwd = params.wx_bwd.copy(), params.wx_fwd.copy()
    swapped.wh_fwd, swapped.wh_bwd = params.wh_bwd.copy(), params.wh_fwd.copy()
    swapped.bias_fwd, swapped.bias_bwd = params.bias_bwd.copy(), params.bias_fwd.copy()

    rng = np.random.default_rng(9)
    seq = rng.standard_normal((5, 3))
    features = bilstm_forward(seq, params)
    reversed_features = bilstm_forward(seq[::-1].copy(), swapped)
    h = TOY.hidden_units
    assert np.allclose(features[:h], reversed_features[h:], atol=1e-12)
    assert np.allclose(features[h:], reversed_features[:h], atol=1e-12)


# ---------------------------------------------------------------------------
# Batched forward
# ---------------------------------------------------------------------------


def test_forward_batch_inference_deterministic():
    params = _toy_params()
    batch = EncodedBatch.from_sentences([_enc([2, 3, 4], 1), _enc([5, 6], 0)])
    first = forward_batch(params, batch)
    second = forward_batch(params, batch)
    assert np.array_equal(first.scores, second.scores)
    assert np.array_equal(first.losses, second.losses)


def test_forward_batch_groups_match_single(dtype=np.float64):
    """Length-grouped batching must equal one-by-one evaluation."""
    params = _toy_params(seed=11)
    sentences = [_enc([2, 3, 4], 1), _enc([5, 6], 0), _enc([3], 1), _enc([2, 2, 2], 0)]
    batch = forward_batch(params, EncodedBatch.from_sentences(sentences))
    for i, sentence in enumerate(sentences):
        single = forward_batch(params, EncodedBatch.from_sentences([sentence]))
        assert np.allclose(batch.logits[i], single.logits[0], atol=1e-12)


def test_variational_masks_constant_within_sequence():
    dims = ModelDims(vocab_size=7, embed_dim=6, hidden_units=5, max_len=6)
    batch = EncodedBatch.from_sentences(
        [EncodedSentence(np.array([2, 3, 4, 5, 6, 1], dtype=np.int32), 6, 1)]
    )
    masks = sample_dropout_masks(
        batch, dims, DropoutConfig(0.5, 0.5, 0), np.random.default_rng(1), np.float64
    )
    # spatial mask has one value per channel (broadcast over time)
    assert masks[0].spatial.shape == (1, 1, 6)
    assert masks[0].rec_fwd.shape == (1, 5)
    values = set(np.unique(masks[0].rec_fwd)) | set(np.unique(masks[0].rec_bwd))
    assert values <= {0.0, 2.0}
