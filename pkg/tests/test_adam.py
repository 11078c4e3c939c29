import numpy as np
import pytest

from radlabel.errors import NumericalError
from radlabel.net.adam import AdamState, adam_step
from radlabel.net.params import ModelDims, ModelParams

from oracles import scalar_adam_trajectory

DIMS = ModelDims(vocab_size=2, embed_dim=2, hidden_units=1, max_len=2)


def _params_and_grads(fill=0.0):
    params = ModelParams.zeros(DIMS, np.float64)
    grads = {name: np.full_like(a, fill) for name, a in params.arrays().items()}
    return params, grads


def test_zero_gradient_leaves_parameters_unchanged():
    params, grads = _params_and_grads(0.0)
    before = {k: v.copy() for k, v in params.arrays().items()}
    adam_step(params, grads, AdamState.init_like(params))
    for name, array in params.arrays().items():
        assert np.array_equal(array, before[name])


def test_first_step_magnitude_for_unit_gradient():
    params, grads = _params_and_grads(1.0)
    state = AdamState.init_like(params)
    adam_step(params, grads, state, lr=0.001, eps=1e-07)
    expected = -0.001 / (1.0 + 1e-07)
    for array in params.arrays().values():
        assert np.allclose(array, expected, rtol=0, atol=1e-15)
    assert state.t == 1


def test_timestep_increments_by_one():
    params, grads = _params_and_grads(0.5)
    state = AdamState.init_like(params)
    for expected_t in (1, 2, 3):
        adam_step(params, grads, state)
        assert state.t == expected_t


def test_trajectory_matches_scalar_reference():
    rng = np.random.default_rng(2024)
    params = ModelParams.zeros(DIMS, np.float64)
    names = list(params.arrays())
    sizes = {name: a.size for name, a in params.arrays().items()}
    total = sum(sizes.values())

    grad_sequence = [rng.standard_normal(total) for _ in range(100)]
    reference = scalar_adam_trajectory(
        [0.0] * total, [g.tolist() for g in grad_sequence]
    )

    state = AdamState.init_like(params)
    for step, flat in enumerate(grad_sequence):
        grads = {}
        offset = 0
        for name in names:
            block = flat[offset : offset + sizes[name]]
            grads[name] = block.reshape(params.arrays()[name].shape)
            offset += sizes[name]
        adam_step(params, grads, state)
        ours = np.concatenate([params.arrays()[n].ravel() for n in names])
        assert np.allclose(ours, reference[step], rtol=0, atol=1e-12), f"step {step}"


def test_non_finite_gradient_rejected():
    params, grads = _params_and_grads(1.0)
    grads["head_w"][0] = np.inf
    with pytest.raises(NumericalError, match="head_w"):
        adam_step(params, grads, AdamState.init_like(params))
