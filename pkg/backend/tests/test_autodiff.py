import functools

import numpy as np
import pytest

from errors import NumericalError, StructuralError
from models.network import LrSchedule, dense_params
from services import autodiff as ad
from services.checkpoint import load_checkpoint, params_from_bytes, params_to_bytes, save_checkpoint
from services.optim import adam_step, cosine_lr, init_adam, init_rmsprop, rmsprop_step


def _random_chain(rng, dims, last="linear"):
    weights = [rng.normal(size=(o, i)) for i, o in zip(dims[:-1], dims[1:])]
    biases = [rng.normal(size=o) for o in dims[1:]]
    acts = ["relu"] * (len(dims) - 2) + [last]
    return dense_params("net", weights, biases, acts)


def _numeric_grad(f, x, eps=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        up, down = x.copy(), x.copy()
        up.flat[i] += eps
        down.flat[i] -= eps
        g.flat[i] = (f(up) - f(down)) / (2 * eps)
    return g


# --- forward ---

def test_identity_layer():
    params = dense_params("f", [np.eye(2)], [[0.0, 0.0]], ["linear"])
    np.testing.assert_array_equal(ad.mlp_forward(params, [1.0, 2.0]), [1.0, 2.0])


def test_constant_map():
    params = dense_params("f", [np.zeros((1, 2))], [[3.0]], ["linear"])
    np.testing.assert_array_equal(ad.mlp_forward(params, [5.0, -7.0]), [3.0])


def test_two_layers_match_hand_evaluation(rng):
    params = _random_chain(rng, [3, 5, 2])
    x = rng.normal(size=3)
    w1, b1, w2, b2 = params.weight(0), params.bias(0), params.weight(1), params.bias(1)
    expected = w2 @ np.maximum(w1 @ x + b1, 0.0) + b2
    np.testing.assert_allclose(ad.mlp_forward(params, x), expected, rtol=0, atol=1e-12)


def test_forward_rejects_wrong_input_dim(rng):
    params = _random_chain(rng, [3, 4, 2])
    with pytest.raises(StructuralError):
        ad.mlp_forward(params, np.ones(2))


def test_forward_is_deterministic(rng):
    params = _random_chain(rng, [4, 6, 3])
    x = rng.normal(size=(5, 4))
    np.testing.assert_array_equal(ad.mlp_forward(params, x), ad.mlp_forward(params, x))


# --- gradients ---

def test_grad_of_sum_is_ones(rng):
    params = _random_chain(rng, [3, 4, 2])
    loss = lambda b: functools.reduce(ad.add, [ad.total(t) for t in b.tensors()])
    np.testing.assert_array_equal(ad.grad(loss, params), np.ones(params.total_count))


def test_grad_of_half_square_norm_is_params(rng):
    params = _random_chain(rng, [3, 4, 2])
    loss = lambda b: functools.reduce(ad.add, [ad.total(t * t) for t in b.tensors()]) * 0.5
    value, g = ad.value_and_grad(loss, params)
    assert value == pytest.approx(0.5 * np.sum(params.values ** 2))
    np.testing.assert_allclose(g, params.values, rtol=1e-12)


def _min_hidden_preactivation(params, x):
    h, smallest = x, np.inf
    for i, layer in enumerate(params.layers):
        pre = h @ params.weight(i).T + params.bias(i)
        if layer.activation == "relu":
            smallest = min(smallest, float(np.abs(pre).min()))
            pre = np.maximum(pre, 0.0)
        h = pre
    return smallest


@pytest.mark.parametrize("seed", range(100))
def test_log_loss_head_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 3))
    dims = [int(rng.integers(1, 6))] + [int(rng.integers(2, 9)) for _ in range(depth)] + [int(rng.integers(2, 5))]
    rows, n_models = int(rng.integers(1, 7)), dims[-1]
    # redraw until no relu sits within finite-difference reach of its kink
    while True:
        params = _random_chain(rng, dims)
        x = rng.normal(size=(rows, dims[0]))
        if _min_hidden_preactivation(params, x) >= 1e-3:
            break
    y = np.eye(n_models)[rng.integers(0, n_models, size=rows)]

    def loss(b):
        probs = ad.softmax(ad.mlp(b.layers(), ad.constant(x)))
        return ad.total(ad.mul(ad.constant(y), ad.log(probs, floor=1e-12))) * (-1.0 / rows)

    g = ad.grad(loss, params)
    fd = _numeric_grad(lambda v: ad.value_and_grad(loss, params.with_values(v))[0], params.values)
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-8)


_SEG = ad.Segments.from_sizes([2, 3, 1], np.array([0.5, 0.5, 1 / 3, 1 / 3, 1 / 3, 1.0]))
_W = np.random.default_rng(7).normal(size=(6, 3))

PRIMITIVES = {
    "affine": lambda t: ad.affine(t, ad.constant(_W[:2]), ad.constant(np.ones(2))),
    "relu": lambda t: ad.relu(t),
    "segment_pool": lambda t: ad.segment_pool(t, _SEG),
    "gather": lambda t: ad.gather(ad.segment_pool(t, _SEG), _SEG),
    "softmax": lambda t: ad.softmax(t),
    "log": lambda t: ad.log(ad.softmax(t)),
    "concat": lambda t: ad.concat([t, t * t], axis=1),
    "mean": lambda t: ad.mean(t * t),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name, rng):
    op = PRIMITIVES[name]
    x0 = rng.normal(size=(6, 3)) + 0.05
    weights = rng.normal(size=op(ad.constant(x0)).shape)

    def scalar(x):
        return ad.total(ad.mul(op(x), ad.constant(weights)))

    leaf = ad.Tensor(x0, requires_grad=True)
    ad.backward(scalar(leaf))
    fd = _numeric_grad(lambda v: float(scalar(ad.constant(v)).value), x0)
    np.testing.assert_allclose(leaf.grad, fd, rtol=1e-4, atol=1e-8)


def test_non_finite_value_names_the_node():
    with pytest.raises(NumericalError) as info:
        ad.log(ad.constant(np.array([-1.0])))
    assert info.value.node == "log"


def test_affine_shape_mismatch():
    with pytest.raises(StructuralError):
        ad.affine(ad.constant(np.ones((2, 3))), ad.constant(np.ones((4, 2))), ad.constant(np.zeros(4)))


def test_segments_need_rows():
    with pytest.raises(StructuralError):
        ad.Segments.from_sizes([2, 0])


# --- optimizer ---

@pytest.mark.parametrize("step, expected", [(0, 5e-4), (10000, 0.0), (5000, 2.5e-4)])
def test_cosine_lr(step, expected):
    assert cosine_lr(LrSchedule(initial_lr=5e-4, total_steps=10000), step) == pytest.approx(expected, abs=1e-15)


def test_cosine_lr_is_nonincreasing():
    schedule = LrSchedule(initial_lr=1e-3, total_steps=100)
    rates = [cosine_lr(schedule, t) for t in range(150)]
    assert all(b <= a for a, b in zip(rates, rates[1:]))
    assert rates[-1] == 0.0


def test_adam_zero_gradient_is_a_fixed_point(rng):
    params = _random_chain(rng, [2, 3])
    new_params, new_state = adam_step(params, init_adam(params), np.zeros(params.total_count), 1e-3)
    np.testing.assert_array_equal(new_params.values, params.values)
    np.testing.assert_array_equal(new_state.first_moment, 0.0)
    assert new_state.step == 1


def test_adam_first_step_moves_by_lr(rng):
    params = _random_chain(rng, [2, 3])
    g = rng.normal(size=params.total_count)
    new_params, _ = adam_step(params, init_adam(params), g, 1e-2)
    np.testing.assert_allclose(new_params.values - params.values, -1e-2 * np.sign(g), rtol=1e-4)


def test_adam_converges_on_quadratic(rng):
    params = _random_chain(rng, [2, 3])
    target = rng.uniform(-1, 1, size=params.total_count)
    state = init_adam(params)
    schedule = LrSchedule(initial_lr=0.1, total_steps=300)
    for t in range(300):
        params, state = adam_step(params, state, 2 * (params.values - target), cosine_lr(schedule, t))
    assert np.max(np.abs(params.values - target)) < 1e-2
    assert state.step == 300


def test_adam_rejects_non_finite_gradient(rng):
    params = _random_chain(rng, [2, 3])
    g = np.zeros(params.total_count)
    g[0] = np.nan
    with pytest.raises(NumericalError):
        adam_step(params, init_adam(params), g, 1e-3)


def test_rmsprop_step_direction(rng):
    params = _random_chain(rng, [2, 3])
    g = rng.normal(size=params.total_count)
    new_params, state = rmsprop_step(params, init_rmsprop(params), g, 1e-3)
    assert np.all(np.sign(params.values - new_params.values) == np.sign(g))
    assert state.step == 1


# --- serialization ---

def test_bytes_round_trip_is_bit_exact(rng):
    params = _random_chain(rng, [3, 5, 2])
    again = params_from_bytes(params.layers, params_to_bytes(params))
    assert again.values.tobytes() == params.values.tobytes()


def test_checkpoint_round_trip(tmp_path, rng):
    params = _random_chain(rng, [3, 5, 2])
    state = init_adam(params)
    params, state = adam_step(params, state, rng.normal(size=params.total_count), 1e-3)
    save_checkpoint(tmp_path / "ckpt", params, state, meta={"families": ["a", "b"]})
    loaded, loaded_state, meta = load_checkpoint(tmp_path / "ckpt.json")
    assert loaded.values.tobytes() == params.values.tobytes()
    assert [l.model_dump() for l in loaded.layers] == [l.model_dump() for l in params.layers]
    np.testing.assert_array_equal(loaded_state.second_moment, state.second_moment)
    assert loaded_state.step == 1
    assert meta == {"families": ["a", "b"]}


def test_missing_checkpoint_is_a_config_error(tmp_path):
    from errors import ConfigError

    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "nope.json")
