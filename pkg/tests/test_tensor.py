"""Autodiff engine tests: hand oracles, frozen examples, gradient checks."""

import numpy as np
import pytest

from airwrite import tensor as T
from airwrite.errors import (
    EmptyInputError,
    InvalidProbabilityError,
    InvalidRootError,
    ShapeError,
)

SEEDS = [0, 1, 2, 3, 4]
GRAD_TOL = 1e-4


def conv1d_oracle(x, kernel, stride=1, padding=0):
    """Naive nested-loop convolution, the independent reference."""
    t_in, c_in = x.shape
    c_out, _, k = kernel.shape
    xp = np.zeros((t_in + 2 * padding, c_in))
    xp[padding : padding + t_in] = x
    t_out = (t_in + 2 * padding - k) // stride + 1
    out = np.zeros((t_out, c_out))
    for t in range(t_out):
        for o in range(c_out):
            acc = 0.0
            for kk in range(k):
                for c in range(c_in):
                    acc += xp[t * stride + kk, c] * kernel[o, c, kk]
            out[t, o] = acc
    return out


# ---------------------------------------------------------------------------
# conv1d
# ---------------------------------------------------------------------------


def test_conv_matches_hand_example():
    x = T.Value(np.array([[1.0], [2.0], [3.0], [4.0]]))
    k = T.Value(np.array([[[1.0, 0.0, -1.0]]]))
    out = T.conv1d(x, k, stride=1, padding=0)
    assert np.allclose(out.data.ravel(), [-2.0, -2.0])
    assert np.allclose(out.data, conv1d_oracle(x.data, k.data))


def test_conv_identity_delta_kernel():
    rng = np.random.default_rng(0)
    x = T.Value(rng.normal(size=(10, 3)))
    kernel = np.zeros((3, 3, 3))
    for c in range(3):
        kernel[c, c, 1] = 1.0
    out = T.conv1d(x, T.Value(kernel), stride=1, padding=1)
    assert np.allclose(out.data[1:-1], x.data[1:-1])


def test_conv_output_length_example():
    x = T.Value(np.zeros((8, 1)))
    k = T.Value(np.zeros((1, 1, 3)))
    assert T.conv1d(x, k, stride=2, padding=1).data.shape == (4, 1)


def test_conv_shape_sweep_matches_oracle():
    rng = np.random.default_rng(1)
    for t_in in range(1, 33):
        for k in range(1, 6):
            for padding in range(3):
                for stride in (1, 2):
                    if k > t_in + 2 * padding:
                        continue
                    x = rng.normal(size=(t_in, 2))
                    kern = rng.normal(size=(3, 2, k))
                    out = T.conv1d(T.Value(x), T.Value(kern), stride, padding)
                    expected_len = (t_in + 2 * padding - k) // stride + 1
                    assert out.data.shape == (expected_len, 3)
                    assert np.allclose(out.data, conv1d_oracle(x, kern, stride, padding))


def test_conv_channel_mismatch_raises():
    x = T.Value(np.zeros((5, 2)))
    k = T.Value(np.zeros((1, 3, 3)))
    with pytest.raises(ShapeError):
        T.conv1d(x, k)


def test_conv_kernel_longer_than_padded_input_raises():
    with pytest.raises(ShapeError):
        T.conv1d(T.Value(np.zeros((2, 1))), T.Value(np.zeros((1, 1, 5))), padding=1)


# ---------------------------------------------------------------------------
# batch norm
# ---------------------------------------------------------------------------


def test_batch_norm_constant_column_is_zeroed():
    x = T.Value(np.full((6, 2), 3.5))
    gamma = T.Value(np.ones(2))
    beta = T.Value(np.zeros(2))
    out = T.batch_norm1d(x, gamma, beta, T.BatchNormStats(2), mode=T.TRAIN)
    assert np.allclose(out.data, 0.0)


def test_batch_norm_beta_shift():
    x = T.Value(np.full((4, 1), 2.0))
    out = T.batch_norm1d(
        T.Value(x.data), T.Value(np.ones(1)), T.Value(np.full(1, 5.0)),
        T.BatchNormStats(1), mode=T.TRAIN,
    )
    assert np.allclose(out.data, 5.0)


def test_batch_norm_two_point_normalization():
    # mean 1, population std 1 -> [-1, 1] as eps vanishes
    out = T.batch_norm1d(
        T.Value(np.array([[0.0], [2.0]])), T.Value(np.ones(1)), T.Value(np.zeros(1)),
        T.BatchNormStats(1), mode=T.TRAIN, eps=1e-12,
    )
    assert np.allclose(out.data.ravel(), [-1.0, 1.0], atol=1e-6)


def test_batch_norm_eval_uses_running_stats():
    stats = T.BatchNormStats(1)
    stats.mean[:] = 2.0
    stats.var[:] = 4.0
    out = T.batch_norm1d(
        T.Value(np.array([[4.0]])), T.Value(np.ones(1)), T.Value(np.zeros(1)),
        stats, mode=T.EVAL, eps=0.0001,
    )
    assert np.allclose(out.data, (4.0 - 2.0) / np.sqrt(4.0001))


def test_batch_norm_empty_input_raises():
    with pytest.raises(EmptyInputError):
        T.batch_norm1d(
            T.Value(np.zeros((0, 2))), T.Value(np.ones(2)), T.Value(np.zeros(2)),
            T.BatchNormStats(2),
        )


# ---------------------------------------------------------------------------
# prelu / dropout / softmax
# ---------------------------------------------------------------------------


def test_prelu_values():
    slope = T.Value(np.asarray(0.25))
    assert float(T.prelu(T.Value(np.asarray(3.0)), slope).data) == 3.0
    assert float(T.prelu(T.Value(np.asarray(-2.0)), slope).data) == -0.5


def test_prelu_gradient_at_zero_uses_positive_branch():
    x = T.Value(np.asarray(0.0), requires_grad=True)
    out = T.prelu(x, T.Value(np.asarray(0.25)))
    T.backward(out)
    assert float(out.data) == 0.0
    assert float(x.grad) == 1.0


def test_dropout_identities():
    x = T.Value(np.arange(6.0).reshape(2, 3))
    rng = np.random.default_rng(0)
    assert T.dropout(x, 0.0, mode=T.TRAIN, rng=rng) is x
    assert T.dropout(x, 0.5, mode=T.EVAL) is x
    with pytest.raises(InvalidProbabilityError):
        T.dropout(x, 1.0, mode=T.TRAIN, rng=rng)


def test_dropout_preserves_expectation():
    rng = np.random.default_rng(7)
    x = T.Value(np.full((1000, 100), 2.0))
    out = T.dropout(x, 0.2, mode=T.TRAIN, rng=rng)
    assert abs(out.data.mean() - 2.0) / 2.0 < 0.01


def test_dropout_deterministic_given_seed():
    x = T.Value(np.arange(50.0))
    a = T.dropout(x, 0.2, mode=T.TRAIN, rng=np.random.default_rng(3)).data
    b = T.dropout(x, 0.2, mode=T.TRAIN, rng=np.random.default_rng(3)).data
    assert np.array_equal(a, b)


def test_softmax_symmetry_and_invariants():
    out = T.softmax(T.Value(np.array([0.0, 0.0])))
    assert np.allclose(out.data, [0.5, 0.5])

    rng = np.random.default_rng(2)
    logits = rng.normal(scale=10.0, size=(20, 7))
    s = T.softmax(T.Value(logits), axis=1).data
    assert np.all(np.abs(s.sum(axis=1) - 1.0) < 1e-12)
    shifted = T.softmax(T.Value(logits + 123.456), axis=1).data
    assert np.all(np.abs(s - shifted) < 1e-12)


def test_mean_rows_of_identical_rows():
    row = np.array([1.0, -2.0, 3.0])
    x = T.Value(np.tile(row, (5, 1)))
    assert np.allclose(T.mean_rows(x).data, row)


def test_add_zero_identity():
    x = T.Value(np.array([1.0, 2.0]))
    assert np.array_equal(T.add(x, T.Value(0.0)).data, x.data)


def test_add_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        T.add(T.Value(np.zeros(3)), T.Value(np.zeros(4)))


# ---------------------------------------------------------------------------
# backward mechanics
# ---------------------------------------------------------------------------


def test_backward_square():
    x = T.Value(np.asarray(3.0), requires_grad=True)
    T.backward(T.mul(x, x))
    assert float(x.grad) == 6.0


def test_backward_sum_of_add():
    a = T.Value(np.ones((2, 3)), requires_grad=True)
    b = T.Value(np.ones((2, 3)), requires_grad=True)
    T.backward(T.sum_all(T.add(a, b)))
    assert np.array_equal(a.grad, np.ones((2, 3)))
    assert np.array_equal(b.grad, np.ones((2, 3)))


def test_backward_two_paths_sum_contributions():
    x = T.Value(np.asarray(5.0), requires_grad=True)
    T.backward(T.add(x, x))
    assert float(x.grad) == 2.0


def test_backward_accumulates_across_calls():
    x = T.Value(np.asarray(2.0), requires_grad=True)
    T.backward(T.mul(x, x))
    T.backward(T.mul(x, x))
    assert float(x.grad) == 8.0


def test_backward_rejects_non_scalar_root():
    with pytest.raises(InvalidRootError):
        T.backward(T.Value(np.zeros(3), requires_grad=True))


# ---------------------------------------------------------------------------
# gradient checks against central differences
# ---------------------------------------------------------------------------


def _random_params(rng, spec):
    params = T.ParameterSet()
    for path, shape in spec.items():
        params.add(path, rng.normal(size=shape))
    return params


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_check_linear(seed):
    rng = np.random.default_rng(seed)
    params = _random_params(rng, {"w": (4, 3), "b": (3,), "x": (5, 4)})

    def f(p):
        return T.sum_all(T.softmax(T.linear(p["x"], p["w"], p["b"]), axis=1))

    assert T.grad_check(f, params) < GRAD_TOL


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (2, 0), (1, 2)])
def test_grad_check_conv(seed, stride, padding):
    rng = np.random.default_rng(seed)
    params = _random_params(rng, {"x": (9, 2), "k": (3, 2, 3)})

    def f(p):
        out = T.conv1d(p["x"], p["k"], stride=stride, padding=padding)
        return T.sum_all(T.mul(out, out))

    assert T.grad_check(f, params) < GRAD_TOL


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("mode", [T.TRAIN, T.EVAL])
def test_grad_check_batch_norm(seed, mode):
    rng = np.random.default_rng(seed)
    params = _random_params(rng, {"x": (7, 3), "gamma": (3,), "beta": (3,)})
    stats = T.BatchNormStats(3)
    stats.mean[:] = rng.normal(size=3)
    stats.var[:] = 0.5 + rng.random(3)

    def f(p):
        out = T.batch_norm1d(p["x"], p["gamma"], p["beta"], stats.copy(), mode=mode)
        return T.sum_all(T.mul(out, out))

    assert T.grad_check(f, params) < GRAD_TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_check_prelu(seed):
    rng = np.random.default_rng(seed)
    params = _random_params(rng, {"x": (6, 4), "slope": (4,)})

    def f(p):
        return T.sum_all(T.mul(T.prelu(p["x"], p["slope"]), p["x"]))

    assert T.grad_check(f, params) < GRAD_TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_check_softmax_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    params = _random_params(rng, {"logits": (6,)})

    def f(p):
        return T.cross_entropy(p["logits"], 2)

    assert T.grad_check(f, params) < GRAD_TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_check_dropout_fixed_mask(seed):
    rng = np.random.default_rng(seed)
    params = _random_params(rng, {"x": (5, 4)})

    def f(p):
        out = T.dropout(p["x"], 0.3, mode=T.TRAIN, rng=np.random.default_rng(99))
        return T.sum_all(T.mul(out, out))

    assert T.grad_check(f, params) < GRAD_TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_check_composite_graph(seed):
    rng = np.random.default_rng(seed)
    params = _random_params(
        rng, {"x": (6, 3), "w": (3, 3), "u": (6,), "v": (6,), "slope": ()}
    )

    def f(p):
        h = T.matmul(p["x"], p["w"])
        h = T.prelu(h, p["slope"])
        e = T.leaky_relu(T.outer_sum(p["u"], p["v"]), 0.2)
        att = T.softmax(e, axis=1)
        mixed = T.matmul(att, h)
        pooled = T.mean_rows(T.concat([mixed, h], axis=1))
        return T.cross_entropy(pooled, 1)

    assert T.grad_check(f, params) < GRAD_TOL


def test_grad_check_split_rows():
    rng = np.random.default_rng(0)
    params = _random_params(rng, {"x": (8, 3)})

    def f(p):
        a, b, c = T.split_rows(p["x"], [3, 2, 3])
        return T.add(T.sum_all(T.mul(a, a)), T.add(T.sum_all(b), T.sum_all(T.mul(c, c))))

    assert T.grad_check(f, params) < GRAD_TOL


# ---------------------------------------------------------------------------
# ParameterSet
# ---------------------------------------------------------------------------


def test_parameter_set_sorted_iteration_and_uniqueness():
    params = T.ParameterSet()
    params.add("b.w", np.zeros(2))
    params.add("a.w", np.zeros(3))
    assert params.paths() == ["a.w", "b.w"]
    assert params.num_elements() == 5
    with pytest.raises(Exception):
        params.add("a.w", np.zeros(1))


def test_parameter_set_zero_grad():
    params = T.ParameterSet()
    v = params.add("x", np.ones(3))
    T.backward(T.sum_all(v))
    assert np.array_equal(v.grad, np.ones(3))
    params.zero_grad()
    assert np.array_equal(v.grad, np.zeros(3))
