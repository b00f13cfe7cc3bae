"""Oracle and gradient tests for the autodiff tensor engine."""

import numpy as np
import pytest

from t3time import tensor as T
from t3time.errors import ConfigError, ContractError, DimensionError

RNG = np.random.default_rng(20240811)


def rand64(*shape):
    return T.tensor(RNG.normal(size=shape), dtype=np.float64)


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    out = T.matmul(T.tensor([[1.0, 0.0], [0.0, 1.0]]), T.tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[3.0], [4.0]]


def test_matmul_hand_expansion():
    out = T.matmul(T.tensor([[1.0, 2.0]]), T.tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def triple_loop_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def test_matmul_against_triple_loop_oracle():
    a = RNG.normal(size=(4, 5))
    b = RNG.normal(size=(5, 3))
    got = T.matmul(T.tensor(a, dtype=np.float64), T.tensor(b, dtype=np.float64)).data
    assert np.max(np.abs(got - triple_loop_matmul(a, b))) < 1e-12


def test_matmul_all_small_dims_match_oracle():
    for m in range(1, 9):
        for k in range(1, 9):
            for n in range(1, 9):
                a = RNG.normal(size=(m, k))
                b = RNG.normal(size=(k, n))
                got = T.matmul(T.tensor(a, dtype=np.float64), T.tensor(b, dtype=np.float64)).data
                assert np.max(np.abs(got - triple_loop_matmul(a, b))) < 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError) as exc:
        T.matmul(rand64(2, 3), rand64(4, 2))
    assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)


# ---------------------------------------------------------------------------
# softmax


def test_softmax_symmetry():
    out = T.softmax(T.tensor([0.0, 0.0]))
    assert np.allclose(out.data, [0.5, 0.5])


def test_softmax_large_magnitude_no_overflow():
    out = T.softmax(T.tensor([1000.0, 0.0], dtype=np.float64))
    assert np.all(np.isfinite(out.data))
    assert abs(out.data[0] - 1.0) < 1e-6 and abs(out.data[1]) < 1e-6


def test_softmax_against_direct_formula():
    x = RNG.normal(size=7)
    got = T.softmax(T.tensor(x, dtype=np.float64)).data
    want = np.exp(x) / np.exp(x).sum()
    assert np.max(np.abs(got - want)) < 1e-12


def test_softmax_simplex_property():
    for scale in (1.0, 1e3):
        for shape in ((4,), (3, 5), (2, 3, 4)):
            x = T.tensor(RNG.normal(size=shape) * scale, dtype=np.float64)
            s = T.softmax(x, axis=-1).data
            assert np.all(s >= 0)
            assert np.max(np.abs(s.sum(axis=-1) - 1.0)) < 1e-6


# ---------------------------------------------------------------------------
# layer norm


def _ln(x, n):
    gain = T.tensor(np.ones(n), dtype=np.float64)
    bias = T.tensor(np.zeros(n), dtype=np.float64)
    return T.layer_norm(T.tensor(x, dtype=np.float64), gain, bias)


def test_layer_norm_constant_slice():
    assert np.allclose(_ln([[5.0, 5.0, 5.0]], 3).data, 0.0, atol=1e-3)


def test_layer_norm_two_point():
    assert np.allclose(_ln([[1.0, 3.0]], 2).data, [[-1.0, 1.0]], atol=1e-4)


def test_layer_norm_against_mean_var_oracle():
    x = RNG.normal(size=(4, 9))
    got = _ln(x, 9).data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    want = (x - mu) / np.sqrt(var + 1e-5)
    assert np.max(np.abs(got - want)) < 1e-10


def test_layer_norm_normalizes_before_affine():
    x = RNG.normal(size=(6, 8)) * 3 + 2
    out = _ln(x, 8).data
    assert np.max(np.abs(out.mean(axis=-1))) < 1e-5
    assert np.max(np.abs(out.var(axis=-1) - 1.0)) < 1e-3


def test_layer_norm_over_leading_axis_matches_transposed_call():
    x = RNG.normal(size=(5, 3))
    gain = T.tensor(RNG.normal(size=5), dtype=np.float64)
    bias = T.tensor(RNG.normal(size=5), dtype=np.float64)
    got = T.layer_norm(T.tensor(x, dtype=np.float64), gain, bias, axis=0).data
    want = T.layer_norm(T.tensor(x.T, dtype=np.float64), gain, bias, axis=-1).data.T
    assert np.max(np.abs(got - want)) < 1e-12


# ---------------------------------------------------------------------------
# elementwise family


def test_relu_values():
    out = T.relu(T.tensor([-2.0, 3.0]))
    assert out.data.tolist() == [0.0, 3.0]


def test_sigmoid_zero():
    assert T.sigmoid(T.tensor([0.0])).data[0] == pytest.approx(0.5)


def test_concat_shapes():
    out = T.concat([rand64(2, 3), rand64(2, 5)], axis=1)
    assert out.shape == (2, 8)


def test_add_leading_broadcast_only():
    T.add(rand64(4, 2, 3), rand64(2, 3))  # fine: trailing dims match
    with pytest.raises(DimensionError):
        T.add(rand64(4, 2, 3), rand64(2, 1))


def test_expand_requires_unit_axis():
    out = T.expand(rand64(2, 1, 3), 1, 5)
    assert out.shape == (2, 5, 3)
    with pytest.raises(DimensionError):
        T.expand(rand64(2, 2, 3), 1, 5)


# ---------------------------------------------------------------------------
# attention


def test_attention_single_key_ignores_query():
    q = rand64(2, 4, 3)
    k = rand64(2, 1, 3)
    v = rand64(2, 1, 5)
    out = T.scaled_dot_attention(q, k, v)
    assert np.allclose(out.data, np.broadcast_to(v.data, (2, 4, 5)))


def test_attention_hand_computed_2x2():
    q = T.tensor([[[1.0, 0.0], [0.0, 1.0]]], dtype=np.float64)
    out = T.scaled_dot_attention(q, q, q).data
    scores = (q.data[0] @ q.data[0].T) / np.sqrt(2.0)
    w = np.exp(scores) / np.exp(scores).sum(axis=-1, keepdims=True)
    assert np.max(np.abs(out[0] - w @ q.data[0])) < 1e-6


def test_attention_uniform_keys_average_values():
    q = rand64(1, 3, 4)
    k = T.tensor(np.ones((1, 5, 4)), dtype=np.float64)
    v = rand64(1, 5, 2)
    out = T.scaled_dot_attention(q, k, v)
    assert np.allclose(out.data, np.broadcast_to(v.data.mean(axis=1, keepdims=True), (1, 3, 2)))


def test_attention_rows_sum_to_one_via_constant_values():
    # With v = ones, output equals the row sums of the attention weights.
    q, k = rand64(2, 3, 4), rand64(2, 6, 4)
    v = T.tensor(np.ones((2, 6, 1)), dtype=np.float64)
    out = T.scaled_dot_attention(q, k, v)
    assert np.allclose(out.data, 1.0, atol=1e-9)


def test_attention_dim_mismatch():
    with pytest.raises(DimensionError):
        T.scaled_dot_attention(rand64(1, 2, 3), rand64(1, 2, 4), rand64(1, 2, 4))


# ---------------------------------------------------------------------------
# dropout


def test_dropout_p_zero_identity():
    x = rand64(5)
    assert T.dropout(x, 0.0, training=True, rng=np.random.default_rng(0)) is x


def test_dropout_eval_identity():
    x = rand64(5)
    assert T.dropout(x, 0.5, training=False) is x


def test_dropout_survivor_fraction():
    x = T.tensor(np.ones(10**6))
    out = T.dropout(x, 0.5, training=True, rng=np.random.default_rng(7))
    survivors = np.count_nonzero(out.data) / out.size
    assert abs(survivors - 0.5) < 0.01
    # survivors are scaled by 1/(1-p)
    assert np.allclose(out.data[out.data != 0], 2.0)


def test_dropout_bad_probability():
    with pytest.raises(ConfigError):
        T.dropout(rand64(3), 1.0, training=True, rng=np.random.default_rng(0))
    with pytest.raises(ConfigError):
        T.dropout(rand64(3), -0.1, training=True, rng=np.random.default_rng(0))


# ---------------------------------------------------------------------------
# backward mechanics


def test_backward_sum_gives_ones():
    x = T.tensor([1.0, 2.0, 3.0], requires_grad=True, dtype=np.float64)
    T.backward(T.tsum(x))
    assert x.grad.tolist() == [1.0, 1.0, 1.0]


def test_backward_sum_of_squares():
    x = T.tensor([1.0, 2.0], requires_grad=True, dtype=np.float64)
    T.backward(T.tsum(T.mul(x, x)))
    assert x.grad.tolist() == [2.0, 4.0]


def test_backward_requires_scalar():
    x = T.tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        T.backward(T.mul(x, x))


def test_backward_accumulates_until_reset():
    x = T.tensor([3.0], requires_grad=True, dtype=np.float64)
    T.backward(T.tsum(T.mul(x, x)))
    first = x.grad.copy()
    T.backward(T.tsum(T.mul(x, x)))
    assert np.allclose(x.grad, 2 * first)
    x.zero_grad()
    assert x.grad is None


def test_fanout_gradient_accumulation_matches_finite_differences():
    # One tensor feeding two consumers must sum its gradients.
    def f(x):
        y = T.mul(x, x)
        z = T.add(y, x)
        return T.tsum(T.add(z, y))

    err = T.finite_diff_check(f, rand64(4), step=1e-5)
    assert err < 1e-8


# ---------------------------------------------------------------------------
# finite-difference harness


def test_finite_diff_sum_of_squares():
    err = T.finite_diff_check(lambda x: T.tsum(T.mul(x, x)), rand64(6), step=1e-5)
    assert err < 1e-8


def test_finite_diff_softmax_composite():
    w = RNG.normal(size=(5,))
    def f(x):
        return T.tsum(T.mul(T.softmax(x, -1), T.constant(w, dtype=np.float64)))
    assert T.finite_diff_check(f, rand64(5), step=1e-5) < 1e-6


def test_finite_diff_constant_function():
    err = T.finite_diff_check(lambda x: T.tsum(T.mul(x, T.constant(np.zeros(3), dtype=np.float64))),
                              rand64(3), step=1e-4)
    assert err == 0.0


def test_finite_diff_flags_nondeterminism():
    state = {"n": 0}
    def f(x):
        state["n"] += 1
        return T.scale(T.tsum(x), float(state["n"]))
    with pytest.raises(ContractError):
        T.finite_diff_check(f, rand64(3))


PRIMITIVES = {
    "relu": lambda x: T.tsum(T.relu(x)),
    "sigmoid": lambda x: T.tsum(T.mul(T.sigmoid(x), T.sigmoid(x))),
    "add": lambda x: T.tsum(T.add(x, x)),
    "sub": lambda x: T.tsum(T.sub(T.mul(x, x), x)),
    "mul": lambda x: T.tsum(T.mul(x, x)),
    "scale": lambda x: T.tsum(T.scale(x, 2.5)),
    "pow": lambda x: T.tsum(T.pow_scalar(T.add_scalar(T.mul(x, x), 1.0), 0.5)),
    "softmax": lambda x: T.tsum(T.mul(T.softmax(x, -1), T.softmax(x, -1))),
    "mean": lambda x: T.tsum(T.mean(x, axis=-1)),
    "sum_keep": lambda x: T.tsum(T.tsum(x, axis=0, keepdims=True)),
    "abs": lambda x: T.tsum(T.absolute(x)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("shape", [(4,), (3, 5), (2, 3, 4)])
def test_primitive_gradients(name, shape):
    # keep relu/abs inputs away from their kinks
    base = RNG.normal(size=shape)
    base = np.where(np.abs(base) < 0.1, base + 0.2, base)
    err = T.finite_diff_check(PRIMITIVES[name], T.tensor(base, dtype=np.float64), step=1e-6)
    assert err < 1e-5, f"{name} at {shape}: {err}"


@pytest.mark.parametrize("shape", [(2, 3), (3, 4), (4, 2)])
def test_structural_op_gradients(shape):
    w = RNG.normal(size=(shape[-1], 3))

    def f(x):
        y = T.matmul(x, T.constant(w, dtype=np.float64))
        y = T.transpose(y, (1, 0))
        y = T.reshape(y, (-1,))
        y = T.concat([y, T.scale(y, 0.5)], axis=0)
        y = T.take(y, slice(1, None))
        return T.tsum(T.mul(y, y))

    assert T.finite_diff_check(f, rand64(*shape), step=1e-6) < 1e-5


def test_layer_norm_gradient():
    gain = T.tensor(RNG.normal(size=6), dtype=np.float64)
    bias = T.tensor(RNG.normal(size=6), dtype=np.float64)

    def f(x):
        return T.tsum(T.mul(T.layer_norm(x, gain, bias), T.constant(RNG2, dtype=np.float64)))

    global RNG2
    RNG2 = RNG.normal(size=(3, 6))
    assert T.finite_diff_check(f, rand64(3, 6), step=1e-6) < 1e-5


def test_attention_gradient():
    k = rand64(1, 4, 3)
    v = rand64(1, 4, 2)

    def f(q):
        return T.tsum(T.mul(T.scaled_dot_attention(q, k, v),
                            T.constant(np.ones((1, 5, 2)), dtype=np.float64)))

    assert T.finite_diff_check(f, rand64(1, 5, 3), step=1e-6) < 1e-5


def test_dropout_gradient_with_frozen_mask():
    def f(x):
        out = T.dropout(x, 0.4, training=True, rng=np.random.Generator(np.random.Philox(99)))
        return T.tsum(T.mul(out, out))

    assert T.finite_diff_check(f, rand64(4, 4), step=1e-6) < 1e-5


# ---------------------------------------------------------------------------
# rng helpers


def test_spawn_generators_are_independent_and_reproducible():
    a1, b1 = T.spawn_generators(7, 2)
    a2, b2 = T.spawn_generators(7, 2)
    assert np.array_equal(a1.random(4), a2.random(4))
    assert np.array_equal(b1.random(4), b2.random(4))
    assert not np.array_equal(a1.random(4), b1.random(4))


def test_glorot_uniform_bounds():
    w = T.glorot_uniform(np.random.default_rng(0), 30, 10, (30, 10))
    limit = np.sqrt(6.0 / 40.0)
    assert w.shape == (30, 10) and np.all(np.abs(w) <= limit)
