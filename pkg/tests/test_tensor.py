import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from empmp import tensor as tn
from empmp.errors import ConfigError, ContractError, DimensionError, LayoutError, NumericError, TapeError
from empmp.tensor import MacCounter, Tape, Tensor, backward, finite_diff_check


def param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def weighted_sum(out, rng_seed=987_654):
    # fixed random cotangent so every output entry matters
    w = np.random.default_rng(rng_seed).normal(size=out.shape)
    return tn.sum_all(tn.mul(out, Tensor(w)))


OPS = {
    "add": lambda a, b: tn.add(a, b),
    "sub": lambda a, b: tn.sub(a, b),
    "mul": lambda a, b: tn.mul(a, b),
    "square": lambda a, b: tn.square(a),
    "scale": lambda a, b: tn.scale(a, -1.7),
    "add_scalar": lambda a, b: tn.add_scalar(a, 0.3),
    "diff": lambda a, b: tn.diff(a, axis=1),
    "reshape": lambda a, b: tn.reshape(a, (a.shape[1], a.shape[0])),
    "moveaxis": lambda a, b: tn.moveaxis(a, 0, 1),
    "sum_axes": lambda a, b: tn.sum_axes(a, (1,)),
    "mean_all": lambda a, b: tn.mean_all(a),
}


@pytest.mark.parametrize("name", sorted(OPS))
@settings(max_examples=12, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(1, 4), n=st.integers(2, 5))
def test_elementwise_and_shape_ops_gradients(name, seed, m, n):
    rng = np.random.default_rng(seed)
    a, b = param(rng, m, n), param(rng, m, n)
    err = finite_diff_check(lambda: weighted_sum(OPS[name](a, b)), [a, b])
    assert err <= 1e-5


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), axis=st.integers(0, 2))
def test_linear_along_axis_gradient(seed, axis):
    rng = np.random.default_rng(seed)
    x = param(rng, 3, 4, 2)
    w = param(rng, x.shape[axis], 3)
    b = param(rng, 3)
    err = finite_diff_check(lambda: weighted_sum(tn.linear_along_axis(x, axis, w, b)), [x, w, b])
    assert err <= 1e-5


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), axis=st.integers(0, 2),
       stats=st.sampled_from([None, (0,), (1, 2), (0, 2)]))
def test_layer_norm_gradient(seed, axis, stats):
    rng = np.random.default_rng(seed)
    x = param(rng, 3, 4, 5)
    g = Tensor(1 + 0.3 * rng.normal(size=x.shape[axis]), True)
    b = param(rng, x.shape[axis])
    err = finite_diff_check(lambda: weighted_sum(tn.layer_norm(x, axis, g, b, stats_axes=stats)), [x, g, b])
    assert err <= 1e-5


def test_broadcast_mul_and_hadamard_gradients(rng):
    x = param(rng, 2, 3, 4)
    row = param(rng, 3, 1)
    h = param(rng, 2, 4)
    err = finite_diff_check(lambda: weighted_sum(tn.mul(x, row)), [x, row])
    assert err <= 1e-5
    err = finite_diff_check(lambda: weighted_sum(tn.hadamard(x, h, axis=1)), [x, h])
    assert err <= 1e-5


def test_merge_split_gradients_and_round_trip(rng):
    x = param(rng, 2, 3, 4)
    err = finite_diff_check(lambda: weighted_sum(tn.split_axes(tn.merge_axes(x, 1, 2), 1, (3, 4))), [x])
    assert err <= 1e-5
    with Tape():
        y = tn.split_axes(tn.merge_axes(x, 1, 2), 1, (3, 4))
    assert np.array_equal(y.data, x.data)
    assert tn.merge_axes(x, 1, 2).shape == (2, 12)


def test_merge_order_is_outer_then_inner():
    x = Tensor(np.arange(24.0).reshape(2, 3, 4))
    m = tn.merge_axes(x, 1, 2).data
    assert m[1, 4 * 2 + 3] == x.data[1, 2, 3]


def test_merge_non_adjacent_axes_rejected(rng):
    with pytest.raises(LayoutError):
        tn.merge_axes(Tensor(rng.normal(size=(2, 3, 4))), 0, 2)


def test_split_size_mismatch_rejected():
    with pytest.raises((LayoutError, DimensionError)):
        tn.split_axes(Tensor(np.zeros((2, 12))), 1, (5, 2))


def test_linear_shape_mismatch_rejected():
    with pytest.raises(DimensionError):
        tn.linear_along_axis(Tensor(np.zeros((2, 3))), 1, Tensor(np.zeros((4, 2))))


def test_layer_norm_statistics():
    rng = np.random.default_rng(5)
    x = Tensor(3.0 + 2.0 * rng.normal(size=(6, 7)))
    out = tn.layer_norm(x, 1, Tensor(np.ones(7)), Tensor(np.zeros(7)), eps=1e-12).data
    assert np.all(np.abs(out.mean(axis=1)) < 1e-10)
    assert np.all(np.abs(out.var(axis=1) - 1.0) < 1e-8)


def test_layer_norm_of_zeros_is_bias_and_eps_validated():
    z = Tensor(np.zeros((2, 3)))
    out = tn.layer_norm(z, 1, Tensor(np.ones(3)), Tensor(np.array([0.5, 0.0, -1.0])))
    assert np.array_equal(out.data, np.tile([0.5, 0.0, -1.0], (2, 1)))
    with pytest.raises(ConfigError):
        tn.layer_norm(z, 1, Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=0.0)


def test_backward_needs_scalar_and_matching_tape(rng):
    a = param(rng, 3)
    with Tape() as tape:
        tape.watch(a)
        y = tn.square(a)
    with pytest.raises(ContractError):
        backward(y, tape)
    with Tape() as other:
        pass
    with Tape() as t2:
        t2.watch(a)
        s = tn.sum_all(tn.square(a))
    with pytest.raises(TapeError):
        backward(s, other)


def test_backward_values_and_reuse(rng):
    a = param(rng, 4)
    with Tape() as tape:
        tape.watch(a)
        loss = tn.sum_all(tn.mul(a, a))  # a used twice
    grads = backward(loss, tape)
    np.testing.assert_allclose(grads[a], 2 * a.data)
    first = a.grad.copy()
    a.zero_grad()
    backward(loss, tape)
    assert np.array_equal(a.grad, first)


def test_gradient_accumulates_across_calls(rng):
    a = param(rng, 3)
    with Tape() as tape:
        tape.watch(a)
        loss = tn.sum_all(a)
    backward(loss, tape)
    backward(loss, tape)
    assert np.array_equal(a.grad, 2 * np.ones(3))


def test_finite_diff_check_examples():
    p = Tensor(np.array([0.7]), True)
    assert finite_diff_check(lambda: tn.sum_all(tn.square(p)), [p]) < 1e-8
    x = Tensor(np.random.default_rng(3).normal(size=(3, 5)), True)
    g, b = Tensor(np.ones(5), True), Tensor(np.zeros(5), True)
    w = Tensor(np.random.default_rng(4).normal(size=(3, 5)))
    assert finite_diff_check(lambda: tn.sum_all(tn.mul(tn.layer_norm(x, 1, g, b), w)), [x, g, b]) < 1e-5
    with pytest.raises(ContractError):
        finite_diff_check(lambda: tn.sum_all(tn.square(p)), [p], step=0.0)
    with pytest.raises(NumericError):
        finite_diff_check(lambda: tn.scale(tn.sum_all(p), float("nan")), [p])


def test_mac_counter_counts_linear_maps(rng):
    x = Tensor(rng.normal(size=(2, 3, 4)))
    w = Tensor(rng.normal(size=(4, 5)))
    with MacCounter() as mc:
        tn.linear_along_axis(x, 2, w, label="a")
        tn.linear_along_axis(x, 1, Tensor(rng.normal(size=(3, 2))), label="b")
    assert mc.counts == {"a": 2 * 3 * 4 * 5, "b": 2 * 4 * 3 * 2}
    assert mc.total == 120 + 48


def test_ops_without_tape_build_no_graph(rng):
    a = Tensor(rng.normal(size=3), requires_grad=True)
    b = tn.add(a, a)
    assert b._node is None
