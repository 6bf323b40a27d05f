import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from textcompress import autodiff as ad
from textcompress.autodiff import Parameter, Tensor
from textcompress.errors import ContractError, DimensionError
from textcompress.gradcheck import check_gradients, numerical_grad, relative_error
from textcompress.optim import Adam, AdamState, adam_step


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _grad_of(fn, *shapes, rng=None, positive=False):
    rng = rng or np.random.default_rng(0)
    params = []
    for s in shapes:
        data = rng.normal(size=s)
        if positive:
            data = np.abs(data) + 0.5
        params.append(Parameter(data))
    return params, check_gradients(lambda: fn(*params), params)


# -- matmul -----------------------------------------------------------------


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal((Tensor(np.eye(2)) @ a).data, a.data)


def test_matmul_hand_arithmetic():
    out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[1.0], [1.0]])
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_gradient_matches_finite_differences(rng):
    a, b = Parameter(rng.normal(size=(3, 4))), Parameter(rng.normal(size=(4, 2)))
    errs = check_gradients(lambda: (a @ b).sum(), [a, b])
    assert max(errs.values()) < 1e-6


@pytest.mark.parametrize("sa,sb", [((2, 3, 4), (4, 5)), ((2, 3, 4), (2, 4, 5)), ((2, 3, 4), (1, 4, 5))])
def test_matmul_batched_and_vector_shapes(sa, sb, rng):
    a, b = Parameter(rng.normal(size=sa)), Parameter(rng.normal(size=sb))
    out = a @ b
    assert np.allclose(out.data, a.data @ b.data, rtol=0, atol=1e-12)
    w = rng.normal(size=out.shape)
    errs = check_gradients(lambda: ((a @ b) * w).sum(), [a, b])
    assert max(errs.values()) < 1e-6


@pytest.mark.parametrize("sa,sb", [((4,), (4, 3)), ((3, 4), (5, 2))])
def test_matmul_rejects_bad_shapes(sa, sb):
    with pytest.raises(DimensionError):
        Tensor(np.ones(sa)) @ Tensor(np.ones(sb))


# -- softmax ------------------------------------------------------------------


def test_softmax_symmetric_row():
    assert np.allclose(ad.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]], atol=1e-15)


def test_softmax_hand_value():
    assert np.allclose(ad.softmax_rows(Tensor([[0.0, math.log(3)]])).data, [[0.25, 0.75]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_rows_sum_to_one_and_shift_invariant(x, c):
    p = ad.softmax_rows(Tensor(x)).data
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert np.allclose(ad.softmax_rows(Tensor(x + c)).data, p, atol=1e-9)


def test_softmax_extreme_inputs_stay_finite():
    p = ad.softmax_rows(Tensor([[1e300, -1e300, 0.0]])).data
    assert np.all(np.isfinite(p)) and p[0, 0] == 1.0


def test_masked_softmax_zeroes_masked_entries():
    p = ad.softmax(Tensor([[5.0, 1.0, 2.0]]), mask=np.array([[False, True, True]])).data
    assert p[0, 0] == 0.0 and math.isclose(p.sum(), 1.0)


# -- activations --------------------------------------------------------------


def test_activation_values():
    assert ad.activation(Tensor(0.0), "sigmoid").item() == 0.5
    assert ad.activation(Tensor(0.0), "gelu").item() == 0.0
    assert math.isclose(ad.activation(Tensor(math.log(3)), "sigmoid").item(), 0.75, abs_tol=1e-15)


def test_activation_unknown_kind():
    with pytest.raises(ValueError):
        ad.activation(Tensor(0.0), "relu6")


def test_sigmoid_stable_at_extremes():
    s = ad.sigmoid(Tensor([-1000.0, 1000.0])).data
    assert s[0] == 0.0 and s[1] == 1.0


def test_gelu_matches_erf_form():
    x = np.linspace(-4, 4, 17)
    ref = 0.5 * x * (1 + np.array([math.erf(v / math.sqrt(2)) for v in x]))
    assert np.allclose(ad.gelu(Tensor(x)).data, ref, atol=1e-15)


# -- layer norm ---------------------------------------------------------------


def test_layer_norm_constant_vector():
    out = ad.layer_norm(Tensor(np.full(4, 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.array_equal(out.data, np.zeros(4))


def test_layer_norm_plus_minus_one():
    out = ad.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
    assert np.allclose(out.data, [1.0, -1.0], atol=1e-15)


def test_layer_norm_gradient(rng):
    params, errs = _grad_of(lambda x, g, b: (ad.layer_norm(x, g, b) * Tensor(np.arange(6.0))).sum(),
                            (3, 6), (6,), (6,), rng=rng)
    assert max(errs.values()) < 1e-5


def test_layer_norm_needs_two_features():
    with pytest.raises(ContractError):
        ad.layer_norm(Tensor([[1.0]]), Tensor([1.0]), Tensor([0.0]))


# -- gather_rows --------------------------------------------------------------


def test_gather_first_row():
    table = Tensor(np.arange(6.0).reshape(3, 2))
    assert np.array_equal(ad.gather_rows(table, [0]).data, [[0.0, 1.0]])


def test_gather_repeated_ids_accumulate():
    table = Parameter(np.zeros((3, 2)))
    ad.backward(ad.gather_rows(table, [2, 2]).sum())
    assert np.array_equal(table.grad, [[0, 0], [0, 0], [2, 2]])


def test_gather_empty_ids():
    out = ad.gather_rows(Tensor(np.ones((3, 4))), np.zeros(0, dtype=int))
    assert out.shape == (0, 4)


def test_gather_out_of_range():
    with pytest.raises(IndexError):
        ad.gather_rows(Tensor(np.ones((3, 4))), [3])


# -- backward -----------------------------------------------------------------


def test_backward_sum_gives_ones():
    w = Parameter(np.zeros((2, 3)))
    ad.backward(w.sum())
    assert np.array_equal(w.grad, np.ones((2, 3)))


def test_backward_sigmoid_at_zero():
    w = Parameter(np.zeros(4))
    ad.backward(ad.sigmoid(w).sum())
    assert np.array_equal(w.grad, np.full(4, 0.25))


def test_backward_rejects_non_scalar():
    with pytest.raises(ContractError):
        ad.backward(Parameter(np.ones(2)) * 2.0)


def test_backward_shared_subexpression():
    w = Parameter(np.array([3.0]))
    y = w * w
    ad.backward((y + y).sum())
    assert w.grad[0] == 12.0


def test_backward_deep_chain_is_iterative():
    w = Parameter(np.array([1.0]))
    y = w
    for _ in range(5000):
        y = y * 1.0
    ad.backward(y.sum())
    assert w.grad[0] == 1.0


def test_no_grad_records_nothing():
    w = Parameter(np.ones(2))
    with ad.no_grad():
        y = (w * 2.0).sum()
    assert not y.requires_grad and y._prev == ()


def test_non_finite_forward_raises():
    with pytest.raises(FloatingPointError):
        ad.log(Tensor([0.0]))


def test_unreached_listed_params_get_zero_grad():
    a, b = Parameter(np.ones(2)), Parameter(np.ones(3))
    ad.backward(a.sum(), [a, b])
    assert np.array_equal(b.grad, np.zeros(3))


# -- every differentiable op vs finite differences ---------------------------

OPS = {
    "add_broadcast": (lambda a, b: (a + b).sum() * 1.0, [(3, 4), (4,)], False),
    "sub": (lambda a, b: ((a - b) * (a - b)).sum(), [(3, 4), (3, 4)], False),
    "mul_broadcast": (lambda a, b: (a * b).sum(), [(2, 3, 4), (3, 1)], False),
    "div": (lambda a, b: (a / b).sum(), [(3, 4), (3, 4)], True),
    "exp": (lambda a: ad.exp(a).sum(), [(3, 4)], False),
    "log": (lambda a: ad.log(a).sum(), [(3, 4)], True),
    "tanh": (lambda a: ad.tanh(a).sum(), [(3, 4)], False),
    "sigmoid": (lambda a: ad.sigmoid(a).sum(), [(3, 4)], False),
    "gelu": (lambda a: ad.gelu(a).sum(), [(3, 4)], False),
    "matmul": (lambda a, b: ad.tanh(a @ b).sum(), [(2, 3, 4), (4, 5)], False),
    "sum_axis": (lambda a: (ad.sum_(a, axis=1) * ad.sum_(a, axis=1)).sum(), [(3, 4)], False),
    "mean": (lambda a: (ad.mean(a, axis=0, keepdims=True) * a).sum(), [(3, 4)], False),
    "reshape_transpose": (lambda a: (ad.transpose(ad.reshape(a, (4, 3)), (1, 0)) * a).sum(), [(3, 4)], False),
    "take": (lambda a: (a[np.array([0, 2, 2])] * a[np.array([1, 1, 0])]).sum(), [(3, 4)], False),
    "concat": (lambda a, b: ad.tanh(ad.concat([a, b], axis=-1)).sum(), [(2, 3), (2, 4)], False),
    "masked_fill": (lambda a: ad.masked_fill(a, np.eye(3, 4, dtype=bool), 0.5).sum() * a.sum(), [(3, 4)], False),
    "gather_rows": (lambda a: ad.tanh(ad.gather_rows(a, [[0, 2], [2, 1]])).sum(), [(3, 4)], False),
    "softmax": (lambda a: (ad.softmax(a, axis=-1) * Tensor(np.arange(4.0))).sum(), [(3, 4)], False),
    "softmax_masked": (lambda a: (ad.softmax(a, -1, np.array([True, False, True, True])) *
                                  Tensor(np.arange(4.0))).sum(), [(3, 4)], False),
    "log_softmax": (lambda a: (ad.log_softmax(a) * Tensor(np.arange(4.0))).sum(), [(3, 4)], False),
    "layer_norm": (lambda a, g, b: (ad.layer_norm(a, g, b) * Tensor(np.arange(4.0))).sum(),
                   [(3, 4), (4,), (4,)], False),
    "cross_entropy": (lambda a: ad.cross_entropy(a, np.array([[0, 3, 1]]), np.array([[True, True, False]])),
                      [(1, 3, 4)], False),
    "bce_with_logits": (lambda a: ad.bce_with_logits(a, np.array([[1.0, 0.0, 1.0, 0.0]] * 3)), [(3, 4)], False),
    "neg_rsub": (lambda a: ((1.0 - a) * (-a)).sum(), [(3, 4)], False),
    "activation_sigmoid": (lambda a: ad.activation(a, "sigmoid").sum(), [(3, 4)], False),
    "softmax_rows": (lambda a: (ad.softmax_rows(a) * Tensor(np.arange(4.0))).sum(), [(3, 4)], False),
    # a fresh generator per call keeps the mask fixed across finite-difference probes
    "dropout": (lambda a: (ad.dropout(a, 0.3, np.random.default_rng(5)) * a).sum(), [(3, 4)], False),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradient(name):
    fn, shapes, positive = OPS[name]
    _, errs = _grad_of(fn, *shapes, positive=positive, rng=np.random.default_rng(7))
    assert max(errs.values()) < 1e-4, (name, errs)


def test_relative_error_of_equal_zero_arrays():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_numerical_grad_of_square():
    x = np.array([3.0])
    assert math.isclose(numerical_grad(lambda: float(x[0] ** 2), x)[0], 6.0, rel_tol=1e-8)


# -- cross entropy / bce values ----------------------------------------------


def test_cross_entropy_uniform_logits():
    loss = ad.cross_entropy(Tensor(np.zeros((2, 5))), np.array([0, 3]))
    assert math.isclose(loss.item(), math.log(5), rel_tol=1e-12)


def test_bce_at_zero_logit():
    assert math.isclose(ad.bce_with_logits(Tensor(np.zeros(3)), np.array([0.0, 1.0, 1.0])).item(), math.log(2))


def test_dropout_zero_is_identity():
    x = Tensor(np.arange(4.0))
    assert ad.dropout(x, 0.0, None) is x


# -- adam -------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params():
    p = [np.array([1.0, -2.0])]
    adam_step(p, [np.zeros(2)], AdamState(), lr=0.1)
    assert np.array_equal(p[0], [1.0, -2.0])


def test_adam_step_decreases_square():
    w = [np.array([1.0])]
    adam_step(w, [2 * w[0]], AdamState(), lr=0.1)
    assert w[0][0] ** 2 < 1.0


def test_adam_is_deterministic():
    def run():
        p = [np.random.default_rng(3).normal(size=5)]
        state = AdamState()
        for k in range(10):
            adam_step(p, [np.sin(p[0] * (k + 1))], state, lr=0.01)
        return p[0]

    assert np.array_equal(run(), run())


def test_adam_class_state_round_trip():
    w = Parameter(np.ones(3))
    opt = Adam([w], lr=0.1)
    for _ in range(3):
        opt.zero_grad()
        ad.backward((w * w).sum(), [w])
        opt.step()
    restored = Adam([Parameter(w.data.copy())], lr=0.1)
    restored.load_state_arrays(opt.state_arrays())
    assert restored.state.step == 3
    assert all(np.array_equal(a, b) for a, b in zip(restored.state.m, opt.state.m))


def test_adam_clips_gradient_norm():
    w = Parameter(np.zeros(2))
    opt = Adam([w], lr=1.0, clip_norm=1.0)
    w.grad = np.array([300.0, 400.0])
    opt.step()
    # first Adam step moves each coordinate by lr regardless of scale; clipping must not break that
    assert np.allclose(np.abs(w.data), 1.0, atol=1e-6)
