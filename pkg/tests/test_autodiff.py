import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gantransfer.autodiff import (
    BCE_EPS,
    RunningStats,
    Tensor,
    activation,
    avg_pool2d,
    batchnorm2d,
    bce,
    concat,
    elementwise,
    global_avg_pool,
    is_grad_enabled,
    leaky_relu,
    linear,
    loss,
    matmul,
    max_pool2d,
    no_grad,
    relu,
    sigmoid,
    softmax_cross_entropy,
    tanh,
)
from gantransfer.errors import (
    DegenerateBatch,
    DetachedTensor,
    DomainError,
    InvalidHyperparameter,
    InvalidTarget,
    NumericalOverflow,
    ShapeMismatch,
)

from _oracles import check_gradients, numeric_grad, rel_error

F64 = np.float64


# -- worked examples ---------------------------------------------------------------

def test_add_example():
    out = elementwise("add", Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_log_of_one_is_zero():
    assert elementwise("log", Tensor([1.0])).data.tolist() == [0.0]


def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    (x * x).backward()
    assert x.grad == pytest.approx(6.0)


def test_linear_scale_gradient():
    x = Tensor(5.0, requires_grad=True)
    (2 * x).backward()
    assert x.grad == pytest.approx(2.0)


def test_fan_out_accumulates():
    x = Tensor(1.5, requires_grad=True)
    (x + x).backward()
    assert x.grad == pytest.approx(2.0)


def test_gradients_accumulate_across_backward_calls():
    x = Tensor(2.0, requires_grad=True)
    (x * 3).backward()
    (x * 4).backward()
    assert x.grad == pytest.approx(7.0)


def test_matmul_identity_and_dot():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(Tensor(np.eye(2)), a).data, a.data)
    assert matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_sum_gradient_is_ones_times_bt():
    rng = np.random.default_rng(0)
    A, B = rng.uniform(-2, 2, (3, 4)), rng.uniform(-2, 2, (4, 2))
    a = Tensor(A, requires_grad=True)
    matmul(a, Tensor(B)).sum().backward()
    np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ B.T, rtol=1e-12)
    num = numeric_grad(lambda x: float((x @ B).sum()), [A.copy()], 0, 1e-4)
    assert rel_error(a.grad, num) <= 1e-4


def test_relu_tanh_leaky_examples():
    assert relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]
    assert tanh(Tensor(0.0)).item() == 0.0
    assert leaky_relu(Tensor([-5.0]), alpha=0.2).data[0] == pytest.approx(-1.0)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
def test_leaky_alpha_out_of_range(alpha):
    with pytest.raises(InvalidHyperparameter):
        leaky_relu(Tensor([1.0]), alpha=alpha)


def test_activation_dispatch():
    x = Tensor([-1.0, 0.5])
    np.testing.assert_array_equal(activation("relu", x).data, relu(x).data)
    np.testing.assert_array_equal(activation("sigmoid", x).data, sigmoid(x).data)
    with pytest.raises(ValueError):
        activation("swish", x)


def test_bce_examples():
    assert bce(Tensor([0.5], dtype=F64), [1.0]).item() == pytest.approx(math.log(2), abs=1e-12)
    assert bce(Tensor([1 - BCE_EPS], dtype=F64), [1.0]).item() == pytest.approx(0.0, abs=1e-6)
    # exactly 0 or 1 is clamped instead of producing inf
    assert np.isfinite(bce(Tensor([0.0, 1.0], dtype=F64), [1.0, 0.0]).item())


def test_bce_validation():
    with pytest.raises(InvalidTarget):
        bce(Tensor([0.5]), [0.5])
    with pytest.raises(ShapeMismatch):
        bce(Tensor([0.5, 0.5]), [1.0, 0.0, 1.0])
    with pytest.raises(DomainError):
        bce(Tensor([1.5]), [1.0])


def test_softmax_xent_validation_and_value():
    logits = Tensor([[0.0, 0.0], [2.0, 0.0]], dtype=F64)
    expected = (math.log(2) + math.log(1 + math.exp(-2))) / 2
    assert softmax_cross_entropy(logits, [1, 0]).item() == pytest.approx(expected)
    assert loss("softmax_cross_entropy", logits, [1, 0]).item() == pytest.approx(expected)
    with pytest.raises(InvalidTarget):
        softmax_cross_entropy(logits, [0, 2])
    with pytest.raises(ShapeMismatch):
        softmax_cross_entropy(logits, [0])


def test_batchnorm_symmetric_example():
    x = Tensor(np.array([1.0, 3.0]).reshape(2, 1, 1, 1))
    rs = RunningStats.fresh(1, F64)
    out = batchnorm2d(x, Tensor([1.0], dtype=F64), Tensor([0.0], dtype=F64), rs, eps=1e-12)
    np.testing.assert_allclose(out.data.ravel(), [-1.0, 1.0])
    # running stats move toward batch mean 2 and unbiased variance 2
    np.testing.assert_allclose(rs.mean, [0.2])
    np.testing.assert_allclose(rs.var, [0.9 * 1 + 0.1 * 2])


def test_batchnorm_zero_gamma_gives_beta():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(3, 2, 2, 2)))
    out = batchnorm2d(x, Tensor(np.zeros(2)), Tensor([0.5, -1.0]), RunningStats.fresh(2, F64))
    np.testing.assert_allclose(out.data[:, 0], 0.5)
    np.testing.assert_allclose(out.data[:, 1], -1.0)


def test_batchnorm_eval_uses_running_stats():
    x = Tensor(np.full((1, 1, 1, 1), 3.0))
    rs = RunningStats(np.array([1.0]), np.array([4.0]))
    out = batchnorm2d(x, Tensor([2.0], dtype=F64), Tensor([1.0], dtype=F64), rs, eps=0.0, train=False)
    assert out.data.item() == pytest.approx(2.0 * (3 - 1) / 2 + 1)


def test_batchnorm_degenerate_batch():
    x = Tensor(np.ones((1, 1, 1, 1)))
    with pytest.raises(DegenerateBatch):
        batchnorm2d(x, Tensor([1.0]), Tensor([0.0]), RunningStats.fresh(1))
    # eval mode is fine with a single value
    batchnorm2d(x, Tensor([1.0]), Tensor([0.0]), RunningStats.fresh(1), train=False)


# -- error paths --------------------------------------------------------------------

def test_log_nonpositive_raises():
    with pytest.raises(DomainError):
        elementwise("log", Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        Tensor([-1.0]).log()


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        Tensor(np.ones(3)) + Tensor(np.ones(4))
    with pytest.raises(ShapeMismatch):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_exp_overflow_is_an_error():
    with pytest.raises(NumericalOverflow):
        Tensor([1000.0]).exp()


def test_backward_on_untracked_tensor():
    y = Tensor([1.0]) * 2
    with pytest.raises(DetachedTensor):
        y.backward()


def test_backward_nonscalar_needs_seed():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeMismatch):
        (x * 2).backward()


def test_no_grad_blocks_recording():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        assert not is_grad_enabled()
        y = x * 2
    assert is_grad_enabled()
    assert not y.requires_grad
    with pytest.raises(DetachedTensor):
        y.sum().backward()


def test_detach_cuts_graph():
    x = Tensor([2.0], requires_grad=True)
    y = x.detach() * x
    y.sum().backward()
    assert x.grad.tolist() == [2.0]


def test_unsupported_dtype():
    with pytest.raises(TypeError):
        Tensor(np.array([1, 2]), dtype=np.int32)


def test_broadcast_gradient_sums_back():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    (x * b).sum().backward()
    np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])


# -- finite-difference checks: >= 50 random cases per op ------------------------------

N_CASES = 50


def _away_from_zero(a, margin=0.02):
    return np.where(a >= 0, a + margin, a - margin)


def _bn_train(x, g, b):
    return batchnorm2d(x, g, b, RunningStats.fresh(x.shape[1], x.dtype), eps=1e-5, train=True)


def _bn_eval(x, g, b):
    rs = RunningStats(np.linspace(-0.5, 0.5, x.shape[1]).astype(x.dtype),
                      np.linspace(0.5, 1.5, x.shape[1]).astype(x.dtype))
    return batchnorm2d(x, g, b, rs, eps=1e-5, train=False)


def _case(op: str, rng):
    """(callable, input arrays) for one random gradient check of ``op``."""
    u = lambda *shape: rng.uniform(-2, 2, shape)  # noqa: E731
    r = lambda: int(rng.integers(1, 4))  # noqa: E731
    if op in ("add", "sub", "mul"):
        shape = (r(), r())
        return (lambda a, b: elementwise(op, a, b)), [u(*shape), u(*shape)]
    if op == "div":
        shape = (r(), r())
        return (lambda a, b: elementwise("div", a, b)), [u(*shape), _away_from_zero(u(*shape), 0.5)]
    if op == "broadcast_mul":
        return (lambda a, b: a * b), [u(r(), 3), u(3)]
    if op == "neg":
        return (lambda a: -a), [u(r(), r())]
    if op == "log":
        return (lambda a: a.log()), [rng.uniform(0.2, 2.0, (r(), r()))]
    if op == "exp":
        return (lambda a: a.exp()), [u(r(), r())]
    if op == "matmul":
        m, k, n = r(), r(), r()
        return matmul, [u(m, k), u(k, n)]
    if op == "sum":
        return (lambda a: a.sum(axis=1, keepdims=True)), [u(r(), r(), 2)]
    if op == "mean":
        return (lambda a: a.mean(axis=(0, 2))), [u(r(), r(), 2)]
    if op == "reshape":
        return (lambda a: a.reshape(-1)), [u(r(), r())]
    if op == "transpose":
        return (lambda a: a.transpose(1, 0, 2)), [u(r(), r(), 2)]
    if op == "getitem":
        return (lambda a: a[1:, ::2]), [u(3, 4)]
    if op == "concat":
        return (lambda a, b: concat([a, b], axis=1)), [u(2, r()), u(2, r())]
    if op == "relu":
        return relu, [_away_from_zero(u(r(), r()))]
    if op == "leaky_relu":
        alpha = float(rng.uniform(0.05, 0.5))
        return (lambda a: leaky_relu(a, alpha)), [_away_from_zero(u(r(), r()))]
    if op == "tanh":
        return tanh, [u(r(), r())]
    if op == "sigmoid":
        return sigmoid, [u(r(), r())]
    if op == "linear":
        n, i, o = r(), r(), r()
        return linear, [u(n, i), u(i, o), u(o)]
    if op == "batchnorm_train":
        c = r()
        return _bn_train, [u(2, c, 2, 2), u(c), u(c)]
    if op == "batchnorm_eval":
        c = r()
        return _bn_eval, [u(r(), c, 2, 2), u(c), u(c)]
    if op == "max_pool":
        k = int(rng.integers(1, 3))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, k // 2 + 1))
        return (lambda a: max_pool2d(a, k, s, p)), [rng.permutation(np.linspace(-2, 2, 2 * 2 * 16)).reshape(2, 2, 4, 4)]
    if op == "avg_pool":
        k = int(rng.integers(1, 3))
        return (lambda a: avg_pool2d(a, k)), [u(r(), r(), 4, 4)]
    if op == "global_avg_pool":
        return global_avg_pool, [u(r(), r(), 3, 3)]
    if op == "bce":
        n = r() + 1
        y = rng.integers(0, 2, n).astype(float)
        return (lambda p: bce(p, y)), [rng.uniform(0.05, 0.95, n)]
    if op == "softmax_xent":
        n, k = r(), r() + 1
        t = rng.integers(0, k, n)
        return (lambda z: softmax_cross_entropy(z, t)), [u(n, k)]
    raise KeyError(op)


GRAD_OPS = ["add", "sub", "mul", "div", "broadcast_mul", "neg", "log", "exp", "matmul", "sum",
            "mean", "reshape", "transpose", "getitem", "concat", "relu", "leaky_relu", "tanh",
            "sigmoid", "linear", "batchnorm_train", "batchnorm_eval", "max_pool", "avg_pool",
            "global_avg_pool", "bce", "softmax_xent"]


@pytest.mark.parametrize("op", GRAD_OPS)
def test_gradcheck_f64(op):
    rng = np.random.default_rng(GRAD_OPS.index(op))
    worst = max(check_gradients(*_case(op, rng), rng, dtype=np.float64) for _ in range(N_CASES))
    assert worst <= 1e-4, f"{op}: relative error {worst:.3g}"


@pytest.mark.parametrize("op", GRAD_OPS)
def test_gradcheck_f32(op):
    rng = np.random.default_rng(100 + GRAD_OPS.index(op))
    worst = max(check_gradients(*_case(op, rng), rng, dtype=np.float32) for _ in range(N_CASES))
    assert worst <= 1e-2, f"{op}: relative error {worst:.3g}"


def test_gradients_are_deterministic():
    rng = np.random.default_rng(7)
    x0, w0 = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))

    def run():
        x, w = Tensor(x0.copy(), requires_grad=True), Tensor(w0.copy(), requires_grad=True)
        softmax_cross_entropy(tanh(matmul(x, w)), [0, 1, 1, 0]).backward()
        return x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()


# -- properties ------------------------------------------------------------------------

finite = hnp.arrays(np.float64, hnp.array_shapes(max_dims=2, max_side=5),
                    elements=st.floats(-1e6, 1e6, allow_nan=False))


@given(finite)
def test_tanh_and_sigmoid_ranges(a):
    t = tanh(Tensor(a)).data
    s = sigmoid(Tensor(a)).data
    assert np.all((t >= -1) & (t <= 1))
    assert np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))
    # strictly inside (0, 1) wherever f64 can represent it
    moderate = np.abs(a) < 30
    assert np.all((s[moderate] > 0) & (s[moderate] < 1))


@given(finite)
def test_relu_is_idempotent_and_nonnegative(a):
    once = relu(Tensor(a)).data
    assert np.all(once >= 0)
    np.testing.assert_array_equal(relu(Tensor(once)).data, once)


@settings(max_examples=50)
@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-5, 5)))
def test_softmax_xent_is_nonnegative_and_shift_invariant(z):
    t = [0, 1, 3]
    a = softmax_cross_entropy(Tensor(z), t).item()
    b = softmax_cross_entropy(Tensor(z + 3.0), t).item()
    assert a >= 0
    assert a == pytest.approx(b, abs=1e-9)
