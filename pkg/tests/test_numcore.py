import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdpl import numcore as nc
from gdpl.numcore import GraphError, ShapeError, Tensor


def rand(rng, *shape):
    return nc.parameter(rng.standard_normal(shape))


# ---------------------------------------------------------------------------
# forward examples
# ---------------------------------------------------------------------------
def test_softmax_uniform_logits():
    out = nc.softmax(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)


def test_cosine_positive_scaling_is_one():
    v = Tensor([1.0, -2.0, 0.5])
    assert nc.cosine_similarity(v, v * 3.7).item() == pytest.approx(1.0, abs=1e-12)


def test_mean_of_ones_last_axis():
    np.testing.assert_array_equal(nc.mean(Tensor(np.ones((2, 3))), axis=-1).data, [1.0, 1.0])


def test_ops_match_numpy():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 5))
    np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, a @ b)
    np.testing.assert_allclose(nc.concat([Tensor(a), Tensor(a)], axis=0).data, np.concatenate([a, a]))
    np.testing.assert_allclose(nc.relu(Tensor(a)).data, np.maximum(a, 0))
    np.testing.assert_allclose(Tensor(a)[1:, ::2].data, a[1:, ::2])
    ln = nc.layer_norm(Tensor(a), Tensor(np.ones(4)), Tensor(np.zeros(4))).data
    np.testing.assert_allclose(ln, (a - a.mean(-1, keepdims=True)) / np.sqrt(a.var(-1, keepdims=True) + 1e-5))


def test_gelu_tanh_form():
    x = np.linspace(-4, 4, 41)
    ref = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))
    np.testing.assert_allclose(nc.gelu(Tensor(x)).data, ref, atol=1e-14)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
        nc.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_leading_batch_broadcast_allowed():
    out = Tensor(np.ones((5, 2, 3))) + Tensor(np.arange(3.0))
    assert out.shape == (5, 2, 3)


def test_finite_outputs_on_finite_inputs():
    x = Tensor(np.array([[1e3, -1e3, 0.0]]))
    for y in (nc.softmax(x), nc.log_softmax(x), nc.gelu(x), nc.normalize(x)):
        assert np.isfinite(y.data).all()


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------
def test_linear_gradient_equals_input():
    x = np.array([1.0, -2.0, 3.0])
    w = nc.parameter(np.zeros(3))
    nc.tsum(w * Tensor(x)).backward()
    np.testing.assert_array_equal(w.grad, x)


def test_independent_loss_gives_zero_gradient():
    w = nc.parameter(np.ones(3))
    u = nc.parameter(np.ones(2))
    loss = nc.tsum(u * u) + nc.tsum(w * 0.0)
    loss.backward()
    np.testing.assert_array_equal(w.grad, 0.0)


def test_non_scalar_loss_rejected():
    w = nc.parameter(np.ones(3))
    with pytest.raises(GraphError):
        (w * 2.0).backward()


def test_second_backward_rejected():
    w = nc.parameter(np.ones(3))
    loss = nc.tsum(w * w)
    loss.backward()
    with pytest.raises(GraphError):
        loss.backward()


def test_graph_released_after_backward():
    w = nc.parameter(np.ones(3))
    h = w * 2.0
    loss = nc.tsum(h)
    loss.backward()
    assert h._parents == () and loss._parents == ()


def test_shared_node_visited_once():
    w = nc.parameter(np.array(2.0))
    h = w * w
    (h + h).backward()
    assert w.grad == pytest.approx(8.0)


def test_no_grad_builds_no_graph():
    w = nc.parameter(np.ones(2))
    with nc.no_grad():
        y = nc.tsum(w * 3.0)
    assert not y.requires_grad
    with pytest.raises(GraphError):
        y.backward()


def test_backward_is_bitwise_deterministic():
    def grads():
        rng = np.random.default_rng(3)
        w = rand(rng, 4, 6)
        x = Tensor(rng.standard_normal((5, 4)))
        nc.tsum(nc.softmax(nc.gelu(x @ w))).backward()
        return w.grad

    assert grads().tobytes() == grads().tobytes()


def test_finite_diff_square():
    th = nc.parameter(np.array(3.0))
    th_grad_err = nc.finite_diff_check(lambda: th * th, th)
    assert th_grad_err < 1e-8


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_finite_diff_rejects_non_finite():
    th = nc.parameter(np.array(-1.0))
    with pytest.raises(FloatingPointError):
        nc.finite_diff_check(lambda: nc.log(th), th)


OPS = {
    "matmul": lambda a, b: nc.tsum(a @ b.transpose()),
    "add": lambda a, b: nc.tsum((a + b) * a),
    "concat": lambda a, b: nc.tsum(nc.concat([a, b], axis=0) * nc.concat([b, a], axis=0)),
    "mean": lambda a, b: nc.tsum(nc.mean(a * b, axis=-1) * nc.mean(a, axis=0)[0]),
    "layer_norm": lambda a, b: nc.tsum(nc.layer_norm(a, b[0], b[-1]) * b),
    "relu": lambda a, b: nc.tsum(nc.relu(a) * b),
    "gelu": lambda a, b: nc.tsum(nc.gelu(a) * b),
    "softmax": lambda a, b: nc.tsum(nc.softmax(a) * b),
    "log_softmax": lambda a, b: nc.tsum(nc.log_softmax(a) * b),
    "cosine_similarity": lambda a, b: nc.tsum(nc.cosine_similarity(a, b)),
    "slice": lambda a, b: nc.tsum(a[:, 1:] * b[:, :-1]) + nc.tsum(a[np.array([0, 0])] * b[0]),
    "div": lambda a, b: nc.tsum(a / (b * b + 1.0)),
    "exp_log_sqrt": lambda a, b: nc.tsum(nc.log(nc.exp(a) + 1.0) * nc.sqrt(b * b + 1.0)),
    "normalize": lambda a, b: nc.tsum(nc.normalize(a) * b),
    "reshape_transpose": lambda a, b: nc.tsum(a.reshape(-1) * b.transpose().reshape(-1)),
}


@pytest.mark.parametrize("op", sorted(OPS))
@settings(max_examples=8, deadline=None)
@given(rows=st.integers(2, 4), cols=st.integers(2, 5), seed=st.integers(0, 2 ** 16))
def test_op_gradients_match_finite_differences(op, rows, cols, seed):
    rng = np.random.default_rng(seed)
    a, b = rand(rng, rows, cols), rand(rng, rows, cols)
    assert nc.finite_diff_check(lambda: OPS[op](a, b), [a, b]) < 1e-4


@settings(max_examples=30, deadline=None)
@given(rows=st.integers(1, 5), cols=st.integers(1, 8), seed=st.integers(0, 2 ** 16))
def test_softmax_rows_positive_and_normalised(rows, cols, seed):
    x = np.random.default_rng(seed).normal(0, 10, size=(rows, cols))
    p = nc.softmax(Tensor(x)).data
    assert (p > 0).all()
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 16), c1=st.floats(1e-3, 1e3), c2=st.floats(1e-3, 1e3))
def test_cosine_scale_invariance(seed, c1, c2):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(6), rng.standard_normal(6)
    ref = nc.cosine_similarity(Tensor(a), Tensor(b)).item()
    assert nc.cosine_similarity(Tensor(a * c1), Tensor(b * c2)).item() == pytest.approx(ref, abs=1e-12)


# ---------------------------------------------------------------------------
# optimisers and modules
# ---------------------------------------------------------------------------
def test_sgd_single_step_example():
    th = nc.parameter(np.array(1.0))
    th.grad = np.array(2.0)
    nc.sgd_step([th], nc.SgdConfig(learning_rate=0.1, momentum=0.0))
    assert th.item() == pytest.approx(0.8)


def test_sgd_zero_gradient_keeps_params():
    th = nc.parameter(np.array([1.0, -1.0]))
    opt = nc.SGD([th], 0.5, 0.9)
    for _ in range(5):
        th.grad = np.zeros(2)
        opt.step()
    np.testing.assert_array_equal(th.data, [1.0, -1.0])


def test_sgd_momentum_state_retained():
    th = nc.parameter(np.array(0.0))
    cfg = nc.SgdConfig(learning_rate=1.0, momentum=0.5)
    state = None
    for _ in range(2):
        th.grad = np.array(1.0)
        state = nc.sgd_step([th], cfg, state)
    # v1 = 1, v2 = 0.5 + 1
    assert th.item() == pytest.approx(-2.5)


def test_sgd_missing_grad_names_parameter():
    th = nc.parameter(np.ones(2))
    opt = nc.SGD([th], names=["prompt.ctx"])
    with pytest.raises(GraphError, match="prompt.ctx"):
        opt.step()


def test_sgd_config_validation():
    with pytest.raises(ValueError):
        nc.SgdConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        nc.SgdConfig(momentum=1.0)
    assert nc.SgdConfig() == nc.SgdConfig(3.5e-3, 0.9)


def test_sgd_convex_quadratic_decreases_monotonically():
    # f = 0.5 * x^T A x with curvature at most 4; lr below 2/L
    a = np.diag([4.0, 1.0, 0.25])
    x = nc.parameter(np.array([[1.0, -2.0, 3.0]]))
    opt = nc.SGD([x], lr=0.2, momentum=0.0)
    prev = np.inf
    for _ in range(50):
        loss = nc.tsum(x * (x @ Tensor(a))) * 0.5
        assert loss.item() < prev
        prev = loss.item()
        opt.zero_grad()
        loss.backward()
        opt.step()


def test_module_state_dict_roundtrip():
    class Tiny(nc.Module):
        def __init__(self):
            self.w = nc.parameter(np.ones((2, 2)))
            self.layers = [nc.parameter(np.zeros(3))]
            self._hidden = nc.parameter(np.ones(1))

    m = Tiny()
    assert [n for n, _ in m.named_parameters()] == ["w", "layers.0"]
    state = m.state_dict()
    m.w.data += 1
    m.load_state_dict(state)
    np.testing.assert_array_equal(m.w.data, 1.0)
    with pytest.raises(ShapeError):
        m.load_state_dict({"w": np.ones(3), "layers.0": np.zeros(3)})
