"""Network core: forward evaluation, exact gradients, Adam, serialization."""

import io
import math

import numpy as np
import pytest

from orio import nn
from orio.errors import DimensionError, FormatError, NonFiniteError


def test_forward_identity_single_layer():
    p = nn.MlpParams((np.eye(2),), (np.zeros(2),), ("identity",))
    out = nn.mlp_forward(p, np.array([1.0, 2.0]))
    assert np.array_equal(out, np.array([1.0, 2.0]))


def test_forward_relu_clips_negative_preactivation():
    p = nn.MlpParams((np.array([[1.0, 1.0]]),), (np.array([-3.0]),), ("relu",))
    out = nn.mlp_forward(p, np.array([1.0, 1.0]))
    assert np.array_equal(out, np.array([0.0]))


def test_forward_matches_scalar_composition():
    rng = np.random.default_rng(7)
    p = nn.make_mlp([2, 3, 2], rng)
    x = np.array([0.3, -1.2])
    # hand-rolled composition with scalar arithmetic
    h = []
    for i in range(3):
        z = sum(p.weights[0][i, j] * x[j] for j in range(2)) + p.biases[0][i]
        h.append(math.tanh(z))
    y = []
    for i in range(2):
        y.append(sum(p.weights[1][i, j] * h[j] for j in range(3)) + p.biases[1][i])
    assert np.abs(nn.mlp_forward(p, x) - np.array(y)).max() <= 1e-12


def test_forward_deterministic():
    rng = np.random.default_rng(3)
    p = nn.make_mlp([4, 8, 3], rng)
    x = rng.standard_normal(4)
    a = nn.mlp_forward(p, x)
    b = nn.mlp_forward(p, x)
    assert np.array_equal(a, b)


def test_forward_dimension_mismatch_names_layer():
    rng = np.random.default_rng(0)
    p = nn.make_mlp([3, 2], rng)
    with pytest.raises(DimensionError, match="layer 0"):
        nn.mlp_forward(p, np.zeros(4))


def test_layer_chain_validation():
    with pytest.raises(DimensionError, match="layer 1"):
        nn.MlpParams((np.eye(2), np.eye(3)), (np.zeros(2), np.zeros(3)),
                     ("tanh", "identity"))


def test_nonfinite_parameters_rejected():
    w = np.eye(2)
    w[0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        nn.MlpParams((w,), (np.zeros(2),), ("identity",))


def test_gradient_linear_layer_analytic():
    v = np.array([1.0, -2.0, 0.5])
    u = np.array([3.0, 4.0])
    p = nn.MlpParams((np.zeros((2, 3)),), (np.zeros(2),), ("identity",))
    grads = nn.mlp_gradient(p, v, u)
    assert np.allclose(grads[0], np.outer(u, v))
    assert np.allclose(grads[1], u)


def test_gradient_zero_upstream():
    rng = np.random.default_rng(1)
    p = nn.make_mlp([3, 4, 2], rng)
    grads = nn.mlp_gradient(p, rng.standard_normal(3), np.zeros(2))
    assert all(np.array_equal(g, np.zeros_like(g)) for g in grads)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    p = nn.make_mlp([3, 5, 2], rng)
    x = rng.standard_normal(3)
    u = rng.standard_normal(2)

    def loss_fn(params):
        y = nn.mlp_forward(params, x)
        return float(y @ u), nn.mlp_gradient(params, x, u)

    assert nn.grad_check(loss_fn, p, step=1e-5) <= 1e-6


@pytest.mark.parametrize("hidden", ["tanh", "relu", "softplus"])
def test_gradcheck_all_activations(hidden):
    rng = np.random.default_rng(5)
    p = nn.make_mlp([2, 6, 2], rng, hidden=hidden)
    # offset keeps relu pre-activations away from the kink
    x = rng.standard_normal(2) + 0.7

    def loss_fn(params):
        y = nn.mlp_forward(params, x)
        g, _ = nn.mlp_backprop(params, x, y)
        return 0.5 * float(y @ y), g

    assert nn.grad_check(loss_fn, p, step=1e-6) <= 1e-5


def test_backprop_input_gradient():
    rng = np.random.default_rng(21)
    p = nn.make_mlp([3, 6, 2], rng)
    x = rng.standard_normal(3)
    u = rng.standard_normal(2)
    _, dx = nn.mlp_backprop(p, x, u)
    step = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        num = (nn.mlp_forward(p, x + e) @ u - nn.mlp_forward(p, x - e) @ u) / (2 * step)
        assert abs(dx[j] - num) <= 1e-7


def test_gaussian_head_zero_net():
    p = nn.MlpParams((np.zeros((4, 3)),), (np.zeros(4),), ("identity",))
    gp = nn.gaussian_head(p, np.ones(3))
    assert np.array_equal(gp.mean, np.zeros(2))
    assert np.allclose(gp.variances(), np.ones(2))


def test_gaussian_head_direct_exp():
    p = nn.MlpParams((np.zeros((4, 1)),),
                     (np.array([3.0, -1.0, 0.0, math.log(4.0)]),), ("identity",))
    gp = nn.gaussian_head(p, np.zeros(1))
    assert np.allclose(gp.mean, [3.0, -1.0])
    assert np.allclose(gp.variances(), [1.0, 4.0])


def test_gaussian_head_positive_variances_sweep():
    rng = np.random.default_rng(17)
    p = nn.make_mlp([3, 8, 4], rng)
    xs = rng.uniform(-10.0, 10.0, size=(10_000, 3))
    out = nn.mlp_forward(p, xs)
    _, var = nn.split_gaussian_output(out)
    assert (var > 0.0).all()


def test_gaussian_head_odd_width_rejected():
    rng = np.random.default_rng(2)
    p = nn.make_mlp([2, 3], rng)
    with pytest.raises(DimensionError, match="even"):
        nn.gaussian_head(p, np.zeros(2))


def test_adam_zero_gradient_is_noop():
    rng = np.random.default_rng(4)
    p = nn.make_mlp([2, 3], rng)
    st = nn.adam_init(nn.params_to_arrays(p))
    st, p2 = nn.adam_step(st, p, [np.zeros_like(a) for a in nn.params_to_arrays(p)])
    for a, b in zip(nn.params_to_arrays(p), nn.params_to_arrays(p2)):
        assert np.array_equal(a, b)
    assert st.step == 1


def test_adam_first_step_hand_computed():
    # single scalar parameter, gradient g: bias-corrected first step is
    # -lr * g / (|g| + eps * sqrt(1 - b2))  (exact algebra for t = 1)
    g = 0.37
    lr, b2, eps = 1e-3, 0.999, 1e-8
    p = nn.MlpParams((np.array([[2.0]]),), (np.zeros(1),), ("identity",))
    st = nn.adam_init(nn.params_to_arrays(p), lr=lr)
    st, p2 = nn.adam_step(st, p, [np.array([[g]]), np.zeros(1)])
    m_hat = g
    v_hat = g * g
    expected = 2.0 - lr * m_hat / (np.sqrt(v_hat) + eps)
    assert abs(p2.weights[0][0, 0] - expected) <= 1e-15


def test_adam_constant_gradient_approaches_lr_step():
    g = [np.array([[0.8]]), np.array([0.0])]
    p = nn.MlpParams((np.array([[0.0]]),), (np.zeros(1),), ("identity",))
    st = nn.adam_init(nn.params_to_arrays(p), lr=1e-3)
    prev = p.weights[0][0, 0]
    for _ in range(400):
        st, p = nn.adam_step(st, p, g)
    step = p.weights[0][0, 0] - prev
    # after convergence of the moment estimates, each step is -lr * sign(g)
    st, p2 = nn.adam_step(st, p, g)
    assert abs((p2.weights[0][0, 0] - p.weights[0][0, 0]) + 1e-3) <= 1e-6
    assert step < 0  # moved against the gradient throughout


def test_grad_check_detects_corrupted_gradient():
    rng = np.random.default_rng(9)
    p = nn.make_mlp([2, 3], rng)

    def bad_loss(params):
        arrays = nn.params_to_arrays(params)
        loss = 0.5 * sum(float(np.sum(a * a)) for a in arrays)
        grads = [a.copy() for a in arrays]
        grads[0][0, 0] *= 2.0  # corrupt one entry
        return loss, grads

    assert nn.grad_check(bad_loss, p) > 0.1


def test_grad_check_quadratic_loss():
    rng = np.random.default_rng(10)
    p = nn.make_mlp([2, 3], rng)

    def quad(params):
        arrays = nn.params_to_arrays(params)
        loss = 0.5 * sum(float(np.sum(a * a)) for a in arrays)
        return loss, [a.copy() for a in arrays]

    assert nn.grad_check(quad, p, step=1e-5) <= 1e-8


def test_grad_check_rejects_nonfinite_loss():
    rng = np.random.default_rng(12)
    p = nn.make_mlp([2, 2], rng)
    with pytest.raises(NonFiniteError):
        nn.grad_check(lambda q: (float("nan"), nn.params_to_arrays(q)), p)


def test_serialization_roundtrip_exact():
    rng = np.random.default_rng(13)
    p = nn.make_mlp([3, 7, 4], rng, hidden="relu")
    buf = io.StringIO()
    nn.write_mlp(p, buf)
    buf.seek(0)
    q = nn.read_mlp(buf)
    assert q.activations == p.activations
    for a, b in zip(nn.params_to_arrays(p), nn.params_to_arrays(q)):
        assert np.array_equal(a, b)


def test_serialization_truncated_file_clean_error(tmp_path):
    rng = np.random.default_rng(14)
    p = nn.make_mlp([3, 5, 2], rng)
    path = tmp_path / "net.txt"
    nn.save_mlp(p, path)
    text = path.read_text().splitlines()
    (tmp_path / "cut.txt").write_text("\n".join(text[: len(text) // 2]) + "\n")
    with pytest.raises(FormatError, match="truncated"):
        nn.load_mlp(tmp_path / "cut.txt")


def test_serialization_bad_magic(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("some-other-format 9\n")
    with pytest.raises(FormatError, match="orio-mlp 1"):
        nn.load_mlp(path)
