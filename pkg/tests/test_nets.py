import numpy as np
import pytest

from motionmanifold import nets
from motionmanifold.basis import BasisSet
from motionmanifold.errors import TrainingError
from motionmanifold.geometry import curvegeom_euclidean


def fd_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        up = x.copy(); up.flat[i] += eps
        dn = x.copy(); dn.flat[i] -= eps
        g.flat[i] = (f(up) - f(dn)) / (2 * eps)
    return g


def test_create_is_seed_deterministic():
    a = nets.Mlp.create([3, 8, 2], seed=42)
    b = nets.Mlp.create([3, 8, 2], seed=42)
    c = nets.Mlp.create([3, 8, 2], seed=43)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    assert any(not np.array_equal(wa, wc)
               for wa, wc in zip(a.weights, c.weights))


def test_init_scale_is_fan_in_bounded():
    net = nets.Mlp.create([100, 50, 10], seed=0)
    for w in net.weights:
        bound = 1.0 / np.sqrt(w.shape[1])
        assert np.abs(w).max() <= bound
        assert np.abs(w).max() > 0.5 * bound        # actually fills the range


def test_forward_shapes_and_tanh_bounds():
    net = nets.Mlp.create([4, 16, 16, 3], seed=1)
    x = np.random.default_rng(0).normal(size=(7, 4))
    y = net.forward(x)
    assert y.shape == (7, 3)
    acts = net.forward_cache(x)
    assert len(acts) == 4
    for hidden in acts[1:-1]:
        assert np.abs(hidden).max() < 1.0           # tanh range


def test_vjp_matches_finite_differences():
    rng = np.random.default_rng(2)
    net = nets.Mlp.create([5, 12, 12, 4], seed=3)
    x = rng.normal(size=5)
    cot = rng.normal(size=4)
    input_grad, grads = net.vjp(x, cot)

    fd_x = fd_grad(lambda v: float(cot @ net.forward(v)), x)
    assert np.abs(input_grad - fd_x).max() < 1e-5

    for layer in range(net.n_layers):
        w0 = net.weights[layer].copy()

        def f(w):
            net.weights[layer] = w
            out = float(cot @ net.forward(x))
            net.weights[layer] = w0
            return out

        assert np.abs(grads[layer][0] - fd_grad(f, w0)).max() < 1e-5


def test_jvp_matches_directional_finite_differences():
    rng = np.random.default_rng(4)
    net = nets.Mlp.create([6, 10, 3], seed=5)
    x = rng.normal(size=6)
    v = rng.normal(size=6)
    eps = 1e-6
    fd = (net.forward(x + eps * v) - net.forward(x - eps * v)) / (2 * eps)
    assert np.abs(net.jvp(x, v) - fd).max() < 1e-5


def test_transpose_identity():
    # <u, J v> == <J^T u, v> to near machine precision
    rng = np.random.default_rng(6)
    net = nets.Mlp.create([7, 20, 5], seed=7)
    for _ in range(10):
        x = rng.normal(size=7)
        v = rng.normal(size=7)
        u = rng.normal(size=5)
        lhs = float(u @ net.jvp(x, v))
        grad_x, _ = net.vjp(x, u)
        rhs = float(grad_x @ v)
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_jacobian_consistent_with_jvp_and_vjp():
    rng = np.random.default_rng(8)
    net = nets.Mlp.create([4, 9, 3], seed=9)
    x = rng.normal(size=4)
    jac = net.jacobian(x)
    assert jac.shape == (3, 4)
    for i in range(4):
        e = np.zeros(4); e[i] = 1.0
        assert np.allclose(jac[:, i], net.jvp(x, e), atol=1e-12)
    for o in range(3):
        e = np.zeros(3); e[o] = 1.0
        gx, _ = net.vjp(x, e)
        assert np.allclose(jac[o], gx, atol=1e-12)


def test_batched_backward_sums_gradients():
    rng = np.random.default_rng(10)
    net = nets.Mlp.create([3, 8, 2], seed=11)
    xs = rng.normal(size=(5, 3))
    cots = rng.normal(size=(5, 2))
    acts = net.forward_cache(xs)
    _, grads = net.backward(acts, cots)
    total_w0 = np.zeros_like(net.weights[0])
    for x, c in zip(xs, cots):
        _, g = net.vjp(x, c)
        total_w0 += g[0][0]
    assert np.abs(grads[0][0] - total_w0).max() < 1e-12


def test_backward_through_jvp_matches_finite_differences():
    # gradient of <cot, jvp(x, v)> w.r.t. weights, directions held fixed
    rng = np.random.default_rng(12)
    net = nets.Mlp.create([3, 7, 7, 2], seed=13)
    xs = rng.normal(size=(4, 3))
    dirs = rng.normal(size=(4, 2, 3))
    cots = rng.normal(size=(4, 2, 2))

    acts = net.forward_cache(xs)
    acts, cache = net._push_tangents(acts, dirs)
    grads = net.backward_through_jvp(acts, cache, cots)

    def value():
        a = net.forward_cache(xs)
        _, c = net._push_tangents(a, dirs)
        return float(np.sum(c[-1][1] * cots))

    for layer in range(net.n_layers):
        w0 = net.weights[layer].copy()

        def f(w):
            net.weights[layer] = w
            out = value()
            net.weights[layer] = w0
            return out

        fd = fd_grad(f, w0, eps=1e-6)
        assert np.abs(grads[layer][0] - fd).max() < 1e-5


def test_adam_minimizes_quadratic():
    # single weight, no bias path: f(w) = (w - 3)^2
    net = nets.Mlp.create([1, 1], seed=0)
    net.weights[0][:] = 0.0
    net.biases[0][:] = 0.0
    state = nets.AdamState(net, learning_rate=0.05)
    for _ in range(2000):
        w = net.weights[0][0, 0]
        grads = [(np.array([[2 * (w - 3.0)]]), np.zeros(1))]
        nets.adam_step(state, net, grads)
    assert abs(net.weights[0][0, 0] - 3.0) < 1e-4


def test_adam_first_step_magnitude_is_learning_rate():
    # bias-corrected first update is lr * sign(grad) up to eps/|g|
    for scale in (1e-2, 1.0, 1e4):
        net = nets.Mlp.create([1, 1], seed=0)
        net.weights[0][:] = 0.0
        state = nets.AdamState(net, learning_rate=0.01)
        grads = [(np.array([[scale]]), np.zeros(1))]
        nets.adam_step(state, net, grads)
        assert net.weights[0][0, 0] == pytest.approx(-0.01, rel=1e-5)


def test_check_finite_grads_names_layer():
    net = nets.Mlp.create([2, 4, 1], seed=0)
    grads = nets.zero_grads(net)
    grads[1] = (grads[1][0] + np.nan, grads[1][1])
    with pytest.raises(TrainingError, match="layer 1"):
        nets.check_finite_grads(grads)


def test_add_grads_scales():
    net = nets.Mlp.create([2, 3, 1], seed=0)
    total = nets.zero_grads(net)
    extra = [(np.ones_like(w), np.ones_like(b))
             for w, b in zip(net.weights, net.biases)]
    total = nets.add_grads(total, extra, scale=0.5)
    assert np.all(total[0][0] == 0.5)
    assert np.all(total[1][1] == 0.5)


def test_serialization_round_trip(tmp_path):
    net = nets.Mlp.create([3, 6, 2], seed=21)
    path = tmp_path / "net.json"
    net.save(path)
    clone = nets.Mlp.load(path)
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.array_equal(clone.forward(x), net.forward(x))
    assert clone.sizes == net.sizes


def test_distortion_terms_shapes():
    basis = BasisSet.uniform(5, mode="via-point")
    metric = curvegeom_euclidean(basis, dim=2)
    dec = nets.Mlp.create([2, 8, 10], seed=0)
    z = np.random.default_rng(1).normal(size=(6, 2))
    acts, cache, ku, q, tr, tr_sq = nets.distortion_terms(dec, z, metric)
    assert tr.shape == (6,)
    assert tr_sq.shape == (6,)
    assert np.all(tr_sq >= 0)


def test_grad_of_distortion_matches_finite_differences():
    basis = BasisSet.uniform(4, mode="via-point")
    metric = curvegeom_euclidean(basis, dim=2)
    rng = np.random.default_rng(14)
    worst = 0.0
    for trial in range(20):
        dec = nets.Mlp.create([2, 6, 8], seed=100 + trial)
        z = rng.normal(size=(5, 2))
        value, grads = nets.grad_of_distortion(dec, z, metric)

        layer = int(rng.integers(0, dec.n_layers))
        i = int(rng.integers(0, dec.weights[layer].shape[0]))
        j = int(rng.integers(0, dec.weights[layer].shape[1]))
        eps = 1e-5
        w0 = dec.weights[layer][i, j]
        dec.weights[layer][i, j] = w0 + eps
        up, _ = nets.grad_of_distortion(dec, z, metric)
        dec.weights[layer][i, j] = w0 - eps
        dn, _ = nets.grad_of_distortion(dec, z, metric)
        dec.weights[layer][i, j] = w0
        fd = (up - dn) / (2 * eps)
        rel = abs(grads[layer][0][i, j] - fd) / max(abs(fd), 1e-8)
        worst = max(worst, rel)
    assert worst < 1e-3


def test_distortion_value_floor():
    # ratio E[S^2]/E[S]^2 >= 1/N by Cauchy-Schwarz; equality when S constant
    basis = BasisSet.uniform(4, mode="via-point")
    metric = curvegeom_euclidean(basis, dim=1)
    dec = nets.Mlp.create([2, 6, 4], seed=2)
    z = np.random.default_rng(3).normal(size=(8, 2))
    value, _ = nets.grad_of_distortion(dec, z, metric)
    assert value >= 1.0 / len(z) - 1e-12
