import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmcc import kernels, nn
from dmcc.nn import AdamState, Architecture, MlpModel, adam_step, cosine_lr, he_init

ARCH = Architecture()
SIZES = ARCH.sizes


def oracle_forward(model, x):
    """Layer-by-layer loop over the stored weights, then the documented output clamp."""
    a = [float(v) for v in x]
    for l, (w, b) in enumerate(model.layers):
        z = [sum(float(w[i, j]) * a[j] for j in range(len(a))) + float(b[i]) for i in range(len(b))]
        a = z if l == len(model.layers) - 1 else [max(v, 0.0) for v in z]
    r, g = (min(max(v, 0.001), 0.998) for v in a)
    if r + g > 0.999:
        r, g = r * 0.999 / (r + g), g * 0.999 / (r + g)
    return r, g


def oracle_loss(theta, X, L, lam):
    model = MlpModel.from_theta(ARCH, theta)
    # float32 storage would lose precision; rebuild from float64 layers directly
    model.layers = [(w.astype(np.float64), b.astype(np.float64))
                    for w, b in kernels._unpack(theta, SIZES)]
    total = 0.0
    for x, ell in zip(X, L):
        r, g = oracle_forward(model, x)
        est = np.array([r, g, 1 - r - g])
        u = est @ ell / np.linalg.norm(est) / np.linalg.norm(ell)
        total += math.acos(min(max(u, -1 + 1e-7), 1 - 1e-7))
    return total / len(X) + lam * np.abs(theta).sum()


def random_model(seed, bias_scale=0.1):
    rng = np.random.default_rng(seed)
    model = he_init(ARCH, rng)
    theta = model.theta() + np.concatenate(
        [np.concatenate([np.zeros(w.size), rng.normal(0, bias_scale, b.size)]) for w, b in model.layers])
    theta[-2:] = rng.uniform(0.25, 0.4, 2)
    return theta, rng


class TestArchitecture:
    def test_param_count(self):
        assert ARCH.param_count == 651
        assert ARCH.sizes.tolist() == [8, 11, 11, 11, 11, 11, 2]

    def test_output_dim_fixed(self):
        with pytest.raises(ValueError):
            Architecture(output_dim=3)


class TestInit:
    def test_deterministic(self):
        a = he_init(ARCH, np.random.default_rng(42)).theta()
        b = he_init(ARCH, np.random.default_rng(42)).theta()
        np.testing.assert_array_equal(a, b)

    def test_biases_zero(self):
        assert all(not b.any() for _, b in he_init(ARCH, 0).layers)

    def test_first_layer_std(self):
        rng = np.random.default_rng(0)
        w = np.concatenate([he_init(ARCH, rng).layers[0][0].ravel() for _ in range(114)])
        assert w.size >= 10_000
        assert abs(w.std() / math.sqrt(2 / 8) - 1) < 0.05


class TestForward:
    def test_zero_network_clamps(self):
        m = MlpModel.from_theta(ARCH, np.zeros(651))
        assert nn.forward(m, np.full(8, 0.3)) == pytest.approx((0.001, 0.001))

    def test_dead_relu_gives_head_bias(self):
        theta, _ = random_model(1)
        layers = kernels._unpack(theta, SIZES)
        layers[0][0][:] = -np.abs(layers[0][0])
        for _, b in layers[:-1]:
            b[:] = -1.0
        layers[-1][1][:] = (0.3, 0.4)
        m = MlpModel.from_theta(ARCH, theta)
        assert nn.forward(m, np.full(8, 0.3)) == pytest.approx((0.3, 0.4), abs=1e-7)

    def test_matches_loop_oracle(self):
        for seed in range(20):
            theta, rng = random_model(seed)
            m = MlpModel.from_theta(ARCH, theta)
            x = rng.uniform(0, 1, 8)
            assert nn.forward(m, x) == pytest.approx(oracle_forward(m, x), abs=1e-6)

    def test_rescale_keeps_sum_below_one(self):
        m = MlpModel.constant((0.9, 0.9))
        r, g = nn.forward(m, np.zeros(8))
        assert r + g == pytest.approx(0.999) and r == pytest.approx(g)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_output_inside_simplex(self, seed):
        rng = np.random.default_rng(seed)
        theta = rng.normal(0, 2, 651)
        out = nn.predict_theta(theta, SIZES, rng.uniform(0, 1, (16, 8)))
        assert np.all(out >= 0.001 - 1e-15) and np.all(out <= 0.998)
        assert np.all(out.sum(axis=1) <= 0.999 + 1e-12)


class TestLoss:
    def test_parallel_prediction_near_zero(self):
        m = MlpModel.constant((0.3, 0.45))
        ell = np.array([0.3, 0.45, 0.25])
        assert nn.loss(m, np.zeros(8), ell * 3, lam=0) <= 1e-3

    def test_zero_theta_is_pure_angular(self):
        m = MlpModel.from_theta(ARCH, np.zeros(651))
        ell = np.array([0.5, 0.3, 0.2])
        est = np.array([0.001, 0.001, 0.998])
        expected = math.acos(est @ ell / np.linalg.norm(est) / np.linalg.norm(ell))
        assert nn.loss(m, np.ones(8), ell, lam=1e-5) == pytest.approx(expected, abs=1e-12)

    def test_matches_reevaluation_oracle(self):
        for seed in range(10):
            theta, rng = random_model(seed)
            X = rng.uniform(0, 1, (5, 8))
            L = rng.uniform(0.1, 1, (5, 3))
            got = nn.loss_and_grad(theta, SIZES, X, L, 1e-5)[0]
            assert got == pytest.approx(oracle_loss(theta, X, L, 1e-5), abs=1e-8)


def _far_from_kinks(theta, x, margin=1e-3):
    layers = kernels._unpack(theta, SIZES)
    a = x
    for l, (w, b) in enumerate(layers):
        z = w @ a + b
        if l < len(layers) - 1:
            if np.min(np.abs(z)) < margin:
                return False
            a = np.maximum(z, 0)
    return (np.all(z > 0.001 + margin) and np.all(z < 0.998 - margin)
            and z.sum() < 0.999 - margin and np.min(np.abs(theta)) > margin)


def gradient_triples(n=20, seed=2024):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        theta, _ = random_model(int(rng.integers(2**31)))
        x = rng.uniform(0.05, 0.7, 8)
        ell = rng.uniform(0.1, 1, 3)
        if _far_from_kinks(theta, x):
            out.append((theta, x, ell))
    return out


def max_fd_relative_error(loss_grad, triples, h=1e-4, lam=1e-5):
    worst = 0.0
    for theta, x, ell in triples:
        X, L = x[None], ell[None]
        _, grad = loss_grad(theta, SIZES, X, L, lam)
        fd = np.empty_like(theta)
        for k in range(theta.size):
            tp, tm = theta.copy(), theta.copy()
            tp[k] += h
            tm[k] -= h
            fd[k] = (loss_grad(tp, SIZES, X, L, lam)[0] - loss_grad(tm, SIZES, X, L, lam)[0]) / (2 * h)
        rel = np.abs(grad - fd) / np.maximum(np.maximum(np.abs(grad), np.abs(fd)), 1e-6)
        worst = max(worst, float(rel.max()))
    return worst


class TestGradient:
    def test_finite_differences(self, kernel_impl):
        assert max_fd_relative_error(kernel_impl["loss_grad"], gradient_triples(5)) < 1e-4

    def test_l1_sign_rule(self):
        # a 1-parameter slice: pick two weights and zero the rest of the loss with lam only
        theta = np.zeros(651)
        theta[0], theta[1] = 0.5, -0.2
        lam = 1e-5
        _, g_lam = nn.loss_and_grad(theta, SIZES, np.zeros((1, 8)), np.ones((1, 3)), lam)
        _, g_0 = nn.loss_and_grad(theta, SIZES, np.zeros((1, 8)), np.ones((1, 3)), 0.0)
        assert (g_lam - g_0)[:2] == pytest.approx([lam, -lam], abs=1e-20)

    def test_gradient_vanishes_at_label(self):
        theta = np.zeros(651)
        theta[-2:] = (0.3, 0.45)
        _, g = nn.loss_and_grad(theta, SIZES, np.full((1, 8), 0.3), np.array([[0.3, 0.45, 0.25]]), 0.0)
        assert np.linalg.norm(g) <= 1e-3

    def test_batch_gradient_is_mean(self):
        theta, rng = random_model(5)
        X, L = rng.uniform(0, 1, (4, 8)), rng.uniform(0.1, 1, (4, 3))
        _, g = nn.loss_and_grad(theta, SIZES, X, L, 0.0)
        parts = [nn.loss_and_grad(theta, SIZES, X[i:i + 1], L[i:i + 1], 0.0)[1] for i in range(4)]
        np.testing.assert_allclose(g, np.mean(parts, axis=0), atol=1e-14)


class TestKernelParity:
    def test_forward_and_grad_agree(self):
        for seed in range(10):
            theta, rng = random_model(seed, bias_scale=0.5)
            X, L = rng.uniform(0, 1, (33, 8)), rng.uniform(0.05, 1, (33, 3))
            np.testing.assert_allclose(kernels.forward_numba(theta, SIZES, X),
                                       kernels.forward_numpy(theta, SIZES, X), atol=1e-14)
            la, ga = kernels.loss_grad_numba(theta, SIZES, X, L, 1e-5)
            lb, gb = kernels.loss_grad_numpy(theta, SIZES, X, L, 1e-5)
            assert la == pytest.approx(lb, abs=1e-13)
            np.testing.assert_allclose(ga, gb, atol=1e-12)

    def test_adam_agree(self):
        rng = np.random.default_rng(0)
        a = [rng.normal(size=50), rng.normal(size=50), rng.uniform(0, 1, 50)]
        b = [v.copy() for v in a]
        for t in range(1, 20):
            g = rng.normal(size=50)
            kernels.adam_numba(*a, g, t, 0.01, 0.9, 0.999, 1e-8)
            kernels.adam_numpy(*b, g, t, 0.01, 0.9, 0.999, 1e-8)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, atol=1e-14)


class TestAdam:
    def test_first_step_is_signed_lr(self):
        for g in (0.37, -2.5):
            theta = np.array([1.0])
            adam_step(AdamState.zeros(1), theta, np.array([g]), 0.01)
            expected = 1.0 - 0.01 * g / (abs(g) + 1e-8)
            assert theta[0] == pytest.approx(expected, abs=1e-15)

    def test_zero_gradient_is_noop(self):
        theta = np.array([0.3, -0.7])
        st_ = AdamState.zeros(2)
        for _ in range(50):
            adam_step(st_, theta, np.zeros(2), 0.1)
        np.testing.assert_array_equal(theta, [0.3, -0.7])

    def test_quadratic_bowl(self):
        opt = np.array([1.0, -2.0])
        theta = np.array([4.0, 3.0])
        d0 = np.linalg.norm(theta - opt)
        st_ = AdamState.zeros(2)
        for _ in range(100):
            adam_step(st_, theta, 2 * (theta - opt) * np.array([1.0, 5.0]), 0.1)
        assert np.linalg.norm(theta - opt) < d0


class TestCosine:
    def test_endpoints(self):
        assert cosine_lr(0, 100, 7e-3) == 7e-3
        assert cosine_lr(100, 100, 7e-3, 1e-4) == pytest.approx(1e-4, abs=1e-18)
        assert cosine_lr(50, 100, 7e-3, 1e-3) == pytest.approx(4e-3, abs=1e-18)

    @settings(max_examples=50)
    @given(st.integers(1, 10_000))
    def test_monotone(self, total):
        lrs = [cosine_lr(s, total, 1.0) for s in np.linspace(0, total, 20).astype(int)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_float32_storage_roundtrip():
    theta, _ = random_model(3)
    m = MlpModel.from_theta(ARCH, theta)
    again = MlpModel.from_theta(ARCH, m.theta())
    np.testing.assert_array_equal(m.theta(), again.theta())
    np.testing.assert_array_equal(m.theta(), theta.astype(np.float32).astype(np.float64))
