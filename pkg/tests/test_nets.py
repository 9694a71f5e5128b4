import math

import numpy as np
import pytest

from abdm.nets import (
    MDN,
    MLP,
    SCALE_FLOOR,
    AdamState,
    adam_step,
    grad_loss,
    load_model,
    save_model,
)


def scripted_forward(mlp: MLP, x: np.ndarray) -> np.ndarray:
    """Independent re-implementation of the forward pass, scalar loops only."""
    outs = []
    for row in x:
        h = None
        for k, layer in enumerate(mlp.layers):
            src = row if k == 0 else h
            z = [
                sum(src[i] * layer.W[i, j] for i in range(len(src))) + layer.b[j]
                for j in range(layer.W.shape[1])
            ]
            r = [max(v, 0.0) for v in z]
            h = r if k == 0 else [a + b for a, b in zip(r, h)]
        y = [
            sum(h[i] * mlp.out.W[i, j] for i in range(len(h))) + mlp.out.b[j]
            for j in range(mlp.out.W.shape[1])
        ]
        if mlp.sigmoid_out:
            y = [1.0 / (1.0 + math.exp(-v)) for v in y]
        outs.append(y)
    return np.array(outs)


def finite_difference_grads(net, batch, kind, h=1e-5):
    flat = []
    for p in net.params():
        view = p.ravel()
        for j in range(view.size):
            old = view[j]
            view[j] = old + h
            lp, _ = grad_loss(net, batch, kind)
            view[j] = old - h
            lm, _ = grad_loss(net, batch, kind)
            view[j] = old
            flat.append((lp - lm) / (2.0 * h))
    return np.array(flat)


def jitter_biases(net, rng):
    # Zero-initialized biases can leave rectifier preactivations exactly at
    # the kink (dead layers feed zeros forward), where one-sided finite
    # differences disagree with any valid subgradient. Move off the kink.
    for p in net.params():
        if p.ndim == 1:
            p += 0.1 * rng.standard_normal(p.shape)


def relative_grad_error(net, batch, kind):
    _, grads = grad_loss(net, batch, kind)
    an = np.concatenate([g.ravel() for g in grads])
    fd = finite_difference_grads(net, batch, kind)
    return np.linalg.norm(fd - an) / max(np.linalg.norm(fd), np.linalg.norm(an))


class TestForward:
    def test_zero_net_outputs_zero(self):
        mlp = MLP(3, 2, hidden=6, depth=3, seed=0)
        for p in mlp.params():
            p[...] = 0.0
        assert np.all(mlp.forward(np.ones((4, 3))) == 0.0)

    def test_zero_net_with_sigmoid_outputs_half(self):
        mlp = MLP(3, 2, hidden=6, depth=3, sigmoid_out=True, seed=0)
        for p in mlp.params():
            p[...] = 0.0
        np.testing.assert_array_equal(mlp.forward(np.ones((4, 3))), 0.5)

    @pytest.mark.parametrize("sigmoid", [False, True])
    def test_matches_independent_scripted_forward(self, sigmoid):
        rng = np.random.default_rng(3)
        mlp = MLP(4, 3, hidden=8, depth=3, sigmoid_out=sigmoid, seed=11)
        x = rng.standard_normal((6, 4))
        np.testing.assert_allclose(mlp.forward(x), scripted_forward(mlp, x), atol=1e-10)

    def test_shape_mismatch(self):
        mlp = MLP(3, 1, seed=0)
        with pytest.raises(ValueError):
            mlp.forward(np.ones((2, 5)))

    def test_deterministic(self):
        mlp = MLP(3, 2, seed=5)
        x = np.random.default_rng(0).standard_normal((10, 3))
        np.testing.assert_array_equal(mlp.forward(x), mlp.forward(x))


class TestGradients:
    def test_zero_gradient_at_minimum(self):
        mlp = MLP(3, 1, hidden=5, depth=2, seed=2)
        x = np.random.default_rng(1).standard_normal((8, 3))
        targets = mlp.forward(x)  # residuals vanish by construction
        loss, grads = grad_loss(mlp, (x, targets), "mse")
        assert loss == 0.0
        assert all(np.all(g == 0.0) for g in grads)

    def test_mse_finite_differences_20_nets(self):
        rng = np.random.default_rng(100)
        worst = 0.0
        for trial in range(20):
            net = MLP(3, 2, hidden=7, depth=3, sigmoid_out=bool(trial % 2), seed=300 + trial)
            jitter_biases(net, rng)
            batch = (rng.standard_normal((5, 3)), rng.standard_normal((5, 2)))
            worst = max(worst, relative_grad_error(net, batch, "mse"))
        assert worst < 1e-4

    def test_nll_finite_differences_20_nets(self):
        rng = np.random.default_rng(200)
        worst = 0.0
        for trial in range(20):
            net = MDN(3, 2, n_components=3, hidden=7, depth=3, seed=600 + trial)
            jitter_biases(net, rng)
            batch = (rng.standard_normal((5, 2)), rng.standard_normal((5, 3)))
            worst = max(worst, relative_grad_error(net, batch, "nll"))
        assert worst < 1e-4

    @pytest.mark.parametrize("kind", ["mse", "nll"])
    def test_batch_gradient_is_mean_of_per_sample(self, kind):
        rng = np.random.default_rng(7)
        if kind == "mse":
            net = MLP(3, 2, hidden=6, depth=2, seed=8)
            a, b = rng.standard_normal((6, 3)), rng.standard_normal((6, 2))
        else:
            net = MDN(3, 2, n_components=2, hidden=6, depth=2, seed=8)
            a, b = rng.standard_normal((6, 2)), rng.standard_normal((6, 3))
        _, batch_grads = grad_loss(net, (a, b), kind)
        sums = [np.zeros_like(g) for g in batch_grads]
        for i in range(6):
            _, gi = grad_loss(net, (a[i : i + 1], b[i : i + 1]), kind)
            for s, g in zip(sums, gi):
                s += g / 6.0
        for s, g in zip(sums, batch_grads):
            np.testing.assert_allclose(s, g, atol=1e-10)

    def test_nan_forward_raises(self):
        mlp = MLP(2, 1, seed=0)
        with pytest.raises(FloatingPointError):
            grad_loss(mlp, (np.array([[np.nan, 1.0]]), np.array([[0.0]])), "mse")

    def test_empty_batch_rejected(self):
        mlp = MLP(2, 1, seed=0)
        with pytest.raises(ValueError):
            grad_loss(mlp, (np.empty((0, 2)), np.empty((0, 1))), "mse")


class TestAdam:
    def test_zero_gradient_is_noop_from_fresh_state(self):
        params = [np.array([1.0, -2.0]), np.array([[3.0]])]
        state = AdamState.for_params(params, lr=0.1)
        adam_step(state, params, [np.zeros(2), np.zeros((1, 1))])
        np.testing.assert_array_equal(params[0], [1.0, -2.0])
        np.testing.assert_array_equal(params[1], [[3.0]])
        assert state.t == 1

    def test_first_step_is_signed_learning_rate(self):
        # At t=1 bias correction gives m_hat / sqrt(v_hat) = sign(g).
        for g in (3.0, -0.25):
            params = [np.array([0.0])]
            state = AdamState.for_params(params, lr=0.01)
            adam_step(state, params, [np.array([g])])
            assert params[0][0] == pytest.approx(-0.01 * np.sign(g), abs=1e-6)

    def test_two_step_scalar_trace(self):
        # Hand-evaluated recurrences for g = (1.0, -0.5), lr = 0.1.
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        theta, m, v = 0.5, 0.0, 0.0
        for t, g in enumerate([1.0, -0.5], start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            theta -= lr * mhat / (math.sqrt(vhat) + eps)
        params = [np.array([0.5])]
        state = AdamState.for_params(params, lr=lr)
        adam_step(state, params, [np.array([1.0])])
        adam_step(state, params, [np.array([-0.5])])
        assert params[0][0] == pytest.approx(theta, abs=1e-12)


def rigged_single_gaussian(x_dim=1, theta_dim=1, mean=0.0, scale=1.0):
    mdn = MDN(x_dim, theta_dim, n_components=1, hidden=4, depth=1, seed=0)
    for head in (mdn.head_logit, mdn.head_mean, mdn.head_scale):
        head.W[...] = 0.0
        head.b[...] = 0.0
    mdn.head_mean.b[...] = mean
    mdn.head_scale.b[...] = np.log(np.expm1(scale - SCALE_FLOOR))
    return mdn


class TestMDN:
    def test_standard_normal_log_prob(self):
        mdn = rigged_single_gaussian()
        lp = mdn.log_prob(np.array([[0.0]]), np.array([[0.3]]))
        assert lp[0] == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)

    def test_log_sum_exp_dominates_components(self):
        mdn = MDN(2, 1, n_components=4, hidden=6, depth=2, seed=3)
        x = np.array([0.4, -1.0])
        theta = np.array([[0.2]])
        w, means, scales = mdn.component_params(x[None, :])
        lp = mdn.log_prob(theta, x)[0]
        for k in range(4):
            comp = (
                math.log(w[0, k])
                - 0.5 * ((theta[0, 0] - means[0, k, 0]) / scales[0, k, 0]) ** 2
                - math.log(scales[0, k, 0])
                - 0.5 * math.log(2 * math.pi)
            )
            assert lp >= comp - 1e-12

    def test_weights_sum_to_one_and_scales_floored(self):
        mdn = MDN(3, 2, n_components=5, hidden=8, depth=3, seed=9)
        x = np.random.default_rng(2).standard_normal((20, 3))
        w, _, scales = mdn.component_params(x)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(scales >= SCALE_FLOOR)

    def test_normalization_1d_quadrature(self):
        mdn = MDN(2, 1, n_components=4, hidden=7, depth=2, seed=7)
        x = np.array([0.3, -0.5])
        _, means, scales = mdn.component_params(x[None, :])
        lo = float((means - 8 * scales).min())
        hi = float((means + 8 * scales).max())
        grid = np.linspace(lo, hi, 4001)
        dens = np.exp(mdn.log_prob(grid[:, None], x))
        integral = np.trapezoid(dens, grid)
        assert integral == pytest.approx(1.0, abs=1e-3)

    def test_normalization_2d_quadrature(self):
        mdn = MDN(2, 2, n_components=3, hidden=7, depth=2, seed=13)
        x = np.array([1.0, 0.2])
        _, means, scales = mdn.component_params(x[None, :])
        g = 201
        lo = (means - 8 * scales).min(axis=(0, 1))
        hi = (means + 8 * scales).max(axis=(0, 1))
        g0 = np.linspace(lo[0], hi[0], g)
        g1 = np.linspace(lo[1], hi[1], g)
        G0, G1 = np.meshgrid(g0, g1, indexing="ij")
        theta = np.stack([G0.ravel(), G1.ravel()], axis=1)
        dens = np.exp(mdn.log_prob(theta, x)).reshape(g, g)
        integral = np.trapezoid(np.trapezoid(dens, g1, axis=1), g0)
        assert integral == pytest.approx(1.0, abs=1e-3)

    def test_sampling_deterministic(self):
        mdn = MDN(2, 2, n_components=3, hidden=6, depth=2, seed=1)
        x = np.array([0.1, 0.9])
        np.testing.assert_array_equal(mdn.sample(x, 64, seed=5), mdn.sample(x, 64, seed=5))

    def test_sampling_mean_law_of_large_numbers(self):
        mdn = rigged_single_gaussian(mean=1.7, scale=0.8)
        n = 100_000
        draws = mdn.sample(np.array([0.0]), n, seed=4)
        assert abs(draws.mean() - 1.7) < 5 * 0.8 / math.sqrt(n)

    def test_component_frequencies(self):
        mdn = MDN(1, 1, n_components=2, hidden=4, depth=1, seed=0)
        for head in (mdn.head_logit, mdn.head_mean, mdn.head_scale):
            head.W[...] = 0.0
            head.b[...] = 0.0
        mdn.head_mean.b[...] = [-50.0, 50.0]  # well separated
        mdn.head_scale.b[...] = np.log(np.expm1(1.0))
        draws = mdn.sample(np.array([0.0]), 10_000, seed=8)
        frac_high = float(np.mean(draws > 0.0))
        assert frac_high == pytest.approx(0.5, abs=0.02)

    def test_rejects_at_least_one_sample(self):
        mdn = MDN(1, 1, seed=0)
        with pytest.raises(ValueError):
            mdn.sample(np.zeros(1), 0, seed=0)


class TestSerialization:
    def test_mlp_roundtrip(self, tmp_path):
        mlp = MLP(4, 1, sigmoid_out=True, seed=21)
        x = np.random.default_rng(0).standard_normal((5, 4))
        path = tmp_path / "mlp.net"
        save_model(path, mlp, meta={"note": "t"}, extra_arrays={"mu": np.arange(4.0)})
        back, meta, extras = load_model(path)
        np.testing.assert_array_equal(back.forward(x), mlp.forward(x))
        assert meta["kind"] == "mlp" and meta["note"] == "t"
        np.testing.assert_array_equal(extras["mu"], np.arange(4.0))

    def test_mdn_roundtrip(self, tmp_path):
        mdn = MDN(3, 2, n_components=4, seed=22)
        theta = np.random.default_rng(1).standard_normal((6, 2))
        x = np.random.default_rng(2).standard_normal((6, 3))
        path = tmp_path / "mdn.net"
        save_model(path, mdn)
        back, meta, _ = load_model(path)
        np.testing.assert_array_equal(back.log_prob(theta, x), mdn.log_prob(theta, x))
