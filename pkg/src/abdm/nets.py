"""Minimal neural stack: residual MLP, Adam, and a Gaussian-mixture head.

Plain numpy with hand-written reverse-mode gradients. The architecture is
fixed to the shape used throughout: a feedforward trunk of 3 hidden layers
with 50 rectified units and identity skips between equal-width hidden
layers, plus either a linear (optionally sigmoid-squashed) output for
regression or mixture-density heads for conditional density estimation.

Gradients are exact; the test suite checks every loss against central
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import read_array_bundle, write_array_bundle

MODEL_MAGIC = b"ABDM-NET"
SCALE_FLOOR = 1e-3

DEFAULT_HIDDEN = 50
DEFAULT_DEPTH = 3


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    return np.logaddexp(0.0, z)


def _logsumexp(z, axis):
    zmax = np.max(z, axis=axis, keepdims=True)
    return (zmax + np.log(np.sum(np.exp(z - zmax), axis=axis, keepdims=True))).squeeze(axis)


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray


def _make_hidden(rng, in_dim: int, hidden: int, depth: int) -> list[DenseLayer]:
    layers = []
    fan_in = in_dim
    for _ in range(depth):
        layers.append(DenseLayer(_glorot(rng, fan_in, hidden), np.zeros(hidden)))
        fan_in = hidden
    return layers


def _hidden_forward(layers: list[DenseLayer], x: np.ndarray):
    """Forward through the residual hidden stack, keeping the cache for backprop."""
    pres = []
    acts = [x]
    h = x
    for k, layer in enumerate(layers):
        z = h @ layer.W + layer.b
        r = np.maximum(z, 0.0)
        # Identity skip only between equal-width hidden layers.
        h = r + h if k > 0 else r
        pres.append(z)
        acts.append(h)
    return h, (pres, acts)


def _hidden_backward(layers: list[DenseLayer], cache, dh: np.ndarray):
    pres, acts = cache
    grads: list[tuple[np.ndarray, np.ndarray]] = [()] * len(layers)
    for k in reversed(range(len(layers))):
        dz = dh * (pres[k] > 0.0)
        grads[k] = (acts[k].T @ dz, dz.sum(axis=0))
        dh_prev = dz @ layers[k].W.T
        if k > 0:
            dh_prev = dh_prev + dh
        dh = dh_prev
    return grads


class MLP:
    """Residual rectifier network with a linear (or sigmoid) scalar-vector output."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int = 1,
        hidden: int = DEFAULT_HIDDEN,
        depth: int = DEFAULT_DEPTH,
        sigmoid_out: bool = False,
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = hidden
        self.depth = depth
        self.sigmoid_out = sigmoid_out
        self.layers = _make_hidden(rng, in_dim, hidden, depth)
        self.out = DenseLayer(_glorot(rng, hidden, out_dim), np.zeros(out_dim))

    def params(self) -> list[np.ndarray]:
        ps = []
        for layer in self.layers:
            ps += [layer.W, layer.b]
        ps += [self.out.W, self.out.b]
        return ps

    def set_params(self, values: list[np.ndarray]) -> None:
        for p, v in zip(self.params(), values):
            p[...] = v

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(np.atleast_2d(np.asarray(x, dtype=float)))
        return y

    def forward_cached(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.in_dim:
            raise ValueError(f"input has {x.shape[1]} features, expected {self.in_dim}")
        h, cache = _hidden_forward(self.layers, x)
        z = h @ self.out.W + self.out.b
        y = _sigmoid(z) if self.sigmoid_out else z
        return y, (cache, h, y)

    def backward(self, cache, dy: np.ndarray) -> list[np.ndarray]:
        hidden_cache, h, y = cache
        dz = dy * y * (1.0 - y) if self.sigmoid_out else dy
        dW_out = h.T @ dz
        db_out = dz.sum(axis=0)
        dh = dz @ self.out.W.T
        hidden_grads = _hidden_backward(self.layers, hidden_cache, dh)
        grads = []
        for gW, gb in hidden_grads:
            grads += [gW, gb]
        grads += [dW_out, db_out]
        return grads


class MDN:
    """Conditional mixture of diagonal Gaussians over theta, given x.

    The trunk is the shared residual stack; three linear heads produce the
    mixture logits, the component means, and raw scales that pass through
    softplus plus a floor of 1e-3.
    """

    def __init__(
        self,
        x_dim: int,
        theta_dim: int,
        n_components: int = 5,
        hidden: int = DEFAULT_HIDDEN,
        depth: int = DEFAULT_DEPTH,
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        self.x_dim = x_dim
        self.theta_dim = theta_dim
        self.n_components = n_components
        self.hidden = hidden
        self.depth = depth
        self.layers = _make_hidden(rng, x_dim, hidden, depth)
        kd = n_components * theta_dim
        self.head_logit = DenseLayer(_glorot(rng, hidden, n_components), np.zeros(n_components))
        self.head_mean = DenseLayer(_glorot(rng, hidden, kd), np.zeros(kd))
        self.head_scale = DenseLayer(_glorot(rng, hidden, kd), np.zeros(kd))

    def params(self) -> list[np.ndarray]:
        ps = []
        for layer in self.layers:
            ps += [layer.W, layer.b]
        for head in (self.head_logit, self.head_mean, self.head_scale):
            ps += [head.W, head.b]
        return ps

    def set_params(self, values: list[np.ndarray]) -> None:
        for p, v in zip(self.params(), values):
            p[...] = v

    def _forward(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.x_dim:
            raise ValueError(f"conditioner has {x.shape[1]} features, expected {self.x_dim}")
        h, cache = _hidden_forward(self.layers, x)
        n = x.shape[0]
        k, d = self.n_components, self.theta_dim
        logits = h @ self.head_logit.W + self.head_logit.b
        means = (h @ self.head_mean.W + self.head_mean.b).reshape(n, k, d)
        sraw = (h @ self.head_scale.W + self.head_scale.b).reshape(n, k, d)
        scales = _softplus(sraw) + SCALE_FLOOR
        return logits, means, sraw, scales, h, cache

    def component_params(self, x: np.ndarray):
        """Mixture weights, means, and scales for conditioner x."""
        logits, means, _, scales, _, _ = self._forward(x)
        w = np.exp(logits - _logsumexp(logits, axis=1)[:, None])
        return w, means, scales

    def log_prob(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Log density of the conditional mixture at theta given x.

        theta is (n, theta_dim); x is (n, x_dim) or a single conditioner
        broadcast against all rows of theta.
        """
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = np.broadcast_to(x, (theta.shape[0], x.shape[0]))
        logits, means, _, scales, _, _ = self._forward(x)
        return self._mixture_log_prob(theta, logits, means, scales)

    @staticmethod
    def _mixture_log_prob(theta, logits, means, scales):
        logw = logits - _logsumexp(logits, axis=1)[:, None]
        z = (theta[:, None, :] - means) / scales
        comp = -0.5 * np.sum(z**2, axis=2) - np.sum(np.log(scales), axis=2)
        comp = comp - 0.5 * theta.shape[1] * np.log(2.0 * np.pi)
        return _logsumexp(logw + comp, axis=1)

    def sample(self, x: np.ndarray, n: int, seed: int) -> np.ndarray:
        """Ancestral sampling: categorical component, then diagonal Gaussian."""
        if n < 1:
            raise ValueError("need at least one sample")
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("sample() conditions on a single observation")
        w, means, scales = self.component_params(x[None, :])
        rng = np.random.default_rng(seed)
        cum = np.cumsum(w[0])
        cum[-1] = 1.0
        comp = np.searchsorted(cum, rng.random(n))
        eps = rng.standard_normal((n, self.theta_dim))
        return means[0][comp] + scales[0][comp] * eps


def grad_loss(net, batch, loss_kind: str):
    """Loss value and reverse-mode gradients for all parameters.

    loss_kind "mse": net is an MLP, batch is (inputs, targets); mean squared
    error over the batch. loss_kind "nll": net is an MDN, batch is
    (theta, x); mean negative log-likelihood.
    """
    if loss_kind == "mse":
        inputs, targets = batch
        inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        targets = np.asarray(targets, dtype=float).reshape(inputs.shape[0], -1)
        if inputs.shape[0] == 0:
            raise ValueError("empty batch")
        y, cache = net.forward_cached(inputs)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError("non-finite values in forward pass")
        resid = y - targets
        loss = float(np.mean(resid**2))
        dy = 2.0 * resid / resid.size
        return loss, net.backward(cache, dy)

    if loss_kind == "nll":
        theta, x = batch
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = theta.shape[0]
        if n == 0:
            raise ValueError("empty batch")
        logits, means, sraw, scales, h, cache = net._forward(x)
        logw = logits - _logsumexp(logits, axis=1)[:, None]
        z = (theta[:, None, :] - means) / scales
        comp = (
            -0.5 * np.sum(z**2, axis=2)
            - np.sum(np.log(scales), axis=2)
            - 0.5 * theta.shape[1] * np.log(2.0 * np.pi)
        )
        lp = _logsumexp(logw + comp, axis=1)
        if not np.all(np.isfinite(lp)):
            raise FloatingPointError("non-finite values in forward pass")
        loss = float(-np.mean(lp))

        w = np.exp(logw)
        resp = np.exp(logw + comp - lp[:, None])
        # d(-mean lp)/d(head outputs)
        dlogits = (w - resp) / n
        dmeans = -(resp[:, :, None] * (theta[:, None, :] - means) / scales**2) / n
        dscales = -(resp[:, :, None] * ((theta[:, None, :] - means) ** 2 / scales**3 - 1.0 / scales)) / n
        dsraw = dscales * _sigmoid(sraw)

        k, d = net.n_components, net.theta_dim
        dmean_flat = dmeans.reshape(n, k * d)
        dsraw_flat = dsraw.reshape(n, k * d)

        grads_heads = []
        dh = np.zeros_like(h)
        for head, dout in (
            (net.head_logit, dlogits),
            (net.head_mean, dmean_flat),
            (net.head_scale, dsraw_flat),
        ):
            grads_heads += [h.T @ dout, dout.sum(axis=0)]
            dh += dout @ head.W.T
        hidden_grads = _hidden_backward(net.layers, cache, dh)
        grads = []
        for gW, gb in hidden_grads:
            grads += [gW, gb]
        grads += grads_heads
        return loss, grads

    raise ValueError(f"unknown loss kind {loss_kind!r}")


@dataclass
class AdamState:
    """First/second moment accumulators for the bias-corrected Adam update."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float) -> "AdamState":
        return cls(
            lr=lr,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """One in-place Adam update; returns the updated parameter list."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m[...] = b1 * m + (1.0 - b1) * g
        v[...] = b2 * v + (1.0 - b2) * g**2
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# Serialization: flat little-endian float64 weights with a small header.
# ---------------------------------------------------------------------------


def save_model(path, model, meta: dict | None = None, extra_arrays: dict | None = None) -> None:
    meta = dict(meta or {})
    arrays = {}
    if isinstance(model, MLP):
        meta.update(
            kind="mlp",
            in_dim=model.in_dim,
            out_dim=model.out_dim,
            hidden=model.hidden,
            depth=model.depth,
            sigmoid_out=model.sigmoid_out,
        )
    elif isinstance(model, MDN):
        meta.update(
            kind="mdn",
            x_dim=model.x_dim,
            theta_dim=model.theta_dim,
            n_components=model.n_components,
            hidden=model.hidden,
            depth=model.depth,
        )
    else:
        raise TypeError(f"cannot serialize {type(model)}")
    for i, p in enumerate(model.params()):
        arrays[f"p{i}"] = p
    for name, arr in (extra_arrays or {}).items():
        arrays[name] = np.asarray(arr, dtype=float)
    write_array_bundle(path, MODEL_MAGIC, meta, arrays)


def load_model(path):
    """Load an MLP or MDN saved by save_model; returns (model, meta, extras)."""
    meta, arrays = read_array_bundle(path, MODEL_MAGIC)
    if meta["kind"] == "mlp":
        model = MLP(
            meta["in_dim"],
            meta["out_dim"],
            hidden=meta["hidden"],
            depth=meta["depth"],
            sigmoid_out=meta["sigmoid_out"],
        )
    else:
        model = MDN(
            meta["x_dim"],
            meta["theta_dim"],
            n_components=meta["n_components"],
            hidden=meta["hidden"],
            depth=meta["depth"],
        )
    n_params = len(model.params())
    model.set_params([arrays[f"p{i}"] for i in range(n_params)])
    extras = {k: v for k, v in arrays.items() if not (k.startswith("p") and k[1:].isdigit())}
    return model, meta, extras
