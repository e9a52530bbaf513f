"""Small tanh MLP with manual backprop, plus the two optimizers used here.

Parameters are a list of (W, b) with W shaped (fan_in, fan_out). Hidden
layers are tanh, the output layer is linear. Gradients flow through
``backprop`` from an arbitrary dL/d(output) matrix, which lets behavior
cloning (MSE), the value function (MSE) and the policy gradient (weighted
log-likelihood) share one implementation.
"""

from __future__ import annotations

import numpy as np


def init_params(sizes, rng: np.random.Generator, out_bias=None):
    """Xavier-uniform init; optionally preset the output bias."""
    params = []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = np.zeros(fan_out)
        params.append((w, b))
    if out_bias is not None:
        w, b = params[-1]
        params[-1] = (w, np.array(out_bias, dtype=float).reshape(b.shape))
    return params


def forward(params, x):
    """Returns the list of layer activations; activations[-1] is the output."""
    acts = [np.atleast_2d(np.asarray(x, dtype=float))]
    last = len(params) - 1
    for i, (w, b) in enumerate(params):
        z = acts[-1] @ w + b
        acts.append(z if i == last else np.tanh(z))
    return acts


def predict(params, x):
    single = np.asarray(x).ndim == 1
    out = forward(params, x)[-1]
    return out[0] if single else out


def backprop(params, acts, d_out):
    """Gradients of L wrt every parameter given dL/d(output).

    acts is the list from ``forward``. Returns grads shaped like params.
    """
    grads = [None] * len(params)
    delta = np.atleast_2d(np.asarray(d_out, dtype=float))
    for i in range(len(params) - 1, -1, -1):
        w, _ = params[i]
        a_prev = acts[i]
        grads[i] = (a_prev.T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w.T) * (1.0 - acts[i] ** 2)
    return grads


def mse_loss_and_grads(params, x, y):
    """Mean squared error over all components, with parameter gradients."""
    acts = forward(params, x)
    pred = acts[-1]
    err = pred - np.atleast_2d(y)
    loss = float(np.mean(err**2))
    d_out = 2.0 * err / err.size
    return loss, backprop(params, acts, d_out)


def flatten(params) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in params])


def unflatten_like(params, vec):
    out = []
    i = 0
    for w, b in params:
        nw = w.size
        nb = b.size
        out.append((vec[i : i + nw].reshape(w.shape).copy(), vec[i + nw : i + nw + nb].copy()))
        i += nw + nb
    return out


def clone_params(params):
    return [(w.copy(), b.copy()) for w, b in params]


class SgdMomentum:
    """Classic momentum; the behavior-cloning optimizer."""

    def __init__(self, params, lr: float, momentum: float = 0.9):
        self.lr = lr
        self.momentum = momentum
        self.vel = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]

    def step(self, params, grads):
        new_params = []
        for (w, b), (gw, gb), (vw, vb) in zip(params, grads, self.vel):
            vw[:] = self.momentum * vw - self.lr * gw
            vb[:] = self.momentum * vb - self.lr * gb
            new_params.append((w + vw, b + vb))
        return new_params


class Adam:
    """Adam on a flat parameter vector; the PPO-side optimizer."""

    def __init__(self, n: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad**2
        mhat = self.m / (1.0 - self.beta1**self.t)
        vhat = self.v / (1.0 - self.beta2**self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)
