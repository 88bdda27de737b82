"""Shared oracles for the test suite."""

from __future__ import annotations

import numpy as np

from augbpm import nn

ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "identity")


def numeric_param_grad(net: nn.Mlp, loss, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``loss(net)`` over every weight and bias, flattened."""
    out = []
    for layer in net.layers:
        for arr in (layer.weights, layer.biases):
            flat = arr.reshape(-1)
            g = np.empty_like(flat)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                up = loss(net)
                flat[i] = keep - h
                down = loss(net)
                flat[i] = keep
                g[i] = (up - down) / (2 * h)
            out.append(g)
    return np.concatenate(out)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def min_kink_distance(net: nn.Mlp, x: np.ndarray) -> float:
    _, cache = nn.forward(net, x)
    dists = [
        np.min(np.abs(z))
        for z, layer in zip(cache.pre, net.layers)
        if layer.activation in (nn.Activation.RELU, nn.Activation.LEAKY_RELU)
    ]
    return float(min(dists)) if dists else np.inf


def random_net_case(rng: np.random.Generator, hidden_act: str, out_act: str):
    """A small random net and batch whose pre-activations stay clear of kinks."""
    while True:
        sizes = [int(rng.integers(2, 6)), int(rng.integers(2, 7)), int(rng.integers(2, 7)), 1]
        net = nn.init_weights(sizes, [hidden_act, hidden_act, out_act], seed=int(rng.integers(1 << 31)))
        for layer in net.layers:
            layer.biases[:] = rng.normal(0, 0.3, size=layer.biases.shape)
        x = rng.normal(size=(5, sizes[0]))
        if min_kink_distance(net, x) > 1e-3:
            return net, x


def student_t_density(x: np.ndarray, df: float) -> np.ndarray:
    from math import lgamma, log, pi

    log_norm = lgamma((df + 1) / 2) - lgamma(df / 2) - 0.5 * log(df * pi)
    return np.exp(log_norm - (df + 1) / 2 * np.log1p(x * x / df))


def simpson_upper_tail(t: float, df: float, panels: int = 100_000) -> float:
    """P(T > t) as 1/2 minus Simpson's rule over [0, t]."""
    if t == 0:
        return 0.5
    x = np.linspace(0.0, t, panels + 1)
    f = student_t_density(x, df)
    h = t / panels
    integral = h / 3 * (f[0] + f[-1] + 4 * f[1:-1:2].sum() + 2 * f[2:-1:2].sum())
    return 0.5 - integral
