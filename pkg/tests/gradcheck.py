"""Central finite-difference oracle for the CNN gradients (test helper)."""

import numpy as np

from smoothadv import nn

H = 1e-3
REL_TOL = 1e-4
KINK_RADIUS = 1e-6


def scalar_loss(spec, params, x, y):
    return float(nn.loss(nn.forward(spec, params, x)[0], y))


def routing(spec, params, x):
    """ReLU on/off masks and MaxPool argmax choices: the piecewise-linear region."""
    _, trace = nn.forward(spec, params, x)
    sig = []
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, nn.ReLU):
            sig.append(trace.inputs[i] > 0)
        elif isinstance(layer, nn.MaxPool):
            sig.append(trace.aux[i])
    return sig


def same_routing(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def check_input_grad(spec, params, x, y, coords):
    """Return (n_checked, n_pass, n_excluded) over the given input coordinates."""
    g = nn.grad_input(spec, params, x, y)
    base = routing(spec, params, x)
    checked = passed = excluded = 0
    for j in coords:
        e = np.zeros_like(x)
        e[j] = 1.0
        if not (same_routing(base, routing(spec, params, x + KINK_RADIUS * e))
                and same_routing(base, routing(spec, params, x - KINK_RADIUS * e))):
            excluded += 1
            continue
        num = (scalar_loss(spec, params, x + H * e, y) - scalar_loss(spec, params, x - H * e, y)) / (2 * H)
        checked += 1
        passed += rel_err(g[j], num) <= REL_TOL
    return checked, passed, excluded


def check_param_grad(spec, params, x, y, rng, per_tensor=20):
    grads = nn.grad_params(spec, params, x, y)
    checked = passed = excluded = 0
    for i in sorted(params):
        for name, arr in params[i].items():
            picks = rng.choice(arr.size, size=min(per_tensor, arr.size), replace=False)
            for j in picks:
                old = arr.flat[j]

                def at(v):
                    arr.flat[j] = v
                    return routing(spec, params, x), scalar_loss(spec, params, x, y)

                base_r, _ = at(old)
                r_plus, _ = at(old + KINK_RADIUS)
                r_minus, _ = at(old - KINK_RADIUS)
                if not (same_routing(base_r, r_plus) and same_routing(base_r, r_minus)):
                    arr.flat[j] = old
                    excluded += 1
                    continue
                _, lp = at(old + H)
                _, lm = at(old - H)
                arr.flat[j] = old
                num = (lp - lm) / (2 * H)
                checked += 1
                passed += rel_err(grads[i][name].flat[j], num) <= REL_TOL
    return checked, passed, excluded


def random_tiny_spec(rng):
    """A random small architecture from the layer vocabulary that chain-checks."""
    while True:
        length = int(rng.integers(16, 41))
        layers = []
        for _ in range(int(rng.integers(1, 4))):
            layers.append(nn.Conv1D(int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 3))))
            if rng.random() < 0.8:
                layers.append(nn.ReLU())
            if rng.random() < 0.4:
                layers.append(nn.MaxPool(2))
        if rng.random() < 0.5:
            layers.append(nn.GlobalAveragePool())
        if rng.random() < 0.5:
            layers += [nn.Dense(int(rng.integers(2, 7))), nn.ReLU()]
        layers.append(nn.Dense(4))
        try:
            return nn.ModelSpec(tuple(layers), length)
        except nn.ConfigurationError:
            continue
