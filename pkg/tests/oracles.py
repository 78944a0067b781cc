"""Reference computations kept separate from the package code paths they check."""
from itertools import product

import numpy as np

from etdgrid.env import ACTION_LEVELS, step_physics


def brute_force(window, params, alpha, gamma=1.0, init_soc=None):
    """Best (discounted) reward over every action sequence of the window."""
    soc0 = params.soc_min if init_soc is None else init_soc
    pts = list(window)
    best = -np.inf
    for seq in product(range(len(ACTION_LEVELS)), repeat=len(pts)):
        soc, total, disc = soc0, 0.0, 1.0
        for p, a in zip(pts, seq):
            out = step_physics(p.unmet, p.price, p.carbon_intensity, ACTION_LEVELS[a], soc, params, alpha)
            total += disc * out.reward
            disc *= gamma
            soc = out.next_soc
        best = max(best, total)
    return best


def loop_forward(weights, biases, x):
    """Scalar-loop MLP evaluation (ReLU hidden layers, linear output)."""
    h = [float(v) for v in x]
    for layer, (w, b) in enumerate(zip(weights, biases)):
        out = []
        for j in range(w.shape[1]):
            s = float(b[j])
            for i in range(w.shape[0]):
                s += h[i] * float(w[i, j])
            out.append(s if layer == len(weights) - 1 else max(s, 0.0))
        h = out
    return np.array(h)


def loss_value(params, states, actions, targets):
    from etdgrid.qnet import forward
    q = forward(params, states)[np.arange(len(actions)), actions]
    return 0.5 * float(np.mean((targets - q) ** 2))


def fd_gradient(params, states, actions, targets, h=1e-5, coords=None):
    """Central differences of the loss; ``coords`` limits to (array, flat index) pairs."""
    arrays = params.arrays()
    if coords is None:
        coords = [(k, i) for k, a in enumerate(arrays) for i in range(a.size)]
    out = []
    for k, i in coords:
        a = arrays[k].reshape(-1)
        old = a[i]
        a[i] = old + h
        up = loss_value(params, states, actions, targets)
        a[i] = old - h
        down = loss_value(params, states, actions, targets)
        a[i] = old
        out.append((up - down) / (2 * h))
    return np.array(out)
