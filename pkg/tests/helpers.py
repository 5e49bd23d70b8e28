"""Shared test utilities: a tiny network config and finite-difference checks."""

import numpy as np

from retinervenet import autodiff as ad
from retinervenet.params import ParameterStore

FD_STEP = 1e-5
FD_TOL = 1e-4

# same block structure as the reference network, a few hundred parameters
TINY = {
    "block1": {
        "layers": [
            {"type": "conv", "out": 3, "width": 8, "stride": 8, "padding": 0},
            {"type": "pool", "window": 2},
        ],
        "skip": {"out": 3, "width": 16, "stride": 16, "padding": 0},
    },
    "rpl": {"width": 3, "padding": 1},
    "block3": {
        "layers": [{"type": "conv", "out": 3, "width": 5, "stride": 1, "padding": 0}],
        "skip": {"out": 3, "width": 5, "stride": 1, "padding": 0},
    },
    "block4": {"width": 3, "padding": 1, "pools": [2, 2]},
}


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    if den == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / den)


def analytic(loss_fn, params):
    tape = ad.Tape(params)
    loss = loss_fn(tape)
    return float(loss.value), ad.backward(tape, loss)


def value(loss_fn, params):
    return float(loss_fn(ad.Tape(params)).value)


def numeric_grads(loss_fn, params, h=FD_STEP):
    """Central differences for every entry of every parameter."""
    out = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = value(loss_fn, params)
            flat[i] = old - h
            down = value(loss_fn, params)
            flat[i] = old
            g.reshape(-1)[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def check_all_entries(loss_fn, params, h=FD_STEP):
    """Relative error over the full gradient, per parameter; returns the worst."""
    _, g = analytic(loss_fn, params)
    n = numeric_grads(loss_fn, params, h)
    return max(rel_err(g[k], n[k]) for k in params.keys())


def check_directional(loss_fn, params, rng, n_dirs=3, h=FD_STEP):
    """Compare g.v with the central difference along random unit directions v.

    v is normalised over all parameters so the step length is ``h`` however
    many parameters there are; larger steps cross ReLU and max-pool switch
    points in a full-size network.
    """
    _, g = analytic(loss_fn, params)
    worst = 0.0
    names = list(params.keys())
    for _ in range(n_dirs):
        v = {k: rng.normal(size=params[k].shape) for k in names}
        norm = np.sqrt(sum(float((a * a).sum()) for a in v.values()))
        v = {k: a / norm for k, a in v.items()}
        dot = sum(float((g[k] * v[k]).sum()) for k in names)
        base = {k: params[k].copy() for k in names}
        for k in names:
            params[k] = base[k] + h * v[k]
        up = value(loss_fn, params)
        for k in names:
            params[k] = base[k] - h * v[k]
        down = value(loss_fn, params)
        for k in names:
            params[k] = base[k]
        worst = max(worst, rel_err(dot, (up - down) / (2 * h)))
    return worst


def check_sampled_entries(loss_fn, params, rng, per_param=2, h=FD_STEP):
    """Per-entry central differences on a few random entries of every parameter."""
    _, g = analytic(loss_fn, params)
    a, n = [], []
    for name in params.keys():
        arr = params[name]
        for i in rng.choice(arr.size, size=min(per_param, arr.size), replace=False):
            flat = arr.reshape(-1)
            old = flat[i]
            flat[i] = old + h
            up = value(loss_fn, params)
            flat[i] = old - h
            down = value(loss_fn, params)
            flat[i] = old
            a.append(g[name].reshape(-1)[i])
            n.append((up - down) / (2 * h))
    return rel_err(a, n)


def store(**arrays):
    return ParameterStore({k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})
