"""Named parameter arrays and the Adam optimizer."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingError


class ParameterStore:
    """Ordered name -> float64 array mapping.

    Insertion order is the serialization order used by checkpoints.
    """

    def __init__(self, arrays=None):
        self._arrays = {}
        if arrays:
            for name, arr in arrays.items():
                self.add(name, arr)

    def add(self, name, array):
        if name in self._arrays:
            raise ConfigError(f"duplicate parameter name {name!r}")
        self._arrays[name] = np.array(array, dtype=np.float64)
        return self._arrays[name]

    def __getitem__(self, name):
        return self._arrays[name]

    def __setitem__(self, name, array):
        if name not in self._arrays:
            raise KeyError(name)
        array = np.asarray(array, dtype=np.float64)
        if array.shape != self._arrays[name].shape:
            raise ConfigError(f"shape change for {name!r}: {self._arrays[name].shape} -> {array.shape}")
        self._arrays[name] = array.copy()

    def __contains__(self, name):
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self):
        return len(self._arrays)

    def keys(self):
        return self._arrays.keys()

    def items(self):
        return self._arrays.items()

    def shapes(self):
        return {k: v.shape for k, v in self._arrays.items()}

    @property
    def total_count(self):
        return int(sum(v.size for v in self._arrays.values()))

    def copy(self):
        return ParameterStore({k: v.copy() for k, v in self._arrays.items()})

    def flat(self):
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._arrays.values()])

    def load_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.total_count:
            raise ConfigError(f"flat vector has {flat.size} values, store holds {self.total_count}")
        pos = 0
        for name, arr in self._arrays.items():
            arr[...] = flat[pos:pos + arr.size].reshape(arr.shape)
            pos += arr.size

    def all_finite(self):
        return all(np.isfinite(v).all() for v in self._arrays.values())


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place.

    Returns ``(params, state)`` for convenience.
    """
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self, params, grads):
        adam_step(params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
