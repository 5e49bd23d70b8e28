"""Tape-based reverse-mode differentiation for the handful of ops the models use.

Feature maps are float64 arrays shaped ``(batch, channels, length)``. Every op
takes :class:`Var` inputs, computes its value eagerly and appends one entry to
the owning :class:`Tape`; :func:`backward` replays the entries in reverse.

Parameters enter through :meth:`Tape.param`, which hands out one ``Var`` per
name, so a layer applied several times (the recursive progression layer)
accumulates the per-use adjoints into a single gradient.
"""

import numpy as np

from . import kernels
from .errors import ConfigError, UsageError


class Var:
    __slots__ = ("value", "tape", "index", "requires_grad", "name")

    def __init__(self, value, tape, index, requires_grad, name=None):
        self.value = value
        self.tape = tape
        self.index = index
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Var{tag}(shape={self.value.shape})"


class Tape:
    """Records ops in execution order.

    ``params`` is anything mapping names to float64 arrays (normally a
    :class:`~retinervenet.params.ParameterStore`). The arrays are read, never
    written, so a store may be shared read-only across tapes.
    """

    def __init__(self, params=None, grad=True):
        self.params = params if params is not None else {}
        self.grad = grad     # False: inference only, nothing is kept for replay
        self._nodes = []     # Var per index
        self._ops = []       # (out_index, parent_indices, vjp)
        self._param_vars = {}

    def __len__(self):
        return len(self._ops)

    def _new(self, value, requires_grad, name=None):
        var = Var(value, self, len(self._nodes), requires_grad, name)
        # inference tapes keep no node list, so no tape <-> Var cycle holds arrays alive
        self._nodes.append(var if self.grad else None)
        return var

    def param(self, name):
        var = self._param_vars.get(name)
        if var is None:
            value = np.asarray(self.params[name], dtype=np.float64)
            var = self._new(value, self.grad, name)
            self._param_vars[name] = var
        return var

    def constant(self, value):
        return self._new(np.asarray(value, dtype=np.float64), False)

    def record(self, value, parents, vjp):
        """Append an op; ``vjp(g)`` returns one adjoint (or None) per parent."""
        needs = any(p.requires_grad for p in parents)
        out = self._new(value, needs)
        if needs:
            self._ops.append((out.index, tuple(p.index for p in parents), vjp))
        return out

    def release(self):
        """Drop recorded values and closures so their arrays are freed promptly."""
        self._nodes.clear()
        self._ops.clear()
        self._param_vars.clear()

    def recorded_order(self):
        """Output indices of differentiable ops, in recording order."""
        return [op[0] for op in self._ops]


def backward(tape, loss, seed=1.0, on_visit=None):
    """Gradients of ``seed * loss`` for every parameter in ``tape.params``.

    Parameters the tape never touched get zero arrays. ``on_visit`` is called
    with each op's output index as its adjoint is replayed.
    """
    if loss.tape is not tape:
        raise UsageError("loss was not recorded on this tape")
    if loss.value.size != 1:
        raise UsageError(f"backward needs a scalar terminal, got shape {loss.value.shape}")
    adj = {loss.index: np.full(loss.value.shape, float(seed))}
    for out_index, parents, vjp in reversed(tape._ops):
        if on_visit is not None:
            on_visit(out_index)
        g = adj.pop(out_index, None)
        if g is None:
            continue
        grads = vjp(g)
        for pidx, pg in zip(parents, grads):
            if pg is None or not tape._nodes[pidx].requires_grad:
                continue
            if pidx in adj:
                adj[pidx] = adj[pidx] + pg
            else:
                adj[pidx] = pg
    out = {}
    for name, arr in tape.params.items():
        var = tape._param_vars.get(name)
        if var is not None and var.index in adj:
            out[name] = np.asarray(adj[var.index], dtype=np.float64).reshape(np.shape(arr))
        else:
            out[name] = np.zeros(np.shape(arr))
    return out


def _check_same_tape(*vs):
    tape = vs[0].tape
    for v in vs[1:]:
        if v.tape is not tape:
            raise UsageError("inputs recorded on different tapes")
    return tape


# ---------------------------------------------------------------------------
# layer ops

def conv1d(x, w, b, stride=1, padding=0, activation="linear"):
    """Cross-correlation with per-out-channel bias and optional fused ReLU."""
    tape = _check_same_tape(x, w, b)
    if activation not in ("relu", "linear"):
        raise ConfigError(f"unknown activation {activation!r}")
    if x.value.ndim != 3 or w.value.ndim != 3:
        raise ConfigError(f"conv1d expects (B,C,L) input and (O,C,W) kernel, got {x.shape} and {w.shape}")
    out_ch, in_ch, width = w.value.shape
    if x.value.shape[1] != in_ch:
        raise ConfigError(f"conv1d channel mismatch: input has {x.value.shape[1]} channels, kernel expects {in_ch}")
    if b.value.shape != (out_ch,):
        raise ConfigError(f"conv1d bias shape {b.value.shape} != ({out_ch},)")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv1d stride={stride} padding={padding} invalid")
    length = x.value.shape[2]
    if kernels.conv_out_length(length, width, stride, padding) < 1:
        raise ConfigError(f"conv1d width {width} with padding {padding} does not fit input length {length}")

    xv, wv = x.value, w.value
    z = kernels.conv1d_forward(xv, wv, b.value, stride, padding)
    if activation == "relu":
        mask = z > 0.0
        out_val = np.where(mask, z, 0.0)
    else:
        mask = None
        out_val = z

    need_dx = x.requires_grad

    def vjp(g):
        if mask is not None:
            g = np.where(mask, g, 0.0)
        dx, dw, db = kernels.conv1d_backward(np.ascontiguousarray(g), xv, wv, stride, padding, need_dx)
        return dx, dw, db

    return tape.record(out_val, (x, w, b), vjp)


def maxpool1d(x, window):
    """Non-overlapping max pooling (stride == window); ties route to the lowest index."""
    tape = x.tape
    if window < 1:
        raise ConfigError(f"pool window must be positive, got {window}")
    length = x.value.shape[2]
    if length % window:
        raise ConfigError(f"pool window {window} does not divide length {length}")
    out_val, arg = kernels.maxpool1d_forward(x.value, window)

    def vjp(g):
        return (kernels.maxpool1d_backward(np.ascontiguousarray(g), arg, length),)

    return tape.record(out_val, (x,), vjp)


def relu(x):
    mask = x.value > 0.0

    def vjp(g):
        return (np.where(mask, g, 0.0),)

    return x.tape.record(np.where(mask, x.value, 0.0), (x,), vjp)


def dense(x, w, b=None, activation="linear"):
    """``x @ w.T + b`` for x shaped (B, F) and w shaped (O, F)."""
    parents = (x, w) if b is None else (x, w, b)
    tape = _check_same_tape(*parents)
    if x.value.ndim != 2 or w.value.ndim != 2 or x.value.shape[1] != w.value.shape[1]:
        raise ConfigError(f"dense shape mismatch: input {x.shape}, weight {w.shape}")
    if b is not None and b.value.shape != (w.value.shape[0],):
        raise ConfigError(f"dense bias shape {b.shape} != ({w.value.shape[0]},)")
    xv, wv = x.value, w.value
    z = xv @ wv.T
    if b is not None:
        z = z + b.value
    mask = None
    if activation == "relu":
        mask = z > 0.0
        z = np.where(mask, z, 0.0)
    elif activation != "linear":
        raise ConfigError(f"unknown activation {activation!r}")

    def vjp(g):
        if mask is not None:
            g = np.where(mask, g, 0.0)
        dx = g @ wv if x.requires_grad else None
        dw = g.T @ xv
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=0)

    return tape.record(z, parents, vjp)


# ---------------------------------------------------------------------------
# structural ops

def add(a, b):
    tape = _check_same_tape(a, b)
    if a.value.shape != b.value.shape:
        raise ConfigError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return tape.record(a.value + b.value, (a, b), lambda g: (g, g))


def scale(a, c):
    c = float(c)
    return a.tape.record(a.value * c, (a,), lambda g: (g * c,))


def reshape(a, shape):
    old = a.value.shape
    return a.tape.record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes):
    inv = np.argsort(axes)
    return a.tape.record(np.ascontiguousarray(a.value.transpose(axes)), (a,),
                         lambda g: (g.transpose(inv),))


def concat(vars_, axis=0):
    tape = _check_same_tape(*vars_)
    sizes = [v.value.shape[axis] for v in vars_]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return tape.record(np.concatenate([v.value for v in vars_], axis=axis), tuple(vars_), vjp)


def split(a, sections, axis=0):
    """Inverse of :func:`concat` for ``sections`` equal pieces; returns a list of Vars."""
    n = a.value.shape[axis]
    if n % sections:
        raise ConfigError(f"cannot split axis of size {n} into {sections}")
    step = n // sections
    out = []
    for k in range(sections):
        sl = [slice(None)] * a.value.ndim
        sl[axis] = slice(k * step, (k + 1) * step)
        sl = tuple(sl)

        def vjp(g, sl=sl):
            full = np.zeros(a.value.shape)
            full[sl] = g
            return (full,)

        out.append(a.tape.record(a.value[sl], (a,), vjp))
    return out


def take(a, index):
    """Gather columns of a (B, K) Var: ``out[:, m] = a[:, index[m]]``."""
    index = np.asarray(index, dtype=np.int64)
    width = a.value.shape[1]

    def vjp(g):
        full = np.zeros((g.shape[0], width))
        np.add.at(full, (slice(None), index), g)
        return (full,)

    return a.tape.record(a.value[:, index], (a,), vjp)


# ---------------------------------------------------------------------------
# heads and losses

def softmax_combine(values, logits):
    """Per row, ``sum_j softmax(logits)_j * values[:, j]`` -> (B,)."""
    tape = _check_same_tape(values, logits)
    v, z = values.value, logits.value
    if v.ndim != 2 or z.shape != (v.shape[1],):
        raise ConfigError(f"softmax_combine expects (B,K) values and (K,) logits, got {v.shape}, {z.shape}")
    e = np.exp(z - z.max())
    p = e / e.sum()
    out = v @ p

    def vjp(g):
        dv = np.outer(g, p) if values.requires_grad else None
        # d out_i / d z_k = p_k (v_ik - out_i)
        dz = p * (g @ v - g @ out)
        return dv, dz

    return tape.record(out, (values, logits), vjp)


def row_mean(values):
    """Mean over the last axis of a (B, K) Var -> (B,)."""
    k = values.value.shape[1]
    return values.tape.record(values.value.mean(axis=1), (values,),
                              lambda g: (np.repeat(g[:, None] / k, k, axis=1),))


def weighted_sse(pred, target, row_weights, col_weights=None):
    """``sum_i row_i * sum_j col_j * (target_ij - pred_ij)^2`` as a scalar Var.

    ``pred`` is (B,) or (B, K); ``col_weights`` must be None for (B,).
    """
    p = pred.value
    t = np.asarray(target, dtype=np.float64)
    if t.shape != p.shape:
        raise ConfigError(f"prediction shape {p.shape} != target shape {t.shape}")
    rw = np.asarray(row_weights, dtype=np.float64)
    r = p - t
    if p.ndim == 1:
        if col_weights is not None:
            raise ConfigError("column weights given for a vector prediction")
        wmat = rw
    else:
        cw = np.ones(p.shape[1]) if col_weights is None else np.asarray(col_weights, dtype=np.float64)
        wmat = rw[:, None] * cw[None, :]
    value = np.array(np.sum(wmat * r * r))

    def vjp(g):
        return (2.0 * float(g) * wmat * r,)

    return pred.tape.record(value, (pred,), vjp)
