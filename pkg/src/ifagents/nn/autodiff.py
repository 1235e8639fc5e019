"""A small tape-based reverse-mode autodiff over float64 numpy arrays.

Only the operations the encoder and agents need are provided. The GRU,
layer norm and the two classification losses are fused ops with hand-written
backward passes; everything else is elementwise or matmul glue.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (),
                 backward: Optional[Callable] = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward)
    return Tensor(data)


def _accum(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor reachable from ``loss``."""
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# --------------------------------------------------------------------------
# elementwise and shape ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))
    return _node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))
    return _node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))
    return _node(a.data * b.data, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))
    return _node(np.matmul(a.data, b.data), (a, b), bw)


def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.shape))
    return _node(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _node(x.data.reshape(shape), (x,), lambda g: _accum(x, g.reshape(x.shape)))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(x.data, axes), (x,), lambda g: _accum(x, np.transpose(g, inv)))


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        _accum(x, full)
    return _node(x.data[idx], (x,), bw)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bw(g):
        for x, part in zip(xs, np.split(g, sizes, axis=axis)):
            _accum(x, part)
    return _node(np.concatenate([x.data for x in xs], axis=axis), xs, bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: _accum(x, g * mask))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _node(y, (x,), lambda g: _accum(x, g * (1.0 - y * y)))


def sigmoid_np(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = sigmoid_np(x.data)
    return _node(y, (x,), lambda g: _accum(x, g * y * (1.0 - y)))


def softmax_np(a, axis=-1):
    z = a - a.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    y = softmax_np(x.data, axis)

    def bw(g):
        _accum(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))
    return _node(y, (x,), bw)


# --------------------------------------------------------------------------
# fused ops


def layer_norm(x, scale, shift, eps: float = 1e-10) -> Tensor:
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        if scale.requires_grad:
            _accum(scale, _unbroadcast(g * xhat, scale.shape))
        if shift.requires_grad:
            _accum(shift, _unbroadcast(g, shift.shape))
        if x.requires_grad:
            d = g * scale.data
            _accum(x, inv * (d - d.mean(axis=-1, keepdims=True)
                             - xhat * (d * xhat).mean(axis=-1, keepdims=True)))
    return _node(xhat * scale.data + shift.data, (x, scale, shift), bw)


def cross_entropy(logits, targets) -> Tensor:
    """Mean of ``-log softmax(logits)[target]`` over rows of a (N, V) matrix."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logz
    n = logits.shape[0]
    rows = np.arange(n)
    loss = -logp[rows, targets].mean()

    def bw(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        _accum(logits, g * d / n)
    return _node(loss, (logits,), bw)


def bce_with_logits(logits, targets) -> Tensor:
    """Mean elementwise binary cross-entropy of ``sigmoid(logits)`` vs targets."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=DTYPE)
    x = logits.data
    loss = (np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))).mean()
    n = x.size

    def bw(g):
        _accum(logits, g * (sigmoid_np(x) - t) / n)
    return _node(loss, (logits,), bw)


def gru(inputs, wx, wh, b, lengths=None) -> Tensor:
    """Stacked, length-masked GRU over ``inputs`` of shape (G, B, T, E).

    ``wx`` is (G, E, 3H), ``wh`` (G, H, 3H), ``b`` (G, 3H) with gate blocks
    ordered [update z, reset r, candidate]. The recurrence is
    ``h' = (1 - z) * h + z * tanh(Wx_c x + Wh_c (r * h) + b_c)`` from h = 0.
    Returns all hidden states (G, B, T, H); past a row's length the hidden is
    carried unchanged, so ``[..., -1, :]`` is the final state.
    """
    inputs, wx, wh, b = (as_tensor(t) for t in (inputs, wx, wh, b))
    X = inputs.data
    G, B, T, E = X.shape
    H = wh.shape[-2]
    Wx, Wh = wx.data, wh.data
    Wh_zr, Wh_c = Wh[..., : 2 * H], Wh[..., 2 * H:]
    if lengths is None:
        lengths = np.full((G, B), T)
    lengths = np.asarray(lengths)
    xp = np.matmul(X.reshape(G, B * T, E), Wx).reshape(G, B, T, 3 * H) + b.data[:, None, None, :]
    h = np.zeros((G, B, H))
    out = np.empty((G, B, T, H))
    cache = []
    for t in range(T):
        zr = sigmoid_np(xp[:, :, t, : 2 * H] + np.matmul(h, Wh_zr))
        z, r = zr[..., :H], zr[..., H:]
        rh = r * h
        c = np.tanh(xp[:, :, t, 2 * H:] + np.matmul(rh, Wh_c))
        m = (t < lengths)[..., None]
        cache.append((h, z, r, rh, c, m))
        h = np.where(m, h + z * (c - h), h)
        out[:, :, t] = h

    def bw(gout):
        dWh_zr = np.zeros_like(Wh_zr)
        dWh_c = np.zeros_like(Wh_c)
        dxp = np.zeros((G, B, T, 3 * H))
        dh = np.zeros((G, B, H))
        for t in range(T - 1, -1, -1):
            dh = dh + gout[:, :, t]
            hp, z, r, rh, c, m = cache[t]
            dhn = dh * m
            dprev = dh * ~m + dhn * (1.0 - z)
            dz = dhn * (c - hp)
            dac = dhn * z * (1.0 - c * c)
            dWh_c += np.matmul(np.swapaxes(rh, -1, -2), dac)
            drh = np.matmul(dac, np.swapaxes(Wh_c, -1, -2))
            dprev += drh * r
            dzr = np.concatenate([dz * z * (1.0 - z), drh * hp * r * (1.0 - r)], axis=-1)
            dWh_zr += np.matmul(np.swapaxes(hp, -1, -2), dzr)
            dprev += np.matmul(dzr, np.swapaxes(Wh_zr, -1, -2))
            dxp[:, :, t, : 2 * H] = dzr
            dxp[:, :, t, 2 * H:] = dac
            dh = dprev
        flat = dxp.reshape(G, B * T, 3 * H)
        if wx.requires_grad:
            _accum(wx, np.matmul(np.swapaxes(X.reshape(G, B * T, E), -1, -2), flat))
        if wh.requires_grad:
            _accum(wh, np.concatenate([dWh_zr, dWh_c], axis=-1))
        if b.requires_grad:
            _accum(b, flat.sum(axis=1))
        if inputs.requires_grad:
            _accum(inputs, np.matmul(flat, np.swapaxes(Wx, -1, -2)).reshape(G, B, T, E))
    return _node(out, (inputs, wx, wh, b), bw)


# --------------------------------------------------------------------------
# driver helpers


def constant(params: dict) -> dict:
    return {k: Tensor(v) for k, v in params.items()}


def value_and_grad(loss_fn: Callable, params: dict, *args, **kwargs):
    """Evaluate ``loss_fn(tensors, ...)`` and its gradient for every entry of
    ``params``. Entries the loss does not touch get exact zeros."""
    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    out = loss_fn(leaves, *args, **kwargs)
    loss = out[0] if isinstance(out, tuple) else out
    if loss.requires_grad:
        backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
    return out, grads
