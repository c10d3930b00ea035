"""A small reverse-mode autodiff engine over float64 numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure propagating ``out.grad`` back to them. :meth:`Tensor.backward`
walks the recorded graph once in reverse topological order.
"""

from __future__ import annotations

import contextlib
import json
import struct
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import AutodiffError, InputError, TrainingError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _prev: tuple = (), _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._prev = _prev
        self._backward = None
        self._op = _op
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _acc(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def backward(self) -> None:
        """Populate ``.grad`` on every tensor reachable from this scalar."""
        if self.data.size != 1:
            raise AutodiffError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise AutodiffError("backward already ran on this graph; rebuild it with a fresh forward pass")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()
        self._consumed = True

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_t(other)))

    def __rsub__(self, other):
        return add(_t(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise InputError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on the current path, 2 = finished
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        key = id(node)
        if done:
            state[key] = 2
            order.append(node)
            continue
        s = state.get(key)
        if s == 2:
            continue
        if s == 1:
            raise AutodiffError("cycle detected in the computation graph")
        state[key] = 1
        stack.append((node, True))
        for p in node._prev:
            ps = state.get(id(p))
            if ps == 1:
                raise AutodiffError("cycle detected in the computation graph")
            if ps is None and p.requires_grad:
                stack.append((p, False))
    return order


def _result(data, parents: tuple, op: str) -> Tensor:
    req = _grad_enabled and any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _prev=parents if req else (), _op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise InputError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast(a, b, "add")
    out = _result(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _backward():
            if a.requires_grad:
                a._acc(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._acc(_unbroadcast(out.grad, b.shape))
        out._backward = _backward
    return out


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast(a, b, "mul")
    out = _result(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _backward():
            if a.requires_grad:
                a._acc(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                b._acc(_unbroadcast(out.grad * a.data, b.shape))
        out._backward = _backward
    return out


def neg(a: Tensor) -> Tensor:
    out = _result(-a.data, (a,), "neg")
    if out.requires_grad:
        out._backward = lambda: a._acc(-out.grad)
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = _result(y, (a,), "tanh")
    if out.requires_grad:
        out._backward = lambda: a._acc(out.grad * (1.0 - y * y))
    return out


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    out = _result(a.data * pos, (a,), "relu")
    if out.requires_grad:
        out._backward = lambda: a._acc(out.grad * pos)
    return out


def _logistic(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    y = _logistic(a.data)
    out = _result(y, (a,), "sigmoid")
    if out.requires_grad:
        out._backward = lambda: a._acc(out.grad * y * (1.0 - y))
    return out


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = _result(y, (a,), "exp")
    if out.requires_grad:
        out._backward = lambda: a._acc(out.grad * y)
    return out


def log(a: Tensor) -> Tensor:
    out = _result(np.log(a.data), (a,), "log")
    if out.requires_grad:
        out._backward = lambda: a._acc(out.grad / a.data)
    return out


# --------------------------------------------------------------------------
# shape ops


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim == 1 or b.ndim == 1:
        if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0]:
            raise InputError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
        va, vb = a.ndim == 1, b.ndim == 1
        out = matmul(a.reshape(1, -1) if va else a, b.reshape(-1, 1) if vb else b)
        shape = out.shape[:-2] + (() if va else out.shape[-2:-1]) + (() if vb else out.shape[-1:])
        return out.reshape(*shape) if shape else out.reshape(())
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise InputError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    try:
        data = a.data @ b.data
    except ValueError:
        raise InputError(f"matmul: shapes {a.shape} and {b.shape} are incompatible") from None
    out = _result(data, (a, b), "matmul")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if a.requires_grad:
                a._acc(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            if b.requires_grad:
                if a.ndim > 2 and b.ndim == 2:
                    k = a.shape[-1]
                    b._acc(a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
                else:
                    b._acc(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
        out._backward = _backward
    return out


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [_t(x) for x in tensors]
    try:
        data = np.concatenate([x.data for x in ts], axis=axis)
    except ValueError:
        raise InputError(f"concat: incompatible shapes {[x.shape for x in ts]} on axis {axis}") from None
    out = _result(data, tuple(ts), "concat")
    if out.requires_grad:
        sizes = np.cumsum([x.shape[axis] for x in ts])[:-1]

        def _backward():
            for x, g in zip(ts, np.split(out.grad, sizes, axis=axis)):
                if x.requires_grad:
                    x._acc(g)
        out._backward = _backward
    return out


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [_t(x) for x in tensors]
    shapes = {x.shape for x in ts}
    if len(shapes) != 1:
        raise InputError(f"stack: shapes differ {sorted(shapes)}")
    out = _result(np.stack([x.data for x in ts], axis=axis), tuple(ts), "stack")
    if out.requires_grad:
        def _backward():
            g = np.moveaxis(out.grad, axis, 0)
            for x, gi in zip(ts, g):
                if x.requires_grad:
                    x._acc(gi)
        out._backward = _backward
    return out


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a: Tensor, idx) -> Tensor:
    try:
        data = a.data[idx]
    except IndexError as e:
        raise InputError(f"index {idx!r} invalid for shape {a.shape}: {e}") from None
    out = _result(data, (a,), "getitem")
    if out.requires_grad:
        basic = _is_basic(idx)

        def _backward():
            g = np.zeros_like(a.data)
            if basic:
                g[idx] = out.grad
            else:
                np.add.at(g, idx, out.grad)
            a._acc(g)
        out._backward = _backward
    return out


def reshape(a: Tensor, shape) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise InputError(f"reshape: cannot reshape {a.shape} into {shape}") from None
    out = _result(data, (a,), "reshape")
    if out.requires_grad:
        out._backward = lambda: a._acc(out.grad.reshape(a.shape))
    return out


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    if sorted(axes) != list(range(a.ndim)):
        raise InputError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    out = _result(a.data.transpose(axes), (a,), "transpose")
    if out.requires_grad:
        out._backward = lambda: a._acc(out.grad.transpose(inv))
    return out


def tsum(a: Tensor, axis=None) -> Tensor:
    out = _result(a.data.sum(axis=axis), (a,), "sum")
    if out.requires_grad:
        def _backward():
            g = out.grad if axis is None else np.expand_dims(out.grad, axis)
            a._acc(np.broadcast_to(g, a.shape).copy())
        out._backward = _backward
    return out


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


# --------------------------------------------------------------------------
# neural-net ops


def embedding(weight: Tensor, idx) -> Tensor:
    """Rows of ``weight`` selected by an integer array ``idx``."""
    idx = np.asarray(idx)
    if idx.dtype.kind not in "iu":
        raise InputError(f"embedding indices must be integers, got {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= weight.shape[0]):
        raise InputError(f"embedding index out of range for table of shape {weight.shape}")
    out = _result(weight.data[idx], (weight,), "embedding")
    if out.requires_grad:
        def _backward():
            flat = idx.reshape(-1)
            onehot = np.zeros((flat.size, weight.shape[0]))
            onehot[np.arange(flat.size), flat] = 1.0
            weight._acc(onehot.T @ out.grad.reshape(flat.size, -1))
        out._backward = _backward
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _result(y, (a,), "softmax")
    if out.requires_grad:
        def _backward():
            g = out.grad
            a._acc(y * (g - (g * y).sum(axis=axis, keepdims=True)))
        out._backward = _backward
    return out


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    if gamma.shape != (a.shape[-1],) or beta.shape != (a.shape[-1],):
        raise InputError(f"layer_norm: gain/bias shapes {gamma.shape}, {beta.shape} do not match {a.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _result(xhat * gamma.data + beta.data, (a, gamma, beta), "layer_norm")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if gamma.requires_grad:
                gamma._acc((g * xhat).reshape(-1, a.shape[-1]).sum(axis=0))
            if beta.requires_grad:
                beta._acc(g.reshape(-1, a.shape[-1]).sum(axis=0))
            if a.requires_grad:
                gx = g * gamma.data
                a._acc(inv * (gx - gx.mean(axis=-1, keepdims=True)
                              - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))
        out._backward = _backward
    return out


def mse_loss(pred: Tensor, target, mask=None) -> Tensor:
    """Mean squared error over elements; ``mask`` (broadcastable, 0/1) drops cells."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InputError(f"mse_loss: prediction shape {pred.shape} vs target shape {target.shape}")
    diff = pred.data - target
    if mask is None:
        w = np.ones_like(diff)
    else:
        w = np.broadcast_to(np.asarray(mask, dtype=np.float64).reshape(
            np.shape(mask) + (1,) * (diff.ndim - np.ndim(mask))), diff.shape)
    count = w.sum()
    if count == 0:
        raise InputError("mse_loss: every element is masked")
    out = _result(np.array((w * diff * diff).sum() / count), (pred,), "mse_loss")
    if out.requires_grad:
        out._backward = lambda: pred._acc(out.grad * 2.0 * w * diff / count)
    return out


def cross_entropy(logits: Tensor, labels, mask=None) -> Tensor:
    """Softmax cross-entropy averaged over (unmasked) positions."""
    labels = np.asarray(labels)
    if logits.shape[:-1] != labels.shape:
        raise InputError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    C = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise InputError(f"cross_entropy: label outside [0, {C})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    w = np.ones(labels.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    count = w.sum()
    if count == 0:
        raise InputError("cross_entropy: every position is masked")
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    out = _result(np.array(-(w * picked).sum() / count), (logits,), "cross_entropy")
    if out.requires_grad:
        def _backward():
            p = np.exp(logp)
            onehot = np.zeros_like(p)
            np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
            logits._acc(out.grad * (p - onehot) * (w / count)[..., None])
        out._backward = _backward
    return out


# --------------------------------------------------------------------------
# optimisers


def _check_finite(name: str, g: np.ndarray) -> None:
    if not np.all(np.isfinite(g)):
        raise TrainingError(f"non-finite gradient for parameter {name!r}")


def rmsprop_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: dict,
                 lr: float, alpha: float = 0.99, eps: float = 1e-8) -> None:
    """In place: ``s = alpha s + (1 - alpha) g^2``; ``p -= lr g / (sqrt(s) + eps)``."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        _check_finite(name, g)
        s = state.get(name)
        if s is None:
            s = np.zeros_like(p.data)
        elif s.shape != p.shape:
            raise InputError(f"optimizer state for {name!r} has shape {s.shape}, parameter {p.shape}")
        s = alpha * s + (1.0 - alpha) * g * g
        state[name] = s
        p.data -= lr * g / (np.sqrt(s) + eps)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: dict,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    t = state.get("__step__", 0) + 1
    state["__step__"] = t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        _check_finite(name, g)
        m, v = state.get(name, (np.zeros_like(p.data), np.zeros_like(p.data)))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state[name] = (m, v)
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)


class Optimizer:
    """Holds per-parameter state for :func:`rmsprop_step` or :func:`adam_step`."""

    def __init__(self, params: Mapping[str, Tensor], kind: str = "rmsprop", lr: float = 1e-3, **kw):
        if kind not in ("rmsprop", "adam"):
            raise InputError(f"unknown optimizer {kind!r}")
        self.params = dict(params)
        self.kind, self.lr, self.kw = kind, lr, kw
        self.state: dict = {}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        fn = rmsprop_step if self.kind == "rmsprop" else adam_step
        fn(self.params, grads, self.state, self.lr, **self.kw)


# --------------------------------------------------------------------------
# gradient checking


def gradcheck(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], step: float = 1e-5,
              max_per_param: int | None = 40, rng: np.random.Generator | None = None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-7)``. At most
    ``max_per_param`` randomly chosen entries of each parameter are probed.
    """
    rng = rng or np.random.default_rng(0)
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idxs = rng.choice(flat.size, size=max_per_param, replace=False)
        for i in idxs:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + step
                up = float(loss_fn().data)
                flat[i] = orig - step
                down = float(loss_fn().data)
            flat[i] = orig
            num = (up - down) / (2 * step)
            a = float(analytic.reshape(-1)[i])
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-7))
    return worst


# --------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"DYCKLAB\x00"
_CKPT_VERSION = 1


def save_checkpoint(path: str | Path, tensors: Mapping[str, object], meta: Mapping | None = None) -> None:
    """Write named float64 tensors (little-endian) after a JSON metadata header."""
    header = json.dumps(dict(meta or {}), sort_keys=True).encode("utf-8")
    parts = [_CKPT_MAGIC, struct.pack("<II", _CKPT_VERSION, len(header)), header,
             struct.pack("<I", len(tensors))]
    for name, t in tensors.items():
        arr = np.asarray(t.data if isinstance(t, Tensor) else t, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<HB", len(raw), arr.ndim) + raw)
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        return _parse_checkpoint(Path(path).read_bytes(), path)
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        if isinstance(e, InputError):
            raise
        raise InputError(f"{path}: truncated or corrupt checkpoint ({e})") from None


def _parse_checkpoint(buf: bytes, path) -> tuple[dict[str, np.ndarray], dict]:
    if buf[:8] != _CKPT_MAGIC:
        raise InputError(f"{path}: not a dycklab checkpoint")
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != _CKPT_VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    meta = json.loads(buf[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        nlen, ndim = struct.unpack_from("<HB", buf, pos)
        pos += 3
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    return tensors, meta
