"""Dense float64 tensors with tape-based reverse-mode gradients.

Only the handful of primitives the model needs are provided.  Each primitive
computes its forward value with numpy and, when a :class:`Tape` is active and
at least one input requires a gradient, records a closure that maps the output
gradient to input gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    pass


class GradCheckError(RuntimeError):
    pass


_ACTIVE_TAPES: list["Tape"] = []


class Tensor:
    """An immutable float64 array that may carry a gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"expected a scalar tensor, got shape {list(self.shape)}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}{tag})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple
    backward: object


class Tape:
    """Ordered record of executed primitives.

    Use as a context manager; primitives executed inside the block are
    recorded, and :meth:`backward` replays them in exact reverse order.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def record(self, out, inputs, backward):
        self.records.append(_Record(out, inputs, backward))

    def backward(self, loss: Tensor, store: "ParamStore | None" = None):
        """Accumulate d(loss)/d(leaf) into every leaf's ``grad``.

        Gradients add onto whatever the leaves already hold, so a parameter
        used several times (or across several backward calls) sums its
        contributions.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
        grads = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for inp, gi in zip(rec.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        leaves = {}
        for rec in self.records:
            for inp in rec.inputs:
                if inp.requires_grad and id(inp) in grads:
                    leaves[id(inp)] = inp
        if id(loss) in grads and loss.requires_grad and not self.records:
            leaves[id(loss)] = loss
        for key, leaf in leaves.items():
            g = grads[key]
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
            leaf.grad += g
        if store is not None:
            store.ensure_grads()
        return grads


def _record(out_data, inputs, backward):
    out = Tensor(out_data)
    if _ACTIVE_TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE_TAPES[-1].record(out, inputs, backward)
    return out


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _record(xd * xd, (x,), lambda g: (2.0 * xd * g,))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes of ``a`` batch.

    ``b`` may be a 2-D weight shared across the batch or carry the same
    leading axes as ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul shape mismatch: {list(a.shape)} x {list(b.shape)}")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                k, n = bd.shape
                gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _record(out, (a, b), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _record(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


def softmax(x, axis=-1, mask=None) -> Tensor:
    """Softmax along ``axis``; positions where ``mask`` is False get zero mass.

    Stable via max subtraction.  A fully masked row is an error.
    """
    x = as_tensor(x)
    if x.data.size == 0 or x.shape[axis] == 0:
        raise DimensionError("softmax of an empty input")
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not mask.any(axis=axis).all():
            raise DimensionError("softmax row with every position masked")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (x,), backward)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _record(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _record(out, tuple(tensors), backward)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    parts = idx if isinstance(idx, tuple) else (idx,)
    fancy = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def backward(g):
        out = np.zeros(shape)
        if fancy:
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return _record(x.data[idx], (x,), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def sum(x, axis=None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(x.data.sum(axis=axis), (x,), backward)


def max(x, axis) -> Tensor:  # noqa: A001
    """Maximum along ``axis``; the gradient goes to the first maximiser."""
    x = as_tensor(x)
    if x.shape[axis] == 0:
        raise DimensionError("max over an empty axis")
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros(x.shape)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _record(out, (x,), backward)


def where(mask, a, b) -> Tensor:
    """Select ``a`` where the constant ``mask`` holds, else ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    m = np.asarray(mask, dtype=bool)
    out = np.where(m, a.data, b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(np.where(m, g, 0.0), a.shape),
                                           _unbroadcast(np.where(m, 0.0, g), b.shape)))


def embedding(weight, ids) -> Tensor:
    """Rows of ``weight`` selected by integer ``ids`` (any shape)."""
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise DimensionError(f"embedding id out of range for table {list(weight.shape)}")

    def backward(g):
        out = np.zeros(weight.shape)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (out,)

    return _record(weight.data[ids], (weight,), backward)


def cross_entropy(logits, targets, weights=None) -> Tensor:
    """Weighted sum over rows of ``-log softmax(logits)[target]``.

    ``logits`` is (B, V); ``targets`` integer (B,); ``weights`` (B,) constants.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    z = logits.data
    B = z.shape[0]
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
    zmax = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=1)) + zmax[:, 0]
    nll = lse - z[np.arange(B), targets]
    out = np.array(np.dot(w, nll))

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(B), targets] -= 1.0
        return (g * w[:, None] * p,)

    return _record(out, (logits,), backward)


def recurrent_cell(x, h_prev, c_prev, Wx, Wh, b):
    """One LSTM step with gate layout [input, forget, candidate, output].

    ``x`` is (..., d_in), states (..., d_h), ``Wx`` (d_in, 4 d_h),
    ``Wh`` (d_h, 4 d_h), ``b`` (4 d_h,).  Returns ``(h, c)``.
    """
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    Wx, Wh, b = as_tensor(Wx), as_tensor(Wh), as_tensor(b)
    H = h_prev.shape[-1]
    if (Wx.shape != (x.shape[-1], 4 * H) or Wh.shape != (H, 4 * H)
            or b.shape != (4 * H,) or c_prev.shape != h_prev.shape):
        raise DimensionError(
            f"recurrent_cell shapes: x {list(x.shape)}, h {list(h_prev.shape)}, "
            f"c {list(c_prev.shape)}, Wx {list(Wx.shape)}, Wh {list(Wh.shape)}, b {list(b.shape)}")
    xd, hd, cd = x.data, h_prev.data, c_prev.data
    z = xd @ Wx.data + hd @ Wh.data + b.data
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H:2 * H])
    gc = np.tanh(z[..., 2 * H:3 * H])
    o = _sigmoid(z[..., 3 * H:])
    c = f * cd + i * gc
    tc = np.tanh(c)
    h = o * tc

    # h and c are recorded as one packed output so the gate algebra is shared.
    packed = np.concatenate([h, c], axis=-1)

    def backward(g):
        gh, gc_out = g[..., :H], g[..., H:]
        dc = gc_out + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * gc * i * (1.0 - i),
            dc * cd * f * (1.0 - f),
            dc * i * (1.0 - gc * gc),
            gh * tc * o * (1.0 - o),
        ], axis=-1)
        d_in = x.shape[-1]
        gx = dz @ Wx.data.T if x.requires_grad else None
        ghp = dz @ Wh.data.T if h_prev.requires_grad else None
        gcp = dc * f if c_prev.requires_grad else None
        flat = dz.reshape(-1, 4 * H)
        gWx = xd.reshape(-1, d_in).T @ flat if Wx.requires_grad else None
        gWh = hd.reshape(-1, H).T @ flat if Wh.requires_grad else None
        gb = flat.sum(axis=0) if b.requires_grad else None
        return gx, ghp, gcp, gWx, gWh, gb

    out = _record(packed, (x, h_prev, c_prev, Wx, Wh, b), backward)
    return out[..., :H], out[..., H:]


# ---------------------------------------------------------------- parameters


@dataclass
class ParamStore:
    """Named parameters with gradient accumulators and Adam moments."""

    params: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def add(self, name, value) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        t.grad = np.zeros_like(t.data)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    @property
    def grads(self) -> dict:
        self.ensure_grads()
        return {k: t.grad for k, t in self.params.items()}

    def ensure_grads(self):
        for t in self.params.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = np.zeros_like(t.data)

    def values(self) -> dict:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_values(self, values: dict):
        if set(values) != set(self.params):
            missing = set(self.params) ^ set(values)
            raise ValueError(f"parameter name sets differ: {sorted(missing)}")
        for k, arr in values.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != self.params[k].shape:
                raise DimensionError(
                    f"parameter {k!r}: expected shape {list(self.params[k].shape)}, got {list(arr.shape)}")
            self.params[k].data = arr.copy()

    def copy(self) -> "ParamStore":
        new = ParamStore()
        for k, t in self.params.items():
            new.add(k, t.data)
            new.m[k] = self.m[k].copy()
            new.v[k] = self.v[k].copy()
        new.step = self.step
        return new

    def num_parameters(self) -> int:
        return int(np.sum([t.data.size for t in self.params.values()]))


def init_uniform(rng: np.random.Generator, shape, fan_in=None, fan_out=None):
    """Glorot-uniform draw: U[-r, r] with r = sqrt(6 / (fan_in + fan_out))."""
    fan_in = shape[0] if fan_in is None else fan_in
    fan_out = (shape[1] if len(shape) > 1 else 1) if fan_out is None else fan_out
    r = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    total = math.sqrt(np.sum([np.sum(t.grad * t.grad) for t in store.params.values()]))
    if max_norm is not None and total > max_norm:
        scale = max_norm / total
        for t in store.params.values():
            t.grad *= scale
    return total


def adam_step(store: ParamStore, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update of every slot, then zero the gradients."""
    for name, t in store.params.items():
        if not np.all(np.isfinite(t.grad)):
            raise TrainingError(f"non-finite gradient in parameter slot {name!r}")
    store.step += 1
    bc1 = 1.0 - beta1 ** store.step
    bc2 = 1.0 - beta2 ** store.step
    for name, t in store.params.items():
        g = t.grad
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        t.data = t.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        t.grad = np.zeros_like(t.data)
    return store


# ---------------------------------------------------------------- grad check


@dataclass
class SlotReport:
    name: str
    max_rel_error: float
    max_abs_error: float
    passed: bool


def grad_check(f, store: ParamStore, h=1e-5, tol=1e-5, names=None):
    """Compare reverse-mode gradients of scalar ``f(store)`` to central differences.

    The error for a slot is ``max|g_ad - g_fd| / max(max|g_ad|, max|g_fd|)``,
    i.e. relative to the slot's largest gradient entry (both zero counts as
    exact).  Returns a list of :class:`SlotReport`.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    names = store.names() if names is None else list(names)
    store.zero_grad()
    with Tape() as tape:
        loss = f(store)
    if not np.all(np.isfinite(loss.data)):
        raise GradCheckError("f returned a non-finite value")
    tape.backward(loss, store)
    analytic = {k: store.params[k].grad.copy() for k in names}
    store.zero_grad()

    reports = []
    for name in names:
        p = store.params[name]
        base = p.data.copy()
        fd = np.zeros_like(base)
        flat = fd.reshape(-1)
        for j in range(base.size):
            bumped = base.copy().reshape(-1)
            bumped[j] = base.reshape(-1)[j] + h
            p.data = bumped.reshape(base.shape)
            fp = float(f(store).data)
            bumped[j] = base.reshape(-1)[j] - h
            p.data = bumped.reshape(base.shape)
            fm = float(f(store).data)
            if not (math.isfinite(fp) and math.isfinite(fm)):
                p.data = base
                raise GradCheckError(f"f non-finite while perturbing {name!r}")
            flat[j] = (fp - fm) / (2.0 * h)
        p.data = base
        a = analytic[name]
        abs_err = float(np.max(np.abs(a - fd))) if a.size else 0.0
        scale = float(np.max(np.maximum(np.abs(a), np.abs(fd)))) if a.size else 0.0
        rel = 0.0 if scale == 0.0 else abs_err / scale
        reports.append(SlotReport(name, rel, abs_err, rel <= tol))
    return reports
