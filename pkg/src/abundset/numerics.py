"""Dense tensors with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays. When a :class:`Tape` is active and an
input requires gradients, the op appends its adjoint rule to the tape;
:func:`backward` replays the tape in reverse and accumulates into the
parameter gradients held by a :class:`ParamStore`.

    store = ParamStore(seed=0, dtype=np.float64)
    w = store.weight("w", (3, 2))
    with Tape() as tape:
        loss = tsum(matmul(x, w))
    backward(loss, tape, store)
"""

from __future__ import annotations

import zlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError, StateError

DEFAULT_DTYPE = np.float32

_active_tapes: list["Tape"] = []


class Tensor:
    """Immutable array value with an optional gradient buffer.

    ``grad`` is only populated for leaves (parameters); intermediate adjoints
    live inside :func:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Ordered record of the ops executed while the tape is active."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._produced: set[int] = set()

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], adjoint: Callable):
        self.nodes.append((out, inputs, adjoint))
        self._produced.add(id(out))

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._produced


def active_tape() -> Tape | None:
    return _active_tapes[-1] if _active_tapes else None


def _check_finite(arr: np.ndarray, what: str):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced by {what}")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], adjoint: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(out, inputs, adjoint)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype)
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes (leading axes broadcast)."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def adjoint(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result(ad @ bd, (a, b), adjoint, "matmul")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis, max-shifted per row."""
    _check_finite(x.data, "softmax input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def adjoint(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), adjoint, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then apply gain and bias."""
    if gain.shape[-1] != x.shape[-1] or bias.shape[-1] != x.shape[-1]:
        raise DimensionError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs input {x.shape}")
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def adjoint(g):
        dxhat = g * gd
        dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _result(xhat * gd + bias.data, (x, gain, bias), adjoint, "layer_norm")


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def tmean(a: Tensor) -> Tensor:
    shape, size = a.shape, a.data.size
    return _result(np.asarray(a.data.mean()), (a,),
                   lambda g: (np.broadcast_to(g / size, shape).copy(),), "mean")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                   lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def stack(tensors: Sequence[Tensor]) -> Tensor:
    tensors = tuple(tensors)
    return _result(np.stack([t.data for t in tensors]), tensors,
                   lambda g: tuple(g[i] for i in range(len(tensors))), "stack")


def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits)."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != len(targets):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs {len(targets)} targets")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(len(targets))
    loss = -logp[rows, targets].mean()

    def adjoint(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (d * (g / len(targets)),)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), adjoint, "cross_entropy")


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor, tape: Tape, params: "ParamStore | None" = None):
    """Accumulate d(loss)/d(leaf) into every gradient-requiring leaf.

    Gradients add onto whatever is already stored; call
    :meth:`ParamStore.zero_grad` between steps.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.nodes or not tape.produced(loss):
        raise StateError("backward called without a recorded forward pass for this loss")

    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, rule in reversed(tape.nodes):
        g = adj.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, rule(g)):
            if gi is None or not inp.requires_grad:
                continue
            if tape.produced(inp):
                key = id(inp)
                adj[key] = adj[key] + gi if key in adj else gi
            else:
                _check_finite(gi, "backward")
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += gi
    if params is not None:
        for name, p in params.items():
            if p.grad is not None and p.grad.shape != p.shape:
                raise StateError(f"gradient shape mismatch for {name}")


# ---------------------------------------------------------------------------
# parameters and optimizer
# ---------------------------------------------------------------------------


def _name_seed(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class ParamStore:
    """Named trainable tensors plus their Adam moments.

    Every tensor's initial value depends only on ``(seed, name)``, so
    creation order does not matter.
    """

    def __init__(self, seed: int = 0, dtype=DEFAULT_DTYPE):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.step_count = 0

    def rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, _name_seed(name)])

    def _register(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def weight(self, name: str, shape: tuple[int, ...], fan_in: int | None = None) -> Tensor:
        """Fetch or create a weight drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        if name in self._params:
            return self._params[name]
        fan_in = shape[0] if fan_in is None else fan_in
        bound = 1.0 / np.sqrt(fan_in)
        return self._register(name, self.rng(name).uniform(-bound, bound, size=shape))

    def bias(self, name: str, shape: tuple[int, ...]) -> Tensor:
        if name in self._params:
            return self._params[name]
        return self._register(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        if name in self._params:
            return self._params[name]
        return self._register(name, np.ones(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for name, value in arrays.items():
            value = np.asarray(value, dtype=self.dtype)
            if name in self._params:
                if value.shape != self._params[name].shape:
                    raise DimensionError(f"shape mismatch loading {name}")
                self._params[name].data = value
            else:
                self._register(name, value)

    def merged(self, other: "ParamStore") -> "ParamStore":
        """A store viewing the tensors of both (names must not collide)."""
        out = ParamStore(self.seed, self.dtype)
        for src in (self, other):
            for name, t in src.items():
                if name in out._params:
                    raise KeyError(f"duplicate parameter name {name!r}")
                out._params[name] = t
        return out


def adam_step(params: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, t: int | None = None, names: Iterable[str] | None = None):
    """One bias-corrected Adam update of every parameter (or just ``names``)."""
    if t is None:
        params.step_count += 1
        t = params.step_count
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name in (params.names() if names is None else names):
        p = params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        _check_finite(g, f"gradient of {name}")
        m, v = params.moments.get(name, (np.zeros_like(p.data), np.zeros_like(p.data)))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        params.moments[name] = (m, v)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(params.dtype)
