"""Dense float64 tensors with tape-based reverse-mode differentiation.

The operator set is deliberately closed: it contains exactly what the
rest of the package needs (matrix products, broadcast add/multiply,
layer normalization, GELU/ReLU, exp/sqrt/clamp, reductions, shape
moves, slicing and concatenation). Asking for anything else is a
contract error, not a missing feature.

Ops record onto the innermost active :class:`Tape`. A backward sweep
walks the tape once, in reverse recording order, invoking every node's
backward rule exactly once and accumulating gradients into the
``requires_grad`` leaves.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .errors import ContractError, ShapeError

_TAPE_STACK: list["Tape"] = []

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _check_finite(data: np.ndarray) -> None:
    if not np.all(np.isfinite(data)):
        raise ContractError("tensor contains non-finite values")


class Tensor:
    """A float64 array plus optional gradient storage."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_node_index")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None
        self._node_index: int | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def numpy(self) -> np.ndarray:
        return self.data

    # -- operator sugar (all routed through the closed op set) ---------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, scalar_mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scalar_mul(self, -1.0))

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return sum_(self, axis=axis)

    def mean(self, axis=None):
        return mean_(self, axis=axis)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def exp(self):
        return exp_(self)

    def sqrt(self):
        return sqrt_(self)

    def relu(self):
        return relu(self)

    def gelu(self):
        return gelu(self)

    def clamp(self, lo, hi):
        return clamp(self, lo, hi)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tape:
    """Append-only record of operations, replayed in reverse by backward()."""

    def __init__(self):
        self.nodes: list[tuple[tuple[Tensor, ...], Tensor, object]] = []
        self.backward_invocations = 0

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def _record(self, inputs: tuple[Tensor, ...], output: Tensor, backward_fn) -> None:
        index = len(self.nodes)
        for t in inputs:
            # topological order holds by construction
            assert t._tape is not self or t._node_index < index
        self.nodes.append((inputs, output, backward_fn))
        output._tape = self
        output._node_index = index

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every requires_grad leaf."""
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ContractError("loss was not produced by operations recorded on this tape")

        buffers: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        self.backward_invocations = 0
        for inputs, output, backward_fn in reversed(self.nodes):
            grad_out = buffers.pop(id(output), None)
            if grad_out is None:
                grad_out = np.zeros_like(output.data)
            input_grads = backward_fn(grad_out)
            self.backward_invocations += 1
            for t, g in zip(inputs, input_grads):
                if g is None or not t.requires_grad:
                    continue
                if t._node_index is None or t._tape is not self:
                    # leaf: accumulate straight into persistent .grad
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += g
                else:
                    buf = buffers.get(id(t))
                    if buf is None:
                        buffers[id(t)] = np.array(g, dtype=np.float64, copy=True)
                    else:
                        buf += g


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Tensor) -> None:
    """Run the reverse sweep for the tape that recorded ``loss``."""
    if loss._tape is None:
        raise ContractError("loss was not produced by recorded operations")
    loss._tape.backward(loss)


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape._record(inputs, out, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- the closed operator set -------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy's stacked-matrix semantics (ndim >= 2)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    data = a.data @ b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward_fn(grad_out):
        ga = (
            _unbroadcast(grad_out @ np.swapaxes(b.data, -1, -2), a.shape)
            if need_a
            else None
        )
        gb = (
            _unbroadcast(np.swapaxes(a.data, -1, -2) @ grad_out, b.shape)
            if need_b
            else None
        )
        return ga, gb

    return _make(data, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add cannot broadcast {a.shape} with {b.shape}") from exc
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward_fn(grad_out):
        return (
            _unbroadcast(grad_out, a.shape) if need_a else None,
            _unbroadcast(grad_out, b.shape) if need_b else None,
        )

    return _make(data, (a, b), backward_fn)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    data = a.data * c

    def backward_fn(grad_out):
        return (grad_out * c,)

    return _make(data, (a,), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product with broadcasting."""
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul cannot broadcast {a.shape} with {b.shape}") from exc
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward_fn(grad_out):
        return (
            _unbroadcast(grad_out * b.data, a.shape) if need_a else None,
            _unbroadcast(grad_out * a.data, b.shape) if need_b else None,
        )

    return _make(data, (a, b), backward_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dimension to zero mean / unit variance, then affine."""
    c = x.shape[-1] if x.ndim else 0
    if c == 0:
        raise ShapeError("layer_norm over an empty last dimension")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match feature size {c}"
        )
    if eps < 0:
        raise ContractError("layer_norm eps must be non-negative")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    data = gamma.data * xhat + beta.data

    need_x, need_gamma, need_beta = x.requires_grad, gamma.requires_grad, beta.requires_grad

    def backward_fn(grad_out):
        dx = dgamma = dbeta = None
        if need_x:
            dxhat = grad_out * gamma.data
            dx = inv_std * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        reduce_axes = tuple(range(grad_out.ndim - 1))
        if need_gamma:
            dgamma = (grad_out * xhat).sum(axis=reduce_axes) if reduce_axes else grad_out * xhat
        if need_beta:
            dbeta = grad_out.sum(axis=reduce_axes) if reduce_axes else grad_out
        return dx, dgamma, dbeta

    return _make(data, (x, gamma, beta), backward_fn)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU x * Phi(x) with Phi the standard normal CDF."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    data = x.data * cdf

    def backward_fn(grad_out):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (grad_out * (cdf + x.data * pdf),)

    return _make(data, (x,), backward_fn)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)

    def backward_fn(grad_out):
        # subgradient at 0 fixed to 0
        return (grad_out * (x.data > 0.0),)

    return _make(data, (x,), backward_fn)


def exp_(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        data = np.exp(x.data)
    _check_finite(data)

    def backward_fn(grad_out):
        return (grad_out * data,)

    return _make(data, (x,), backward_fn)


def sqrt_(x: Tensor) -> Tensor:
    if np.any(x.data < 0.0):
        raise ContractError("sqrt of a negative value")
    data = np.sqrt(x.data)

    def backward_fn(grad_out):
        return (grad_out * 0.5 / data,)

    return _make(data, (x,), backward_fn)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes through strictly inside the range."""
    if lo > hi:
        raise ContractError(f"clamp bounds are inverted: [{lo}, {hi}]")
    data = np.clip(x.data, lo, hi)

    def backward_fn(grad_out):
        return (grad_out * ((x.data > lo) & (x.data < hi)),)

    return _make(data, (x,), backward_fn)


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    data = x.data.sum(axis=axes if axes else None)

    def backward_fn(grad_out):
        g = np.asarray(grad_out)
        g = np.expand_dims(g, axis=axes) if axes else g
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(data, (x,), backward_fn)


def mean_(x: Tensor, axis=None) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    data = x.data.mean(axis=axes if axes else None)

    def backward_fn(grad_out):
        g = np.asarray(grad_out) / count
        g = np.expand_dims(g, axis=axes) if axes else g
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(data, (x,), backward_fn)


def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)

    def backward_fn(grad_out):
        return (grad_out.reshape(x.shape),)

    return _make(data, (x,), backward_fn)


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is not None:
        axes = tuple(a % x.ndim for a in axes)
    data = np.transpose(x.data, axes)
    inverse = np.argsort(axes) if axes is not None else None

    def backward_fn(grad_out):
        return (np.transpose(grad_out, inverse),)

    return _make(data, (x,), backward_fn)


def swap_last2(x: Tensor) -> Tensor:
    """Transpose the trailing two axes (identity on batch axes)."""
    if x.ndim < 2:
        raise ShapeError(f"swap_last2 needs ndim >= 2, got shape {x.shape}")
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return transpose(x, axes)


def take(x: Tensor, index) -> Tensor:
    data = x.data[index]

    def backward_fn(grad_out):
        g = np.zeros_like(x.data)
        np.add.at(g, index, grad_out)
        return (g,)

    return _make(data, (x,), backward_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ContractError("concat of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(grad_out):
        slicer = [slice(None)] * grad_out.ndim
        grads = []
        for i in range(len(tensors)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(grad_out[tuple(slicer)])
        return tuple(grads)

    return _make(data, tensors, backward_fn)
