"""Dense tensor algebra with reverse-mode differentiation and a
finite-difference oracle.

A :class:`Tensor` wraps a numpy array. When any operand of an operation
requires gradients, the result records a backward closure; calling
``backward()`` on a scalar output replays the closures in reverse
topological order and accumulates ``.grad`` on every participating tensor.
The recorded graph is the differentiation context: it is single-writer
(build and differentiate on one thread) but the exported operations
themselves are pure and safe to call concurrently on distinct inputs.

Arrays are float32 by default; every operation preserves the dtype of its
operands, so a model built in float64 (used by the gradient checker)
differentiates the exact same code path at higher precision.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateInputError, OracleError, ShapeError

DEFAULT_DTYPE = np.float32

# Additive-mask sentinel for blocked attention pairs. Large but finite so
# float32 arithmetic never produces NaN; exp(blocked - max) underflows to
# exactly 0.0, which is what the causality tests rely on.
BLOCKED = -1.0e9

_LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


class Tensor:
    """A numpy array plus an optional gradient tape node."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, (np.ndarray, np.generic)):
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backprop: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph -------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` over the recorded graph.

        ``self`` must be a scalar. Gradients are reset before the pass, so
        two backward calls over the same recorded forward yield identical
        results.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))
        for node in topo:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backprop is not None:
                node._backprop(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def item(self) -> float:
        return float(self.data.reshape(()))


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def constant(value, dtype=DEFAULT_DTYPE) -> Tensor:
    """Wrap a value as a non-differentiable tensor."""
    return Tensor(np.asarray(value, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor],
            backprop: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backprop = backprop
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise and reduction primitives ----------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backprop(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.data.shape)

    return _result(data, (a, b), backprop)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backprop(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.data.shape)

    return _result(data, (a, b), backprop)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backprop(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.data.shape)

    return _result(data, (a, b), backprop)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def backprop(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g / b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)

    return _result(data, (a, b), backprop)


def sqrt(x: Tensor) -> Tensor:
    data = np.sqrt(x.data)

    def backprop(g):
        if x.requires_grad:
            x.grad += g * (0.5 / data)

    return _result(data, (x,), backprop)


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)

    def backprop(g):
        if x.requires_grad:
            x.grad += g / x.data

    return _result(data, (x,), backprop)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backprop(g):
        if x.requires_grad:
            if axis is None:
                x.grad += np.broadcast_to(g, x.data.shape)
            else:
                expanded = g if keepdims else np.expand_dims(g, axis)
                x.grad += np.broadcast_to(expanded, x.data.shape)

    return _result(data, (x,), backprop)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if x.data.size == 0:
        raise DegenerateInputError("mean over an empty tensor")
    count = x.data.size if axis is None else x.data.shape[axis]
    total = sum_(x, axis=axis, keepdims=keepdims)
    return mul(total, _as_tensor(1.0 / count, x.dtype))


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product covering the (2D@2D), (1D@2D) and (2D@1D) cases."""
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 1D/2D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backprop(g):
        if a.requires_grad:
            if b.data.ndim == 1:
                a.grad += np.outer(g, b.data) if a.data.ndim == 2 else g * b.data
            else:
                a.grad += g @ b.data.T
        if b.requires_grad:
            if a.data.ndim == 1:
                b.grad += np.outer(a.data, g) if b.data.ndim == 2 else a.data * g
            else:
                b.grad += a.data.T @ g

    return _result(data, (a, b), backprop)


def transpose(x: Tensor) -> Tensor:
    data = x.data.T

    def backprop(g):
        if x.requires_grad:
            x.grad += g.T

    return _result(data, (x,), backprop)


# -- structural ops ----------------------------------------------------------


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    return _concat(parts, axis=0)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    return _concat(parts, axis=1)


def _concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of zero tensors")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def backprop(g):
        offset = 0
        for p, size in zip(parts, sizes):
            if p.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + size)
                p.grad += g[tuple(index)]
            offset += size

    return _result(data, parts, backprop)


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack 1D tensors of equal length into a matrix, one per row."""
    parts = list(parts)
    if not parts:
        raise ShapeError("stack of zero tensors")
    data = np.stack([p.data for p in parts], axis=0)

    def backprop(g):
        for i, p in enumerate(parts):
            if p.requires_grad:
                p.grad += g[i]

    return _result(data, parts, backprop)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    data = x.data[start:stop]

    def backprop(g):
        if x.requires_grad:
            x.grad[start:stop] += g

    return _result(data, (x,), backprop)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    data = x.data[:, start:stop]

    def backprop(g):
        if x.requires_grad:
            x.grad[:, start:stop] += g

    return _result(data, (x,), backprop)


def pick_row(x: Tensor, index: int) -> Tensor:
    """Select one row of a matrix as a 1D tensor."""
    data = x.data[index]

    def backprop(g):
        if x.requires_grad:
            x.grad[index] += g

    return _result(data, (x,), backprop)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows ``ids`` of ``table``; gradients scatter-add back."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embedding ids must be 1D, got {ids.shape}")
    data = table.data[ids]

    def backprop(g):
        if table.requires_grad:
            np.add.at(table.grad, ids, g)

    return _result(data, (table,), backprop)


# -- nonlinearities ----------------------------------------------------------


def gelu(x: Tensor) -> Tensor:
    """GELU with the tanh approximation (smooth, numpy-native)."""
    x3 = x.data * x.data * x.data
    inner = _GELU_C * (x.data + 0.044715 * x3)
    tanh = np.tanh(inner)
    data = 0.5 * x.data * (1.0 + tanh)

    def backprop(g):
        if x.requires_grad:
            sech2 = 1.0 - tanh * tanh
            dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * x.data * x.data)
            x.grad += g * (0.5 * (1.0 + tanh) + 0.5 * x.data * sech2 * dinner)

    return _result(data, (x,), backprop)


def softmax_rows(logits: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, stabilised by the row maximum.

    Rows sum to 1 and the result is invariant (to rounding) under adding a
    constant to a row; inputs as extreme as [1000, 0] stay finite.
    """
    if logits.data.size == 0:
        raise ShapeError("softmax over an empty tensor")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    data = exp / exp.sum(axis=-1, keepdims=True)

    def backprop(g):
        if logits.requires_grad:
            inner = (g * data).sum(axis=-1, keepdims=True)
            logits.grad += data * (g - inner)

    return _result(data, (logits,), backprop)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = _LN_EPS) -> Tensor:
    """Normalise over the last axis and apply the affine (gamma, beta)."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def backprop(g):
        if gamma.requires_grad:
            gamma.grad += _unbroadcast(g * xhat, gamma.data.shape)
        if beta.requires_grad:
            beta.grad += _unbroadcast(g, beta.data.shape)
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.grad += inv * (dxhat - m1 - xhat * m2)

    return _result(data, (x, gamma, beta), backprop)


def l2_normalize(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale (the last axis of) ``x`` to unit norm, guarded by ``eps``."""
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    denom = norm + eps
    data = x.data / denom

    def backprop(g):
        if x.requires_grad:
            inner = (g * x.data).sum(axis=-1, keepdims=True)
            # d(x/(n+eps)) has a -x x^T / (n (n+eps)^2) term; at x == 0 the
            # numerator is exactly zero, so the tiny floor never activates.
            x.grad += g / denom - x.data * (inner / (np.maximum(norm, 1e-30) * denom * denom))

    return _result(data, (x,), backprop)


# -- attention ----------------------------------------------------------------


def _check_mask_rows(mask: np.ndarray) -> None:
    allowed = mask > BLOCKED / 2
    if not allowed.any(axis=-1).all():
        rows = np.nonzero(~allowed.any(axis=-1))[0]
        raise DegenerateInputError(f"attention mask blocks every position in row(s) {rows.tolist()}")


def masked_self_attention(q: Tensor, k: Tensor, v: Tensor,
                          mask: np.ndarray | None, num_heads: int = 1) -> Tensor:
    """Multi-head scaled dot-product attention with an additive mask.

    ``q``, ``k``, ``v`` are (n, d) with d divisible by ``num_heads``; ``mask``
    is an (n, n) additive matrix whose entries are 0 (allowed) or
    :data:`BLOCKED`. Each output row is a convex combination of value rows at
    allowed positions. A mask row with no allowed position is rejected.
    """
    n, d = q.shape
    if k.shape != (n, d) or v.shape != (n, d):
        raise ShapeError(f"q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    if d % num_heads != 0:
        raise ShapeError(f"width {d} not divisible by {num_heads} heads")
    mask_t = None
    if mask is not None:
        mask = np.asarray(mask, dtype=q.dtype)
        if mask.shape != (n, n):
            raise ShapeError(f"mask shape {mask.shape} does not match sequence length {n}")
        _check_mask_rows(mask)
        mask_t = constant(mask, dtype=q.dtype)
    head_dim = d // num_heads
    scale = 1.0 / math.sqrt(head_dim)
    outs = []
    for h in range(num_heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh = slice_cols(q, lo, hi)
        kh = slice_cols(k, lo, hi)
        vh = slice_cols(v, lo, hi)
        scores = mul(matmul(qh, transpose(kh)), _as_tensor(scale, q.dtype))
        if mask_t is not None:
            scores = add(scores, mask_t)
        weights = softmax_rows(scores)
        outs.append(matmul(weights, vh))
    return concat_cols(outs) if num_heads > 1 else outs[0]


def attention_weights(q: np.ndarray, k: np.ndarray, mask: np.ndarray | None,
                      num_heads: int = 1) -> np.ndarray:
    """Per-head attention weights (num_heads, n, n), for inspection in tests."""
    n, d = q.shape
    head_dim = d // num_heads
    scale = 1.0 / math.sqrt(head_dim)
    out = np.empty((num_heads, n, n), dtype=q.dtype)
    for h in range(num_heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        scores = (q[:, lo:hi] @ k[:, lo:hi].T) * scale
        if mask is not None:
            _check_mask_rows(np.asarray(mask))
            scores = scores + mask
        shifted = scores - scores.max(axis=-1, keepdims=True)
        exp = np.exp(shifted)
        out[h] = exp / exp.sum(axis=-1, keepdims=True)
    return out


# -- parameters and the finite-difference oracle ------------------------------


@dataclass(frozen=True, eq=False)
class Parameter:
    """A named model array. The array contents may be updated in place by the
    optimizer, but the name and trainable flag never change."""

    name: str
    value: np.ndarray
    trainable: bool = True
    decay: bool = False

    def as_tensor(self, live: bool = True) -> Tensor:
        """Wrap for a forward pass; ``live=False`` drops gradient tracking.

        Inside an active :class:`GradientTape`, trainable parameters map to
        one cached leaf tensor, so gradients accumulate per parameter no
        matter how many times the parameter enters the graph.
        """
        if live and self.trainable:
            tape = _current_tape()
            if tape is not None:
                return tape.leaf(self)
        return Tensor(self.value, requires_grad=self.trainable and live)


_tape_stack = threading.local()


def _current_tape() -> "GradientTape | None":
    return getattr(_tape_stack, "tape", None)


class GradientTape:
    """The differentiation context for one recorded forward pass.

    A tape is single-writer: enter it, build the loss, call ``backward()``
    on the loss, then read :meth:`gradients`. Tapes are thread-local, so
    concurrent recordings on separate threads do not interact.
    """

    def __init__(self):
        self._leaves: dict[int, tuple[Parameter, Tensor]] = {}

    def __enter__(self) -> "GradientTape":
        self._outer = _current_tape()
        _tape_stack.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.tape = self._outer

    def leaf(self, param: Parameter) -> Tensor:
        entry = self._leaves.get(id(param))
        if entry is None:
            entry = (param, Tensor(param.value, requires_grad=True))
            self._leaves[id(param)] = entry
        return entry[1]

    def gradients(self) -> dict[str, np.ndarray]:
        """Per-parameter gradients accumulated by the last backward pass.

        Parameters whose leaves never received gradient (not reached by the
        loss) map to zeros; non-trainable parameters are absent.
        """
        out: dict[str, np.ndarray] = {}
        for param, tensor in self._leaves.values():
            grad = tensor.grad if tensor.grad is not None else np.zeros_like(param.value)
            out[param.name] = grad
        return out


def finite_difference_gradients(loss_fn: Callable[[], float],
                                params: Iterable[Parameter],
                                eps: float = 1e-4) -> dict[str, np.ndarray]:
    """Central-difference d(loss)/d(p) for every trainable parameter.

    ``loss_fn`` must be a deterministic function of the current parameter
    values. Each scalar entry is perturbed by ±eps in place and restored.
    A non-finite loss at any probe point names the offending parameter.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    grads: dict[str, np.ndarray] = {}
    for p in params:
        if not p.trainable:
            continue
        flat = p.value.reshape(-1)
        grad = np.zeros(flat.shape, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = loss_fn()
            flat[i] = orig - eps
            minus = loss_fn()
            flat[i] = orig
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise OracleError(f"non-finite loss while probing parameter {p.name!r}[{i}]")
            grad[i] = (plus - minus) / (2.0 * eps)
        grads[p.name] = grad.reshape(p.value.shape)
    return grads
