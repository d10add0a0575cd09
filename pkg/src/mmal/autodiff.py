"""Minimal reverse-mode autodiff on float64 numpy arrays.

A forward pass records a computation tape (each result keeps its parents and
a vector-Jacobian closure); ``backward()`` on a scalar loss walks the tape in
reverse topological order and accumulates gradients into every tensor created
with ``requires_grad=True``. Ops cover exactly what LSTM sequence models need:
affine maps, elementwise nonlinearities, column slicing, reductions, and a
fused softmax cross-entropy. Everything is float64; arrays are C-ordered.

Inside a ``no_grad()`` block no tape is built, which makes prediction-only
forward passes cheap. The ``Adam`` optimizer and a finite-difference oracle
(for gradient checking) live here too.
"""

from __future__ import annotations

import contextlib
import heapq
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractViolationError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (prediction fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


_seq_counter = 0


def _next_seq() -> int:
    global _seq_counter
    _seq_counter += 1
    return _seq_counter


class Tensor:
    """A float64 array plus the tape bookkeeping needed for backward().

    ``_vjp`` maps the output gradient to a tuple of parent gradients; it is
    None for leaves and for tensors created under ``no_grad()``. ``_seq`` is
    the creation index: parents always precede children, which gives the
    reverse pass its topological order without a graph search.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None
        self._seq = _next_seq()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad leaf.

        Only scalar outputs are supported (losses). Raises if no forward pass
        was recorded for this tensor. Walks nodes in decreasing creation
        order, so every node's output gradient is complete before its own
        vector-Jacobian closure runs; intermediate gradients are dropped as
        soon as they are consumed.
        """
        if self.data.size != 1:
            raise ContractViolationError("backward() requires a scalar output")
        if not self.requires_grad or self._vjp is None and not self._parents:
            raise ContractViolationError(
                "backward() before a recorded forward pass (no tape attached)"
            )
        self.grad = np.ones_like(self.data) if self.grad is None else self.grad + 1.0
        heap: list[tuple[int, Tensor]] = [(-self._seq, self)]
        while heap:
            _, node = heapq.heappop(heap)
            if node._vjp is None:
                continue  # leaf: the accumulated gradient is the result
            g = node.grad
            node.grad = None
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if not parent.requires_grad or pg is None:
                    continue
                if parent.grad is None:
                    parent.grad = pg
                    heapq.heappush(heap, (-parent._seq, parent))
                else:
                    parent.grad = parent.grad + pg


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- primitive ops -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _make(out, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s

    def vjp(g):
        return (g * s,)

    return _make(out, (a,), vjp)


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractViolationError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ContractViolationError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}"
        )
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), vjp)


def sigmoid(x) -> Tensor:
    """Elementwise 1/(1+e^-x), computed branch-wise for stability."""
    x = _coerce(x)
    out = _sigmoid_array(x.data)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), vjp)


def _sigmoid_array(x: np.ndarray) -> np.ndarray:
    # exp stays in range once |x| is capped; sigmoid saturates by +-37 anyway
    return 1.0 / (1.0 + np.exp(np.clip(x, -500.0, 500.0) * -1.0))


def tanh(x) -> Tensor:
    x = _coerce(x)
    out = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _make(out, (x,), vjp)


def relu(x) -> Tensor:
    x = _coerce(x)
    out = np.maximum(x.data, 0.0)

    def vjp(g):
        return (g * (x.data > 0.0),)

    return _make(out, (x,), vjp)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a 2-D tensor; gradient scatters back."""
    out = x.data[:, start:stop]

    def vjp(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _make(out, (x,), vjp)


def gather_cols(x: Tensor, index: np.ndarray) -> Tensor:
    """Pick one column per row: out[i] = x[i, index[i]]."""
    rows = np.arange(x.data.shape[0])
    out = x.data[rows, index]

    def vjp(g):
        full = np.zeros_like(x.data)
        full[rows, index] = g
        return (full,)

    return _make(out, (x,), vjp)


def sum_all(x) -> Tensor:
    x = _coerce(x)
    out = np.asarray(x.data.sum())

    def vjp(g):
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _make(out, (x,), vjp)


def mean_all(x) -> Tensor:
    x = _coerce(x)
    n = x.data.size
    out = np.asarray(x.data.mean())

    def vjp(g):
        return (np.broadcast_to(g / n, x.data.shape).copy(),)

    return _make(out, (x,), vjp)


def softmax(z) -> Tensor:
    """Row softmax of a 1-D or 2-D tensor; shift-invariant and sums to 1."""
    z = _coerce(z)
    if z.data.size == 0:
        raise ContractViolationError("softmax of empty input")
    x = z.data
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out = p[0] if squeeze else p

    def vjp(g):
        gp = g[None, :] if squeeze else g
        dz = p * (gp - (gp * p).sum(axis=1, keepdims=True))
        return (dz[0] if squeeze else dz,)

    return _make(out, (z,), vjp)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of (B, K) logits against integer labels."""
    z = logits.data
    if z.ndim != 2 or len(labels) != z.shape[0]:
        raise ContractViolationError("cross_entropy expects (B, K) logits and B labels")
    labels = np.asarray(labels, dtype=np.intp)
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(z.shape[0]), labels]
    out = np.asarray((lse - picked).mean())

    def vjp(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(z.shape[0]), labels] -= 1.0
        return (p * (float(g) / z.shape[0]),)

    return _make(out, (logits,), vjp)


# -- optimizer ---------------------------------------------------------------

class Adam:
    """Adam with bias correction over a named set of parameter tensors.

    Moment accumulators mirror each parameter's shape; the step counter
    advances by exactly one per ``step()``. ``clip_norm`` optionally rescales
    the full gradient set to a maximum global L2 norm before the update.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        clip_norm: float | None = None,
    ):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        """One update from ``grads`` or, by default, each param's ``.grad``.

        Params with no gradient this step are left untouched (their moments
        too), so an all-zero-gradient step is a fixed point of the weights.
        """
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        for k, g in grads.items():
            if k not in self.params:
                raise ContractViolationError(f"unknown parameter {k!r}")
            if np.shape(g) != self.params[k].data.shape:
                raise ContractViolationError(
                    f"gradient shape {np.shape(g)} != parameter shape "
                    f"{self.params[k].data.shape} for {k!r}"
                )
        self.t += 1
        if self.clip_norm is not None and grads:
            total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.clip_norm:
                factor = self.clip_norm / total
                grads = {k: g * factor for k, g in grads.items()}
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        # algebraically the textbook update: lr * (m/bc1) / (sqrt(v/bc2) + eps)
        alpha = self.lr * math.sqrt(bc2) / bc1
        eps_hat = self.eps * math.sqrt(bc2)
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            self.params[k].data -= alpha * m / (np.sqrt(v) + eps_hat)


# -- gradient oracle ---------------------------------------------------------

def finite_difference_gradients(
    loss_fn: Callable[[], float],
    params: Iterable[Tensor] | Sequence[Tensor],
    step: float = 1e-5,
) -> list[np.ndarray]:
    """Central-difference gradients of ``loss_fn`` w.r.t. each param entry.

    Pure forward evaluations; independent of the tape, so it can serve as the
    oracle for checking analytic gradients.
    """
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_fn()
            flat[i] = orig - step
            lo = loss_fn()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        out.append(g)
    return out


def max_relative_error(
    analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray], floor: float = 1e-6
) -> float:
    """max over entries of |a-n| / max(|a|, |n|, floor)."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
