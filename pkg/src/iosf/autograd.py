"""Reverse-mode value-and-gradient kernel over dense float64 arrays.

Every operation returns a fresh :class:`Tensor`.  When gradients are enabled
and an input requires them, the op records its parents and a vector-Jacobian
closure on the output node; the recorded graph doubles as the gradient tape
and ``backward`` replays it in reverse topological order, accumulating into
``Tensor.grad``.  Tensors that do not require gradients never receive one,
so frozen parameters accumulate exactly zero by construction.

The kernel only supports the shapes this engine needs: scalars (shape ``()``),
vectors and matrices.  No broadcasting beyond scalar-times-array.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12  # clamp for log() in cross-entropy

_grad_depth = 0


class no_grad:
    """Context manager that disables graph recording (evaluation mode)."""

    def __enter__(self):
        global _grad_depth
        _grad_depth += 1
        return self

    def __exit__(self, *exc):
        global _grad_depth
        _grad_depth -= 1
        return False


def grad_enabled() -> bool:
    return _grad_depth == 0


class Tensor:
    """Dense float64 array with optional gradient tracking.

    Invariant: every entry is finite; construction rejects NaN/Inf, and since
    all public ops build their results through the constructor the invariant
    holds after any public operation.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor entries must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad) and grad_enabled()
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Iterable[tuple["Tensor", np.ndarray]]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __neg__(self):
        return neg(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _record(out: Tensor, parents: Sequence[Tensor], vjp) -> Tensor:
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _scalar_to(shape: tuple[int, ...], g: np.ndarray) -> np.ndarray:
    # reduce an upstream gradient onto a scalar () operand
    return np.sum(g).reshape(shape)


# -- arithmetic -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ContractError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def vjp(g):
        return ((a, g), (b, g))

    return _record(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)

    def vjp(g):
        return ((a, -g),)

    return _record(out, (a,), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ContractError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)

    def vjp(g):
        ga = g * b.data
        gb = g * a.data
        if a.shape == () and b.shape != ():
            ga = _scalar_to((), ga)
        if b.shape == () and a.shape != ():
            gb = _scalar_to((), gb)
        return ((a, ga), (b, gb))

    return _record(out, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    if b.shape != () and b.shape != a.shape:
        raise ContractError(f"div shape mismatch: {a.shape} vs {b.shape}")
    if np.any(b.data == 0.0):
        raise ValueError("division by zero")
    out = Tensor(a.data / b.data)

    def vjp(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        if b.shape == () and a.shape != ():
            gb = _scalar_to((), gb)
        return ((a, ga), (b, gb))

    return _record(out, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python-float constant (no graph node for the constant)."""
    c = float(c)
    out = Tensor(a.data * c)

    def vjp(g):
        return ((a, g * c),)

    return _record(out, (a,), vjp)


def matvec(m: Tensor, v: Tensor) -> Tensor:
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ContractError(f"matvec shape mismatch: {m.shape} @ {v.shape}")
    out = Tensor(m.data @ v.data)

    def vjp(g):
        return ((m, np.outer(g, v.data)), (v, m.data.T @ g))

    return _record(out, (m, v), vjp)


def vdot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or a.shape != b.shape:
        raise ContractError(f"vdot shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(np.dot(a.data, b.data))

    def vjp(g):
        return ((a, g * b.data), (b, g * a.data))

    return _record(out, (a, b), vjp)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)

    def vjp(g):
        return ((a, g * (1.0 - y * y)),)

    return _record(out, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    out = Tensor(np.where(mask, a.data, 0.0))

    def vjp(g):
        return ((a, g * mask),)

    return _record(out, (a,), vjp)


def mean_rows(m: Tensor) -> Tensor:
    """Mean over rows of a matrix: (L, D) -> (D,)."""
    if m.data.ndim != 2:
        raise ContractError(f"mean_rows expects a matrix, got shape {m.shape}")
    n_rows = m.shape[0]
    out = Tensor(m.data.mean(axis=0))

    def vjp(g):
        return ((m, np.broadcast_to(g / n_rows, m.shape).copy()),)

    return _record(out, (m,), vjp)


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack scalar tensors into a vector."""
    parts = list(parts)
    if not parts:
        raise ValueError("stack of zero tensors")
    for p in parts:
        if p.shape != ():
            raise ContractError("stack expects scalar tensors")
    out = Tensor(np.array([p.data for p in parts], dtype=np.float64))

    def vjp(g):
        return tuple((p, g[i].reshape(())) for i, p in enumerate(parts))

    return _record(out, tuple(parts), vjp)


def pick(v: Tensor, index: int) -> Tensor:
    if v.data.ndim != 1:
        raise ContractError("pick expects a vector")
    if not 0 <= index < v.shape[0]:
        raise IndexError(f"index {index} out of range for length {v.shape[0]}")
    out = Tensor(v.data[index])

    def vjp(g):
        gv = np.zeros_like(v.data)
        gv[index] = g
        return ((v, gv),)

    return _record(out, (v,), vjp)


# -- classifier-head primitives ---------------------------------------------

def _softmax_values(v: np.ndarray) -> np.ndarray:
    shifted = v - np.max(v)
    e = np.exp(shifted)
    return e / e.sum()


def softmax(v):
    """Softmax of a nonempty vector; shift-invariant, sums to one.

    Accepts either a plain array (returns an array) or a graph Tensor
    (returns a Tensor differentiable through its input).
    """
    if isinstance(v, Tensor):
        if v.data.ndim != 1 or v.shape[0] == 0:
            raise ValueError("softmax requires a nonempty vector")
        y = _softmax_values(v.data)
        out = Tensor(y)

        def vjp(g):
            return ((v, y * (g - np.dot(g, y))),)

        return _record(out, (v,), vjp)

    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("softmax requires a nonempty vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("softmax input must be finite")
    return _softmax_values(arr)


def cosine_sim(a, b):
    """Cosine similarity of two equal-length nonzero vectors.

    Plain arrays yield a float; Tensors yield a scalar graph node.  Zero-norm
    inputs are rejected rather than mapped to 0.
    """
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        a, b = as_tensor(a), as_tensor(b)
        av, bv = a.data, b.data
        if av.ndim != 1 or av.shape != bv.shape:
            raise ContractError(f"cosine_sim shape mismatch: {a.shape} vs {b.shape}")
        na = float(np.linalg.norm(av))
        nb = float(np.linalg.norm(bv))
        if na == 0.0 or nb == 0.0:
            raise ValueError("cosine similarity undefined for zero-norm input")
        c = float(np.dot(av, bv) / (na * nb))
        out = Tensor(c)

        def vjp(g):
            ga = g * (bv / (na * nb) - c * av / (na * na))
            gb = g * (av / (na * nb) - c * bv / (nb * nb))
            return ((a, ga), (b, gb))

        return _record(out, (a, b), vjp)

    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.ndim != 1 or av.shape != bv.shape:
        raise ValueError(f"cosine_sim shape mismatch: {av.shape} vs {bv.shape}")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm input")
    return float(np.dot(av, bv) / (na * nb))


def _check_probs(p: np.ndarray, target: int) -> None:
    if p.ndim != 1 or p.size == 0:
        raise ValueError("cross_entropy requires a nonempty probability vector")
    if abs(float(p.sum()) - 1.0) > 1e-6:
        raise ValueError(f"probabilities sum to {p.sum():.9f}, not 1")
    if not 0 <= target < p.size:
        raise IndexError(f"target {target} out of range for {p.size} classes")


def cross_entropy(probs, target: int):
    """Negative log-probability of the target class.

    Probabilities below ``PROB_FLOOR`` are clamped (with a logged warning) so
    the result stays finite; the clamp only guards underflow.
    """
    if isinstance(probs, Tensor):
        _check_probs(probs.data, target)
        p = float(probs.data[target])
        clamped = p < PROB_FLOOR
        if clamped:
            log.warning("cross_entropy: clamping probability %.3e to %.0e", p, PROB_FLOOR)
        safe = max(p, PROB_FLOOR)
        out = Tensor(-np.log(safe))

        def vjp(g):
            gp = np.zeros_like(probs.data)
            if not clamped:  # inside the clamp the loss is locally constant
                gp[target] = -g / safe
            return ((probs, gp),)

        return _record(out, (probs,), vjp)

    arr = np.asarray(probs, dtype=np.float64)
    _check_probs(arr, target)
    p = float(arr[target])
    if p < PROB_FLOOR:
        log.warning("cross_entropy: clamping probability %.3e to %.0e", p, PROB_FLOOR)
    return float(-np.log(max(p, PROB_FLOOR)))


def sum_vector(v: Tensor) -> Tensor:
    out = Tensor(v.data.sum())

    def vjp(g):
        return ((v, np.full_like(v.data, float(g))),)

    return _record(out, (v,), vjp)


def mean_of(parts: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of scalar tensors (batch-loss helper)."""
    return scale(sum_vector(stack(parts)), 1.0 / len(parts))


# -- backward pass ----------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into ``grad`` for every tracked node."""
    if root.data.shape != ():
        raise ContractError("backward requires a scalar root")
    order = _toposort(root)
    for node in order:
        node.grad = None
    root.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        for parent, contrib in node._vjp(node.grad):
            if not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(contrib, dtype=np.float64)
            else:
                parent.grad = parent.grad + contrib


def value_and_grad(loss: Tensor, params: Sequence[Tensor]) -> tuple[float, list[np.ndarray]]:
    """Evaluate a recorded scalar program and return its value and gradients.

    ``params`` must all be gradient-tracked; a parameter that never entered
    the program gets an exact zero gradient.  Frozen tensors are rejected so
    callers cannot silently optimize them.
    """
    params = list(params)
    for p in params:
        if not isinstance(p, Tensor) or not p.requires_grad:
            raise ContractError("value_and_grad requires learnable Tensor parameters")
    if loss.data.shape != ():
        raise ContractError("program output must be scalar")
    for p in params:
        p.grad = None
    backward(loss)
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    return float(loss.data), grads


def finite_diff_grad(fn, params: Sequence[np.ndarray], eps: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient oracle: (fn(p+eps*e) - fn(p-eps*e)) / (2 eps).

    ``fn`` takes the full parameter list and returns a float; it must be pure.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    work = [np.array(p, dtype=np.float64) for p in params]
    grads = []
    for k, p in enumerate(work):
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(fn(work))
            flat[i] = orig - eps
            f_minus = float(fn(work))
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return grads
