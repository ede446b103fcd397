"""Dense float64 tensors with tape-based reverse-mode differentiation.

The engine is deliberately small. Only the primitives the models in this
package actually use are provided, each with a hand-written backward rule,
so every rule stays auditable against the finite-difference oracle in
:func:`finite_diff_grad`. Everything is 64-bit; the only broadcast allowed
anywhere is the bias add over the node axis (:func:`add_bias`). All other
shape coercion is an error.

Tracking is explicit: operations record onto the innermost active
:class:`Tape` (a context manager) whenever at least one operand has
``requires_grad`` set. A tape together with its tensors is a
single-threaded unit of work; the active-tape stack is thread local, so
distinct tapes may run on separate threads.
"""

from __future__ import annotations

import threading
import warnings
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError

Array = np.ndarray


def _as_array(values) -> Array:
    return np.ascontiguousarray(np.asarray(values, dtype=np.float64))


class Tensor:
    """A dense float64 array with an optional additive gradient buffer.

    ``grad`` starts as None and is only written by :func:`backward`;
    repeated backward passes accumulate (two passes without a reset double
    the buffer). ``requires_grad`` marks leaves whose gradient is wanted
    and propagates through operations.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, values, requires_grad: bool = False):
        self.data: Array = _as_array(values)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = None
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    # Operator sugar; scalars are only accepted where the scale rule applies.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return hadamard(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return hadamard(other, self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(values) -> Tensor:
    return values if isinstance(values, Tensor) else Tensor(values)


# ---------------------------------------------------------------------------
# Tape

class _Record:
    __slots__ = ("op", "out", "inputs", "vjp")

    def __init__(self, op: str, out: Tensor, inputs: tuple, vjp: Callable):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of tracked primitive operations.

    Record order is execution order, hence a topological order of the
    computation; replaying it backward visits each op exactly once in
    reverse topological order. A tape is for one unit of work; make a new
    one per training step.
    """

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _tape_stack().pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted: exited a tape that is not innermost")
        return False

    def __len__(self) -> int:
        return len(self._records)


def _track(op: str, out: Tensor, inputs: tuple, vjp: Callable) -> Tensor:
    tape = active_tape()
    if tape is not None and out.requires_grad:
        out._tape = tape
        tape._records.append(_Record(op, out, inputs, vjp))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tracked ancestor of a scalar loss.

    Gradients accumulate additively into existing buffers. A loss that was
    never recorded on a tape (built outside any tape, or from untracked
    operands only) produces a warning and writes nothing.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        warnings.warn("backward() called on a loss detached from any tape; no gradients written",
                      stacklevel=2)
        return
    adjoints: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for rec in reversed(tape._records):
        g = adjoints.get(id(rec.out))
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in adjoints:
                adjoints[key] = adjoints[key] + gi
            else:
                adjoints[key] = gi
                holders[key] = inp
    for key, t in holders.items():
        g = adjoints[key]
        t.grad = g.copy() if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# Primitives

def matmul(a, b) -> Tensor:
    """Matrix product of two 2-d tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul needs (m,k) @ (k,n), got {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)
    ad, bd, na, nb = a.data, b.data, a.requires_grad, b.requires_grad

    def vjp(g: Array):
        return (g @ bd.T if na else None, ad.T @ g if nb else None)

    return _track("matmul", out, (a, b), vjp)


def _binary(op: str, a, b) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"{op} needs equal shapes, got {a.shape} and {b.shape}")
    return a, b


def add(a, b) -> Tensor:
    a, b = _binary("add", a, b)
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)
    return _track("add", out, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _binary("sub", a, b)
    out = Tensor(a.data - b.data, requires_grad=a.requires_grad or b.requires_grad)
    return _track("sub", out, (a, b), lambda g: (g, -g))


def hadamard(a, b) -> Tensor:
    a, b = _binary("hadamard", a, b)
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad)
    ad, bd = a.data, b.data
    return _track("hadamard", out, (a, b), lambda g: (g * bd, g * ad))


def _sigmoid_values(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid_values(a.data)
    out = Tensor(s, requires_grad=a.requires_grad)
    return _track("sigmoid", out, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    out = Tensor(t, requires_grad=a.requires_grad)
    return _track("tanh", out, (a,), lambda g: (g * (1.0 - t * t),))


_ELEMENTWISE: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "hadamard": hadamard,
    "sigmoid": sigmoid,
    "tanh": tanh,
}

_UNARY = frozenset({"sigmoid", "tanh"})


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name over the pointwise op set {add, sub, hadamard, sigmoid, tanh}."""
    fn = _ELEMENTWISE.get(op)
    if fn is None:
        raise ContractError(f"unknown elementwise op {op!r}; valid: {sorted(_ELEMENTWISE)}")
    if op in _UNARY:
        if b is not None:
            raise ContractError(f"{op} is unary, second operand given")
        return fn(a)
    if b is None:
        raise ContractError(f"{op} is binary, second operand missing")
    return fn(a, b)


def add_bias(x, b) -> Tensor:
    """Add a length-K bias to every row of an n-by-K tensor.

    The one sanctioned broadcast: a per-channel, node-shared bias.
    """
    x, b = as_tensor(x), as_tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias needs (n,k) and (k,), got {x.shape} and {b.shape}")
    out = Tensor(x.data + b.data, requires_grad=x.requires_grad or b.requires_grad)
    return _track("add_bias", out, (x, b), lambda g: (g, g.sum(axis=0)))


def sum_all(a) -> Tensor:
    """Sum of all entries, as a single-element tensor."""
    a = as_tensor(a)
    out = Tensor(a.data.sum(), requires_grad=a.requires_grad)
    shape = a.shape
    return _track("sum_all", out, (a,),
                  lambda g: (np.full(shape, g.reshape(-1)[0]),))


def scale(a, c: float) -> Tensor:
    """Multiply by a plain python constant (not differentiated through)."""
    a = as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c, requires_grad=a.requires_grad)
    return _track("scale", out, (a,), lambda g: (g * c,))


def concat_cols(parts: Sequence) -> Tensor:
    """Concatenate 2-d tensors with equal row counts along the column axis."""
    ts = [as_tensor(p) for p in parts]
    if not ts:
        raise ContractError("concat_cols needs at least one operand")
    rows = ts[0].shape[0]
    for t in ts:
        if t.data.ndim != 2 or t.shape[0] != rows:
            raise DimensionError(
                f"concat_cols needs matching row counts, got {[t.shape for t in ts]}")
    out = Tensor(np.concatenate([t.data for t in ts], axis=1),
                 requires_grad=any(t.requires_grad for t in ts))
    splits = np.cumsum([t.shape[1] for t in ts])[:-1]

    def vjp(g: Array):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=1))

    return _track("concat_cols", out, tuple(ts), vjp)


def row_norms(a) -> Tensor:
    """Euclidean norm of each row of a 2-d tensor.

    The backward rule uses the zero subgradient at all-zero rows, so a loss
    at exact coincidence yields zero gradient rather than NaN.
    """
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"row_norms needs a 2-d tensor, got shape {a.shape}")
    norms = np.sqrt(np.sum(a.data * a.data, axis=1))
    out = Tensor(norms, requires_grad=a.requires_grad)
    ad = a.data
    safe = np.where(norms > 0.0, norms, 1.0)

    def vjp(g: Array):
        return ((g / safe)[:, None] * ad,)

    return _track("row_norms", out, (a,), vjp)


# ---------------------------------------------------------------------------
# Finite-difference oracle

def finite_diff_grad(f: Callable[[], float], params: Sequence[Tensor], eps: float) -> list[Array]:
    """Central-difference gradient of a scalar function per parameter entry.

    ``f`` takes no arguments and must re-evaluate the quantity of interest
    from the current contents of ``params``; entries are perturbed in place
    by ±eps and restored. Deliberately independent of the tape machinery.
    """
    if eps <= 0:
        raise ContractError(f"finite_diff_grad needs eps > 0, got {eps}")
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f())
            flat[i] = orig - eps
            f_minus = float(f())
            flat[i] = orig
            gf[i] = (f_plus - f_minus) / (2.0 * eps)
        grads.append(g)
    return grads
