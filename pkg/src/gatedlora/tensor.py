"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything is stored row-major as numpy float64; there is no other dtype.
Operations are plain module functions. While a `Tape` is active (used as a
context manager) every op whose inputs require gradient records a backward
rule onto it; `backward(loss)` replays the tape in reverse recording order,
which is a valid topological order because ops append in execution order.

With no tape active, ops compute values only, so evaluation code pays no
recording cost and finite-difference probes see a pure function.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DataError, NumericError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "matmul",
    "matvec",
    "transpose",
    "relu",
    "softmax",
    "dropout",
    "tensor_sum",
    "mean",
    "cross_entropy_with_logits",
    "take_row",
    "index",
    "concat",
    "gaussian",
    "uniform",
    "finite_diff_grad",
]


class Tensor:
    """A dense float64 array plus gradient bookkeeping.

    `requires_grad=False` tensors never accumulate gradient; ops propagate
    the flag to their outputs whenever any input carries it and a tape is
    recording.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        # asarray with order="C" keeps 0-d shapes intact (ascontiguousarray
        # would promote them to shape (1,)) while still forcing row-major
        arr = np.asarray(data, dtype=np.float64, order="C")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Small amount of operator sugar; the module functions do the work.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


_BackwardRule = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of operations for one reverse pass.

    Entries hold (output, inputs, backward rule). Replaying them in reverse
    recording order propagates gradients to every requires_grad tensor
    reachable from the loss. A tape is single-threaded and never shared.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], _BackwardRule]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"
        return False

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule: _BackwardRule) -> None:
        self._entries.append((out, inputs, rule))
        out._tape = self

    def backward(self, loss: Tensor) -> None:
        """Populate .grad for every requires_grad tensor reachable from `loss`.

        Seeds the scalar loss with gradient 1.0. Successive calls without
        zeroing add into existing .grad buffers.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for out, inputs, rule in reversed(self._entries):
            out_grad = flowing.get(id(out))
            if out_grad is None:
                continue
            in_grads = rule(out_grad)
            for tensor, grad in zip(inputs, in_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                prev = flowing.get(id(tensor))
                flowing[id(tensor)] = grad if prev is None else prev + grad
                holders[id(tensor)] = tensor
        for key, grad in flowing.items():
            tensor = holders[key]
            if not tensor.requires_grad:
                continue
            if tensor.grad is None:
                tensor.grad = grad.copy()
            else:
                tensor.grad = tensor.grad + grad


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Tensor) -> None:
    """Reverse pass from a scalar loss through the tape that recorded it."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise ContractError("loss is not connected to a recording tape")
    loss._tape.backward(loss)


def _emit(out_data: np.ndarray, inputs: tuple[Tensor, ...], rule: _BackwardRule) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, rule)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add shapes {a.shape} and {b.shape} do not broadcast") from exc
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub shapes {a.shape} and {b.shape} do not broadcast") from exc
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul shapes {a.shape} and {b.shape} do not broadcast") from exc
    ad, bd = a.data, b.data
    return _emit(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (no gradient for the constant)."""
    c = float(c)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a 2-d [m, k] by a 2-d [k, n] tensor."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _emit(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def matvec(m: Tensor, v: Tensor) -> Tensor:
    """Matrix-vector product of [p, q] by [q] giving [p]."""
    if m.data.ndim != 2 or v.data.ndim != 1:
        raise ShapeError(f"matvec needs a matrix and a vector, got {m.shape} and {v.shape}")
    if m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec dimensions disagree: {m.shape} by {v.shape}")
    md, vd = m.data, v.data
    return _emit(md @ vd, (m, v), lambda g: (np.outer(g, vd), md.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d tensor, got {a.shape}")
    return _emit(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def softmax(v: Tensor) -> Tensor:
    """Stable softmax of a 1-d tensor: exp(v - max) normalized to sum 1."""
    if v.data.ndim != 1 or v.data.size < 1:
        raise ShapeError(f"softmax needs a non-empty 1-d tensor, got {v.shape}")
    if not np.all(np.isfinite(v.data)):
        raise NumericError("softmax input contains NaN or Inf")
    shifted = v.data - v.data.max()
    e = np.exp(shifted)
    s = e / e.sum()

    def rule(g: np.ndarray):
        # Jacobian applied to g: s * (g - <g, s>)
        return (s * (g - float(g @ s)),)

    return _emit(s, (v,), rule)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: zero with probability `rate`, scale survivors by 1/(1-rate).

    Eval mode (and rate 0) is exactly the identity and consumes no randomness.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs a seeded generator")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) >= rate) / keep
    return _emit(x.data * mask, (x,), lambda g: (g * mask,))


def tensor_sum(a: Tensor) -> Tensor:
    """Sum all elements to a scalar."""
    shape = a.shape
    return _emit(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).astype(np.float64),))


def mean(a: Tensor) -> Tensor:
    """Mean of all elements, as a scalar."""
    shape = a.shape
    n = a.data.size
    return _emit(np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, shape).astype(np.float64),))


def cross_entropy_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy between rows of [batch, classes] logits and integer labels.

    Computed through a max-shifted log-sum-exp so large logits stay finite.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross entropy needs [batch, classes] logits, got {logits.shape}")
    labels = np.asarray(labels)
    batch, n_classes = logits.shape
    if labels.shape != (batch,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {batch}")
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= n_classes:
        raise DataError(f"label out of range for {n_classes}-way logits: {labels}")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    lse = m[:, 0] + np.log(np.exp(shifted).sum(axis=1))
    picked = z[np.arange(batch), labels]
    loss = np.asarray((lse - picked).mean())
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)

    def rule(g: np.ndarray):
        d = probs.copy()
        d[np.arange(batch), labels] -= 1.0
        return (d * (float(g) / batch),)

    return _emit(loss, (logits,), rule)


def take_row(m: Tensor, i: int) -> Tensor:
    """Row `i` of a 2-d tensor as a 1-d tensor (embedding lookup).

    The backward rule scatters into row `i` only, so unlooked-up rows of an
    embedding table receive zero gradient.
    """
    if m.data.ndim != 2:
        raise ShapeError(f"take_row needs a 2-d tensor, got {m.shape}")
    if not 0 <= i < m.shape[0]:
        raise IndexError(f"row {i} out of range for shape {m.shape}")
    shape = m.shape

    def rule(g: np.ndarray):
        out = np.zeros(shape)
        out[i] = g
        return (out,)

    return _emit(m.data[i].copy(), (m,), rule)


def index(v: Tensor, i: int) -> Tensor:
    """Element `i` of a 1-d tensor as a scalar tensor."""
    if v.data.ndim != 1:
        raise ShapeError(f"index needs a 1-d tensor, got {v.shape}")
    if not 0 <= i < v.shape[0]:
        raise IndexError(f"index {i} out of range for shape {v.shape}")
    shape = v.shape

    def rule(g: np.ndarray):
        out = np.zeros(shape)
        out[i] = g
        return (out,)

    return _emit(np.asarray(v.data[i]), (v,), rule)


def concat(u: Tensor, v: Tensor) -> Tensor:
    """Concatenate two 1-d tensors."""
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise ShapeError(f"concat needs 1-d tensors, got {u.shape} and {v.shape}")
    cut = u.shape[0]
    return _emit(np.concatenate([u.data, v.data]), (u, v), lambda g: (g[:cut], g[cut:]))


def gaussian(
    rng: np.random.Generator,
    shape: tuple[int, ...],
    std: float = 1.0,
    requires_grad: bool = True,
) -> Tensor:
    """Seeded N(0, std^2) initialization."""
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=requires_grad)


def uniform(
    rng: np.random.Generator,
    shape: tuple[int, ...],
    low: float = 0.0,
    high: float = 1.0,
    requires_grad: bool = True,
) -> Tensor:
    """Seeded U[low, high) initialization."""
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=requires_grad)


def finite_diff_grad(f, x: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at `x`.

    `f` must be pure and deterministic over repeated calls (dropout off or
    re-seeded per evaluation). Perturbs one coordinate at a time:
    (f(x + h e_i) - f(x - h e_i)) / (2h).
    """
    flat = x.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(f(x))
        flat[i] = orig - step
        f_minus = float(f(x))
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad.reshape(x.shape)
