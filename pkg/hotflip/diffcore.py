"""Dense reverse-mode differentiation over numpy arrays.

A ``Tape`` records every primitive applied during one forward pass. Calling
``Tape.backward`` on a scalar walks the records in reverse and accumulates
gradients into every tensor that requires them, including the one-hot input
leaves the attacks read from. All arithmetic is 64-bit.
"""

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from hotflip.errors import (
    ContractError,
    DegenerateInputError,
    DimensionError,
    LabelIndexError,
    NonFiniteError,
)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def _check_finite(value: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} produced a non-finite value")


class Tensor:
    """Immutable dense array node.

    ``grad`` is the only mutable attribute; it is filled by ``Tape.backward``.
    """

    __slots__ = ("value", "requires_grad", "grad", "name", "tape")

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        name: str | None = None,
        tape: "Tape | None" = None,
    ):
        array = np.array(value, dtype=np.float64)
        _check_finite(array, name or "tensor")
        array.setflags(write=False)
        self.value = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the values."""
        return self.value.reshape(-1)

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad = self.grad + grad

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of a forward pass (the computation record)."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn]] = []
        self._leaves: list[Tensor] = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._records)

    def leaf(self, value, requires_grad: bool = False, name: str | None = None) -> Tensor:
        """Create an input tensor owned by this tape."""
        if self._consumed:
            raise ContractError("tape has already been consumed by backward()")
        tensor = Tensor(value, requires_grad=requires_grad, name=name, tape=self)
        if requires_grad:
            self._leaves.append(tensor)
        return tensor

    def _emit(
        self,
        value: np.ndarray,
        inputs: tuple[Tensor, ...],
        backward: BackwardFn,
        op: str,
    ) -> Tensor:
        if self._consumed:
            raise ContractError("tape has already been consumed by backward()")
        _check_finite(value, op)
        requires_grad = any(t.requires_grad for t in inputs)
        out = Tensor.__new__(Tensor)
        value = np.asarray(value, dtype=np.float64)
        value.setflags(write=False)
        out.value = value
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out.tape = self
        if requires_grad:
            self._records.append((out, inputs, backward))
        return out

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Accumulate d(loss)/d(tensor) for every tensor requiring gradients.

        Returns the gradients of the named leaves. The tape cannot be reused.
        """
        if self._consumed:
            raise ContractError("tape has already been consumed by backward()")
        if loss.value.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        self._consumed = True

        if not loss.requires_grad:
            return {}

        loss.grad = np.ones_like(loss.value)
        for out, inputs, backward_fn in reversed(self._records):
            if out.grad is None:
                continue
            for tensor, grad in zip(inputs, backward_fn(out.grad)):
                if grad is not None and tensor.requires_grad:
                    tensor._accumulate(grad)
        self._records.clear()

        gradients = {}
        for leaf in self._leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.value)
            if leaf.name is not None:
                gradients[leaf.name] = leaf.grad
        return gradients


def _tape_of(*tensors: Tensor) -> Tape:
    for tensor in tensors:
        if tensor.tape is not None:
            return tensor.tape
    raise ContractError("operation needs at least one tensor created on a tape")


# --- elementwise -----------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias vector over the last axis."""
    if a.shape == b.shape:
        return _tape_of(a, b)._emit(a.value + b.value, (a, b), lambda g: (g, g), "add")
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        width = b.shape[0]
        return _tape_of(a, b)._emit(
            a.value + b.value,
            (a, b),
            lambda g: (g, g.reshape(-1, width).sum(axis=0)),
            "add",
        )
    raise DimensionError(f"add: cannot combine shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _tape_of(a, b)._emit(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    av, bv = a.value, b.value
    return _tape_of(a, b)._emit(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)
    return _tape_of(a)._emit(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _tape_of(a)._emit(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return _tape_of(a)._emit(a.value * mask, (a,), lambda g: (g * mask,), "relu")


# --- linear algebra --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a p x q and a q x r tensor."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return _tape_of(a, b)._emit(
        av @ bv,
        (a, b),
        lambda g: (g @ bv.T, av.T @ g),
        "matmul",
    )


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` for a 2-d ``x``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"affine: cannot multiply {x.shape} by {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"affine: bias shape {bias.shape} does not match {weight.shape}")
    xv, wv = x.value, weight.value
    return _tape_of(x, weight, bias)._emit(
        xv @ wv + bias.value,
        (x, weight, bias),
        lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0)),
        "affine",
    )


def conv1d(x: Tensor, kernels: Tensor, width: int) -> Tensor:
    """Valid temporal convolution.

    ``x`` is (..., time, channels), ``kernels`` is (width, channels, out) and
    the result is (..., time - width + 1, out). Leading axes are independent
    sequences.
    """
    if kernels.ndim != 3 or kernels.shape[0] != width:
        raise DimensionError(f"conv1d: kernels {kernels.shape} do not have width {width}")
    if x.ndim < 2 or x.shape[-1] != kernels.shape[1]:
        raise DimensionError(f"conv1d: input {x.shape} does not match kernels {kernels.shape}")
    time = x.shape[-2]
    if time < width:
        raise DegenerateInputError(f"conv1d: sequence of length {time} is shorter than width {width}")

    xv, kv = x.value, kernels.value
    steps = time - width + 1
    # (..., steps, channels, width)
    windows = np.lib.stride_tricks.sliding_window_view(xv, width, axis=-2)
    out = np.einsum("...tcw,wco->...to", windows, kv)

    def backward(g):
        grad_kernels = np.einsum(
            "ntcw,nto->wco",
            windows.reshape(-1, *windows.shape[-3:]),
            g.reshape(-1, *g.shape[-2:]),
        )
        grad_x = np.zeros_like(xv)
        for k in range(width):
            grad_x[..., k : k + steps, :] += g @ kv[k].T
        return grad_x, grad_kernels

    return _tape_of(x, kernels)._emit(out, (x, kernels), backward, "conv1d")


def max_over_time(x: Tensor) -> Tensor:
    """Max over the time axis (-2); ties go to the lowest time index."""
    if x.ndim < 2:
        raise DimensionError(f"max_over_time: needs (..., time, channels), got {x.shape}")
    xv = x.value
    winners = np.argmax(xv, axis=-2)[..., None, :]
    out = np.take_along_axis(xv, winners, axis=-2)[..., 0, :]

    def backward(g):
        grad = np.zeros_like(xv)
        np.put_along_axis(grad, winners, g[..., None, :], axis=-2)
        return (grad,)

    return _tape_of(x)._emit(out, (x,), backward, "max_over_time")


# --- structural ------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise DegenerateInputError("concat: nothing to concatenate")
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _tape_of(*tensors)._emit(out, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise DegenerateInputError("stack: nothing to stack")
    if len({t.shape for t in tensors}) != 1:
        raise DimensionError("stack: tensors differ in shape")
    out = np.stack([t.value for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _tape_of(*tensors)._emit(out, tensors, backward, "stack")


def reshape(x: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(shape)
    source = x.shape
    try:
        out = x.value.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {exc}") from exc
    return _tape_of(x)._emit(out, (x,), lambda g: (g.reshape(source),), "reshape")


def take(x: Tensor, index: int, axis: int) -> Tensor:
    """Select one index along ``axis``, dropping that axis."""
    source = x.shape
    out = np.take(x.value, index, axis=axis)

    def backward(g):
        grad = np.zeros(source)
        slicer = [slice(None)] * len(source)
        slicer[axis] = index
        grad[tuple(slicer)] = g
        return (grad,)

    return _tape_of(x)._emit(out, (x,), backward, "take")


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of the last axis."""
    source = x.shape
    out = x.value[..., start:stop]

    def backward(g):
        grad = np.zeros(source)
        grad[..., start:stop] = g
        return (grad,)

    return _tape_of(x)._emit(out, (x,), backward, "slice_last")


def pick_steps(x: Tensor, steps: np.ndarray) -> Tensor:
    """Row ``steps[b]`` of every sequence in a (batch, time, features) tensor."""
    steps = np.asarray(steps, dtype=np.int64)
    if x.ndim != 3 or steps.shape != (x.shape[0],):
        raise DimensionError(f"pick_steps: {x.shape} with steps of shape {steps.shape}")
    rows = np.arange(x.shape[0])
    source = x.shape

    def backward(g):
        grad = np.zeros(source)
        grad[rows, steps] = g
        return (grad,)

    return _tape_of(x)._emit(x.value[rows, steps], (x,), backward, "pick_steps")


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Embedding lookup: rows of a 2-d table, result shaped indices.shape + (dim,)."""
    indices = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"gather_rows: table must be 2-d, got {table.shape}")
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise DimensionError("gather_rows: index outside the table")
    source = table.shape

    def backward(g):
        grad = np.zeros(source)
        np.add.at(grad, indices.reshape(-1), g.reshape(-1, source[1]))
        return (grad,)

    return _tape_of(table)._emit(table.value[indices], (table,), backward, "gather_rows")


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a constant."""
    factor = float(factor)
    return _tape_of(x)._emit(x.value * factor, (x,), lambda g: (g * factor,), "scale")


def sum_all(x: Tensor) -> Tensor:
    source = x.shape
    return _tape_of(x)._emit(
        np.array(x.value.sum()),
        (x,),
        lambda g: (np.full(source, float(g)),),
        "sum_all",
    )


# --- loss ------------------------------------------------------------------


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Class probabilities for plain arrays (not recorded)."""
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of -log softmax(logits)[label] over the batch.

    ``logits`` is (classes,) with an integer label, or (batch, classes) with
    one label per row.
    """
    single = logits.ndim == 1
    values = logits.value[None, :] if single else logits.value
    if values.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: logits must be 1-d or 2-d, got {logits.shape}")
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (values.shape[0],):
        raise DimensionError("softmax_cross_entropy: one label per row is required")
    classes = values.shape[1]
    if labels.min() < 0 or labels.max() >= classes:
        raise LabelIndexError(f"label outside [0, {classes})")

    rows = np.arange(values.shape[0])
    log_probs = log_softmax(values)
    loss = -log_probs[rows, labels].mean()

    def backward(g):
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1.0
        grad *= float(g) / values.shape[0]
        return (grad[0] if single else grad,)

    return _tape_of(logits)._emit(np.array(loss), (logits,), backward, "softmax_cross_entropy")
