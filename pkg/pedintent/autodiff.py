"""\
.. currentmodule:: pedintent.autodiff

A minimal reverse-mode differentiation engine over numpy arrays. It provides
the differentiable operations the intention network needs and nothing more:
no GPU, no operator fusion, no higher-order derivatives.

Every value is a :class:`Tensor` holding a double precision array. Operations
create new tensors remembering their inputs and a backward closure. Tensors
are numbered at creation, so sorting the tensors reachable from a loss by
number gives a topological order: that sorted list is the
:class:`ComputationRecord` walked backward by :func:`backward`.

.. code:: python

    from pedintent.autodiff import Tensor, backward, matmul, sigmoid, bce_loss

    w = Tensor([[0.5], [-0.25]], requires_grad=True)
    x = Tensor([[1.0, 2.0]])
    loss = bce_loss(sigmoid(matmul(x, w)), [1])
    backward(loss)
    w.grad

A record and its tensors belong to one thread. Parameter arrays are never
mutated by operations and may be shared read-only between threads.


API Reference
-------------

.. autoclass:: Tensor
.. autoclass:: ComputationRecord
.. autofunction:: backward
.. autofunction:: matmul
.. autofunction:: sigmoid
.. autofunction:: relu
.. autofunction:: tanh
.. autofunction:: conv1d_time
.. autofunction:: conv2d
.. autofunction:: mean_pool2d
.. autofunction:: lstm_cell
.. autofunction:: bce_loss
.. autofunction:: gradcheck
.. autofunction:: numerical_gradient
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Iterable, Iterator, Sequence
from typing import Any, NamedTuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import LabelError, ParameterError, ShapeError

Array = np.ndarray
ArrayLike = Union["Tensor", Array, float, Sequence[Any]]
Backward = Callable[[Array], Sequence[Union[Array, None]]]

BCE_EPSILON = 1e-7

_ids = itertools.count()


class Tensor:
    """n-dimensional double precision array with an optional gradient slot.

    .. attribute:: value

        The numpy array, always ``float64``.

    .. attribute:: grad

        Accumulated gradient after :func:`backward`, same shape as
        :attr:`value`, or ``None``.

    .. attribute:: node_id

        Creation number, used to order the computation record.
    """

    __slots__ = (
        "value",
        "grad",
        "node_id",
        "op",
        "parents",
        "requires_grad",
        "name",
        "_backward",
    )

    def __init__(
        self,
        value: Any,
        *,
        requires_grad: bool = False,
        name: str | None = None,
    ) -> None:
        self.value: Array = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self.node_id = next(_ids)
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self.requires_grad = requires_grad
        self.name = name
        self._backward: Backward | None = None

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<{self.__class__.__name__}{label} {self.op} shape={self.shape}>"

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def __add__(self, other: ArrayLike) -> Tensor:
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> Tensor:
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: ArrayLike) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> Tensor:
        return mul(other, self)

    def __matmul__(self, other: ArrayLike) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, key: Any) -> Tensor:
        return index(self, key)


def as_tensor(value: ArrayLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _make(value: Array, op: str, parents: Sequence[Tensor], fn: Backward) -> Tensor:
    out = Tensor(value)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = fn
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    # Sum grad over the axes numpy broadcast to reach its shape.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class OpNode(NamedTuple):
    op: str
    inputs: tuple[int, ...]
    output: int


class ComputationRecord:
    """Topologically ordered operations leading to ``output``.

    Only tensors requiring a gradient are recorded. Every input precedes its
    consumer.
    """

    def __init__(self, output: Tensor) -> None:
        seen: dict[int, Tensor] = {}
        stack = [output]
        while stack:
            t = stack.pop()
            if t.node_id in seen or not t.requires_grad:
                continue
            seen[t.node_id] = t
            stack.extend(t.parents)
        self.output = output
        self.tensors = [seen[k] for k in sorted(seen)]

    def __len__(self) -> int:
        return len(self.tensors)

    def __iter__(self) -> Iterator[OpNode]:
        for t in self.tensors:
            if not t.is_leaf:
                inputs = tuple(p.node_id for p in t.parents if p.requires_grad)
                yield OpNode(t.op, inputs, t.node_id)

    @property
    def leaves(self) -> list[Tensor]:
        return [t for t in self.tensors if t.is_leaf]


def backward(
    loss: Tensor, wrt: Iterable[Tensor] | None = None
) -> dict[int, Array]:
    """Back-propagate from scalar ``loss`` with seed gradient 1.

    Leaf tensors requiring a gradient get their :attr:`Tensor.grad`
    accumulated. Returns a map from node id to gradient for every leaf of the
    record, plus a zero gradient for each tensor of ``wrt`` the loss does not
    reach.

    :raises ShapeError: if ``loss`` is not a scalar.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    record = ComputationRecord(loss)
    pending: dict[int, Array] = {loss.node_id: np.ones_like(loss.value)}
    gradients: dict[int, Array] = {}
    for t in reversed(record.tensors):
        g = pending.pop(t.node_id, None)
        if g is None:
            continue
        if t._backward is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            gradients[t.node_id] = g
            continue
        for parent, pg in zip(t.parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node_id in pending:
                pending[parent.node_id] = pending[parent.node_id] + pg
            else:
                pending[parent.node_id] = pg
    for t in wrt or ():
        gradients.setdefault(t.node_id, np.zeros_like(t.value))
    return gradients


# Elementwise and structural operations.


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value + b.value,
        "add",
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value - b.value,
        "sub",
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value * b.value,
        "mul",
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape),
        ),
    )


def square(a: Tensor) -> Tensor:
    return _make(a.value * a.value, "square", (a,), lambda g: (2.0 * a.value * g,))


def absolute(a: Tensor) -> Tensor:
    """Elementwise ``|a|``; the subgradient at 0 is 0."""
    return _make(np.abs(a.value), "abs", (a,), lambda g: (np.sign(a.value) * g,))


def total(a: Tensor) -> Tensor:
    """Sum of every element, as a scalar tensor."""
    return _make(
        np.asarray(a.value.sum()),
        "sum",
        (a,),
        lambda g: (np.broadcast_to(g, a.shape).copy(),),
    )


def mean(a: Tensor) -> Tensor:
    n = a.value.size
    return _make(
        np.asarray(a.value.sum() / n),
        "mean",
        (a,),
        lambda g: (np.broadcast_to(g / n, a.shape).copy(),),
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return _make(
        a.value.reshape(shape), "reshape", (a,), lambda g: (g.reshape(a.shape),)
    )


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = np.argsort(axes)
    return _make(
        np.transpose(a.value, axes),
        "transpose",
        (a,),
        lambda g: (np.transpose(g, inverse),),
    )


def _is_basic(key: Any) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(
        p is Ellipsis or p is None or isinstance(p, (int, np.integer, slice))
        for p in parts
    )


def index(a: Tensor, key: Any) -> Tensor:
    """``a[key]``; array keys may repeat entries."""
    basic = _is_basic(key)

    def fn(g: Array) -> tuple[Array]:
        full = np.zeros_like(a.value)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _make(np.asarray(a.value[key]), "index", (a,), fn)


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    sizes = [p.value.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([p.value for p in parts], axis=axis),
        "concat",
        parts,
        lambda g: np.split(g, bounds, axis=axis),
    )


def gather(table: Tensor, idx: Array) -> Tensor:
    """Rows of 2-D ``table`` picked by integer array ``idx``.

    Index ``-1`` yields a zero row.
    """
    idx = np.asarray(idx, dtype=np.intp)
    rows, width = table.shape
    padded = np.concatenate([table.value, np.zeros((1, width))])
    safe = np.where(idx < 0, rows, idx)

    def fn(g: Array) -> tuple[Array]:
        full = np.zeros((rows + 1, width))
        np.add.at(full, safe, g)
        return (full[:rows],)

    return _make(padded[safe], "gather", (table,), fn)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product ``a @ b``.

    ``a`` is ``[..., m, k]``; ``b`` is either ``[k, n]`` or shares the
    leading dimensions of ``a``.

    >>> matmul([[1.0, 2.0]], [[3.0], [4.0]]).value.tolist()
    [[11.0]]

    :raises ShapeError: naming both shapes when dimensions disagree.
    """
    a, b = as_tensor(a), as_tensor(b)
    if (
        a.value.ndim < 2
        or b.value.ndim < 2
        or a.shape[-1] != b.shape[-2]
        or (b.value.ndim > 2 and b.shape[:-2] != a.shape[:-2])
    ):
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")

    def fn(g: Array) -> tuple[Array, Array]:
        da = g @ np.swapaxes(b.value, -1, -2)
        if b.value.ndim == 2:
            k, n = b.shape
            db = a.value.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            db = np.swapaxes(a.value, -1, -2) @ g
        return da, db

    return _make(a.value @ b.value, "matmul", (a, b), fn)


def sigmoid(x: ArrayLike) -> Tensor:
    """Elementwise logistic function, computed without overflow."""
    x = as_tensor(x)
    z = np.exp(-np.abs(x.value))
    s = np.where(x.value >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _make(s, "sigmoid", (x,), lambda g: (g * s * (1.0 - s),))


def relu(x: ArrayLike) -> Tensor:
    """Elementwise ``max(0, x)``; the subgradient at 0 is 0."""
    x = as_tensor(x)
    positive = x.value > 0
    return _make(
        np.where(positive, x.value, 0.0), "relu", (x,), lambda g: (g * positive,)
    )


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.value)
    return _make(t, "tanh", (x,), lambda g: (g * (1.0 - t * t),))


# Convolutions.


def conv1d_time(x: ArrayLike, weights: ArrayLike, k: int) -> Tensor:
    """Causal convolution along the last (time) axis.

    ``x`` is ``[..., C, T]``, ``weights`` is ``[k, C_out, C]``. The input is
    left padded with ``k - 1`` zero frames so that the output keeps ``T``
    frames and frame ``t`` only sees frames ``t - k + 1`` to ``t``::

        y[:, t] = sum(W[tau] @ x[:, t - tau] for tau in range(k))

    >>> conv1d_time([[1.0, 2.0, 3.0]], [[[1.0]], [[1.0]]], k=2).value.tolist()
    [[1.0, 3.0, 5.0]]

    :raises ParameterError: if ``k`` is not positive.
    """
    if k <= 0:
        raise ParameterError(f"kernel size must be positive, got {k}")
    x, weights = as_tensor(x), as_tensor(weights)
    w = weights.value
    if x.value.ndim < 2 or w.ndim != 3 or w.shape[0] != k or w.shape[2] != x.shape[-2]:
        raise ShapeError(
            f"cannot convolve input {x.shape} with kernel {weights.shape} (k={k})"
        )
    frames = x.shape[-1]
    pad = [(0, 0)] * (x.value.ndim - 1) + [(k - 1, 0)]
    xp = np.pad(x.value, pad)

    def window(tau: int) -> slice:
        return slice(k - 1 - tau, k - 1 - tau + frames)

    y = np.zeros(x.shape[:-2] + (w.shape[1], frames))
    for tau in range(k):
        y += np.einsum("oc,...ct->...ot", w[tau], xp[..., window(tau)])

    def fn(g: Array) -> tuple[Array, Array]:
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w)
        # Leading axes flattened into one batch axis.
        gb = g.reshape(-1, w.shape[1], frames)
        for tau in range(k):
            xb = xp[..., window(tau)].reshape(-1, w.shape[2], frames)
            dw[tau] = np.einsum("bot,bct->oc", gb, xb)
            dxp[..., window(tau)] += np.einsum("oc,...ot->...ct", w[tau], g)
        return dxp[..., k - 1 :], dw

    return _make(y, "conv1d_time", (x, weights), fn)


def conv2d(x: ArrayLike, weights: ArrayLike) -> Tensor:
    """Valid 2-D cross-correlation.

    ``x`` is ``[B, C_in, H, W]``, ``weights`` is ``[C_out, C_in, kh, kw]``;
    the output is ``[B, C_out, H - kh + 1, W - kw + 1]``.
    """
    x, weights = as_tensor(x), as_tensor(weights)
    w = weights.value
    if x.value.ndim != 4 or w.ndim != 4 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"cannot convolve input {x.shape} with kernel {weights.shape}")
    kh, kw = w.shape[2:]
    cols = sliding_window_view(x.value, (kh, kw), axis=(2, 3))
    y = np.einsum("bchwij,ocij->bohw", cols, w, optimize=True)
    height, width = y.shape[2:]

    def fn(g: Array) -> tuple[Array, Array]:
        dw = np.einsum("bchwij,bohw->ocij", cols, g, optimize=True)
        dx = np.zeros_like(x.value)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i : i + height, j : j + width] += np.einsum(
                    "bohw,oc->bchw", g, w[:, :, i, j]
                )
        return dx, dw

    return _make(y, "conv2d", (x, weights), fn)


def mean_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping mean pooling over the last two axes.

    Trailing rows and columns not filling a whole window are dropped.
    """
    *lead, height, width = x.shape
    oh, ow = height // size, width // size
    cropped = x.value[..., : oh * size, : ow * size]
    blocks = cropped.reshape(*lead, oh, size, ow, size)
    y = blocks.mean(axis=(-3, -1))

    def fn(g: Array) -> tuple[Array]:
        spread = np.repeat(np.repeat(g, size, axis=-2), size, axis=-1)
        full = np.zeros_like(x.value)
        full[..., : oh * size, : ow * size] = spread / (size * size)
        return (full,)

    return _make(y, "mean_pool2d", (x,), fn)


# Recurrent cell and losses.


def lstm_cell(
    x: ArrayLike,
    h_prev: ArrayLike,
    c_prev: ArrayLike,
    weight: ArrayLike,
    bias: ArrayLike,
) -> tuple[Tensor, Tensor]:
    """One step of a standard LSTM cell.

    ``weight`` is ``[d_in + d_h, 4 d_h]`` and ``bias`` is ``[4 d_h]``, gate
    blocks ordered input, forget, candidate, output::

        i, f, o = sigmoid([x; h] @ W + b)
        g = tanh([x; h] @ W_g + b_g)
        c = f * c_prev + i * g
        h = o * tanh(c)

    Leading batch dimensions of ``x``, ``h_prev`` and ``c_prev`` are
    preserved.
    """
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    weight, bias = as_tensor(weight), as_tensor(bias)
    d_h = h_prev.shape[-1]
    if (
        c_prev.shape != h_prev.shape
        or weight.shape != (x.shape[-1] + d_h, 4 * d_h)
        or bias.shape != (4 * d_h,)
    ):
        raise ShapeError(
            f"LSTM cell with input {x.shape}, state {h_prev.shape}/{c_prev.shape}"
            f" does not match weight {weight.shape} and bias {bias.shape}"
        )
    xh = concat([x, h_prev], axis=-1)
    if xh.value.ndim == 1:
        z = reshape(add(matmul(reshape(xh, (1, -1)), weight), bias), (4 * d_h,))
    else:
        z = add(matmul(xh, weight), bias)
    i = sigmoid(index(z, (..., slice(0, d_h))))
    f = sigmoid(index(z, (..., slice(d_h, 2 * d_h))))
    g = tanh(index(z, (..., slice(2 * d_h, 3 * d_h))))
    o = sigmoid(index(z, (..., slice(3 * d_h, 4 * d_h))))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def bce_loss(y_hat: ArrayLike, y: ArrayLike) -> Tensor:
    """Mean binary cross-entropy of probabilities ``y_hat`` against labels.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]``; the gradient is
    ``(p - y) / (p (1 - p))`` evaluated at the clamped value ``p``.

    >>> round(float(bce_loss([0.25], [1]).value), 6)
    1.386294

    :raises LabelError: if a label is not 0 or 1.
    """
    y_hat = as_tensor(y_hat)
    labels = np.asarray(y, dtype=np.float64)
    if labels.shape != y_hat.shape and labels.size != y_hat.value.size:
        raise ShapeError(f"labels {labels.shape} do not match {y_hat.shape}")
    labels = labels.reshape(y_hat.shape)
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise LabelError(f"labels must be 0 or 1, got {np.unique(labels).tolist()}")
    p = np.clip(y_hat.value, BCE_EPSILON, 1.0 - BCE_EPSILON)
    n = max(p.size, 1)
    losses = -(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))
    return _make(
        np.asarray(losses.sum() / n),
        "bce",
        (y_hat,),
        lambda g: (g * (p - labels) / (p * (1.0 - p)) / n,),
    )


def mse_loss(prediction: Tensor, target: ArrayLike) -> Tensor:
    return mean(square(sub(prediction, target)))


# Finite differences.


def numerical_gradient(
    f: Callable[[], float],
    x: Array,
    h: float = 1e-6,
    indices: Iterable[tuple[int, ...]] | None = None,
) -> Array:
    """Central difference gradient of ``f()`` with respect to array ``x``.

    ``x`` is perturbed in place and restored. Entries outside ``indices``
    are left at zero.
    """
    grad = np.zeros_like(x)
    for i in indices if indices is not None else np.ndindex(x.shape):
        saved = x[i]
        x[i] = saved + h
        plus = f()
        x[i] = saved - h
        minus = f()
        x[i] = saved
        grad[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: Array, numeric: Array, floor: float = 1e-3) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / scale))


def gradcheck(
    f: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-6,
    samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Maximum relative error between analytic and numerical gradients.

    ``f`` maps ``inputs`` to a scalar tensor. With ``samples``, only that
    many randomly chosen entries of each input are checked.
    """
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    backward(f(inputs), wrt=inputs)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.value)
        picked: list[tuple[int, ...]] | None = None
        if samples is not None and t.value.size > samples:
            flat = rng.choice(t.value.size, size=samples, replace=False)
            picked = [np.unravel_index(i, t.shape) for i in flat]
        numeric = numerical_gradient(
            lambda: float(f(inputs).value), t.value, h=h, indices=picked
        )
        if picked is not None:
            rows = tuple(np.array(p) for p in zip(*picked))
            worst = max(worst, relative_error(analytic[rows], numeric[rows]))
        else:
            worst = max(worst, relative_error(analytic, numeric))
    return worst
