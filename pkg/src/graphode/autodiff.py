"""Dense float64 tensors with tape-based reverse-mode differentiation.

The engine is deliberately small: it provides exactly the primitives needed
to unroll an attention-weighted graph network through an explicit
Runge-Kutta integrator and differentiate the result with respect to the
network parameters.  All arithmetic is float64; forward results are checked
for NaN/Inf so divergence surfaces as an error instead of propagating.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataIOError, NumericError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "ParamSet",
    "constant",
    "tensor",
    "linear_forward",
    "leaky_relu",
    "elementwise",
    "add",
    "sub",
    "hadamard",
    "scale",
    "gather",
    "segment_reduce",
    "concat",
    "sum_all",
    "mean_all",
]

_STATE = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_STATE, "tape", None)


class Tensor:
    """A dense float64 array plus a gradient slot.

    Tensors are value-like: operations never mutate their inputs.  A tensor
    created with ``requires_grad=False`` is a constant and never receives a
    gradient.  Tensors not attached to an active tape are plain values and
    are safe to share across threads.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = True):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return hadamard(self, other)
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def tensor(data) -> Tensor:
    return Tensor(data)


def constant(data) -> Tensor:
    """A tensor that never receives a gradient (inputs, targets, masks)."""
    return Tensor(data, requires_grad=False)


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Recording order is a topological order of the computation, so the
    backward sweep simply walks the records in reverse.  A tape is a
    single-threaded recording context; independent tapes may run in
    parallel threads.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("another tape is already active in this thread")
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _STATE.tape = None
        return False

    @property
    def n_records(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> None:
        if self._consumed:
            raise RuntimeError("tape already consumed by backward()")
        self._records.append((out, inputs, backward_fn))

    def backward(self, loss: Tensor, params: "ParamSet | None" = None):
        """Reverse-accumulate d(loss)/d(input) for everything on the tape.

        ``loss`` must be a finite scalar.  The tape is consumed: its records
        are dropped and a second call raises.  When ``params`` is given,
        returns a dict mapping parameter names to gradient arrays (zeros for
        parameters the loss does not depend on).
        """
        if self._consumed:
            raise RuntimeError("tape already consumed by backward()")
        if loss.data.shape != ():
            raise ShapeError(f"loss must be a scalar, got shape {loss.data.shape}")
        if not np.isfinite(loss.data):
            raise NumericError("loss is not finite")
        self._consumed = True
        records = self._records
        self._records = []
        for out, inputs, _ in records:
            out.grad = None
            for t in inputs:
                t.grad = None
        loss.grad = np.ones((), dtype=np.float64)
        for out, inputs, backward_fn in reversed(records):
            g = out.grad
            if g is None or not out.requires_grad:
                continue
            for t, contrib in zip(inputs, backward_fn(g)):
                if contrib is None or not t.requires_grad:
                    continue
                t.grad = contrib if t.grad is None else t.grad + contrib
        if params is not None:
            return {
                name: (np.zeros_like(p.data) if p.grad is None else p.grad)
                for name, p in params.items()
            }
        return None


def _emit(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: Callable,
          op: str, check: bool = True) -> Tensor:
    if check and not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite values produced by {op}")
    tape = _active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs_grad)
    if needs_grad:
        tape.record(out, inputs, backward_fn)
    return out


def linear_forward(W: Tensor, b: Tensor | None, x: Tensor) -> Tensor:
    """Affine map ``x @ W.T + b`` applied over the trailing feature axis.

    ``x`` may carry any number of leading batch axes; ``b`` may be None for
    a purely linear map.
    """
    if W.data.ndim != 2:
        raise ShapeError(f"weight must be a matrix, got shape {W.data.shape}")
    if x.data.ndim < 1 or x.data.shape[-1] != W.data.shape[1]:
        raise ShapeError(
            f"input of shape {x.data.shape} does not match weight of shape {W.data.shape}"
        )
    out_data = x.data @ W.data.T
    if b is not None:
        if b.data.shape != (W.data.shape[0],):
            raise ShapeError(
                f"bias of shape {b.data.shape} does not match output width {W.data.shape[0]}"
            )
        out_data = out_data + b.data
    W_data, x_data = W.data, x.data

    if b is None:
        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            x2 = x_data.reshape(-1, x_data.shape[-1])
            return g2.T @ x2, g @ W_data

        return _emit(out_data, (W, x), backward, "linear_forward")

    def backward_with_bias(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x_data.reshape(-1, x_data.shape[-1])
        return g2.T @ x2, g2.sum(axis=0), g @ W_data

    return _emit(out_data, (W, b, x), backward_with_bias, "linear_forward")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """Elementwise ``max(x, slope * x)``; the derivative at exactly 0 is ``slope``."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    x_data = x.data
    out_data = np.where(x_data >= 0.0, x_data, slope * x_data)

    def backward(g):
        return (g * np.where(x_data > 0.0, 1.0, slope),)

    return _emit(out_data, (x,), backward, "leaky_relu")


def _check_pair(a: Tensor, b: Tensor) -> None:
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        return
    # the only broadcast allowed: one operand missing leading batch axes
    if len(sa) < len(sb) and sa == sb[len(sb) - len(sa):]:
        return
    if len(sb) < len(sa) and sb == sa[len(sa) - len(sb):]:
        return
    raise ShapeError(f"operand shapes {sa} and {sb} do not align")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=tuple(range(g.ndim - len(shape))))


def elementwise(a: Tensor, b: Tensor, mode: str) -> Tensor:
    """Binary elementwise operation: ``add``, ``sub``, or ``hadamard``."""
    _check_pair(a, b)
    a_data, b_data = a.data, b.data
    a_shape, b_shape = a_data.shape, b_data.shape
    if mode == "add":
        out_data = a_data + b_data

        def backward(g):
            return _reduce_to(g, a_shape), _reduce_to(g, b_shape)

    elif mode == "sub":
        out_data = a_data - b_data

        def backward(g):
            return _reduce_to(g, a_shape), _reduce_to(-g, b_shape)

    elif mode == "hadamard":
        out_data = a_data * b_data

        def backward(g):
            return _reduce_to(g * b_data, a_shape), _reduce_to(g * a_data, b_shape)

    else:
        raise ValueError(f"unknown elementwise mode {mode!r}")
    return _emit(out_data, (a, b), backward, f"elementwise:{mode}")


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "sub")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    return elementwise(a, b, "hadamard")


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    out_data = factor * x.data

    def backward(g):
        return (factor * g,)

    return _emit(out_data, (x,), backward, "scale")


def _axis_key(ndim: int, axis: int, idx) -> tuple:
    return (slice(None),) * axis + (idx,)


def _scatter_add(g: np.ndarray, idx: np.ndarray, out_size: int, axis: int) -> np.ndarray:
    """Sum slices of ``g`` into an array of ``out_size`` groups along ``axis``.

    Groups are summed in ascending position order (stable sort), which fixes
    the floating-point accumulation order.
    """
    out_shape = list(g.shape)
    out_shape[axis] = out_size
    buf = np.zeros(tuple(out_shape), dtype=np.float64)
    if idx.size == 0:
        return buf
    if axis == g.ndim - 1 and idx.size <= 32:
        # tiny column maps: a few vectorized column sums beat a sort
        for col in np.unique(idx):
            members = np.flatnonzero(idx == col)
            buf[..., col] = g[..., members].sum(axis=-1)
        return buf
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    gs = np.take(g, order, axis=axis)
    starts = np.flatnonzero(np.concatenate(([True], sorted_idx[1:] != sorted_idx[:-1])))
    sums = np.add.reduceat(gs, starts, axis=axis)
    buf[_axis_key(buf.ndim, axis, sorted_idx[starts])] = sums
    return buf


def _validated_indices(indices, bound: int, what: str) -> np.ndarray:
    idx = np.asarray(indices)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError(f"{what} must be a 1-d integer array")
    if idx.size and (int(idx.min()) < 0 or int(idx.max()) >= bound):
        raise ShapeError(f"{what} out of range for size {bound}")
    return idx


def gather(x: Tensor, indices, axis: int) -> Tensor:
    """Select slices of ``x`` along ``axis``; repeated indices replicate slices."""
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {x.data.shape}")
    ax = axis % x.data.ndim
    n = x.data.shape[ax]
    idx = _validated_indices(indices, n, "gather indices")
    out_data = np.take(x.data, idx, axis=ax)

    def backward(g):
        return (_scatter_add(g, idx, n, ax),)

    return _emit(out_data, (x,), backward, "gather", check=False)


def segment_reduce(messages: Tensor, targets, n_nodes: int, mode: str = "mean") -> Tensor:
    """Aggregate per-edge messages into per-node rows (axis -2 is the edge axis).

    Nodes that receive no message yield zero rows under both modes.  The
    summation order is fixed by ascending edge index.
    """
    if mode not in ("mean", "sum"):
        raise ValueError(f"unknown segment_reduce mode {mode!r}")
    if messages.data.ndim < 2:
        raise ShapeError(f"messages must have an edge and a feature axis, got shape {messages.data.shape}")
    idx = _validated_indices(targets, n_nodes, "target indices")
    if idx.size != messages.data.shape[-2]:
        raise ShapeError(
            f"{idx.size} targets for {messages.data.shape[-2]} messages"
        )
    axis = messages.data.ndim - 2
    out_data = _scatter_add(messages.data, idx, n_nodes, axis)
    if mode == "mean":
        counts = np.bincount(idx, minlength=n_nodes)
        denom = np.maximum(counts, 1).astype(np.float64)
        out_data = out_data / denom[:, None]

        def backward(g):
            return (np.take(g / denom[:, None], idx, axis=axis),)

    else:
        def backward(g):
            return (np.take(g, idx, axis=axis),)

    return _emit(out_data, (messages,), backward, "segment_reduce")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate tensors along ``axis``."""
    if not parts:
        raise ValueError("concat needs at least one tensor")
    datas = [p.data for p in parts]
    ndim = datas[0].ndim
    if any(d.ndim != ndim for d in datas):
        raise ShapeError("concat inputs must share the number of axes")
    ax = axis % ndim
    base = list(datas[0].shape)
    for d in datas[1:]:
        other = list(d.shape)
        if base[:ax] + base[ax + 1:] != other[:ax] + other[ax + 1:]:
            raise ShapeError(f"concat shapes {datas[0].shape} and {d.shape} differ off-axis")
    out_data = np.concatenate(datas, axis=ax)
    stops = np.cumsum([d.shape[ax] for d in datas])[:-1]

    def backward(g):
        return tuple(np.split(g, stops, axis=ax))

    return _emit(out_data, tuple(parts), backward, "concat", check=False)


def sum_all(x: Tensor) -> Tensor:
    """Sum of every entry, as a scalar tensor."""
    x_shape = x.data.shape

    def backward(g):
        return (np.full(x_shape, float(g)),)

    return _emit(np.asarray(x.data.sum()), (x,), backward, "sum_all")


def mean_all(x: Tensor) -> Tensor:
    """Mean of every entry, as a scalar tensor."""
    return scale(sum_all(x), 1.0 / x.size)


class ParamSet:
    """Ordered, uniquely named collection of trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    @property
    def n_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def set_values(self, values: Mapping[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            p.data = np.array(values[name], dtype=np.float64).reshape(p.data.shape)

    def to_blob(self) -> bytes:
        """Little-endian float64 concatenation of all parameters, in declared order."""
        if not self._params:
            return b""
        flat = np.concatenate([p.data.reshape(-1) for p in self._params.values()])
        return flat.astype("<f8").tobytes()

    def load_blob(self, blob: bytes) -> None:
        expected = self.n_values * 8
        if len(blob) != expected:
            raise DataIOError(
                f"parameter blob holds {len(blob)} bytes, expected {expected}"
            )
        flat = np.frombuffer(blob, dtype="<f8")
        pos = 0
        for p in self._params.values():
            k = p.data.size
            p.data = flat[pos:pos + k].astype(np.float64).reshape(p.data.shape)
            pos += k
