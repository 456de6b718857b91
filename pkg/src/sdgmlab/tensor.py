"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Design notes
------------
A single module-level tape may be active at a time (entered with `with
Tape():`).  Operations record a backward closure on the active tape only
when at least one input requires gradients; outside a tape, or on
constant inputs, the same functions are plain numpy forward passes.
That keeps finite-difference probes and evaluation loops cheap.

All tensor payloads are C-contiguous float64 arrays.  There is no
implicit broadcasting: elementwise ops demand identical shapes and the
explicit `broadcast` op stretches a tensor to a target shape.  Integer
data (token ids) never lives in a Tensor; it is passed alongside as
plain numpy arrays.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class DomainError(ValueError):
    """Input values fall outside the operation's numeric domain."""


class ContractError(RuntimeError):
    """An API usage precondition was violated."""


class TapeStateError(RuntimeError):
    """The tape is not in a state that allows the requested action."""


class DeterminismError(RuntimeError):
    """A function expected to be deterministic returned differing values."""


def _as_f64(values) -> np.ndarray:
    # asarray with order="C" keeps 0-d arrays 0-d (ascontiguousarray promotes them to 1-d)
    return np.asarray(values, dtype=np.float64, order="C")


class Tensor:
    """A dense float64 array plus gradient metadata."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, values, requires_grad: bool = False):
        arr = _as_f64(values)
        if not np.all(np.isfinite(arr)):
            raise DomainError("tensor data must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: "Tape | None" = None

    @classmethod
    def _raw(cls, data: np.ndarray, requires_grad: bool = False, tape: "Tape | None" = None) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out._tape = tape
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Constant copy of this tensor's current value, cut off from any graph."""
        return Tensor._raw(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def parameter(values, rng: np.random.Generator | None = None) -> Tensor:
    """Trainable leaf tensor."""
    return Tensor(values, requires_grad=True)


class Tape:
    """Records operations for one backward pass.

    Usage::

        with Tape():
            loss = ...   # ops on tensors record themselves
        backward(loss)   # consumes the tape
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._consumed = False
        self._active = False

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise TapeStateError("a tape is already active; nested tapes are not supported")
        if self._consumed:
            raise TapeStateError("this tape was already consumed by backward")
        _ACTIVE_TAPE = self
        self._active = True
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        self._active = False

    def __len__(self) -> int:
        return len(self._nodes)

    def _run_backward(self, loss: Tensor) -> None:
        if self._active:
            raise TapeStateError("exit the tape context before calling backward")
        if self._consumed:
            raise TapeStateError("tape already consumed; build a new graph for another backward pass")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for out, inputs, bwd in reversed(self._nodes):
            g = grads.pop(id(out), None)
            holders.pop(id(out), None)
            if g is None:
                continue
            input_grads = bwd(g)
            for t, gt in zip(inputs, input_grads):
                if gt is None:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gt
                else:
                    grads[key] = gt
                    holders[key] = t
        for key, g in grads.items():
            t = holders[key]
            if not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.ascontiguousarray(g)
            else:
                t.grad = t.grad + g


_ACTIVE_TAPE: Tape | None = None


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every trainable leaf.

    The loss must hold a single element.  A loss with no recorded graph
    (all inputs constant) is a silent no-op.  The tape that recorded the
    loss is consumed; a second backward over it raises.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        return
    tape._run_backward(loss)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], make_backward) -> Tensor:
    """Wrap a forward result, recording a backward closure if needed."""
    tape = _ACTIVE_TAPE
    if tape is None or not any(t.requires_grad for t in inputs):
        return Tensor._raw(data)
    out = Tensor._raw(data, requires_grad=True, tape=tape)
    tape._nodes.append((out, inputs, make_backward()))
    return out


def constant(values) -> Tensor:
    """Non-trainable tensor from raw values."""
    return Tensor(values, requires_grad=False)


# ---------------------------------------------------------------------------
# operations


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} must match exactly")
    data = a.data + b.data
    na, nb = a.requires_grad, b.requires_grad
    return _result(data, (a, b), lambda: lambda g: (g if na else None, g if nb else None))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} must match exactly")
    data = a.data - b.data
    na, nb = a.requires_grad, b.requires_grad
    return _result(data, (a, b), lambda: lambda g: (g if na else None, -g if nb else None))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} must match exactly")
    data = a.data * b.data
    na, nb = a.requires_grad, b.requires_grad
    ad, bd = a.data, b.data
    return _result(data, (a, b), lambda: lambda g: (g * bd if na else None, g * ad if nb else None))


def scale(x: Tensor, c: float) -> Tensor:
    """x * c for a python scalar c."""
    c = float(c)
    data = x.data * c
    return _result(data, (x,), lambda: lambda g: (g * c,))


def shift(x: Tensor, c: float) -> Tensor:
    """x + c for a python scalar c."""
    data = x.data + float(c)
    return _result(data, (x,), lambda: lambda g: (g,))


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    data = a.data @ b.data
    na, nb = a.requires_grad, b.requires_grad
    ad, bd = a.data, b.data

    def make():
        def bwd(g):
            ga = g @ bd.T if na else None
            gb = ad.T @ g if nb else None
            return ga, gb

        return bwd

    return _result(data, (a, b), make)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d tensor, got {x.shape}")
    data = np.ascontiguousarray(x.data.T)
    return _result(data, (x,), lambda: lambda g: (np.ascontiguousarray(g.T),))


def broadcast(x: Tensor, target_shape: Sequence[int]) -> Tensor:
    """Stretch `x` to `target_shape` under numpy broadcast rules, explicitly."""
    target_shape = tuple(int(s) for s in target_shape)
    try:
        view = np.broadcast_to(x.data, target_shape)
    except ValueError as exc:
        raise ShapeError(f"broadcast: cannot expand {x.shape} to {target_shape}") from exc
    data = np.ascontiguousarray(view)
    src_shape = x.data.shape

    def make():
        def bwd(g):
            extra = len(target_shape) - len(src_shape)
            if extra:
                g = g.sum(axis=tuple(range(extra)))
            squash = tuple(i for i, s in enumerate(src_shape) if s == 1 and g.shape[i] != 1)
            if squash:
                g = g.sum(axis=squash, keepdims=True)
            return (np.ascontiguousarray(g.reshape(src_shape)),)

        return bwd

    return _result(data, (x,), make)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if len(parts) == 0:
        raise ContractError("concat needs at least one part")
    ndim = parts[0].data.ndim
    ax = axis if axis >= 0 else axis + ndim
    if not (0 <= ax < ndim):
        raise ShapeError(f"concat: axis {axis} out of range for ndim {ndim}")
    base = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != ndim or any(o != b for i, (o, b) in enumerate(zip(other, base)) if i != ax):
            raise ShapeError(f"concat: incompatible part shapes {[p.shape for p in parts]} on axis {axis}")
    data = np.concatenate([p.data for p in parts], axis=ax)
    widths = [p.shape[ax] for p in parts]
    needs = [p.requires_grad for p in parts]

    def make():
        offsets = np.cumsum([0] + widths)

        def bwd(g):
            out = []
            for i in range(len(widths)):
                if needs[i]:
                    sl = [slice(None)] * ndim
                    sl[ax] = slice(offsets[i], offsets[i + 1])
                    out.append(np.ascontiguousarray(g[tuple(sl)]))
                else:
                    out.append(None)
            return tuple(out)

        return bwd

    return _result(data, tuple(parts), make)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous sub-range [start, stop) along one axis."""
    ndim = x.data.ndim
    ax = axis if axis >= 0 else axis + ndim
    if not (0 <= ax < ndim):
        raise ShapeError(f"slice: axis {axis} out of range for ndim {ndim}")
    n = x.data.shape[ax]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice: range [{start}, {stop}) invalid for axis of size {n}")
    sl = [slice(None)] * ndim
    sl[ax] = slice(start, stop)
    data = np.ascontiguousarray(x.data[tuple(sl)])
    src_shape = x.data.shape

    def make():
        def bwd(g):
            full = np.zeros(src_shape)
            full[tuple(sl)] = g
            return (full,)

        return bwd

    return _result(data, (x,), make)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of `table` selected by integer `ids` (any id shape; appends the row dim)."""
    if table.data.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-d, got {table.shape}")
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ContractError(f"embedding_lookup: ids must be integers, got dtype {ids.dtype}")
    n_rows = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        bad = ids[(ids < 0) | (ids >= n_rows)].reshape(-1)[0]
        raise DomainError(f"embedding_lookup: id {int(bad)} outside table of {n_rows} rows")
    data = np.ascontiguousarray(table.data[ids])
    shape = table.data.shape

    def make():
        def bwd(g):
            acc = np.zeros(shape)
            np.add.at(acc, ids, g)
            return (acc,)

        return bwd

    return _result(data, (table,), make)


def sigmoid(x: Tensor) -> Tensor:
    pos = np.exp(-np.abs(x.data))
    s = 1.0 / (1.0 + pos)
    data = np.where(x.data >= 0, s, 1.0 - s)

    def make():
        def bwd(g):
            return (g * data * (1.0 - data),)

        return bwd

    return _result(data, (x,), make)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)
    return _result(data, (x,), lambda: lambda g: (g * (1.0 - data * data),))


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)
    xd = x.data
    return _result(data, (x,), lambda: lambda g: (g * (xd > 0),))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    slope = float(slope)
    data = np.where(x.data > 0, x.data, slope * x.data)
    xd = x.data
    return _result(data, (x,), lambda: lambda g: (g * np.where(xd > 0, 1.0, slope),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        data = np.exp(x.data)
    if not np.all(np.isfinite(data)):
        raise DomainError("exp overflowed to a non-finite value")
    return _result(data, (x,), lambda: lambda g: (g * data,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log needs strictly positive input")
    xd = x.data
    data = np.log(xd)
    return _result(data, (x,), lambda: lambda g: (g / xd,))


def softplus(x: Tensor) -> Tensor:
    """ln(1 + e^x), overflow-safe."""
    xd = x.data
    data = np.maximum(xd, 0.0) + np.log1p(np.exp(-np.abs(xd)))

    def make():
        sig = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))), 1.0 - 1.0 / (1.0 + np.exp(-np.abs(xd))))

        def bwd(g):
            return (g * sig,)

        return bwd

    return _result(data, (x,), make)


def _norm_axis(ndim: int, axis: int, op: str) -> int:
    ax = axis if axis >= 0 else axis + ndim
    if not (0 <= ax < ndim):
        raise ShapeError(f"{op}: axis {axis} out of range for ndim {ndim}")
    return ax


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(max(x.data.ndim, 1), axis, "softmax")
    shifted = x.data - np.max(x.data, axis=ax, keepdims=True)
    e = np.exp(shifted)
    data = e / np.sum(e, axis=ax, keepdims=True)

    def make():
        def bwd(g):
            dot = np.sum(g * data, axis=ax, keepdims=True)
            return (data * (g - dot),)

        return bwd

    return _result(data, (x,), make)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(max(x.data.ndim, 1), axis, "log_softmax")
    shifted = x.data - np.max(x.data, axis=ax, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=ax, keepdims=True))
    data = shifted - lse

    def make():
        prob = np.exp(data)

        def bwd(g):
            return (g - prob * np.sum(g, axis=ax, keepdims=True),)

        return bwd

    return _result(data, (x,), make)


def reduce_sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    src_shape = x.data.shape
    if axis is None:
        data = np.asarray(np.sum(x.data))
        return _result(data, (x,), lambda: lambda g: (np.broadcast_to(g, src_shape).copy(),))
    ax = _norm_axis(x.data.ndim, axis, "sum")
    data = np.ascontiguousarray(np.sum(x.data, axis=ax, keepdims=keepdims))

    def make():
        def bwd(g):
            gg = g if keepdims else np.expand_dims(g, ax)
            return (np.broadcast_to(gg, src_shape).copy(),)

        return bwd

    return _result(data, (x,), make)


def reduce_mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    src_shape = x.data.shape
    if axis is None:
        n = x.data.size
        data = np.asarray(np.mean(x.data))
        return _result(data, (x,), lambda: lambda g: (np.broadcast_to(g / n, src_shape).copy(),))
    ax = _norm_axis(x.data.ndim, axis, "mean")
    n = src_shape[ax]
    data = np.ascontiguousarray(np.mean(x.data, axis=ax, keepdims=keepdims))

    def make():
        def bwd(g):
            gg = g if keepdims else np.expand_dims(g, ax)
            return (np.broadcast_to(gg / n, src_shape).copy(),)

        return bwd

    return _result(data, (x,), make)


def grad_reverse(x: Tensor, lam: float = 1.0) -> Tensor:
    """Identity forward; backward multiplies the gradient by -lam."""
    lam = float(lam)
    return _result(x.data.copy(), (x,), lambda: lambda g: (-lam * g,))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    data = np.ascontiguousarray(x.data.reshape(shape))
    src = x.data.shape
    return _result(data, (x,), lambda: lambda g: (np.ascontiguousarray(g.reshape(src)),))


OPS: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "concat": concat,
    "slice": slice_axis,
    "embedding_lookup": embedding_lookup,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "exp": exp,
    "log": log,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "sum": reduce_sum,
    "mean": reduce_mean,
    "transpose": transpose,
    "broadcast": broadcast,
    "sub": sub,
    "scale": scale,
    "shift": shift,
    "softplus": softplus,
    "grad_reverse": grad_reverse,
    "reshape": reshape,
}


def forward_op(kind: str, *args, **kwargs) -> Tensor:
    """Dispatch an operation by registry name."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ContractError(f"unknown op kind '{kind}'") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------------------
# optimization


class Adam:
    """Adam with bias correction.

    Gradients are consumed by `step`: after the update every registered
    parameter's `.grad` is reset to None, so a second `step` without a
    fresh backward pass fails loudly.
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        params = list(params)
        if not params:
            raise ContractError("Adam needs at least one parameter")
        for p in params:
            if not p.requires_grad:
                raise ContractError("all Adam parameters must require gradients")
        if not (0.0 < lr):
            raise ContractError(f"lr must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ContractError("betas must lie in [0, 1)")
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in params]
        self.second_moment = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError(f"parameter {i} has no gradient; run backward before step")
            if p.grad.shape != p.data.shape:
                raise ShapeError(f"parameter {i}: grad shape {p.grad.shape} != data shape {p.data.shape}")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**t
        bc2 = 1.0 - b2**t
        for i, p in enumerate(self.params):
            g = p.grad
            m = self.first_moment[i]
            v = self.second_moment[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.grad = None

    def zero_grads(self) -> None:
        zero_grads(self.params)


# ---------------------------------------------------------------------------
# gradient checking


class GradCheckEntry:
    """Worst-coordinate comparison for one parameter."""

    __slots__ = ("name", "shape", "max_rel_error", "coord", "analytic", "numeric")

    def __init__(self, name, shape, max_rel_error, coord, analytic, numeric):
        self.name = name
        self.shape = shape
        self.max_rel_error = max_rel_error
        self.coord = coord
        self.analytic = analytic
        self.numeric = numeric

    def __repr__(self) -> str:
        return (
            f"{self.name}{list(self.shape)}: rel_err={self.max_rel_error:.3e} "
            f"at {self.coord} (analytic={self.analytic:.6e}, numeric={self.numeric:.6e})"
        )


class GradCheckReport:
    def __init__(self, entries: list[GradCheckEntry]):
        self.entries = entries

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol

    def __repr__(self) -> str:
        lines = [repr(e) for e in self.entries]
        lines.append(f"worst: {self.max_rel_error:.3e}")
        return "\n".join(lines)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor] | dict[str, Tensor],
    h: float = 1e-5,
) -> GradCheckReport:
    """Compare tape gradients of `loss_fn` against central finite differences.

    `loss_fn` takes no arguments, reads the parameters in place, and
    must be deterministic (fix all noise beforehand); this is verified
    by evaluating it twice before any differencing.  Relative error per
    coordinate is |a - n| / max(1, |a|, |n|).
    """
    if not (0.0 < h <= 1e-2):
        raise ContractError(f"step size h must lie in (0, 1e-2], got {h}")
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(f"param{i}", p) for i, p in enumerate(params)]
    if not named:
        raise ContractError("grad_check needs at least one parameter")
    for name, p in named:
        if not p.requires_grad:
            raise ContractError(f"grad_check parameter '{name}' must require gradients")

    v1 = loss_fn()
    v2 = loss_fn()
    if v1.data.size != 1 or v2.data.size != 1:
        raise ContractError("loss_fn must return a scalar tensor")
    if float(v1.data) != float(v2.data):
        raise DeterminismError(
            f"loss_fn returned different values on repeated calls: {float(v1.data)!r} vs {float(v2.data)!r}"
        )

    saved = [(p, p.grad) for _, p in named]
    zero_grads(p for _, p in named)
    with Tape():
        loss = loss_fn()
    backward(loss)
    analytic = []
    for name, p in named:
        analytic.append(np.zeros_like(p.data) if p.grad is None else p.grad.copy())
    for p, g in saved:
        p.grad = g

    entries = []
    for (name, p), a in zip(named, analytic):
        flat = p.data.reshape(-1)
        worst = (-1.0, 0, 0.0, 0.0)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = float(loss_fn().data)
            flat[j] = orig - h
            down = float(loss_fn().data)
            flat[j] = orig
            n = (up - down) / (2.0 * h)
            aj = float(a.reshape(-1)[j])
            rel = abs(aj - n) / max(1.0, abs(aj), abs(n))
            if rel > worst[0]:
                worst = (rel, j, aj, n)
        coord = tuple(int(c) for c in np.unravel_index(worst[1], p.data.shape)) if p.data.ndim else ()
        entries.append(GradCheckEntry(name, p.data.shape, worst[0], coord, worst[2], worst[3]))
    return GradCheckReport(entries)
