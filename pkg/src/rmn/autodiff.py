"""Dense float64 tensors with reverse-mode automatic differentiation.

The operation set is deliberately small: exactly what a multi-hop memory
model needs. Every primitive records its backward rule on an explicit
``Tape``; ``backward`` replays the tape in reverse. Broadcasting is
restricted to scalar-with-tensor so each gradient rule stays auditable.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "Tape", "TensorError", "ShapeError", "DomainError",
    "tensor", "constant", "parameter",
    "elementwise", "add", "sub", "mul", "relu", "tanh", "sigmoid",
    "softplus", "log", "exp",
    "matmul", "softmax", "segment_softmax", "reduce", "reduce_sum",
    "reduce_mean", "concat", "lookup", "transpose", "reshape",
    "gather_rows", "repeat_interleave", "segment_sum", "scale_rows",
    "add_bias", "cross_entropy", "backward", "grad_check",
    "BatchNormState", "batch_norm", "custom_op",
]


class TensorError(Exception):
    """Base error for tensor construction and operation failures."""


class ShapeError(TensorError):
    """Operand shapes violate an operation's contract."""


class DomainError(TensorError):
    """Input outside an operation's mathematical domain."""


_UID = 0


def _next_uid() -> int:
    global _UID
    _UID += 1
    return _UID


class Tensor:
    """Immutable dense array of float64 values, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "uid", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        self._init_from(arr, requires_grad, name)

    def _init_from(self, arr: np.ndarray, requires_grad: bool, name: str):
        if not np.isfinite(arr).all():
            raise TensorError("non-finite values in tensor construction")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.uid = _next_uid()
        self.grad = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Adopt a freshly computed array without copying (op outputs only)."""
        arr = np.asarray(arr, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.array(arr, dtype=np.float64, order="C")
        t = cls.__new__(cls)
        t._init_from(arr, requires_grad, "")
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


def tensor(data, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class _OpRecord:
    __slots__ = ("op", "inputs", "out_uid", "backward_fn")

    def __init__(self, op, inputs, out_uid, backward_fn):
        self.op = op
        self.inputs = inputs          # tuple of input Tensors
        self.out_uid = out_uid
        self.backward_fn = backward_fn  # grad_out -> tuple of input grads (None for skips)


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Single-owner: enter it, build the graph, call :func:`backward` once.
    Creation order is the topological order, so the reverse sweep visits
    every consumer before its producers.
    """

    def __init__(self):
        self._records: list[_OpRecord] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"
        return False

    def __len__(self) -> int:
        return len(self._records)

    def _record(self, op, inputs, out, backward_fn):
        self._records.append(_OpRecord(op, inputs, out.uid, backward_fn))


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _make(op, inputs, out_data, backward_fn) -> Tensor:
    """Wrap a forward result, recording the op if a tape is active."""
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_data, requires_grad=track)
    if track:
        tape._record(op, tuple(inputs), out, backward_fn)
    return out


class Gradients:
    """Result of a backward pass: gradient array per tensor, zeros if unreached."""

    def __init__(self, grads: dict):
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(t.uid)
        if g is None:
            return np.zeros(t.shape, dtype=np.float64)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return t.uid in self._grads


def backward(loss: Tensor, tape: Tape | None = None) -> Gradients:
    """Reverse sweep from a scalar loss; populates ``.grad`` on reached tensors."""
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = _active_tape()
    if tape is None:
        raise TensorError("backward called with no tape")
    grads: dict[int, np.ndarray] = {loss.uid: np.ones(loss.shape, dtype=np.float64)}
    for rec in reversed(tape._records):
        g_out = grads.get(rec.out_uid)
        if g_out is None:
            continue
        in_grads = rec.backward_fn(g_out)
        for t, g in zip(rec.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            acc = grads.get(t.uid)
            if acc is None:
                grads[t.uid] = np.array(g, dtype=np.float64, copy=True)
            else:
                acc += g
    result = Gradients(grads)
    for rec in tape._records:
        for t in rec.inputs:
            if t.requires_grad:
                t.grad = grads.get(t.uid)
    loss.grad = grads[loss.uid]
    return result


# ---------------------------------------------------------------------------
# elementwise


def _binary_shapes(x: Tensor, y: Tensor):
    """Equal shapes, or one operand is a single element (scalar broadcast)."""
    if x.shape == y.shape:
        return
    if x.size == 1 or y.size == 1:
        return
    raise ShapeError(f"elementwise shapes {x.shape} vs {y.shape}")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.sum(g).reshape(t.shape)


def add(x: Tensor, y: Tensor) -> Tensor:
    _binary_shapes(x, y)
    return _make("add", (x, y), x.data + y.data,
                 lambda g: (_unbroadcast(g, x), _unbroadcast(g, y)))


def sub(x: Tensor, y: Tensor) -> Tensor:
    _binary_shapes(x, y)
    return _make("sub", (x, y), x.data - y.data,
                 lambda g: (_unbroadcast(g, x), _unbroadcast(-g, y)))


def mul(x: Tensor, y: Tensor) -> Tensor:
    _binary_shapes(x, y)
    xd, yd = x.data, y.data
    return _make("mul", (x, y), xd * yd,
                 lambda g: (_unbroadcast(g * yd, x), _unbroadcast(g * xd, y)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    return _make("relu", (x,), np.where(mask, x.data, 0.0),
                 lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _make("tanh", (x,), t, lambda g: (g * (1.0 - t * t),))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _make("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def softplus(x: Tensor) -> Tensor:
    # log(1 + e^x), stable for large |x|
    out = np.logaddexp(0.0, x.data)
    xd = x.data
    return _make("softplus", (x,), out, lambda g: (g * _sigmoid(xd),))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0.0):
        raise DomainError("log of non-positive value")
    xd = x.data
    return _make("log", (x,), np.log(xd), lambda g: (g / xd,))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    if not np.isfinite(e).all():
        raise DomainError("exp overflow")
    return _make("exp", (x,), e, lambda g: (g * e,))


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


_UNARY = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid,
          "softplus": softplus, "log": log, "exp": exp}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op_tag: str, x: Tensor, y: Tensor | None = None) -> Tensor:
    """Tag-dispatched elementwise op; binary tags require equal shapes or a scalar."""
    if op_tag in _BINARY:
        if y is None:
            raise TensorError(f"{op_tag} needs two operands")
        return _BINARY[op_tag](x, y)
    if op_tag in _UNARY:
        if y is not None:
            raise TensorError(f"{op_tag} takes one operand")
        return _UNARY[op_tag](x)
    raise TensorError(f"unknown elementwise tag {op_tag!r}")


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make("matmul", (a, b), ad @ bd,
                 lambda g: (g @ bd.T, ad.T @ g))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError("transpose needs a 2-d tensor")
    return _make("transpose", (x,), x.data.T, lambda g: (g.T,))


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.shape
    return _make("reshape", (x,), x.data.reshape(shape),
                 lambda g: (g.reshape(orig),))


def concat(xs, axis: int = 0) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ShapeError("concat of empty list")
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.array_split(g, splits, axis=axis))

    return _make("concat", tuple(xs),
                 np.concatenate([t.data for t in xs], axis=axis), bwd)


def lookup(table: Tensor, ids) -> Tensor:
    """Gather rows ``table[ids]``; gradient scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError("lookup table must be 2-d")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise TensorError("lookup id out of range")
    shape = table.shape

    def bwd(g):
        dt = np.zeros(shape, dtype=np.float64)
        np.add.at(dt, ids, g)
        return (dt,)

    return _make("lookup", (table,), table.data[ids], bwd)


def gather_rows(x: Tensor, idx) -> Tensor:
    """Row gather for index plumbing; same gradient rule as lookup."""
    return lookup(x, idx)


def repeat_interleave(x: Tensor, counts) -> Tensor:
    """Repeat row ``i`` of a 2-d tensor ``counts[i]`` times (each count >= 1)."""
    counts = np.asarray(counts, dtype=np.int64)
    if x.ndim != 2 or counts.shape != (x.shape[0],):
        raise ShapeError("repeat_interleave expects 2-d x and one count per row")
    if np.any(counts < 1):
        raise ShapeError("repeat_interleave counts must be >= 1")
    offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))

    def bwd(g):
        return (np.add.reduceat(g, offsets, axis=0),)

    return _make("repeat_interleave", (x,), np.repeat(x.data, counts, axis=0), bwd)


def segment_sum(x: Tensor, counts) -> Tensor:
    """Sum consecutive row blocks of sizes ``counts``; adjoint of repeat_interleave."""
    counts = np.asarray(counts, dtype=np.int64)
    if x.ndim != 2 or counts.sum() != x.shape[0]:
        raise ShapeError("segment_sum counts must partition the rows")
    if np.any(counts < 1):
        raise ShapeError("segment_sum counts must be >= 1")
    offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))

    def bwd(g):
        return (np.repeat(g, counts, axis=0),)

    return _make("segment_sum", (x,), np.add.reduceat(x.data, offsets, axis=0), bwd)


def scale_rows(x: Tensor, v: Tensor) -> Tensor:
    """Scale row ``i`` by ``v[i]``; gradients flow into both operands."""
    if x.ndim != 2:
        raise ShapeError("scale_rows expects a 2-d tensor")
    vflat = v.data.reshape(-1)
    if vflat.shape[0] != x.shape[0]:
        raise ShapeError(f"scale_rows rows {x.shape[0]} vs weights {v.shape}")
    vshape = v.shape
    xd = x.data

    def bwd(g):
        return (g * vflat[:, None], (g * xd).sum(axis=1).reshape(vshape))

    return _make("scale_rows", (x, v), xd * vflat[:, None], bwd)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a bias vector to every row of a 2-d tensor."""
    if x.ndim != 2 or b.data.reshape(-1).shape[0] != x.shape[1]:
        raise ShapeError(f"add_bias {x.shape} + {b.shape}")
    bshape = b.shape

    def bwd(g):
        return (g, g.sum(axis=0).reshape(bshape))

    return _make("add_bias", (x, b), x.data + b.data.reshape(-1), bwd)


# ---------------------------------------------------------------------------
# reductions and softmax


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.shape

    if axis is None:
        def bwd(g):
            return (np.full(shape, float(g.reshape(())), dtype=np.float64),)
        return _make("reduce_sum", (x,), np.sum(x.data).reshape(()), bwd)

    def bwd(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make("reduce_sum", (x,), np.sum(x.data, axis=axis), bwd)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    shape = x.shape

    if axis is None:
        def bwd(g):
            return (np.full(shape, float(g.reshape(())) / n, dtype=np.float64),)
        return _make("reduce_mean", (x,), np.mean(x.data).reshape(()), bwd)

    def bwd(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy() / n,)

    return _make("reduce_mean", (x,), np.mean(x.data, axis=axis), bwd)


_REDUCE = {"sum": reduce_sum, "mean": reduce_mean}


def reduce(op_tag: str, x: Tensor, axis: int | None = None) -> Tensor:
    if op_tag not in _REDUCE:
        raise TensorError(f"unknown reduce tag {op_tag!r}")
    return _REDUCE[op_tag](x, axis)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max subtraction)."""
    xd = x.data
    shifted = xd - np.max(xd, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def bwd(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _make("softmax", (x,), y, bwd)


def segment_softmax(x: Tensor, counts) -> Tensor:
    """Softmax over consecutive row blocks of a column vector or 1-d tensor."""
    counts = np.asarray(counts, dtype=np.int64)
    flat = x.data.reshape(-1)
    if counts.sum() != flat.shape[0]:
        raise ShapeError("segment_softmax counts must partition the entries")
    offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))
    seg = np.repeat(np.arange(counts.shape[0]), counts)
    mx = np.maximum.reduceat(flat, offsets)
    e = np.exp(flat - mx[seg])
    denom = np.add.reduceat(e, offsets)
    y = e / denom[seg]
    shape = x.shape

    def bwd(g):
        gf = g.reshape(-1)
        dot = np.add.reduceat(gf * y, offsets)
        return ((y * (gf - dot[seg])).reshape(shape),)

    return _make("segment_softmax", (x,), y.reshape(shape), bwd)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-softmax of the target classes (fused log-sum-exp)."""
    t = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError("cross_entropy expects 2-d logits")
    n, c = logits.shape
    if t.shape != (n,):
        raise ShapeError(f"targets shape {t.shape} for {n} rows")
    if t.size and (t.min() < 0 or t.max() >= c):
        raise TensorError("target id out of range")
    z = logits.data
    mx = np.max(z, axis=1, keepdims=True)
    e = np.exp(z - mx)
    sume = np.sum(e, axis=1, keepdims=True)
    lse = (mx + np.log(sume)).reshape(-1)
    loss = np.mean(lse - z[np.arange(n), t]).reshape(())
    p = e / sume

    def bwd(g):
        d = p.copy()
        d[np.arange(n), t] -= 1.0
        return (d * (float(g.reshape(())) / n),)

    return _make("cross_entropy", (logits,), loss, bwd)


# ---------------------------------------------------------------------------
# batch normalization


class BatchNormState:
    """Per-feature normalization parameters plus running statistics.

    ``scale``/``shift`` are learnable tensors; running mean/variance are
    plain mutable buffers updated only in train mode.
    """

    def __init__(self, num_features: int, momentum: float = 0.1,
                 eps: float = 1e-5):
        if not (0.0 <= momentum < 1.0):
            raise TensorError("batch-norm momentum must be in [0, 1)")
        if eps <= 0.0:
            raise TensorError("batch-norm epsilon must be positive")
        self.num_features = int(num_features)
        self.scale = parameter(np.ones(num_features))
        self.shift = parameter(np.zeros(num_features))
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.training = True
        self.batches_seen = 0

    def state_arrays(self) -> dict:
        return {"running_mean": self.running_mean,
                "running_var": self.running_var,
                "batches_seen": np.array([float(self.batches_seen)])}

    def load_state_arrays(self, arrays: dict):
        self.running_mean = np.array(arrays["running_mean"], dtype=np.float64)
        self.running_var = np.array(arrays["running_var"], dtype=np.float64)
        self.batches_seen = int(arrays["batches_seen"][0])


def batch_norm(x: Tensor, state: BatchNormState) -> Tensor:
    """Normalize per feature; batch statistics in train mode, running in eval."""
    if x.ndim != 2 or x.shape[1] != state.num_features:
        raise ShapeError(f"batch_norm input {x.shape} for {state.num_features} features")
    n = x.shape[0]
    xd = x.data
    scale, shift = state.scale, state.shift

    if state.training:
        mean = xd.mean(axis=0)
        var = xd.var(axis=0)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = (xd - mean) * inv
        m = state.momentum
        # unbiased variance feeds the running estimate (biased normalizes the batch)
        run_var = xd.var(axis=0, ddof=1) if n > 1 else var
        state.running_mean *= 1.0 - m
        state.running_mean += m * mean
        state.running_var *= 1.0 - m
        state.running_var += m * run_var
        state.batches_seen += 1
        sd = scale.data

        def bwd(g):
            dxhat = g * sd
            dvar = np.sum(dxhat * (xd - mean), axis=0) * -0.5 * inv ** 3
            dmean = np.sum(dxhat, axis=0) * -inv + dvar * np.mean(-2.0 * (xd - mean), axis=0)
            dx = dxhat * inv + dvar * 2.0 * (xd - mean) / n + dmean / n
            return (dx, np.sum(g * xhat, axis=0), np.sum(g, axis=0))
    else:
        if state.batches_seen == 0:
            raise TensorError("batch_norm eval mode before any training batch")
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (xd - state.running_mean) * inv
        sd = scale.data

        def bwd(g):
            return (g * sd * inv, np.sum(g * xhat, axis=0), np.sum(g, axis=0))

    out = xhat * scale.data + shift.data
    return _make("batch_norm", (x, scale, shift), out, bwd)


# ---------------------------------------------------------------------------
# custom composite primitives


def custom_op(name: str, inputs, out_data, backward_fn) -> Tensor:
    """Register an externally implemented primitive (fused kernels)."""
    return _make(name, tuple(inputs), out_data, backward_fn)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, inputs, eps: float = 1e-6) -> float:
    """Max relative error between tape gradients and central finite differences.

    ``f`` maps the tensors in ``inputs`` (or any structure closing over them)
    to a scalar Tensor and must be deterministic. Each element of each
    gradient-tracked input is perturbed in place, so the same tensor objects
    feed both the analytic and the numeric path. The error is relative to
    the larger of the two gradient magnitudes, floored at one so that
    finite-difference noise on near-zero entries does not dominate.
    """
    inputs = list(inputs)
    with Tape() as tape:
        loss = f(*inputs)
        grads = backward(loss, tape)
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = grads[t]
        arr = t.data
        arr.flags.writeable = True
        try:
            flat = arr.reshape(-1)
            numeric = np.zeros_like(flat)
            for k in range(flat.shape[0]):
                orig = flat[k]
                flat[k] = orig + eps
                plus = f(*inputs).item()
                flat[k] = orig - eps
                minus = f(*inputs).item()
                flat[k] = orig
                numeric[k] = (plus - minus) / (2.0 * eps)
        finally:
            arr.flags.writeable = False
        num = numeric.reshape(t.shape)
        denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(num)))
        rel = np.abs(analytic - num) / denom
        if rel.size:
            worst = max(worst, float(rel.max()))
    return worst
