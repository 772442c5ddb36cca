"""Minimal reverse-mode autodiff over dense float64 matrices.

Everything is a 2-D tensor. Operations execute eagerly and, when a tape is
active and an input requires gradients, record a backward closure. Calling
``Tape.backward`` on a 1x1 loss walks the recorded ops in reverse and
accumulates gradients additively into every reachable tensor that requires
them. Exactly the operations the model needs are provided; there is no
broadcasting beyond row-vector bias addition and column-vector scaling.
"""

from __future__ import annotations

import math
import struct

import numpy as np
from scipy.special import expit


class DiffError(Exception):
    pass


class ShapeMismatchError(DiffError):
    pass


class NumericGuardError(DiffError):
    pass


class Tensor:
    """A (rows, cols) float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeMismatchError(f"tensors are 2-D, got ndim={arr.ndim}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def zero_grads(tensors) -> None:
    for t in tensors:
        if t.requires_grad:
            t.grad = np.zeros_like(t.data)


class Tape:
    """Records ops in execution order; backward replays them reversed once."""

    def __init__(self):
        self._nodes = []  # (out, parents, backward_fn)
        self._used = False

    def __enter__(self):
        _push_tape(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _pop_tape(self)
        return False

    def record(self, out: Tensor, parents, backward_fn) -> None:
        self._nodes.append((out, parents, backward_fn))

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        if self._used:
            raise DiffError("backward called twice on the same tape; build a new tape")
        if loss.shape != (1, 1):
            raise ShapeMismatchError(f"loss must be 1x1, got {loss.shape}")
        if not self._nodes:
            raise DiffError("backward on an empty tape")
        self._used = True
        if loss.grad is None:
            loss.grad = np.zeros_like(loss.data)
        loss.grad += 1.0
        for out, parents, backward_fn in reversed(self._nodes):
            if out.grad is None:
                continue  # no downstream contribution
            backward_fn(out.grad)


_tape_stack: list[Tape] = []


def _push_tape(t: Tape) -> None:
    _tape_stack.append(t)


def _pop_tape(t: Tape) -> None:
    if not _tape_stack or _tape_stack[-1] is not t:
        raise DiffError("tape stack corrupted (exited out of order)")
    _tape_stack.pop()


def _active_tape():
    return _tape_stack[-1] if _tape_stack else None


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy()  # closures may hand the same buffer to several parents
    else:
        t.grad += g


def _guard(name: str, arr: np.ndarray) -> None:
    # a sum over finite values is finite; any nan/inf poisons it
    if not math.isfinite(arr.sum()):
        if np.all(np.isfinite(arr)):
            raise NumericGuardError(f"overflowing values in op '{name}'")
        raise NumericGuardError(f"non-finite output in op '{name}'")


def _make(name: str, data: np.ndarray, parents, backward_fn) -> Tensor:
    _guard(name, data)
    tape = _active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = object.__new__(Tensor)  # data is already a fresh 2-D float64 array
    out.data = data
    out.requires_grad = needs
    out.grad = None  # allocated lazily during backward
    if needs:
        tape.record(out, parents, backward_fn(out))
    return out


def _shape_check(op: str, cond: bool, detail: str) -> None:
    if not cond:
        raise ShapeMismatchError(f"{op}: {detail}")


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _shape_check("matmul", a.shape[1] == b.shape[0], f"{a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bwd(out):
        def fn(g):
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
        return fn

    return _make("matmul", data, (a, b), bwd)


def spmm(a_const, x: Tensor) -> Tensor:
    """Sparse-or-dense constant matrix times tensor; no gradient w.r.t. the matrix."""
    _shape_check("spmm", a_const.shape[1] == x.shape[0], f"{a_const.shape} @ {x.shape}")
    data = a_const @ x.data
    at = a_const.T

    def bwd(out):
        def fn(g):
            _accum(x, at @ g)
        return fn

    return _make("spmm", np.asarray(data), (x,), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    _shape_check("add", a.shape == b.shape, f"{a.shape} + {b.shape}")
    data = a.data + b.data

    def bwd(out):
        def fn(g):
            _accum(a, g)
            _accum(b, g)
        return fn

    return _make("add", data, (a, b), bwd)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-vector bias added to every row (the one permitted broadcast)."""
    _shape_check("add_bias", b.shape == (1, x.shape[1]), f"{x.shape} + bias {b.shape}")
    data = x.data + b.data

    def bwd(out):
        def fn(g):
            _accum(x, g)
            _accum(b, g.sum(axis=0, keepdims=True))
        return fn

    return _make("add_bias", data, (x, b), bwd)


def add_const(x: Tensor, c) -> Tensor:
    data = x.data + c

    def bwd(out):
        def fn(g):
            _accum(x, g)
        return fn

    return _make("add_const", data, (x,), bwd)


def scale(x: Tensor, s: float) -> Tensor:
    data = x.data * s

    def bwd(out):
        def fn(g):
            _accum(x, g * s)
        return fn

    return _make("scale", data, (x,), bwd)


def mul_const(x: Tensor, c) -> Tensor:
    """Elementwise multiply by a constant array (dropout masks and the like)."""
    data = x.data * c

    def bwd(out):
        def fn(g):
            _accum(x, g * c)
        return fn

    return _make("mul_const", data, (x,), bwd)


def mul_col(x: Tensor, col: Tensor) -> Tensor:
    """Scale row i of x by col[i]; both differentiable."""
    _shape_check("mul_col", col.shape == (x.shape[0], 1), f"{x.shape} * col {col.shape}")
    data = x.data * col.data

    def bwd(out):
        def fn(g):
            _accum(x, g * col.data)
            _accum(col, (g * x.data).sum(axis=1, keepdims=True))
        return fn

    return _make("mul_col", data, (x, col), bwd)


def transpose(x: Tensor) -> Tensor:
    def bwd(out):
        def fn(g):
            _accum(x, g.T)
        return fn

    return _make("transpose", x.data.T.copy(), (x,), bwd)


def concat_rows(parts) -> Tensor:
    parts = list(parts)
    _shape_check("concat_rows", len(parts) > 0, "empty input")
    cols = parts[0].shape[1]
    _shape_check("concat_rows", all(p.shape[1] == cols for p in parts),
                 f"column counts differ: {[p.shape for p in parts]}")
    data = np.concatenate([p.data for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def bwd(out):
        def fn(g):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                _accum(p, g[lo:hi])
        return fn

    return _make("concat_rows", data, tuple(parts), bwd)


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    _shape_check("concat_cols", len(parts) > 0, "empty input")
    rows = parts[0].shape[0]
    _shape_check("concat_cols", all(p.shape[0] == rows for p in parts),
                 f"row counts differ: {[p.shape for p in parts]}")
    data = np.concatenate([p.data for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def bwd(out):
        def fn(g):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                _accum(p, g[:, lo:hi])
        return fn

    return _make("concat_cols", data, tuple(parts), bwd)


def select_rows(x: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    _shape_check("select_rows", idx.ndim == 1 and idx.size > 0, "need a flat non-empty index list")
    if idx.min() < 0 or idx.max() >= x.shape[0]:
        raise ShapeMismatchError(f"select_rows: index out of range for {x.shape[0]} rows")
    data = x.data[idx]

    def bwd(out):
        def fn(g):
            if x.requires_grad:
                if x.grad is None:
                    x.grad = np.zeros_like(x.data)
                np.add.at(x.grad, idx, g)
        return fn

    return _make("select_rows", data, (x,), bwd)


def segment_sum_rows(x: Tensor, sizes) -> Tensor:
    """Sum consecutive row segments of the given sizes: sum(sizes) x d -> k x d."""
    sizes = np.asarray(sizes, dtype=np.intp)
    _shape_check("segment_sum_rows", sizes.ndim == 1 and sizes.size > 0 and sizes.min() > 0,
                 "segment sizes must be positive")
    _shape_check("segment_sum_rows", int(sizes.sum()) == x.shape[0],
                 f"segments cover {int(sizes.sum())} rows, tensor has {x.shape[0]}")
    bounds = np.cumsum(sizes)[:-1]
    data = np.add.reduceat(x.data, np.concatenate([[0], bounds]), axis=0)

    def bwd(out):
        def fn(g):
            _accum(x, np.repeat(g, sizes, axis=0))
        return fn

    return _make("segment_sum_rows", data, (x,), bwd)


def div_col(x: Tensor, col: Tensor) -> Tensor:
    """Divide row i of x by col[i]; both differentiable."""
    _shape_check("div_col", col.shape == (x.shape[0], 1), f"{x.shape} / col {col.shape}")
    data = x.data / col.data

    def bwd(out):
        def fn(g):
            _accum(x, g / col.data)
            _accum(col, -(g * out.data).sum(axis=1, keepdims=True) / col.data)
        return fn

    return _make("div_col", data, (x, col), bwd)


def sum_blocks(x: Tensor, block: int) -> Tensor:
    """Sum consecutive groups of `block` rows: (b*m) x d -> m x d."""
    n, d = x.shape
    _shape_check("sum_blocks", block > 0 and n % block == 0, f"{n} rows not divisible by {block}")
    m = n // block
    data = x.data.reshape(m, block, d).sum(axis=1)

    def bwd(out):
        def fn(g):
            _accum(x, np.repeat(g, block, axis=0))
        return fn

    return _make("sum_blocks", data, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def bwd(out):
        def fn(g):
            _accum(x, g * (1.0 - out.data * out.data))
        return fn

    return _make("tanh", y, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)

    def bwd(out):
        def fn(g):
            _accum(x, g * out.data * (1.0 - out.data))
        return fn

    return _make("sigmoid", y, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)

    def bwd(out):
        def fn(g):
            _accum(x, g * (x.data > 0.0))
        return fn

    return _make("relu", y, (x,), bwd)


def clip_min(x: Tensor, floor: float) -> Tensor:
    """Elementwise max(x, floor); gradient passes only where x >= floor."""
    y = np.maximum(x.data, floor)

    def bwd(out):
        def fn(g):
            _accum(x, g * (x.data >= floor))
        return fn

    return _make("clip_min", y, (x,), bwd)


def _check_col(op: str, x: Tensor) -> None:
    _shape_check(op, x.shape[1] == 1 and x.shape[0] >= 1, f"need a column vector, got {x.shape}")


def softmax_blocks(x: Tensor, block: int) -> Tensor:
    """Softmax within consecutive groups of `block` entries of a column vector."""
    _check_col("softmax_blocks", x)
    n = x.shape[0]
    _shape_check("softmax_blocks", block > 0 and n % block == 0, f"{n} rows not divisible by {block}")
    z = x.data.reshape(-1, block)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = (e / e.sum(axis=1, keepdims=True)).reshape(n, 1)

    def bwd(out):
        def fn(g):
            yb = out.data.reshape(-1, block)
            gb = g.reshape(-1, block)
            dots = (yb * gb).sum(axis=1, keepdims=True)
            _accum(x, (yb * (gb - dots)).reshape(n, 1))
        return fn

    return _make("softmax_blocks", y, (x,), bwd)


def softmax_vec(x: Tensor) -> Tensor:
    _check_col("softmax_vec", x)
    return softmax_blocks(x, x.shape[0])


def sparsemax_vec(x: Tensor) -> Tensor:
    """Euclidean projection of a column vector onto the probability simplex.

    Backward uses the support-set Jacobian: identity minus uniform averaging
    over the support, zero off-support.
    """
    _check_col("sparsemax_vec", x)
    z = x.data[:, 0]
    y = sparsemax_project(z).reshape(-1, 1)

    def bwd(out):
        def fn(g):
            support = out.data[:, 0] > 0.0
            k = support.sum()
            gv = g[:, 0]
            mean_supp = gv[support].sum() / k
            gx = np.where(support, gv - mean_supp, 0.0)
            _accum(x, gx.reshape(-1, 1))
        return fn

    return _make("sparsemax_vec", y, (x,), bwd)


def sparsemax_project(z: np.ndarray) -> np.ndarray:
    """Sort-and-threshold simplex projection of a flat array (pure numpy, no tape)."""
    z = np.asarray(z, dtype=np.float64)
    zs = np.sort(z)[::-1]
    css = np.cumsum(zs)
    ks = np.arange(1, z.size + 1)
    support = 1.0 + ks * zs > css
    k_star = int(np.max(ks[support]))
    tau = (css[k_star - 1] - 1.0) / k_star
    return np.maximum(z - tau, 0.0)


def weighted_sum(values: Tensor, weights: Tensor) -> Tensor:
    """Normalized weighted average of rows: sum_i w_i v_i / sum_i w_i -> 1 x d."""
    _shape_check("weighted_sum", weights.shape == (values.shape[0], 1),
                 f"values {values.shape} vs weights {weights.shape}")
    s = weights.data.sum()
    if s == 0.0:
        raise NumericGuardError("weighted_sum: weights sum to zero")
    out_data = (weights.data.T @ values.data) / s

    def bwd(out):
        def fn(g):
            _accum(values, (weights.data / s) @ g)
            _accum(weights, (values.data @ g.T - out.data @ g.T) / s)
        return fn

    return _make("weighted_sum", out_data, (values, weights), bwd)


def rowwise_dot(a: Tensor, b: Tensor) -> Tensor:
    """Per-row dot product of two k x d tensors -> k x 1."""
    _shape_check("rowwise_dot", a.shape == b.shape, f"{a.shape} vs {b.shape}")
    data = (a.data * b.data).sum(axis=1, keepdims=True)

    def bwd(out):
        def fn(g):
            _accum(a, g * b.data)
            _accum(b, g * a.data)
        return fn

    return _make("rowwise_dot", data, (a, b), bwd)


def sum_all(x: Tensor) -> Tensor:
    data = np.array([[x.data.sum()]])

    def bwd(out):
        def fn(g):
            _accum(x, np.full_like(x.data, g[0, 0]))
        return fn

    return _make("sum_all", data, (x,), bwd)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.array([[x.data.sum() / n]])

    def bwd(out):
        def fn(g):
            _accum(x, np.full_like(x.data, g[0, 0] / n))
        return fn

    return _make("mean_all", data, (x,), bwd)


def mean_rows(x: Tensor) -> Tensor:
    """Column-wise mean over rows: m x d -> 1 x d."""
    m = x.shape[0]
    data = x.data.mean(axis=0, keepdims=True)

    def bwd(out):
        def fn(g):
            _accum(x, np.repeat(g / m, m, axis=0))
        return fn

    return _make("mean_rows", data, (x,), bwd)


def bce_with_logits(logits: Tensor, targets, pos_weight: float | None = None) -> Tensor:
    """Mean binary cross-entropy on logits, fused log-sum-exp-stable form."""
    _check_col("bce_with_logits", logits)
    y = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    _shape_check("bce_with_logits", y.shape == logits.shape,
                 f"logits {logits.shape} vs targets {y.shape}")
    z = logits.data
    w = 1.0 + (pos_weight - 1.0) * y if pos_weight is not None else np.ones_like(y)
    per = (1.0 - y) * z + w_times_softplus(w, z)
    n = z.shape[0]
    data = np.array([[per.sum() / n]])

    def bwd(out):
        def fn(g):
            dz = ((1.0 - y) - w * expit(-z)) / n
            _accum(logits, g[0, 0] * dz)
        return fn

    return _make("bce_with_logits", data, (logits,), bwd)


def w_times_softplus(w: np.ndarray, z: np.ndarray) -> np.ndarray:
    # log(1 + exp(-z)) without overflow
    return w * np.logaddexp(0.0, -z)


# ---------------------------------------------------------------------------
# gradient verification


def finite_difference_check(build_loss, params, *, step: float = 1e-5,
                            max_per_tensor: int | None = None, rng=None) -> float:
    """Compare analytic gradients of a scalar loss against central differences.

    `build_loss` must rebuild the loss from the current contents of `params`
    (a list of Tensors) on whatever tape is active, deterministically. Returns
    the max over sampled coordinates of |analytic - numeric| scaled by
    max(1, |analytic|, |numeric|).
    """
    params = list(params)
    zero_grads(params)
    with Tape() as t:
        loss = build_loss()
        t.backward(loss)
    analytic = [p.grad.copy() for p in params]

    def eval_loss() -> float:
        return build_loss().item()

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p, ga in zip(params, analytic):
        coords = np.arange(p.data.size)
        if max_per_tensor is not None and coords.size > max_per_tensor:
            coords = rng.choice(coords, size=max_per_tensor, replace=False)
        flat = p.data.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            hi = eval_loss()
            flat[c] = orig - step
            lo = eval_loss()
            flat[c] = orig
            numeric = (hi - lo) / (2.0 * step)
            a = ga.reshape(-1)[c]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoints: versioned flat binary of named tensors

_CKPT_MAGIC = b"TMGC"
_CKPT_VERSION = 1


def save_tensors(path, named: dict) -> None:
    items = sorted(named.items())
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<B", _CKPT_VERSION))
        f.write(struct.pack("<I", len(items)))
        for name, t in items:
            arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_tensors(path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _CKPT_MAGIC:
            raise DiffError(f"not a checkpoint file: bad magic {magic!r}")
        (version,) = struct.unpack("<B", f.read(1))
        if version != _CKPT_VERSION:
            raise DiffError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", f.read(4))
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            rows, cols = struct.unpack("<II", f.read(8))
            buf = f.read(rows * cols * 8)
            out[name] = np.frombuffer(buf, dtype="<f8").reshape(rows, cols).copy()
        return out


def restore_tensors(named: dict, loaded: dict) -> None:
    """Copy loaded arrays into existing tensors; names and shapes must match."""
    missing = sorted(set(named) - set(loaded))
    extra = sorted(set(loaded) - set(named))
    if missing or extra:
        raise DiffError(f"checkpoint name mismatch: missing={missing} extra={extra}")
    for name, t in named.items():
        arr = loaded[name]
        if arr.shape != t.data.shape:
            raise DiffError(f"checkpoint shape mismatch for '{name}': "
                            f"{arr.shape} vs {t.data.shape}")
        t.data[...] = arr
