"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array and remembers how it was computed; calling
:func:`backward` on a scalar loss walks the recorded graph in reverse
topological order and accumulates gradients on every reachable node.
Double precision is used throughout so finite-difference checks are
reliable; checkpoints are written in single precision.

Also home to the Adam optimizer with a step-decay learning-rate schedule
and the checkpoint format (JSON manifest + raw little-endian float32
payload).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class ShapeError(ValueError):
    """Raised when an operation receives incompatible shapes."""


def _shape_check(ok, op, *operands):
    if not ok:
        shapes = ", ".join(str(np.shape(x.value if isinstance(x, Tensor) else x)) for x in operands)
        raise ShapeError(f"{op}: incompatible shapes {shapes}")


class Tensor:
    """A node of the computation graph.

    `value` is always float64. `grad` is filled in by :func:`backward`;
    it is None until then. Leaves are created directly, interior nodes by
    the op functions below.
    """

    __slots__ = ("value", "grad", "parents", "_backward", "trainable", "name")

    def __init__(self, value, parents=(), backward=None, trainable=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward
        self.trainable = trainable
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        if self.value.shape != ():
            raise ShapeError(f"item: tensor has shape {self.value.shape}, expected scalar")
        return float(self.value)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.value.shape}{tag})"

    # -- operator sugar (scalars become constant shifts/scales) --
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, float(other))

    def __radd__(self, other):
        return shift(self, float(other))

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -float(other))

    def __rsub__(self, other):
        return shift(neg(self), float(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return neg(self)


def _accum(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def _topo_order(root):
    """Iterative post-order DFS; deterministic for a fixed graph."""
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate `.grad` on every node reachable from the scalar `loss`."""
    if loss.value.shape != ():
        raise ShapeError(f"backward: loss has shape {loss.value.shape}, expected scalar")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.asarray(1.0)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# forward ops
# ---------------------------------------------------------------------------

def matmul(a, b):
    va, vb = a.value, b.value
    if va.ndim == 2 and vb.ndim == 2:
        _shape_check(va.shape[1] == vb.shape[0], "matmul", a, b)
        out = va @ vb

        def bwd(g):
            _accum(a, g @ vb.T)
            _accum(b, va.T @ g)
    elif va.ndim == 2 and vb.ndim == 1:
        _shape_check(va.shape[1] == vb.shape[0], "matmul", a, b)
        out = va @ vb

        def bwd(g):
            _accum(a, np.outer(g, vb))
            _accum(b, va.T @ g)
    elif va.ndim == 1 and vb.ndim == 2:
        _shape_check(va.shape[0] == vb.shape[0], "matmul", a, b)
        out = va @ vb

        def bwd(g):
            _accum(a, vb @ g)
            _accum(b, np.outer(va, g))
    else:
        _shape_check(False, "matmul", a, b)
    return Tensor(out, (a, b), bwd)


def add(a, b):
    va, vb = a.value, b.value
    if va.shape == vb.shape:
        def bwd(g):
            _accum(a, g)
            _accum(b, g)
    elif va.ndim == 2 and vb.ndim == 1 and va.shape[1] == vb.shape[0]:
        # matrix + row vector
        def bwd(g):
            _accum(a, g)
            _accum(b, g.sum(axis=0))
    else:
        _shape_check(False, "add", a, b)
    return Tensor(va + vb, (a, b), bwd)


def sub(a, b):
    va, vb = a.value, b.value
    if va.shape == vb.shape:
        def bwd(g):
            _accum(a, g)
            _accum(b, -g)
    elif va.ndim == 2 and vb.ndim == 1 and va.shape[1] == vb.shape[0]:
        def bwd(g):
            _accum(a, g)
            _accum(b, -g.sum(axis=0))
    else:
        _shape_check(False, "sub", a, b)
    return Tensor(va - vb, (a, b), bwd)


def mul(a, b):
    """Elementwise product; shapes must match exactly."""
    va, vb = a.value, b.value
    _shape_check(va.shape == vb.shape, "mul", a, b)

    def bwd(g):
        _accum(a, g * vb)
        _accum(b, g * va)

    return Tensor(va * vb, (a, b), bwd)


def neg(a):
    def bwd(g):
        _accum(a, -g)

    return Tensor(-a.value, (a,), bwd)


def scale(a, k):
    k = float(k)

    def bwd(g):
        _accum(a, g * k)

    return Tensor(a.value * k, (a,), bwd)


def shift(a, c):
    c = float(c)

    def bwd(g):
        _accum(a, g)

    return Tensor(a.value + c, (a,), bwd)


def tanh(a):
    out = np.tanh(a.value)

    def bwd(g):
        _accum(a, g * (1.0 - out * out))

    return Tensor(out, (a,), bwd)


def sigmoid(a):
    out = 1.0 / (1.0 + np.exp(-a.value))

    def bwd(g):
        _accum(a, g * out * (1.0 - out))

    return Tensor(out, (a,), bwd)


def relu(a):
    mask = a.value > 0

    def bwd(g):
        _accum(a, g * mask)

    return Tensor(np.where(mask, a.value, 0.0), (a,), bwd)


def hinge(a):
    """max(0, x) elementwise; the subgradient at exactly 0 is 0."""
    mask = a.value > 0

    def bwd(g):
        _accum(a, g * mask)

    return Tensor(np.where(mask, a.value, 0.0), (a,), bwd)


def log(a):
    if np.any(a.value <= 0):
        raise ValueError("log: input must be strictly positive")
    out = np.log(a.value)

    def bwd(g):
        _accum(a, g / a.value)

    return Tensor(out, (a,), bwd)


def exp(a):
    out = np.exp(a.value)

    def bwd(g):
        _accum(a, g * out)

    return Tensor(out, (a,), bwd)


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input list")
    nd = tensors[0].value.ndim
    _shape_check(all(t.value.ndim == nd for t in tensors), "concat", *tensors)
    _shape_check(axis < nd, "concat", *tensors)
    ref = list(tensors[0].value.shape)
    for t in tensors[1:]:
        other = list(t.value.shape)
        ref[axis] = other[axis] = -1
        _shape_check(other == ref, "concat", *tensors)
    sizes = [t.value.shape[axis] for t in tensors]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * nd
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return Tensor(out, tuple(tensors), bwd)


def mean_rows(a):
    _shape_check(a.value.ndim == 2, "mean-over-rows", a)
    n = a.value.shape[0]

    def bwd(g):
        _accum(a, np.tile(g / n, (n, 1)))

    return Tensor(a.value.mean(axis=0), (a,), bwd)


def sum_all(a):
    def bwd(g):
        _accum(a, np.full_like(a.value, float(g)))

    return Tensor(a.value.sum(), (a,), bwd)


def _l2norm_bwd(y, r, g):
    # d/dv (v / ||v||) applied to upstream g, given y = v/r
    return (g - y * float(np.dot(y, g))) / r


def l2_normalize(a):
    _shape_check(a.value.ndim == 1, "l2-normalize", a)
    r = float(np.linalg.norm(a.value))
    if r == 0.0:
        raise ValueError("l2-normalize: zero vector")
    out = a.value / r

    def bwd(g):
        _accum(a, _l2norm_bwd(out, r, g))

    return Tensor(out, (a,), bwd)


def l2_normalize_rows(a):
    _shape_check(a.value.ndim == 2, "l2-normalize-rows", a)
    r = np.linalg.norm(a.value, axis=1, keepdims=True)
    if np.any(r == 0.0):
        raise ValueError("l2-normalize-rows: zero row")
    out = a.value / r

    def bwd(g):
        inner = (out * g).sum(axis=1, keepdims=True)
        _accum(a, (g - out * inner) / r)

    return Tensor(out, (a,), bwd)


def dot(a, b):
    _shape_check(a.value.ndim == 1 and a.value.shape == b.value.shape, "dot", a, b)

    def bwd(g):
        _accum(a, float(g) * b.value)
        _accum(b, float(g) * a.value)

    return Tensor(np.dot(a.value, b.value), (a, b), bwd)


def vec_max(a):
    """Max over a 1-D tensor; ties send the gradient to the lowest index."""
    _shape_check(a.value.ndim == 1 and a.value.size > 0, "max-over-set", a)
    idx = int(np.argmax(a.value))

    def bwd(g):
        buf = np.zeros_like(a.value)
        buf[idx] = float(g)
        _accum(a, buf)

    return Tensor(a.value[idx], (a,), bwd)


def row_max(a):
    """Per-row max of a matrix; ties resolved to the lowest column index."""
    _shape_check(a.value.ndim == 2 and a.value.shape[1] > 0, "max-over-set", a)
    idx = np.argmax(a.value, axis=1)
    rows = np.arange(a.value.shape[0])

    def bwd(g):
        buf = np.zeros_like(a.value)
        buf[rows, idx] = g
        _accum(a, buf)

    return Tensor(a.value[rows, idx], (a,), bwd)


def max_of(tensors):
    """Max over a list of scalar tensors (lowest index wins ties)."""
    return vec_max(stack_scalars(tensors))


def transpose(a):
    _shape_check(a.value.ndim == 2, "transpose", a)

    def bwd(g):
        _accum(a, g.T)

    return Tensor(a.value.T, (a,), bwd)


def diag(a):
    _shape_check(a.value.ndim == 2 and a.value.shape[0] == a.value.shape[1], "diag", a)

    def bwd(g):
        buf = np.zeros_like(a.value)
        np.fill_diagonal(buf, g)
        _accum(a, buf)

    return Tensor(np.diagonal(a.value).copy(), (a,), bwd)


def gather_rows(a, indices):
    _shape_check(a.value.ndim == 2, "gather-rows", a)
    idx = np.asarray(indices, dtype=np.intp)

    def bwd(g):
        buf = np.zeros_like(a.value)
        np.add.at(buf, idx, g)
        _accum(a, buf)

    return Tensor(a.value[idx], (a,), bwd)


def row(a, i):
    _shape_check(a.value.ndim == 2, "row", a)
    i = int(i)

    def bwd(g):
        buf = np.zeros_like(a.value)
        buf[i] = g
        _accum(a, buf)

    return Tensor(a.value[i].copy(), (a,), bwd)


def at(a, i):
    _shape_check(a.value.ndim == 1, "at", a)
    i = int(i)

    def bwd(g):
        buf = np.zeros_like(a.value)
        buf[i] = float(g)
        _accum(a, buf)

    return Tensor(a.value[i], (a,), bwd)


def stack_rows(tensors):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("stack-rows: empty input list")
    _shape_check(all(t.value.ndim == 1 and t.value.shape == tensors[0].value.shape for t in tensors),
                 "stack-rows", *tensors)

    def bwd(g):
        for i, t in enumerate(tensors):
            _accum(t, g[i])

    return Tensor(np.stack([t.value for t in tensors]), tuple(tensors), bwd)


def stack_scalars(tensors):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("stack-scalars: empty input list")
    _shape_check(all(t.value.shape == () for t in tensors), "stack-scalars", *tensors)

    def bwd(g):
        for i, t in enumerate(tensors):
            _accum(t, g[i])

    return Tensor(np.array([float(t.value) for t in tensors]), tuple(tensors), bwd)


def reshape(a, shape):
    out = a.value.reshape(shape)
    orig = a.value.shape

    def bwd(g):
        _accum(a, g.reshape(orig))

    return Tensor(out, (a,), bwd)


def cosine_distance(a, b):
    """1 - cos(a, b); built from the normalize/dot primitives."""
    return 1.0 - dot(l2_normalize(a), l2_normalize(b))


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy over a 1-D logit vector, numerically stable."""
    _shape_check(logits.value.ndim == 1, "bce-with-logits", logits)
    y = np.asarray(labels, dtype=np.float64)
    _shape_check(y.shape == logits.value.shape, "bce-with-logits", logits, Tensor(y))
    z = logits.value
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def bwd(g):
        p = 1.0 / (1.0 + np.exp(-z))
        _accum(logits, float(g) * (p - y) / n)

    return Tensor(per.mean(), (logits,), bwd)


# ---------------------------------------------------------------------------
# Adam with step-decay learning rate
# ---------------------------------------------------------------------------

class AdamState:
    """Adam moment buffers plus the step-decay schedule.

    Effective learning rate at a given epoch is
    ``base_lr * decay ** (epoch // decay_every)``.
    """

    def __init__(self, params, base_lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 decay=0.1, decay_every=15):
        self.m = {k: np.zeros_like(t.value) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.value) for k, t in params.items()}
        self.step_count = 0
        self.base_lr = base_lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.decay = decay
        self.decay_every = decay_every

    def effective_lr(self, epoch):
        return self.base_lr * self.decay ** (int(epoch) // self.decay_every)


def adam_step(state, params, grads, epoch):
    """One Adam update, in place on the parameter tensors.

    `grads` maps parameter name to gradient array (None entries are
    treated as zero). Raises on non-finite gradients.
    """
    state.step_count += 1
    t = state.step_count
    lr = state.effective_lr(epoch)
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.value)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adam_step: non-finite gradient for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# checkpoints: JSON manifest + raw little-endian float32 payload
# ---------------------------------------------------------------------------

def save_checkpoint(prefix, tensors, meta=None):
    """Write `prefix`.json and `prefix`.bin for named arrays/tensors."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    payload = bytearray()
    for name in sorted(tensors):
        t = tensors[name]
        arr = np.asarray(t.value if isinstance(t, Tensor) else t, dtype="<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": "float32", "offset": offset})
        payload.extend(raw)
        offset += len(raw)
    manifest = {"meta": meta or {}, "payload": prefix.name + ".bin", "tensors": entries}
    prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    prefix.with_suffix(".bin").write_bytes(bytes(payload))


def load_checkpoint(prefix):
    """Read a checkpoint pair; returns (name -> float32 array, meta dict)."""
    prefix = Path(prefix)
    manifest = json.loads(prefix.with_suffix(".json").read_text())
    raw = (prefix.parent / manifest["payload"]).read_bytes()
    out = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=entry["offset"])
        out[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return out, manifest["meta"]


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def rel_error(a, b, floor=1e-7):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def finite_difference_check(build, inputs, h=1e-5):
    """Compare analytic gradients of `build` against central differences.

    `build` maps a dict of leaf Tensors (same keys as `inputs`) to a
    scalar Tensor. Returns the worst relative error over all input
    coordinates.
    """
    leaves = {k: Tensor(np.array(v, dtype=np.float64), trainable=True)
              for k, v in inputs.items()}
    loss = build(leaves)
    backward(loss)
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.value))
                for k, t in leaves.items()}

    def eval_at(bumped_key, flat_index, delta):
        pert = {k: v.value.copy() for k, v in leaves.items()}
        flat = pert[bumped_key].reshape(-1)
        flat[flat_index] += delta
        local = {k: Tensor(v) for k, v in pert.items()}
        return float(build(local).value)

    worst = 0.0
    for key, t in leaves.items():
        numeric = np.zeros_like(t.value)
        flat = numeric.reshape(-1)
        for i in range(flat.size):
            f_plus = eval_at(key, i, +h)
            f_minus = eval_at(key, i, -h)
            flat[i] = (f_plus - f_minus) / (2 * h)
        worst = max(worst, rel_error(analytic[key], numeric))
    return worst
