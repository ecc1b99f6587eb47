"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is a flat tape: every differentiable operation appends one node
to the active :class:`Graph`, and :func:`backward` walks the tape in strictly
reverse insertion order. Gradients accumulate into ``Tensor.grad`` (call
:func:`zero_grad` between backward passes; running backward twice on the same
graph doubles the gradients).

All data is float64, row-major, channels-last for images.
"""

from __future__ import annotations

import weakref

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class GraphError(RuntimeError):
    """Backward was requested for a tensor that is not a scalar on a graph."""


class Tensor:
    """n-d float64 array participating in a reverse-mode differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)  # keeps 0-d scalars 0-d
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._node = None  # (graph, index) of the op that produced this tensor

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("op", "inputs", "out", "vjp")

    def __init__(self, op, inputs, out, vjp):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.vjp = vjp  # grad_out -> tuple of per-input grads (None where not needed)


class Graph:
    """Append-only tape of operation records; also a context manager.

    Entering pushes this graph as the recording target; exiting restores the
    previous one. Ops executed while a ``no_grad`` block is active are not
    recorded at all.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _STACK.append(self)
        return self

    def __exit__(self, *exc):
        _STACK.pop()
        return False


class _NoGrad:
    def __enter__(self):
        _STACK.append(None)
        return self

    def __exit__(self, *exc):
        _STACK.pop()
        return False


def no_grad() -> _NoGrad:
    """Context manager that disables tape recording."""
    return _NoGrad()


_STACK: list = [Graph()]  # bottom entry is the module-default graph


def default_graph() -> Graph:
    return _STACK[0]


def reset_default_graph() -> None:
    """Replace the module-default graph (frees tensors retained by its tape)."""
    _STACK[0] = Graph()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _record(op: str, out_data: np.ndarray, inputs: tuple, vjp) -> Tensor:
    graph = _STACK[-1]
    out = Tensor(out_data)
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        graph.nodes.append(_Node(op, inputs, out, vjp))
        # weakref breaks the tensor->graph->node->tensor cycle so dropped
        # graphs (and the buffers their closures pin) free by refcounting
        out._node = (weakref.ref(graph), len(graph.nodes) - 1)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` of every requires_grad tensor reachable from ``loss``.

    Seeds with 1.0. Walks the loss's graph in reverse insertion order using a
    scratch buffer per tensor, then adds the result into ``.grad``, so repeated
    calls accumulate (two backward passes double every gradient).
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None and not loss.requires_grad:
        raise GraphError("loss is not part of a differentiation graph")

    scratch = {id(loss): np.ones_like(loss.data)}
    tensors = {id(loss): loss}
    if loss._node is not None:
        graph_ref, idx = loss._node
        graph = graph_ref()
        if graph is None:
            raise GraphError("the graph that produced this loss is no longer alive")
        for node in reversed(graph.nodes[: idx + 1]):
            g_out = scratch.get(id(node.out))
            if g_out is None:
                continue
            for t, g in zip(node.inputs, node.vjp(g_out)):
                if g is None:
                    continue
                key = id(t)
                if key in scratch:
                    scratch[key] = scratch[key] + g  # no +=: vjp outputs may alias
                else:
                    scratch[key] = g
                    tensors[key] = t

    for key, t in tensors.items():
        if not t.requires_grad:
            continue
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += scratch[key]


def zero_grad(tensors) -> None:
    """Clear gradients (accumulation restarts from zero)."""
    for t in tensors:
        t.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / reduction ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return _record("add", out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
        )

    return _record("sub", out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return _record("mul", out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    # np.maximum (unlike a mask select) propagates NaN, so divergence is
    # detectable downstream
    mask = a.data > 0
    return _record("relu", np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))  # overflow-safe for both signs
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def log(a: Tensor) -> Tensor:
    return _record("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def absolute(a: Tensor) -> Tensor:
    return _record("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero where the clamp binds."""
    inside = (a.data > lo) & (a.data < hi)
    out = np.clip(a.data, lo, hi)
    return _record("clip", out, (a,), lambda g: (g * inside,))


def tsum(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def vjp(g):
        return (np.broadcast_to(g, a.data.shape),)

    return _record("sum", out, (a,), vjp)


def tmean(a: Tensor) -> Tensor:
    out = np.asarray(a.data.mean())
    n = a.data.size

    def vjp(g):
        return (np.broadcast_to(g / n, a.data.shape),)

    return _record("mean", out, (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _record("reshape", out, (a,), vjp)


def concat(tensors, axis: int) -> Tensor:
    tensors = tuple(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        parts = np.split(g, splits, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, tensors))

    return _record("concat", out, tensors, vjp)


def gather_rows(x: Tensor, idx) -> Tensor:
    """Pick x[i, idx[i]] for every row i."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise ShapeError(f"gather_rows: x {x.shape} vs index {idx.shape}")
    rows = np.arange(x.shape[0])
    out = x.data[rows, idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return _record("gather_rows", out, (x,), vjp)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis of a 2-d tensor (max-shifted)."""
    if x.ndim != 2:
        raise ShapeError(f"softmax expects [batch, classes], got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return ((g - dot) * out,)

    return _record("softmax", out, (x,), vjp)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return _record("matmul", out, (a, b), vjp)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine layer: x @ w + b with gradients for all three inputs."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias {b.shape} incompatible with weight {w.shape}")
    out = x.data @ w.data + b.data

    def vjp(g):
        return (
            g @ w.data.T if x.requires_grad else None,
            x.data.T @ g if w.requires_grad else None,
            g.sum(axis=0) if b.requires_grad else None,
        )

    return _record("dense", out, (x, w, b), vjp)


# ---------------------------------------------------------------------------
# convolution (im2col + GEMM), channels-last
# ---------------------------------------------------------------------------


def _pad_amount(size: int, k: int, stride: int, padding: str) -> tuple:
    # "same": output ceil(size/stride); odd total padding puts the extra
    # pixel on the bottom/right.
    if padding == "valid":
        return 0, 0
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    lo = total // 2
    return lo, total - lo


def _check_padding(padding: str) -> None:
    if padding not in ("same", "valid"):
        raise ContractError(f"padding must be 'same' or 'valid', got {padding!r}")


def _patches(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """im2col: padded [b,Hp,Wp,cin] -> [b*H2*W2, kh*kw*cin].

    1x1 stride-1 kernels return a reshape view of the input (no copy)."""
    b, Hp, Wp, cin = xp.shape
    if kh == 1 and kw == 1 and stride == 1:
        return xp.reshape(b * Hp * Wp, cin)
    h2 = (Hp - kh) // stride + 1
    w2 = (Wp - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # [b, h2, w2, cin, kh, kw]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(b * h2 * w2, kh * kw * cin)


def _scatter_raw(y: np.ndarray, k: np.ndarray, stride: int, hp: int, wp: int) -> np.ndarray:
    # Adjoint of the im2col convolution: one GEMM against the kernel, then
    # col2im (per-tap strided adds) back onto the padded [b,hp,wp,cin] grid.
    b, h2, w2, cout = y.shape
    kh, kw, cin, _ = k.shape
    dcols = y.reshape(b * h2 * w2, cout) @ k.reshape(kh * kw * cin, cout).T
    if kh == 1 and kw == 1 and stride == 1 and (h2, w2) == (hp, wp):
        return dcols.reshape(b, hp, wp, cin)
    dcols = dcols.reshape(b, h2, w2, kh, kw, cin)
    out = np.zeros((b, hp, wp, cin), dtype=y.dtype)
    for u in range(kh):
        for v in range(kw):
            out[:, u : u + h2 * stride : stride, v : v + w2 * stride : stride] += \
                dcols[:, :, :, u, v]
    return out


def _conv_geometry(x_shape, k_shape, stride: int, padding: str):
    b, h, w, cin = x_shape
    kh, kw, kcin, cout = k_shape
    if kcin != cin:
        raise ShapeError(f"conv2d: input {x_shape} has {cin} channels, kernel {k_shape} expects {kcin}")
    pt, pb = _pad_amount(h, kh, stride, padding)
    pl, pr = _pad_amount(w, kw, stride, padding)
    if kh > h + pt + pb or kw > w + pl + pr:
        raise ShapeError(f"conv2d: kernel {k_shape} larger than padded input {x_shape}")
    return pt, pb, pl, pr


def conv2d(x: Tensor, k: Tensor, stride: int = 1, padding: str = "valid") -> Tensor:
    """2-d cross-correlation of [b,h,w,cin] with kernel [kh,kw,cin,cout]."""
    _check_padding(padding)
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d: input {x.shape} and kernel {k.shape} must be 4-d")
    pt, pb, pl, pr = _conv_geometry(x.shape, k.shape, stride, padding)
    b, h, w, cin = x.shape
    kh, kw, _, cout = k.shape
    if pt or pb or pl or pr:
        xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    else:
        xp = x.data
    h2 = (xp.shape[1] - kh) // stride + 1
    w2 = (xp.shape[2] - kw) // stride + 1
    cols = _patches(xp, kh, kw, stride)
    out = (cols @ k.data.reshape(kh * kw * cin, cout)).reshape(b, h2, w2, cout)

    def vjp(g):
        # patches are regathered here rather than captured from the forward
        # pass: pinning the im2col buffers for the graph lifetime costs more
        # (page churn) than one extra gather
        dx = dk = None
        if x.requires_grad:
            dxp = _scatter_raw(g, k.data, stride, xp.shape[1], xp.shape[2])
            dx = dxp[:, pt : pt + h, pl : pl + w] if (pt or pb or pl or pr) else dxp
        if k.requires_grad:
            back_cols = _patches(xp, kh, kw, stride)
            dk = (back_cols.T @ g.reshape(-1, cout)).reshape(k.shape)
        return (dx, dk)

    return _record("conv2d", out, (x, k), vjp)


def conv2d_transpose(x: Tensor, k: Tensor, stride: int = 1, padding: str = "valid",
                     output_size=None) -> Tensor:
    """Adjoint of :func:`conv2d` with the same kernel, stride and padding.

    Maps [b,h2,w2,cout] back to the [b,H,W,cin] grid that a conv2d with this
    kernel/stride/padding would have consumed. ``output_size`` pins (H, W)
    when the stride makes the inverse ambiguous; defaults to the smallest
    valid size ((h2-1)*stride+kh) for "valid" and h2*stride for "same".
    """
    _check_padding(padding)
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d_transpose: input {x.shape} and kernel {k.shape} must be 4-d")
    b, h2, w2, cout = x.shape
    kh, kw, cin, kcout = k.shape
    if kcout != cout:
        raise ShapeError(f"conv2d_transpose: input {x.shape} has {cout} channels, kernel {k.shape} expects {kcout}")
    if output_size is None:
        if padding == "valid":
            output_size = ((h2 - 1) * stride + kh, (w2 - 1) * stride + kw)
        else:
            output_size = (h2 * stride, w2 * stride)
    hh, ww = output_size
    pt, pb, pl, pr = _conv_geometry((b, hh, ww, cin), k.shape, stride, padding)
    hp, wp = hh + pt + pb, ww + pl + pr
    if ((hp - kh) // stride + 1, (wp - kw) // stride + 1) != (h2, w2):
        raise ShapeError(
            f"conv2d_transpose: input {x.shape} is not the conv2d output of "
            f"a {output_size} image with kernel {k.shape} stride {stride} padding {padding!r}"
        )
    full = _scatter_raw(x.data, k.data, stride, hp, wp)
    if pt or pb or pl or pr:
        out = np.ascontiguousarray(full[:, pt : pt + hh, pl : pl + ww])
    else:
        out = full

    def vjp(g):
        if pt or pb or pl or pr:
            gp = np.pad(g, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        else:
            gp = g
        cols = _patches(gp, kh, kw, stride)
        dx = dk = None
        if x.requires_grad:
            dx = (cols @ k.data.reshape(kh * kw * cin, cout)).reshape(x.data.shape)
        if k.requires_grad:
            dk = (cols.T @ x.data.reshape(-1, cout)).reshape(k.shape)
        return (dx, dk)

    return _record("conv2d_transpose", out, (x, k), vjp)


def upsample_nearest(x: Tensor, size) -> Tensor:
    """Nearest-neighbour spatial resize of [b,h,w,c] to (H, W); H >= h, W >= w."""
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest expects [b,h,w,c], got {x.shape}")
    hh, ww = size
    b, h, w, c = x.shape
    rmap = (np.arange(hh) * h) // hh
    cmap = (np.arange(ww) * w) // ww
    out = np.ascontiguousarray(x.data[:, rmap][:, :, cmap])

    def vjp(g):
        rsel = np.zeros((hh, h))
        rsel[np.arange(hh), rmap] = 1.0
        csel = np.zeros((ww, w))
        csel[np.arange(ww), cmap] = 1.0
        t = np.tensordot(rsel, g, axes=(0, 1))        # [h, b, W, c]
        t = np.tensordot(csel, t, axes=(0, 2))        # [w, h, b, c]
        return (np.ascontiguousarray(t.transpose(2, 1, 0, 3)),)

    return _record("upsample_nearest", out, (x,), vjp)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def xavier_init(shape, rng) -> Tensor:
    """Glorot-uniform tensor on +-sqrt(6/(fan_in+fan_out)), requires_grad=True.

    ``rng`` is a seed or numpy Generator. 1-d shapes are rejected: biases are
    zero-initialized instead (:func:`zeros_param`).
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2:
        raise ContractError(f"xavier_init needs >= 2 dims to derive fans, got {shape}")
    rng = np.random.default_rng(rng)
    receptive = int(np.prod(shape[:-2])) if len(shape) > 2 else 1
    fan_in = shape[-2] * receptive
    fan_out = shape[-1] * receptive
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)
