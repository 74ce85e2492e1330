"""Reverse-mode automatic differentiation on dense numpy arrays.

The engine is define-by-run: every operation records its inputs and a
backward closure on the output tensor, so the computation graph is the
set of live tensors and is rebuilt on every forward pass.  ``backward()``
walks that graph once in reverse topological order.

Only the layers the supported architectures need are provided: stride-1
convolutions ("same" or "valid" padding), 2x2 pooling with ceil output
semantics, 2x2 nearest-neighbor upsampling, dense layers, relu / sigmoid
/ tanh / softmax, dropout, global average pooling, and the three losses
(binary cross-entropy, MSE, categorical cross-entropy).

Spatial tensors are laid out row-major as (H, W, C) with an optional
leading batch axis; dense inputs are (n,) or (N, n).
"""

from __future__ import annotations

import contextlib
import contextvars

import numpy as np

from .errors import NumericError, ShapeError, StateError

LOG_EPS = 1e-7  # probability clamp before any log

# Per-thread so concurrent inference (oracle queries) cannot clobber a
# training thread's graph construction.
_grad_enabled = contextvars.ContextVar("advkit_grad_enabled", default=True)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure inference)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """Dense n-dimensional array with an optional gradient.

    ``data`` is always a numpy float array (row-major).  ``grad`` is
    filled by ``backward()`` and has the same shape as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        if _grad_enabled.get() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(leaf) into every requires_grad leaf.

        Intermediate gradients are reset on entry, so calling backward
        again on the same graph (after zeroing leaf grads) reproduces
        the same result.
        """
        if self.size != 1:
            raise StateError("backward() requires a scalar (loss) tensor")
        if not self.requires_grad:
            raise StateError("backward() on a tensor with no graph attached")
        topo = _toposort(self)
        for node in topo:
            if node._parents:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        return self

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _toposort(root):
    order, visited = [], set()
    stack = [(root, iter(root._parents))]
    visited.add(id(root))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def _accumulate(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _sum_to(g, shape):
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _coerce(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# -- elementwise arithmetic ---------------------------------------------


def add(a, b):
    a, b = _coerce(a), _coerce(b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _sum_to(g, a.data.shape))
        _accumulate(b, _sum_to(g, b.data.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    out_data = a.data - b.data

    def backward(g):
        _accumulate(a, _sum_to(g, a.data.shape))
        _accumulate(b, _sum_to(-g, b.data.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, _sum_to(g * b.data, a.data.shape))
        _accumulate(b, _sum_to(g * a.data, b.data.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def square(x):
    x = _coerce(x)
    out_data = x.data * x.data

    def backward(g):
        _accumulate(x, 2.0 * x.data * g)

    return Tensor._from_op(out_data, (x,), backward)


def sqrt(x):
    """Elementwise square root; the derivative blows up at exactly 0."""
    x = _coerce(x)
    out_data = np.sqrt(x.data)

    def backward(g):
        _accumulate(x, g * 0.5 / out_data)

    return Tensor._from_op(out_data, (x,), backward)


def tsum(x):
    x = _coerce(x)
    out_data = np.asarray(x.data.sum())

    def backward(g):
        _accumulate(x, np.broadcast_to(g, x.data.shape).copy())

    return Tensor._from_op(out_data, (x,), backward)


def tmean(x):
    x = _coerce(x)
    n = x.data.size
    out_data = np.asarray(x.data.mean())

    def backward(g):
        _accumulate(x, np.broadcast_to(g / n, x.data.shape).copy())

    return Tensor._from_op(out_data, (x,), backward)


def reshape(x, shape):
    x = _coerce(x)
    out_data = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.data.shape))

    return Tensor._from_op(out_data, (x,), backward)


def sum_per_item(x):
    """Sum over every axis except the leading one: (N, ...) -> (N,).

    The per-item reduction used by batched objectives where each row is an
    independent optimization problem.
    """
    x = _coerce(x)
    if x.data.ndim < 2:
        raise ShapeError(f"sum_per_item needs a batch dimension, got {x.shape}")
    axes = tuple(range(1, x.data.ndim))
    out_data = x.data.sum(axis=axes)

    def backward(g):
        expand = (slice(None),) + (None,) * (x.data.ndim - 1)
        _accumulate(x, np.broadcast_to(g[expand], x.data.shape).copy())

    return Tensor._from_op(out_data, (x,), backward)


# -- structural helpers ---------------------------------------------------


def _batched(data, spatial_rank=3):
    """View ``data`` with a leading batch axis; report whether one was added."""
    if data.ndim == spatial_rank:
        return data[None], True
    if data.ndim == spatial_rank + 1:
        return data, False
    raise ShapeError(
        f"expected rank {spatial_rank} or {spatial_rank + 1}, got shape {data.shape}"
    )


def flatten(x):
    """(H,W,C) -> (n,) and (N,H,W,C) -> (N,n)."""
    x = _coerce(x)
    if x.data.ndim == 3:
        shape = (x.data.size,)
    elif x.data.ndim == 4:
        shape = (x.data.shape[0], -1)
    else:
        raise ShapeError(f"flatten expects rank 3 or 4, got {x.data.shape}")
    return reshape(x, shape)


def concat0(tensors):
    """Concatenate along the batch axis."""
    tensors = [_coerce(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=0)
    sizes = [t.data.shape[0] for t in tensors]

    def backward(g):
        start = 0
        for t, n in zip(tensors, sizes):
            _accumulate(t, g[start : start + n])
            start += n

    return Tensor._from_op(out_data, tuple(tensors), backward)


# -- layers ---------------------------------------------------------------


def conv2d(x, kernel, bias, padding="same"):
    """Stride-1 2D convolution (cross-correlation) with odd square kernels.

    "same" zero-pads so the spatial size is preserved; "valid" applies no
    padding (output shrinks by k-1).  Input (N,H,W,Cin) or (H,W,Cin),
    kernel (k,k,Cin,Cout), bias (Cout,).
    """
    x, kernel, bias = _coerce(x), _coerce(kernel), _coerce(bias)
    kh, kw, cin, cout = kernel.data.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"kernel must be odd and square, got {kernel.data.shape}")
    if padding not in ("same", "valid"):
        raise ValueError(f"unknown padding {padding!r}")
    xb, squeezed = _batched(x.data)
    if xb.shape[3] != cin:
        raise ShapeError(
            f"input has {xb.shape[3]} channels but kernel expects {cin}"
        )
    if bias.data.shape != (cout,):
        raise ShapeError(f"bias shape {bias.data.shape} != ({cout},)")
    pad = kh // 2 if padding == "same" else 0
    out, cols = _conv_raw(xb, kernel.data, pad)
    out += bias.data
    n, ho, wo, _ = out.shape
    out_data = out[0] if squeezed else out

    def backward(g):
        gb = g[None] if squeezed else g
        gmat = gb.reshape(-1, cout)
        if kernel.requires_grad:
            dk = cols.reshape(-1, cin * kh * kw).T @ gmat
            dk = dk.reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
            _accumulate(kernel, dk)
        if bias.requires_grad:
            _accumulate(bias, gmat.sum(axis=0))
        if x.requires_grad:
            # dX is the correlation of dY with the rotated kernel, padded
            # so shapes invert exactly (same -> same, valid -> full).
            krot = kernel.data[::-1, ::-1].transpose(0, 1, 3, 2)
            dx, _ = _conv_raw(np.ascontiguousarray(gb), np.ascontiguousarray(krot), kh - 1 - pad)
            _accumulate(x, dx[0] if squeezed else dx)

    return Tensor._from_op(out_data, (x, kernel, bias), backward)


def _conv_raw(xb, kernel, pad):
    """im2col + matmul on plain arrays; returns (output, column matrix)."""
    kh, kw, cin, cout = kernel.shape
    n, h, w, _ = xb.shape
    if pad:
        xb = np.pad(xb, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xb, (kh, kw), axis=(1, 2))
    # win: (N, Ho, Wo, Cin, kh, kw); flattening the last three axes gives
    # channel-major columns, so flatten the kernel the same way.
    ho, wo = win.shape[1], win.shape[2]
    cols = win.reshape(n * ho * wo, cin * kh * kw)
    kmat = kernel.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)
    out = (cols @ kmat).reshape(n, ho, wo, cout)
    return out, cols


def pool2x2(x, mode):
    """2x2 pooling with ceil output size.

    Odd trailing rows/columns form partial windows: max takes the max of
    the real cells, avg divides by the real-cell count.
    """
    if mode not in ("max", "avg"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    x = _coerce(x)
    xb, squeezed = _batched(x.data)
    n, h, w, c = xb.shape
    ho, wo = (h + 1) // 2, (w + 1) // 2
    ph, pw = 2 * ho - h, 2 * wo - w
    if mode == "max":
        pad_val = -np.inf
    else:
        pad_val = 0.0
    if ph or pw:
        xp = np.pad(xb, ((0, 0), (0, ph), (0, pw), (0, 0)), constant_values=pad_val)
    else:
        xp = xb
    win = xp.reshape(n, ho, 2, wo, 2, c)
    if mode == "max":
        flat = win.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    else:
        row_n = np.full(ho, 2, dtype=xb.dtype)
        col_n = np.full(wo, 2, dtype=xb.dtype)
        if ph:
            row_n[-1] = 1
        if pw:
            col_n[-1] = 1
        counts = row_n[:, None] * col_n[None, :]
        out = win.sum(axis=(2, 4)) / counts[None, :, :, None]
    out_data = out[0] if squeezed else out

    def backward(g):
        gb = g[None] if squeezed else g
        if mode == "max":
            one_hot = idx[..., None] == np.arange(4)
            dflat = one_hot * gb[..., None]
            dpad = dflat.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
            dpad = dpad.reshape(n, 2 * ho, 2 * wo, c)
        else:
            per = gb / counts[None, :, :, None]
            dpad = np.repeat(np.repeat(per, 2, axis=1), 2, axis=2)
        dx = dpad[:, :h, :w, :]
        _accumulate(x, dx[0] if squeezed else dx)

    return Tensor._from_op(out_data, (x,), backward)


def upsample2x2(x):
    """Nearest-neighbor 2x upsampling: each cell fills a 2x2 block."""
    x = _coerce(x)
    xb, squeezed = _batched(x.data)
    n, h, w, c = xb.shape
    out = np.repeat(np.repeat(xb, 2, axis=1), 2, axis=2)
    out_data = out[0] if squeezed else out

    def backward(g):
        gb = g[None] if squeezed else g
        dx = gb.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))
        _accumulate(x, dx[0] if squeezed else dx)

    return Tensor._from_op(out_data, (x,), backward)


def global_avg_pool(x):
    """(N,H,W,C) -> (N,C) spatial mean."""
    x = _coerce(x)
    xb, squeezed = _batched(x.data)
    n, h, w, c = xb.shape
    out = xb.mean(axis=(1, 2))
    out_data = out[0] if squeezed else out

    def backward(g):
        gb = g[None] if squeezed else g
        dx = np.broadcast_to(gb[:, None, None, :] / (h * w), (n, h, w, c)).copy()
        _accumulate(x, dx[0] if squeezed else dx)

    return Tensor._from_op(out_data, (x,), backward)


def dense(x, weights, bias):
    """out = x @ W + b for x (n,) or (N,n); these are the pre-activations."""
    x, weights, bias = _coerce(x), _coerce(weights), _coerce(bias)
    nin, nout = weights.data.shape
    xb, squeezed = _batched(x.data, spatial_rank=1)
    if xb.shape[1] != nin:
        raise ShapeError(f"dense input length {xb.shape[1]} != weight rows {nin}")
    if bias.data.shape != (nout,):
        raise ShapeError(f"bias shape {bias.data.shape} != ({nout},)")
    out = xb @ weights.data + bias.data
    out_data = out[0] if squeezed else out

    def backward(g):
        gb = g[None] if squeezed else g
        if weights.requires_grad:
            _accumulate(weights, xb.T @ gb)
        if bias.requires_grad:
            _accumulate(bias, gb.sum(axis=0))
        if x.requires_grad:
            dx = gb @ weights.data.T
            _accumulate(x, dx[0] if squeezed else dx)

    return Tensor._from_op(out_data, (x, weights, bias), backward)


def dropout(x, rate, rng):
    """Inverted dropout: scales kept units by 1/(1-rate) so evaluation
    passes need no rescale.  Call only during training."""
    x = _coerce(x)
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) < keep).astype(x.data.dtype) / keep
    out_data = x.data * mask

    def backward(g):
        _accumulate(x, g * mask)

    return Tensor._from_op(out_data, (x,), backward)


# -- activations ----------------------------------------------------------


def relu(x):
    x = _coerce(x)
    out_data = np.maximum(x.data, 0.0)

    def backward(g):
        _accumulate(x, g * (x.data > 0))

    return Tensor._from_op(out_data, (x,), backward)


def sigmoid(x):
    x = _coerce(x)
    d = x.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accumulate(x, g * out_data * (1.0 - out_data))

    return Tensor._from_op(out_data, (x,), backward)


def tanh(x):
    x = _coerce(x)
    out_data = np.tanh(x.data)

    def backward(g):
        _accumulate(x, g * (1.0 - out_data * out_data))

    return Tensor._from_op(out_data, (x,), backward)


def softmax(x):
    """Softmax over the last axis, with the standard max-shift for stability."""
    x = _coerce(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    out_data = ex / ex.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        _accumulate(x, (g - dot) * out_data)

    return Tensor._from_op(out_data, (x,), backward)


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "softmax": softmax}


def activation(kind, x):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


# -- losses ---------------------------------------------------------------


def _check_loss_shapes(prediction, target):
    if prediction.data.shape != target.data.shape:
        raise ShapeError(
            f"prediction shape {prediction.data.shape} != target shape {target.data.shape}"
        )


def mse_loss(prediction, target):
    """Mean over every element of the squared difference."""
    prediction, target = _coerce(prediction), _coerce(target)
    _check_loss_shapes(prediction, target)
    diff = prediction.data - target.data
    n = diff.size
    out_data = np.asarray((diff * diff).mean())

    def backward(g):
        _accumulate(prediction, (2.0 / n) * diff * g)
        _accumulate(target, (-2.0 / n) * diff * g)

    return Tensor._from_op(out_data, (prediction, target), backward)


def bce_loss(prediction, target):
    """Binary cross-entropy, mean over every element.

    Predictions are clamped into [LOG_EPS, 1-LOG_EPS] before the log; no
    gradient flows through clamped entries.
    """
    prediction, target = _coerce(prediction), _coerce(target)
    _check_loss_shapes(prediction, target)
    t = target.data
    if t.min() < 0.0 or t.max() > 1.0:
        raise ValueError("bce targets must lie in [0, 1]")
    p = np.clip(prediction.data, LOG_EPS, 1.0 - LOG_EPS)
    n = p.size
    out_data = np.asarray(-(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean())
    if not np.isfinite(out_data):
        raise NumericError("bce loss is not finite")

    def backward(g):
        if prediction.requires_grad:
            inside = (prediction.data > LOG_EPS) & (prediction.data < 1.0 - LOG_EPS)
            dp = (-t / p + (1.0 - t) / (1.0 - p)) / n
            _accumulate(prediction, dp * inside * g)

    return Tensor._from_op(out_data, (prediction, target), backward)


def cross_entropy_loss(prediction, target):
    """Categorical cross-entropy against one-hot targets.

    Per example the class terms are summed, then averaged over the batch.
    """
    prediction, target = _coerce(prediction), _coerce(target)
    _check_loss_shapes(prediction, target)
    p2, squeezed = _batched(prediction.data, spatial_rank=1)
    t2 = target.data[None] if squeezed else target.data
    p = np.clip(p2, LOG_EPS, 1.0 - LOG_EPS)
    batch = p.shape[0]
    out_data = np.asarray(-(t2 * np.log(p)).sum() / batch)
    if not np.isfinite(out_data):
        raise NumericError("cross-entropy loss is not finite")

    def backward(g):
        if prediction.requires_grad:
            inside = (p2 > LOG_EPS) & (p2 < 1.0 - LOG_EPS)
            dp = (-t2 / p) * inside / batch * g
            _accumulate(prediction, dp[0] if squeezed else dp)

    return Tensor._from_op(out_data, (prediction, target), backward)


_LOSSES = {"bce": bce_loss, "mse": mse_loss, "cross_entropy": cross_entropy_loss}


def loss(kind, prediction, target):
    try:
        fn = _LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}") from None
    return fn(prediction, target)


# -- reductions used by the attack objectives ------------------------------


def gather_last(x, index):
    """Pick one entry along the last axis per row: out[i] = x[i, index[i]]."""
    x = _coerce(x)
    xb, squeezed = _batched(x.data, spatial_rank=1)
    idx = np.atleast_1d(np.asarray(index, dtype=np.intp))
    rows = np.arange(xb.shape[0])
    out = xb[rows, idx]
    out_data = out[0] if squeezed else out

    def backward(g):
        gb = np.atleast_1d(g)
        dx = np.zeros_like(xb)
        dx[rows, idx] = gb
        _accumulate(x, dx[0] if squeezed else dx)

    return Tensor._from_op(np.asarray(out_data), (x,), backward)


def max_last(x, exclude=None):
    """Max over the last axis, optionally excluding one index per row.

    The gradient routes to the (first) argmax, matching the subgradient.
    """
    x = _coerce(x)
    xb, squeezed = _batched(x.data, spatial_rank=1)
    work = xb
    if exclude is not None:
        idx = np.atleast_1d(np.asarray(exclude, dtype=np.intp))
        work = xb.copy()
        work[np.arange(xb.shape[0]), idx] = -np.inf
    arg = work.argmax(axis=-1)
    rows = np.arange(xb.shape[0])
    out = xb[rows, arg]
    out_data = out[0] if squeezed else out

    def backward(g):
        gb = np.atleast_1d(g)
        dx = np.zeros_like(xb)
        dx[rows, arg] = gb
        _accumulate(x, dx[0] if squeezed else dx)

    return Tensor._from_op(np.asarray(out_data), (x,), backward)
