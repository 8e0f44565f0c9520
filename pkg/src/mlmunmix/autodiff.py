"""Dense float64 tensors with taped reverse-mode differentiation.

The engine is deliberately small: it covers exactly the primitives the
unmixing networks need (bias-free linear maps, valid 1-D/3-D correlation,
max pooling over the last axis, a few pointwise maps, softmax, feature
concatenation, a guarded division, and the spectral-angle loss), plus the
plumbing to replay them backwards.  Everything is float64, shapes are
fixed, and the only broadcasting allowed is a scalar against anything
(``scale_rows`` covers the one per-row case the networks use).

All primitives accept a single sample at the shape stated in their
docstring, or the same shape with one extra leading batch axis.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "active_tape",
    "constant",
    "backward",
    "add",
    "sub",
    "mul",
    "hadamard",
    "scale_rows",
    "dense",
    "conv1d_valid",
    "conv1d_valid_nlc",
    "conv3d_valid",
    "maxpool_lastdim",
    "maxpool_nlc",
    "leaky_relu",
    "tanh",
    "softmax_vec",
    "guarded_div",
    "concat",
    "pick",
    "reshape",
    "sum_all",
    "mean_all",
    "sad_loss",
    "SAD_COS_CLAMP",
]

# Cosine arguments are clamped to [-1 + SAD_COS_CLAMP, 1 - SAD_COS_CLAMP]
# before arccos; keeps the angle and its gradient finite for (anti)parallel
# vectors at the cost of a <= 5e-4 angle floor.
SAD_COS_CLAMP = 1e-7


class Tensor:
    """A fixed-shape float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Arithmetic sugar. Tensor-Tensor ops require equal shapes or a 0-d
    # operand; plain numbers are folded in as unrecorded constants.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return _add_const(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return _add_const(self, -float(other))

    def __rsub__(self, other):
        return _rsub_const(self, float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return _mul_const(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return _mul_const(self, -1.0)


def constant(data) -> Tensor:
    """A tensor that never receives gradients."""
    return Tensor(data, requires_grad=False)


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = _LOCAL.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive applications.

    Creation order is topological order by construction: an operand tensor
    must exist before any node consumes it.  One tape belongs to one
    forward pass; replaying it backwards yields gradients for every
    parameter the recorded loss reaches.
    """

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _tape_stack().pop()
        return False


def _result(inputs: tuple, out_data: np.ndarray, backward_fn: Callable) -> Tensor:
    out = Tensor(out_data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    if out.requires_grad:
        tape = active_tape()
        if tape is not None:
            tape.nodes.append(_Node(inputs, out, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Replay the tape in reverse, accumulating d(loss)/d(tensor).

    ``loss`` must be a 0-d tensor recorded on the tape.  Gradients
    accumulate into ``Tensor.grad`` of the leaf tensors; pass ``params``
    to pre-zero their grads so parameters the loss never reaches end up
    with exact zeros instead of None.
    """
    if loss.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
    produced = {id(n.output) for n in tape.nodes}
    flowing: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(tape.nodes):
        g = flowing.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward_fn(g)):
            if gi is None or not t.requires_grad:
                continue
            if id(t) in produced:
                prev = flowing.get(id(t))
                flowing[id(t)] = gi if prev is None else prev + gi
            else:
                t.grad = gi if t.grad is None else t.grad + gi


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _scalar_ok(a: Tensor, b: Tensor) -> bool:
    return a.shape == b.shape or a.shape == () or b.shape == ()


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    return g.sum() if shape == () and g.shape != () else g


def add(a: Tensor, b: Tensor) -> Tensor:
    if not _scalar_ok(a, b):
        raise ValueError(f"add: shapes {a.shape} and {b.shape} do not match")
    def backward_fn(g):
        return (_reduce_to(g, a.shape) if a.requires_grad else None,
                _reduce_to(g, b.shape) if b.requires_grad else None)
    return _result((a, b), a.data + b.data, backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if not _scalar_ok(a, b):
        raise ValueError(f"sub: shapes {a.shape} and {b.shape} do not match")
    def backward_fn(g):
        return (_reduce_to(g, a.shape) if a.requires_grad else None,
                _reduce_to(-g, b.shape) if b.requires_grad else None)
    return _result((a, b), a.data - b.data, backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if not _scalar_ok(a, b):
        raise ValueError(f"mul: shapes {a.shape} and {b.shape} do not match")
    ad, bd = a.data, b.data
    def backward_fn(g):
        ga = _reduce_to(g * bd, a.shape) if a.requires_grad else None
        gb = _reduce_to(g * ad, b.shape) if b.requires_grad else None
        return (ga, gb)
    return _result((a, b), ad * bd, backward_fn)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equal-shape tensors."""
    if a.shape != b.shape:
        raise ValueError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    return mul(a, b)


def _add_const(x: Tensor, c: float) -> Tensor:
    def backward_fn(g):
        return (g,)
    return _result((x,), x.data + c, backward_fn)


def _rsub_const(x: Tensor, c: float) -> Tensor:
    def backward_fn(g):
        return (-g,)
    return _result((x,), c - x.data, backward_fn)


def _mul_const(x: Tensor, c: float) -> Tensor:
    def backward_fn(g):
        return (g * c,)
    return _result((x,), x.data * c, backward_fn)


def scale_rows(v: Tensor, s: Tensor) -> Tensor:
    """Multiply each last-axis row of ``v`` by its scalar from ``s``.

    ``s`` must have exactly the leading shape of ``v`` (0-d for a single
    vector, length-K for a K-row batch).
    """
    if s.shape != v.shape[:-1]:
        raise ValueError(f"scale_rows: scalars {s.shape} do not index rows of {v.shape}")
    vd, sd = v.data, s.data
    def backward_fn(g):
        gv = g * sd[..., None] if v.requires_grad else None
        gs = (g * vd).sum(-1) if s.requires_grad else None
        return (gv, gs)
    return _result((v, s), vd * sd[..., None], backward_fn)


# ---------------------------------------------------------------------------
# linear and convolutional maps


def dense(x: Tensor, weights: Tensor) -> Tensor:
    """Bias-free linear map: ``out_i = sum_j W[i, j] * x[j]``."""
    W = weights.data
    xd = x.data
    if W.ndim != 2:
        raise ValueError(f"dense: weights must be 2-D, got {W.shape}")
    if xd.ndim not in (1, 2) or xd.shape[-1] != W.shape[1]:
        raise ValueError(f"dense: input {xd.shape} does not conform with weights {W.shape}")
    def backward_fn(g):
        gx = g @ W if x.requires_grad else None
        if weights.requires_grad:
            gW = np.outer(g, xd) if g.ndim == 1 else g.T @ xd
        else:
            gW = None
        return (gx, gW)
    return _result((x, weights), xd @ W.T, backward_fn)


def _windows_nlc(arr: np.ndarray, kw: int) -> np.ndarray:
    """(K, L, C) -> im2col matrix (K * (L-kw+1), kw * C).

    In length-major layout each window is one contiguous (kw * C)-block,
    so the gather runs at copy speed.  Strides are spelled out because
    numpy reports arbitrary ones for size-1 axes.
    """
    nbatch, length, cin = arr.shape
    unit = arr.itemsize
    lout = length - kw + 1
    view = np.lib.stride_tricks.as_strided(
        arr, shape=(nbatch, lout, kw * cin),
        strides=(length * cin * unit, cin * unit, unit),
    )
    return view.reshape(nbatch * lout, kw * cin)


def _corr_nlc(xt: np.ndarray, k: np.ndarray):
    """Forward valid correlation in (K, L, C) layout; returns (out, wmat)."""
    nbatch, length, cin = xt.shape
    cout, _, kw = k.shape
    wmat = _windows_nlc(xt, kw)
    kmat = k.transpose(2, 1, 0).reshape(kw * cin, cout)  # [w*C + c, o] = k[o, c, w]
    out = (wmat @ kmat).reshape(nbatch, length - kw + 1, cout)
    return out, wmat


def _corr_nlc_grads(gt: np.ndarray, wmat: np.ndarray, k: np.ndarray, length: int,
                    need_x: bool, need_k: bool):
    """Backward of :func:`_corr_nlc`; ``gt`` is (K, Lo, Cout)."""
    cout, cin, kw = k.shape
    nbatch, lout = gt.shape[0], gt.shape[1]
    gk = gx = None
    if need_k:
        gk_mat = wmat.T @ gt.reshape(nbatch * lout, cout)  # (kw*C, Cout)
        gk = np.ascontiguousarray(gk_mat.reshape(kw, cin, cout).transpose(2, 1, 0))
    if need_x:
        # full correlation of the padded output grad with flipped kernels
        gpad = np.zeros((nbatch, lout + 2 * (kw - 1), cout))
        gpad[:, kw - 1 : kw - 1 + lout, :] = gt
        gwin = _windows_nlc(gpad, kw)
        kback = np.ascontiguousarray(k[:, :, ::-1].transpose(2, 0, 1)).reshape(kw * cout, cin)
        gx = (gwin @ kback).reshape(nbatch, length, cin)
    return gx, gk


def _check_conv1d_dims(cin_data, length, k):
    if k.ndim != 3:
        raise ValueError(f"conv1d: kernels must be 3-D, got {k.shape}")
    cout, ck, kw = k.shape
    if ck != cin_data:
        raise ValueError(f"conv1d: {cin_data} input channels vs kernels for {ck}")
    if length < kw:
        raise ValueError(f"conv1d: length {length} shorter than kernel {kw}")


def conv1d_valid(x: Tensor, kernels: Tensor) -> Tensor:
    """Valid cross-correlation along the last (spectral) axis, stride 1.

    ``x`` is (C_in, L) and ``kernels`` (C_out, C_in, k); output is
    (C_out, L - k + 1).
    """
    k = kernels.data
    single = x.data.ndim == 2
    if not single and x.data.ndim != 3:
        raise ValueError(f"conv1d_valid: input must be (C,L) or (K,C,L), got {x.shape}")
    xb = x.data[None] if single else x.data
    nbatch, cin, length = xb.shape
    _check_conv1d_dims(cin, length, k)
    xt = np.ascontiguousarray(xb.transpose(0, 2, 1))  # (K, L, C)
    out_nlc, wmat = _corr_nlc(xt, k)
    out = np.ascontiguousarray(out_nlc.transpose(0, 2, 1))

    def backward_fn(g):
        gb = g[None] if single else g  # (K, Cout, Lo)
        gt = np.ascontiguousarray(gb.transpose(0, 2, 1))
        gx, gk = _corr_nlc_grads(gt, wmat, k, length,
                                 x.requires_grad, kernels.requires_grad)
        if gx is not None:
            gx = np.ascontiguousarray(gx.transpose(0, 2, 1))
            if single:
                gx = gx[0]
        return (gx, gk)

    return _result((x, kernels), out if not single else out[0], backward_fn)


def conv1d_valid_nlc(x: Tensor, kernels: Tensor) -> Tensor:
    """Channels-last twin of :func:`conv1d_valid`: input (L, C_in) or
    (K, L, C_in), output (..., L - k + 1, C_out).

    Same math, no layout changes anywhere, which makes it the fast path
    for batched training on a memory-bound host.
    """
    k = kernels.data
    single = x.data.ndim == 2
    if not single and x.data.ndim != 3:
        raise ValueError(f"conv1d_valid_nlc: input must be (L,C) or (K,L,C), got {x.shape}")
    xb = x.data[None] if single else x.data
    nbatch, length, cin = xb.shape
    _check_conv1d_dims(cin, length, k)
    xt = np.ascontiguousarray(xb)
    out, wmat = _corr_nlc(xt, k)

    def backward_fn(g):
        gt = np.ascontiguousarray(g[None] if single else g)  # (K, Lo, Cout)
        gx, gk = _corr_nlc_grads(gt, wmat, k, length,
                                 x.requires_grad, kernels.requires_grad)
        if gx is not None and single:
            gx = gx[0]
        return (gx, gk)

    return _result((x, kernels), out if not single else out[0], backward_fn)


def conv3d_valid(x: Tensor, kernels: Tensor) -> Tensor:
    """Valid 3-D cross-correlation over (row, col, spectral), stride 1.

    ``x`` is (C_in, s, s, L) and ``kernels`` (C_out, C_in, ku, kv, kw).
    """
    k = kernels.data
    if k.ndim != 5:
        raise ValueError(f"conv3d_valid: kernels must be 5-D, got {k.shape}")
    single = x.data.ndim == 4
    if not single and x.data.ndim != 5:
        raise ValueError(f"conv3d_valid: input must be 4-D or batched 5-D, got {x.shape}")
    xb = x.data[None] if single else x.data
    nbatch, cin = xb.shape[:2]
    cout, ck, ku, kv, kw = k.shape
    if ck != cin:
        raise ValueError(f"conv3d_valid: {cin} input channels vs kernels for {ck}")
    for axis, ext in zip((ku, kv, kw), xb.shape[2:]):
        if ext < axis:
            raise ValueError(f"conv3d_valid: extent {ext} shorter than kernel {axis}")
    win = np.lib.stride_tricks.sliding_window_view(xb, (ku, kv, kw), axis=(2, 3, 4))
    out = np.einsum("kcxyzuvw,ocuvw->koxyz", win, k, optimize=True)

    def backward_fn(g):
        gb = g[None] if single else g
        gk = gx = None
        if kernels.requires_grad:
            gk = np.einsum("koxyz,kcxyzuvw->ocuvw", gb, win, optimize=True)
        if x.requires_grad:
            uo, vo, wo = gb.shape[2:]
            gpad = np.zeros((nbatch, cout, uo + 2 * (ku - 1), vo + 2 * (kv - 1), wo + 2 * (kw - 1)))
            gpad[:, :, ku - 1 : ku - 1 + uo, kv - 1 : kv - 1 + vo, kw - 1 : kw - 1 + wo] = gb
            gwin = np.lib.stride_tricks.sliding_window_view(gpad, (ku, kv, kw), axis=(2, 3, 4))
            gx = np.einsum("koxyzuvw,ocuvw->kcxyz", gwin, k[:, :, ::-1, ::-1, ::-1], optimize=True)
            if single:
                gx = gx[0]
        return (gx, gk)

    return _result((x, kernels), out if not single else out[0], backward_fn)


def maxpool_lastdim(x: Tensor, k: int, stride: int) -> Tensor:
    """Windowed maximum along the last axis.

    Output length is ``(L - k) // stride + 1``.  The backward pass routes
    each window's gradient to the first maximal position, so exactly one
    unit of incoming gradient lands per window.
    """
    if k < 1 or stride < 1:
        raise ValueError("maxpool_lastdim: window and stride must be positive")
    xd = x.data
    length = xd.shape[-1]
    if length < k:
        raise ValueError(f"maxpool_lastdim: length {length} shorter than window {k}")
    nwin = (length - k) // stride + 1
    disjoint = stride == k
    if disjoint:
        # non-overlapping windows are a plain reshape of the trimmed array
        xc = np.ascontiguousarray(xd)
        win = xc[..., : nwin * k].reshape(xd.shape[:-1] + (nwin, k))
    else:
        win = np.lib.stride_tricks.sliding_window_view(xd, k, axis=-1)[..., ::stride, :]
    arg = win.argmax(-1)  # first occurrence wins ties
    out = np.take_along_axis(win, arg[..., None], -1)[..., 0]

    def backward_fn(g):
        if not x.requires_grad:
            return (None,)
        gx = np.zeros(xd.shape)  # C-order, so the views below never copy
        if disjoint:
            gview = gx[..., : nwin * k].reshape(gx.shape[:-1] + (nwin, k))
            np.put_along_axis(gview, arg[..., None], np.asarray(g)[..., None], axis=-1)
        else:
            lead = int(np.prod(out.shape[:-1], dtype=np.int64)) if out.ndim > 1 else 1
            rows = np.repeat(np.arange(lead), nwin)
            cols = (np.arange(nwin) * stride + arg.reshape(lead, nwin)).ravel()
            np.add.at(gx.reshape(lead, length), (rows, cols),
                      np.ascontiguousarray(g).reshape(lead, nwin).ravel())
        return (gx,)

    return _result((x,), out, backward_fn)


def maxpool_nlc(x: Tensor, k: int, stride: int) -> Tensor:
    """Windowed maximum over the length axis of (..., L, C) data.

    Channels-last twin of :func:`maxpool_lastdim` for the second-to-last
    axis; restricted to the disjoint case ``stride == k`` the encoders
    use.  Gradient goes to the first maximal position per window.
    """
    if stride != k:
        raise ValueError("maxpool_nlc: only stride == window is supported")
    xd = x.data
    if xd.ndim < 2:
        raise ValueError(f"maxpool_nlc: need (..., L, C) data, got {xd.shape}")
    length = xd.shape[-2]
    if length < k:
        raise ValueError(f"maxpool_nlc: length {length} shorter than window {k}")
    nwin = length // k
    xc = np.ascontiguousarray(xd)
    win = xc[..., : nwin * k, :].reshape(xd.shape[:-2] + (nwin, k, xd.shape[-1]))
    arg = win.argmax(-2)  # first occurrence wins ties
    out = np.take_along_axis(win, arg[..., None, :], -2)[..., 0, :]

    def backward_fn(g):
        if not x.requires_grad:
            return (None,)
        gx = np.zeros(xd.shape)
        gview = gx[..., : nwin * k, :].reshape(gx.shape[:-2] + (nwin, k, gx.shape[-1]))
        np.put_along_axis(gview, arg[..., None, :], np.asarray(g)[..., None, :], axis=-2)
        return (gx,)

    return _result((x,), out, backward_fn)


# ---------------------------------------------------------------------------
# pointwise maps and reductions


def leaky_relu(x: Tensor, alpha: float = 0.01) -> Tensor:
    slope = np.where(x.data >= 0, 1.0, alpha)
    def backward_fn(g):
        return (g * slope,)
    return _result((x,), x.data * slope, backward_fn)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    def backward_fn(g):
        return (g * (1.0 - out * out),)
    return _result((x,), out, backward_fn)


def softmax_vec(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    xd = x.data
    if xd.ndim == 0 or xd.shape[-1] < 1:
        raise ValueError("softmax_vec: need at least one entry")
    e = np.exp(xd - xd.max(-1, keepdims=True))
    out = e / e.sum(-1, keepdims=True)
    def backward_fn(g):
        dot = (g * out).sum(-1, keepdims=True)
        return (out * (g - dot),)
    return _result((x,), out, backward_fn)


def guarded_div(num: Tensor, den: Tensor, floor: float) -> Tensor:
    """Elementwise ``num / max(den, floor)``.

    Where the floor is active the denominator gradient is zero; the
    numerator gradient always uses the clamped denominator.
    """
    if floor <= 0:
        raise ValueError("guarded_div: floor must be positive")
    if num.shape != den.shape:
        raise ValueError(f"guarded_div: shapes {num.shape} and {den.shape} differ")
    clamped = np.maximum(den.data, floor)
    floored = den.data < floor
    nd = num.data
    def backward_fn(g):
        gn = g / clamped if num.requires_grad else None
        gd = np.where(floored, 0.0, -g * nd / (clamped * clamped)) if den.requires_grad else None
        return (gn, gd)
    return _result((num, den), nd / clamped, backward_fn)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Join two feature vectors (or row batches) along the last axis."""
    if a.data.ndim != b.data.ndim or a.data.ndim not in (1, 2):
        raise ValueError(f"concat: need matching 1-D or 2-D inputs, got {a.shape} and {b.shape}")
    if a.data.ndim == 2 and a.shape[0] != b.shape[0]:
        raise ValueError(f"concat: row counts differ, {a.shape} vs {b.shape}")
    na = a.shape[-1]
    def backward_fn(g):
        return (g[..., :na] if a.requires_grad else None,
                g[..., na:] if b.requires_grad else None)
    return _result((a, b), np.concatenate([a.data, b.data], axis=-1), backward_fn)


def pick(x: Tensor, index: int) -> Tensor:
    """Select one entry along the last axis, dropping that axis."""
    def backward_fn(g):
        gx = np.zeros_like(x.data)
        gx[..., index] = g
        return (gx,)
    return _result((x,), x.data[..., index], backward_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    def backward_fn(g):
        return (g.reshape(x.data.shape),)
    return _result((x,), x.data.reshape(shape), backward_fn)


def sum_all(x: Tensor) -> Tensor:
    def backward_fn(g):
        return (np.full_like(x.data, float(g)),)
    return _result((x,), np.asarray(x.data.sum()), backward_fn)


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    def backward_fn(g):
        return (np.full_like(x.data, float(g) / n),)
    return _result((x,), np.asarray(x.data.mean()), backward_fn)


def sad_loss(x: Tensor, xhat: Tensor) -> Tensor:
    """Spectral angle between two vectors: arccos of their clamped cosine.

    For 2-D inputs the angle is computed per row, giving a length-K
    result; reduce with :func:`mean_all` for a batch loss.
    """
    xd, hd = x.data, xhat.data
    if xd.shape != hd.shape or xd.ndim not in (1, 2):
        raise ValueError(f"sad_loss: need matching 1-D or 2-D inputs, got {x.shape} and {xhat.shape}")
    nx = np.linalg.norm(xd, axis=-1)
    nh = np.linalg.norm(hd, axis=-1)
    if np.any(nx == 0) or np.any(nh == 0):
        raise ValueError("sad_loss: zero-norm input")
    raw = (xd * hd).sum(-1) / (nx * nh)
    hi = 1.0 - SAD_COS_CLAMP
    cos = np.clip(raw, -hi, hi)
    out = np.arccos(cos)

    def backward_fn(g):
        live = (raw > -hi) & (raw < hi)
        dcos = np.where(live, -1.0 / np.sqrt(1.0 - cos * cos), 0.0) * g
        inv = 1.0 / (nx * nh)
        gx = gh = None
        if x.requires_grad:
            gx = dcos[..., None] * (hd * inv[..., None] - (cos / (nx * nx))[..., None] * xd)
        if xhat.requires_grad:
            gh = dcos[..., None] * (xd * inv[..., None] - (cos / (nh * nh))[..., None] * hd)
        return (gx, gh)

    return _result((x, xhat), out, backward_fn)
