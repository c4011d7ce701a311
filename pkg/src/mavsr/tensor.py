"""Minimal dense tensor engine with reverse-mode differentiation.

Covers exactly the operator set needed by the anchor-guidance blocks:
depthwise/pointwise/strided convolutions, max pooling, SiLU/GELU, softmax,
matmul, layout ops, layer norm and 3-axis rotary embeddings. Forward runs in
float32 by default; gradient checking runs the same graph in float64.

Every op records its backward closure on the result when any input requires
gradients; ``backward`` walks the recorded graph in reverse topological order.
No broadcasting is performed except bias addition - mismatched shapes are
hard errors so wiring bugs surface immediately.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from . import _kernels
from .errors import ShapeMismatch

ROPE_BASE = 10000.0


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _result(data: np.ndarray, parents: Sequence[Tensor], grad_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


def backward(output: Tensor) -> None:
    """Reverse-mode sweep from a scalar output; fills .grad on graph leaves."""
    if output.data.ndim != 0:
        raise ShapeMismatch("backward starts from a scalar tensor")
    if not output.requires_grad:
        return
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                stack.append((p, False))
    output.grad = np.ones_like(output.data)
    for node in reversed(topo):
        if node._grad_fn is not None:
            node._grad_fn(node.grad)


# ---------------------------------------------------------------------------
# Elementwise and layout ops


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _result(a.data + b.data, (a, b), grad_fn)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b with b broadcast over all leading axes (the only broadcast allowed)."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")

    def grad_fn(g):
        if x.requires_grad:
            x._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.reshape(-1, b.shape[0]).sum(axis=0))

    return _result(x.data + b.data, (x, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _result(a.data * b.data, (a, b), grad_fn)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)

    def grad_fn(g):
        if x.requires_grad:
            x._accumulate(g * s)

    return _result(x.data * np.asarray(s, dtype=x.data.dtype), (x,), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim not in (2, 3) or b.data.ndim != a.data.ndim:
        raise ShapeMismatch(f"matmul: need matching 2-D or 3-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def grad_fn(g):
        if a.requires_grad:
            a._accumulate(np.matmul(g, b.data.swapaxes(-1, -2)))
        if b.requires_grad:
            b._accumulate(np.matmul(a.data.swapaxes(-1, -2), g))

    return _result(np.matmul(a.data, b.data), (a, b), grad_fn)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def grad_fn(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.shape))

    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot reshape {x.shape} to {shape}") from exc
    return _result(out, (x,), grad_fn)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)

    def grad_fn(g):
        if x.requires_grad:
            x._accumulate(g.transpose(inv))

    return _result(x.data.transpose(axes), (x,), grad_fn)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    if not xs:
        raise ShapeMismatch("concat of an empty list")
    sizes = [t.shape[axis] for t in xs]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: incompatible shapes {[t.shape for t in xs]}") from exc
    return _result(out, tuple(xs), grad_fn)


def split(x: Tensor, axis: int, sizes: Sequence[int]) -> list[Tensor]:
    if sum(sizes) != x.shape[axis]:
        raise ShapeMismatch(f"split sizes {sizes} do not cover axis of extent {x.shape[axis]}")
    offsets = np.cumsum([0] + list(sizes))
    outs = []
    for lo, hi in zip(offsets[:-1], offsets[1:]):
        idx = [slice(None)] * x.data.ndim
        idx[axis] = slice(int(lo), int(hi))
        idx = tuple(idx)

        def grad_fn(g, idx=idx):
            if x.requires_grad:
                buf = np.zeros_like(x.data)
                buf[idx] = g
                x._accumulate(buf)

        outs.append(_result(x.data[idx].copy(), (x,), grad_fn))
    return outs


def sum_all(x: Tensor) -> Tensor:
    def grad_fn(g):
        if x.requires_grad:
            x._accumulate(np.full_like(x.data, g))

    return _result(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), grad_fn)


# ---------------------------------------------------------------------------
# Activations, softmax, layer norm


def silu(x: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-x.data))

    def grad_fn(g):
        if x.requires_grad:
            x._accumulate(g * sig * (1.0 + x.data * (1.0 - sig)))

    return _result(x.data * sig, (x,), grad_fn)


def gelu(x: Tensor) -> Tensor:
    """Exact erf-form GELU: x * Phi(x)."""
    phi = 0.5 * (1.0 + erf(x.data / np.sqrt(2.0)))

    def grad_fn(g):
        if x.requires_grad:
            pdf = np.exp(-0.5 * x.data * x.data) / np.sqrt(2.0 * np.pi)
            x._accumulate(g * (phi + x.data * pdf))

    return _result((x.data * phi).astype(x.data.dtype), (x,), grad_fn)


def softmax_lastdim(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=-1, keepdims=True)
            x._accumulate(y * (g - dot))

    return _result(y.astype(x.data.dtype), (x,), grad_fn)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch(f"layernorm: gain/bias must be ({d},)")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv

    def grad_fn(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gx - m1 - xhat * m2))

    return _result((xhat * gain.data + bias.data).astype(x.data.dtype), (x, gain, bias), grad_fn)


# ---------------------------------------------------------------------------
# Convolutions and pooling


def _as_4d(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.data.ndim == 3:
        return x.data[:, None], True
    if x.data.ndim == 4:
        return x.data, False
    raise ShapeMismatch(f"{op}: expected [C,H,W] or [C,F,H,W], got {x.shape}")


def dconv3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-channel 3x3 convolution, zero padding 1; the F axis acts as batch."""
    x4, squeezed = _as_4d(x, "dconv3x3")
    c = x4.shape[0]
    if w.shape != (c, 3, 3) or b.shape != (c,):
        raise ShapeMismatch(f"dconv3x3: weights {w.shape}/{b.shape} do not match {c} channels")
    xc = np.ascontiguousarray(x4)
    out = _kernels.dconv3x3_forward(
        xc, np.ascontiguousarray(w.data), np.ascontiguousarray(b.data)
    )

    def grad_fn(g):
        g4 = g[:, None] if squeezed else g
        g4 = np.ascontiguousarray(g4)
        if x.requires_grad:
            wf = np.ascontiguousarray(w.data[:, ::-1, ::-1])
            zb = np.zeros(c, dtype=g4.dtype)
            gx = _kernels.dconv3x3_forward(g4, wf, zb)
            x._accumulate(gx[:, 0] if squeezed else gx)
        if w.requires_grad:
            hh, ww = x4.shape[2], x4.shape[3]
            pad = np.zeros((c, x4.shape[1], hh + 2, ww + 2), dtype=x4.dtype)
            pad[:, :, 1:-1, 1:-1] = x4
            gw = np.empty((c, 3, 3), dtype=w.data.dtype)
            for ky in range(3):
                for kx in range(3):
                    gw[:, ky, kx] = np.einsum(
                        "cnij,cnij->c", g4, pad[:, :, ky : ky + hh, kx : kx + ww]
                    )
            w._accumulate(gw)
        if b.requires_grad:
            b._accumulate(g4.sum(axis=(1, 2, 3)))

    return _result(out[:, 0] if squeezed else out, (x, w, b), grad_fn)


def pconv1x1(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-position channel mix: out[o, ...] = sum_i w[o, i] x[i, ...] + b[o]."""
    if x.data.ndim < 2:
        raise ShapeMismatch(f"pconv1x1: need a channel axis plus spatial axes, got {x.shape}")
    cin = x.shape[0]
    if w.data.ndim != 2 or w.shape[1] != cin or b.shape != (w.shape[0],):
        raise ShapeMismatch(f"pconv1x1: weights {w.shape}/{b.shape} do not match Cin={cin}")
    cout = w.shape[0]
    flat = x.data.reshape(cin, -1)
    out = (w.data @ flat + b.data[:, None]).reshape((cout,) + x.shape[1:])

    def grad_fn(g):
        gf = g.reshape(cout, -1)
        if x.requires_grad:
            x._accumulate((w.data.T @ gf).reshape(x.shape))
        if w.requires_grad:
            w._accumulate(gf @ flat.T)
        if b.requires_grad:
            b._accumulate(gf.sum(axis=1))

    return _result(out.astype(x.data.dtype), (x, w, b), grad_fn)


def tconv2x2s2(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """2x2 convolution with stride 2 (halves the spatial extents)."""
    x4, squeezed = _as_4d(x, "tconv2x2s2")
    cin, n, h, wid = x4.shape
    if h % 2 or wid % 2:
        raise ShapeMismatch(f"tconv2x2s2: spatial extents must be even, got {h}x{wid}")
    if w.data.ndim != 4 or w.shape[1:] != (cin, 2, 2) or b.shape != (w.shape[0],):
        raise ShapeMismatch(f"tconv2x2s2: weights {w.shape}/{b.shape} do not match Cin={cin}")
    cout = w.shape[0]
    xv = x4.reshape(cin, n, h // 2, 2, wid // 2, 2)
    out = np.einsum("oiab,inhawb->onhw", w.data, xv) + b.data[:, None, None, None]
    out = out.astype(x.data.dtype)

    def grad_fn(g):
        g4 = g[:, None] if squeezed else g
        if x.requires_grad:
            gxv = np.einsum("oiab,onhw->inhawb", w.data, g4)
            gx = gxv.reshape(cin, n, h, wid)
            x._accumulate(gx[:, 0] if squeezed else gx)
        if w.requires_grad:
            w._accumulate(np.einsum("onhw,inhawb->oiab", g4, xv))
        if b.requires_grad:
            b._accumulate(g4.sum(axis=(1, 2, 3)))

    return _result(out[:, 0] if squeezed else out, (x, w, b), grad_fn)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties resolve to the first window element."""
    x4, squeezed = _as_4d(x, "maxpool2")
    c, n, h, w = x4.shape
    if h % 2 or w % 2:
        raise ShapeMismatch(f"maxpool2: spatial extents must be even, got {h}x{w}")
    win = x4.reshape(c, n, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = np.ascontiguousarray(win).reshape(c, n, h // 2, w // 2, 4)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        g4 = g[:, None] if squeezed else g
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g4[..., None], axis=-1)
        gx = gflat.reshape(c, n, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        gx = gx.reshape(c, n, h, w)
        x._accumulate(gx[:, 0] if squeezed else gx)

    return _result(out[:, 0] if squeezed else out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# Rotary position embedding (3 axes)


def rope_bands(dim: int) -> tuple[int, int, int]:
    """Partition a token dimension into (temporal, height, width) bands.

    The temporal band takes dim/2 rounded down to even; the spatial axes split
    the remainder evenly. Every band must be even (pairwise rotations).
    """
    if dim % 2:
        raise ShapeMismatch(f"rope: token dim must be even, got {dim}")
    bt = (dim // 2) - ((dim // 2) % 2)
    rem = dim - bt
    bh = rem // 2
    bw = rem - bh
    if bh % 2 or bw % 2:
        raise ShapeMismatch(f"rope: spatial bands ({bh}, {bw}) must be even for dim {dim}")
    return bt, bh, bw


def _rope_tables(positions: np.ndarray, dim: int, dtype):
    bands = rope_bands(dim)
    cos_parts = []
    sin_parts = []
    for axis, band in enumerate(bands):
        if band == 0:
            continue
        k = np.arange(band // 2, dtype=np.float64)
        inv = ROPE_BASE ** (-2.0 * k / band)
        ang = positions[:, axis : axis + 1].astype(np.float64) * inv[None, :]
        cos_parts.append(np.cos(ang))
        sin_parts.append(np.sin(ang))
    cos = np.concatenate(cos_parts, axis=1).astype(dtype)
    sin = np.concatenate(sin_parts, axis=1).astype(dtype)
    return cos, sin


def rope_apply(x: Tensor, positions) -> Tensor:
    """Rotate feature pairs of x[N, D] by per-token (t, h, w) integer positions."""
    pos = np.asarray(positions)
    if x.data.ndim != 2 or pos.shape != (x.shape[0], 3):
        raise ShapeMismatch(f"rope: got tokens {x.shape} and positions {pos.shape}")
    cos, sin = _rope_tables(pos, x.shape[1], x.data.dtype)
    xe = x.data[:, 0::2]
    xo = x.data[:, 1::2]
    out = np.empty_like(x.data)
    out[:, 0::2] = xe * cos - xo * sin
    out[:, 1::2] = xe * sin + xo * cos

    def grad_fn(g):
        if x.requires_grad:
            ge = g[:, 0::2]
            go = g[:, 1::2]
            gx = np.empty_like(g)
            gx[:, 0::2] = ge * cos + go * sin
            gx[:, 1::2] = -ge * sin + go * cos
            x._accumulate(gx)

    return _result(out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    The function is evaluated in float64 regardless of the input dtype; the
    caller must ensure any internal parameters are float64 as well.
    """
    base = x.data.astype(np.float64)
    xt = Tensor(base.copy(), requires_grad=True)
    out = f(xt)
    if out.data.ndim != 0:
        raise ShapeMismatch("grad_check target must return a scalar")
    backward(out)
    analytic = xt.grad if xt.grad is not None else np.zeros_like(base)

    numeric = np.empty_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tensor(base.copy())).data)
        flat[i] = orig - eps
        lo = float(f(Tensor(base.copy())).data)
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


# ---------------------------------------------------------------------------
# ASCII dump format for golden tests and checkpoints


def dump_tensor(t: Tensor | np.ndarray, path) -> None:
    """Header ``ndim d0 d1 ...`` then one value per line, 9 significant digits."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    with open(path, "w") as fh:
        fh.write(" ".join([str(arr.ndim)] + [str(d) for d in arr.shape]) + "\n")
        for v in arr.reshape(-1):
            fh.write(f"{float(v):.9g}\n")


def load_tensor(path, dtype=np.float32) -> Tensor:
    with open(path) as fh:
        header = fh.readline().split()
        ndim = int(header[0])
        shape = tuple(int(d) for d in header[1 : 1 + ndim])
        values = [float(line) for line in fh if line.strip()]
    arr = np.array(values, dtype=dtype).reshape(shape)
    return Tensor(arr)
