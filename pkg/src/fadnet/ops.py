"""Differentiable layer operations on (batch, channel, height, width) tensors.

Convolutions are lowered to one BLAS matrix product over an im2col buffer;
input gradients go through the matching col2im scatter.  All padding is
zero padding.
"""

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor, make_result


def _require_rank4(x, what):
    if x.ndim != 4:
        raise DimensionError(f"{what}: expected a rank-4 (batch, channel, height, width) tensor, got shape {x.shape}")


class _ConvGeometry:
    """Polyphase flattened layout for a strided convolution.

    The zero-padded input is split into ``stride**2`` phase images of width
    ``wq``.  In the flattened phase image every kernel tap (i, j) is then a
    contiguous slice of length ``out_h * wq``, so im2col is a handful of
    memcpy-like slice copies.  Output columns ``>= out_w`` are scratch.
    """

    def __init__(self, n, c, h, w, kh, kw, stride, padding):
        self.n, self.c, self.h, self.w = n, c, h, w
        self.kh, self.kw, self.s, self.p = kh, kw, stride, padding
        self.out_h = conv_output_size(h, kh, stride, padding)
        self.out_w = conv_output_size(w, kw, stride, padding)
        if self.out_h < 1 or self.out_w < 1:
            raise DimensionError(f"kernel {kh}x{kw} larger than padded input {h}x{w}")
        s = stride
        self.hq = -(-(h + 2 * padding) // s) + 1
        self.wq = -(-(w + 2 * padding) // s)
        self.length = self.out_h * self.wq
        self.taps = [(i, j, (i % s, j % s), (i // s) * self.wq + j // s) for i in range(kh) for j in range(kw)]

    def im2col(self, x):
        n, c, s = self.n, self.c, self.s
        hp, wp = self.hq * s, self.wq * s
        xp = np.zeros((n, c, hp, wp), dtype=x.dtype)
        xp[:, :, self.p : self.p + self.h, self.p : self.p + self.w] = x
        phases = {}
        for a in range(s):
            for b in range(s):
                phases[a, b] = np.ascontiguousarray(xp[:, :, a::s, b::s]).reshape(n, c, self.hq * self.wq)
        cols = np.empty((n, c, self.kh * self.kw, self.length), dtype=x.dtype)
        for t, (_, _, ph, off) in enumerate(self.taps):
            cols[:, :, t] = phases[ph][:, :, off : off + self.length]
        return cols.reshape(n, c * self.kh * self.kw, self.length)

    def col2im(self, cols):
        n, c, s = self.n, self.c, self.s
        cols = cols.reshape(n, c, self.kh * self.kw, self.length)
        phases = {}
        for a in range(s):
            for b in range(s):
                phases[a, b] = np.zeros((n, c, self.hq * self.wq), dtype=cols.dtype)
        for t, (_, _, ph, off) in enumerate(self.taps):
            phases[ph][:, :, off : off + self.length] += cols[:, :, t]
        xp = np.empty((n, c, self.hq * s, self.wq * s), dtype=cols.dtype)
        for (a, b), flat in phases.items():
            xp[:, :, a::s, b::s] = flat.reshape(n, c, self.hq, self.wq)
        return np.ascontiguousarray(xp[:, :, self.p : self.p + self.h, self.p : self.p + self.w])

    def to_ext(self, y):
        n, o = y.shape[:2]
        ext = np.zeros((n, o, self.out_h, self.wq), dtype=y.dtype)
        ext[..., : self.out_w] = y
        return ext.reshape(n, o, self.length)

    def from_ext(self, y):
        n, o = y.shape[:2]
        return np.ascontiguousarray(y.reshape(n, o, self.out_h, self.wq)[..., : self.out_w])


def _batched_outer(a, b):
    """sum_n a[n] @ b[n].T for (N, P, L) and (N, Q, L)."""
    acc = a[0] @ b[0].T
    for i in range(1, a.shape[0]):
        acc += a[i] @ b[i].T
    return acc


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation of ``x`` (N, C, H, W) with ``weight`` (O, C, kH, kW)."""
    _require_rank4(x, "conv2d input")
    _require_rank4(weight, "conv2d weight")
    if stride < 1:
        raise ContractError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ContractError(f"conv2d: padding must be >= 0, got {padding}")
    n, c, h, w = x.shape
    o, wc, kh, kw = weight.shape
    if wc != c:
        raise DimensionError(f"conv2d: channel axis (1) mismatch, input has {c} channels but weight expects {wc}")
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"conv2d: bias axis 0 must have {o} entries, got shape {bias.shape}")
    geo = _ConvGeometry(n, c, h, w, kh, kw, stride, padding)
    cols = geo.im2col(x.data)
    w2 = weight.data.reshape(o, c * kh * kw)
    out = geo.from_ext(np.matmul(w2, cols))
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        gx = gw = gb = None
        ge = geo.to_ext(g)
        if x.requires_grad:
            gx = geo.col2im(np.matmul(w2.T, ge))
        if weight.requires_grad:
            gw = _batched_outer(ge, cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, bw, "conv2d")


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0):
    """Transposed convolution; ``weight`` is (C_in, C_out, kH, kW).

    The forward map is the input-gradient of :func:`conv2d` with the same
    weight, so the two operations are adjoint.
    """
    _require_rank4(x, "conv_transpose2d input")
    _require_rank4(weight, "conv_transpose2d weight")
    if stride < 1:
        raise ContractError(f"conv_transpose2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ContractError(f"conv_transpose2d: padding must be >= 0, got {padding}")
    n, c, h, w = x.shape
    wc, o, kh, kw = weight.shape
    if wc != c:
        raise DimensionError(f"conv_transpose2d: channel axis (1) mismatch, input has {c} channels but weight expects {wc}")
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"conv_transpose2d: bias axis 0 must have {o} entries, got shape {bias.shape}")
    out_h = (h - 1) * stride - 2 * padding + kh
    out_w = (w - 1) * stride - 2 * padding + kw
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"conv_transpose2d: padding {padding} leaves an empty output")
    # geometry of the conv2d that maps the output back onto the input grid
    geo = _ConvGeometry(n, o, out_h, out_w, kh, kw, stride, padding)
    w2 = weight.data.reshape(c, o * kh * kw)
    xe = geo.to_ext(x.data)
    out = geo.col2im(np.matmul(w2.T, xe))
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        gx = gw = gb = None
        cols = geo.im2col(g)
        if x.requires_grad:
            gx = geo.from_ext(np.matmul(w2, cols))
        if weight.requires_grad:
            gw = _batched_outer(xe, cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, inputs, bw, "conv_transpose2d")


def leaky_relu(x, negative_slope=0.1):
    slope = np.asarray(negative_slope, dtype=x.dtype)
    positive = x.data >= 0
    out = np.where(positive, x.data, x.data * slope)

    def bw(g):
        return (np.where(positive, g, g * slope),)

    return make_result(out, (x,), bw, "leaky_relu")


def relu(x):
    positive = x.data > 0
    out = np.where(positive, x.data, 0).astype(x.dtype)
    return make_result(out, (x,), lambda g: (np.where(positive, g, 0).astype(x.dtype),), "relu")


def concat_channels(parts):
    if not parts:
        raise ContractError("concat_channels needs at least one tensor")
    for p in parts:
        _require_rank4(p, "concat_channels part")
    ref = parts[0].shape
    for p in parts[1:]:
        for axis in (0, 2, 3):
            if p.shape[axis] != ref[axis]:
                raise DimensionError(f"concat_channels: axis {axis} differs ({p.shape[axis]} vs {ref[axis]})")
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=1)

    def bw(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return make_result(out, tuple(parts), bw, "concat_channels")


def crop(x, height, width):
    """Keep the top-left ``height`` x ``width`` window."""
    _require_rank4(x, "crop")
    if height > x.shape[2] or width > x.shape[3]:
        raise DimensionError(f"crop {height}x{width} exceeds input {x.shape[2]}x{x.shape[3]}")
    out = np.ascontiguousarray(x.data[:, :, :height, :width])

    def bw(g):
        full = np.zeros(x.shape, dtype=x.dtype)
        full[:, :, :height, :width] = g
        return (full,)

    return make_result(out, (x,), bw, "crop")


def upsample_matrix(n, dtype=np.float64):
    """(2n, n) linear-interpolation matrix for half-pixel-centred 2x upsampling.

    Output sample ``o`` sits at input coordinate ``(o + 0.5) / 2 - 0.5``,
    clamped to the valid range, so every row sums to one.
    """
    m = np.zeros((2 * n, n), dtype=dtype)
    for o in range(2 * n):
        src = min(max((o + 0.5) / 2.0 - 0.5, 0.0), n - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n - 1)
        t = src - i0
        m[o, i0] += 1.0 - t
        m[o, i1] += t
    return m


def bilinear_upsample2x(x):
    _require_rank4(x, "bilinear_upsample2x")
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise DimensionError("bilinear_upsample2x: empty spatial dims")
    mh = upsample_matrix(h, x.dtype)
    mw = upsample_matrix(w, x.dtype)
    out = np.ascontiguousarray(np.matmul(np.matmul(mh, x.data), mw.T))

    def bw(g):
        return (np.matmul(np.matmul(mh.T, g), mw),)

    return make_result(out, (x,), bw, "bilinear_upsample2x")


def avgpool_downsample(x, factor):
    _require_rank4(x, "avgpool_downsample")
    if factor < 1:
        raise ContractError(f"avgpool_downsample: factor must be >= 1, got {factor}")
    n, c, h, w = x.shape
    if h % factor:
        raise DimensionError(f"avgpool_downsample: height (axis 2) {h} not divisible by {factor}")
    if w % factor:
        raise DimensionError(f"avgpool_downsample: width (axis 3) {w} not divisible by {factor}")
    if factor == 1:
        return x
    out = x.data.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))
    inv = 1.0 / (factor * factor)

    def bw(g):
        return (np.repeat(np.repeat(g * inv, factor, axis=2), factor, axis=3).astype(x.dtype),)

    return make_result(out.astype(x.dtype), (x,), bw, "avgpool_downsample")


def as_tensor(value, requires_grad=False, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=requires_grad, dtype=dtype)


def concat_batch(parts):
    """Stack tensors along the batch axis (used to run shared-weight twin streams once)."""
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=0)

    def bw(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return make_result(out, tuple(parts), bw, "concat_batch")


def batch_slice(x, start, stop):
    out = np.ascontiguousarray(x.data[start:stop])

    def bw(g):
        full = np.zeros(x.shape, dtype=x.dtype)
        full[start:stop] = g
        return (full,)

    return make_result(out, (x,), bw, "batch_slice")


def absdiff(a, b):
    diff = a.data - b.data
    sign = np.sign(diff).astype(a.dtype)
    return make_result(np.abs(diff), (a, b), lambda g: (g * sign, -g * sign), "absdiff")
