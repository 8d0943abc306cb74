"""Correlation cost volumes and disparity warping.

Patch correlation sums channel inner products over a (2k+1) x (2k+1) window
for every candidate horizontal shift; point-wise correlation applies a 3x3
convolution to each feature stream and then correlates with k = 0.  Reads
outside the feature map contribute zero.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import ops
from .errors import ContractError, DimensionError
from .tensor import Tensor, check_same_shape, make_result

SHIFT_MODES = ("two_sided_stride2", "one_sided_stride1")
NORMALIZE_MODES = ("none", "by_channel_count")


@dataclass(frozen=True)
class CorrelationConfig:
    kernel_half_size: int = 0
    max_range: int = 20
    shift_mode: str = "two_sided_stride2"
    normalize: str = "by_channel_count"

    def __post_init__(self):
        if self.kernel_half_size < 0:
            raise ContractError(f"kernel_half_size must be >= 0, got {self.kernel_half_size}")
        if self.max_range < 1:
            raise ContractError(f"max_range must be >= 1, got {self.max_range}")
        if self.shift_mode not in SHIFT_MODES:
            raise ContractError(f"shift_mode must be one of {SHIFT_MODES}, got {self.shift_mode!r}")
        if self.normalize not in NORMALIZE_MODES:
            raise ContractError(f"normalize must be one of {NORMALIZE_MODES}, got {self.normalize!r}")

    @property
    def shifts(self):
        d = self.max_range
        if self.shift_mode == "two_sided_stride2":
            return tuple(range(-d, d + 1, 2))
        return tuple(range(d))


@dataclass
class CostVolume:
    volume: Tensor
    shift_values: tuple

    def __post_init__(self):
        if self.volume.shape[1] != len(self.shift_values):
            raise DimensionError(
                f"cost volume has {self.volume.shape[1]} channels but {len(self.shift_values)} shifts"
            )


def _correlate(a, b, shifts, k, scale):
    """out[n, s, y, x] = scale * sum_{o, c} a[c, (y, x) + o] * b[c, (y, x + shifts[s]) + o]."""
    n, c, h, w = a.shape
    reach = max(abs(s) for s in shifts)
    ap = np.pad(a, ((0, 0), (0, 0), (k, k), (k, k)))
    bp = np.pad(b, ((0, 0), (0, 0), (k, k), (k + reach, k + reach)))
    out = np.zeros((n, len(shifts), h, w), dtype=a.dtype)
    for si, s in enumerate(shifts):
        acc = out[:, si]
        for oy in range(2 * k + 1):
            for ox in range(2 * k + 1):
                av = ap[:, :, oy : oy + h, ox : ox + w]
                bx = reach + s + ox
                bv = bp[:, :, oy : oy + h, bx : bx + w]
                acc += np.einsum("nchw,nchw->nhw", av, bv)
    if scale != 1.0:
        out *= scale
    return out


def _correlate_backward(g, a, b, shifts, k, scale):
    n, c, h, w = a.shape
    reach = max(abs(s) for s in shifts)
    ap = np.pad(a, ((0, 0), (0, 0), (k, k), (k, k)))
    bp = np.pad(b, ((0, 0), (0, 0), (k, k), (k + reach, k + reach)))
    gap = np.zeros_like(ap)
    gbp = np.zeros_like(bp)
    g = g * scale
    for si, s in enumerate(shifts):
        gs = g[:, si][:, None]
        for oy in range(2 * k + 1):
            for ox in range(2 * k + 1):
                bx = reach + s + ox
                gap[:, :, oy : oy + h, ox : ox + w] += gs * bp[:, :, oy : oy + h, bx : bx + w]
                gbp[:, :, oy : oy + h, bx : bx + w] += gs * ap[:, :, oy : oy + h, ox : ox + w]
    ga = gap[:, :, k : k + h, k : k + w]
    gb = gbp[:, :, k : k + h, k + reach : k + reach + w]
    return np.ascontiguousarray(ga), np.ascontiguousarray(gb)


def correlation_backward(grad_out, f1, f2, cfg):
    """Gradients of :func:`patch_correlation` w.r.t. ``f1`` and ``f2``.

    ``f1`` and ``f2`` are the saved forward inputs (arrays or tensors).
    """
    a = f1.data if isinstance(f1, Tensor) else np.asarray(f1)
    b = f2.data if isinstance(f2, Tensor) else np.asarray(f2)
    g = grad_out.data if isinstance(grad_out, Tensor) else np.asarray(grad_out)
    if g.shape != (a.shape[0], len(cfg.shifts), a.shape[2], a.shape[3]):
        raise DimensionError(f"correlation_backward: gradient shape {g.shape} does not match the cost volume")
    return _correlate_backward(g, a, b, cfg.shifts, cfg.kernel_half_size, _scale(cfg, a.shape[1]))


def _scale(cfg, channels):
    return 1.0 / channels if cfg.normalize == "by_channel_count" else 1.0


def patch_correlation(f1, f2, cfg):
    """Patch correlation cost volume of two (N, C, H, W) feature maps."""
    if f1.ndim != 4:
        raise DimensionError(f"patch_correlation: expected rank-4 features, got shape {f1.shape}")
    check_same_shape(f1, f2, "patch_correlation")
    shifts = cfg.shifts
    k = cfg.kernel_half_size
    scale = _scale(cfg, f1.shape[1])
    out = _correlate(f1.data, f2.data, shifts, k, scale)

    def bw(g):
        return _correlate_backward(g, f1.data, f2.data, shifts, k, scale)

    return CostVolume(make_result(out, (f1, f2), bw, "patch_correlation"), shifts)


def pointwise_correlation(f1, f2, weight, bias=None, cfg=None, weight2=None, bias2=None):
    """3x3 stride-1 convolution on each stream, then correlation with k = 0.

    The second stream reuses ``weight``/``bias`` unless ``weight2`` is given.
    """
    cfg = cfg or CorrelationConfig()
    if weight.shape[2:] != (3, 3):
        raise DimensionError(f"pointwise_correlation: pre-convolution must be 3x3, got {weight.shape[2:]}")
    g1 = ops.conv2d(f1, weight, bias, stride=1, padding=1)
    if weight2 is None:
        weight2, bias2 = weight, bias
    g2 = ops.conv2d(f2, weight2, bias2, stride=1, padding=1)
    return patch_correlation(g1, g2, replace(cfg, kernel_half_size=0))


def _sample_taps(disp, width):
    """Left/right tap indices, weights and in-range masks for x - d sampling."""
    n, _, h, w = disp.shape
    xs = np.arange(w, dtype=disp.dtype)[None, None, None, :]
    u = xs - disp
    i0 = np.floor(u)
    t = (u - i0).astype(disp.dtype)
    i0 = i0.astype(np.int64)
    i1 = i0 + 1
    ok0 = (i0 >= 0) & (i0 < width)
    ok1 = (i1 >= 0) & (i1 < width)
    return i0, i1, t, ok0, ok1


def warp_by_disparity(right, disparity):
    """Resample ``right`` at (x - d(x, y), y) with linear interpolation along x.

    With left-reference disparity this synthesizes the left view.  Taps that
    fall outside the image read as zero.
    """
    if right.ndim != 4 or disparity.ndim != 4:
        raise DimensionError("warp_by_disparity: expected rank-4 image and disparity")
    n, c, h, w = right.shape
    if disparity.shape[1] != 1:
        raise DimensionError(f"warp_by_disparity: disparity channel axis (1) must be 1, got {disparity.shape[1]}")
    for axis in (0, 2, 3):
        if disparity.shape[axis] != right.shape[axis]:
            raise DimensionError(
                f"warp_by_disparity: axis {axis} differs ({disparity.shape[axis]} vs {right.shape[axis]})"
            )
    r = right.data
    d = disparity.data.astype(r.dtype, copy=False)
    i0, i1, t, ok0, ok1 = _sample_taps(d, w)
    j0 = np.clip(i0, 0, w - 1)
    j1 = np.clip(i1, 0, w - 1)
    idx0 = np.broadcast_to(j0, r.shape)
    idx1 = np.broadcast_to(j1, r.shape)
    v0 = np.take_along_axis(r, idx0, axis=3) * ok0
    v1 = np.take_along_axis(r, idx1, axis=3) * ok1
    out = (1 - t) * v0 + t * v1

    def bw(g):
        gr = gd = None
        if right.requires_grad:
            rows = np.arange(n * c * h, dtype=np.int64).reshape(n, c, h, 1) * w
            w0 = (g * (1 - t) * ok0).ravel()
            w1 = (g * t * ok1).ravel()
            flat0 = (rows + idx0).ravel()
            flat1 = (rows + idx1).ravel()
            gr = np.bincount(flat0, weights=w0, minlength=r.size)
            gr += np.bincount(flat1, weights=w1, minlength=r.size)
            gr = gr.reshape(r.shape).astype(r.dtype)
        if disparity.requires_grad:
            gd = -(g * (v1 - v0)).sum(axis=1, keepdims=True).astype(disparity.dtype)
        return gr, gd

    return make_result(np.ascontiguousarray(out, dtype=r.dtype), (right, disparity), bw, "warp_by_disparity")
