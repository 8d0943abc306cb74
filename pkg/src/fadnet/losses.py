"""Multi-scale smooth-L1 supervision and disparity metrics."""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor, make_result

MAX_DISPARITY = 192.0

# Per-round scale weights w_0..w_6 (finest first) and epoch budgets.
ROUND_SCALE_WEIGHTS = (
    (0.32, 0.16, 0.08, 0.04, 0.02, 0.01, 0.005),
    (0.6, 0.32, 0.08, 0.04, 0.02, 0.01, 0.005),
    (0.8, 0.16, 0.04, 0.02, 0.01, 0.005, 0.0025),
    (1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
)
ROUND_EPOCHS = (20, 20, 20, 30)


class EmptyMaskWarning(UserWarning):
    """A loss or metric was evaluated over zero valid pixels and returned 0."""


@dataclass(frozen=True)
class LossWeightSchedule:
    rounds: tuple  # ((w_0, ..., w_6), epochs) per round

    def __post_init__(self):
        for weights, epochs in self.rounds:
            if len(weights) != 7:
                raise ContractError(f"each round needs 7 scale weights, got {len(weights)}")
            if epochs < 1:
                raise ContractError(f"each round needs at least one epoch, got {epochs}")

    @classmethod
    def default(cls):
        return cls(tuple(zip(ROUND_SCALE_WEIGHTS, ROUND_EPOCHS)))

    @classmethod
    def abbreviated(cls, epochs=(5, 5, 5, 8)):
        return cls(tuple(zip(ROUND_SCALE_WEIGHTS, tuple(epochs))))

    @property
    def num_rounds(self):
        return len(self.rounds)

    def weights(self, round_index):
        return self.rounds[round_index - 1][0]

    def epochs(self, round_index):
        return self.rounds[round_index - 1][1]


def smooth_l1(x):
    """0.5 x^2 where |x| < 1, |x| - 0.5 elsewhere (scalars or arrays)."""
    a = np.abs(x)
    out = np.where(a < 1, 0.5 * a * a, a - 0.5)
    return out.item() if np.ndim(out) == 0 else out


def validity_mask(gt, max_disparity=MAX_DISPARITY, allow_zero=False):
    """Valid iff the ground truth is finite, positive and at most ``max_disparity``.

    ``allow_zero`` accepts gt == 0 for sources that mark missing pixels some
    other way (inf in PFM, an explicit mask) instead of with a zero code.
    """
    gt = np.asarray(gt)
    with np.errstate(invalid="ignore"):
        low = gt >= 0 if allow_zero else gt > 0
        return np.isfinite(gt) & low & (gt <= max_disparity)


def _array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def scale_loss(pred, gt, mask=None):
    """Mean smooth-L1 of ``gt - pred`` over valid pixels, as a differentiable scalar."""
    gt = _array(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"scale_loss: prediction {pred.shape} and ground truth {gt.shape} differ")
    mask = validity_mask(gt) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != gt.shape:
        raise DimensionError(f"scale_loss: mask {mask.shape} and ground truth {gt.shape} differ")
    count = int(mask.sum())
    if count == 0:
        warnings.warn("scale_loss: no valid pixels, returning 0", EmptyMaskWarning, stacklevel=2)
        zero = np.zeros((), dtype=pred.dtype)
        return make_result(zero, (pred,), lambda g: (np.zeros(pred.shape, pred.dtype),), "scale_loss")
    diff = np.where(mask, pred.data - np.where(mask, gt, 0).astype(pred.dtype), 0)
    a = np.abs(diff)
    per_pixel = np.where(a < 1, 0.5 * diff * diff, a - 0.5)
    value = np.asarray(per_pixel.sum() / count, dtype=pred.dtype)

    def bw(g):
        return ((g / count) * np.clip(diff, -1, 1),)

    return make_result(value, (pred,), bw, "scale_loss")


def gt_pyramid(gt, mask=None, scales=7):
    """Ground truth and validity masks for scales 0..scales-1.

    Each level averages the valid pixels of its 2^s x 2^s block and divides
    by 2^s, since disparity is measured in pixels of the current width.  A
    coarse pixel is valid when more than half of its block is valid.
    """
    gt = np.asarray(gt, dtype=np.float64)
    if gt.ndim != 4:
        raise DimensionError(f"gt_pyramid: expected (N, 1, H, W), got {gt.shape}")
    mask = validity_mask(gt) if mask is None else np.asarray(mask, dtype=bool)
    n, c, h, w = gt.shape
    top = 2 ** (scales - 1)
    if h % top or w % top:
        raise DimensionError(f"gt_pyramid: height and width must be multiples of {top}, got {h}x{w}")
    filled = np.where(mask, gt, 0.0)
    gts, masks = [], []
    for s in range(scales):
        f = 2**s
        shape = (n, c, h // f, f, w // f, f)
        total = filled.reshape(shape).sum(axis=(3, 5))
        count = mask.reshape(shape).sum(axis=(3, 5))
        with np.errstate(invalid="ignore", divide="ignore"):
            level = np.where(count > 0, total / np.maximum(count, 1), 0.0) / f
        gts.append(level)
        masks.append(count * 2 > f * f)
    return gts, masks


def multiscale_loss(preds, gt_pyramid_maps, masks, weights):
    """Weighted sum of per-scale losses; scales with zero weight are not evaluated."""
    preds = list(preds)
    if not (len(preds) == len(gt_pyramid_maps) == len(masks) == len(weights)):
        raise DimensionError("multiscale_loss: predictions, pyramid, masks and weights must have equal length")
    for s, (p, g) in enumerate(zip(preds, gt_pyramid_maps)):
        if p.shape != np.shape(g):
            raise DimensionError(f"multiscale_loss: scale {s} prediction {p.shape} vs ground truth {np.shape(g)}")
    total = None
    for p, g, m, w in zip(preds, gt_pyramid_maps, masks, weights):
        if w == 0:
            continue
        term = scale_loss(p, g, m)
        term = term if w == 1 else term * float(w)
        total = term if total is None else total + term
    if total is None:
        p = preds[0]
        zero = np.zeros((), dtype=p.dtype)
        return make_result(zero, (p,), lambda g: (np.zeros(p.shape, p.dtype),), "multiscale_loss")
    return total


def _metric_inputs(pred, gt, mask):
    pred = np.asarray(_array(pred), dtype=np.float64)
    gt = np.asarray(_array(gt), dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    mask = validity_mask(gt) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != gt.shape:
        raise DimensionError(f"mask {mask.shape} and ground truth {gt.shape} differ")
    return pred, gt, mask


def epe(pred, gt, mask=None):
    """Mean absolute disparity error over valid pixels."""
    pred, gt, mask = _metric_inputs(pred, gt, mask)
    if not mask.any():
        warnings.warn("epe: no valid pixels, returning 0", EmptyMaskWarning, stacklevel=2)
        return 0.0
    return float(np.abs(pred[mask] - gt[mask]).mean())


def d1_rate(pred, gt, mask=None, region=None):
    """Fraction of valid pixels whose error exceeds both 3 px and 5% of the ground truth.

    ``region`` optionally restricts the evaluation to a subset mask (e.g.
    foreground or non-occluded pixels).
    """
    pred, gt, mask = _metric_inputs(pred, gt, mask)
    if region is not None:
        mask = mask & np.asarray(region, dtype=bool)
    if not mask.any():
        warnings.warn("d1_rate: no valid pixels, returning 0", EmptyMaskWarning, stacklevel=2)
        return 0.0
    err = np.abs(pred[mask] - gt[mask])
    outliers = (err > 3.0) & (err > 0.05 * gt[mask])
    return float(outliers.mean())
