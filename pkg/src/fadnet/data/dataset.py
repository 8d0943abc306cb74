"""Stereo samples, preprocessing and dataset manifests."""

import os
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ContractError, DimensionError, FormatError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class StereoSample:
    """Left/right (3, H, W) images, optional (H, W) disparity and validity mask."""

    left: np.ndarray
    right: np.ndarray
    gt_disparity: np.ndarray = None
    source_id: str = ""
    valid: np.ndarray = None

    def __post_init__(self):
        if self.left.shape != self.right.shape:
            raise DimensionError(f"left {self.left.shape} and right {self.right.shape} images differ")
        if self.gt_disparity is not None and self.gt_disparity.shape != self.left.shape[1:]:
            raise DimensionError(
                f"ground truth {self.gt_disparity.shape} does not match image size {self.left.shape[1:]}"
            )

    @property
    def height(self):
        return self.left.shape[1]

    @property
    def width(self):
        return self.left.shape[2]

    def mask(self):
        """Validity of the ground truth combined with ``valid``.

        Without an explicit ``valid`` mask zero counts as missing; with one,
        zero disparity is a real measurement.
        """
        from ..losses import validity_mask

        if self.gt_disparity is None:
            return None
        if self.valid is None:
            return validity_mask(self.gt_disparity)
        return validity_mask(self.gt_disparity, allow_zero=True) & self.valid


@dataclass(frozen=True)
class PreprocessConfig:
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD
    crop_h: int = 384
    crop_w: int = 768

    @classmethod
    def sceneflow(cls):
        return cls(crop_h=384, crop_w=768)

    @classmethod
    def kitti(cls):
        return cls(crop_h=256, crop_w=1024)


def _channel_stats(img, cfg):
    if img.shape[-3] != 3:
        raise DimensionError(f"colour normalisation needs 3 channels on axis -3, got {img.shape[-3]}")
    mean = np.asarray(cfg.mean, dtype=img.dtype).reshape(3, 1, 1)
    std = np.asarray(cfg.std, dtype=img.dtype).reshape(3, 1, 1)
    return mean, std


def normalize_colors(img, cfg=PreprocessConfig()):
    """Per-channel ``(x - mean) / std`` for (..., 3, H, W) images in [0, 1]."""
    img = np.asarray(img)
    mean, std = _channel_stats(img, cfg)
    return (img - mean) / std


def denormalize_colors(img, cfg=PreprocessConfig()):
    img = np.asarray(img)
    mean, std = _channel_stats(img, cfg)
    return img * std + mean


def random_crop_pair(sample, cfg, rng_seed):
    """Crop left, right and ground truth at one random offset.

    Disparity values are unchanged: a crop shifts both views equally.
    """
    h, w = sample.height, sample.width
    if cfg.crop_h > h or cfg.crop_w > w:
        raise ContractError(f"crop {cfg.crop_h}x{cfg.crop_w} exceeds image {h}x{w}")
    rng = np.random.default_rng(rng_seed)
    y0 = int(rng.integers(0, h - cfg.crop_h + 1))
    x0 = int(rng.integers(0, w - cfg.crop_w + 1))
    ys = slice(y0, y0 + cfg.crop_h)
    xs = slice(x0, x0 + cfg.crop_w)
    return replace(
        sample,
        left=sample.left[:, ys, xs].copy(),
        right=sample.right[:, ys, xs].copy(),
        gt_disparity=None if sample.gt_disparity is None else sample.gt_disparity[ys, xs].copy(),
        valid=None if sample.valid is None else sample.valid[ys, xs].copy(),
    )


def crop_offsets(h, w, cfg, rng_seed):
    rng = np.random.default_rng(rng_seed)
    return int(rng.integers(0, h - cfg.crop_h + 1)), int(rng.integers(0, w - cfg.crop_w + 1))


# -- manifests -------------------------------------------------------------


def sample_id_from_path(path):
    stem = os.path.splitext(os.path.basename(path))[0]
    for suffix in ("_left", "-left", ".left"):
        if stem.endswith(suffix):
            return stem[: -len(suffix)]
    return stem


def read_manifest(path):
    """Parse a manifest: one ``left right [gt]`` line per sample, '#' comments.

    Relative paths resolve against the manifest's directory.  Returns a list
    of ``(left, right, gt_or_None)`` absolute paths.
    """
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise FormatError(f"{path}:{lineno}: expected 'left right [gt]', got {len(parts)} fields")
            parts = [p if os.path.isabs(p) else os.path.join(base, p) for p in parts]
            entries.append((parts[0], parts[1], parts[2] if len(parts) == 3 else None))
    return entries


def write_manifest(path, entries):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            rel = [os.path.relpath(p, base) for p in entry if p is not None]
            fh.write(" ".join(rel) + "\n")


def load_sample(left_path, right_path, gt_path=None):
    from .images import read_disparity, read_image

    left = read_image(left_path)
    right = read_image(right_path)
    gt = valid = None
    if gt_path is not None and os.path.exists(gt_path):
        gt, valid = read_disparity(gt_path)
    return StereoSample(left, right, gt, sample_id_from_path(left_path), valid)


def load_manifest(path):
    return [load_sample(*entry) for entry in read_manifest(path)]


def save_sample(out_dir, sample):
    """Write a sample as PFM triplet; invalid ground truth pixels are stored as +inf."""
    from .pfm import save_pfm

    stem = os.path.join(out_dir, sample.source_id)
    left_path, right_path, gt_path = stem + "_left.pfm", stem + "_right.pfm", stem + "_gt.pfm"
    save_pfm(left_path, sample.left.transpose(1, 2, 0))
    save_pfm(right_path, sample.right.transpose(1, 2, 0))
    paths = [left_path, right_path]
    if sample.gt_disparity is not None:
        gt = sample.gt_disparity.astype(np.float32).copy()
        if sample.valid is not None:
            gt[~sample.valid] = np.inf
        save_pfm(gt_path, gt)
        paths.append(gt_path)
    return tuple(paths)


def to_batch(samples, cfg=PreprocessConfig(), dtype=np.float32):
    """Stack samples into normalized (N, 3, H, W) images plus (N, 1, H, W) ground truth and mask."""
    left = normalize_colors(np.stack([s.left for s in samples])).astype(dtype)
    right = normalize_colors(np.stack([s.right for s in samples])).astype(dtype)
    if any(s.gt_disparity is None for s in samples):
        return left, right, None, None
    gt = np.stack([s.gt_disparity for s in samples])[:, None].astype(np.float64)
    mask = np.stack([s.mask() for s in samples])[:, None]
    return left, right, gt, mask
