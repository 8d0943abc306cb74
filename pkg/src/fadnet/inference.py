"""Batched prediction with padding to the network's size multiple."""

import numpy as np

from .data.dataset import PreprocessConfig, normalize_colors
from .tensor import Tensor, no_grad


def pad_to_multiple(images, multiple=64):
    """Zero-pad (N, C, H, W) on the bottom/right up to multiples of ``multiple``."""
    h, w = images.shape[2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return images
    return np.pad(images, ((0, 0), (0, 0), (0, ph), (0, pw)))


def predict_disparity(model, left, right, batch_size=8, normalized=False, cfg=PreprocessConfig()):
    """Full-resolution disparity (N, H, W) for raw [0, 1] image stacks (N, 3, H, W)."""
    left = np.asarray(left)
    right = np.asarray(right)
    if not normalized:
        left = normalize_colors(left, cfg)
        right = normalize_colors(right, cfg)
    h, w = left.shape[2:]
    multiple = model.cfg.required_multiple
    left = pad_to_multiple(left, multiple).astype(np.float32)
    right = pad_to_multiple(right, multiple).astype(np.float32)
    out = []
    with no_grad():
        for i in range(0, left.shape[0], batch_size):
            d, _, _ = model(Tensor(left[i : i + batch_size]), Tensor(right[i : i + batch_size]))
            out.append(d[0].data[:, 0, :h, :w])
    return np.concatenate(out, axis=0)


def predict_samples(model, samples, batch_size=8):
    left = np.stack([s.left for s in samples])
    right = np.stack([s.right for s in samples])
    return predict_disparity(model, left, right, batch_size)
