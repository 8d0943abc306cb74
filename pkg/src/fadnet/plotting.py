"""Figures written to files: colour-mapped disparity, evaluation panels, training curves.

Disparity is always rendered with the ``magma`` colormap over ``[0, vmax]``.
``vmax`` defaults to the ground-truth maximum when one is shown, otherwise to
the prediction maximum, so identical inputs give identical images.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DISPARITY_CMAP = "magma"
ERROR_CMAP = "inferno"
# Fixed metadata keeps PNG output byte-stable across runs and library versions.
_PNG_META = {"Software": None}


def _vmax(*maps):
    vals = [np.nanmax(np.where(np.isfinite(m), m, np.nan)) for m in maps if m is not None and np.isfinite(m).any()]
    return max(float(max(vals)), 1e-6) if vals else 1.0


def colorize_disparity(disparity, vmax=None, invalid=None):
    """(H, W) disparity -> (H, W, 3) uint8 RGB; ``invalid`` pixels are black."""
    d = np.asarray(disparity, dtype=np.float64)
    vmax = _vmax(d) if vmax is None else float(vmax)
    norm = np.clip(np.nan_to_num(d / vmax, nan=0.0, posinf=1.0, neginf=0.0), 0.0, 1.0)
    rgb = plt.get_cmap(DISPARITY_CMAP)(norm)[..., :3]
    if invalid is not None:
        rgb[np.asarray(invalid, dtype=bool)] = 0.0
    return np.rint(rgb * 255).astype(np.uint8)


def save_disparity_png(path, disparity, vmax=None, invalid=None):
    plt.imsave(path, colorize_disparity(disparity, vmax, invalid), metadata=_PNG_META)


def eval_figure(path, left, pred, gt=None, mask=None, title=None):
    """Left image, prediction, ground truth and absolute error side by side."""
    panels = 2 if gt is None else 4
    fig, axes = plt.subplots(1, panels, figsize=(3.2 * panels, 2.4), squeeze=False)
    axes = axes[0]
    vmax = _vmax(gt if gt is not None else pred)
    axes[0].imshow(np.clip(np.transpose(left, (1, 2, 0)), 0, 1))
    axes[0].set_title("left")
    axes[1].imshow(pred, cmap=DISPARITY_CMAP, vmin=0, vmax=vmax)
    axes[1].set_title("prediction")
    if gt is not None:
        shown = np.where(mask, gt, np.nan) if mask is not None else gt
        axes[2].imshow(shown, cmap=DISPARITY_CMAP, vmin=0, vmax=vmax)
        axes[2].set_title("ground truth")
        err = np.abs(pred - np.where(np.isfinite(gt), gt, 0.0))
        if mask is not None:
            err = np.where(mask, err, np.nan)
        im = axes[3].imshow(err, cmap=ERROR_CMAP, vmin=0, vmax=max(3.0, float(np.nanmax(err)) if np.isfinite(err).any() else 3.0))
        axes[3].set_title("|error|")
        fig.colorbar(im, ax=axes[3], fraction=0.046)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def _series(records, key):
    return np.array([np.nan if r.get(key) is None else r[key] for r in records], dtype=float)


def training_curves(path, records):
    """Train/test EPE per epoch with round boundaries marked; missing values are skipped."""
    epochs = [r for r in records if r.get("round", 0) > 0]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = np.arange(1, len(epochs) + 1)
    if epochs:
        ax.plot(x, _series(epochs, "train_epe"), marker="o", ms=3, label="train EPE")
        test = _series(epochs, "test_epe")
        if np.isfinite(test).any():
            ax.plot(x, test, marker="s", ms=3, label="test EPE")
    baseline = _series([r for r in records if r.get("round", 0) == 0], "test_epe")
    if np.isfinite(baseline).any():
        ax.axhline(baseline[0], color="grey", ls=":", label="untrained")
    for i in range(1, len(epochs)):
        if epochs[i]["round"] != epochs[i - 1]["round"]:
            ax.axvline(i + 0.5, color="k", lw=0.5, alpha=0.4)
    ax.set_xlabel("epoch")
    ax.set_ylabel("EPE (px)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def bench_figure(path, rows):
    """Bar chart of mean kernel time (ms) per benchmark row."""
    fig, ax = plt.subplots(figsize=(5, 3))
    labels = [r["kernel"] for r in rows]
    ax.bar(labels, [r["mean_ms"] for r in rows], yerr=None)
    ax.set_ylabel("mean time (ms)")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
