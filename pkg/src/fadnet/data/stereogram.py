"""Random-dot stereograms with exactly known disparity.

Each surface carries a texture whose samples sit at integer right-image
columns and which is linear in between.  A left pixel at column ``x`` on a
surface with disparity ``d`` shows that texture at ``x - d``, so resampling
the right image at ``x - d`` reproduces it exactly whenever both neighbouring
right pixels show the same surface.  Pixels failing that test (occluded, or
out of the right view) are flagged invalid.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .dataset import StereoSample


@dataclass(frozen=True)
class LayeredField:
    """A fronto-parallel background plus rectangles closer to the camera.

    ``rects`` entries are ``(top, bottom, left, right, disparity)`` in left
    image pixels (bottom/right exclusive).  Higher disparity is in front.
    """

    background: float
    rects: tuple = field(default_factory=tuple)

    def layers(self):
        ordered = sorted(self.rects, key=lambda r: r[4])
        return [(None, float(self.background))] + [((r[0], r[1], r[2], r[3]), float(r[4])) for r in ordered]

    def rasterize(self, h, w):
        out = np.full((h, w), float(self.background))
        for (y0, y1, x0, x1), d in self.layers()[1:]:
            out[y0:y1, x0:x1] = d
        return out


def _check_disparities(values, w):
    values = np.asarray(values, dtype=np.float64)
    bound = w / 4.0
    if values.size and (values.min() < 0 or values.max() >= bound):
        raise ContractError(
            f"disparities must lie in [0, {bound}) for width {w}; got range [{values.min()}, {values.max()}]"
        )
    if not np.all(np.equal(np.mod(values * 2, 1), 0)):
        raise ContractError("disparities must be integers or half-integers")


def _texture(rng, h, cols, kind, dot_size):
    if kind == "ramp":
        return np.broadcast_to(np.arange(cols, dtype=np.float64), (3, h, cols)).copy()
    if kind != "dots":
        raise ContractError(f"unknown texture {kind!r}; expected 'dots' or 'ramp'")
    ch = -(-h // dot_size)
    cw = -(-cols // dot_size)
    coarse = rng.random((3, ch, cw))
    return np.repeat(np.repeat(coarse, dot_size, axis=1), dot_size, axis=2)[:, :h, :cols]


def _sample(texture, u, origin):
    """Linear interpolation of texture knots at (fractional) right columns ``u`` per row."""
    pos = u + origin
    i0 = np.floor(pos).astype(np.int64)
    t = pos - i0
    i1 = np.minimum(i0 + 1, texture.shape[2] - 1)
    rows = np.arange(texture.shape[1])[:, None]
    return (1 - t) * texture[:, rows, i0] + t * texture[:, rows, i1]


def gen_random_dot_stereogram(h, w, disparity_field, rng_seed, texture="dots", dot_size=1, source_id=None):
    """Render a stereo pair for ``disparity_field`` (a number, LayeredField or (h, w) array).

    Array fields are rendered as a single surface (every left pixel resamples
    the same texture), so only out-of-view pixels are invalid.
    """
    rng = np.random.default_rng(rng_seed)
    if isinstance(disparity_field, LayeredField):
        layered = disparity_field
    elif np.ndim(disparity_field) == 0:
        layered = LayeredField(float(disparity_field))
    else:
        layered = None
        field_arr = np.asarray(disparity_field, dtype=np.float64)
        if field_arr.shape != (h, w):
            raise ContractError(f"disparity field shape {field_arr.shape} does not match {h}x{w}")

    if layered is not None:
        field_arr = layered.rasterize(h, w)
        layers = layered.layers()
    else:
        layers = [(None, None)]
    _check_disparities(field_arr, w)

    margin = int(np.ceil(field_arr.max())) + 2
    cols = w + margin
    textures = [_texture(rng, h, cols, texture, dot_size) for _ in layers]

    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h)
    # layer index visible at every left pixel and every right pixel
    left_owner = np.zeros((h, w), dtype=np.int64)
    right_owner = np.zeros((h, w), dtype=np.int64)
    for li, (rect, d) in enumerate(layers):
        if rect is None:
            continue
        y0, y1, x0, x1 = rect
        left_owner[y0:y1, x0:x1] = li
        # right pixel xr sees this surface where its left column xr + d falls inside [x0, x1)
        inside = (xs + d >= x0) & (xs + d <= x1 - 1)
        rows = (ys >= y0) & (ys < y1)
        right_owner[np.ix_(rows, inside)] = li

    left = np.zeros((3, h, w))
    right = np.zeros((3, h, w))
    u = xs[None, :] - field_arr
    for li in range(len(layers)):
        on_left = left_owner == li
        vals = _sample(textures[li], u, margin)
        left[:, on_left] = vals[:, on_left]
        on_right = right_owner == li
        right[:, on_right] = textures[li][:, :, margin : margin + w][:, on_right]

    # valid: both interpolation taps lie in the right view and show the same surface
    t0 = np.floor(u).astype(np.int64)
    frac = u - t0
    t1 = np.where(frac > 0, t0 + 1, t0)
    in_view = (t0 >= 0) & (t1 <= w - 1)
    r0 = np.take_along_axis(right_owner, np.clip(t0, 0, w - 1), axis=1)
    r1 = np.take_along_axis(right_owner, np.clip(t1, 0, w - 1), axis=1)
    visible = in_view & (r0 == left_owner) & (r1 == left_owner)

    return StereoSample(
        left=left.astype(np.float32),
        right=right.astype(np.float32),
        gt_disparity=field_arr.astype(np.float32),
        source_id=source_id or f"rds-{rng_seed}",
        valid=visible,
    )


def random_layered_field(rng, h, w, max_disparity, max_objects=3, min_disparity=0.0, constant_probability=0.25):
    """Draw a random background-plus-rectangles field on the half-pixel grid."""
    levels = np.arange(min_disparity, max_disparity + 0.25, 0.5)
    if rng.random() < constant_probability:
        return LayeredField(float(rng.choice(levels)))
    bg = float(rng.choice(levels[: max(1, len(levels) // 2)]))
    rects = []
    for _ in range(int(rng.integers(1, max_objects + 1))):
        closer = levels[levels > bg]
        if not closer.size:
            break
        d = float(rng.choice(closer))
        rh = int(rng.integers(h // 6, h // 2 + 1))
        rw = int(rng.integers(w // 8, w // 3 + 1))
        y0 = int(rng.integers(0, h - rh + 1))
        x0 = int(rng.integers(0, w - rw + 1))
        rects.append((y0, y0 + rh, x0, x0 + rw, d))
    return LayeredField(bg, tuple(rects))


def generate_dataset(n, h, w, seed, max_disparity=12.0, dot_size=2, constant_probability=0.25):
    """``n`` deterministic stereograms; sample ``i`` depends only on ``(seed, i)``."""
    samples = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        fld = random_layered_field(rng, h, w, max_disparity, constant_probability=constant_probability)
        render_seed = int(rng.integers(2**31))
        samples.append(gen_random_dot_stereogram(h, w, fld, render_seed, dot_size=dot_size, source_id=f"{i:06d}"))
    return samples


def warp_consistency_error(sample):
    """Mean absolute photometric error of ``warp(right, gt)`` against left on valid pixels."""
    from ..stereo_ops import warp_by_disparity
    from ..tensor import Tensor

    right = Tensor(sample.right[None].astype(np.float64))
    disp = Tensor(sample.gt_disparity[None, None].astype(np.float64))
    warped = warp_by_disparity(right, disp).data[0]
    mask = sample.valid
    if not mask.any():
        return 0.0
    return float(np.abs(warped - sample.left)[:, mask].mean())
