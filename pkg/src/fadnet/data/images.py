"""Image and 16-bit disparity PNG containers.

Binary PPM/PGM (P6/P5) is handled natively; PNG and other compressed formats
go through Pillow.  Images come back as float32 (3, H, W) arrays in [0, 1];
grayscale sources are replicated to three channels.
"""

import io
import os

import numpy as np

from ..errors import FormatError
from .pfm import load_pfm, save_pfm

PNG16_SCALE = 256.0


def read_disparity_png16(data):
    """Decode a KITTI-style disparity PNG: ``disparity = raw / 256``, raw 0 = invalid.

    Returns ``(disparity, valid)`` as (H, W) float32 and bool arrays.
    """
    from PIL import Image

    try:
        img = Image.open(io.BytesIO(bytes(data)))
        img.load()
    except Exception as exc:  # Pillow raises several unrelated types
        raise FormatError(f"cannot decode PNG: {exc}") from None
    if img.mode not in ("I;16", "I;16B", "I;16L") and not (img.mode == "I" and img.info.get("bits", 16) == 16):
        raise FormatError(f"disparity PNG must be 16-bit single channel, got mode {img.mode}")
    raw = np.asarray(img, dtype=np.uint16)
    valid = raw > 0
    return (raw.astype(np.float32) / PNG16_SCALE), valid


def write_disparity_png16(disparity, valid=None):
    """Encode disparity as 16-bit PNG bytes; invalid pixels are stored as 0."""
    from PIL import Image

    d = np.asarray(disparity, dtype=np.float64)
    if d.ndim != 2:
        raise FormatError(f"disparity PNG stores (H, W) maps, got shape {d.shape}")
    ok = np.isfinite(d) & (d > 0)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    raw = np.zeros(d.shape, dtype=np.uint16)
    raw[ok] = np.clip(np.rint(d[ok] * PNG16_SCALE), 1, 65535).astype(np.uint16)
    buf = io.BytesIO()
    Image.fromarray(raw).save(buf, format="PNG")
    return buf.getvalue()


def _parse_pnm(data):
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PNM header", start)
        fields.append(data[start:pos])
    magic, width, height, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {magic!r}", 0)
    chans = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * chans
    if len(data) - pos < count * dtype.itemsize:
        raise FormatError("truncated PNM payload", len(data))
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).reshape(height, width, chans)
    return arr.astype(np.float32) / maxval


def write_ppm(image):
    """(3, H, W) float image in [0, 1] -> binary 8-bit PPM bytes."""
    img = np.asarray(image)
    h, w = img.shape[1:]
    raw = np.clip(np.rint(img.transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
    return b"P6\n%d %d\n255\n" % (w, h) + raw.tobytes()


def _to_chw(hwc):
    if hwc.ndim == 2:
        hwc = hwc[:, :, None]
    if hwc.shape[2] == 1:
        hwc = np.repeat(hwc, 3, axis=2)
    elif hwc.shape[2] == 4:
        hwc = hwc[:, :, :3]
    return np.ascontiguousarray(hwc.transpose(2, 0, 1), dtype=np.float32)


def read_image(path):
    """Load an image file as a float32 (3, H, W) array."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pfm":
        arr, _ = load_pfm(path)
        return _to_chw(arr)
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] in (b"P5", b"P6"):
        return _to_chw(_parse_pnm(data))
    from PIL import Image

    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise FormatError(f"cannot decode image {path}: {exc}") from None
    arr = np.asarray(img)
    scale = 65535.0 if arr.dtype == np.uint16 else 255.0
    return _to_chw(arr.astype(np.float32) / scale)


def write_image(path, image):
    ext = os.path.splitext(path)[1].lower()
    img = np.asarray(image, dtype=np.float32)
    if ext == ".pfm":
        save_pfm(path, img.transpose(1, 2, 0))
    elif ext in (".ppm", ".pnm"):
        with open(path, "wb") as fh:
            fh.write(write_ppm(img))
    else:
        from PIL import Image

        raw = np.clip(np.rint(img.transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
        Image.fromarray(raw).save(path)


def read_disparity(path):
    """Load a disparity map (PFM, or 16-bit PNG) as (disparity, valid)."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pfm":
        from ..losses import validity_mask

        arr, _ = load_pfm(path, channels=1)
        # PFM marks missing pixels as inf, so zero is a genuine disparity
        return arr, validity_mask(arr, allow_zero=True)
    with open(path, "rb") as fh:
        return read_disparity_png16(fh.read())
