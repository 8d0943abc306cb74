"""Portable float map (PFM) reading and writing.

Layout: a text header ``PF`` (3 channels) or ``Pf`` (1 channel), then
``width height``, then a scale whose sign selects the payload byte order
(negative = little-endian), each terminated by a single whitespace byte.
Rows follow bottom-to-top as 32-bit floats.  In memory, rows are top-down.
"""

import numpy as np

from ..errors import FormatError

_MAGIC = {b"PF": 3, b"Pf": 1}


def _token(data, pos):
    """Return (token, position after its single terminating whitespace byte)."""
    n = len(data)
    while pos < n and data[pos : pos + 1].isspace():
        pos += 1
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of PFM header", start)
    if pos >= n:
        raise FormatError("PFM header is not terminated", pos)
    return data[start:pos], pos + 1


def read_pfm(data, channels=None):
    """Parse PFM bytes into ``(array, scale)``.

    The array is (H, W) for ``Pf`` and (H, W, 3) for ``PF``.  Passing
    ``channels`` asserts the expected channel count.
    """
    data = bytes(data)
    magic, pos = _token(data, 0)
    if magic not in _MAGIC:
        raise FormatError(f"bad PFM magic {magic!r}, expected b'PF' or b'Pf'", 0)
    nchan = _MAGIC[magic]
    if channels is not None and channels != nchan:
        raise FormatError(f"PFM header {magic.decode()} holds {nchan} channel(s), {channels} requested", 0)
    dims_at = pos
    w_tok, pos = _token(data, pos)
    h_tok, pos = _token(data, pos)
    try:
        width, height = int(w_tok), int(h_tok)
    except ValueError:
        raise FormatError(f"bad PFM dimensions {w_tok!r} {h_tok!r}", dims_at) from None
    if width <= 0 or height <= 0:
        raise FormatError(f"PFM dimensions must be positive, got {width}x{height}", dims_at)
    scale_at = pos
    s_tok, pos = _token(data, pos)
    try:
        scale = float(s_tok)
    except ValueError:
        raise FormatError(f"bad PFM scale {s_tok!r}", scale_at) from None
    if scale == 0:
        raise FormatError("PFM scale must be non-zero", scale_at)
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    count = width * height * nchan
    need = count * 4
    if len(data) - pos < need:
        raise FormatError(f"truncated PFM payload: need {need} bytes, have {len(data) - pos}", len(data))
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    shape = (height, width) if nchan == 1 else (height, width, 3)
    arr = arr.reshape(shape)[::-1].astype(np.float32)
    return arr, scale


def write_pfm(array, scale=-1.0):
    """Serialize a (H, W) or (H, W, 3) array; ``scale`` < 0 writes little-endian."""
    arr = np.asarray(array)
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise FormatError(f"PFM stores (H, W) or (H, W, 3) arrays, got shape {arr.shape}")
    if scale == 0:
        raise FormatError("PFM scale must be non-zero")
    height, width = arr.shape[:2]
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    header = b"%s\n%d %d\n%s\n" % (magic, width, height, repr(float(scale)).encode())
    return header + np.ascontiguousarray(arr[::-1], dtype=dtype).tobytes()


def load_pfm(path, channels=None):
    with open(path, "rb") as fh:
        return read_pfm(fh.read(), channels)


def save_pfm(path, array, scale=-1.0):
    with open(path, "wb") as fh:
        fh.write(write_pfm(array, scale))
