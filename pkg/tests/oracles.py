"""Slow, obviously-correct reference implementations used as test oracles."""

import numpy as np

from fadnet.tensor import Tensor, backward, precision


def conv2d_loop(x, w, b=None, stride=1, padding=0):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow), dtype=np.float64)
    for bi in range(n):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for ki in range(kh):
                            for kj in range(kw):
                                y = i * stride - padding + ki
                                xx = j * stride - padding + kj
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += x[bi, ci, y, xx] * w[co, ci, ki, kj]
                    out[bi, co, i, j] = acc + (0.0 if b is None else b[co])
    return out


def conv_transpose2d_loop(x, w, b=None, stride=1, padding=0):
    """Scatter form; ``w`` is (Cin, Cout, kH, kW)."""
    n, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    oh = (h - 1) * stride - 2 * padding + kh
    ow = (wd - 1) * stride - 2 * padding + kw
    out = np.zeros((n, cout, oh, ow), dtype=np.float64)
    for bi in range(n):
        for ci in range(cin):
            for i in range(h):
                for j in range(wd):
                    for co in range(cout):
                        for ki in range(kh):
                            for kj in range(kw):
                                y = i * stride - padding + ki
                                xx = j * stride - padding + kj
                                if 0 <= y < oh and 0 <= xx < ow:
                                    out[bi, co, y, xx] += x[bi, ci, i, j] * w[ci, co, ki, kj]
    if b is not None:
        out += np.asarray(b).reshape(1, -1, 1, 1)
    return out


def correlation_loop(f1, f2, shifts, k=0, normalize=True):
    n, c, h, w = f1.shape
    out = np.zeros((n, len(shifts), h, w), dtype=np.float64)
    for bi in range(n):
        for si, s in enumerate(shifts):
            for y in range(h):
                for x in range(w):
                    acc = 0.0
                    for oy in range(-k, k + 1):
                        for ox in range(-k, k + 1):
                            y1, x1 = y + oy, x + ox
                            x2 = x1 + s
                            if not (0 <= y1 < h and 0 <= x1 < w and 0 <= x2 < w):
                                continue
                            for ch in range(c):
                                acc += f1[bi, ch, y1, x1] * f2[bi, ch, y1, x2]
                    out[bi, si, y, x] = acc / c if normalize else acc
    return out


def warp_loop(right, disp):
    n, c, h, w = right.shape
    out = np.zeros((n, c, h, w), dtype=np.float64)
    for bi in range(n):
        for y in range(h):
            for x in range(w):
                u = x - disp[bi, 0, y, x]
                x0 = int(np.floor(u))
                a = u - x0
                for ch in range(c):
                    v0 = right[bi, ch, y, x0] if 0 <= x0 < w else 0.0
                    v1 = right[bi, ch, y, x0 + 1] if 0 <= x0 + 1 < w else 0.0
                    out[bi, ch, y, x] = (1 - a) * v0 + a * v1
    return out


def upsample_loop(x):
    """Half-pixel-centred bilinear 2x with edge clamping, written per output pixel."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, 2 * h, 2 * w))

    def taps(i, size):
        src = min(max((i + 0.5) / 2 - 0.5, 0.0), size - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, size - 1)
        return lo, hi, src - lo

    for i in range(2 * h):
        y0, y1, ay = taps(i, h)
        for j in range(2 * w):
            x0, x1, ax = taps(j, w)
            out[:, :, i, j] = (
                (1 - ay) * (1 - ax) * x[:, :, y0, x0]
                + (1 - ay) * ax * x[:, :, y0, x1]
                + ay * (1 - ax) * x[:, :, y1, x0]
                + ay * ax * x[:, :, y1, x1]
            )
    return out


def block_mean_loop(x, f):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // f, w // f))
    for i in range(h // f):
        for j in range(w // f):
            out[:, :, i, j] = x[:, :, i * f : (i + 1) * f, j * f : (j + 1) * f].mean(axis=(2, 3))
    return out


def numerical_grad(fn, arrays, h=1e-3):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. every array (float64)."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = arr[idx]
            arr[idx] = old + h
            fp = fn(*arrays)
            arr[idx] = old - h
            fm = fn(*arrays)
            arr[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def grad_check(op, arrays, seed=0, h=1e-3):
    """Compare autograd against central differences for ``sum(op(...) * R)``, R fixed random.

    Returns the worst relative error over all inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    with precision("float64"):
        tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        out = op(*tensors)
        weight = np.random.default_rng(seed).standard_normal(out.shape)
        backward((out * Tensor(weight)).sum())
        analytic = [t.grad for t in tensors]

        def scalar(*arrs):
            return float((op(*[Tensor(a) for a in arrs]).data * weight).sum())

        numeric = numerical_grad(scalar, arrays, h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(np.abs(n).max(), np.abs(a).max(), 1e-8)
        worst = max(worst, float(np.abs(a - n).max() / scale))
    return worst


def adam_reference(grad_fn, x0, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    x, m, v = float(x0), 0.0, 0.0
    trajectory = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        trajectory.append(x)
    return trajectory
