"""Scalar nested-loop references for the vectorised convolutions.

Both loops accumulate in float32 in the order kernel row, kernel column,
input channel, and count every multiply-accumulate they perform.
"""

import numpy as np


def conv2d_loop(x, w, b=None, stride=1, padding=(0, 0, 0, 0)):
    """Direct cross-correlation; returns (output, trip count)."""
    top, bottom, left, right = padding
    batch, cin, height, width = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    out_h = (height + top + bottom - kh) // stride + 1
    out_w = (width + left + right - kw) // stride + 1
    out = np.zeros((batch, cout, out_h, out_w), dtype=np.float32)
    trips = 0
    for n in range(batch):
        for o in range(cout):
            for p in range(out_h):
                for q in range(out_w):
                    acc = np.float32(0)
                    for i in range(kh):
                        for j in range(kw):
                            for c in range(cin):
                                acc = np.float32(acc + np.float32(xp[n, c, p * stride + i, q * stride + j] * w[o, c, i, j]))
                                trips += 1
                    out[n, o, p, q] = acc if b is None else np.float32(acc + b[o])
    return out, trips


def transposed_conv2d_loop(x, w, b=None, stride=1, padding=(0, 0, 0, 0), output_padding=0):
    """Gather form of the scatter-accumulate; returns (output, trip count)."""
    top, bottom, left, right = padding
    batch, cin, height, width = x.shape
    _, cout, kh, kw = w.shape
    full_h = (height - 1) * stride + kh
    full_w = (width - 1) * stride + kw
    out_h = full_h - top - bottom + output_padding
    out_w = full_w - left - right + output_padding
    full = np.zeros((batch, cout, full_h, full_w), dtype=np.float32)
    trips = 0
    for n in range(batch):
        for o in range(cout):
            for p in range(full_h):
                for q in range(full_w):
                    acc = np.float32(0)
                    for i in range(kh):
                        for j in range(kw):
                            if (p - i) % stride or (q - j) % stride:
                                continue
                            r, s = (p - i) // stride, (q - j) // stride
                            if not (0 <= r < height and 0 <= s < width):
                                continue
                            for c in range(cin):
                                acc = np.float32(acc + np.float32(x[n, c, r, s] * w[c, o, i, j]))
                                trips += 1
                    full[n, o, p, q] = acc
    out = np.zeros((batch, cout, out_h, out_w), dtype=np.float32)
    keep_h, keep_w = min(out_h, full_h - top), min(out_w, full_w - left)
    out[:, :, :keep_h, :keep_w] = full[:, :, top:top + keep_h, left:left + keep_w]
    if b is not None:
        out = out + b[None, :, None, None]
    return out, trips
