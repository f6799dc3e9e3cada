"""Hot numeric kernels with numba-compiled and pure-numpy implementations.

The numba path is the default; set the environment variable
``LFRECOG_DISABLE_NUMBA=1`` before import to force the numpy fallback
(useful on platforms without a working JIT, and for benchmarking —
see ``benchmarks/bench_kernels.py``).
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("LFRECOG_DISABLE_NUMBA", "0") not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:
        USE_NUMBA = False


def _bilinear_resize_np(src, out_h, out_w):
    h, w, c = src.shape
    sy = h / out_h
    sx = w / out_w
    ys = np.clip((np.arange(out_h) + 0.5) * sy - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * sx - 0.5, 0.0, w - 1.0)
    y0 = np.minimum(ys.astype(np.int64), h - 2) if h > 1 else np.zeros(out_h, np.int64)
    x0 = np.minimum(xs.astype(np.int64), w - 2) if w > 1 else np.zeros(out_w, np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = src[y0][:, x0] * (1.0 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1.0 - fx) + src[y1][:, x1] * fx
    return top * (1.0 - fy) + bot * fy


def _conv2d_valid_np(img, weights, bias):
    h, w, cin = img.shape
    cout, kh, kw, _ = weights.shape
    oh, ow = h - kh + 1, w - kw + 1
    # im2col: patches as (oh*ow, kh*kw*cin)
    patches = np.lib.stride_tricks.sliding_window_view(img, (kh, kw), axis=(0, 1))
    patches = patches.transpose(0, 1, 3, 4, 2).reshape(oh * ow, kh * kw * cin)
    wmat = weights.reshape(cout, kh * kw * cin)
    out = patches @ wmat.T + bias
    return out.reshape(oh, ow, cout)


def _maxpool2_np(img):
    h, w, c = img.shape
    h2, w2 = h // 2, w // 2
    v = img[: h2 * 2, : w2 * 2].reshape(h2, 2, w2, 2, c)
    return v.max(axis=(1, 3))


if USE_NUMBA:

    @njit(cache=True)
    def _bilinear_resize_jit(src, out_h, out_w):
        h, w, c = src.shape
        sy = h / out_h
        sx = w / out_w
        out = np.empty((out_h, out_w, c))
        for oy in range(out_h):
            y = (oy + 0.5) * sy - 0.5
            if y < 0.0:
                y = 0.0
            if y > h - 1.0:
                y = h - 1.0
            y0 = int(y)
            if y0 > h - 2:
                y0 = h - 2 if h > 1 else 0
            y1 = min(y0 + 1, h - 1)
            fy = y - y0
            for ox in range(out_w):
                x = (ox + 0.5) * sx - 0.5
                if x < 0.0:
                    x = 0.0
                if x > w - 1.0:
                    x = w - 1.0
                x0 = int(x)
                if x0 > w - 2:
                    x0 = w - 2 if w > 1 else 0
                x1 = min(x0 + 1, w - 1)
                fx = x - x0
                for ch in range(c):
                    top = src[y0, x0, ch] * (1.0 - fx) + src[y0, x1, ch] * fx
                    bot = src[y1, x0, ch] * (1.0 - fx) + src[y1, x1, ch] * fx
                    out[oy, ox, ch] = top * (1.0 - fy) + bot * fy
        return out

    @njit(cache=True)
    def _conv2d_valid_jit(img, weights, bias):
        h, w, cin = img.shape
        cout, kh, kw, _ = weights.shape
        oh, ow = h - kh + 1, w - kw + 1
        out = np.empty((oh, ow, cout))
        for oy in range(oh):
            for ox in range(ow):
                for co in range(cout):
                    acc = bias[co]
                    for ky in range(kh):
                        for kx in range(kw):
                            for ci in range(cin):
                                acc += img[oy + ky, ox + kx, ci] * weights[co, ky, kx, ci]
                    out[oy, ox, co] = acc
        return out

    @njit(cache=True)
    def _maxpool2_jit(img):
        h, w, c = img.shape
        h2, w2 = h // 2, w // 2
        out = np.empty((h2, w2, c))
        for oy in range(h2):
            for ox in range(w2):
                for ch in range(c):
                    m = img[2 * oy, 2 * ox, ch]
                    for dy in range(2):
                        for dx in range(2):
                            v = img[2 * oy + dy, 2 * ox + dx, ch]
                            if v > m:
                                m = v
                    out[oy, ox, ch] = m
        return out

    _bilinear_resize = _bilinear_resize_jit
    _maxpool2 = _maxpool2_jit
else:
    _bilinear_resize = _bilinear_resize_np
    _maxpool2 = _maxpool2_np

# BLAS-backed im2col beats the scalar JIT loop here (see benchmarks), so the
# numpy version is the default on both paths.
_conv2d_valid = _conv2d_valid_np


def bilinear_resize(src, out_h, out_w):
    """Resize an H×W×C float image to out_h×out_w with bilinear sampling.

    Source coordinates use half-pixel centers: src = (dst + 0.5)·scale − 0.5,
    clamped at the borders.
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    if src.ndim != 3:
        raise ValueError(f"expected H×W×C image, got shape {src.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError("target dims must be >= 1")
    return _bilinear_resize(src, out_h, out_w)


def conv2d_valid(img, weights, bias):
    """Valid-mode 2D convolution: H×W×Cin with Cout×kh×kw×Cin weights."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    bias = np.ascontiguousarray(bias, dtype=np.float64)
    return _conv2d_valid(img, weights, bias)


def maxpool2(img):
    """2×2 max pooling with stride 2 (trailing row/col dropped when odd)."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    return _maxpool2(img)
