"""
Spatial operators on (N,C,H,W) and (C,H,W) tensors: padding, dilated
cross-correlation, nearest upsampling and bilinear point sampling.
"""

from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ShapeError
from .tensor import Tensor, _result

PADDING_MODES = ("zeros", "reflect")


def _reflect_index(n: int, p: int) -> np.ndarray:
    # reflect without repeating the edge: [2,1 | 0,1,2,3 | 2,1]
    idx = np.arange(-p, n + p)
    idx = np.abs(idx)
    return np.where(idx > n - 1, 2 * (n - 1) - idx, idx)


def pad2d(x: Tensor, padding: int, mode: str = "zeros") -> Tensor:
    """
    Pad the last two axes of ``x`` by ``padding`` on every side.

    Args:
        x: Tensor with at least two axes
        padding: Number of cells added on each border
        mode: ``zeros`` or ``reflect``

    Returns:
        Padded tensor
    """
    if padding == 0:
        return x
    if mode not in PADDING_MODES:
        raise ValueError(f"unknown padding mode: {mode}")
    h, w = x.shape[-2:]
    p = padding
    if mode == "zeros":
        widths = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
        data = np.pad(x.data, widths)

        def rule(g: np.ndarray):
            return (g[..., p : p + h, p : p + w],)

        return _result(data, (x,), rule, "pad2d")

    if p >= h or p >= w:
        raise ShapeError(f"reflect padding {p} needs extents above it, got {h}x{w}")
    rows = _reflect_index(h, p)
    cols = _reflect_index(w, p)
    data = x.data[..., rows, :][..., cols]

    def reflect_rule(g: np.ndarray):
        gr = np.zeros((h,) + g.shape[:-2] + (g.shape[-1],))
        np.add.at(gr, rows, np.moveaxis(g, -2, 0))
        gc = np.zeros((w,) + g.shape[:-2] + (h,))
        np.add.at(gc, cols, np.moveaxis(np.moveaxis(gr, 0, -2), -1, 0))
        return (np.moveaxis(gc, 0, -1),)

    return _result(data, (x,), reflect_rule, "pad2d")


def conv_output_extent(
    size: int, kernel: int, stride: int, dilation: int, padding: int
) -> int:
    """Output extent of a convolution; non-integral extents are an error."""
    numerator = size + 2 * padding - dilation * (kernel - 1) - 1
    if numerator < 0 or numerator % stride != 0:
        raise ShapeError(
            f"non-integral conv output: extent {size}, kernel {kernel}, "
            f"stride {stride}, dilation {dilation}, padding {padding}"
        )
    return numerator // stride + 1


def _windows(
    x: np.ndarray, kh: int, kw: int, out_h: int, out_w: int, stride: int, dilation: int
) -> np.ndarray:
    n, c = x.shape[:2]
    sn, sc, sh, sw = x.strides
    return as_strided(
        x,
        shape=(n, c, kh, kw, out_h, out_w),
        strides=(sn, sc, sh * dilation, sw * dilation, sh * stride, sw * stride),
        writeable=False,
    )


def _conv_valid(
    x: Tensor, weight: Tensor, bias: Optional[Tensor], stride: int, dilation: int
) -> Tensor:
    _, _, h, w = x.shape
    _, _, kh, kw = weight.shape
    out_h = conv_output_extent(h, kh, stride, dilation, 0)
    out_w = conv_output_extent(w, kw, stride, dilation, 0)
    xs = np.ascontiguousarray(x.data)
    win = _windows(xs, kh, kw, out_h, out_w, stride, dilation)
    out = np.einsum("ncijuv,kcij->nkuv", win, weight.data, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def rule(g: np.ndarray):
        gw = np.einsum("ncijuv,nkuv->kcij", win, g, optimize=True)
        gx = np.zeros(x.shape)
        for i in range(kh):
            for j in range(kw):
                r0 = i * dilation
                c0 = j * dilation
                gx[
                    :,
                    :,
                    r0 : r0 + stride * (out_h - 1) + 1 : stride,
                    c0 : c0 + stride * (out_w - 1) + 1 : stride,
                ] += np.einsum("nkuv,kc->ncuv", g, weight.data[:, :, i, j])
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents: Tuple[Tensor, ...] = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, rule, "conv2d")


def conv2d(
    input: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    dilation: int = 1,
    padding: int = 0,
    padding_mode: str = "zeros",
) -> Tensor:
    """
    Dilated 2-D cross-correlation.

    Args:
        input: Tensor of shape (N, C, H, W)
        weight: Tensor of shape (K, C, kh, kw) with odd kh and kw
        bias: Optional tensor of shape (K,)
        stride: Step between output positions
        dilation: Spacing between kernel taps
        padding: Border added on each side before correlating
        padding_mode: ``zeros`` or ``reflect``

    Returns:
        Tensor of shape (N, K, H', W')
    """
    if input.ndim != 4 or weight.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-d input and weight, got {input.shape} and {weight.shape}"
        )
    k, c, kh, kw = weight.shape
    if input.shape[1] != c:
        raise ShapeError(
            f"conv2d: input has {input.shape[1]} channels, weight expects {c}"
        )
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d needs odd kernel extents, got {kh}x{kw}")
    if bias is not None and bias.shape != (k,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {k} filters")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ShapeError("conv2d: stride and dilation must be >= 1, padding >= 0")
    # validate before padding so the error names the caller's geometry
    conv_output_extent(input.shape[2], kh, stride, dilation, padding)
    conv_output_extent(input.shape[3], kw, stride, dilation, padding)
    padded = pad2d(input, padding, padding_mode)
    return _conv_valid(padded, weight, bias, stride, dilation)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Repeat every cell of the last two axes ``factor`` times along each."""
    if factor == 1:
        return x
    h, w = x.shape[-2:]
    data = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)

    def rule(g: np.ndarray):
        folded = g.reshape(g.shape[:-2] + (h, factor, w, factor))
        return (folded.sum(axis=(-3, -1)),)

    return _result(data, (x,), rule, "upsample_nearest")


def bilinear_sample(feat: Tensor, ys: np.ndarray, xs: np.ndarray) -> Tensor:
    """
    Sample a (C, H, W) feature map at fractional cell coordinates.

    Coordinates are clamped to the map, so points just outside it read the
    border value.

    Args:
        feat: Tensor of shape (C, H, W)
        ys: Row coordinates, any shape S
        xs: Column coordinates, same shape as ``ys``

    Returns:
        Tensor of shape (C, *S)
    """
    if feat.ndim != 3:
        raise ShapeError(f"bilinear_sample expects (C,H,W), got {feat.shape}")
    if np.shape(ys) != np.shape(xs):
        raise ShapeError("bilinear_sample: ys and xs differ in shape")
    _, h, w = feat.shape
    y = np.clip(np.asarray(ys, dtype=np.float64), 0.0, h - 1)
    x = np.clip(np.asarray(xs, dtype=np.float64), 0.0, w - 1)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = y - y0
    wx = x - x0
    corners = (
        (y0, x0, (1 - wy) * (1 - wx)),
        (y0, x1, (1 - wy) * wx),
        (y1, x0, wy * (1 - wx)),
        (y1, x1, wy * wx),
    )
    out = np.zeros((feat.shape[0],) + y.shape)
    for yy, xx, wt in corners:
        out += feat.data[:, yy, xx] * wt

    def rule(g: np.ndarray):
        gf = np.zeros(feat.shape)
        for yy, xx, wt in corners:
            np.add.at(gf, (slice(None), yy, xx), g * wt)
        return (gf,)

    return _result(out, (feat,), rule, "bilinear_sample")
