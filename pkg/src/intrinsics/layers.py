"""Forward and backward passes for every layer of the two-scale network.

Convolution is cross-correlation (no kernel flip) over zero-padded input;
deconvolution is its exact transpose, so the pair satisfies the adjoint
identity <conv(x, w), y> = <x, deconv(y, w)> for any weight tensor.
Max pooling uses ceil-mode output extents with windows clipped to the
input, which is what makes a stack of stride-2 pools halve extents exactly
without pool padding.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .rng import Rng


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one (de)convolution: channels, kernel, stride, padding.

    For deconvolution the spec describes the convolution being transposed:
    the deconv maps out_channels -> in_channels and upsamples.
    """

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    pad_h: int = 0
    pad_w: int = 0

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"ConvSpec: channels must be >= 1, got "
                             f"in={self.in_channels} out={self.out_channels}")
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ValueError("ConvSpec: kernel extents must be >= 1")
        if self.stride_h < 1 or self.stride_w < 1:
            raise ValueError("ConvSpec: strides must be >= 1")
        if self.pad_h < 0 or self.pad_w < 0:
            raise ValueError("ConvSpec: padding must be >= 0")

    def out_extent(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.pad_h - self.kernel_h) // self.stride_h + 1
        ow = (w + 2 * self.pad_w - self.kernel_w) // self.stride_w + 1
        if oh < 1 or ow < 1:
            raise ValueError(f"ConvSpec: input {h}x{w} too small for kernel "
                             f"{self.kernel_h}x{self.kernel_w} pad "
                             f"{self.pad_h}x{self.pad_w}")
        return oh, ow

    def deconv_out_extent(self, h: int, w: int) -> tuple[int, int]:
        oh = (h - 1) * self.stride_h + self.kernel_h - 2 * self.pad_h
        ow = (w - 1) * self.stride_w + self.kernel_w - 2 * self.pad_w
        if oh < 1 or ow < 1:
            raise ValueError("ConvSpec: deconvolution output extent < 1")
        return oh, ow


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Padded input (N,C,Hp,Wp) -> columns (N, C*kh*kw, Ho*Wo)."""
    n, c, hp, wp = xp.shape
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw, :, :]              # (N, C, Ho, Wo, kh, kw)
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    return np.ascontiguousarray(cols)


def _col2im(cols: np.ndarray, x_shape, kh, kw, sh, sw, ph, pw) -> np.ndarray:
    """Adjoint of _im2col: scatter-add columns back into an (N,C,H,W) image."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * ph, w + 2 * pw
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    for u in range(kh):
        for v in range(kw):
            xp[:, :, u:u + sh * ho:sh, v:v + sw * wo:sw] += cols[:, :, u, v]
    if ph or pw:
        return xp[:, :, ph:ph + h, pw:pw + w]
    return xp


def _check_conv_input(x: np.ndarray, w: np.ndarray, spec: ConvSpec, channels: int):
    if x.ndim != 4:
        raise ValueError(f"conv: expected 4-D input, got {x.ndim}-D")
    if x.shape[1] != channels:
        raise ValueError(f"conv: input has {x.shape[1]} channels, spec expects {channels}")
    expect_w = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
    if w.shape != expect_w:
        raise ValueError(f"conv: weight shape {w.shape} != expected {expect_w}")


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                 spec: ConvSpec) -> np.ndarray:
    """Cross-correlation with zero padding; output extents per ConvSpec."""
    _check_conv_input(x, w, spec, spec.in_channels)
    n = x.shape[0]
    oh, ow = spec.out_extent(x.shape[2], x.shape[3])
    xp = np.pad(x, ((0, 0), (0, 0), (spec.pad_h, spec.pad_h), (spec.pad_w, spec.pad_w)))
    cols = _im2col(xp, spec.kernel_h, spec.kernel_w, spec.stride_h, spec.stride_w)
    w2d = w.reshape(spec.out_channels, -1)
    y = np.einsum("ok,nkp->nop", w2d, cols, optimize=True)
    y = y.reshape(n, spec.out_channels, oh, ow)
    if b is not None:
        y = y + b.reshape(1, -1, 1, 1)
    return y


def conv_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray, spec: ConvSpec):
    """Gradients of conv_forward w.r.t. input, weights, and bias."""
    n = x.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (spec.pad_h, spec.pad_h), (spec.pad_w, spec.pad_w)))
    cols = _im2col(xp, spec.kernel_h, spec.kernel_w, spec.stride_h, spec.stride_w)
    dy2d = dy.reshape(n, spec.out_channels, -1)
    w2d = w.reshape(spec.out_channels, -1)

    db = dy2d.sum(axis=(0, 2))
    dw = np.einsum("nop,nkp->ok", dy2d, cols, optimize=True).reshape(w.shape)
    dcols = np.einsum("ok,nop->nkp", w2d, dy2d, optimize=True)
    dx = _col2im(dcols, x.shape, spec.kernel_h, spec.kernel_w,
                 spec.stride_h, spec.stride_w, spec.pad_h, spec.pad_w)
    return dx, dw, db


def deconv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                   spec: ConvSpec) -> np.ndarray:
    """Transposed convolution: the adjoint of conv_forward for the same spec.

    Input carries spec.out_channels, output carries spec.in_channels at
    (in-1)*stride + kernel - 2*pad extents.
    """
    _check_conv_input(x, w, spec, spec.out_channels)
    n, _, h, w_in = x.shape
    oh, ow = spec.deconv_out_extent(h, w_in)
    w2d = w.reshape(spec.out_channels, -1)
    x2d = x.reshape(n, spec.out_channels, -1)
    cols = np.einsum("ok,nop->nkp", w2d, x2d, optimize=True)
    y = _col2im(cols, (n, spec.in_channels, oh, ow), spec.kernel_h, spec.kernel_w,
                spec.stride_h, spec.stride_w, spec.pad_h, spec.pad_w)
    if b is not None:
        y = y + b.reshape(1, -1, 1, 1)
    return y


def deconv_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray, spec: ConvSpec):
    """Gradients of deconv_forward; dx reuses conv_forward (mutual adjoints)."""
    n = x.shape[0]
    dx = conv_forward(dy, w, None, spec)
    dyp = np.pad(dy, ((0, 0), (0, 0), (spec.pad_h, spec.pad_h), (spec.pad_w, spec.pad_w)))
    cols = _im2col(dyp, spec.kernel_h, spec.kernel_w, spec.stride_h, spec.stride_w)
    x2d = x.reshape(n, spec.out_channels, -1)
    dw = np.einsum("nop,nkp->ok", x2d, cols, optimize=True).reshape(w.shape)
    db = dy.sum(axis=(0, 2, 3))
    return dx, dw, db


def max_pool_forward(x: np.ndarray, kernel: int, stride: int):
    """Ceil-mode max pooling; returns (output, argmax flat indices into x).

    Output extent is ceil((in - kernel)/stride) + 1; trailing windows are
    clipped to the input. Ties break toward the lowest flat index.
    """
    if kernel < 1 or stride < 1:
        raise ValueError("max_pool: kernel and stride must be >= 1")
    n, c, h, w = x.shape
    oh = -(-(h - kernel) // stride) + 1
    ow = -(-(w - kernel) // stride) + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"max_pool: window {kernel} does not overlap input {h}x{w}")
    # pad right/bottom with -inf so clipped windows never select a pad cell
    hp = (oh - 1) * stride + kernel
    wp = (ow - 1) * stride + kernel
    xp = np.pad(x, ((0, 0), (0, 0), (0, hp - h), (0, wp - w)),
                constant_values=-np.inf)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :].reshape(n, c, oh, ow, kernel * kernel)
    arg = win.argmax(axis=4)
    out = np.take_along_axis(win, arg[..., None], axis=4)[..., 0]
    # window-local argmax -> absolute flat index into the unpadded input
    rows = (np.arange(oh) * stride)[None, None, :, None] + arg // kernel
    colz = (np.arange(ow) * stride)[None, None, None, :] + arg % kernel
    flat = rows * w + colz
    return np.ascontiguousarray(out), flat


def max_pool_backward(dy: np.ndarray, argmax_flat: np.ndarray, x_shape) -> np.ndarray:
    n, c, h, w = x_shape
    dx = np.zeros((n, c, h * w), dtype=dy.dtype)
    idx = argmax_flat.reshape(n, c, -1)
    np.add.at(dx, (np.arange(n)[:, None, None], np.arange(c)[None, :, None], idx),
              dy.reshape(n, c, -1))
    return dx.reshape(x_shape)


@lru_cache(maxsize=256)
def _bilinear_matrix(factor: int, n_in: int) -> np.ndarray:
    """Sampling matrix (n_in*factor, n_in) for align-corners-false upsampling."""
    n_out = n_in * factor
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for o in range(n_out):
        s = (o + 0.5) / factor - 0.5
        s = min(max(s, 0.0), n_in - 1.0)
        i0 = int(np.floor(s))
        t = s - i0
        i1 = min(i0 + 1, n_in - 1)
        m[o, i0] += 1.0 - t
        m[o, i1] += t
    return m


def bilinear_upsample_forward(x: np.ndarray, factor: int) -> np.ndarray:
    """Fixed bilinear upsampling by an integer factor (align-corners-false)."""
    if factor < 1:
        raise ValueError("bilinear_upsample: factor must be a positive integer")
    if factor == 1:
        return x
    uh = _bilinear_matrix(factor, x.shape[2])
    uw = _bilinear_matrix(factor, x.shape[3])
    y = np.einsum("hp,ncpq,wq->nchw", uh, x, uw, optimize=True)
    return y.astype(x.dtype, copy=False)


def bilinear_upsample_backward(dy: np.ndarray, factor: int, in_shape) -> np.ndarray:
    """Exact adjoint of bilinear_upsample_forward."""
    if factor == 1:
        return dy
    uh = _bilinear_matrix(factor, in_shape[2])
    uw = _bilinear_matrix(factor, in_shape[3])
    dx = np.einsum("hp,nchw,wq->ncpq", uh, dy, uw, optimize=True)
    return dx.astype(dy.dtype, copy=False)


def prelu_forward(x: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    """Per-channel parametric ReLU: x where x >= 0, slope*x where x < 0."""
    if slopes.shape != (x.shape[1],):
        raise ValueError(f"prelu: {slopes.shape[0] if slopes.ndim else 0} slopes "
                         f"for {x.shape[1]} channels")
    a = slopes.reshape(1, -1, 1, 1)
    return np.where(x >= 0, x, a * x)


def prelu_backward(dy: np.ndarray, x: np.ndarray, slopes: np.ndarray):
    a = slopes.reshape(1, -1, 1, 1)
    neg = x < 0
    dx = np.where(neg, a * dy, dy)
    dslopes = np.where(neg, x * dy, 0.0).sum(axis=(0, 2, 3))
    return dx, dslopes


def dropout_forward(x: np.ndarray, p: float, rng: Rng, train_mode: bool):
    """Inverted dropout; returns (output, mask). Eval mode is identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: probability {p} outside [0, 1)")
    if not train_mode or p == 0.0:
        return x, None
    keep = (rng.uniform(x.shape) >= p).astype(x.dtype)
    mask = keep / np.asarray(1.0 - p, dtype=x.dtype)
    return x * mask, mask


def dropout_backward(dy: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return dy
    return dy * mask


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Channel concatenation; inputs must agree on N, H, W."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat: spatial/batch mismatch {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1)


def concat_backward(dy: np.ndarray, channels_a: int):
    return dy[:, :channels_a], dy[:, channels_a:]
