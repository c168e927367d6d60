"""Shared low-level numerics: unitary centered FFTs and FFT convolution.

Everything here operates on plain numpy arrays in double precision. The
autodiff engine and the optics module both build on these kernels so that
graph-mode and plain evaluation share one numerical code path.
"""
from __future__ import annotations

import numpy as np
from scipy import fft as sfft


def ufft2(x: np.ndarray) -> np.ndarray:
    """Unitary centered 2-D DFT over the last two axes.

    The input and output index origins sit at ``n // 2``, so a constant
    input transforms to a single spike at the grid center and Parseval
    holds exactly (``norm="ortho"``).
    """
    ax = (-2, -1)
    return sfft.fftshift(sfft.fft2(sfft.ifftshift(x, axes=ax), axes=ax, norm="ortho"), axes=ax)


def uifft2(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`ufft2`."""
    ax = (-2, -1)
    return sfft.fftshift(sfft.ifft2(sfft.ifftshift(x, axes=ax), axes=ax, norm="ortho"), axes=ax)


def _pad_sizes(h: int, w: int, kh: int, kw: int) -> tuple[int, int]:
    return sfft.next_fast_len(h + kh - 1), sfft.next_fast_len(w + kw - 1)


def conv2_same(img: np.ndarray, ker: np.ndarray) -> np.ndarray:
    """Linear 2-D convolution with zero padding, cropped to the image size.

    ``img`` may carry leading batch/channel axes; the convolution runs over
    the trailing two. The kernel center is taken at ``(kh // 2, kw // 2)``,
    matching the fftshift-centered PSF convention.
    """
    h, w = img.shape[-2:]
    kh, kw = ker.shape
    cy, cx = kh // 2, kw // 2
    ph, pw = _pad_sizes(h, w, kh, kw)
    fimg = sfft.rfft2(img, s=(ph, pw))
    fker = sfft.rfft2(ker, s=(ph, pw))
    full = sfft.irfft2(fimg * fker, s=(ph, pw))
    return np.ascontiguousarray(full[..., cy:cy + h, cx:cx + w])


def conv2_same_grads(
    grad_out: np.ndarray,
    img: np.ndarray,
    ker: np.ndarray,
    need_img: bool = True,
    need_ker: bool = True,
) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Adjoints of :func:`conv2_same` with respect to image and kernel.

    The forward map is crop o circular-conv o zero-pad, all linear, so the
    adjoint is the exact transpose: scatter the upstream gradient into the
    crop window, correlate, crop back to each operand's support.
    """
    h, w = img.shape[-2:]
    kh, kw = ker.shape
    cy, cx = kh // 2, kw // 2
    ph, pw = _pad_sizes(h, w, kh, kw)
    gfull = np.zeros(grad_out.shape[:-2] + (ph, pw), dtype=np.float64)
    gfull[..., cy:cy + h, cx:cx + w] = grad_out
    fg = sfft.rfft2(gfull)
    grad_img = None
    grad_ker = None
    if need_img:
        fker = sfft.rfft2(ker, s=(ph, pw))
        gi = sfft.irfft2(fg * np.conj(fker), s=(ph, pw))
        grad_img = np.ascontiguousarray(gi[..., :h, :w])
    if need_ker:
        fimg = sfft.rfft2(img, s=(ph, pw))
        gk = sfft.irfft2(fg * np.conj(fimg), s=(ph, pw))
        grad_ker = np.ascontiguousarray(gk[..., :kh, :kw])
        if grad_ker.ndim > 2:
            grad_ker = grad_ker.sum(axis=tuple(range(grad_ker.ndim - 2)))
    return grad_img, grad_ker


def conv2_direct(img: np.ndarray, ker: np.ndarray) -> np.ndarray:
    """Direct spatial-domain reference convolution (slow; used by tests)."""
    h, w = img.shape[-2:]
    kh, kw = ker.shape
    cy, cx = kh // 2, kw // 2
    out = np.zeros_like(img, dtype=np.float64)
    for a in range(kh):
        for b in range(kw):
            kv = ker[a, b]
            if kv == 0.0:
                continue
            dy, dx = a - cy, b - cx
            ys0, ys1 = max(0, dy), min(h, h + dy)
            xs0, xs1 = max(0, dx), min(w, w + dx)
            if ys0 >= ys1 or xs0 >= xs1:
                continue
            out[..., ys0:ys1, xs0:xs1] += kv * img[..., ys0 - dy:ys1 - dy, xs0 - dx:xs1 - dx]
    return out


def im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Sliding windows of a padded (H+kh-1, W+kw-1, C) tensor.

    Returns a view of shape (H, W, kh, kw, C).
    """
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    # sliding_window_view yields (H, W, C, kh, kw); put windows before channels
    return win.transpose(0, 1, 3, 4, 2)


def conv_layer_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Multi-channel same-padding convolution ``(H,W,Cin) -> (H,W,Cout)``.

    ``w`` has shape (kh, kw, Cin, Cout). Returns the output and the padded
    input (kept for the backward pass).
    """
    h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    py, px = kh // 2, kw // 2
    xp = np.zeros((h + kh - 1, wd + kw - 1, cin), dtype=np.float64)
    xp[py:py + h, px:px + wd] = x
    cols = im2col(xp, kh, kw).reshape(h * wd, kh * kw * cin)
    out = cols @ w.reshape(kh * kw * cin, cout) + b
    return out.reshape(h, wd, cout), xp


def conv_layer_grads(
    grad_out: np.ndarray,
    xp: np.ndarray,
    w: np.ndarray,
    need_x: bool = True,
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Adjoints of :func:`conv_layer_forward` (input, weights, bias)."""
    kh, kw, cin, cout = w.shape
    h, wd = grad_out.shape[:2]
    py, px = kh // 2, kw // 2
    g2 = grad_out.reshape(h * wd, cout)
    cols = im2col(xp, kh, kw).reshape(h * wd, kh * kw * cin)
    grad_w = (cols.T @ g2).reshape(kh, kw, cin, cout)
    grad_b = g2.sum(axis=0)
    grad_x = None
    if need_x:
        gcols = (g2 @ w.reshape(kh * kw * cin, cout).T).reshape(h, wd, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for a in range(kh):
            for b_ in range(kw):
                gxp[a:a + h, b_:b_ + wd] += gcols[:, :, a, b_, :]
        grad_x = gxp[py:py + h, px:px + wd]
    return grad_x, grad_w, grad_b


def bilinear_shift(img: np.ndarray, dy: float, dx: float) -> np.ndarray:
    """Translate an image by a sub-pixel offset with zero fill.

    Content moves by (+dy, +dx); works on (H, W) or (H, W, C) arrays.
    """
    h, w = img.shape[:2]
    fy, fx = int(np.floor(dy)), int(np.floor(dx))
    ry, rx = dy - fy, dx - fx
    out = np.zeros_like(img, dtype=np.float64)

    def place(weight, oy, ox):
        if weight == 0.0:
            return
        ys0, ys1 = max(0, oy), min(h, h + oy)
        xs0, xs1 = max(0, ox), min(w, w + ox)
        if ys0 >= ys1 or xs0 >= xs1:
            return
        out[ys0:ys1, xs0:xs1] += weight * img[ys0 - oy:ys1 - oy, xs0 - ox:xs1 - ox]

    place((1 - ry) * (1 - rx), fy, fx)
    place((1 - ry) * rx, fy, fx + 1)
    place(ry * (1 - rx), fy + 1, fx)
    place(ry * rx, fy + 1, fx + 1)
    return out
