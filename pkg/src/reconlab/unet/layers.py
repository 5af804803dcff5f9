"""Forward/backward pairs for the layers of the residual U-Net.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes that cache and the upstream gradient.  Tensors are single samples laid
out ``C x T x H x W``; the dtype of the input is preserved so gradient checks
can run in float64.
"""
from __future__ import annotations

import numpy as np


class StaleTapeError(RuntimeError):
    """Backward called with a cache that no longer matches the parameters."""


def _offsets(ksize, hp, wp):
    kt, kh, kw = ksize
    return [a * hp * wp + b * wp + c for a in range(kt) for b in range(kh) for c in range(kw)]


def _pad_flat(x, ksize):
    """Zero-pad for 'same' output and flatten; one spare temporal slab absorbs overrun."""
    c, t, h, w = x.shape
    kt, kh, kw = ksize
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    hp, wp = h + kh - 1, w + kw - 1
    xp = np.zeros((c, t + kt, hp, wp), dtype=x.dtype)
    xp[:, pt:pt + t, ph:ph + h, pw:pw + w] = x
    return xp.reshape(c, -1), (hp, wp)


def conv3d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray):
    """'Same' 3D cross-correlation with zero padding.

    x: (C_in, T, H, W); kernel: (C_out, C_in, kt, kh, kw) with odd sizes;
    bias: (C_out,).  The padded volume is flattened so that every kernel tap
    becomes a constant offset into the same buffer.
    """
    c_out, c_in, kt, kh, kw = kernel.shape
    if x.ndim != 4 or x.shape[0] != c_in:
        raise ValueError(f"conv3d: input {x.shape} does not match kernel {kernel.shape}")
    if not (kt % 2 and kh % 2 and kw % 2):
        raise ValueError("conv3d: kernel sizes must be odd")
    _, t, h, w = x.shape
    xf, (hp, wp) = _pad_flat(x, (kt, kh, kw))
    n = t * hp * wp
    out = np.zeros((c_out, n), dtype=x.dtype)
    offs = _offsets((kt, kh, kw), hp, wp)
    plane = kh * kw
    # one stacked GEMM per temporal tap, then shifted accumulation of each tap
    stacked = kernel.transpose(2, 3, 4, 0, 1).reshape(kt, plane * c_out, c_in)
    for a in range(kt):
        z = (stacked[a] @ xf).reshape(plane, c_out, -1)
        for j in range(plane):
            off = offs[a * plane + j]
            out += z[j, :, off:off + n]
    y = out.reshape(c_out, t, hp, wp)[:, :, :h, :w] + bias.reshape(-1, 1, 1, 1)
    cache = {"xf": xf, "x_shape": x.shape, "kernel": kernel, "kernel_copy": kernel.copy(),
             "pad": (hp, wp)}
    return np.ascontiguousarray(y), cache


def conv3d_backward(cache, grad_out: np.ndarray, kernel: np.ndarray | None = None):
    """Gradients (grad_x, grad_kernel, grad_bias) of :func:`conv3d_forward`.

    Passing ``kernel`` checks that it still equals the kernel the forward
    pass saw.
    """
    k_fwd = cache["kernel"]
    if kernel is not None and not np.array_equal(kernel, cache["kernel_copy"]):
        raise StaleTapeError("conv3d_backward: kernel changed since forward pass")
    c_out, c_in, kt, kh, kw = k_fwd.shape
    c, t, h, w = cache["x_shape"]
    hp, wp = cache["pad"]
    xf = cache["xf"]
    n = t * hp * wp
    if grad_out.shape != (c_out, t, h, w):
        raise ValueError(f"conv3d_backward: grad shape {grad_out.shape} mismatch")
    g = np.zeros((c_out, t, hp, wp), dtype=grad_out.dtype)
    g[:, :, :h, :w] = grad_out
    g = g.reshape(c_out, n)
    offs = _offsets((kt, kh, kw), hp, wp)
    plane = kh * kw
    stacked_t = k_fwd.transpose(2, 3, 4, 1, 0).reshape(kt, plane * c_in, c_out)
    gxf = np.zeros_like(xf, dtype=np.result_type(xf, grad_out))
    for a in range(kt):
        z = (stacked_t[a] @ g).reshape(plane, c_in, n)
        for j in range(plane):
            off = offs[a * plane + j]
            gxf[:, off:off + n] += z[j]
    gk = np.empty((c_out, c_in, kt * kh * kw), dtype=gxf.dtype)
    for k, off in enumerate(offs):
        gk[:, :, k] = g @ xf[:, off:off + n].T
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    gx = gxf.reshape(c, t + kt, hp, wp)[:, pt:pt + t, ph:ph + h, pw:pw + w]
    gb = grad_out.reshape(c_out, -1).sum(axis=1)
    return np.ascontiguousarray(gx), gk.reshape(k_fwd.shape), gb


def relu_forward(x: np.ndarray):
    mask = x > 0
    return np.where(mask, x, 0).astype(x.dtype, copy=False), mask


def relu_backward(mask: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(mask, grad_out, 0).astype(grad_out.dtype, copy=False)


def pool_window(t: int, temporal_pool: bool) -> tuple[int, int, int]:
    """2x2x2 when the frame count is even (and temporal pooling is on), else 1x2x2."""
    return (2 if temporal_pool and t % 2 == 0 else 1, 2, 2)


def maxpool3d_forward(x: np.ndarray, window: tuple[int, int, int]):
    c, t, h, w = x.shape
    a, b, d = window
    if t % a or h % b or w % d:
        raise ValueError(f"maxpool3d: shape {x.shape} not divisible by window {window}")
    v = x.reshape(c, t // a, a, h // b, b, w // d, d).transpose(0, 1, 3, 5, 2, 4, 6)
    v = v.reshape(c, t // a, h // b, w // d, a * b * d)
    idx = np.argmax(v, axis=-1)
    y = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape, window)


def maxpool3d_backward(cache, grad_out: np.ndarray) -> np.ndarray:
    idx, shape, (a, b, d) = cache
    c, t, h, w = shape
    g = np.zeros(idx.shape + (a * b * d,), dtype=grad_out.dtype)
    np.put_along_axis(g, idx[..., None], grad_out[..., None], axis=-1)
    g = g.reshape(c, t // a, h // b, w // d, a, b, d).transpose(0, 1, 4, 2, 5, 3, 6)
    return g.reshape(shape)


def upconv3d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray):
    """Transposed convolution with kernel == stride: (C_in, T, H, W) -> (C_out, aT, bH, dW).

    kernel: (C_in, C_out, a, b, d).
    """
    c_in, c_out, a, b, d = kernel.shape
    c, t, h, w = x.shape
    if c != c_in:
        raise ValueError(f"upconv3d: input {x.shape} does not match kernel {kernel.shape}")
    y = kernel.reshape(c_in, -1).T @ x.reshape(c_in, -1)  # (c_out*a*b*d, t*h*w)
    y = y.reshape(c_out, a, b, d, t, h, w).transpose(0, 4, 1, 5, 2, 6, 3)
    y = y.reshape(c_out, t * a, h * b, w * d) + bias.reshape(-1, 1, 1, 1)
    return np.ascontiguousarray(y), (x, kernel)


def upconv3d_backward(cache, grad_out: np.ndarray):
    x, kernel = cache
    c_in, c_out, a, b, d = kernel.shape
    _, t, h, w = x.shape
    g = grad_out.reshape(c_out, t, a, h, b, w, d).transpose(0, 2, 4, 6, 1, 3, 5)
    g = g.reshape(c_out * a * b * d, t * h * w)
    gx = (kernel.reshape(c_in, -1) @ g).reshape(x.shape)
    gk = (x.reshape(c_in, -1) @ g.T).reshape(kernel.shape)
    gb = grad_out.reshape(c_out, -1).sum(axis=1)
    return gx, gk, gb


def concat_forward(a: np.ndarray, b: np.ndarray):
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"skip concat: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=0), a.shape[0]


def concat_backward(split: int, grad_out: np.ndarray):
    return grad_out[:split], grad_out[split:]


def loss_forward(pred: np.ndarray, truth: np.ndarray, kind: str = "L2"):
    """Mean squared (L2) or mean absolute (L1) error and its gradient w.r.t. ``pred``."""
    if pred.shape != truth.shape:
        raise ValueError(f"loss: shape mismatch {pred.shape} vs {truth.shape}")
    diff = pred.astype(np.float64) - truth
    n = diff.size
    kind = kind.upper()
    if kind == "L2":
        return float(np.mean(diff**2)), (2.0 / n * diff).astype(pred.dtype)
    if kind == "L1":
        return float(np.mean(np.abs(diff))), (np.sign(diff) / n).astype(pred.dtype)
    raise ValueError(f"unknown loss {kind!r}")
