"""Forward and backward passes for the layer set, on float64 numpy arrays.

Spatial ops accept a single sample (C, H, W) or a batch (N, C, H, W) and
return the same rank they were given. Convolution is cross-correlation
(no kernel flip) with zero padding.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import LabelOutOfRange, ShapeMismatch


def _batched(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeMismatch(f"expected (C,H,W) or (N,C,H,W), got shape {x.shape}")


def _unbatch(y, squeeze):
    return y[0] if squeeze else y


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _windows(xp, kh, kw, stride):
    # (N, C, Ho, Wo, kh, kw) view into the padded input
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _pad(x, padding, value=0.0):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=value)


def _check_conv(x, kernel, bias, stride, padding):
    if kernel.ndim != 4:
        raise ShapeMismatch(f"kernel must be (K, C, kh, kw), got {kernel.shape}")
    k, c, kh, kw = kernel.shape
    if x.shape[1] != c:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, kernel expects {c}")
    if bias is not None and np.shape(bias) != (k,):
        raise ShapeMismatch(f"bias must have shape ({k},), got {np.shape(bias)}")
    if stride < 1 or padding < 0:
        raise ShapeMismatch("stride must be >= 1 and padding >= 0")
    if kh > x.shape[2] + 2 * padding or kw > x.shape[3] + 2 * padding:
        raise ShapeMismatch(f"kernel {kh}x{kw} larger than padded input {x.shape[2:]} (+{padding})")


def conv2d_forward(x, kernel, bias, stride: int = 1, padding: int = 0):
    x, squeeze = _batched(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    _check_conv(x, kernel, bias, stride, padding)
    _, _, kh, kw = kernel.shape
    win = _windows(_pad(x, padding), kh, kw, stride)
    out = np.tensordot(win, kernel, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, K)
    out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + np.asarray(bias)[None, :, None, None]
    return _unbatch(np.ascontiguousarray(out), squeeze)


def conv2d_backward(grad_out, x, kernel, stride: int = 1, padding: int = 0):
    """Return (d_input, d_kernel, d_bias) for ``conv2d_forward``."""
    x, squeeze = _batched(x)
    g, _ = _batched(grad_out)
    kernel = np.asarray(kernel, dtype=np.float64)
    n, c, h, w = x.shape
    _, _, kh, kw = kernel.shape
    xp = _pad(x, padding)
    win = _windows(xp, kh, kw, stride)
    ho, wo = win.shape[2], win.shape[3]
    if g.shape != (n, kernel.shape[0], ho, wo):
        raise ShapeMismatch(f"grad shape {g.shape} != output shape {(n, kernel.shape[0], ho, wo)}")

    d_kernel = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (K, C, kh, kw)
    d_bias = g.sum(axis=(0, 2, 3))
    d_cols = np.tensordot(g, kernel, axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
    d_xp = np.zeros_like(xp)
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            d_xp[:, :, i : i + hs : stride, j : j + ws : stride] += d_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    d_x = d_xp[:, :, padding : padding + h, padding : padding + w] if padding else d_xp
    return _unbatch(np.ascontiguousarray(d_x), squeeze), d_kernel, d_bias


def maxpool2d(x, window: int, stride: int | None = None, padding: int = 0):
    """Max over ``window`` x ``window`` regions; ties go to the first cell in row-major order.

    Returns (output, argmax) where argmax holds the flat in-window index of
    the winning cell; pass it to ``maxpool2d_backward``.
    """
    x, squeeze = _batched(x)
    stride = window if stride is None else stride
    if window > x.shape[2] + 2 * padding or window > x.shape[3] + 2 * padding:
        raise ShapeMismatch(f"pool window {window} larger than input {x.shape[2:]}")
    if padding >= window and padding:
        raise ShapeMismatch("pool padding must be smaller than the window")
    win = _windows(_pad(x, padding, -np.inf), window, window, stride)
    flat = win.reshape(win.shape[:4] + (window * window,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return _unbatch(out, squeeze), _unbatch(arg, squeeze)


def maxpool2d_backward(grad_out, argmax, input_shape, window: int, stride: int | None = None, padding: int = 0):
    stride = window if stride is None else stride
    g, squeeze = _batched(grad_out)
    arg = argmax[None] if squeeze else argmax
    shape = (1,) + tuple(input_shape) if len(input_shape) == 3 else tuple(input_shape)
    n, c, h, w = shape
    d_xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    ho, wo = g.shape[2], g.shape[3]
    hs, ws = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(window):
        for j in range(window):
            mask = arg == i * window + j
            if mask.any():
                d_xp[:, :, i : i + hs : stride, j : j + ws : stride] += np.where(mask, g, 0.0)
    d_x = d_xp[:, :, padding : padding + h, padding : padding + w] if padding else d_xp
    return _unbatch(np.ascontiguousarray(d_x), squeeze)


def global_avg_pool(x):
    x, squeeze = _batched(x)
    return _unbatch(x.mean(axis=(2, 3)), squeeze)


def global_avg_pool_backward(grad_out, input_shape):
    g = np.asarray(grad_out, dtype=np.float64)
    h, w = input_shape[-2:]
    return np.broadcast_to(g[..., None, None] / (h * w), tuple(input_shape)).copy()


def dense(x, weights, bias):
    """y = W x + b for x of shape (n,) or (N, n); weights are (m, n)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != weights.shape[1] or np.shape(bias) != (weights.shape[0],):
        raise ShapeMismatch(f"dense: input {x.shape}, weights {weights.shape}, bias {np.shape(bias)}")
    return x @ weights.T + bias


def dense_backward(grad_out, x, weights):
    """Return (d_input, d_weights, d_bias)."""
    g = np.asarray(grad_out, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if g.ndim == 1:
        return weights.T @ g, np.outer(g, x), g.copy()
    return g @ weights, g.T @ x, g.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, x):
    # subgradient 0 at the kink
    return np.where(np.asarray(x) > 0.0, grad_out, 0.0)


def concat_channels(inputs, axis: int | None = None):
    """Concatenate (Ci, H, W) tensors (or (N, Ci, H, W) batches) along channels."""
    arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
    if not arrays:
        raise ShapeMismatch("concat_channels needs at least one input")
    if axis is None:
        axis = 0 if arrays[0].ndim == 3 else 1
    ref = arrays[0].shape
    for a in arrays[1:]:
        if a.ndim != len(ref) or a.shape[:axis] + a.shape[axis + 1 :] != ref[:axis] + ref[axis + 1 :]:
            raise ShapeMismatch(f"cannot concatenate shapes {ref} and {a.shape}")
    return np.concatenate(arrays, axis=axis)


def concat_channels_backward(grad_out, sizes, axis: int | None = None):
    g = np.asarray(grad_out)
    if axis is None:
        axis = 0 if g.ndim == 3 else 1
    cuts = np.cumsum(sizes)[:-1]
    return np.split(g, cuts, axis=axis)


def add(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"add: shapes {np.shape(a)} and {np.shape(b)} differ")
    return np.asarray(a, dtype=np.float64) + b


def add_backward(grad_out):
    return grad_out, grad_out


# -- GRU --------------------------------------------------------------------

GRU_PARAM_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_gru(x, h, p):
    hd, d = p["W_z"].shape
    expected = {
        "W_z": (hd, d), "W_r": (hd, d), "W_h": (hd, d),
        "U_z": (hd, hd), "U_r": (hd, hd), "U_h": (hd, hd),
        "b_z": (hd,), "b_r": (hd,), "b_h": (hd,),
    }
    for name, shape in expected.items():
        if p[name].shape != shape:
            raise ShapeMismatch(f"GRU parameter {name} has shape {p[name].shape}, expected {shape}")
    if x.shape[-1] != d or h.shape[-1] != hd or x.shape[:-1] != h.shape[:-1]:
        raise ShapeMismatch(f"GRU step: x {x.shape}, h {h.shape} for d={d}, hidden={hd}")


def gru_step(x, h, params):
    """One GRU step; returns (h_new, cache).

    z = sig(W_z x + U_z h + b_z), r = sig(W_r x + U_r h + b_r),
    c = tanh(W_h x + U_h (r * h) + b_h), h_new = z * h + (1 - z) * c.
    x may be (d,) or (N, d) with h shaped to match.
    """
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    p = params
    _check_gru(x, h, p)
    z = sigmoid(x @ p["W_z"].T + h @ p["U_z"].T + p["b_z"])
    r = sigmoid(x @ p["W_r"].T + h @ p["U_r"].T + p["b_r"])
    rh = r * h
    c = np.tanh(x @ p["W_h"].T + rh @ p["U_h"].T + p["b_h"])
    h_new = z * h + (1.0 - z) * c
    return h_new, (x, h, z, r, rh, c)


def _outer(a, b):
    return np.outer(a, b) if a.ndim == 1 else a.T @ b


def gru_step_backward(grad_h_new, cache, params):
    """Return (d_x, d_h, d_params) for one ``gru_step``."""
    x, h, z, r, rh, c = cache
    p = params
    g = np.asarray(grad_h_new, dtype=np.float64)
    sum0 = (lambda a: a) if g.ndim == 1 else (lambda a: a.sum(axis=0))

    d_z = g * (h - c)
    d_c = g * (1.0 - z)
    d_h = g * z
    a_c = d_c * (1.0 - c * c)
    d_rh = a_c @ p["U_h"]
    d_r = d_rh * h
    d_h = d_h + d_rh * r
    a_z = d_z * z * (1.0 - z)
    a_r = d_r * r * (1.0 - r)

    d_x = a_z @ p["W_z"] + a_r @ p["W_r"] + a_c @ p["W_h"]
    d_h = d_h + a_z @ p["U_z"] + a_r @ p["U_r"]
    grads = {
        "W_z": _outer(a_z, x), "U_z": _outer(a_z, h), "b_z": sum0(a_z),
        "W_r": _outer(a_r, x), "U_r": _outer(a_r, h), "b_r": sum0(a_r),
        "W_h": _outer(a_c, x), "U_h": _outer(a_c, rh), "b_h": sum0(a_c),
    }
    return d_x, d_h, grads


# -- losses -----------------------------------------------------------------

def _check_labels(scores, labels):
    labels = np.asarray(labels)
    f = scores.shape[-1]
    if np.any(labels < 0) or np.any(labels >= f):
        raise LabelOutOfRange(f"labels must lie in [0, {f - 1}]")
    if labels.shape != scores.shape[:-1]:
        raise ShapeMismatch(f"labels shape {labels.shape} does not match scores {scores.shape}")
    return labels.astype(np.int64)


def softmax_cross_entropy_all(scores, labels):
    """Per-sample loss and gradient for scores (..., F) and integer labels (...)."""
    s = np.asarray(scores, dtype=np.float64)
    y = _check_labels(s, labels)
    shifted = s - s.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_p = shifted - log_z
    loss = -np.take_along_axis(log_p, y[..., None], axis=-1)[..., 0]
    grad = np.exp(log_p)
    np.put_along_axis(grad, y[..., None], np.take_along_axis(grad, y[..., None], axis=-1) - 1.0, axis=-1)
    return loss, grad


def multiclass_hinge_all(scores, labels, variant: str = "L2"):
    """One-vs-rest hinge with +1 / -1 targets, per sample.

    L1: sum_j max(0, 1 - t_j s_j); L2: sum_j max(0, 1 - t_j s_j)**2.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _check_labels(s, labels)
    t = -np.ones_like(s)
    np.put_along_axis(t, y[..., None], 1.0, axis=-1)
    margin = np.maximum(0.0, 1.0 - t * s)
    v = variant.upper()
    if v == "L1":
        loss = margin.sum(axis=-1)
        grad = np.where(margin > 0.0, -t, 0.0)
    elif v == "L2":
        loss = (margin * margin).sum(axis=-1)
        grad = -2.0 * t * margin
    else:
        raise ValueError(f"unknown hinge variant {variant!r}")
    return loss, grad


def softmax_cross_entropy(scores, label):
    loss, grad = softmax_cross_entropy_all(scores, label)
    return float(loss) if np.ndim(loss) == 0 else loss, grad


def multiclass_hinge(scores, label, variant: str = "L2"):
    loss, grad = multiclass_hinge_all(scores, label, variant)
    return float(loss) if np.ndim(loss) == 0 else loss, grad


def head_loss(scores, labels, head: str):
    """Batch-mean loss and its gradient w.r.t. scores (N, F)."""
    if head == "softmax":
        loss, grad = softmax_cross_entropy_all(scores, labels)
    elif head == "hinge_l1":
        loss, grad = multiclass_hinge_all(scores, labels, "L1")
    elif head == "hinge_l2":
        loss, grad = multiclass_hinge_all(scores, labels, "L2")
    else:
        raise ValueError(f"unknown head {head!r}")
    n = scores.shape[0]
    return float(loss.sum() / n), grad / n
