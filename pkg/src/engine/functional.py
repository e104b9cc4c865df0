"""
Forward/backward pairs for every layer kind, on NCHW numpy arrays.

Convolution loops over kernel offsets and contracts channels with einsum per
group; no im2col. Each forward returns (output, cache) and each backward takes
(grad_output, cache).
"""

from typing import List, Tuple

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _window(xp: np.ndarray, i: int, j: int, stride: int, oh: int, ow: int) -> np.ndarray:
    return xp[:, :, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride]


def _pad(x: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=value)


# ---------------------------------------------------------------- conv2d

def conv2d_forward(x, weight, bias, stride: int, padding: int, groups: int):
    n, c, h, w = x.shape
    out_c, _, k, _ = weight.shape
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    xp = _pad(x, padding)
    wg = weight.reshape(groups, out_c // groups, c // groups, k, k)
    y = np.zeros((n, groups, out_c // groups, oh, ow), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            patch = _window(xp, i, j, stride, oh, ow).reshape(n, groups, c // groups, oh, ow)
            y += np.einsum("ngchw,goc->ngohw", patch, wg[:, :, :, i, j])
    y = y.reshape(n, out_c, oh, ow) + bias.reshape(1, -1, 1, 1)
    return y, (xp, weight, stride, padding, groups, x.shape)


def conv2d_backward(dy, cache):
    xp, weight, stride, padding, groups, x_shape = cache
    n, c, h, w = x_shape
    out_c, _, k, _ = weight.shape
    _, _, oh, ow = dy.shape
    wg = weight.reshape(groups, out_c // groups, c // groups, k, k)
    dyg = dy.reshape(n, groups, out_c // groups, oh, ow)
    dwg = np.zeros_like(wg)
    dxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            patch = _window(xp, i, j, stride, oh, ow).reshape(n, groups, c // groups, oh, ow)
            dwg[:, :, :, i, j] = np.einsum("ngohw,ngchw->goc", dyg, patch)
            contrib = np.einsum("ngohw,goc->ngchw", dyg, wg[:, :, :, i, j]).reshape(n, c, oh, ow)
            dxp[:, :, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride] += contrib
    dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
    return dx, dwg.reshape(weight.shape), dy.sum(axis=(0, 2, 3))


# ---------------------------------------------------------------- linear

def linear_forward(x, weight, bias):
    return x @ weight.T + bias, (x, weight)


def linear_backward(dy, cache):
    x, weight = cache
    return dy @ weight, dy.T @ x, dy.sum(axis=0)


# ---------------------------------------------------------------- activations / reshapes

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def flatten_forward(x):
    return x.reshape(x.shape[0], -1), x.shape


def flatten_backward(dy, shape):
    return dy.reshape(shape)


def dropout_forward(x, p: float, training: bool, rng: np.random.Generator):
    if not training or p == 0:
        return x, None
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep, keep


def dropout_backward(dy, keep):
    return dy if keep is None else dy * keep


def add_forward(inputs: List[np.ndarray]):
    out = inputs[0].copy()
    for other in inputs[1:]:
        out += other
    return out, len(inputs)


def add_backward(dy, count) -> List[np.ndarray]:
    return [dy] * count


def concat_forward(inputs: List[np.ndarray], axis: int):
    sizes = [t.shape[axis] for t in inputs]
    return np.concatenate(inputs, axis=axis), (axis, sizes)


def concat_backward(dy, cache) -> List[np.ndarray]:
    axis, sizes = cache
    return np.split(dy, np.cumsum(sizes)[:-1], axis=axis)


# ---------------------------------------------------------------- pooling

def maxpool_forward(x, kernel: int, stride: int, padding: int):
    n, c, h, w = x.shape
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    xp = _pad(x, padding, value=-np.inf)
    windows = np.stack([_window(xp, i, j, stride, oh, ow) for i in range(kernel) for j in range(kernel)])
    argmax = windows.argmax(axis=0)
    y = np.take_along_axis(windows, argmax[None], axis=0)[0]
    return y, (argmax, xp.shape, kernel, stride, padding, x.shape)


def maxpool_backward(dy, cache):
    argmax, xp_shape, kernel, stride, padding, x_shape = cache
    _, _, oh, ow = dy.shape
    dxp = np.zeros(xp_shape, dtype=dy.dtype)
    for index in range(kernel * kernel):
        i, j = divmod(index, kernel)
        dxp[:, :, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride] += dy * (argmax == index)
    h, w = x_shape[2], x_shape[3]
    return dxp[:, :, padding:padding + h, padding:padding + w]


def _bins(size: int, target: int) -> List[Tuple[int, int]]:
    return [((i * size) // target, -(-((i + 1) * size) // target)) for i in range(target)]


def adaptive_avgpool_forward(x, target: int):
    n, c, h, w = x.shape
    rows, cols = _bins(h, target), _bins(w, target)
    y = np.empty((n, c, target, target), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            y[:, :, i, j] = x[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    return y, (x.shape, rows, cols)


def adaptive_avgpool_backward(dy, cache):
    x_shape, rows, cols = cache
    dx = np.zeros(x_shape, dtype=dy.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            area = (r1 - r0) * (c1 - c0)
            dx[:, :, r0:r1, c0:c1] += (dy[:, :, i, j] / area)[:, :, None, None]
    return dx


# ---------------------------------------------------------------- batch norm

def batchnorm_forward(x, gamma, beta, running_mean, running_var, training: bool):
    if training:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        count = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1 - BN_MOMENTUM
        running_mean += BN_MOMENTUM * mean
        running_var *= 1 - BN_MOMENTUM
        running_var += BN_MOMENTUM * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    y = gamma.reshape(1, -1, 1, 1) * xhat + beta.reshape(1, -1, 1, 1)
    return y.astype(x.dtype, copy=False), (xhat, gamma, inv_std)


def batchnorm_backward(dy, cache):
    xhat, gamma, inv_std = cache
    count = dy.shape[0] * dy.shape[2] * dy.shape[3]
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma.reshape(1, -1, 1, 1)
    dx = (inv_std.reshape(1, -1, 1, 1) / count) * (
        count * dxhat
        - dxhat.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
    )
    return dx.astype(dy.dtype, copy=False), dgamma, dbeta


# ---------------------------------------------------------------- loss

def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. logits"""
    n = logits.shape[0]
    probs = softmax(logits.astype(np.float64))
    loss = -np.log(np.clip(probs[np.arange(n), labels], 1e-300, None)).mean()
    grad = probs
    grad[np.arange(n), labels] -= 1.0
    return float(loss), (grad / n).astype(logits.dtype)
