"""Stateless layer primitives with hand-written backward passes.

Batched functions take ``(N, H, W, C)`` feature maps; dense weights are
stored ``(out, in)`` so that ``y = x @ W.T + b``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=np.result_type(z, np.float64))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``.

    Returns the loss in nats and its gradient with respect to ``logits``.
    """
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -float(log_p[np.arange(n), labels].mean())
    dlogits = np.exp(log_p)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected an (H, W, C) or (N, H, W, C) array, got shape {x.shape}")


def _windows(x: np.ndarray, k: int) -> np.ndarray:
    # (N, Ho, Wo, C, k, k) -> rows ordered (i, j, c) to match kernel.reshape(k*k*C, C')
    n, h, w, c = x.shape
    win = sliding_window_view(x, (k, k), axis=(1, 2))
    ho, wo = h - k + 1, w - k + 1
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)


def conv2d_valid(
    x: np.ndarray, kernels: np.ndarray, bias: np.ndarray, return_cols: bool = False
):
    """Valid, stride-1 cross-correlation of a batch ``(N, H, W, C)``.

    ``kernels`` is ``(k, k, C, C_out)``. No activation is applied. With
    ``return_cols`` the im2col matrix is returned too, for reuse in backward.
    """
    n, h, w, c = x.shape
    k = kernels.shape[0]
    if kernels.shape[1] != k or kernels.shape[2] != c:
        raise ValueError(f"kernel shape {kernels.shape} incompatible with {c} input channels")
    if k > h or k > w:
        raise ValueError(f"kernel size {k} larger than input {h}x{w}")
    ho, wo = h - k + 1, w - k + 1
    cols = _windows(x, k)
    out = (cols @ kernels.reshape(k * k * c, -1) + bias).reshape(n, ho, wo, -1)
    return (out, cols) if return_cols else out


def conv2d_valid_backward(
    x: np.ndarray,
    kernels: np.ndarray,
    dout: np.ndarray,
    cols: np.ndarray | None = None,
    need_dx: bool = True,
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients ``(dx, dkernels, dbias)`` of :func:`conv2d_valid`.

    ``dx`` is ``None`` when ``need_dx`` is false.
    """
    n, h, w, c = x.shape
    k, _, _, c_out = kernels.shape
    ho, wo = h - k + 1, w - k + 1
    if cols is None:
        cols = _windows(x, k)
    dflat = dout.reshape(-1, c_out)
    dk = (cols.T @ dflat).reshape(kernels.shape)
    db = dflat.sum(axis=0)
    if not need_dx:
        return None, dk, db
    dcols = (dflat @ kernels.reshape(k * k * c, c_out).T).reshape(n, ho, wo, k, k, c)
    dx = np.zeros(x.shape, dtype=np.result_type(x, dout))
    for i in range(k):
        for j in range(k):
            dx[:, i : i + ho, j : j + wo, :] += dcols[:, :, :, i, j, :]
    return dx, dk, db


def conv2d_forward(
    x: np.ndarray, kernels: np.ndarray, bias: np.ndarray, activation: str = "relu"
) -> np.ndarray:
    """Convolution followed by ReLU, for a single ``(H, W, C)`` map or a batch."""
    if activation != "relu":
        raise ValueError(f"unsupported activation {activation!r}")
    xb, single = _as_batch(np.asarray(x, dtype=np.float64))
    out = relu(conv2d_valid(xb, kernels, bias))
    return out[0] if single else out


def maxpool2(x: np.ndarray) -> np.ndarray:
    """Non-overlapping 2x2 max pooling; a trailing odd row or column is dropped."""
    xb, single = _as_batch(np.asarray(x))
    n, h, w, c = xb.shape
    if h < 2 or w < 2:
        raise ValueError(f"maxpool2 needs H, W >= 2, got {h}x{w}")
    ho, wo = h // 2, w // 2
    out = xb[:, : 2 * ho, : 2 * wo, :].reshape(n, ho, 2, wo, 2, c).max(axis=(2, 4))
    return out[0] if single else out


def maxpool2_backward(x: np.ndarray, dout: np.ndarray) -> np.ndarray:
    """Route ``dout`` to the first maximal element of each window."""
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    blocks = x[:, : 2 * ho, : 2 * wo, :].reshape(n, ho, 2, wo, 2, c)
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    onehot = np.zeros_like(blocks, dtype=np.float64)
    np.put_along_axis(onehot, blocks.argmax(axis=-1)[..., None], 1.0, axis=-1)
    routed = onehot * dout[..., None]
    routed = routed.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros(x.shape, dtype=np.float64)
    dx[:, : 2 * ho, : 2 * wo, :] = routed.reshape(n, 2 * ho, 2 * wo, c)
    return dx


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
