"""Forward and backward numpy kernels for every network layer.

Layout is channels-last. Kernels operate on a leading batch axis; the
public ``*_forward`` helpers also accept a single unbatched sample and
return an unbatched result. All arithmetic is float64.

Backward functions take the upstream gradient plus whatever the forward
pass needs and return gradients in the order (input, *params).
"""
from __future__ import annotations

import math

import numpy as np


def _batched(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim:
        return x[None], True
    if x.ndim == ndim + 1:
        return x, False
    raise ValueError(f"expected a {ndim}-d sample or {ndim + 1}-d batch, got shape {x.shape}")


def _unbatch(y, squeeze: bool):
    return y[0] if squeeze else y


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# convolution


def _pad_amount(k: int, padding: str) -> int:
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if padding == "same":
        return k // 2
    if padding == "valid":
        return 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv_output_hw(h: int, w: int, k: int, stride: int = 1, padding: str = "same") -> tuple[int, int]:
    p = _pad_amount(k, padding)
    ho = (h + 2 * p - k) // stride + 1
    wo = (w + 2 * p - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {k} does not fit a {h}x{w} input")
    return ho, wo


def conv2d_batch(x, w, b, stride=1, padding="same"):
    n, h, wd, cin = x.shape
    k, k2, wcin, cout = w.shape
    if k != k2 or wcin != cin or b.shape != (cout,):
        raise ValueError(f"conv shape mismatch: input {x.shape}, kernels {w.shape}, bias {b.shape}")
    p = _pad_amount(k, padding)
    ho, wo = conv_output_hw(h, wd, k, stride, padding)
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    out = np.broadcast_to(b, (n, ho, wo, cout)).copy()
    for di in range(k):
        for dj in range(k):
            patch = xp[:, di : di + stride * (ho - 1) + 1 : stride, dj : dj + stride * (wo - 1) + 1 : stride, :]
            out += patch @ w[di, dj]
    return out


def conv2d_backward(dout, x, w, stride=1, padding="same"):
    n, h, wd, cin = x.shape
    k = w.shape[0]
    p = _pad_amount(k, padding)
    ho, wo = dout.shape[1:3]
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    flat_dout = dout.reshape(-1, dout.shape[-1])
    for di in range(k):
        for dj in range(k):
            sl = (
                slice(None),
                slice(di, di + stride * (ho - 1) + 1, stride),
                slice(dj, dj + stride * (wo - 1) + 1, stride),
                slice(None),
            )
            dw[di, dj] = xp[sl].reshape(-1, cin).T @ flat_dout
            dxp[sl] += dout @ w[di, dj].T
    dx = dxp[:, p : p + h, p : p + wd, :] if p else dxp
    return dx, dw, dout.sum(axis=(0, 1, 2))


def conv2d_forward(x, kernels, bias, stride: int = 1, padding: str = "same"):
    """Cross-correlation of an (H, W, Cin) map, or a batch of them."""
    xb, squeeze = _batched(x, 3)
    return _unbatch(conv2d_batch(xb, np.asarray(kernels, float), np.asarray(bias, float), stride, padding), squeeze)


def conv2d_macc(k: int, cin: int, cout: int, ho: int, wo: int) -> int:
    return k * k * cin * cout * ho * wo


def depthwise_batch(x, w, b):
    n, h, wd, c = x.shape
    k = w.shape[0]
    if w.shape != (k, k, c) or b.shape != (c,):
        raise ValueError(f"depthwise shape mismatch: input {x.shape}, kernels {w.shape}, bias {b.shape}")
    p = _pad_amount(k, "same")
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    out = np.broadcast_to(b, x.shape).copy()
    for di in range(k):
        for dj in range(k):
            out += xp[:, di : di + h, dj : dj + wd, :] * w[di, dj]
    return out


def depthwise_backward(dout, x, w):
    n, h, wd, c = x.shape
    k = w.shape[0]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for di in range(k):
        for dj in range(k):
            dw[di, dj] = np.sum(xp[:, di : di + h, dj : dj + wd, :] * dout, axis=(0, 1, 2))
            dxp[:, di : di + h, dj : dj + wd, :] += dout * w[di, dj]
    return dxp[:, p : p + h, p : p + wd, :], dw, dout.sum(axis=(0, 1, 2))


def dsc_batch(x, dw, db, pw, pb):
    return conv2d_batch(depthwise_batch(x, dw, db), pw, pb, 1, "same")


def dsc_backward(dout, x, dw, db, pw):
    mid = depthwise_batch(x, dw, db)
    dmid, dpw, dpb = conv2d_backward(dout, mid, pw, 1, "same")
    dx, ddw, ddb = depthwise_backward(dmid, x, dw)
    return dx, ddw, ddb, dpw, dpb


def dsc_forward(x, depthwise, pointwise, depthwise_bias=None, pointwise_bias=None):
    """Depthwise k x k convolution (same padding) followed by 1x1 channel mixing.

    ``depthwise`` is (k, k, Cin); ``pointwise`` is (1, 1, Cin, Cout).
    """
    xb, squeeze = _batched(x, 3)
    depthwise = np.asarray(depthwise, float)
    pointwise = np.asarray(pointwise, float)
    if pointwise.ndim == 2:
        pointwise = pointwise[None, None]
    cin, cout = pointwise.shape[2:]
    db = np.zeros(cin) if depthwise_bias is None else np.asarray(depthwise_bias, float)
    pb = np.zeros(cout) if pointwise_bias is None else np.asarray(pointwise_bias, float)
    return _unbatch(dsc_batch(xb, depthwise, db, pointwise, pb), squeeze)


def dsc_macc(k: int, cin: int, cout: int, h: int, w: int) -> int:
    return (k * k * cin + cin * cout) * h * w


# ---------------------------------------------------------------------------
# normalization, pooling, activations


def batchnorm_forward(x, gamma, beta, mean, var, eps: float = 1e-3):
    """Inference-mode batch norm over the last (channel) axis."""
    var = np.asarray(var, dtype=np.float64)
    if np.any(var < 0):
        raise ValueError("batch-norm variance must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    if np.shape(gamma)[-1:] != x.shape[-1:]:
        raise ValueError("batch-norm parameters do not match channel count")
    return (x - mean) / np.sqrt(var + eps) * gamma + beta


def batchnorm_train(x, gamma, beta, eps):
    axes = tuple(range(x.ndim - 1))
    mu = x.mean(axis=axes)
    var = x.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gamma + beta, (xhat, inv, mu, var)


def batchnorm_backward_train(dout, cache, gamma):
    xhat, inv, _, _ = cache
    axes = tuple(range(dout.ndim - 1))
    m = dout.size // dout.shape[-1]
    dgamma = np.sum(dout * xhat, axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma
    dx = inv / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * np.sum(dxhat * xhat, axis=axes))
    return dx, dgamma, dbeta


def batchnorm_backward_eval(dout, x, gamma, mean, var, eps):
    axes = tuple(range(dout.ndim - 1))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    return dout * gamma * inv, np.sum(dout * xhat, axis=axes), dout.sum(axis=axes)


def maxpool_batch(x, pool=2, stride=2):
    n, h, w, c = x.shape
    if h < pool or w < pool:
        raise ValueError(f"pool {pool} larger than {h}x{w} input")
    ho, wo = (h - pool) // stride + 1, (w - pool) // stride + 1
    out = np.full((n, ho, wo, c), -np.inf)
    for di in range(pool):
        for dj in range(pool):
            out = np.maximum(out, x[:, di : di + stride * (ho - 1) + 1 : stride, dj : dj + stride * (wo - 1) + 1 : stride])
    return out


def maxpool_backward(dout, x, pool=2, stride=2):
    ho, wo = dout.shape[1:3]
    out = maxpool_batch(x, pool, stride)
    dx = np.zeros_like(x)
    taken = np.zeros(out.shape, dtype=bool)
    # first maximum in scan order receives the gradient
    for di in range(pool):
        for dj in range(pool):
            sl = (slice(None), slice(di, di + stride * (ho - 1) + 1, stride), slice(dj, dj + stride * (wo - 1) + 1, stride))
            hit = (x[sl] == out) & ~taken
            dx[sl] += np.where(hit, dout, 0.0)
            taken |= hit
    return dx


def maxpool2d_forward(x, pool: int = 2, stride: int = 2):
    xb, squeeze = _batched(x, 3)
    return _unbatch(maxpool_batch(xb, pool, stride), squeeze)


def global_avg_pool(x, axes=None):
    """Mean over the spatial axes of an (H, W, C) map or (N, H, W, C) batch.

    ``axes`` selects a subset of the spatial axes of a batch (1 for rows,
    2 for columns); pooled axes are removed.
    """
    x = np.asarray(x, dtype=np.float64)
    if axes is None:
        if x.ndim == 3:
            return x.mean(axis=(0, 1))
        axes = (1, 2)
    return x.mean(axis=tuple(axes))


def gap_backward(dout, x_shape, axes=(1, 2)):
    axes = tuple(axes)
    count = int(np.prod([x_shape[a] for a in axes]))
    return np.broadcast_to(np.expand_dims(dout, axes), x_shape) / count


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


# ---------------------------------------------------------------------------
# dense / softmax / loss


def dense_batch(x, w, b):
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ValueError(f"dense shape mismatch: input {x.shape}, weights {w.shape}, bias {b.shape}")
    return x @ w + b


def dense_backward(dout, x, w):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def dense_forward(x, w, b):
    """Wᵀx + b for an n-vector (or a batch of them) and an n x m weight matrix."""
    xb, squeeze = _batched(x, 1)
    return _unbatch(dense_batch(xb, np.asarray(w, float), np.asarray(b, float)), squeeze)


def dense_macc(n: int, m: int) -> int:
    return n * m


def softmax(logits, axis: int = -1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(probs, targets, reduction: str = "mean"):
    """Categorical cross-entropy of probability rows against one-hot (or soft) targets."""
    per = -np.sum(targets * np.log(np.clip(probs, 1e-300, None)), axis=-1)
    return _reduce(per, reduction)


def softmax_ce_backward(probs, targets, reduction: str = "mean"):
    g = probs - targets
    return g / len(probs) if reduction == "mean" else g


def mse(pred, targets, reduction: str = "mean"):
    per = np.mean((pred - targets) ** 2, axis=-1)
    return _reduce(per, reduction)


def softmax_mse_backward(probs, targets, reduction: str = "mean"):
    """Gradient w.r.t. logits of mean-squared error measured on softmax outputs."""
    dp = 2.0 * (probs - targets) / probs.shape[-1]
    if reduction == "mean":
        dp = dp / len(probs)
    return probs * (dp - np.sum(dp * probs, axis=-1, keepdims=True))


def _reduce(per, reduction):
    if reduction == "mean":
        return float(per.mean())
    if reduction == "sum":
        return float(per.sum())
    raise ValueError(f"unknown reduction {reduction!r}")


# ---------------------------------------------------------------------------
# LSTM


def lstm_batch(x, wx, wh, b, h0=None, c0=None):
    """Run an LSTM over (N, T, F) input.

    Gate blocks in ``wx`` (F, 4H), ``wh`` (H, 4H) and ``b`` (4H,) are
    ordered input, forget, cell, output. Returns (hidden states (N, T, H),
    cache for the backward pass).
    """
    n, t_len, f = x.shape
    hid = wh.shape[0]
    if wx.shape != (f, 4 * hid) or wh.shape != (hid, 4 * hid) or b.shape != (4 * hid,):
        raise ValueError(f"LSTM shape mismatch: input {x.shape}, Wx {wx.shape}, Wh {wh.shape}, b {b.shape}")
    h = np.zeros((n, hid)) if h0 is None else np.broadcast_to(h0, (n, hid)).astype(float)
    c = np.zeros((n, hid)) if c0 is None else np.broadcast_to(c0, (n, hid)).astype(float)
    xproj = x @ wx + b
    hs = np.empty((n, t_len, hid))
    cs = np.empty((n, t_len + 1, hid))
    hprev = np.empty((n, t_len, hid))
    gates = np.empty((n, t_len, 4 * hid))
    cs[:, 0] = c
    for t in range(t_len):
        hprev[:, t] = h
        z = xproj[:, t] + h @ wh
        ifo = sigmoid(np.concatenate([z[:, : 2 * hid], z[:, 3 * hid :]], axis=1))
        i, f_, o = ifo[:, :hid], ifo[:, hid : 2 * hid], ifo[:, 2 * hid :]
        g = np.tanh(z[:, 2 * hid : 3 * hid])
        c = f_ * c + i * g
        h = o * np.tanh(c)
        gates[:, t] = np.concatenate([i, f_, g, o], axis=1)
        cs[:, t + 1] = c
        hs[:, t] = h
    return hs, (x, hprev, cs, gates)


def lstm_backward(dhs, cache, wx, wh):
    """BPTT. ``dhs`` is the gradient w.r.t. every hidden state (N, T, H)."""
    x, hprev, cs, gates = cache
    n, t_len, hid = dhs.shape
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * hid)
    dx = np.empty_like(x)
    dh_next = np.zeros((n, hid))
    dc_next = np.zeros((n, hid))
    for t in reversed(range(t_len)):
        i, f_, g, o = np.split(gates[:, t], 4, axis=1)
        c = cs[:, t + 1]
        tc = np.tanh(c)
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1 - tc**2)
        dz = np.concatenate(
            [dc * g * i * (1 - i), dc * cs[:, t] * f_ * (1 - f_), dc * i * (1 - g**2), dh * tc * o * (1 - o)],
            axis=1,
        )
        dwx += x[:, t].T @ dz
        dwh += hprev[:, t].T @ dz
        db += dz.sum(axis=0)
        dx[:, t] = dz @ wx.T
        dh_next = dz @ wh.T
        dc_next = dc * f_
    return dx, dwx, dwh, db


def lstm_forward(sequence, params: "LstmParams", h0=None, c0=None):
    """Returns (all hidden states (T, H), final hidden state (H,)) for a (T, F) sequence.

    A batch (N, T, F) is accepted too, giving (N, T, H) and (N, H).
    """
    xb, squeeze = _batched(sequence, 2)
    hs, _ = lstm_batch(xb, params.wx, params.wh, params.b, h0, c0)
    return _unbatch(hs, squeeze), _unbatch(hs[:, -1], squeeze)


def lstm_macc(t_len: int, f: int, hid: int) -> int:
    return t_len * 4 * (f + hid) * hid


class LstmParams:
    """Input-to-hidden ``wx`` (F, 4H), hidden-to-hidden ``wh`` (H, 4H), bias ``b`` (4H,)."""

    def __init__(self, wx, wh, b):
        self.wx = np.asarray(wx, dtype=np.float64)
        self.wh = np.asarray(wh, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        hid = self.wh.shape[0]
        if self.wh.shape != (hid, 4 * hid) or self.wx.shape[1] != 4 * hid or self.b.shape != (4 * hid,):
            raise ValueError("inconsistent LSTM gate dimensions")

    @property
    def hidden_size(self) -> int:
        return self.wh.shape[0]

    @classmethod
    def zeros(cls, f: int, hid: int) -> "LstmParams":
        return cls(np.zeros((f, 4 * hid)), np.zeros((hid, 4 * hid)), np.zeros(4 * hid))


# ---------------------------------------------------------------------------
# efficient channel attention


def eca_kernel_size(channels: int, gamma: int = 2, b: int = 1) -> int:
    """Odd kernel size from |log2(C)/gamma + b/gamma|; 5 for 192 channels."""
    t = int(abs(math.log2(channels) / gamma + b / gamma))
    return t if t % 2 else t + 1


def _conv1d_same(v, k):
    kE = len(k)
    r = kE // 2
    vp = np.pad(v, ((0, 0), (r, r)))
    c = v.shape[1]
    return sum(k[j] * vp[:, j : j + c] for j in range(kE))


def eca_batch(x, kernel):
    """Returns (reweighted x, weights (N, C), cache)."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 1 or len(kernel) % 2 == 0:
        raise ValueError(f"ECA kernel length must be odd, got {kernel.shape}")
    g = x if x.ndim == 2 else x.mean(axis=tuple(range(1, x.ndim - 1)))
    w = sigmoid(_conv1d_same(g, kernel))
    wb = w.reshape(w.shape[:1] + (1,) * (x.ndim - 2) + w.shape[1:])
    return x * wb, w, (g, w)


def eca_backward(dout, x, kernel, cache):
    g, w = cache
    kE = len(kernel)
    r = kE // 2
    c = g.shape[1]
    wb = w.reshape(w.shape[:1] + (1,) * (x.ndim - 2) + w.shape[1:])
    dx = dout * wb
    dw = dout * x
    if x.ndim > 2:
        dw = dw.sum(axis=tuple(range(1, x.ndim - 1)))
    dz = dw * w * (1 - w)
    gp = np.pad(g, ((0, 0), (r, r)))
    dk = np.array([np.sum(dz * gp[:, j : j + c]) for j in range(kE)])
    dgp = np.zeros_like(gp)
    for j in range(kE):
        dgp[:, j : j + c] += dz * kernel[j]
    dg = dgp[:, r : r + c]
    if x.ndim == 2:
        dx = dx + dg
    else:
        spatial = int(np.prod(x.shape[1:-1]))
        dx = dx + dg.reshape(dg.shape[:1] + (1,) * (x.ndim - 2) + dg.shape[1:]) / spatial
    return dx, dk


def eca_forward(x, kernel):
    """Channel attention on a C-vector or (H, W, C) map.

    Returns (reweighted tensor, per-channel weights).
    """
    x = np.asarray(x, dtype=np.float64)
    xb = x[None]
    out, w, _ = eca_batch(xb, kernel)
    return out[0], w[0]


def eca_macc(channels: int, k: int) -> int:
    return k * channels + channels
