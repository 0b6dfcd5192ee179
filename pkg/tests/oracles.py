"""Slow, direct-definition reference computations used by the tests.

Nothing here imports the code it checks.
"""
import cmath
import math

import numpy as np


def dft_magnitude_direct(x):
    n = len(x)
    return np.array(
        [abs(sum(x[i] * cmath.exp(-2j * math.pi * k * i / n) for i in range(n))) for k in range(n)]
    )


def haar_basis_matrix(n=16):
    """Rows: scaling function at the coarsest level, then wavelets coarse to fine."""
    levels = int(math.log2(n))
    rows = [np.full(n, 1.0 / math.sqrt(n))]
    for j in range(levels, 0, -1):
        width = 2**j
        for k in range(n // width):
            psi = np.zeros(n)
            psi[k * width : k * width + width // 2] = 1.0
            psi[k * width + width // 2 : (k + 1) * width] = -1.0
            rows.append(psi / math.sqrt(width))
    return np.array(rows)


def gabor_direct(x, sigma, center=7.5):
    n = len(x)
    out = []
    for k in range(n):
        f = k / n
        acc = 0j
        for tau in range(n):
            acc += x[tau] * math.exp(-math.pi * (tau - center) ** 2 / sigma**2) * cmath.exp(-2j * math.pi * f * tau)
        out.append(abs(acc))
    return np.array(out)


def median3_direct(seq):
    padded = [seq[0]] + list(seq) + [seq[-1]]
    return [sorted(padded[i : i + 3])[1] for i in range(len(seq))]


def conv2d_loops(x, w, b, padding="valid"):
    """Cross-correlation by explicit loops; returns (output, multiply-accumulate count)."""
    h, wd, cin = x.shape
    k, _, _, cout = w.shape
    if padding == "same":
        p = k // 2
        x = np.pad(x, ((p, p), (p, p), (0, 0)))
        h, wd = h + 2 * p, wd + 2 * p
    ho, wo = h - k + 1, wd - k + 1
    out = np.zeros((ho, wo, cout))
    macc = 0
    for i in range(ho):
        for j in range(wo):
            for co in range(cout):
                acc = b[co]
                for di in range(k):
                    for dj in range(k):
                        for ci in range(cin):
                            acc += x[i + di, j + dj, ci] * w[di, dj, ci, co]
                            macc += 1
                out[i, j, co] = acc
    return out, macc


def depthwise_loops(x, w, b):
    h, wd, c = x.shape
    k = w.shape[0]
    p = k // 2
    xp = np.pad(x, ((p, p), (p, p), (0, 0)))
    out = np.zeros((h, wd, c))
    macc = 0
    for i in range(h):
        for j in range(wd):
            for ch in range(c):
                acc = b[ch]
                for di in range(k):
                    for dj in range(k):
                        acc += xp[i + di, j + dj, ch] * w[di, dj, ch]
                        macc += 1
                out[i, j, ch] = acc
    return out, macc


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def lstm_step_scalar(x, h, c, wi, wf, wg, wo, ui, uf, ug, uo, bi, bf, bg, bo):
    """One LSTM step with scalar input/hidden, gates written out by hand."""
    i = sigmoid(wi * x + ui * h + bi)
    f = sigmoid(wf * x + uf * h + bf)
    g = math.tanh(wg * x + ug * h + bg)
    o = sigmoid(wo * x + uo * h + bo)
    c_new = f * c + i * g
    return o * math.tanh(c_new), c_new


def central_difference(fn, params, h=1e-5):
    """Numerical gradient of scalar ``fn()`` w.r.t. every entry of every array in ``params``."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            up = fn()
            p[idx] = old - h
            down = fn()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def refcount_peak(layers, inputs, sizes):
    """Peak live bytes by simulating execution with reference counts.

    ``layers`` is a list of (name, input names); ``sizes`` maps every
    activation to its byte size. A buffer is freed right after its last
    reader finishes; the final output is never freed.
    """
    readers = {name: 0 for name in inputs}
    for name, srcs in layers:
        readers.setdefault(name, 0)
        for s in srcs:
            readers[s] += 1
    live = {name: sizes[name] for name in inputs}
    peak = 0
    for name, srcs in layers:
        live[name] = sizes[name]
        peak = max(peak, sum(live.values()))
        for s in srcs:
            readers[s] -= 1
            if readers[s] == 0:
                del live[s]
        # a produced activation nobody reads is released unless it is the output
        if readers[name] == 0 and name != layers[-1][0]:
            del live[name]
    return peak
