"""Independent float references and metrics used as ground truth.

Everything here is double-precision and deliberately shares no code with
the optimized ring kernels: the brute-force gradients are plain Python
loops over the summation definition, so the protocol tests have a second
route to every value they assert.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bilinear import ConvShape
from .errors import ShapeMismatchError
from .ring import RingParams


def float_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 1.0 / (1.0 + np.exp(-x))


def float_softmax(x, axis: int = -1):
    """Standard softmax with max-subtraction for float stability."""
    x = np.asarray(x, dtype=np.float64)
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def float_sin(x, freq: int = 1, period_exp: int = 5):
    x = np.asarray(x, dtype=np.float64)
    return np.sin(2.0 * math.pi * freq * x / (1 << period_exp))


def euler_softmax_reference(x, steps: int = 16):
    """Float Euler integration of y' = (x - <x,y>1) * y from uniform y;
    isolates discretization error from fixed-point effects."""
    x = np.asarray(x, dtype=np.float64)
    y = np.full_like(x, 1.0 / x.shape[-1])
    for _ in range(steps):
        z = x * y
        y = y + (z - z.sum(axis=-1, keepdims=True) * y) / steps
    return y


def float_conv2d(x, w, cv: ConvShape) -> np.ndarray:
    """Double-precision NHWC conv (reference for gradients and metrics)."""
    x = np.asarray(x, dtype=np.float64).reshape(cv.input_shape)
    w = np.asarray(w, dtype=np.float64).reshape(cv.filter_shape)
    if cv.padding:
        x = np.pad(x, ((0, 0), (cv.padding,) * 2, (cv.padding,) * 2, (0, 0)))
    st = cv.stride
    out = np.zeros(cv.output_shape)
    for u in range(cv.r):
        for v in range(cv.s):
            xs = x[
                :,
                u : u + (cv.m_out - 1) * st + 1 : st,
                v : v + (cv.n_out - 1) * st + 1 : st,
                :,
            ]
            out += np.tensordot(xs, w[:, u, v, :], axes=([3], [0]))
    return out


def kl_divergence(p, q, clamp: float) -> np.ndarray:
    """sum p * ln(p/q) per row, with q clamped to >= clamp and renormalized."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeMismatchError(f"KL shapes {p.shape} vs {q.shape}")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError("p must sum to 1")
    q = np.maximum(q, clamp)
    q = q / q.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p / q), 0.0)
    return terms.sum(axis=-1)


def auc_score(labels, scores) -> float:
    """Mann-Whitney AUC with tie correction."""
    labels = np.asarray(labels).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need both classes for AUC")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum_pos = ranks[labels].sum()
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


# -- brute-force ring oracles ---------------------------------------------------


def _sw(word: int, n: int) -> int:
    return word - (1 << n) if word >= (1 << (n - 1)) else word


def brute_force_conv2d(x_words, w_words, cv: ConvShape, params: RingParams):
    """Forward conv by the quadruple-loop summation definition, Python ints
    mod 2^n. Tiny instances only."""
    mod = params.modulus
    x = np.asarray(x_words, dtype=np.uint64).reshape(cv.input_shape).tolist()
    w = np.asarray(w_words, dtype=np.uint64).reshape(cv.filter_shape).tolist()
    out = np.zeros(cv.output_shape, dtype=np.uint64)
    for b in range(cv.B):
        for i in range(cv.m_out):
            for j in range(cv.n_out):
                for d in range(cv.D):
                    acc = 0
                    for u in range(cv.r):
                        for v in range(cv.s):
                            pi = i * cv.stride + u - cv.padding
                            pj = j * cv.stride + v - cv.padding
                            if not (0 <= pi < cv.m and 0 <= pj < cv.n):
                                continue
                            for c in range(cv.C):
                                acc += x[b][pi][pj][c] * w[c][u][v][d]
                    out[b, i, j, d] = acc % mod
    return out.reshape(-1)


def brute_force_conv_grads(x_words, w_words, dz_words, cv: ConvShape, params: RingParams):
    """(d input, d filter) of <dz, conv(x, w)> by direct summation of the
    coefficient expansion; independent of the optimized kernels."""
    mod = params.modulus
    x = np.asarray(x_words, dtype=np.uint64).reshape(cv.input_shape).tolist()
    w = np.asarray(w_words, dtype=np.uint64).reshape(cv.filter_shape).tolist()
    dz = np.asarray(dz_words, dtype=np.uint64).reshape(cv.output_shape).tolist()
    dx = np.zeros(cv.input_shape, dtype=np.uint64)
    dw = np.zeros(cv.filter_shape, dtype=np.uint64)
    dx_acc = [[[[0] * cv.C for _ in range(cv.n)] for _ in range(cv.m)] for _ in range(cv.B)]
    dw_acc = [[[[0] * cv.D for _ in range(cv.s)] for _ in range(cv.r)] for _ in range(cv.C)]
    for b in range(cv.B):
        for i in range(cv.m_out):
            for j in range(cv.n_out):
                for d in range(cv.D):
                    g = dz[b][i][j][d]
                    for u in range(cv.r):
                        for v in range(cv.s):
                            pi = i * cv.stride + u - cv.padding
                            pj = j * cv.stride + v - cv.padding
                            if not (0 <= pi < cv.m and 0 <= pj < cv.n):
                                continue
                            for c in range(cv.C):
                                dx_acc[b][pi][pj][c] += g * w[c][u][v][d]
                                dw_acc[c][u][v][d] += g * x[b][pi][pj][c]
    for b in range(cv.B):
        for p in range(cv.m):
            for q in range(cv.n):
                for c in range(cv.C):
                    dx[b, p, q, c] = dx_acc[b][p][q][c] % mod
    for c in range(cv.C):
        for u in range(cv.r):
            for v in range(cv.s):
                for d in range(cv.D):
                    dw[c, u, v, d] = dw_acc[c][u][v][d] % mod
    return dx.reshape(-1), dw.reshape(-1)


def central_difference_grad(loss_fn, theta: np.ndarray, h: float = 2.0**-6):
    """Gradient of a scalar float loss by central differences."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn(theta)
        flat[i] = orig - h
        dn = loss_fn(theta)
        flat[i] = orig
        g[i] = (up - dn) / (2 * h)
    return grad


@dataclass
class MetricReport:
    metric: str  # max_abs_err | KL | AUC
    inputs: dict = field(default_factory=dict)
    value: float = 0.0
    sample_count: int = 0
    seed: int | str = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "metric": self.metric,
                "inputs": self.inputs,
                "value": self.value,
                "sample_count": self.sample_count,
                "seed": self.seed,
            }
        )
