"""Nonlinear protocols: masked sine, sigmoid approximations, ODE softmax.

The sine of 2*k*pi*x / 2^p has period 2^p in the value domain, so only the
low p+f bits of x matter. The dealer shares sin/cos of a random (p+f)-bit
mask; online the parties open x minus the mask (one round, 2(p+f) bits per
element, shared by every frequency k) and combine with the angle-addition
identity. Sigmoid folds its series coefficients into the public sin/cos
factors so the whole evaluation costs one truncation.

Softmax integrates y' = (x - <x,y>1) * y from the uniform vector with a
fixed number of Euler steps; each step is two beaver products, reusing the
mask of x across iterations and the mask of y within one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bilinear import BilinearSpec
from .errors import DesyncError, ShapeMismatchError
from .proto_bm import BmCall, bm_multiply, bm_multiply_batch
from .randomness import PAIR_P0P2, PAIR_P1P2
from .ring import FixedTensor, encode
from .sharing import AdditiveShare
from .transport import PartyId, Phase

SIGMOID_PERIOD_EXP = 5  # sigmoid series period 2^5 = 32


@dataclass(frozen=True)
class FourierSigmoidCoeffs:
    """Sine-series fit of the logistic function on (-16, 16)."""

    a0: float = 0.5
    a: tuple[float, ...] = (
        0.61727893,
        -0.03416704,
        0.16933091,
        -0.04596946,
        0.08159136,
    )

    @property
    def freqs(self) -> tuple[int, ...]:
        return tuple(range(1, len(self.a) + 1))

    @property
    def bound(self) -> float:
        """Output range half-width: |out - a0| <= sum |a_j| everywhere."""
        return sum(abs(c) for c in self.a)


@dataclass(frozen=True)
class ChebSigmoidCoeffs:
    """Odd degree-9 polynomial fit, accurate only on (-8, 8)."""

    a0: float = 0.5
    odd: tuple[tuple[int, float], ...] = (
        (1, 0.2159198015),
        (3, -0.0082176259),
        (5, 0.0001825597),
        (7, -0.0000018848),
        (9, 0.0000000072),
    )


@dataclass(frozen=True)
class EulerSteps:
    count: int = 16

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("need at least one step")

    @property
    def rounds(self) -> int:
        return 2 * self.count


@dataclass
class SinMaskBundle:
    """Per-party sine randomness: (p+f)-bit mask share plus shares of the
    encoded sin/cos of the full mask, one pair per frequency."""

    freqs: tuple[int, ...]
    period_exp: int
    mask_share: np.ndarray  # (size,) low p+f bits
    sin_shares: np.ndarray  # (L, size) scale-f words
    cos_shares: np.ndarray  # (L, size)


def _angles(words: np.ndarray, freq: int, frac_bits_total: int) -> np.ndarray:
    return (2.0 * math.pi * freq / (1 << frac_bits_total)) * words.astype(np.float64)


def _prepare_sin(sess, seq: int, name: str, size: int, freqs, period_exp: int):
    params = sess.params
    f = params.f
    mbits = period_exp + f
    lx = sess.op_label(name, seq, "xt")
    ls = sess.op_label(name, seq, "u")
    lc = sess.op_label(name, seq, "v")
    luv = sess.op_label(name, seq, "uv")
    L = len(freqs)

    if sess.is_dealer:
        if sess.accounting_only:
            uv = np.zeros(2 * L * size, dtype=np.uint64)
        else:
            xt_l = sess.prf.stream(PAIR_P0P2, lx).next_tensor(
                (size,), params, modulus_bits=mbits
            ).words
            xt_r = sess.prf.stream(PAIR_P1P2, lx).next_tensor(
                (size,), params, modulus_bits=mbits
            ).words
            xt = (xt_l + xt_r) & np.uint64((1 << mbits) - 1)
            u_l = sess.prf.stream(PAIR_P0P2, ls).next_words(L * size).reshape(L, size)
            v_l = sess.prf.stream(PAIR_P0P2, lc).next_words(L * size).reshape(L, size)
            sin_full = np.stack(
                [
                    encode(np.sin(_angles(xt, k, mbits)), params, f).words
                    for k in freqs
                ]
            )
            cos_full = np.stack(
                [
                    encode(np.cos(_angles(xt, k, mbits)), params, f).words
                    for k in freqs
                ]
            )
            u_r = (sin_full - u_l) & params.word_mask
            v_r = (cos_full - v_l) & params.word_mask
            uv = np.concatenate([u_r.reshape(-1), v_r.reshape(-1)])
        sess.ep.send(PartyId.P1, uv, params.n, Phase.OFFLINE, luv)
        if sess.debug_record and not sess.accounting_only:
            sess.debug[("sin_mask", seq)] = xt
        return

    if sess.compute_index == 0:
        if sess.accounting_only:
            xt_i = np.zeros(size, dtype=np.uint64)
            u_i = np.zeros((L, size), dtype=np.uint64)
            v_i = np.zeros((L, size), dtype=np.uint64)
        else:
            xt_i = sess.prf.stream(PAIR_P0P2, lx).next_tensor(
                (size,), params, modulus_bits=mbits
            ).words
            u_i = sess.prf.stream(PAIR_P0P2, ls).next_words(L * size).reshape(L, size)
            v_i = sess.prf.stream(PAIR_P0P2, lc).next_words(L * size).reshape(L, size)
    else:
        if sess.accounting_only:
            xt_i = np.zeros(size, dtype=np.uint64)
        else:
            xt_i = sess.prf.stream(PAIR_P1P2, lx).next_tensor(
                (size,), params, modulus_bits=mbits
            ).words
        uv = sess.ep.recv(PartyId.P2, 2 * L * size, params.n, Phase.OFFLINE, luv)
        u_i = uv[: L * size].reshape(L, size)
        v_i = uv[L * size :].reshape(L, size)
    sess.store_bundle(
        seq, SinMaskBundle(tuple(freqs), period_exp, xt_i, u_i, v_i)
    )


def _open_masked_arg(sess, seq: int, name: str, x: AdditiveShare, bundle, mbits: int):
    """One exchange of the (p+f)-bit masked input; returns the public delta."""
    low = np.uint64((1 << mbits) - 1)
    if sess.accounting_only:
        d_i = np.zeros(x.size, dtype=np.uint64)
    else:
        d_i = (x.tensor.words - bundle.mask_share) & low
    tag = sess.op_label(name, seq, "dx")
    (theirs,) = sess.ep.exchange(sess.peer, [(d_i, mbits, tag)], Phase.ONLINE)
    return (d_i + theirs) & low


def _masked_sine_core(
    sess,
    x: AdditiveShare,
    freqs,
    period_exp: int,
    fold: tuple[float, ...] | None,
    name: str,
):
    """Either a stack of per-frequency sine shares (fold=None) or the folded
    linear combination sum_j fold_j * sin_j, both at scale 2f."""
    params = sess.params
    f = params.f
    if x.scale != f:
        raise ShapeMismatchError(f"sine input must be at scale f, got {x.scale}")
    if period_exp + f >= params.n:
        raise ShapeMismatchError("period exponent too large for the ring")
    seq = sess.next_op(name)
    size = x.size
    L = len(freqs)
    mbits = period_exp + f

    if sess.offline:
        _prepare_sin(sess, seq, name, size, freqs, period_exp)
        shape = x.shape if fold is not None else (L,) + x.shape
        return sess.zeros_share(shape, 2 * f)

    if sess.is_dealer:
        shape = x.shape if fold is not None else (L,) + x.shape
        return sess.zeros_share(shape, 2 * f)

    bundle = sess.take_bundle(seq, SinMaskBundle)
    if bundle.freqs != tuple(freqs) or bundle.period_exp != period_exp:
        raise DesyncError("sine randomness does not match the online call")
    delta = _open_masked_arg(sess, seq, name, x, bundle, mbits)

    if sess.accounting_only:
        shape = x.shape if fold is not None else (L,) + x.shape
        return sess.zeros_share(shape, 2 * f)

    acc = np.zeros((L, size) if fold is None else size, dtype=np.uint64)
    for j, k in enumerate(freqs):
        ang = _angles(delta, k, mbits)
        scale_j = 1.0 if fold is None else fold[j]
        s_j = encode(scale_j * np.sin(ang), params, f).words
        c_j = encode(scale_j * np.cos(ang), params, f).words
        term = (s_j * bundle.cos_shares[j] + c_j * bundle.sin_shares[j]) \
            & params.word_mask
        if fold is None:
            acc[j] = term
        else:
            acc = (acc + term) & params.word_mask
    shape = x.shape if fold is not None else (L,) + x.shape
    t = FixedTensor(acc.reshape(-1), shape, 2 * f, params)
    return AdditiveShare(t, sess.compute_index)


def sin_protocol(
    sess,
    x: AdditiveShare,
    freqs,
    period_exp: int,
    name: str = "sin",
) -> AdditiveShare:
    """Shares of sin(2*k*pi*x / 2^period_exp) for each k, stacked on a new
    leading axis, at scale 2f. One online round and 2(period_exp + f) bits
    per element regardless of how many frequencies are evaluated."""
    return _masked_sine_core(sess, x, tuple(freqs), period_exp, None, name)


def sigmoid_fourier(
    sess,
    x: AdditiveShare,
    coeffs: FourierSigmoidCoeffs = FourierSigmoidCoeffs(),
    name: str = "sigmoid",
) -> AdditiveShare:
    """Sigmoid via the sine series; one round, one truncation, scale f out."""
    f = sess.params.f
    acc = _masked_sine_core(
        sess, x, coeffs.freqs, SIGMOID_PERIOD_EXP, coeffs.a, name
    )
    bias = encode(np.full(x.shape if x.shape else (1,), coeffs.a0), sess.params, 2 * f)
    if not x.shape:
        bias = bias.reshape(())
    out = acc.add_public(bias)
    from .sharing import truncate_share

    return truncate_share(out, f)


def sigmoid_chebyshev(
    sess,
    x: AdditiveShare,
    coeffs: ChebSigmoidCoeffs = ChebSigmoidCoeffs(),
    name: str = "cheb",
) -> AdditiveShare:
    """Degree-9 odd polynomial baseline: Horner in t = x^2, five sequential
    secure products (five rounds). Diverges rapidly outside (-8, 8).

    The constants span 0.22 down to 7e-9, so the Horner state is held at
    scale 2f (at scale f the two highest-order constants round to zero).
    In Horner form no intermediate exceeds a few units on the stated
    domain, which keeps every product word far from the ring modulus and
    local truncation reliable; the naive power chain would push x^9 * 2^2f
    against 2^n and wrap.
    """
    from .sharing import truncate_share

    params = sess.params
    f = params.f
    if x.scale != f:
        raise ShapeMismatchError("polynomial input must be at scale f")
    el = BilinearSpec("elementwise_mul", x.shape, x.shape)

    def mul(u, v, tag):
        return bm_multiply(sess, el, u, v, name=f"{name}.{tag}").share

    def const(v, scale):
        return int(encode(np.float64(v), params, scale).words[0])

    def plus_const(s, v):
        bias = encode(np.full(x.shape if x.shape else (1,), v), params, s.scale)
        if not x.shape:
            bias = bias.reshape(())
        return s.add_public(bias)

    odd = dict(coeffs.odd)
    t = truncate_share(mul(x, x, "t"), f)  # x^2 at scale f

    # innermost stage is a public-coefficient product: q = a9*t + a7, local
    q = t.scale_by_public_int(const(odd[9], 2 * f)).with_scale(3 * f)
    q = plus_const(truncate_share(q, f), odd[7])  # scale 2f
    for p in (5, 3, 1):
        q = truncate_share(mul(q, t, f"q{p}"), f)  # 2f + f -> trunc -> 2f
        q = plus_const(q, odd[p])
    out = truncate_share(mul(q, x, "out"), 2 * f)  # 2f + f -> trunc -> f
    return plus_const(out, coeffs.a0)


# -- softmax -------------------------------------------------------------------


def softmax_protocol(
    sess,
    x: AdditiveShare,
    steps: EulerSteps = EulerSteps(),
    name: str = "softmax",
) -> AdditiveShare:
    """Probability shares (scale f) for logits x of shape (classes,) or
    (batch, classes).

    Integrates from the uniform vector with ``steps`` Euler steps; the step
    count must be a power of two so the /k is an exact shift. Two beaver
    products per step (2*steps rounds): x keeps one mask for the whole loop,
    y's product mask is reused by the scalar rescale in the same step. The
    state is held at scale 2f and truncated to f once at the end.
    """
    from .sharing import truncate_share

    params = sess.params
    f = params.f
    k = steps.count
    if k & (k - 1):
        raise ValueError("step count must be a power of two (division by shift)")
    if x.scale != f:
        raise ShapeMismatchError("softmax input must be at scale f")
    squeeze = len(x.shape) == 1
    xs = x.reshape((1, x.shape[0])) if squeeze else x
    batch, classes = xs.shape

    el = BilinearSpec("elementwise_mul", (batch, classes), (batch, classes))
    sv = BilinearSpec("scalar_vec_mul", (batch, 1), (batch, classes))

    y0 = encode(np.full((batch, classes), 1.0 / classes), params, 2 * f)
    y = sess.public_share(y0)
    x_handle = None
    shift = k.bit_length() - 1

    for t in range(k):
        res_z = bm_multiply(
            sess, el, xs, y, reuse_a=x_handle, name=f"{name}.z"
        )
        x_handle = res_z.handle_a
        z = truncate_share(res_z.share, f)  # back to scale 2f
        total = z.tensor.view_nd().sum(axis=1, dtype=np.uint64) & params.word_mask
        s2f = AdditiveShare(
            FixedTensor(total, (batch, 1), z.scale, params), z.party
        )
        s = truncate_share(s2f, f)  # scalar at scale f
        res_w = bm_multiply(
            sess, sv, s, y, reuse_b=res_z.handle_b, name=f"{name}.w"
        )
        w = truncate_share(res_w.share, f)  # scale 2f
        upd = z.sub(w)
        if shift:
            upd = truncate_share(upd, shift).with_scale(2 * f)
        y = y.add(upd)

    out = truncate_share(y, f)
    return out.reshape((classes,)) if squeeze else out


def softmax_comm_closed_form(classes: int, n: int, steps: int) -> dict:
    """Steady-state accounting for one row of logits: after the first step
    has paid for x's mask, each iteration opens y's delta (2*classes words)
    and the rescale scalar's delta (2 words)."""
    per_iter = 2 * (classes + 1) * n
    return {
        "per_iter_online_bits": per_iter,
        "steady_online_bits": steps * per_iter,
        "first_iter_extra_bits": 2 * classes * n,
        "online_rounds": 2 * steps,
    }


def sigmoid_comm_closed_form(n: int, f: int, period_exp: int = SIGMOID_PERIOD_EXP,
                             terms: int = 5) -> dict:
    """Per-element bit costs of the series sigmoid (and of plain sine when
    terms=1)."""
    return {
        "offline_bits": 2 * terms * n,
        "online_bits": 2 * (period_exp + f),
        "online_rounds": 1,
    }


def chebyshev_comm_closed_form(n: int) -> dict:
    """Per-element costs of the sequential power schedule."""
    return {
        "offline_bits": 5 * n,
        "online_bits": 20 * n,
        "online_rounds": 5,
    }
