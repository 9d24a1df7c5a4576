"""Secure training built from the protocol layers: logistic regression and
a toy convolutional classifier, plus the plain fixed-point simulator that
training equivalence tests compare against.

The simulator mirrors the secure schedule value-for-value: same encode
rounding, same truncation points (value-level floor instead of share-level
shifts, which differ by at most one LSB each), and the same sine-mask
quantization when given the dealer's masks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bilinear import BilinearSpec, ConvShape, backward_specs, conv_fwd_spec, matmul_spec
from .errors import DataError
from .nonlinear import (
    SIGMOID_PERIOD_EXP,
    EulerSteps,
    FourierSigmoidCoeffs,
    sigmoid_fourier,
    softmax_protocol,
)
from .proto_bm import bm_multiply
from .ring import FixedTensor, RingParams, encode
from .sharing import AdditiveShare, truncate_share

SIGMOID_DOMAIN = 8.0  # |logit| beyond this leaves the accurate series range


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 128
    iterations: int = 100
    seed: int = 0
    dataset: str | None = None

    def lr_multiplier_words(self, params: RingParams) -> int:
        """lr/batch folded into one public multiplier at scale 2f."""
        return int(
            encode(
                np.float64(self.learning_rate / self.batch_size), params, 2 * params.f
            ).words[0]
        )


def take_rows(s: AdditiveShare, idx) -> AdditiveShare:
    nd = s.tensor.view_nd()[idx]
    t = FixedTensor(nd.reshape(-1).copy(), nd.shape, s.scale, s.tensor.params)
    return AdditiveShare(t, s.party)


def count_domain_violations(decoded_logits, limit: float = SIGMOID_DOMAIN) -> int:
    """Warning counter for opened metric values outside the sigmoid range."""
    return int((np.abs(np.asarray(decoded_logits)) > limit).sum())


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


# -- logistic regression ---------------------------------------------------------


def lr_train_step(
    sess,
    x: AdditiveShare,
    y: AdditiveShare,
    w: AdditiveShare,
    cfg: TrainConfig,
) -> AdditiveShare:
    """One SGD step of w <- w - lr/B * X^T (sigmoid(Xw) - y).

    Both products are beaver matmuls, the activation is the series sigmoid,
    and every product is followed by one local truncation.
    """
    f = sess.params.f
    batch, dim = x.shape
    logits = bm_multiply(
        sess, matmul_spec(batch, dim, 1), x, w.reshape((dim, 1)), name="lr.fwd"
    ).share
    logits = truncate_share(logits, f).reshape((batch,))
    p = sigmoid_fourier(sess, logits)
    resid = p.sub(y)
    grad = bm_multiply(
        sess,
        matmul_spec(dim, batch, 1),
        x.transpose(),
        resid.reshape((batch, 1)),
        name="lr.bwd",
    ).share
    grad = truncate_share(grad, f).reshape((dim,))
    step = grad.scale_by_public_int(cfg.lr_multiplier_words(sess.params))
    step = truncate_share(step.with_scale(3 * f), 2 * f)
    return w.sub(step)


def lr_step_closed_form_bits(batch: int, dim: int, n: int, f: int) -> dict:
    """Online/offline bits of one LR step: two matmuls plus the sigmoid."""
    fwd_on = 2 * (batch * dim + dim) * n
    bwd_on = 2 * (dim * batch + batch) * n
    sig_on = 2 * (SIGMOID_PERIOD_EXP + f) * batch
    return {
        "online_bits": fwd_on + bwd_on + sig_on,
        "offline_bits": (batch + dim) * n + 10 * n * batch,
        "online_rounds": 3,
    }


# -- toy convolutional classifier -------------------------------------------------


@dataclass
class SecureLayer:
    kind: str  # conv2d | dense | sigmoid_act
    param: AdditiveShare | None = None
    fwd_spec: BilinearSpec | None = None
    bwd_input_spec: BilinearSpec | None = None
    bwd_param_spec: BilinearSpec | None = None


def conv_layer(param: AdditiveShare, cv: ConvShape) -> SecureLayer:
    fwd = conv_fwd_spec(cv)
    bi, bf = backward_specs(fwd)
    return SecureLayer("conv2d", param, fwd, bi, bf)


def dense_layer(param: AdditiveShare, batch: int) -> SecureLayer:
    din, dout = param.shape
    fwd = matmul_spec(batch, din, dout)
    bi, bf = backward_specs(fwd)
    return SecureLayer("dense", param, fwd, bi, bf)


def sigmoid_layer() -> SecureLayer:
    return SecureLayer("sigmoid_act")


@dataclass
class ToyCnn:
    """conv2d -> sigmoid -> dense -> softmax cross-entropy head."""

    conv: SecureLayer
    act: SecureLayer
    dense: SecureLayer
    euler: EulerSteps = field(default_factory=EulerSteps)


def make_toy_cnn(sess, cv: ConvShape, classes: int, seed: int) -> ToyCnn:
    """Glorot init in plaintext (by the model owner), then shared."""
    params = sess.params
    rng = np.random.default_rng(seed)
    wc = glorot_uniform(cv.filter_shape, cv.r * cv.s * cv.C, cv.r * cv.s * cv.D, rng)
    hidden = cv.m_out * cv.n_out * cv.D
    wd = glorot_uniform((hidden, classes), hidden, classes, rng)
    wc_s = sess.input_share("cnn.wc", encode(wc, params, params.f))
    wd_s = sess.input_share("cnn.wd", encode(wd, params, params.f))
    return ToyCnn(conv_layer(wc_s, cv), sigmoid_layer(), dense_layer(wd_s, cv.B))


def _sigmoid_deriv(sess, p: AdditiveShare, upstream: AdditiveShare) -> AdditiveShare:
    """upstream * p * (1 - p) with two elementwise products."""
    f = sess.params.f
    el = BilinearSpec("elementwise_mul", p.shape, p.shape)
    ones = encode(np.ones(p.shape), sess.params, f)
    one_minus = p.neg().add_public(ones)
    sp = truncate_share(
        bm_multiply(sess, el, p, one_minus, name="act.deriv").share, f
    )
    return truncate_share(
        bm_multiply(sess, el, upstream, sp, name="act.chain").share, f
    )


def cnn_train_step(
    sess,
    x: AdditiveShare,
    onehot: AdditiveShare,
    model: ToyCnn,
    cfg: TrainConfig,
) -> ToyCnn:
    """Forward conv/sigmoid/dense/softmax, gradient (probs - onehot), then
    backward through the bilinear maps; SGD updates are local.

    The conv input gradient is computed even at the first layer so the
    backward-input protocol is exercised by training.
    """
    f = sess.params.f
    cv = model.conv.fwd_spec.conv
    batch = cv.B
    hidden = cv.m_out * cv.n_out * cv.D

    z1 = truncate_share(
        bm_multiply(sess, model.conv.fwd_spec, x, model.conv.param, name="conv.fwd").share,
        f,
    )
    z1_flat = z1.reshape((batch * hidden,))
    p1 = sigmoid_fourier(sess, z1_flat).reshape(cv.output_shape)
    flat = p1.reshape((batch, hidden))
    logits = truncate_share(
        bm_multiply(sess, model.dense.fwd_spec, flat, model.dense.param, name="dense.fwd").share,
        f,
    )
    probs = softmax_protocol(sess, logits, model.euler)

    dlogits = probs.sub(onehot)
    res_dwd = bm_multiply(
        sess, model.dense.bwd_param_spec, dlogits, flat, name="dense.bwd_param"
    )
    dwd = truncate_share(res_dwd.share, f)
    dflat = truncate_share(
        bm_multiply(
            sess,
            model.dense.bwd_input_spec,
            dlogits,
            model.dense.param,
            reuse_a=res_dwd.handle_a,
            name="dense.bwd_input",
        ).share,
        f,
    )
    dp1 = dflat.reshape(cv.output_shape)
    dz1 = _sigmoid_deriv(sess, p1, dp1)
    res_dwc = bm_multiply(
        sess, model.conv.bwd_param_spec, dz1, x, name="conv.bwd_param"
    )
    dwc = truncate_share(res_dwc.share, f)
    # first layer: input gradient unused, still driven through the protocol
    _ = truncate_share(
        bm_multiply(
            sess,
            model.conv.bwd_input_spec,
            dz1,
            model.conv.param,
            reuse_a=res_dwc.handle_a,
            name="conv.bwd_input",
        ).share,
        f,
    )

    mult = cfg.lr_multiplier_words(sess.params)

    def apply(wshare: AdditiveShare, gshare: AdditiveShare) -> AdditiveShare:
        step = gshare.scale_by_public_int(mult)
        step = truncate_share(step.with_scale(3 * f), 2 * f)
        return wshare.sub(step)

    new_conv = replace(model.conv, param=apply(model.conv.param, dwc))
    new_dense = replace(model.dense, param=apply(model.dense.param, dwd))
    return ToyCnn(new_conv, model.act, new_dense, model.euler)


# -- plain fixed-point simulator ---------------------------------------------------


def _trunc_value(v: np.ndarray, d: int) -> np.ndarray:
    return v >> np.int64(d)


def sim_sigmoid(
    x_sv: np.ndarray,
    masks: np.ndarray,
    params: RingParams,
    coeffs: FourierSigmoidCoeffs = FourierSigmoidCoeffs(),
) -> np.ndarray:
    """Value-level replay of the series sigmoid given the dealer's sine
    masks; matches the protocol up to the output truncation LSB."""
    f = params.f
    mbits = SIGMOID_PERIOD_EXP + f
    low = np.uint64((1 << mbits) - 1)
    xw = x_sv.astype(np.int64).view(np.uint64) & low
    delta = (xw - masks.astype(np.uint64)) & low
    acc = np.zeros(x_sv.shape, dtype=np.int64)
    for j, k in enumerate(coeffs.freqs):
        ang_d = (2.0 * math.pi * k / (1 << mbits)) * delta.astype(np.float64)
        ang_m = (2.0 * math.pi * k / (1 << mbits)) * masks.astype(np.float64)
        s_j = np.round(coeffs.a[j] * np.sin(ang_d) * (1 << f)).astype(np.int64)
        c_j = np.round(coeffs.a[j] * np.cos(ang_d) * (1 << f)).astype(np.int64)
        sin_m = np.round(np.sin(ang_m) * (1 << f)).astype(np.int64)
        cos_m = np.round(np.cos(ang_m) * (1 << f)).astype(np.int64)
        acc += s_j * cos_m + c_j * sin_m
    acc += np.int64(round(coeffs.a0 * (1 << (2 * f))))
    return _trunc_value(acc, f)


def sim_softmax(x_sv: np.ndarray, steps: int, params: RingParams) -> np.ndarray:
    """Value-level replay of the Euler softmax (state at 2f, output at f)."""
    f = params.f
    batch, classes = x_sv.shape
    y = np.full(
        (batch, classes), round((1 << (2 * f)) / classes), dtype=np.int64
    )
    shift = steps.bit_length() - 1
    for _ in range(steps):
        z = _trunc_value(x_sv * y, f)
        s = _trunc_value(z.sum(axis=1, keepdims=True), f)
        w = _trunc_value(s * y, f)
        y = y + _trunc_value(z - w, shift)
    return _trunc_value(y, f)


def sim_lr_step(
    x_sv: np.ndarray,
    y_sv: np.ndarray,
    w_sv: np.ndarray,
    cfg: TrainConfig,
    params: RingParams,
    sigmoid_masks: np.ndarray,
) -> np.ndarray:
    f = params.f
    logits = _trunc_value(x_sv @ w_sv, f)
    p = sim_sigmoid(logits, sigmoid_masks, params)
    resid = p - y_sv
    grad = _trunc_value(x_sv.T @ resid, f)
    step = _trunc_value(grad * np.int64(cfg.lr_multiplier_words(params)), 2 * f)
    return w_sv - step


def sim_conv_fwd(x_sv: np.ndarray, w_sv: np.ndarray, cv: ConvShape) -> np.ndarray:
    out = np.zeros(cv.output_shape, dtype=np.int64)
    st = cv.stride
    xp = (
        np.pad(x_sv, ((0, 0), (cv.padding,) * 2, (cv.padding,) * 2, (0, 0)))
        if cv.padding
        else x_sv
    )
    for u in range(cv.r):
        for v in range(cv.s):
            xs = xp[
                :,
                u : u + (cv.m_out - 1) * st + 1 : st,
                v : v + (cv.n_out - 1) * st + 1 : st,
                :,
            ]
            out += np.tensordot(xs, w_sv[:, u, v, :], axes=([3], [0]))
    return out


def sim_conv_bwd_filter(dz_sv: np.ndarray, x_sv: np.ndarray, cv: ConvShape) -> np.ndarray:
    dw = np.zeros(cv.filter_shape, dtype=np.int64)
    st = cv.stride
    for u in range(cv.r):
        for v in range(cv.s):
            xs = x_sv[
                :,
                u : u + (cv.m_out - 1) * st + 1 : st,
                v : v + (cv.n_out - 1) * st + 1 : st,
                :,
            ]
            dw[:, u, v, :] = np.tensordot(xs, dz_sv, axes=([0, 1, 2], [0, 1, 2]))
    return dw


def sim_cnn_step(
    x_sv: np.ndarray,
    onehot_sv: np.ndarray,
    wc_sv: np.ndarray,
    wd_sv: np.ndarray,
    cv: ConvShape,
    steps: int,
    cfg: TrainConfig,
    params: RingParams,
    sigmoid_masks: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    f = params.f
    batch = cv.B
    hidden = cv.m_out * cv.n_out * cv.D
    z1 = _trunc_value(sim_conv_fwd(x_sv, wc_sv, cv), f)
    p1 = sim_sigmoid(z1.reshape(-1), sigmoid_masks, params).reshape(cv.output_shape)
    flat = p1.reshape(batch, hidden)
    logits = _trunc_value(flat @ wd_sv, f)
    probs = sim_softmax(logits, steps, params)
    dlog = probs - onehot_sv
    dwd = _trunc_value(flat.T @ dlog, f)
    dflat = _trunc_value(dlog @ wd_sv.T, f)
    dp1 = dflat.reshape(cv.output_shape)
    one = np.int64(1 << f)
    sp = _trunc_value(p1 * (one - p1), f)
    dz1 = _trunc_value(dp1 * sp, f)
    dwc = _trunc_value(sim_conv_bwd_filter(dz1, x_sv, cv), f)
    mult = np.int64(cfg.lr_multiplier_words(params))
    wc_new = wc_sv - _trunc_value(dwc * mult, 2 * f)
    wd_new = wd_sv - _trunc_value(dwd * mult, 2 * f)
    return wc_new, wd_new


# -- data -----------------------------------------------------------------------


def load_dataset(path: str, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """CSV with numeric features and the label in the last column.

    Features are min-max normalized to [-1, 1] per column (plaintext, by
    the data owner, before sharing); rows are shuffled deterministically
    under the seed.
    """
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or (i == 0 and any(_non_numeric(c) for c in row)):
                continue  # blank line or header
            try:
                rows.append([float(c) for c in row])
            except ValueError as e:
                bad = next(j for j, c in enumerate(row) if _non_numeric(c))
                raise DataError(f"row {i + 1}, column {bad + 1}: {e}") from e
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"row {i + 1}: expected {width} columns, got {len(row)}")
    if width < 2:
        raise DataError("need at least one feature column plus a label")
    arr = np.asarray(rows, dtype=np.float64)
    order = np.random.default_rng(seed).permutation(arr.shape[0])
    arr = arr[order]
    feats, labels = arr[:, :-1], arr[:, -1]
    lo, hi = feats.min(axis=0), feats.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    feats = 2.0 * (feats - lo) / span - 1.0
    return feats, labels


def _non_numeric(cell: str) -> bool:
    try:
        float(cell)
        return False
    except ValueError:
        return True


def validate_binary_labels(labels: np.ndarray):
    vals = set(np.unique(labels).tolist())
    if not vals <= {0.0, 1.0}:
        raise DataError(f"binary classifier needs labels in {{0,1}}, got {sorted(vals)}")


def gaussian_blobs(
    n: int, dim: int, seed: int, separation: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Two unit-variance clusters at +-separation on every axis."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=n)
    centers = np.where(labels[:, None] == 1, separation, -separation)
    feats = centers + rng.standard_normal((n, dim))
    return feats, labels.astype(np.float64)
