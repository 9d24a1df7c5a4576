"""Benchmark suites: cost-table reproduction and protocol quality metrics.

Accounting suites run with zero-filled payloads (byte and round counts do
not depend on values); quality suites run the real protocols and compare
against the float references. Reported MB are 2^20 bytes.
"""

from __future__ import annotations

import numpy as np

from .bilinear import BilinearSpec, ConvShape, conv_fwd_spec
from .nonlinear import (
    SIGMOID_PERIOD_EXP,
    EulerSteps,
    FourierSigmoidCoeffs,
    chebyshev_comm_closed_form,
    sigmoid_chebyshev,
    sigmoid_comm_closed_form,
    sigmoid_fourier,
    sin_protocol,
    softmax_comm_closed_form,
    softmax_protocol,
)
from .oracle_metrics import (
    euler_softmax_reference,
    float_sigmoid,
    float_sin,
    float_softmax,
    kl_divergence,
)
from .proto_bm import (
    baseline_closed_form,
    bm_multiply,
    comm_closed_form,
    im2col_baseline_multiply,
)
from .ring import RingParams, decode, encode
from .session import run_local_sim
from .sharing import open_share
from .transport import PartyId, Phase

MB = float(1 << 20)

PAPER_CONV = ConvShape(B=128, m=12, n=12, C=20, r=5, s=5, D=50)


def _zero_shares_job(spec: BilinearSpec, scale_a: int, scale_b: int, baseline: bool):
    def job(sess):
        a = sess.zeros_share(spec.shape_a, scale_a)
        b = sess.zeros_share(spec.shape_b, scale_b)
        if baseline:
            im2col_baseline_multiply(sess, spec, a, b)
        else:
            bm_multiply(sess, spec, a, b)
        return None

    return job


def measure_invocation(
    spec: BilinearSpec,
    params: RingParams | None = None,
    baseline: bool = False,
    seed: str = "bench",
) -> dict:
    """Measured bits/rounds of one invocation on zero payloads, with the
    matching closed forms."""
    params = params or RingParams()
    _, stats = run_local_sim(
        _zero_shares_job(spec, params.f, params.f, baseline),
        params,
        seed=seed,
        accounting_only=True,
        timeout=300.0,
    )
    closed = baseline_closed_form if baseline else comm_closed_form
    return {
        "kind": spec.kind + ("+im2col" if baseline else ""),
        "offline_bits": stats.phase_bits(Phase.OFFLINE),
        "online_bits": stats.phase_bits(Phase.ONLINE),
        "online_rounds": stats.round_count(Phase.ONLINE),
        "closed_offline_bits": closed(spec, "offline", params.n),
        "closed_online_bits": closed(spec, "online", params.n),
    }


def conv_comm_suite(conv: ConvShape = PAPER_CONV, params: RingParams | None = None):
    """Cost table for conv forward/backward vs the im2col baseline."""
    params = params or RingParams()
    fwd = conv_fwd_spec(conv)
    from .bilinear import backward_specs

    bwd_i, bwd_f = backward_specs(fwd)
    rows = []
    for spec in (fwd, bwd_i, bwd_f):
        ours = measure_invocation(spec, params, baseline=False)
        base = measure_invocation(spec, params, baseline=True)
        total = (ours["offline_bits"] + ours["online_bits"]) / 8
        base_total = (base["offline_bits"] + base["online_bits"]) / 8
        rows.append(
            {
                "kind": spec.kind,
                "offline_mb": ours["offline_bits"] / 8 / MB,
                "online_mb": ours["online_bits"] / 8 / MB,
                "total_mb": total / MB,
                "online_rounds": ours["online_rounds"],
                "baseline_offline_mb": base["offline_bits"] / 8 / MB,
                "baseline_online_mb": base["online_bits"] / 8 / MB,
                "baseline_total_mb": base_total / MB,
                "savings_pct": 100.0 * (1.0 - total / base_total),
                "measured_equals_closed": (
                    ours["offline_bits"] == ours["closed_offline_bits"]
                    and ours["online_bits"] == ours["closed_online_bits"]
                    and base["offline_bits"] == base["closed_offline_bits"]
                    and base["online_bits"] == base["closed_online_bits"]
                ),
            }
        )
    return rows


def _grid_inputs(lo: float, hi: float, step: float) -> np.ndarray:
    return np.arange(lo, hi + step / 2, step)


def sigmoid_suite(params: RingParams | None = None, seed: str = "bench") -> dict:
    """Accuracy on the [-8, 8] grid plus measured per-element costs."""
    params = params or RingParams()
    xs = _grid_inputs(-8.0, 8.0, 1.0 / 64)
    xq = encode(xs, params, params.f)

    def job(sess):
        x = sess.input_share("x", xq)
        return open_share(sess, sigmoid_fourier(sess, x))

    res, _ = run_local_sim(job, params, seed=seed)
    approx = decode(res[PartyId.P0].value)
    err = float(np.abs(approx - float_sigmoid(xs)).max())

    cost_probe = encode(np.zeros(16), params, params.f)

    def cost_job(sess):
        x = sess.zeros_share(cost_probe.shape, params.f)
        sigmoid_fourier(sess, x)

    _, stats = run_local_sim(cost_job, params, seed=seed, accounting_only=True)
    closed = sigmoid_comm_closed_form(params.n, params.f)
    return {
        "suite": "sigmoid",
        "max_abs_err": err,
        "online_bits_per_elem": stats.phase_bits(Phase.ONLINE) / 16,
        "offline_bits_per_elem": stats.phase_bits(Phase.OFFLINE) / 16,
        "online_rounds": stats.round_count(Phase.ONLINE),
        "closed": closed,
    }


def chebyshev_suite(params: RingParams | None = None, seed: str = "bench") -> dict:
    params = params or RingParams()
    xs = np.concatenate([_grid_inputs(-8.0, 8.0, 1.0 / 64), [12.0, -12.0]])
    xq = encode(xs, params, params.f)

    def job(sess):
        x = sess.input_share("x", xq)
        return open_share(sess, sigmoid_chebyshev(sess, x))

    res, _ = run_local_sim(job, params, seed=seed)
    got = decode(res[PartyId.P0].value)
    inside = np.abs(xs) <= 8
    err_in = float(np.abs(got - float_sigmoid(xs))[inside].max())
    err_12 = float(abs(got[-2] - float_sigmoid(12.0)))

    def cost_job(sess):
        x = sess.zeros_share((16,), params.f)
        sigmoid_chebyshev(sess, x)

    _, stats = run_local_sim(cost_job, params, seed=seed, accounting_only=True)
    return {
        "suite": "chebyshev",
        "max_abs_err_inside": err_in,
        "abs_err_at_12": err_12,
        "online_rounds": stats.round_count(Phase.ONLINE),
        "online_bits_per_elem": stats.phase_bits(Phase.ONLINE) / 16,
        "offline_bits_per_elem": stats.phase_bits(Phase.OFFLINE) / 16,
        "closed": chebyshev_comm_closed_form(params.n),
    }


def sin_suite(params: RingParams | None = None, seed: str = "bench") -> dict:
    """Single-frequency sine: accuracy sweep and per-element costs."""
    params = params or RingParams()
    rng = np.random.default_rng(7)
    xs = rng.uniform(-16, 16, size=256)
    xq = encode(xs, params, params.f)
    freqs = [1, 2, 3]

    def job(sess):
        x = sess.input_share("x", xq)
        return open_share(sess, sin_protocol(sess, x, freqs, SIGMOID_PERIOD_EXP))

    res, _ = run_local_sim(job, params, seed=seed)
    got = decode(res[PartyId.P0].value)
    true = np.stack([float_sin(xs, k, SIGMOID_PERIOD_EXP) for k in freqs])
    err = float(np.abs(got - true).max())

    def cost_job(sess):
        x = sess.zeros_share((16,), params.f)
        sin_protocol(sess, x, [1], SIGMOID_PERIOD_EXP)

    _, stats = run_local_sim(cost_job, params, seed=seed, accounting_only=True)
    return {
        "suite": "sin",
        "max_abs_err": err,
        "online_bits_per_elem": stats.phase_bits(Phase.ONLINE) / 16,
        "offline_bits_per_elem": stats.phase_bits(Phase.OFFLINE) / 16,
        "online_rounds": stats.round_count(Phase.ONLINE),
        "expected_online_bits": 2 * (SIGMOID_PERIOD_EXP + params.f),
    }


def softmax_comm_suite(
    classes: int = 10, params: RingParams | None = None, seed: str = "bench"
) -> dict:
    """Steady-state per-iteration bits measured as the difference between a
    16-step and an 8-step run (single row of logits)."""
    params = params or RingParams()

    def make_job(steps):
        def job(sess):
            x = sess.zeros_share((classes,), params.f)
            softmax_protocol(sess, x, EulerSteps(steps))

        return job

    _, s8 = run_local_sim(make_job(8), params, seed=seed, accounting_only=True)
    _, s16 = run_local_sim(make_job(16), params, seed=seed, accounting_only=True)
    per_iter = (s16.phase_bits(Phase.ONLINE) - s8.phase_bits(Phase.ONLINE)) // 8
    closed = softmax_comm_closed_form(classes, params.n, 16)
    return {
        "suite": "softmax-comm",
        "classes": classes,
        "measured_per_iter_online_bits": int(per_iter),
        "closed_per_iter_online_bits": closed["per_iter_online_bits"],
        "online_rounds_16_steps": s16.round_count(Phase.ONLINE),
        "closed_online_rounds": closed["online_rounds"],
        "total_online_bits_16_steps": s16.phase_bits(Phase.ONLINE),
    }


def softmax_kl_run(
    classes: int,
    batch: int = 128,
    params: RingParams | None = None,
    steps: int = 16,
    seed: int = 0,
    chunk: int = 32,
) -> dict:
    """Mean KL(plain softmax || protocol output) over a Gaussian batch.

    Large class counts run the batch in chunks to bound dealer memory; the
    statistic is unchanged (KL is per row).
    """
    params = params or RingParams()
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, classes))
    outs = []
    for lo in range(0, batch, chunk):
        xb = x[lo : lo + chunk]
        xq = encode(xb, params, params.f)

        def job(sess):
            xsh = sess.input_share("x", xq)
            pr = softmax_protocol(sess, xsh, EulerSteps(steps))
            return open_share(sess, pr)

        res, _ = run_local_sim(
            job, params, seed=f"kl-{classes}-{seed}-{lo}", timeout=300.0
        )
        outs.append(decode(res[PartyId.P0].value))
    approx = np.concatenate(outs, axis=0)
    plain = float_softmax(x)
    kl = kl_divergence(plain, approx, clamp=2.0**-params.f)
    ref = euler_softmax_reference(x, steps)
    kl_float = kl_divergence(plain, ref, clamp=2.0**-params.f)
    return {
        "suite": "softmax-kl",
        "classes": classes,
        "batch": batch,
        "f": params.f,
        "mean_kl": float(kl.mean()),
        "mean_kl_float_euler": float(kl_float.mean()),
        "sum_dev": float(np.abs(approx.sum(axis=1) - 1.0).max()),
    }


def softmax_kl_suite(long: bool = False, seed: int = 0) -> list[dict]:
    rows = [softmax_kl_run(m, seed=seed) for m in (10, 100, 1000)]
    if long:
        # At 10000 classes the default precision cannot express the
        # probabilities (1/m is under two LSB at f=14), so the long row runs
        # at f=18; the f=14 number is reported alongside, unasserted.
        rows.append(softmax_kl_run(10000, params=RingParams(64, 18), seed=seed))
        rows.append(softmax_kl_run(10000, seed=seed))
    return rows
