"""One-round secure multiplication for any bilinear map.

The dealer derives masked-operand triples (a~, b~, c~ = f(a~, b~)) from the
pairwise PRF streams, so the only offline traffic is c~'s second share. The
online phase opens delta_a = a - a~ and delta_b = b - b~ in a single
exchange and each party computes

    c_i = f(delta_a, b_i) + f(a~_i, delta_b) + c~_i

which sums to f(a, b) exactly over the ring. A mask can be pinned with a
MaskHandle and reused by later invocations that keep the same operand; the
opened delta is then not retransmitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bilinear import (
    BilinearSpec,
    eval_words,
    im2col_baseline_shapes,
    im2col_expand,
    im2col_result_to_spec_shape,
    matmul_spec,
)
from .errors import DesyncError, ShapeMismatchError
from .randomness import PAIR_P0P2, PAIR_P1P2
from .ring import FixedTensor
from .sharing import AdditiveShare
from .transport import PartyId, Phase


@dataclass
class MaskHandle:
    """Reference to a (possibly already opened) operand mask.

    Valid while the masked operand's shares are unchanged. Compute parties
    carry their mask share and, after the online exchange, the public delta;
    the dealer carries the full mask so later triples can reuse it.
    """

    shape: tuple
    label: int
    mask_share: np.ndarray | None = None
    mask_full: np.ndarray | None = None
    delta: np.ndarray | None = None


@dataclass
class TripleBundle:
    """A compute party's correlated randomness for one invocation."""

    spec: BilinearSpec
    a_mask: np.ndarray | None  # None when operand a reuses an earlier mask
    b_mask: np.ndarray | None
    c_mask: np.ndarray
    reuse_a: bool = False
    reuse_b: bool = False


@dataclass
class BmResult:
    share: AdditiveShare  # zero-filled placeholder at the dealer
    handle_a: MaskHandle
    handle_b: MaskHandle


@dataclass
class BmCall:
    spec: BilinearSpec
    a: AdditiveShare
    b: AdditiveShare
    reuse_a: MaskHandle | None = None
    reuse_b: MaskHandle | None = None
    name: str = "bm"


def comm_closed_form(
    spec: BilinearSpec,
    phase: str,
    n: int = 64,
    reuse_a: bool = False,
    reuse_b: bool = False,
) -> int:
    """Closed-form protocol bits for one invocation.

    offline: |C| * n (the dealer's c~ share); online: both directions of the
    fresh deltas, 2(|A| + |B|) * n minus reused operands.
    """
    if phase == "offline":
        return spec.size_c * n
    if phase == "online":
        fresh = (0 if reuse_a else spec.size_a) + (0 if reuse_b else spec.size_b)
        return 2 * fresh * n
    raise ValueError(f"unknown phase {phase!r}")


def baseline_closed_form(spec: BilinearSpec, phase: str, n: int = 64) -> int:
    """Bits for the same conv evaluated as an unrolled matrix product."""
    rows, inner, cols = im2col_baseline_shapes(spec)
    if phase == "offline":
        return rows * cols * n
    if phase == "online":
        return 2 * (rows * inner + inner * cols) * n
    raise ValueError(f"unknown phase {phase!r}")


def _derive(sess, pair: str, label: int, size: int) -> np.ndarray:
    if sess.accounting_only:
        return np.zeros(size, dtype=np.uint64)
    t = sess.prf.stream(pair, label).next_tensor((size,), sess.params)
    return t.words


def _prepare_bundle(sess, seq: int, call: BmCall):
    """Offline step: dealer computes and ships c~'s second share; parties
    derive their mask shares locally from the shared PRF streams."""
    spec = call.spec
    la = sess.op_label(call.name, seq, "a")
    lb = sess.op_label(call.name, seq, "b")
    lc = sess.op_label(call.name, seq, "c")
    n = sess.params.n

    if sess.is_dealer:
        if call.reuse_a is not None:
            a_full, ha = call.reuse_a.mask_full, call.reuse_a
        else:
            a0 = _derive(sess, PAIR_P0P2, la, spec.size_a)
            a1 = _derive(sess, PAIR_P1P2, la, spec.size_a)
            a_full = (a0 + a1) & sess.params.word_mask
            ha = MaskHandle(spec.shape_a, la, mask_full=a_full)
        if call.reuse_b is not None:
            b_full, hb = call.reuse_b.mask_full, call.reuse_b
        else:
            b0 = _derive(sess, PAIR_P0P2, lb, spec.size_b)
            b1 = _derive(sess, PAIR_P1P2, lb, spec.size_b)
            b_full = (b0 + b1) & sess.params.word_mask
            hb = MaskHandle(spec.shape_b, lb, mask_full=b_full)
        c0 = _derive(sess, PAIR_P0P2, lc, spec.size_c)
        if sess.accounting_only:
            c1 = np.zeros(spec.size_c, dtype=np.uint64)
        else:
            c1 = (eval_words(spec, a_full, b_full, sess.params) - c0) \
                & sess.params.word_mask
        sess.ep.send(PartyId.P1, c1, n, Phase.OFFLINE, lc)
        return None, ha, hb

    idx = sess.compute_index
    pair = sess.my_pair()
    a_mask = None if call.reuse_a is not None else _derive(sess, pair, la, spec.size_a)
    b_mask = None if call.reuse_b is not None else _derive(sess, pair, lb, spec.size_b)
    if idx == 0:
        c_mask = _derive(sess, pair, lc, spec.size_c)
    else:
        c_mask = sess.ep.recv(PartyId.P2, spec.size_c, n, Phase.OFFLINE, lc)
    bundle = TripleBundle(
        spec,
        a_mask,
        b_mask,
        c_mask,
        reuse_a=call.reuse_a is not None,
        reuse_b=call.reuse_b is not None,
    )
    sess.store_bundle(seq, bundle)
    ha = call.reuse_a if call.reuse_a is not None \
        else MaskHandle(spec.shape_a, la, mask_share=a_mask)
    hb = call.reuse_b if call.reuse_b is not None \
        else MaskHandle(spec.shape_b, lb, mask_share=b_mask)
    return bundle, ha, hb


def _check_call(call: BmCall, sess):
    spec = call.spec
    if call.a.shape != spec.shape_a or call.b.shape != spec.shape_b:
        raise ShapeMismatchError(
            f"operands {(call.a.shape, call.b.shape)} vs spec "
            f"{(spec.shape_a, spec.shape_b)}"
        )
    if call.reuse_a is not None and call.reuse_a.shape != spec.shape_a:
        raise DesyncError("stale mask handle for operand a")
    if call.reuse_b is not None and call.reuse_b.shape != spec.shape_b:
        raise DesyncError("stale mask handle for operand b")


def bm_multiply_batch(sess, calls: list[BmCall]) -> list[BmResult]:
    """Run several independent invocations with their deltas batched into a
    single online exchange (one round for the whole batch)."""
    seqs = [sess.next_op(c.name) for c in calls]
    for c in calls:
        _check_call(c, sess)

    if sess.offline:
        out = []
        for seq, c in zip(seqs, calls):
            _, ha, hb = _prepare_bundle(sess, seq, c)
            share = sess.zeros_share(c.spec.shape_c, c.a.scale + c.b.scale)
            out.append(BmResult(share, ha, hb))
        return out

    if sess.is_dealer:
        return [
            BmResult(
                sess.zeros_share(c.spec.shape_c, c.a.scale + c.b.scale),
                MaskHandle(c.spec.shape_a, 0),
                MaskHandle(c.spec.shape_b, 0),
            )
            for c in calls
        ]

    n = sess.params.n
    mask = sess.params.word_mask
    bundles = [sess.take_bundle(seq, TripleBundle) for seq in seqs]
    for bundle, c in zip(bundles, calls):
        if bundle.spec != c.spec or bundle.reuse_a != (c.reuse_a is not None) \
                or bundle.reuse_b != (c.reuse_b is not None):
            raise DesyncError("online op does not match its prepared randomness")

    payloads = []
    slots = []  # (call index, operand) in payload order
    for i, (bundle, c) in enumerate(zip(bundles, calls)):
        if not bundle.reuse_a:
            d = (c.a.tensor.words - bundle.a_mask) & mask
            payloads.append((d, n, sess.op_label(c.name, seqs[i], "da")))
            slots.append((i, "a"))
        if not bundle.reuse_b:
            d = (c.b.tensor.words - bundle.b_mask) & mask
            payloads.append((d, n, sess.op_label(c.name, seqs[i], "db")))
            slots.append((i, "b"))

    theirs = sess.ep.exchange(sess.peer, payloads, Phase.ONLINE) if payloads else []

    deltas: dict[tuple[int, str], np.ndarray] = {}
    for (slot, (mine, _, _)), other in zip(zip(slots, payloads), theirs):
        deltas[slot] = (mine + other) & mask

    out = []
    for i, (bundle, c) in enumerate(zip(bundles, calls)):
        spec = c.spec
        da = c.reuse_a.delta if bundle.reuse_a else deltas[(i, "a")]
        db = c.reuse_b.delta if bundle.reuse_b else deltas[(i, "b")]
        a_mask = c.reuse_a.mask_share if bundle.reuse_a else bundle.a_mask
        if sess.accounting_only:
            c_words = np.zeros(spec.size_c, dtype=np.uint64)
        else:
            c_words = (
                eval_words(spec, da, c.b.tensor.words, sess.params)
                + eval_words(spec, a_mask, db, sess.params)
                + bundle.c_mask
            ) & mask
        scale = c.a.scale + c.b.scale
        tensor = FixedTensor(c_words, spec.shape_c, scale, sess.params)
        ha = c.reuse_a if bundle.reuse_a else MaskHandle(
            spec.shape_a, 0, mask_share=bundle.a_mask, delta=da
        )
        hb = c.reuse_b if bundle.reuse_b else MaskHandle(
            spec.shape_b, 0, mask_share=bundle.b_mask, delta=db
        )
        out.append(BmResult(AdditiveShare(tensor, sess.compute_index), ha, hb))
    return out


def bm_multiply(
    sess,
    spec: BilinearSpec,
    a: AdditiveShare,
    b: AdditiveShare,
    reuse_a: MaskHandle | None = None,
    reuse_b: MaskHandle | None = None,
    name: str = "bm",
) -> BmResult:
    return bm_multiply_batch(sess, [BmCall(spec, a, b, reuse_a, reuse_b, name)])[0]


def im2col_baseline_multiply(
    sess, spec: BilinearSpec, a: AdditiveShare, b: AdditiveShare
) -> BmResult:
    """Same conv result via the unrolled matrix product; communication
    follows the expanded matmul shapes (for measuring savings)."""
    rows, inner, cols = im2col_baseline_shapes(spec)
    mm = matmul_spec(rows, inner, cols)
    if sess.accounting_only or sess.is_dealer:
        wa = np.zeros(rows * inner, dtype=np.uint64)
        wb = np.zeros(inner * cols, dtype=np.uint64)
    else:
        ea, eb = im2col_expand(spec, a.tensor.words, b.tensor.words)
        wa, wb = ea.reshape(-1), eb.reshape(-1)
    sa = AdditiveShare(
        FixedTensor(wa, (rows, inner), a.scale, sess.params), a.party
    )
    sb = AdditiveShare(
        FixedTensor(wb, (inner, cols), b.scale, sess.params), b.party
    )
    res = bm_multiply(sess, mm, sa, sb, name="im2col")
    prod = res.share.tensor.words.reshape(rows, cols)
    flat = im2col_result_to_spec_shape(spec, prod)
    tensor = FixedTensor(flat, spec.shape_c, res.share.scale, sess.params)
    return BmResult(AdditiveShare(tensor, res.share.party), res.handle_a, res.handle_b)


@dataclass
class InvocationReport:
    """Measured and closed-form accounting for one protocol invocation."""

    spec_kind: str
    offline_bits: int
    online_bits: int
    online_rounds: int
    closed_offline_bits: int
    closed_online_bits: int

    @property
    def total_bytes(self) -> float:
        return (self.offline_bits + self.online_bits) / 8

    def to_json(self) -> dict:
        return {
            "kind": self.spec_kind,
            "offline_bits": self.offline_bits,
            "online_bits": self.online_bits,
            "online_rounds": self.online_rounds,
            "closed_offline_bits": self.closed_offline_bits,
            "closed_online_bits": self.closed_online_bits,
            "total_mb": self.total_bytes / 2**20,
        }
