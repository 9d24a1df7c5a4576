"""Two-party additive secret sharing over Z/2^n."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError
from .ring import FixedTensor
from .transport import Phase


@dataclass
class AdditiveShare:
    """One party's additive share; share0 + share1 = secret mod 2^n."""

    tensor: FixedTensor
    party: int

    def __post_init__(self):
        if self.party not in (0, 1):
            raise ValueError("share party must be 0 or 1")

    @property
    def shape(self):
        return self.tensor.shape

    @property
    def scale(self):
        return self.tensor.scale

    @property
    def size(self):
        return self.tensor.size

    def _wrap(self, t: FixedTensor) -> "AdditiveShare":
        return AdditiveShare(t, self.party)

    def add(self, other: "AdditiveShare") -> "AdditiveShare":
        if other.party != self.party:
            raise ShapeMismatchError("cannot combine shares of different parties")
        return self._wrap(self.tensor.add(other.tensor))

    def sub(self, other: "AdditiveShare") -> "AdditiveShare":
        if other.party != self.party:
            raise ShapeMismatchError("cannot combine shares of different parties")
        return self._wrap(self.tensor.sub(other.tensor))

    def neg(self) -> "AdditiveShare":
        return self._wrap(self.tensor.neg())

    def scale_by_public_int(self, k: int) -> "AdditiveShare":
        return self._wrap(self.tensor.scale_by_public_int(k))

    def add_public(self, plain: FixedTensor) -> "AdditiveShare":
        """Add a public constant: only party 0 offsets its share."""
        if self.party == 0:
            return self._wrap(self.tensor.add(plain))
        if self.shape != plain.shape or self.scale != plain.scale:
            raise ShapeMismatchError("public constant shape/scale mismatch")
        return self._wrap(self.tensor.copy())

    def reshape(self, shape) -> "AdditiveShare":
        return self._wrap(self.tensor.reshape(shape))

    def transpose(self, axes=None) -> "AdditiveShare":
        return self._wrap(self.tensor.transpose(axes))

    def with_scale(self, scale: int) -> "AdditiveShare":
        return self._wrap(self.tensor.with_scale(scale))

    def __add__(self, other):
        return self.add(other)

    def __sub__(self, other):
        return self.sub(other)

    def __neg__(self):
        return self.neg()


def share(
    secret: FixedTensor, rng: np.random.Generator
) -> tuple[AdditiveShare, AdditiveShare]:
    """Split into a uniform share and its complement."""
    r = rng.integers(0, 1 << 64, size=secret.size, dtype=np.uint64)
    s0 = FixedTensor(r, secret.shape, secret.scale, secret.params)
    s1 = FixedTensor(secret.words - s0.words, secret.shape, secret.scale, secret.params)
    return AdditiveShare(s0, 0), AdditiveShare(s1, 1)


def reconstruct(s0: AdditiveShare, s1: AdditiveShare) -> FixedTensor:
    """Local recombination (test/bench path, no transport)."""
    if {s0.party, s1.party} != {0, 1}:
        raise ShapeMismatchError("need one share from each party")
    a, b = (s0, s1) if s0.party == 0 else (s1, s0)
    return a.tensor.add(b.tensor)


def truncate_share(s: AdditiveShare, d: int) -> AdditiveShare:
    """Share-local division by 2^d (scale drops by d; one-LSB noise)."""
    from .ring import truncate_local_share

    return AdditiveShare(truncate_local_share(s.tensor, d, s.party), s.party)


def open_share(sess, share_: AdditiveShare, name: str = "open") -> FixedTensor:
    """Both compute parties reveal their shares; one round, 2*size words.

    Returns the reconstructed tensor at both parties (zeros at the dealer
    and during the offline pass).
    """
    seq = sess.next_op(f"open:{name}")
    t = share_.tensor
    if sess.is_dealer or sess.offline:
        from .ring import zeros

        return zeros(t.shape, sess.params, t.scale)
    tag = sess.op_label("open", seq, name)
    (theirs,) = sess.ep.exchange(
        sess.peer, [(t.words, sess.params.n, tag)], Phase.ONLINE
    )
    total = FixedTensor(t.words + theirs, t.shape, t.scale, sess.params)
    return total
