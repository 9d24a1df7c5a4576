"""Fixed-point arithmetic over the ring Z/2^n.

Values are stored as n-bit unsigned words with two's-complement semantics;
all arithmetic wraps mod 2^n. A tensor carries an integer ``scale`` s, so a
word w encodes the real value signed(w) / 2^s. Words always live in uint64
storage; for n < 64 every operation re-masks to the low n bits (exact,
since 2^n divides 2^64).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RingOverflowError, ShapeMismatchError


@dataclass(frozen=True)
class RingParams:
    """Ring bit width n and fixed-point fractional bits f."""

    n: int = 64
    f: int = 14

    def __post_init__(self):
        if self.n not in (32, 64):
            raise ValueError(f"ring width must be 32 or 64, got {self.n}")
        if not 1 <= self.f < self.n / 2:
            raise ValueError(f"need 1 <= f < n/2, got f={self.f}, n={self.n}")

    @property
    def word_mask(self) -> np.uint64:
        return np.uint64(0xFFFFFFFFFFFFFFFF if self.n == 64 else (1 << self.n) - 1)

    @property
    def modulus(self) -> int:
        return 1 << self.n


def _as_words(arr: np.ndarray, params: RingParams) -> np.ndarray:
    w = np.ascontiguousarray(arr, dtype=np.uint64)
    if params.n < 64:
        w = w & params.word_mask
    return w


def words_to_signed(words: np.ndarray, params: RingParams) -> np.ndarray:
    """Two's-complement interpretation of n-bit words as int64."""
    if params.n == 64:
        return words.view(np.int64)
    s = words.astype(np.int64)
    half = np.int64(1 << (params.n - 1))
    return np.where(s >= half, s - np.int64(1 << params.n), s)


def signed_to_words(signed: np.ndarray, params: RingParams) -> np.ndarray:
    return _as_words(np.asarray(signed, dtype=np.int64).view(np.uint64), params)


@dataclass
class FixedTensor:
    """Flat n-bit word tensor with a shape and a fixed-point scale."""

    words: np.ndarray
    shape: tuple[int, ...]
    scale: int
    params: RingParams = field(default_factory=RingParams)

    def __post_init__(self):
        self.shape = tuple(int(d) for d in self.shape)
        self.words = _as_words(np.asarray(self.words).reshape(-1), self.params)
        if self.words.size != self.size:
            raise ShapeMismatchError(
                f"{self.words.size} words for shape {self.shape}"
            )

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1

    def view_nd(self) -> np.ndarray:
        return self.words.reshape(self.shape if self.shape else ())

    def with_words(self, words: np.ndarray) -> "FixedTensor":
        return FixedTensor(words, self.shape, self.scale, self.params)

    def with_scale(self, scale: int) -> "FixedTensor":
        """Relabel the scale without touching words (value reinterpretation)."""
        return FixedTensor(self.words.copy(), self.shape, scale, self.params)

    def reshape(self, shape) -> "FixedTensor":
        shape = tuple(int(d) for d in shape)
        if int(np.prod(shape, dtype=np.int64)) != self.size:
            raise ShapeMismatchError(f"cannot reshape {self.shape} to {shape}")
        return FixedTensor(self.words.copy(), shape, self.scale, self.params)

    def transpose(self, axes=None) -> "FixedTensor":
        nd = self.view_nd().transpose(axes)
        return FixedTensor(nd.reshape(-1).copy(), nd.shape, self.scale, self.params)

    def copy(self) -> "FixedTensor":
        return FixedTensor(self.words.copy(), self.shape, self.scale, self.params)

    # -- local linear ops ---------------------------------------------------

    def _check_compatible(self, other: "FixedTensor"):
        if self.shape != other.shape:
            raise ShapeMismatchError(f"shape {self.shape} vs {other.shape}")
        if self.scale != other.scale:
            raise ShapeMismatchError(f"scale {self.scale} vs {other.scale}")
        if self.params != other.params:
            raise ShapeMismatchError("ring params differ")

    def add(self, other: "FixedTensor") -> "FixedTensor":
        self._check_compatible(other)
        return self.with_words(self.words + other.words)

    def sub(self, other: "FixedTensor") -> "FixedTensor":
        self._check_compatible(other)
        return self.with_words(self.words - other.words)

    def neg(self) -> "FixedTensor":
        return self.with_words(np.uint64(0) - self.words)

    def scale_by_public_int(self, k: int) -> "FixedTensor":
        kw = np.uint64(k % self.params.modulus)
        return self.with_words(self.words * kw)

    def __add__(self, other):
        return self.add(other)

    def __sub__(self, other):
        return self.sub(other)

    def __neg__(self):
        return self.neg()


def zeros(shape, params: RingParams, scale: int = 0) -> FixedTensor:
    shape = tuple(int(d) for d in shape)
    n = int(np.prod(shape, dtype=np.int64)) if shape else 1
    return FixedTensor(np.zeros(n, dtype=np.uint64), shape, scale, params)


def encode(real, params: RingParams, scale: int) -> FixedTensor:
    """Embed a real tensor as round(value * 2^scale) mod 2^n.

    Rounding is nearest, ties to even, so every party encodes identically.
    Raises RingOverflowError when any |value| * 2^scale reaches 2^(n-1).
    """
    arr = np.asarray(real, dtype=np.float64)
    scaled = arr * float(2**scale)
    limit = float(2 ** (params.n - 1))
    if np.any(~np.isfinite(scaled)) or np.any(np.abs(scaled) >= limit):
        raise RingOverflowError(
            f"value out of range for n={params.n}, scale={scale}"
        )
    words = signed_to_words(np.round(scaled).astype(np.int64), params)
    return FixedTensor(words.reshape(-1), arr.shape, scale, params)


def decode(t: FixedTensor) -> np.ndarray:
    """Signed interpretation of words divided by 2^scale."""
    signed = words_to_signed(t.words, t.params)
    return (signed.astype(np.float64) / float(2**t.scale)).reshape(
        t.shape if t.shape else ()
    )


def linear_local(op: str, a: FixedTensor, b=None) -> FixedTensor:
    """Dispatch for the communication-free linear ops."""
    if op == "add":
        return a.add(b)
    if op == "sub":
        return a.sub(b)
    if op == "neg":
        return a.neg()
    if op == "scale_by_public_int":
        return a.scale_by_public_int(int(b))
    raise ValueError(f"unknown linear op {op!r}")


def arithmetic_shift_right(words: np.ndarray, d: int, params: RingParams) -> np.ndarray:
    signed = words_to_signed(words, params)
    return signed_to_words(signed >> np.int64(d), params)


def truncate_local_share(share: FixedTensor, d: int, party: int) -> FixedTensor:
    """Divide a shared value by 2^d by shifting each share locally.

    Party 0 arithmetic-shifts its share; party 1 shifts the negation and
    negates back. The reconstruction equals the true quotient up to one LSB,
    with a wrap failure probability of about |x| / 2^(n-d) per element.
    The result scale drops by d; use with_scale() when the caller intends a
    value division at unchanged scale.
    """
    if d < 1:
        raise ValueError("shift must be >= 1")
    p = share.params
    if party == 0:
        out = arithmetic_shift_right(share.words, d, p)
    elif party == 1:
        neg = (np.uint64(0) - share.words) & p.word_mask
        out = (np.uint64(0) - arithmetic_shift_right(neg, d, p)) & p.word_mask
    else:
        raise ValueError("party must be 0 or 1")
    return FixedTensor(out, share.shape, share.scale - d, p)
