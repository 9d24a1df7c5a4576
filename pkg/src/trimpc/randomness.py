"""PRF-keyed randomness streams shared pairwise between dealer and parties.

Both holders of a key derive identical words from (key, stream_id, counter)
with zero communication. The PRF is pinned to AES-128/256 in counter mode:
the 128-bit CTR block is stream_id || word_counter/2 (big endian), each
block yields two 64-bit little-endian words. Changing this mapping breaks
every recorded transcript, so it is frozen by test vectors in the repo.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import StreamExhaustedError
from .ring import FixedTensor, RingParams

PAIR_P0P2 = "P0P2"
PAIR_P1P2 = "P1P2"

_MAX_COUNTER = 1 << 64


@dataclass(frozen=True)
class PrfKey:
    """Opaque AES key held by one dealer/party pair."""

    key_bytes: bytes
    holder_pair: str

    def __post_init__(self):
        if len(self.key_bytes) not in (16, 24, 32):
            raise ValueError("key must be 16, 24, or 32 bytes")
        if self.holder_pair not in (PAIR_P0P2, PAIR_P1P2):
            raise ValueError(f"unknown holder pair {self.holder_pair!r}")


def stream_label(*parts) -> int:
    """Deterministic 64-bit stream id from a tuple of labels.

    Both holders derive the same id from (protocol name, invocation index,
    tensor role) without negotiation.
    """
    h = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "big")


class PrfStream:
    """Single-owner counter-mode stream of 64-bit words."""

    def __init__(self, key: PrfKey, stream_id: int, counter: int = 0):
        self.key = key
        self.stream_id = stream_id & 0xFFFFFFFFFFFFFFFF
        self.counter = counter

    def _keystream_words(self, start: int, count: int) -> np.ndarray:
        # Words start//2 .. : block b holds words 2b and 2b+1.
        first_block = start // 2
        last_block = (start + count + 1) // 2
        iv = ((self.stream_id << 64) | first_block).to_bytes(16, "big")
        enc = Cipher(algorithms.AES(self.key.key_bytes), modes.CTR(iv)).encryptor()
        ks = enc.update(bytes((last_block - first_block) * 16))
        offset = (start - 2 * first_block) * 8
        return np.frombuffer(ks, dtype="<u8", offset=offset, count=count).astype(
            np.uint64
        )

    def next_words(self, count: int) -> np.ndarray:
        if self.counter + count > _MAX_COUNTER:
            raise StreamExhaustedError(
                f"stream {self.stream_id:#x} exhausted at counter {self.counter}"
            )
        words = self._keystream_words(self.counter, count)
        self.counter += count
        return words

    def next_tensor(
        self,
        shape,
        params: RingParams,
        modulus_bits: int | None = None,
        scale: int = 0,
    ) -> FixedTensor:
        """Uniform words in [0, 2^modulus_bits); defaults to the full ring."""
        bits = params.n if modulus_bits is None else int(modulus_bits)
        if not 1 <= bits <= params.n:
            raise ValueError(f"modulus_bits {bits} outside 1..{params.n}")
        shape = tuple(int(d) for d in shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        words = self.next_words(n)
        if bits < 64:
            words = words & np.uint64((1 << bits) - 1)
        return FixedTensor(words, shape, scale, params)


class PrfSource:
    """The PRF keys one participant holds, with derived-stream bookkeeping."""

    def __init__(self, keys: dict[str, PrfKey]):
        self.keys = dict(keys)

    def has(self, pair: str) -> bool:
        return pair in self.keys

    def stream(self, pair: str, stream_id: int) -> PrfStream:
        return PrfStream(self.keys[pair], stream_id)

    @staticmethod
    def derive_keys(seed: bytes | str) -> dict[str, PrfKey]:
        """Expand a session seed into the two pairwise keys (test/local use)."""
        if isinstance(seed, str):
            seed = seed.encode()
        out = {}
        for pair in (PAIR_P0P2, PAIR_P1P2):
            kb = hashlib.sha256(b"trimpc-key/" + pair.encode() + b"/" + seed).digest()[
                :16
            ]
            out[pair] = PrfKey(kb, pair)
        return out

    @staticmethod
    def for_party(party_index: int, all_keys: dict[str, PrfKey]) -> "PrfSource":
        if party_index == 0:
            return PrfSource({PAIR_P0P2: all_keys[PAIR_P0P2]})
        if party_index == 1:
            return PrfSource({PAIR_P1P2: all_keys[PAIR_P1P2]})
        return PrfSource(all_keys)
