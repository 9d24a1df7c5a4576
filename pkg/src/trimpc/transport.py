"""Party-to-party channels with phase tagging and exact cost accounting.

Payload accounting counts protocol bits only (sub-word payloads count their
declared bits per element); a separate wire counter includes frame headers
and control traffic. A round is one synchronized exchange barrier between
the two compute parties; dealer sends are offline and round-free.

Wire frame: {u32 magic, u8 phase, u64 stream-tag, u64 element-count,
payload}, words little-endian, sub-word payloads bit-packed contiguously.
"""

from __future__ import annotations

import json
import queue
import socket
import struct
import threading
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import PhaseError, ShapeMismatchError, TransportError
from .ring import RingParams

MAGIC = 0x43504D32  # "2MPC"
_HEADER = struct.Struct("<IBQQ")
HEADER_BYTES = _HEADER.size

DEFAULT_TIMEOUT = 120.0


class PartyId(IntEnum):
    P0 = 0
    P1 = 1
    P2 = 2


class Phase(IntEnum):
    OFFLINE = 0
    ONLINE = 1
    CONTROL = 2


# -- bit packing ---------------------------------------------------------------


def payload_nbytes(count: int, bits: int) -> int:
    return (count * bits + 7) // 8


def pack_words(words: np.ndarray, bits: int) -> bytes:
    """Pack uint64 words into ceil(count*bits/8) bytes, bits contiguous,
    little-endian bit and byte order."""
    words = np.ascontiguousarray(words.reshape(-1), dtype=np.uint64)
    if bits == 64:
        return words.astype("<u8").tobytes()
    if bits < 1 or bits > 64:
        raise ValueError(f"bits per element must be 1..64, got {bits}")
    if np.any(words >> np.uint64(bits)):
        raise ValueError("word does not fit declared bit width")
    shifts = np.arange(bits, dtype=np.uint64)
    bitarr = ((words[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bitarr.reshape(-1), bitorder="little").tobytes()


def unpack_words(data: bytes, count: int, bits: int) -> np.ndarray:
    if bits == 64:
        return np.frombuffer(data, dtype="<u8", count=count).astype(np.uint64)
    raw = np.frombuffer(data, dtype=np.uint8)
    bitarr = np.unpackbits(raw, bitorder="little")[: count * bits]
    bitarr = bitarr.reshape(count, bits).astype(np.uint64)
    shifts = np.arange(bits, dtype=np.uint64)
    return (bitarr << shifts).sum(axis=1, dtype=np.uint64)


# -- statistics ----------------------------------------------------------------


@dataclass
class CommStats:
    """Per-edge payload bits, per-edge wire bytes, per-party round counts."""

    payload_bits: Counter = field(default_factory=Counter)
    wire_bytes: Counter = field(default_factory=Counter)
    rounds: Counter = field(default_factory=Counter)

    def add_send(self, sender, receiver, phase: Phase, bits: int, wire: int):
        if phase != Phase.CONTROL:
            self.payload_bits[(sender, receiver, phase)] += bits
        self.wire_bytes[(sender, receiver, phase)] += wire

    def add_round(self, party, phase: Phase):
        self.rounds[(party, phase)] += 1

    def phase_bits(self, phase: Phase) -> int:
        return sum(v for (_, _, ph), v in self.payload_bits.items() if ph == phase)

    def phase_bytes(self, phase: Phase) -> float:
        return self.phase_bits(phase) / 8

    def edge_bits(self, sender, receiver, phase: Phase) -> int:
        return self.payload_bits.get((sender, receiver, phase), 0)

    def round_count(self, phase: Phase) -> int:
        per_party = [v for (_, ph), v in self.rounds.items() if ph == phase]
        if not per_party:
            return 0
        if len(set(per_party)) > 1:
            raise TransportError(f"parties disagree on {phase.name} rounds: {per_party}")
        return per_party[0]

    def merge(self, other: "CommStats") -> "CommStats":
        self.payload_bits.update(other.payload_bits)
        self.wire_bytes.update(other.wire_bytes)
        for key, v in other.rounds.items():
            self.rounds[key] += v
        return self

    def snapshot(self) -> "CommStats":
        return CommStats(
            Counter(self.payload_bits), Counter(self.wire_bytes), Counter(self.rounds)
        )

    def diff(self, earlier: "CommStats") -> "CommStats":
        out = CommStats()
        out.payload_bits = self.payload_bits - earlier.payload_bits
        out.wire_bytes = self.wire_bytes - earlier.wire_bytes
        out.rounds = self.rounds - earlier.rounds
        return out

    def to_json(self) -> dict:
        edges = []
        for (snd, rcv, ph), bits in sorted(self.payload_bits.items()):
            edges.append(
                {
                    "from": PartyId(snd).name,
                    "to": PartyId(rcv).name,
                    "phase": Phase(ph).name.lower(),
                    "bits": int(bits),
                    "bytes": bits / 8,
                    "wire_bytes": int(self.wire_bytes.get((snd, rcv, ph), 0)),
                }
            )
        return {
            "edges": edges,
            "rounds": {
                "offline": self.round_count(Phase.OFFLINE),
                "online": self.round_count(Phase.ONLINE),
            },
        }

    def equal_accounting(self, other: "CommStats") -> bool:
        return (
            self.payload_bits == other.payload_bits
            and self.wire_bytes == other.wire_bytes
            and dict(self.rounds) == dict(other.rounds)
        )


def merge_stats(parts: list[CommStats]) -> CommStats:
    out = CommStats()
    for p in parts:
        out.merge(p)
    return out


# -- channels ------------------------------------------------------------------


class _QueueChannel:
    """In-memory duplex channel; carries the serialized wire bytes so that
    local-sim and socket accounting agree exactly."""

    def __init__(self, send_q: queue.Queue, recv_q: queue.Queue, timeout: float):
        self.send_q = send_q
        self.recv_q = recv_q
        self.timeout = timeout

    def send_bytes(self, header: bytes, payload: bytes):
        self.send_q.put((header, payload))

    def recv_bytes(self, expect_payload_len: int) -> tuple[bytes, bytes]:
        try:
            header, payload = self.recv_q.get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError("recv timed out (deadlock?)") from None
        return header, payload

    def close(self):
        pass


class _SocketChannel:
    def __init__(self, sock: socket.socket, timeout: float):
        self.sock = sock
        self.sock.settimeout(timeout)

    def send_bytes(self, header: bytes, payload: bytes):
        try:
            self.sock.sendall(header)
            if payload:
                self.sock.sendall(payload)
        except OSError as e:
            raise TransportError(f"send failed: {e}") from e

    def _recv_exact(self, nbytes: int) -> bytes:
        buf = bytearray()
        while len(buf) < nbytes:
            try:
                chunk = self.sock.recv(min(1 << 20, nbytes - len(buf)))
            except socket.timeout:
                raise TransportError("recv timed out (deadlock?)") from None
            except OSError as e:
                raise TransportError(f"recv failed: {e}") from e
            if not chunk:
                raise TransportError("peer disconnected")
            buf.extend(chunk)
        return bytes(buf)

    def recv_bytes(self, expect_payload_len: int) -> tuple[bytes, bytes]:
        header = self._recv_exact(HEADER_BYTES)
        return header, self._recv_exact(expect_payload_len)

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class Endpoint:
    """One party's view of its channels, with accounting and phase gating."""

    def __init__(self, party: PartyId, channels: dict, stats: CommStats):
        self.party = party
        self.channels = channels
        self.stats = stats
        self.active_phase: Phase | None = None

    def close(self):
        for ch in self.channels.values():
            ch.close()

    def _channel(self, peer: PartyId):
        try:
            return self.channels[peer]
        except KeyError:
            raise TransportError(f"{self.party.name} has no channel to {peer.name}")

    def send(
        self,
        to: PartyId,
        words: np.ndarray,
        bits: int,
        phase: Phase,
        tag: int = 0,
    ):
        if phase != Phase.CONTROL:
            if to == PartyId.P2:
                raise TransportError("dealer never receives protocol payloads")
            if self.active_phase is not None and phase != self.active_phase:
                raise PhaseError(
                    f"{Phase(phase).name} send during {self.active_phase.name} step"
                )
        words = np.ascontiguousarray(np.asarray(words, dtype=np.uint64).reshape(-1))
        payload = pack_words(words, bits)
        header = _HEADER.pack(MAGIC, int(phase), tag & 0xFFFFFFFFFFFFFFFF, words.size)
        self._channel(to).send_bytes(header, payload)
        self.stats.add_send(
            self.party, to, phase, words.size * bits, HEADER_BYTES + len(payload)
        )

    def recv(
        self,
        frm: PartyId,
        count: int,
        bits: int,
        phase: Phase,
        tag: int = 0,
        expected_shape=None,
    ) -> np.ndarray:
        header, payload = self._channel(frm).recv_bytes(payload_nbytes(count, bits))
        magic, ph, rtag, rcount = _HEADER.unpack(header)
        if magic != MAGIC:
            raise TransportError(f"bad magic {magic:#x}")
        if ph != int(phase):
            raise PhaseError(f"expected {Phase(phase).name} frame, got {Phase(ph).name}")
        if rtag != (tag & 0xFFFFFFFFFFFFFFFF):
            raise TransportError(f"stream tag mismatch: {rtag:#x} != {tag:#x}")
        if rcount != count:
            raise ShapeMismatchError(f"expected {count} elements, got {rcount}")
        words = unpack_words(payload, count, bits)
        if expected_shape is not None:
            return words.reshape(expected_shape)
        return words

    def exchange(self, peer: PartyId, payloads: list, phase: Phase = Phase.ONLINE):
        """Symmetric swap of a batch of payloads with one round barrier.

        payloads: list of (words, bits, tag). The lower-numbered party sends
        first; any number of payloads batched here still counts one round.
        Returns the peer's payloads in order.
        """
        self.stats.add_round(self.party, phase)
        out = []
        if self.party < peer:
            for words, bits, tag in payloads:
                self.send(peer, words, bits, phase, tag)
            for words, bits, tag in payloads:
                out.append(self.recv(peer, np.asarray(words).size, bits, phase, tag))
        else:
            for words, bits, tag in payloads:
                out.append(self.recv(peer, np.asarray(words).size, bits, phase, tag))
            for words, bits, tag in payloads:
                self.send(peer, words, bits, phase, tag)
        return out

    def control_send(self, to: PartyId, data: bytes, tag: int = 0):
        words = np.frombuffer(data + b"\x00" * (-len(data) % 8), dtype="<u8").astype(
            np.uint64
        )
        self.send(to, words, 64, Phase.CONTROL, tag)

    def control_recv(self, frm: PartyId, nbytes: int, tag: int = 0) -> bytes:
        count = (nbytes + 7) // 8
        words = self.recv(frm, count, 64, Phase.CONTROL, tag)
        return words.astype("<u8").tobytes()[:nbytes]


# -- wiring --------------------------------------------------------------------


def local_sim_endpoints(
    timeout: float = DEFAULT_TIMEOUT,
) -> dict[PartyId, Endpoint]:
    """Three endpoints joined by in-memory queues, one CommStats each."""
    qs = {}
    for a in PartyId:
        for b in PartyId:
            if a != b:
                qs[(a, b)] = queue.Queue()
    out = {}
    for p in PartyId:
        chans = {
            peer: _QueueChannel(qs[(p, peer)], qs[(peer, p)], timeout)
            for peer in PartyId
            if peer != p
        }
        out[p] = Endpoint(p, chans, CommStats())
    return out


@dataclass
class SessionConfig:
    """Everything a party needs to join a session."""

    party: PartyId
    mode: str = "local-sim"  # or "sockets"
    params: RingParams = field(default_factory=RingParams)
    seed: str = "trimpc"
    endpoints: dict = field(default_factory=dict)  # PartyId -> (host, port)
    keys_hex: dict = field(default_factory=dict)  # pair name -> hex key
    timeout: float = DEFAULT_TIMEOUT
    accounting_only: bool = False

    @staticmethod
    def from_json(obj: dict) -> "SessionConfig":
        from .errors import ConfigError

        try:
            party = PartyId[obj["party"]]
            params = RingParams(
                int(obj.get("ring", {}).get("n", 64)),
                int(obj.get("ring", {}).get("f", 14)),
            )
            endpoints = {
                PartyId[k]: (v["host"], int(v["port"]))
                for k, v in obj.get("endpoints", {}).items()
            }
            return SessionConfig(
                party=party,
                mode=obj.get("mode", "local-sim"),
                params=params,
                seed=obj.get("seed", "trimpc"),
                endpoints=endpoints,
                keys_hex=obj.get("keys", {}),
                timeout=float(obj.get("timeout", DEFAULT_TIMEOUT)),
                accounting_only=bool(obj.get("accounting_only", False)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad session config: {e}") from e


def socket_endpoint(cfg: SessionConfig) -> Endpoint:
    """Connect the full mesh: lower party id listens, higher connects."""
    me = cfg.party
    listeners_from = [p for p in PartyId if p > me]
    connect_to = [p for p in PartyId if p < me]
    chans: dict[PartyId, _SocketChannel] = {}

    lsock = None
    if listeners_from:
        host, port = cfg.endpoints[me]
        lsock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        lsock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        lsock.bind((host, port))
        lsock.listen(len(listeners_from))
        lsock.settimeout(cfg.timeout)

    for peer in connect_to:
        host, port = cfg.endpoints[peer]
        deadline = cfg.timeout
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.settimeout(deadline)
        import time

        t0 = time.monotonic()
        while True:
            try:
                sock.connect((host, port))
                break
            except OSError:
                if time.monotonic() - t0 > deadline:
                    raise TransportError(f"cannot reach {peer.name} at {host}:{port}")
                time.sleep(0.05)
                sock.close()
                sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
                sock.settimeout(deadline)
        sock.sendall(bytes([int(me)]))
        chans[peer] = _SocketChannel(sock, cfg.timeout)

    pending = set(listeners_from)
    while pending:
        try:
            conn, _ = lsock.accept()
        except socket.timeout:
            raise TransportError(f"timed out waiting for {sorted(pending)}")
        conn.settimeout(cfg.timeout)
        who = PartyId(conn.recv(1)[0])
        if who not in pending:
            conn.close()
            raise TransportError(f"unexpected connection from {who.name}")
        pending.discard(who)
        chans[who] = _SocketChannel(conn, cfg.timeout)
    if lsock is not None:
        lsock.close()

    return Endpoint(me, chans, CommStats())


def stats_report_json(stats: CommStats, indent: int | None = None) -> str:
    return json.dumps(stats.to_json(), indent=indent)
