"""Party session state and job runners.

A job is a data-oblivious function job(session) -> result executed by all
three parties. The runner drives it twice: an offline pass in which the
dealer derives and distributes every piece of correlated randomness (and
all compute-party results are placeholder zeros), then an online pass that
consumes the stored randomness in the same op order. Desync between the two
passes is detected per op.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass

import numpy as np

from .errors import DesyncError, HandshakeError
from .randomness import PAIR_P0P2, PAIR_P1P2, PrfSource, stream_label
from .ring import FixedTensor, RingParams, zeros
from .sharing import AdditiveShare
from .transport import (
    CommStats,
    Endpoint,
    PartyId,
    Phase,
    SessionConfig,
    local_sim_endpoints,
    merge_stats,
    socket_endpoint,
)

PROTOCOL_VERSION = "trimpc-1"


class Session:
    def __init__(
        self,
        cfg: SessionConfig,
        endpoint: Endpoint,
        prf: PrfSource,
        share_seed: int = 0,
    ):
        self.cfg = cfg
        self.party = cfg.party
        self.params: RingParams = cfg.params
        self.ep = endpoint
        self.prf = prf
        self.phase: Phase | None = None
        self.op_seq = 0
        self.bundles: dict[int, object] = {}
        self.accounting_only = cfg.accounting_only
        # Input-sharing randomness must agree only with itself (owner draws
        # both shares); seeded for reproducible local-sim runs.
        self.rng = np.random.default_rng(share_seed)
        # Optional trace of dealer-side mask values, for simulators that
        # replay the exact quantization schedule (local-sim tests only).
        self.debug_record = False
        self.debug: dict = {}

    # -- identity helpers ------------------------------------------------------

    @property
    def is_dealer(self) -> bool:
        return self.party == PartyId.P2

    @property
    def compute_index(self) -> int:
        return int(self.party)  # 0 or 1 for compute parties

    @property
    def peer(self) -> PartyId:
        return PartyId.P1 if self.party == PartyId.P0 else PartyId.P0

    @property
    def offline(self) -> bool:
        return self.phase == Phase.OFFLINE

    def my_pair(self) -> str:
        return PAIR_P0P2 if self.party == PartyId.P0 else PAIR_P1P2

    # -- lifecycle ---------------------------------------------------------------

    def handshake(self):
        digest = hashlib.sha256(
            f"{PROTOCOL_VERSION}|n={self.params.n}|f={self.params.f}".encode()
        ).digest()[:16]
        others = [p for p in PartyId if p != self.party]
        for p in others:
            self.ep.control_send(p, digest, tag=1)
        for p in others:
            theirs = self.ep.control_recv(p, 16, tag=1)
            if theirs != digest:
                raise HandshakeError(
                    f"{self.party.name} and {p.name} disagree on ring params/version"
                )

    def start_pass(self, phase: Phase):
        self.phase = phase
        self.ep.active_phase = phase
        self.op_seq = 0

    def barrier(self, tag: int):
        token = bytes([int(self.party)]) * 8
        others = [p for p in PartyId if p != self.party]
        for p in others:
            self.ep.control_send(p, token, tag=tag)
        for p in others:
            self.ep.control_recv(p, 8, tag=tag)

    # -- op sequencing -----------------------------------------------------------

    def next_op(self, name: str) -> int:
        seq = self.op_seq
        self.op_seq += 1
        return seq

    def op_label(self, name: str, seq: int, role: str) -> int:
        return stream_label(name, seq, role)

    def store_bundle(self, seq: int, bundle):
        self.bundles[seq] = bundle

    def take_bundle(self, seq: int, kind: type):
        try:
            b = self.bundles.pop(seq)
        except KeyError:
            raise DesyncError(f"no prepared randomness for op {seq}") from None
        if not isinstance(b, kind):
            raise DesyncError(
                f"op {seq} prepared {type(b).__name__}, consumed as {kind.__name__}"
            )
        return b

    # -- values ------------------------------------------------------------------

    def zeros_share(self, shape, scale: int) -> AdditiveShare:
        idx = 0 if self.is_dealer else self.compute_index
        return AdditiveShare(zeros(shape, self.params, scale), idx)

    def input_share(
        self,
        name: str,
        plain: FixedTensor | None = None,
        owner: PartyId = PartyId.P0,
        shape=None,
        scale: int | None = None,
    ) -> AdditiveShare:
        """Owner encodes and splits a private input; the other compute party
        receives its half. Non-owners may pass shape/scale instead of the
        tensor. Returns placeholder zeros during the offline pass and at the
        dealer."""
        seq = self.next_op(f"input:{name}")
        if plain is not None:
            shape, scale = plain.shape, plain.scale
        if shape is None or scale is None:
            raise DesyncError(f"input {name!r}: need the tensor or (shape, scale)")
        shape = tuple(int(d) for d in shape)
        if self.is_dealer or self.offline:
            return self.zeros_share(shape, scale)
        tag = self.op_label("input", seq, name)
        other = PartyId.P1 if owner == PartyId.P0 else PartyId.P0
        if self.party == owner:
            if plain is None:
                raise DesyncError(f"input {name!r}: owner must hold the tensor")
            from .sharing import share as split

            s0, s1 = split(plain, self.rng)
            keep, give = (s0, s1) if self.compute_index == 0 else (s1, s0)
            self.ep.send(other, give.tensor.words, self.params.n, Phase.ONLINE, tag)
            return keep
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        words = self.ep.recv(owner, size, self.params.n, Phase.ONLINE, tag)
        t = FixedTensor(words, shape, scale, self.params)
        return AdditiveShare(t, self.compute_index)

    def public_share(self, plain: FixedTensor) -> AdditiveShare:
        """Share of a publicly known tensor: P0 holds it, P1 holds zero."""
        idx = 0 if self.is_dealer else self.compute_index
        t = plain.copy() if idx == 0 else zeros(plain.shape, self.params, plain.scale)
        return AdditiveShare(t, idx)


@dataclass
class PartyResult:
    party: PartyId
    value: object
    stats: CommStats


class LocalSimHarness:
    """Runs a job on three in-process parties over queue transport."""

    def __init__(
        self,
        params: RingParams | None = None,
        seed: str = "trimpc",
        timeout: float = 60.0,
        accounting_only: bool = False,
    ):
        self.params = params or RingParams()
        self.seed = seed
        self.timeout = timeout
        self.accounting_only = accounting_only
        eps = local_sim_endpoints(timeout)
        keys = PrfSource.derive_keys(seed)
        self.sessions = {}
        for p in PartyId:
            cfg = SessionConfig(
                party=p,
                mode="local-sim",
                params=self.params,
                seed=seed,
                accounting_only=accounting_only,
            )
            share_seed = int.from_bytes(
                hashlib.sha256(f"{seed}/share/{int(p)}".encode()).digest()[:8], "big"
            )
            self.sessions[p] = Session(
                cfg, eps[p], PrfSource.for_party(int(p), keys), share_seed
            )

    def run(self, job) -> dict[PartyId, PartyResult]:
        results: dict[PartyId, PartyResult] = {}
        errors: dict[PartyId, BaseException] = {}

        def body(p: PartyId):
            sess = self.sessions[p]
            try:
                sess.handshake()
                sess.start_pass(Phase.OFFLINE)
                job(sess)
                sess.barrier(tag=2)
                sess.start_pass(Phase.ONLINE)
                value = job(sess)
                sess.barrier(tag=3)
                results[p] = PartyResult(p, value, sess.ep.stats)
            except BaseException as e:  # noqa: BLE001 - reraised in run()
                errors[p] = e

        threads = [
            threading.Thread(target=body, args=(p,), name=f"party-{p.name}")
            for p in PartyId
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=self.timeout * 4)
        if errors:
            raise next(iter(errors.values()))
        return results

    def merged_stats(self, results) -> CommStats:
        return merge_stats([r.stats for r in results.values()])


def run_local_sim(
    job,
    params: RingParams | None = None,
    seed: str = "trimpc",
    accounting_only: bool = False,
    timeout: float = 60.0,
):
    """Convenience wrapper: run a job, return ({party: result}, merged stats)."""
    h = LocalSimHarness(params, seed, timeout, accounting_only)
    results = h.run(job)
    return results, h.merged_stats(results)


def run_socket_sim(
    job,
    params: RingParams | None = None,
    seed: str = "trimpc",
    timeout: float = 30.0,
    accounting_only: bool = False,
):
    """Run all three parties over real localhost sockets (one thread each);
    returns the same (results, merged stats) shape as run_local_sim."""
    import socket as _socket

    params = params or RingParams()
    ports = {}
    holders = []
    for p in (PartyId.P0, PartyId.P1):
        s = _socket.socket()
        s.bind(("127.0.0.1", 0))
        ports[p] = s.getsockname()[1]
        holders.append(s)
    for s in holders:
        s.close()
    endpoints = {p: ("127.0.0.1", ports.get(p, 0)) for p in PartyId}

    results: dict[PartyId, PartyResult] = {}
    errors: dict[PartyId, BaseException] = {}

    def body(p: PartyId):
        cfg = SessionConfig(
            party=p,
            mode="sockets",
            params=params,
            seed=seed,
            endpoints=endpoints,
            timeout=timeout,
            accounting_only=accounting_only,
        )
        try:
            value, stats = run_socket_party(cfg, job)
            results[p] = PartyResult(p, value, stats)
        except BaseException as e:  # noqa: BLE001
            errors[p] = e

    threads = [threading.Thread(target=body, args=(p,)) for p in PartyId]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout * 4)
    if errors:
        raise next(iter(errors.values()))
    return results, merge_stats([r.stats for r in results.values()])


def run_socket_party(cfg: SessionConfig, job, share_seed: int | None = None):
    """Join a socket session as one party and run the job twice (offline,
    online). Returns (result value, this party's CommStats)."""
    ep = socket_endpoint(cfg)
    if cfg.keys_hex:
        keys = {
            pair: __import__("trimpc.randomness", fromlist=["PrfKey"]).PrfKey(
                bytes.fromhex(h), pair
            )
            for pair, h in cfg.keys_hex.items()
        }
        prf = PrfSource(keys)
    else:
        prf = PrfSource.for_party(int(cfg.party), PrfSource.derive_keys(cfg.seed))
    if share_seed is None:
        share_seed = int.from_bytes(
            hashlib.sha256(f"{cfg.seed}/share/{int(cfg.party)}".encode()).digest()[:8],
            "big",
        )
    sess = Session(cfg, ep, prf, share_seed)
    try:
        sess.handshake()
        sess.start_pass(Phase.OFFLINE)
        job(sess)
        sess.barrier(tag=2)
        sess.start_pass(Phase.ONLINE)
        value = job(sess)
        sess.barrier(tag=3)
    finally:
        ep.close()
    return value, sess.ep.stats
