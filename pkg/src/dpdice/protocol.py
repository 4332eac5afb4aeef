"""Secure distributed cardinality estimation with distributed discrete noise.

Data holders (DHs) sketch their sets with a shared FMS key, add a discrete
Gaussian noise term and secret-share every sketch bit plus the noise among
the computation parties (CPs). The CPs OR the sketches bitwise through
ZeroTest, count zero bits, add the noise shares and open ``Z + sum N_j``,
which is then inverted by the FMS estimator.

Party ids: CPs are ``0..c-1`` and DHs are ``c..c+d-1``.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
import threading
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, List, Optional, Sequence

import numpy as np

from .dpnoise import SIGMA_MIN, calibrate_sigma, sample_discrete_gaussian_exact
from .errors import (ConfigurationError, DpDiceError, MacCheckError, ProtocolAbort,
                     TransportError)
from .hashing import HashKey
from .mpc import (AuthShare, CpContext, DealerMaterial, FieldParams, PartyMaterial,
                  TrustedDealer, ZERO_TEST_MODES, accept_inputs, input_masks, mac_check,
                  mask_inputs, open_values, zero_test, zero_test_material)
from .sketch import Estimate, FmsSketch, fms_estimate
from .transport import (Channel, MemoryHub, MsgType, Phase, TcpChannel, WireMessage,
                        local_listeners)

NOISE_TAIL = 40  # |N_j| <= 40 sigma except with probability below 1e-340
COLLECTION_ROUNDS = 2

_MAGIC = b"DPDC"
_VERSION = 1
_CFG = struct.Struct("<4sBIHHHHH16sdB16sH")

_EXCHANGE_TYPES = {
    "reveal": MsgType.REVEAL_SHARE,
    "commit": MsgType.MAC_SIGMA_COMMIT,
    "open": MsgType.MAC_SIGMA_OPEN,
}
_PHASES = {"collection": Phase.COLLECTION, "aggregation": Phase.AGGREGATION,
           "mac_check": Phase.MAC_CHECK, "output": Phase.OUTPUT}


@dataclass(frozen=True)
class ProtocolConfig:
    m: int
    w: int
    d: int
    c: int
    sigma: float
    hash_key: HashKey
    field: FieldParams = field(default_factory=FieldParams.default)
    session_id: bytes = b"\x00" * 16
    zero_test_mode: str = "premul"

    def __post_init__(self):
        if self.m < 1 or self.m & (self.m - 1):
            raise ConfigurationError(f"m must be a power of two, got {self.m}")
        if not 2 <= self.w <= 64:
            raise ConfigurationError(f"w must be in [2, 64], got {self.w}")
        if self.c < 2:
            raise ConfigurationError("need at least two computation parties")
        if self.d < 1:
            raise ConfigurationError("need at least one data holder")
        if self.sigma < SIGMA_MIN:
            raise ConfigurationError(f"sigma must be >= {SIGMA_MIN}")
        if len(self.session_id) != 16:
            raise ConfigurationError("session id must be 16 bytes")
        if self.zero_test_mode not in ZERO_TEST_MODES:
            raise ConfigurationError(f"zero-test mode must be one of {ZERO_TEST_MODES}")
        if self.c + self.d > 0xFFFF:
            raise ConfigurationError("too many parties for 16-bit ids")
        if self.plaintext_bound >= 1 << self.field.tau or 2 * self.plaintext_bound >= self.field.p:
            raise ConfigurationError(
                f"m*w + noise range = {self.plaintext_bound} does not fit {self.field.tau} bits")

    @classmethod
    def create(cls, m: int, w: int, d: int, c: int, *, sigma: Optional[float] = None,
               eps: float = 0.1, delta: float = 1e-12, hash_key: Optional[HashKey] = None,
               session_id: Optional[bytes] = None, **kw) -> "ProtocolConfig":
        """Fill in a calibrated sigma, a fresh hash key and a random session id."""
        if sigma is None:
            sigma = calibrate_sigma(eps, delta, d).sigma
        return cls(m, w, d, c, float(sigma), hash_key or HashKey.random(),
                   session_id=session_id or os.urandom(16), **kw)

    @property
    def r(self) -> int:
        return self.m.bit_length() - 1

    @property
    def n_bits(self) -> int:
        return self.m * self.w

    @property
    def noise_bound(self) -> int:
        return math.ceil(NOISE_TAIL * self.sigma)

    @property
    def plaintext_bound(self) -> int:
        return self.n_bits + self.d * self.noise_bound

    @property
    def cp_ids(self) -> List[int]:
        return list(range(self.c))

    @property
    def dh_ids(self) -> List[int]:
        return list(range(self.c, self.c + self.d))

    def peers_of(self, party: int) -> List[int]:
        if party < self.c:
            return [p for p in range(self.c + self.d) if p != party]
        return self.cp_ids

    def to_bytes(self) -> bytes:
        """Canonical little-endian header; identical configs give identical bytes."""
        key = self.hash_key.key_bytes
        head = _CFG.pack(_MAGIC, _VERSION, self.m, self.w, self.d, self.c, self.field.lam,
                         self.field.tau, self.field.p.to_bytes(16, "little"), self.sigma,
                         ZERO_TEST_MODES.index(self.zero_test_mode), self.session_id, len(key))
        return head + key

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProtocolConfig":
        if len(data) < _CFG.size:
            raise ConfigurationError("config header too short")
        (magic, ver, m, w, d, c, lam, tau, p, sigma, mode, sid, klen) = _CFG.unpack_from(data)
        if magic != _MAGIC or ver != _VERSION:
            raise ConfigurationError("not a config header of a supported version")
        key = data[_CFG.size:_CFG.size + klen]
        if len(key) != klen or len(data) != _CFG.size + klen:
            raise ConfigurationError("config header length mismatch")
        fp = FieldParams(int.from_bytes(p, "little"), lam, tau)
        return cls(m, w, d, c, sigma, HashKey(key), fp, sid, ZERO_TEST_MODES[mode])

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()


@dataclass
class RunTranscript:
    revealed_noisy_z: int
    estimate: Estimate
    bytes_sent: Dict[int, int]
    bytes_received: Dict[int, int]
    bytes_by_phase: Dict[str, int]
    rounds: Dict[str, int]
    phase_times: Dict[str, float]
    material: Dict[str, int]
    messages: int

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes_sent.values())

    def summary(self) -> str:
        lines = [f"revealed Z+N   : {self.revealed_noisy_z}",
                 f"estimate       : {self.estimate.n_hat:.1f} ({self.estimate.method.value})",
                 f"rounds         : " + ", ".join(f"{k}={v}" for k, v in self.rounds.items()),
                 f"bytes total    : {self.total_bytes} in {self.messages} messages"]
        lines += [f"  {k:<13}: {v} bytes" for k, v in self.bytes_by_phase.items()]
        lines += [f"time {k}: {v:.3f} s" for k, v in self.phase_times.items()]
        lines.append("material       : " + ", ".join(f"{k}={v}" for k, v in self.material.items()))
        return "\n".join(lines)


@dataclass(frozen=True)
class Fault:
    """Test hook: CP ``cp`` adds ``offset`` to one of its value shares.

    ``target`` is "final" (the share of Z + N before opening) or "zero_test"
    (the first merged bit before ZeroTest).
    """

    cp: int
    offset: int = 1
    target: str = "final"


# ---------------------------------------------------------------- offline

def material_counts(config: ProtocolConfig) -> dict:
    n = config.n_bits
    kw = zero_test_material(config.field, n, config.zero_test_mode)
    kw["rand"] = config.d * (n + 1)
    return kw


def offline_prepare(config: ProtocolConfig, seed=None) -> DealerMaterial:
    """Deal MAC keys and all correlated randomness for one session.

    One Rand per shared input (m*w bits plus the noise, per DH), and one bit
    bundle with its exp chain per ZeroTest, plus one Beaver triple per
    ZeroTest in ``beaver`` mode.
    """
    return TrustedDealer(config.field, config.c, seed).prepare(**material_counts(config))


# ---------------------------------------------------------------- data holder

def dh_inputs(config: ProtocolConfig, elements, noise: int) -> List[int]:
    """Field-encoded inputs of one DH: sketch bits (array-major) then the noise."""
    sk = FmsSketch(config.m, config.w, config.hash_key)
    if elements is not None and len(elements):
        sk.update(np.asarray(elements) if not isinstance(elements, np.ndarray) else elements)
    if abs(noise) > config.noise_bound:
        raise ConfigurationError(f"noise {noise} outside +-{config.noise_bound}")
    bits = [int(b) for b in sk.bits.ravel()]
    return bits + [config.field.encode(int(noise))]


def draw_noises(config: ProtocolConfig, seed=None) -> List[int]:
    """One exact discrete Gaussian per DH from independent child streams of ``seed``."""
    children = np.random.SeedSequence(seed).spawn(config.d)
    var = Fraction(config.sigma) ** 2
    return [sample_discrete_gaussian_exact(var, np.random.default_rng(s)) for s in children]


def _expect(channel: Channel, sender: int, kind: MsgType, config: ProtocolConfig) -> WireMessage:
    msg = channel.recv(sender)
    if msg.session_id != config.session_id:
        raise TransportError(f"message from {sender} belongs to another session")
    if msg.kind is MsgType.ABORT:
        raise ProtocolAbort(msg.phase.label, f"party {sender}: {msg.data.decode(errors='replace')}")
    if msg.kind is not kind:
        raise TransportError(f"expected {kind.name} from {sender}, got {msg.kind.name}")
    return msg


def run_data_holder(config: ProtocolConfig, party: int, elements, noise: int,
                    channel: Channel) -> int:
    """Share this DH's inputs and wait for the public result (signed Z + N)."""
    xs = dh_inputs(config, elements, noise)
    sid = config.session_id
    try:
        parts = []
        for cp in config.cp_ids:
            msg = _expect(channel, cp, MsgType.MASK_SHARE, config)
            if len(msg.values) != len(xs):
                raise TransportError(f"CP {cp} sent {len(msg.values)} mask shares, need {len(xs)}")
            parts.append(msg.values)
        masked = mask_inputs(config.field, xs, parts)
        channel.broadcast(WireMessage(MsgType.MASKED_INPUT, sid, party, 0, Phase.COLLECTION,
                                      tuple(masked)), config.cp_ids)
        res = _expect(channel, 0, MsgType.RESULT, config)
    except TransportError as exc:
        raise ProtocolAbort("collection", str(exc)) from None
    return config.field.lift(res.values[0])


# ---------------------------------------------------------------- computation party

def cp_aggregate(ctx: CpContext, config: ProtocolConfig, inputs: Sequence[Sequence[AuthShare]],
                 fault: Optional[Fault] = None):
    """Merge sketches with ZeroTest, add noise, open Z + N and MAC-check (generator)."""
    n = config.n_bits
    ctx.phase = "aggregation"
    merged = [ctx.sum([inp[k] for inp in inputs]) for k in range(n)]
    mine = fault is not None and fault.cp == ctx.index
    if mine and fault.target == "zero_test":
        merged[0] = AuthShare((merged[0].value + fault.offset) % ctx.p, merged[0].mac)
    ones = yield from zero_test(ctx, merged, config.zero_test_mode)
    noise = ctx.sum([inp[n] for inp in inputs])
    z = ctx.add_public(ctx.neg(ctx.sum(ones)), n)
    zn = ctx.add(z, noise)
    if mine and fault.target == "final":
        zn = AuthShare((zn.value + fault.offset) % ctx.p, zn.mac)
    (value,) = yield from open_values(ctx, [zn])
    ctx.phase = "mac_check"
    yield from mac_check(ctx)
    return value


def _drive(gen, ctx: CpContext, channel: Channel, config: ProtocolConfig):
    me, sid = ctx.index, config.session_id
    others = [k for k in config.cp_ids if k != me]
    reply = None
    while True:
        try:
            req = gen.send(reply) if reply is not None else next(gen)
        except StopIteration as stop:
            return stop.value
        kind = _EXCHANGE_TYPES[req.kind]
        channel.broadcast(WireMessage(kind, sid, me, 0, _PHASES[ctx.phase], req.values), others)
        reply = []
        for k in config.cp_ids:
            if k == me:
                reply.append(list(req.values))
            else:
                reply.append(list(_expect(channel, k, kind, config).values))


@dataclass
class CpOutcome:
    value: int
    rounds: Dict[str, int]
    phase_times: Dict[str, float]


def run_computation_party(config: ProtocolConfig, material: PartyMaterial, channel: Channel,
                          fault: Optional[Fault] = None, rng=None) -> CpOutcome:
    ctx = CpContext(material, session=config.session_id, rng=rng)
    me, sid, n_in = ctx.index, config.session_id, config.n_bits + 1
    times: Dict[str, float] = {}
    ctx.phase = "collection"
    try:
        t0 = time.perf_counter()
        masks = []
        for dh in config.dh_ids:
            items, parts = input_masks(ctx, n_in)
            channel.send(WireMessage(MsgType.MASK_SHARE, sid, me, dh, Phase.COLLECTION,
                                     tuple(parts)))
            masks.append(items)
        inputs = []
        for dh, items in zip(config.dh_ids, masks):
            msg = _expect(channel, dh, MsgType.MASKED_INPUT, config)
            inputs.append(accept_inputs(ctx, items, msg.values))
        ctx.rounds["collection"] = COLLECTION_ROUNDS
        t1 = time.perf_counter()
        times["collection"] = t1 - t0
        value = _drive(cp_aggregate(ctx, config, inputs, fault), ctx, channel, config)
        times["aggregation+mac_check"] = time.perf_counter() - t1
    except (MacCheckError, TransportError, ConfigurationError) as exc:
        _broadcast_abort(config, me, channel, ctx.phase, str(exc))
        raise ProtocolAbort(ctx.phase, str(exc)) from None
    except ProtocolAbort as exc:
        _broadcast_abort(config, me, channel, exc.phase, exc.reason)
        raise
    if me == 0:
        channel.broadcast(WireMessage(MsgType.RESULT, sid, me, 0, Phase.OUTPUT, (value,)),
                          config.dh_ids)
    return CpOutcome(config.field.lift(value), dict(ctx.rounds), times)


def _broadcast_abort(config, me, channel, phase, reason):
    msg = WireMessage(MsgType.ABORT, config.session_id, me, 0,
                      _PHASES.get(phase, Phase.SETUP), (), reason.encode()[:512])
    for peer in config.peers_of(me):
        try:
            channel.send(replace(msg, receiver=peer))
        except DpDiceError:
            pass


# ---------------------------------------------------------------- harness

def clamp_zero_count(value: int, config: ProtocolConfig) -> int:
    return min(max(value, 0), config.n_bits)


def run_protocol(sets: Sequence, config: ProtocolConfig, transport: str = "memory", *,
                 dealer_seed=None, noise_seed=None, noises: Optional[Sequence[int]] = None,
                 material: Optional[DealerMaterial] = None, fault: Optional[Fault] = None,
                 timeout: float = 120.0) -> RunTranscript:
    """Run every party on its own thread over an in-memory or loopback TCP transport."""
    if len(sets) != config.d:
        raise ConfigurationError(f"expected {config.d} element sets, got {len(sets)}")
    if transport not in ("memory", "tcp"):
        raise ConfigurationError(f"unknown transport {transport!r}")
    t0 = time.perf_counter()
    if material is None:
        material = offline_prepare(config, dealer_seed)
    t_offline = time.perf_counter() - t0
    if noises is None:
        noises = draw_noises(config, noise_seed)
    if len(noises) != config.d:
        raise ConfigurationError("need one noise value per data holder")

    ids = config.cp_ids + config.dh_ids
    if transport == "memory":
        hub = MemoryHub(timeout)
        channels = {pid: hub.channel(pid) for pid in ids}
    else:
        addresses, listeners = local_listeners(ids)
        digest = config.digest()
        channels = {pid: TcpChannel(pid, addresses, config.peers_of(pid), config.session_id,
                                    digest, listeners[pid], timeout) for pid in ids}

    results: Dict[int, object] = {}
    errors: Dict[int, BaseException] = {}

    def body(pid):
        try:
            ch = channels[pid]
            if isinstance(ch, TcpChannel):
                ch.start()
            if pid < config.c:
                results[pid] = run_computation_party(config, material.parties[pid], ch, fault)
            else:
                j = pid - config.c
                results[pid] = run_data_holder(config, pid, sets[j], noises[j], ch)
        except BaseException as exc:  # reported below
            errors[pid] = exc

    threads = [threading.Thread(target=body, args=(pid,), name=f"party-{pid}", daemon=True)
               for pid in ids]
    for t in threads:
        t.start()
    deadline = time.monotonic() + timeout
    for t in threads:
        t.join(max(0.0, deadline - time.monotonic()))
    hung = [t.name for t in threads if t.is_alive()]
    for ch in channels.values():
        ch.close()
    if hung:
        raise ProtocolAbort("timeout", f"parties did not finish: {hung}")
    if errors:
        aborts = [e for _, e in sorted(errors.items()) if isinstance(e, ProtocolAbort)]
        if aborts:
            raise aborts[0]
        pid, exc = min(errors.items())
        raise ProtocolAbort("unknown", f"party {pid}: {exc!r}") from exc

    outs = [results[k] for k in config.cp_ids]
    value = outs[0].value
    if any(o.value != value for o in outs) or any(results[k] != value for k in config.dh_ids):
        raise ProtocolAbort("output", "parties disagree on the released value")
    stats = {pid: ch.stats for pid, ch in channels.items()}
    by_phase: Dict[str, int] = {}
    for st in stats.values():
        for k, v in st.sent_by_phase.items():
            by_phase[k] = by_phase.get(k, 0) + v
    rounds = {"collection": outs[0].rounds.get("collection", 0),
              "aggregation": outs[0].rounds.get("aggregation", 0),
              "mac_check": outs[0].rounds.get("mac_check", 0)}
    times = {"offline": t_offline, **outs[0].phase_times}
    return RunTranscript(
        revealed_noisy_z=value,
        estimate=fms_estimate(clamp_zero_count(value, config), config.m, config.w),
        bytes_sent={pid: st.bytes_sent for pid, st in stats.items()},
        bytes_received={pid: st.bytes_received for pid, st in stats.items()},
        bytes_by_phase=by_phase,
        rounds=rounds,
        phase_times=times,
        material=material.counts.as_dict(),
        messages=sum(st.messages_sent for st in stats.values()),
    )


def plaintext_noisy_zero_count(sets: Sequence, config: ProtocolConfig, noises: Sequence[int]) -> int:
    """Oracle: Z of the union sketch plus the summed noise, computed in the clear."""
    sk = FmsSketch(config.m, config.w, config.hash_key)
    for s in sets:
        if len(s):
            sk.update(np.asarray(s))
    return sk.zero_count() + int(sum(noises))


# ---------------------------------------------------------------- config files

def parse_config_text(text: str) -> Dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"line {lineno}: expected key = value")
        out[key.strip().lower()] = value.strip()
    return out


def config_from_mapping(values: Dict[str, str]):
    """Build a ProtocolConfig and a party address map from parsed config values.

    Keys: m, w, d, c, sigma (or eps and delta), hash_key (hex), session (hex),
    zero_test_mode, lambda, tau, and ``party.<id> = host:port``.
    """
    from .transport import parse_address

    known = {"m", "w", "d", "c", "sigma", "eps", "delta", "hash_key", "session",
             "zero_test_mode", "lambda", "tau"}
    addresses = {}
    for k, v in values.items():
        if k.startswith("party."):
            pid = k[len("party."):]
            if not pid.isdigit():
                raise ConfigurationError(f"bad party id in {k!r}")
            addresses[int(pid)] = parse_address(v)
        elif k not in known:
            raise ConfigurationError(f"unknown config key {k!r}")
    try:
        m, w, d, c = (int(values[k]) for k in ("m", "w", "d", "c"))
        field_params = FieldParams.default(int(values.get("lambda", 40)), int(values.get("tau", 32)))
        sigma = float(values["sigma"]) if "sigma" in values else None
        cfg = ProtocolConfig.create(
            m, w, d, c, sigma=sigma, eps=float(values.get("eps", 0.1)),
            delta=float(values.get("delta", 1e-12)),
            hash_key=HashKey.from_hex(values["hash_key"]) if "hash_key" in values else None,
            session_id=bytes.fromhex(values["session"]) if "session" in values else None,
            field=field_params, zero_test_mode=values.get("zero_test_mode", "premul"))
    except KeyError as exc:
        raise ConfigurationError(f"missing config key {exc.args[0]!r}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"bad config value: {exc}") from None
    if "hash_key" not in values or "session" not in values:
        raise ConfigurationError("config files must pin hash_key and session so parties agree")
    return cfg, addresses


def read_config_file(path):
    with open(path, encoding="utf-8") as fh:
        return config_from_mapping(parse_config_text(fh.read()))


def config_to_text(config: ProtocolConfig, addresses: Optional[Dict[int, tuple]] = None) -> str:
    lines = [f"m = {config.m}", f"w = {config.w}", f"d = {config.d}", f"c = {config.c}",
             f"sigma = {config.sigma!r}", f"hash_key = {config.hash_key.hex()}",
             f"session = {config.session_id.hex()}",
             f"zero_test_mode = {config.zero_test_mode}",
             f"lambda = {config.field.lam}", f"tau = {config.field.tau}"]
    for pid, (host, port) in sorted((addresses or {}).items()):
        lines.append(f"party.{pid} = {host}:{port}")
    return "\n".join(lines) + "\n"
