"""Encrypted, signed collection rounds.

Every meter encrypts under the collector's Paillier key and signs what it
sends with its own signing key.  Forwarders relay validated packets plus
their own encrypted reading; aggregators fold everything they receive into
``M`` ciphertexts using the homomorphism, so they never see a plaintext and
never hold the collector's private key.

Wire layout of a packet, all integers big-endian::

    [2-byte sender id][2-byte ciphertext count]
    count x ([2-byte length][ciphertext bytes])
    [2-byte length][signature bytes]

The signature covers ``digest64(ciphertext bytes || T_S as 8 bytes)`` and
``T_S``, where ``T_S`` is the round counter.
"""

from __future__ import annotations

import enum
import logging
import random
import struct
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .coeffs import phi_column, quantize
from .crypto import (
    Ciphertext,
    FixedPointCodec,
    PaillierKeypair,
    PaillierPrivateKey,
    PaillierPublicKey,
    SigningKeypair,
    SigningPrivateKey,
    SigningPublicKey,
    decrypt,
    digest64,
    encrypt,
    hom_add,
    hom_identity,
    hom_scale,
    paillier_keygen,
    sign,
    signing_keygen,
    timestamp_bytes,
    verify,
)
from .topology import Role, Topology, classify_roles

log = logging.getLogger(__name__)

MAX_RETRIES = 2
DEFAULT_SCALE = 2**16


class PacketFormatError(ValueError):
    pass


# -- packets ------------------------------------------------------------------


@dataclass(frozen=True)
class SecurePacket:
    """Signed ciphertext vector.  ``partial`` and ``missing`` are local metadata."""

    sender_id: int
    ciphertexts: tuple[int, ...]
    sig: bytes
    partial: bool = field(default=False, compare=False)
    missing: tuple[int, ...] = field(default=(), compare=False)

    def enc_bytes(self, width: int) -> bytes:
        return b"".join(int(c).to_bytes(width, "big") for c in self.ciphertexts)

    def to_bytes(self, width: int) -> bytes:
        if not 0 <= self.sender_id < 2**16 or len(self.ciphertexts) >= 2**16:
            raise PacketFormatError("id or ciphertext count does not fit two bytes")
        parts = [struct.pack(">HH", self.sender_id, len(self.ciphertexts))]
        for c in self.ciphertexts:
            parts.append(struct.pack(">H", width) + int(c).to_bytes(width, "big"))
        parts.append(struct.pack(">H", len(self.sig)) + self.sig)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SecurePacket":
        try:
            sender, count = struct.unpack_from(">HH", data, 0)
            pos = 4
            cts = []
            for _ in range(count):
                (length,) = struct.unpack_from(">H", data, pos)
                pos += 2
                if pos + length > len(data):
                    raise PacketFormatError("truncated ciphertext")
                cts.append(int.from_bytes(data[pos : pos + length], "big"))
                pos += length
            (slen,) = struct.unpack_from(">H", data, pos)
            pos += 2
            sig = bytes(data[pos : pos + slen])
            if len(sig) != slen or pos + slen != len(data):
                raise PacketFormatError("bad signature length or trailing bytes")
        except struct.error as exc:
            raise PacketFormatError(f"truncated packet: {exc}") from exc
        return cls(sender, tuple(cts), sig)


def packet_digest(ciphertexts, width: int, T_S: int) -> bytes:
    body = b"".join(int(c).to_bytes(width, "big") for c in ciphertexts)
    return digest64(body + timestamp_bytes(T_S))


def make_packet(sender: int, ciphertexts, priv: SigningPrivateKey, width: int, T_S: int,
                partial: bool = False, missing=()) -> SecurePacket:
    cts = tuple(int(c) for c in ciphertexts)
    sig = sign(packet_digest(cts, width, T_S), T_S, priv)
    return SecurePacket(sender, cts, sig, partial, tuple(missing))


@dataclass(frozen=True)
class Validation:
    ok: bool
    id: int | None
    enc_data: tuple[int, ...]
    reason: str = ""


def validate(pkt: bytes | SecurePacket, pub_dir: Mapping[int, SigningPublicKey], id_set,
             T_S: int, width: int) -> Validation:
    """Accept a packet only from an expected id with a fresh, valid signature."""
    if isinstance(pkt, (bytes, bytearray)):
        try:
            pkt = SecurePacket.from_bytes(bytes(pkt))
        except PacketFormatError as exc:
            return Validation(False, None, (), f"parse failure: {exc}")
    if pkt.sender_id not in id_set:
        return Validation(False, pkt.sender_id, pkt.ciphertexts, "unexpected id")
    if any(not 0 <= c < 256**width for c in pkt.ciphertexts):
        return Validation(False, pkt.sender_id, pkt.ciphertexts, "ciphertext too wide")
    digest = packet_digest(pkt.ciphertexts, width, T_S)
    if not verify(pkt.sig, digest, T_S, pub_dir.get(pkt.sender_id)):
        return Validation(False, pkt.sender_id, pkt.ciphertexts, "bad signature")
    return Validation(True, pkt.sender_id, pkt.ciphertexts)


# -- keys and node contexts -----------------------------------------------------


@dataclass(frozen=True)
class NodeKeys:
    """Per-meter signing keys and the public directory."""

    keypairs: Mapping[int, SigningKeypair] = field(repr=False)

    @property
    def directory(self) -> dict[int, SigningPublicKey]:
        return {i: kp.public for i, kp in self.keypairs.items()}


def generate_node_keys(ids, bits: int, seed=None) -> NodeKeys:
    """Signing keys for ``ids``; with a seed each key comes from its own sub-seed."""
    out = {}
    for i in sorted(ids):
        sub = None if seed is None else f"{seed}/sign/{i}"
        out[int(i)] = signing_keygen(bits, sub)
    return NodeKeys(out)


@dataclass(frozen=True)
class NodeContext:
    """Everything a meter may know: its reading and key, public keys, topology."""

    node_id: int
    role: Role
    signing: SigningPrivateKey = field(repr=False)
    directory: Mapping[int, SigningPublicKey] = field(repr=False)
    collector_key: PaillierPublicKey = field(repr=False)
    codec: FixedPointCodec
    M: int

    @property
    def width(self) -> int:
        return self.collector_key.ciphertext_bytes


@dataclass
class Inbox:
    """Expected origins ``V``, accepted ids ``Rec_V`` and accepted packets ``Rec_P``."""

    expected: set[int]
    received_ids: set[int] = field(default_factory=set)
    received_pkts: dict[int, SecurePacket] = field(default_factory=dict)
    rejected: list[Validation] = field(default_factory=list)

    def offer(self, data: bytes, ctx: NodeContext, T_S: int) -> Validation:
        v = validate(data, ctx.directory, self.expected, T_S, ctx.width)
        if v.ok and v.id not in self.received_ids:
            self.received_ids.add(v.id)
            self.received_pkts[v.id] = SecurePacket.from_bytes(data)
        elif not v.ok:
            self.rejected.append(v)
        return v

    @property
    def missing(self) -> set[int]:
        return self.expected - self.received_ids


def _encrypt_reading(ctx: NodeContext, value: int, rng) -> int:
    return encrypt(ctx.codec.encode_int(value), ctx.collector_key, rng).value


def forwarder_step(ctx: NodeContext, inbox: Inbox, reading: float, T_S: int, rng=None):
    """Relay every accepted packet and append our own encrypted reading.

    Returns ``(send_list, resend_requests)``.
    """
    if ctx.role is not Role.FORWARDER:
        raise ValueError(f"node {ctx.node_id} is not a forwarder")
    value = quantize(reading, ctx.codec.scale)
    own = make_packet(ctx.node_id, [_encrypt_reading(ctx, value, rng)], ctx.signing, ctx.width, T_S)
    send = [inbox.received_pkts[j] for j in sorted(inbox.received_pkts)] + [own]
    return send, sorted(inbox.missing)


def aggregator_step(ctx: NodeContext, inbox: Inbox, reading: float, T_S: int,
                    forwarder_ids, aggregator_ids, rng=None):
    """Fold accepted packets into one packet of ``M`` ciphertexts.

    Row ``l`` is ``prod_j E(e_j)^{q_lj} * prod_a c_a[l] * E(q_li e_i)`` where
    ``q = round(S phi)``.  A negative ``q`` is applied as the exponent
    ``q mod n``, the codec encoding of the signed coefficient.
    Returns ``(packet, resend_requests)``.
    """
    if ctx.role is not Role.AGGREGATOR:
        raise ValueError(f"node {ctx.node_id} is not an aggregator")
    pub, M, codec = ctx.collector_key, ctx.M, ctx.codec
    forwarder_ids, aggregator_ids = set(forwarder_ids), set(aggregator_ids)
    rows = [hom_identity(pub) for _ in range(M)]
    for j in sorted(inbox.received_pkts):
        pkt = inbox.received_pkts[j]
        if j in forwarder_ids:
            c = Ciphertext(pkt.ciphertexts[0], pub)
            q = quantize(phi_column(j, M), codec.scale)
            rows = [hom_add(r, hom_scale(c, codec.encode_int(ql), pub), pub) for r, ql in zip(rows, q)]
        elif j in aggregator_ids:
            if len(pkt.ciphertexts) != M:
                raise ValueError(f"aggregate from {j} has {len(pkt.ciphertexts)} rows, expected {M}")
            rows = [hom_add(r, Ciphertext(c, pub), pub) for r, c in zip(rows, pkt.ciphertexts)]
    e_i = quantize(reading, codec.scale)
    q_i = quantize(phi_column(ctx.node_id, M), codec.scale)
    rows = [hom_add(r, Ciphertext(_encrypt_reading(ctx, ql * e_i, rng), pub), pub)
            for r, ql in zip(rows, q_i)]
    missing = sorted(inbox.missing)
    partial = bool(missing) or any(p.partial for p in inbox.received_pkts.values())
    carried = set(missing)
    for p in inbox.received_pkts.values():
        carried.update(p.missing)
    pkt = make_packet(ctx.node_id, [r.value for r in rows], ctx.signing, ctx.width, T_S,
                      partial, sorted(carried))
    return pkt, missing


def collector_assemble(packets, priv: PaillierPrivateKey, topo: Topology, M: int,
                       codec: FixedPointCodec, max_reading: float | None = None):
    """Decrypt top-level packets into integer measurements ``y_int``.

    ``packets`` maps origin id to an accepted packet.  Aggregates are
    decrypted row by row; forwarder-origin ciphertexts are decrypted and
    weighted with the same quantized coefficients the aggregators use.
    Returns ``(y_int, raw)`` with ``raw`` the decrypted plaintext readings.
    """
    roles = classify_roles(topo, M)
    y_int = [0] * M
    raw: dict[int, int] = {}
    for j in sorted(packets):
        pkt = packets[j]
        if roles[j].role is Role.AGGREGATOR:
            for l, c in enumerate(pkt.ciphertexts):
                y_int[l] += codec.decode_int(decrypt(Ciphertext(c, priv.public), priv))
        else:
            e = codec.decode_int(decrypt(Ciphertext(pkt.ciphertexts[0], priv.public), priv))
            if max_reading is not None and abs(e) > max_reading * codec.scale + 1:
                raise OverflowError(f"reading of {j} decodes outside the configured range")
            raw[j] = e
            q = quantize(phi_column(j, M), codec.scale)
            y_int = [y + ql * e for y, ql in zip(y_int, q)]
    return y_int, raw


# -- adversaries --------------------------------------------------------------


class AttackKind(str, enum.Enum):
    TAMPER = "tamper"
    REPLAY = "replay"
    IMPERSONATE = "impersonate"
    EAVESDROP = "eavesdrop"


@dataclass(frozen=True)
class Attack:
    """Adversary sitting on the link ``node -> parent``.

    ``target`` picks which origin's packet on that link is attacked (default
    the sender's own).  Tampering flips bit ``bit`` of the ciphertext region.
    """

    kind: AttackKind
    link_node: int
    target: int | None = None
    bit: int = 0
    seed: int = 0

    @classmethod
    def parse(cls, text: str, default_node: int | None = None) -> tuple["Attack", int | None]:
        """Parse ``kind[:key=value,...]``; returns the attack and its round (if given)."""
        kind, _, rest = text.partition(":")
        opts = dict(p.split("=", 1) for p in rest.split(",") if p)
        rnd = int(opts.pop("round")) if "round" in opts else None
        node = int(opts.pop("node", default_node if default_node is not None else -1))
        target = int(opts["target"]) if "target" in opts else None
        return cls(AttackKind(kind), node, target, int(opts.get("bit", 0)),
                   int(opts.get("seed", 0))), rnd


@dataclass
class AttackOutcome:
    kind: AttackKind
    injected: int = 0
    rejected: int = 0
    false_rejections: int = 0
    y_unaffected: bool | None = None
    reasons: list[str] = field(default_factory=list)
    ciphertexts_distinct: bool | None = None
    observed: int = 0

    @property
    def all_rejected(self) -> bool:
        return self.injected == self.rejected


# -- round driver -------------------------------------------------------------


@dataclass
class SecureRoundResult:
    y_int: list[int]
    y: list[float]
    scale: int
    cost: int
    per_link: dict[tuple[int, int], int]
    retransmissions: int
    rejections: list[tuple[int, Validation]]
    partial: bool
    missing: tuple[int, ...]
    raw: dict[int, int]
    transcript: dict[tuple[int, int], list[bytes]] = field(repr=False, default_factory=dict)


@dataclass
class SecureSession:
    """Key material and protocol parameters for a run of secure rounds."""

    topo: Topology
    M: int
    collector: PaillierKeypair = field(repr=False)
    nodes: NodeKeys = field(repr=False)
    scale: int = DEFAULT_SCALE
    rng: random.Random = field(default_factory=lambda: random.Random(0), repr=False)
    _meta: dict = field(default_factory=dict, init=False, repr=False)
    attacked: list = field(default_factory=list, init=False, repr=False)

    def __post_init__(self):
        self.codec = FixedPointCodec(self.collector.n, self.scale)
        self.roles = classify_roles(self.topo, self.M)
        directory = self.nodes.directory
        self.contexts = {
            i: NodeContext(i, self.roles[i].role, self.nodes.keypairs[i].private, directory,
                           self.collector.public, self.codec, self.M)
            for i in self.topo.meter_ids
        }
        self.last_transcript: dict[tuple[int, int], list[bytes]] = {}
        self.last_round: int | None = None

    @classmethod
    def create(cls, topo: Topology, M: int, paillier_bits: int = 512, signing_bits: int = 1024,
               seed=0, scale: int = DEFAULT_SCALE) -> "SecureSession":
        kdc = paillier_keygen(paillier_bits, None if seed is None else f"{seed}/paillier")
        nodes = generate_node_keys(topo.meter_ids, signing_bits, seed)
        rng = random.Random(f"{seed}/blinding") if seed is not None else random.SystemRandom()
        return cls(topo, M, kdc, nodes, scale, rng)

    @property
    def width(self) -> int:
        return self.collector.public.ciphertext_bytes

    def run_round(self, d: Mapping[int, float], T_S: int, attacks=(), channel: Callable | None = None
                  ) -> SecureRoundResult:
        """Run one round of encrypted collection at timestamp ``T_S``.

        ``attacks`` are applied to the first transmission on their link;
        resends travel clean.  ``channel(link, frames, T_S, is_resend)``, if
        given, sees every transmission and may drop or alter frames.  A receiver re-requests missing origins from the
        child that should have delivered them, at most ``MAX_RETRIES`` times.
        """
        topo, width = self.topo, self.width
        d = readings_map(topo, d)
        kids = topo.children()
        attack_on = {}
        for a in attacks:
            attack_on.setdefault(a.link_node, []).append(a)
        # origin ids each node delivers upward (an aggregator delivers only itself)
        delivers: dict[int, list[int]] = {}
        outgoing: dict[int, dict[int, bytes]] = {}
        per_link: dict[tuple[int, int], int] = {}
        rejections: list[tuple[int, Validation]] = []
        transcript: dict[tuple[int, int], list[bytes]] = {}
        retrans = 0

        def transmit(child: int, receiver_inbox: Inbox, receiver: int, first: bool, only=None):
            nonlocal retrans
            link = (child, topo.parent[child])
            frames = [outgoing[child][j] for j in sorted(outgoing[child]) if only is None or j in only]
            if first:
                transcript[link] = list(frames)
                for a in attack_on.get(child, ()):
                    frames = self._apply_attack(a, frames, link, T_S)
            else:
                retrans += len(frames)
            if channel is not None:
                frames = channel(link, frames, T_S, not first)
            for f in frames:
                v = receiver_inbox.offer(f, self.contexts.get(receiver) or self._collector_ctx(), T_S)
                if not v.ok:
                    rejections.append((receiver, v))

        def receive(node: int) -> Inbox:
            expected = {j for c in kids[node] for j in delivers[c]}
            inbox = Inbox(expected)
            for c in kids[node]:
                transmit(c, inbox, node, True)
            for _ in range(MAX_RETRIES):
                if not inbox.missing:
                    break
                for c in kids[node]:
                    want = inbox.missing & set(delivers[c])
                    if want:
                        transmit(c, inbox, node, False, want)
            return inbox

        for i in topo.postorder():
            ctx = self.contexts[i]
            inbox = receive(i)
            if ctx.role is Role.FORWARDER:
                send, _ = forwarder_step(ctx, inbox, d[i], T_S, self.rng)
                delivers[i] = sorted(inbox.expected | {i})
                outgoing[i] = {p.sender_id: p.to_bytes(width) for p in send}
                per_link[(i, topo.parent[i])] = len(send)
            else:
                f_ids = [j for j in inbox.expected if self.roles[j].role is Role.FORWARDER]
                a_ids = [j for j in inbox.expected if self.roles[j].role is Role.AGGREGATOR]
                pkt, _ = aggregator_step(ctx, inbox, d[i], T_S, f_ids, a_ids, self.rng)
                delivers[i] = [i]
                outgoing[i] = {i: pkt.to_bytes(width)}
                self._meta[i] = (pkt.partial, pkt.missing)
                per_link[(i, topo.parent[i])] = self.M

        top = receive(topo.root)
        y_int, raw = collector_assemble(top.received_pkts, self.collector.private, topo, self.M,
                                        self.codec)
        missing = set(top.missing) | set(topo.unreachable)
        for j in top.received_pkts:
            missing.update(self._meta.get(j, (False, ()))[1])
        self.last_transcript = transcript
        self.last_round = T_S
        self._meta.clear()
        return SecureRoundResult(
            y_int=y_int,
            y=[v / self.scale**2 for v in y_int],
            scale=self.scale,
            cost=sum(per_link.values()),
            per_link=per_link,
            retransmissions=retrans,
            rejections=rejections,
            partial=bool(missing),
            missing=tuple(sorted(missing)),
            raw=raw,
            transcript=transcript,
        )

    def _collector_ctx(self) -> NodeContext:
        return NodeContext(self.topo.root, Role.COLLECTOR, None, self.nodes.directory,
                           self.collector.public, self.codec, self.M)

    def _apply_attack(self, a: Attack, frames: list[bytes], link, T_S: int) -> list[bytes]:
        rng = random.Random(a.seed)
        ids = [SecurePacket.from_bytes(f).sender_id for f in frames]
        target = a.target if a.target in ids else ids[-1]
        idx = ids.index(target)
        self.attacked.append((link, target))
        frames = list(frames)
        if a.kind is AttackKind.TAMPER:
            buf = bytearray(frames[idx])
            # ciphertext region starts after the 4-byte header and 2-byte length
            bit = a.bit % (8 * self.width)
            buf[6 + bit // 8] ^= 0x80 >> (bit % 8)
            frames[idx] = bytes(buf)
        elif a.kind is AttackKind.REPLAY:
            old = self.last_transcript.get(link)
            if old is None or self.last_round is None or self.last_round >= T_S:
                raise RuntimeError("replay needs a recorded earlier round")
            old_ids = [SecurePacket.from_bytes(f).sender_id for f in old]
            frames[idx] = old[old_ids.index(target)] if target in old_ids else old[-1]
        elif a.kind is AttackKind.IMPERSONATE:
            forger = signing_keygen(self.nodes.keypairs[target].public.n.bit_length(),
                                    f"forger/{a.seed}")
            fake = encrypt(rng.randrange(1000), self.collector.public, rng).value
            n_ct = len(SecurePacket.from_bytes(frames[idx]).ciphertexts)
            cts = [fake] * n_ct
            frames[idx] = make_packet(target, cts, forger.private, self.width, T_S).to_bytes(self.width)
        return frames


def readings_map(topo: Topology, d, meter_ids=None) -> dict[int, float]:
    if isinstance(d, Mapping):
        return {int(k): float(v) for k, v in d.items()}
    ids = list(meter_ids) if meter_ids is not None else sorted(set(topo.meter_ids) | set(topo.unreachable))
    return dict(zip(ids, [float(v) for v in d]))


def inject_adversary(session: SecureSession, d, T_S: int, attack: Attack,
                     expected_y_int=None) -> AttackOutcome:
    """Run round ``T_S`` with ``attack`` and compare against the honest outcome.

    Replay uses the transcript of the session's previous round, so run at
    least one round first.  ``expected_y_int`` (typically the quantized plain
    measurements) decides ``y_unaffected``.  Eavesdropping is passive: the outcome records
    the ciphertexts seen on the link and whether re-encrypting the same
    reading produced a different ciphertext.
    """
    d = readings_map(session.topo, d)
    out = AttackOutcome(attack.kind)
    if attack.kind is AttackKind.EAVESDROP:
        res = session.run_round(d, T_S)
        frames = res.transcript.get((attack.link_node, session.topo.parent[attack.link_node]), [])
        out.observed = len(frames)
        ctx = session.contexts[attack.link_node]
        value = session.codec.encode_int(quantize(d[attack.link_node], session.scale))
        c1 = encrypt(value, ctx.collector_key, session.rng).value
        c2 = encrypt(value, ctx.collector_key, session.rng).value
        out.ciphertexts_distinct = c1 != c2
        out.y_unaffected = None if expected_y_int is None else res.y_int == list(expected_y_int)
        return out
    session.attacked.clear()
    res = session.run_round(d, T_S, [attack])
    out.injected = len(session.attacked)
    targets = {t for _, t in session.attacked}
    bad = [v for _, v in res.rejections]
    hits = [v for v in bad if v.id in targets]
    out.rejected = min(len(hits), out.injected)
    out.false_rejections = len(bad) - len(hits)
    out.reasons = [v.reason for v in bad]
    out.y_unaffected = None if expected_y_int is None else res.y_int == list(expected_y_int)
    return out
