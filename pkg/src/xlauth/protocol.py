"""CA / RCA / device state machines and the M1-M5 message exchange.

Flow: the CA initializes curve parameters and its keypair, registers
devices (capturing their fingerprint lists from registration frames) and
the RCA (preloading certificates plus fingerprint lists for offline
classifier training). The RCA then broadcasts signed hello messages;
devices answer with certificate + encrypted pseudo-identity; data messages
carry only the pseudo-identity and are re-authenticated against the PHY
fingerprint classifier. Every session's final message refreshes the
pseudo-identity under the shared ECDH key.

All entities run on a harness-owned logical clock (integer ticks); nothing
here reads wall-clock time, so runs replay deterministically.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .classify import EvalReport, TrainedModel, evaluate
from .classify import predict as classify_predict
from .classify import split as classify_split
from .classify import train as classify_train
from .errors import DegenerateInputError, ProtocolError
from .ec import (
    CurveParams,
    KeyPair,
    Point,
    SECP160K1,
    Signature,
    check_curve,
    ecdh_shared,
    encode_point,
    encode_scalar,
    gen_keypair,
    hash256,
    sign,
    sym_decrypt,
    sym_encrypt,
    verify,
)
from .features import ExtractorConfig, FeatureVector, extract_features
from .ofdm import DeviceImpairment, IqFrame

PID_BYTES = 20
OID_BYTES = 20
TIMESTAMP_BYTES = 4
CID_BYTES = 32
SIG_BYTES = 40
PAPER_SIG_BYTES = 32  # parity figure used by the byte-accounting comparison


class RejectReason(str, Enum):
    STALE_TIMESTAMP = "stale-timestamp"
    CERT_INVALID = "cert-invalid"
    EXPIRED_CERT = "expired-cert"
    BAD_SIGNATURE = "bad-signature"
    DECRYPT_FAILURE = "decrypt-failure"
    UNKNOWN_PID = "unknown-pid"
    FINGERPRINT_MISMATCH = "fingerprint-mismatch"
    EXTRACTION_FAILURE = "extraction-failure"
    DUPLICATE_PID = "duplicate-pid"
    UNREGISTERED_DEVICE = "unregistered-device"
    DUPLICATE_OID = "duplicate-oid"
    REVOKED = "revoked"
    PROTOCOL_ORDER = "protocol-order"


class ProtocolReject(ProtocolError):
    """A typed rejection raised by a verification step."""

    def __init__(self, reason: RejectReason, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)


@dataclass(frozen=True)
class ProtocolConfig:
    """Freshness window, session length, and certificate lifetime in ticks."""

    delta_t: int = 5
    session_msgs_d: int = 10
    cert_lifetime: int = 1_000_000

    def __post_init__(self) -> None:
        if self.delta_t < 0 or self.session_msgs_d < 1 or self.cert_lifetime < 1:
            raise ProtocolError("invalid protocol configuration")


@dataclass(frozen=True)
class PublicParams:
    curve: CurveParams
    pk_ca: Point
    cipher: str = "aes-256"


@dataclass(frozen=True)
class Certificate:
    pk: Point
    expiry: int
    sig: Signature


@dataclass(frozen=True)
class M1:
    pk: Point
    oid: bytes
    t1: int


@dataclass(frozen=True)
class M2:
    cert: Certificate
    t1: int
    sig: Signature


@dataclass(frozen=True)
class M3:
    cert: Certificate
    t2: int
    cid: bytes
    sig: Signature


@dataclass(frozen=True)
class M4:
    payload: bytes
    pid: bytes


@dataclass(frozen=True)
class M5:
    payload: bytes
    pid: bytes
    cid_new: bytes


ProtocolMessage = M1 | M2 | M3 | M4 | M5


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    device_label: str | None = None
    reason: RejectReason | None = None


# --------------------------------------------------------------------------
# Wire codec (fixed-layout big-endian; used for byte accounting and frames)

def _ts(t: int) -> bytes:
    return int(t).to_bytes(TIMESTAMP_BYTES, "big")


def encode_sig(sig: Signature) -> bytes:
    return encode_scalar(sig.r) + encode_scalar(sig.s)


def encode_cert(cert: Certificate) -> bytes:
    return encode_point(cert.pk) + _ts(cert.expiry) + encode_sig(cert.sig)


def encode_message(msg: ProtocolMessage) -> bytes:
    if isinstance(msg, M1):
        return b"\x01" + encode_point(msg.pk) + msg.oid + _ts(msg.t1)
    if isinstance(msg, M2):
        return b"\x02" + encode_cert(msg.cert) + _ts(msg.t1) + encode_sig(msg.sig)
    if isinstance(msg, M3):
        return (
            b"\x03" + encode_cert(msg.cert) + _ts(msg.t2) + msg.cid + encode_sig(msg.sig)
        )
    if isinstance(msg, M4):
        return (
            b"\x04" + msg.pid + len(msg.payload).to_bytes(2, "big") + msg.payload
        )
    if isinstance(msg, M5):
        return (
            b"\x05"
            + msg.pid
            + msg.cid_new
            + len(msg.payload).to_bytes(2, "big")
            + msg.payload
        )
    raise ProtocolError(f"cannot encode {type(msg).__name__}")


def wire_len(msg: ProtocolMessage) -> int:
    return len(encode_message(msg))


POINT_B = 40


def paper_accounting_len(msg: ProtocolMessage) -> int:
    """Byte accounting with 32-byte signatures and the payload ignored."""
    if isinstance(msg, M2):
        return POINT_B + TIMESTAMP_BYTES + PAPER_SIG_BYTES + TIMESTAMP_BYTES + PAPER_SIG_BYTES
    if isinstance(msg, M3):
        return (
            POINT_B + TIMESTAMP_BYTES + PAPER_SIG_BYTES  # certificate
            + TIMESTAMP_BYTES + CID_BYTES + PAPER_SIG_BYTES
        )
    if isinstance(msg, M4):
        return PID_BYTES
    if isinstance(msg, M5):
        return PID_BYTES + CID_BYTES
    if isinstance(msg, M1):
        return POINT_B + OID_BYTES + TIMESTAMP_BYTES
    raise ProtocolError(f"no accounting for {type(msg).__name__}")


# --------------------------------------------------------------------------
# Signing payloads and pseudo-identity encryption

def cert_signing_bytes(pk: Point, expiry: int) -> bytes:
    return b"cert" + encode_point(pk) + _ts(expiry)


def _m2_signing_bytes(cert: Certificate, t1: int) -> bytes:
    return b"m2" + encode_cert(cert) + _ts(t1)


def _m3_signing_bytes(cert: Certificate, t2: int, cid: bytes) -> bytes:
    return b"m3" + encode_cert(cert) + _ts(t2) + cid


def encrypt_pid(key: bytes, pid: bytes, t: int) -> bytes:
    """256-bit ciphertext carrying pid, its timestamp, and a truncated MAC."""
    mac = hash256(b"cid-mac", key, pid, _ts(t))[:6]
    return sym_encrypt(key, pid, nonce=_ts(t) + mac)


def decrypt_pid(key: bytes, cid: bytes) -> tuple[bytes, int]:
    try:
        pid, nonce = sym_decrypt(key, cid)
    except Exception as exc:
        raise ProtocolReject(RejectReason.DECRYPT_FAILURE, str(exc)) from exc
    if len(pid) != PID_BYTES or len(nonce) != TIMESTAMP_BYTES + 6:
        raise ProtocolReject(RejectReason.DECRYPT_FAILURE, "bad plaintext layout")
    ts_bytes, mac = nonce[:TIMESTAMP_BYTES], nonce[TIMESTAMP_BYTES:]
    if hash256(b"cid-mac", key, pid, ts_bytes)[:6] != mac:
        raise ProtocolReject(RejectReason.DECRYPT_FAILURE, "MAC mismatch")
    return pid, int.from_bytes(ts_bytes, "big")


def _check_fresh(now: int, t: int, delta_t: int) -> None:
    if t > now or now - t > delta_t:
        raise ProtocolReject(
            RejectReason.STALE_TIMESTAMP, f"t={t} outside window at now={now}"
        )


def verify_cert(pk_ca: Point, cert: Certificate, now: int) -> None:
    if not verify(pk_ca, cert_signing_bytes(cert.pk, cert.expiry), cert.sig):
        raise ProtocolReject(RejectReason.CERT_INVALID, "CA signature does not verify")
    if now > cert.expiry:
        raise ProtocolReject(RejectReason.EXPIRED_CERT, f"expired at {cert.expiry}")


# --------------------------------------------------------------------------
# Centralized authority

@dataclass
class RegistryEntry:
    label: str
    cert: Certificate
    fingerprints: list[FeatureVector]


@dataclass
class CaState:
    keypair: KeyPair
    params: PublicParams
    cfg: ProtocolConfig
    extractor: ExtractorConfig
    rng: random.Random
    registry: dict[bytes, RegistryEntry] = field(default_factory=dict)
    revoked: set[bytes] = field(default_factory=set)


def ca_init(
    seed: int,
    cfg: ProtocolConfig | None = None,
    extractor: ExtractorConfig | None = None,
) -> tuple[CaState, PublicParams]:
    """Load curve constants, generate the CA keypair, publish parameters."""
    check_curve(SECP160K1)
    rng = random.Random(seed)
    keypair = gen_keypair(rng)
    params = PublicParams(curve=SECP160K1, pk_ca=keypair.pk)
    ca = CaState(
        keypair=keypair,
        params=params,
        cfg=cfg or ProtocolConfig(),
        extractor=extractor or ExtractorConfig(),
        rng=rng,
    )
    return ca, params


def _issue_cert(ca: CaState, pk: Point, now: int) -> Certificate:
    expiry = now + ca.cfg.cert_lifetime
    sig = sign(ca.keypair.sk, cert_signing_bytes(pk, expiry), rng=ca.rng)
    return Certificate(pk=pk, expiry=expiry, sig=sig)


def register_device(
    ca: CaState, m1: M1, training_frames: list[IqFrame], now: int
) -> Certificate:
    """Extract the fingerprint list from the carrier frames and issue a cert."""
    if m1.oid in ca.revoked:
        raise ProtocolReject(RejectReason.REVOKED, "identity was revoked")
    if m1.oid in ca.registry:
        raise ProtocolReject(RejectReason.DUPLICATE_OID, "identity already registered")
    _check_fresh(now, m1.t1, ca.cfg.delta_t)
    label = f"D{len(ca.registry):02d}"
    fingerprints = [
        extract_features(frame, ca.extractor, device_id=label)
        for frame in training_frames
    ]
    cert = _issue_cert(ca, m1.pk, now)
    ca.registry[m1.oid] = RegistryEntry(label=label, cert=cert, fingerprints=fingerprints)
    return cert


@dataclass
class BundleEntry:
    label: str
    cert: Certificate
    fingerprints: list[FeatureVector]


@dataclass
class PreloadBundle:
    params: PublicParams
    devices: list[BundleEntry]


def register_rca(ca: CaState, pk_rca: Point, now: int) -> tuple[Certificate, PreloadBundle]:
    """Issue the RCA certificate and bundle all device fingerprint lists."""
    cert = _issue_cert(ca, pk_rca, now)
    bundle = PreloadBundle(
        params=ca.params,
        devices=[
            BundleEntry(entry.label, entry.cert, list(entry.fingerprints))
            for entry in ca.registry.values()
        ],
    )
    return cert, bundle


def revoke_device(ca: CaState, oid: bytes) -> None:
    ca.revoked.add(oid)
    ca.registry.pop(oid, None)


def ca_trace(ca: CaState, cert: Certificate) -> bytes:
    """Map a device certificate back to the single OID that owns it."""
    matches = [
        oid
        for oid, entry in ca.registry.items()
        if entry.cert.pk == cert.pk and entry.cert.sig == cert.sig
    ]
    if len(matches) != 1:
        raise ProtocolError(f"certificate maps to {len(matches)} identities")
    return matches[0]


# --------------------------------------------------------------------------
# Regional centralized authority

@dataclass
class CommEntry:
    cert: Certificate
    shared_key: bytes
    label: str


@dataclass
class RcaState:
    keypair: KeyPair
    params: PublicParams
    cfg: ProtocolConfig
    extractor: ExtractorConfig
    rng: random.Random
    cert: Certificate | None = None
    model: TrainedModel | None = None
    eval_report: EvalReport | None = None
    label_by_pk: dict[bytes, str] = field(default_factory=dict)
    list_comm: dict[bytes, CommEntry] = field(default_factory=dict)
    bundle_rows: list[FeatureVector] = field(default_factory=list)


def rca_init(
    params: PublicParams,
    seed: int,
    cfg: ProtocolConfig | None = None,
    extractor: ExtractorConfig | None = None,
) -> RcaState:
    rng = random.Random(seed)
    return RcaState(
        keypair=gen_keypair(rng),
        params=params,
        cfg=cfg or ProtocolConfig(),
        extractor=extractor or ExtractorConfig(),
        rng=rng,
    )


def rca_install(rca: RcaState, cert: Certificate, bundle: PreloadBundle) -> None:
    rca.cert = cert
    rca.label_by_pk = {
        encode_point(entry.cert.pk): entry.label for entry in bundle.devices
    }
    rca.bundle_rows = [
        row for entry in bundle.devices for row in entry.fingerprints
    ]


def rca_offline_train(
    rca: RcaState, train_fraction: float = 0.8, seed: int = 0, k: int = 5
) -> EvalReport:
    """Train the KNN on the preloaded fingerprints with a held-out split."""
    rows = rca.bundle_rows
    if not rows:
        raise ProtocolError("no preload bundle installed")
    train_rows, test_rows = classify_split(rows, train_fraction, seed)
    rca.model = classify_train(train_rows, algo="knn", k=k, seed=seed)
    rca.eval_report = evaluate(rca.model, test_rows, split_seed=seed)
    return rca.eval_report


def rca_broadcast(rca: RcaState, now: int) -> M2:
    if rca.cert is None:
        raise ProtocolError("RCA holds no certificate")
    if now > rca.cert.expiry:
        raise ProtocolReject(RejectReason.EXPIRED_CERT, "own certificate expired")
    sig = sign(rca.keypair.sk, _m2_signing_bytes(rca.cert, now), rng=rca.rng)
    return M2(cert=rca.cert, t1=now, sig=sig)


def rca_handshake_verify(rca: RcaState, m3: M3, now: int) -> str:
    """Admit a device into list_comm; returns its classifier label."""
    verify_cert(rca.params.pk_ca, m3.cert, now)
    _check_fresh(now, m3.t2, rca.cfg.delta_t)
    if not verify(m3.cert.pk, _m3_signing_bytes(m3.cert, m3.t2, m3.cid), m3.sig):
        raise ProtocolReject(RejectReason.BAD_SIGNATURE, "device signature invalid")
    label = rca.label_by_pk.get(encode_point(m3.cert.pk))
    if label is None:
        raise ProtocolReject(
            RejectReason.UNREGISTERED_DEVICE, "certificate not in preload bundle"
        )
    shared = ecdh_shared(rca.keypair.sk, m3.cert.pk)
    pid, _ = decrypt_pid(shared, m3.cid)
    if pid in rca.list_comm:
        raise ProtocolReject(
            RejectReason.DUPLICATE_PID, "pseudo-identity collision, regenerate"
        )
    rca.list_comm[pid] = CommEntry(cert=m3.cert, shared_key=shared, label=label)
    return label


def _fingerprint_verdict(rca: RcaState, frame: IqFrame, entry: CommEntry) -> Verdict:
    if rca.model is None:
        raise ProtocolError("classifier not trained")
    try:
        features = extract_features(frame, rca.extractor)
    except DegenerateInputError:
        return Verdict(False, None, RejectReason.EXTRACTION_FAILURE)
    predicted, _conf = classify_predict(rca.model, features)
    if predicted != entry.label:
        return Verdict(False, entry.label, RejectReason.FINGERPRINT_MISMATCH)
    return Verdict(True, entry.label)


def rca_reauthenticate(rca: RcaState, m4: M4, carrying_frame: IqFrame, now: int) -> Verdict:
    """PHY-layer re-authentication: fingerprint must match the PID's owner."""
    entry = rca.list_comm.get(m4.pid)
    if entry is None:
        return Verdict(False, None, RejectReason.UNKNOWN_PID)
    return _fingerprint_verdict(rca, carrying_frame, entry)


def rca_update_pid(rca: RcaState, m5: M5, carrying_frame: IqFrame, now: int) -> Verdict:
    """Session refresh: re-authenticate, then swap in the new pseudo-identity."""
    entry = rca.list_comm.get(m5.pid)
    if entry is None:
        return Verdict(False, None, RejectReason.UNKNOWN_PID)
    verdict = _fingerprint_verdict(rca, carrying_frame, entry)
    if not verdict.accepted:
        return verdict
    try:
        new_pid, _t = decrypt_pid(entry.shared_key, m5.cid_new)
    except ProtocolReject as exc:
        return Verdict(False, entry.label, exc.reason)
    if new_pid in rca.list_comm:
        return Verdict(False, entry.label, RejectReason.DUPLICATE_PID)
    del rca.list_comm[m5.pid]
    rca.list_comm[new_pid] = entry
    return Verdict(True, entry.label)


def rca_cert_for_pid(rca: RcaState, pid: bytes) -> Certificate:
    entry = rca.list_comm.get(pid)
    if entry is None:
        raise ProtocolError("unknown pseudo-identity")
    return entry.cert


# --------------------------------------------------------------------------
# Device

@dataclass
class DeviceState:
    oid: bytes
    keypair: KeyPair
    params: PublicParams
    cfg: ProtocolConfig
    impairment: DeviceImpairment
    rng: random.Random
    cert: Certificate | None = None
    pid: bytes | None = None
    pending_pid: bytes | None = None
    shared_key: bytes | None = None
    session_active: bool = False
    msgs_in_session: int = 0
    pid_seq: int = 0


def device_init(
    params: PublicParams,
    oid: bytes,
    impairment: DeviceImpairment,
    seed: int,
    cfg: ProtocolConfig | None = None,
) -> DeviceState:
    if len(oid) != OID_BYTES:
        raise ProtocolError(f"OID must be {OID_BYTES} bytes")
    rng = random.Random(seed)
    return DeviceState(
        oid=oid,
        keypair=gen_keypair(rng),
        params=params,
        cfg=cfg or ProtocolConfig(),
        impairment=impairment,
        rng=rng,
    )


def device_make_m1(dev: DeviceState, now: int) -> M1:
    return M1(pk=dev.keypair.pk, oid=dev.oid, t1=now)


def device_install_cert(dev: DeviceState, cert: Certificate) -> None:
    dev.cert = cert


def _make_pid(dev: DeviceState, now: int) -> bytes:
    pid = hash256(
        b"pid",
        encode_scalar(dev.keypair.sk),
        _ts(now),
        dev.pid_seq.to_bytes(4, "big"),
    )[:PID_BYTES]
    dev.pid_seq += 1
    return pid


def device_handshake(dev: DeviceState, m2: M2, now: int) -> M3:
    """Verify the RCA hello, derive the shared key, answer with M3."""
    if dev.cert is None:
        raise ProtocolError("device is not registered")
    verify_cert(dev.params.pk_ca, m2.cert, now)
    _check_fresh(now, m2.t1, dev.cfg.delta_t)
    if not verify(m2.cert.pk, _m2_signing_bytes(m2.cert, m2.t1), m2.sig):
        raise ProtocolReject(RejectReason.BAD_SIGNATURE, "broadcast signature invalid")
    shared = ecdh_shared(dev.keypair.sk, m2.cert.pk)
    pid = _make_pid(dev, now)
    cid = encrypt_pid(shared, pid, now)
    sig = sign(dev.keypair.sk, _m3_signing_bytes(dev.cert, now, cid), rng=dev.rng)
    dev.shared_key = shared
    dev.pid = pid
    dev.session_active = True
    dev.msgs_in_session = 0
    return M3(cert=dev.cert, t2=now, cid=cid, sig=sig)


def refresh_due(dev: DeviceState) -> bool:
    """True when the next message must be the session-closing M5."""
    return dev.session_active and dev.msgs_in_session >= dev.cfg.session_msgs_d - 1


def device_send_data(dev: DeviceState, payload: bytes) -> M4:
    if not dev.session_active:
        raise ProtocolReject(RejectReason.PROTOCOL_ORDER, "no active session")
    if refresh_due(dev):
        raise ProtocolReject(
            RejectReason.PROTOCOL_ORDER, "pseudo-identity refresh due, send M5"
        )
    dev.msgs_in_session += 1
    return M4(payload=payload, pid=dev.pid)


def device_refresh_pid(dev: DeviceState, payload: bytes, now: int) -> M5:
    """Close the session: carry data plus the encrypted next pseudo-identity.

    The new identity stays pending until :func:`device_confirm_refresh`;
    switching unilaterally would desynchronize the device from the RCA
    whenever a refresh message is lost or (falsely) rejected.
    """
    if not dev.session_active:
        raise ProtocolReject(RejectReason.PROTOCOL_ORDER, "no active session")
    new_pid = _make_pid(dev, now)
    cid_new = encrypt_pid(dev.shared_key, new_pid, now)
    dev.pending_pid = new_pid
    return M5(payload=payload, pid=dev.pid, cid_new=cid_new)


def device_confirm_refresh(dev: DeviceState, accepted: bool) -> None:
    """Commit or abandon the pending pseudo-identity after the RCA verdict."""
    if dev.pending_pid is None:
        raise ProtocolReject(RejectReason.PROTOCOL_ORDER, "no refresh in flight")
    if accepted:
        dev.pid = dev.pending_pid
        dev.msgs_in_session = 0
    dev.pending_pid = None
