"""Deterministic in-memory harness wiring CA, RCA, and devices over the PHY.

A scenario describes a device roster, an honest message schedule, and an
optional adversary. ``run`` executes registration, offline training, the
handshake, and the data/re-authentication/refresh phases on a logical tick
clock, recording one verdict event per transmitted message. All randomness
derives from the scenario seed, so identical scenarios produce identical
traces.

Adversary model: full read of the wire plus injection and replay, but no
access to device-held private keys and no ability to clone another radio's
analog impairments. Impersonation therefore re-modulates stolen message
bytes through the attacker's own hardware fingerprint; verbatim replay
reuses the victim's captured waveform (and with it the victim's payload).
"""

from __future__ import annotations

import dataclasses
import json
import math
import random
from dataclasses import dataclass, field

import numpy as np

from .errors import ScenarioError
from .features import ExtractorConfig, Scenario as DatasetScenario, default_roster
from .ofdm import (
    ChannelConfig,
    DeviceImpairment,
    IqFrame,
    OfdmConfig,
    apply_channel,
    apply_impairments,
    generate_frame,
)
from .ec import sign as ec_sign
from .protocol import (
    Certificate,
    cert_signing_bytes,
    M3,
    M4,
    ProtocolConfig,
    ProtocolReject,
    RejectReason,
    Signature,
    Verdict,
    ca_init,
    device_confirm_refresh,
    device_handshake,
    device_init,
    device_install_cert,
    device_make_m1,
    device_refresh_pid,
    device_send_data,
    encode_message,
    rca_broadcast,
    rca_handshake_verify,
    rca_init,
    rca_install,
    rca_offline_train,
    rca_reauthenticate,
    rca_update_pid,
    refresh_due,
    register_device,
    register_rca,
)

REPLAY_M3 = "replay-m3"
REPLAY_M4 = "replay-m4"
MODIFY = "modify"
IMPERSONATE = "impersonate"
SYBIL = "sybil"
ADVERSARY_KINDS = (REPLAY_M3, REPLAY_M4, MODIFY, IMPERSONATE, SYBIL)


@dataclass(frozen=True)
class AdversaryConfig:
    kind: str
    n_injections: int = 100
    target_device: str | None = None  # default: middle roster device
    attacker_impairment: DeviceImpairment | None = None  # impersonate only
    attacker_gap_offset: float = 2.0  # roster gaps beyond the victim CFO
    modify_field: str = "cid"  # cert | cid | sig | pid | payload
    n_identities: int = 5  # sybil only
    replay_within_session: bool = False  # replay-m4 before the PID refresh
    activation_delay: int = 0  # extra ticks before the attack phase starts

    def __post_init__(self) -> None:
        if self.kind not in ADVERSARY_KINDS:
            raise ScenarioError(f"unknown adversary kind {self.kind!r}")
        if self.n_injections < 1:
            raise ScenarioError("n_injections must be >= 1")
        if self.modify_field not in ("cert", "cid", "sig", "pid", "payload"):
            raise ScenarioError(f"unknown modify_field {self.modify_field!r}")
        if self.activation_delay < 0:
            raise ScenarioError("activation_delay must be >= 0")


@dataclass(frozen=True)
class Scenario:
    roster: list[DeviceImpairment]
    messages_per_device: int = 20
    registration_frames: int = 200
    adversary: AdversaryConfig | None = None
    seed: int = 0
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    schedule: tuple[tuple[int, str, str], ...] | None = None

    def __post_init__(self) -> None:
        if not self.roster:
            raise ScenarioError("roster is empty")
        ids = [imp.device_id for imp in self.roster]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate device ids in roster")
        if self.messages_per_device < 0 or self.registration_frames < 1:
            raise ScenarioError("bad message or registration counts")
        if self.schedule is not None:
            times = [item[0] for item in self.schedule]
            if any(b < a for a, b in zip(times, times[1:])):
                raise ScenarioError("schedule times must be non-decreasing")
            for _, actor, action in self.schedule:
                if actor not in ids:
                    raise ScenarioError(f"schedule references unknown actor {actor!r}")
                if action != "send":
                    raise ScenarioError(f"unknown schedule action {action!r}")
        adv = self.adversary
        if adv is not None:
            if adv.target_device is not None and adv.target_device not in ids:
                raise ScenarioError(f"unknown target device {adv.target_device!r}")
            if adv.kind == IMPERSONATE and adv.attacker_impairment is not None:
                victim = self._victim()
                atk = adv.attacker_impairment
                if (atk.cfo_per_sample, atk.skew_deg) == (
                    victim.cfo_per_sample,
                    victim.skew_deg,
                ):
                    raise ScenarioError(
                        "impersonation attacker must differ from the victim impairment"
                    )

    def _victim(self) -> DeviceImpairment:
        adv = self.adversary
        if adv is not None and adv.target_device is not None:
            for imp in self.roster:
                if imp.device_id == adv.target_device:
                    return imp
        return self.roster[len(self.roster) // 2]


@dataclass(frozen=True)
class TraceEvent:
    time: int
    actor: str
    kind: str
    verdict: str
    reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "actor": self.actor,
            "kind": self.kind,
            "verdict": self.verdict,
            "reason": self.reason,
        }


@dataclass
class SessionTrace:
    events: list[TraceEvent]
    metrics: dict
    meta: dict

    def to_jsonl(self) -> str:
        lines = [json.dumps(e.to_dict(), sort_keys=True) for e in self.events]
        return "\n".join(lines) + "\n"


def build_schedule(
    device_ids: list[str], messages_per_device: int
) -> tuple[tuple[int, str, str], ...]:
    """Round-robin send schedule, one tick per event."""
    items = []
    t = 0
    for _ in range(messages_per_device):
        for device_id in device_ids:
            items.append((t, device_id, "send"))
            t += 1
    return tuple(items)


def transmit(
    wire: bytes,
    imp: DeviceImpairment,
    ofdm: OfdmConfig,
    channel: ChannelConfig,
    rng: np.random.Generator,
) -> IqFrame:
    """Modulate message bytes into one impaired, channel-faded frame."""
    bits = np.unpackbits(np.frombuffer(wire, dtype=np.uint8))
    if bits.size > ofdm.bits_per_frame:
        raise ScenarioError(
            f"{len(wire)}-byte message exceeds one frame ({ofdm.bits_per_frame} bits)"
        )
    pad = rng.integers(0, 2, size=ofdm.bits_per_frame - bits.size, dtype=np.int64)
    frame = generate_frame(np.concatenate([bits.astype(np.int64), pad]), ofdm)
    frame = apply_impairments(frame, imp)
    return apply_channel(frame, channel, rng)


def _interval95(successes: int, total: int) -> tuple[float, float]:
    """Normal-approximation 95% confidence interval for a rate."""
    if total == 0:
        return (0.0, 0.0)
    p = successes / total
    half = 1.96 * math.sqrt(max(p * (1.0 - p), 1e-12) / total)
    return (max(0.0, p - half), min(1.0, p + half))


class _Harness:
    """One run's mutable state; everything is derived from the scenario."""

    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.events: list[TraceEvent] = []
        self.t = 0
        seeds = np.random.SeedSequence(scenario.seed)
        n = len(scenario.roster)
        children = seeds.spawn(2 * n + 3)
        self.reg_rngs = [np.random.default_rng(c) for c in children[:n]]
        self.msg_rngs = [np.random.default_rng(c) for c in children[n : 2 * n]]
        self.adv_rng_np = np.random.default_rng(children[2 * n])
        ints = seeds.generate_state(2 * n + 4).tolist()
        self.crypto_seeds = ints
        self.adv_rng = random.Random(ints[-1])
        self.extractor = ExtractorConfig.for_ofdm(scenario.ofdm)

    def event(self, actor: str, kind: str, verdict: Verdict | str, reason=None) -> None:
        if isinstance(verdict, Verdict):
            reason = verdict.reason.value if verdict.reason else None
            verdict = "accept" if verdict.accepted else "reject"
        self.events.append(TraceEvent(self.t, actor, kind, verdict, reason))

    def run(self) -> SessionTrace:
        sc = self.sc
        ids = [imp.device_id for imp in sc.roster]
        ca, params = ca_init(self.crypto_seeds[0], cfg=sc.protocol, extractor=self.extractor)

        # Registration: each device sends M1 carried over impaired frames.
        devices = {}
        oid_rng = random.Random(self.crypto_seeds[1])
        for i, imp in enumerate(sc.roster):
            dev = device_init(
                params, oid_rng.randbytes(20), imp, self.crypto_seeds[2 + i], cfg=sc.protocol
            )
            m1 = device_make_m1(dev, self.t)
            wire = encode_message(m1)
            frames = [
                transmit(wire, imp, sc.ofdm, sc.channel, self.reg_rngs[i])
                for _ in range(sc.registration_frames)
            ]
            cert = register_device(ca, m1, frames, self.t)
            device_install_cert(dev, cert)
            devices[imp.device_id] = dev
            self.event(imp.device_id, "m1", "accept")
            self.t += 1

        # RCA registration, preload, offline training.
        rca = rca_init(
            params, self.crypto_seeds[2 + len(ids)], cfg=sc.protocol, extractor=self.extractor
        )
        cert_rca, bundle = register_rca(ca, rca.keypair.pk, self.t)
        rca_install(rca, cert_rca, bundle)
        report = rca_offline_train(rca, 0.8, seed=sc.seed, k=5)
        self.t += 1

        # Initial handshake: broadcast once, all devices answer this tick.
        m2 = rca_broadcast(rca, self.t)
        key_agreement_ok = True
        captured_m3: dict[str, M3] = {}
        for device_id in ids:
            dev = devices[device_id]
            try:
                m3 = device_handshake(dev, m2, self.t)
                label = rca_handshake_verify(rca, m3, self.t)
                captured_m3[device_id] = m3
                entry = rca.list_comm[dev.pid]
                key_agreement_ok &= entry.shared_key == dev.shared_key
                self.event(device_id, "m3", "accept")
            except ProtocolReject as exc:
                key_agreement_ok = False
                self.event(device_id, "m3", "reject", exc.reason.value)
        handshake_tick = self.t
        self.t += 1

        adv = sc.adversary
        victim_id = sc._victim().device_id if adv else None

        # In-flight modification happens at handshake time, before staleness.
        if adv and adv.kind == MODIFY and adv.modify_field in ("cert", "cid", "sig"):
            self.t = handshake_tick
            base = captured_m3[victim_id]
            for _ in range(adv.n_injections):
                tampered = self._tamper_m3(base)
                try:
                    rca_handshake_verify(rca, tampered, self.t)
                    self.event("attacker", "attack-m3", "accept")
                except ProtocolReject as exc:
                    self.event("attacker", "attack-m3", "reject", exc.reason.value)
            self.t = handshake_tick + 1

        # Data phase.
        schedule = sc.schedule or build_schedule(ids, sc.messages_per_device)
        data_start = self.t
        idx_by_id = {device_id: i for i, device_id in enumerate(ids)}
        captured_m4: tuple[M4, IqFrame] | None = None
        msg_counter = 0
        for offset, device_id, _action in schedule:
            self.t = data_start + offset
            dev = devices[device_id]
            payload = f"telemetry {msg_counter}".encode()
            msg_counter += 1
            rng = self.msg_rngs[idx_by_id[device_id]]
            if refresh_due(dev):
                m5 = device_refresh_pid(dev, payload, self.t)
                frame = transmit(encode_message(m5), dev.impairment, sc.ofdm, sc.channel, rng)
                verdict = rca_update_pid(rca, m5, frame, self.t)
                device_confirm_refresh(dev, verdict.accepted)
                self.event(device_id, "m5", verdict)
            else:
                m4 = device_send_data(dev, payload)
                frame = transmit(encode_message(m4), dev.impairment, sc.ofdm, sc.channel, rng)
                verdict = rca_reauthenticate(rca, m4, frame, self.t)
                self.event(device_id, "m4", verdict)
                first_capture = captured_m4 is None and device_id == victim_id
                if first_capture:
                    captured_m4 = (m4, frame)
                if adv and adv.kind == REPLAY_M4 and adv.replay_within_session and first_capture:
                    for _ in range(adv.n_injections):
                        v = rca_reauthenticate(rca, m4, frame, self.t)
                        self.event("attacker", "attack-m4", v)
        if schedule:
            self.t = data_start + schedule[-1][0] + 1

        # Post-schedule attack phase, past the freshness window.
        self.t += sc.protocol.delta_t + 1
        if adv:
            self.t += adv.activation_delay
        if adv and adv.kind == REPLAY_M3:
            base = captured_m3[victim_id]
            for _ in range(adv.n_injections):
                try:
                    rca_handshake_verify(rca, base, self.t)
                    self.event("attacker", "attack-m3", "accept")
                except ProtocolReject as exc:
                    self.event("attacker", "attack-m3", "reject", exc.reason.value)
                self.t += 1
        elif adv and adv.kind == REPLAY_M4 and not adv.replay_within_session:
            if captured_m4 is None:
                raise ScenarioError("no victim M4 was observed to replay")
            m4, frame = captured_m4
            for _ in range(adv.n_injections):
                v = rca_reauthenticate(rca, m4, frame, self.t)
                self.event("attacker", "attack-m4", v)
                self.t += 1
        elif adv and adv.kind == MODIFY and adv.modify_field in ("pid", "payload"):
            if captured_m4 is None:
                raise ScenarioError("no victim M4 was observed to modify")
            m4, frame = captured_m4
            for _ in range(adv.n_injections):
                tampered = self._tamper_m4(m4)
                v = rca_reauthenticate(rca, tampered, frame, self.t)
                self.event("attacker", "attack-m4", v)
                self.t += 1
        elif adv and adv.kind == IMPERSONATE:
            victim = devices[victim_id]
            attacker = adv.attacker_impairment or self._default_attacker(victim_id)
            for k in range(adv.n_injections):
                m4 = M4(payload=f"forged {k}".encode(), pid=victim.pid)
                frame = transmit(
                    encode_message(m4), attacker, sc.ofdm, sc.channel, self.adv_rng_np
                )
                v = rca_reauthenticate(rca, m4, frame, self.t)
                self.event("attacker", "attack-m4", v)
                self.t += 1
        elif adv and adv.kind == SYBIL:
            for k in range(adv.n_identities):
                fake = device_init(
                    params,
                    self.adv_rng.randbytes(20),
                    sc.roster[0],
                    self.adv_rng.randrange(2**31),
                    cfg=sc.protocol,
                )
                # Self-signed certificate: not issued by the CA.
                expiry = self.t + sc.protocol.cert_lifetime
                sig = ec_sign(
                    fake.keypair.sk,
                    cert_signing_bytes(fake.keypair.pk, expiry),
                    rng=self.adv_rng,
                )
                device_install_cert(fake, Certificate(fake.keypair.pk, expiry, sig))
                try:
                    m3 = device_handshake(fake, rca_broadcast(rca, self.t), self.t)
                    rca_handshake_verify(rca, m3, self.t)
                    self.event("attacker", "attack-m3", "accept")
                except ProtocolReject as exc:
                    self.event("attacker", "attack-m3", "reject", exc.reason.value)
                self.t += 1

        metrics = self._metrics()
        meta = {
            "seed": sc.seed,
            "n_devices": len(ids),
            "messages_per_device": sc.messages_per_device,
            "registration_frames": sc.registration_frames,
            "adversary": dataclasses.asdict(adv) if adv else None,
            "classifier_accuracy": report.accuracy,
            "classifier_recall_mean": report.recall_mean,
            "classifier_f1_mean": report.f1_mean,
            "key_agreement_ok": key_agreement_ok,
        }
        return SessionTrace(events=self.events, metrics=metrics, meta=meta)

    def _tamper_m3(self, m3: M3) -> M3:
        field_name = self.sc.adversary.modify_field
        if field_name == "cert":
            cert = m3.cert
            bad_sig = Signature(r=cert.sig.r ^ 1, s=cert.sig.s)
            return dataclasses.replace(m3, cert=Certificate(cert.pk, cert.expiry, bad_sig))
        if field_name == "cid":
            pos = self.adv_rng.randrange(len(m3.cid))
            cid = bytearray(m3.cid)
            cid[pos] ^= 1 + self.adv_rng.randrange(255)
            return dataclasses.replace(m3, cid=bytes(cid))
        # signature bit flip
        return dataclasses.replace(
            m3, sig=Signature(r=m3.sig.r, s=m3.sig.s ^ (1 << self.adv_rng.randrange(64)))
        )

    def _tamper_m4(self, m4: M4) -> M4:
        if self.sc.adversary.modify_field == "pid":
            pos = self.adv_rng.randrange(len(m4.pid))
            pid = bytearray(m4.pid)
            pid[pos] ^= 1 + self.adv_rng.randrange(255)
            return dataclasses.replace(m4, pid=bytes(pid))
        return dataclasses.replace(m4, payload=m4.payload + b"!")

    def _default_attacker(self, victim_id: str) -> DeviceImpairment:
        """Attacker hardware offset from the victim by whole roster gaps."""
        roster = self.sc.roster
        victim = next(imp for imp in roster if imp.device_id == victim_id)
        cfos = sorted(imp.cfo_per_sample for imp in roster)
        if len(cfos) > 1:
            gaps = [b - a for a, b in zip(cfos, cfos[1:])]
            gap = sorted(gaps)[len(gaps) // 2]
        else:
            gap = 1e-4
        return DeviceImpairment(
            "ATTACKER",
            victim.cfo_per_sample + self.sc.adversary.attacker_gap_offset * gap,
            victim.skew_deg,
        )

    def _metrics(self) -> dict:
        honest_kinds = {"m4", "m5"}
        honest = [e for e in self.events if e.kind in honest_kinds and e.actor != "attacker"]
        attacks = [e for e in self.events if e.actor == "attacker"]
        crypto_reasons = {
            RejectReason.STALE_TIMESTAMP.value,
            RejectReason.CERT_INVALID.value,
            RejectReason.EXPIRED_CERT.value,
            RejectReason.BAD_SIGNATURE.value,
            RejectReason.DECRYPT_FAILURE.value,
        }
        honest_rejects = [e for e in honest if e.verdict == "reject"]
        crypto_rejects = [
            e
            for e in self.events
            if e.actor != "attacker" and e.verdict == "reject" and e.reason in crypto_reasons
        ]
        detected = sum(1 for e in attacks if e.verdict == "reject")
        metrics = {
            "honest_messages": len(honest),
            "honest_rejects": len(honest_rejects),
            "false_reject_rate": len(honest_rejects) / len(honest) if honest else 0.0,
            "false_reject_ci95": _interval95(len(honest_rejects), len(honest)),
            "crypto_reject_count": len(crypto_rejects),
            "adversary_messages": len(attacks),
            "adversary_detected": detected,
            "detection_rate": detected / len(attacks) if attacks else None,
            "detection_ci95": _interval95(detected, len(attacks)) if attacks else None,
            "false_accept_rate": (len(attacks) - detected) / len(attacks) if attacks else None,
        }
        return metrics


def run(scenario: Scenario) -> SessionTrace:
    """Execute a scenario; a pure function of the scenario record."""
    return _Harness(scenario).run()


def measure_detection(scenario: Scenario, n_trials: int | None = None) -> dict:
    """Run the adversarial scenario and aggregate detection statistics."""
    if scenario.adversary is None:
        raise ScenarioError("measure_detection needs an adversary in the scenario")
    if n_trials is not None:
        adv = dataclasses.replace(scenario.adversary, n_injections=n_trials)
        scenario = dataclasses.replace(scenario, adversary=adv)
    trace = run(scenario)
    record = dict(trace.metrics)
    record["classifier_accuracy"] = trace.meta["classifier_accuracy"]
    record["seed"] = scenario.seed
    record["adversary_kind"] = scenario.adversary.kind
    return record


def honest_scenario(
    n_devices: int = 3,
    messages_per_device: int = 20,
    seed: int = 0,
    registration_frames: int = 200,
) -> Scenario:
    """Convenience constructor on the default fixed-skew roster."""
    roster = default_roster(n_devices, DatasetScenario.FIXED_SKEW)
    return Scenario(
        roster=roster,
        messages_per_device=messages_per_device,
        registration_frames=registration_frames,
        seed=seed,
    )


def scenario_from_dict(doc: dict) -> Scenario:
    """Build a scenario from the JSON document format used by the CLI."""
    try:
        ofdm = OfdmConfig(**doc.get("phy", {}))
        channel = ChannelConfig(**doc.get("channel", {}))
        protocol = ProtocolConfig(**doc.get("protocol", {}))
        if "roster" in doc:
            from .features import cfo_units_to_rad

            roster = [
                DeviceImpairment(
                    rec["device_id"],
                    cfo_units_to_rad(rec["cfo_normalized_units"], ofdm.n_subcarriers),
                    rec["skew_deg"],
                )
                for rec in doc["roster"]
            ]
        else:
            roster = default_roster(
                int(doc.get("devices", 3)), DatasetScenario.FIXED_SKEW, ofdm
            )
        adversary = None
        if doc.get("adversary"):
            adv_doc = dict(doc["adversary"])
            atk = adv_doc.pop("attacker_impairment", None)
            if atk is not None:
                from .features import cfo_units_to_rad

                atk = DeviceImpairment(
                    atk.get("device_id", "ATTACKER"),
                    cfo_units_to_rad(atk["cfo_normalized_units"], ofdm.n_subcarriers),
                    atk["skew_deg"],
                )
            adversary = AdversaryConfig(attacker_impairment=atk, **adv_doc)
        schedule = None
        if doc.get("schedule"):
            schedule = tuple(
                (int(t), str(actor), str(action)) for t, actor, action in doc["schedule"]
            )
        return Scenario(
            roster=roster,
            messages_per_device=int(doc.get("messages_per_device", 20)),
            registration_frames=int(doc.get("registration_frames", 200)),
            adversary=adversary,
            seed=int(doc.get("seed", 0)),
            ofdm=ofdm,
            channel=channel,
            protocol=protocol,
            schedule=schedule,
        )
    except (TypeError, KeyError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario document: {exc}") from exc


def load_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(doc)
