"""Session replay: packets, deterministic loss injection, sliding predictions.

A session directory is a self-contained recording: telemetry packets, one
clip per person, the person-to-subject manifest, and a trained fusion model.
Replay walks the packets in timestamp order, scales the gaps by a speed
factor, optionally drops a seeded subset (sequence numbers stay intact so
clients can detect the gaps), and re-evaluates a sliding sensor window per
person to enqueue pending triage decisions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..fusion import FusionActionClassifier
from ..tracksync import FusionSample, load_clip
from ..validation import ParseError, TriageKitError, ValidationError
from ..vitalgen import ACTION_LABELS, VitalSignSeries
from .decisions import DecisionStore, TriageDecision
from .records import severity_for_action


class SessionError(TriageKitError, RuntimeError):
    """The session directory is missing required assets."""


@dataclass(frozen=True)
class TelemetryPacket:
    subject_id: str
    seq: int
    t: float
    hr: float
    br: float
    posture: float
    movement: float

    def values(self) -> np.ndarray:
        return np.array([self.hr, self.br, self.posture, self.movement])


def build_packets(streams: dict[str, VitalSignSeries]) -> list[TelemetryPacket]:
    """Interleave per-subject samples into one timestamp-ordered packet list."""
    packets = []
    for subject_id in sorted(streams):
        series = streams[subject_id]
        for i in range(series.timesteps):
            hr, br, posture, movement = series.samples[i]
            packets.append(TelemetryPacket(
                subject_id=subject_id, seq=i, t=i / series.rate_hz,
                hr=float(hr), br=float(br), posture=float(posture),
                movement=float(movement),
            ))
    packets.sort(key=lambda p: (p.t, p.subject_id))
    return packets


def write_packets(packets: list[TelemetryPacket], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in packets:
            fh.write(json.dumps({
                "subject_id": p.subject_id, "seq": p.seq, "t": p.t,
                "hr_bpm": p.hr, "br_rpm": p.br,
                "posture_deg": p.posture, "movement_g": p.movement,
            }) + "\n")


def load_packets(path) -> list[TelemetryPacket]:
    packets = []
    last_seq: dict[str, int] = {}
    last_t = -np.inf
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pkt = TelemetryPacket(
                    subject_id=str(rec["subject_id"]), seq=int(rec["seq"]),
                    t=float(rec["t"]), hr=float(rec["hr_bpm"]),
                    br=float(rec["br_rpm"]), posture=float(rec["posture_deg"]),
                    movement=float(rec["movement_g"]),
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ParseError(f"{path}:{line_no}: bad packet ({exc})") from None
            if pkt.subject_id in last_seq and pkt.seq <= last_seq[pkt.subject_id]:
                raise ValidationError(
                    f"{path}:{line_no}: sequence numbers must strictly increase "
                    f"per subject ({pkt.subject_id})"
                )
            if pkt.t < last_t:
                raise ValidationError(f"{path}:{line_no}: timestamps must be non-decreasing")
            last_seq[pkt.subject_id] = pkt.seq
            last_t = pkt.t
            packets.append(pkt)
    return packets


def choose_drops(n_packets: int, loss_rate: float, seed: int) -> set[int]:
    """Deterministic packet-index drop set; same seed drops the same packets."""
    if not (0.0 <= loss_rate < 1.0):
        raise ValidationError(f"loss rate must be in [0, 1), got {loss_rate}")
    if loss_rate == 0.0:
        return set()
    rng = np.random.default_rng(seed)
    return {i for i in range(n_packets) if rng.random() < loss_rate}


class Session:
    """A replayable session directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        missing = []
        meta_path = self.directory / "session.json"
        if not meta_path.exists():
            missing.append("session.json")
        packets_path = self.directory / "packets.jsonl"
        if not packets_path.exists():
            missing.append("packets.jsonl")
        if missing:
            raise SessionError(f"{self.directory}: missing session assets: {missing}")
        self.meta = json.loads(meta_path.read_text(encoding="utf-8"))
        model_path = self.directory / self.meta.get("model", "fusion.ckpt")
        if not model_path.exists():
            missing.append(str(model_path.name))
        self.persons = {int(p["person_id"]): p["subject_id"]
                        for p in self.meta.get("persons", [])}
        clip_dirs = {}
        for pid in self.persons:
            clip_dir = self.directory / "clips" / f"person_{pid:03d}"
            if not clip_dir.exists():
                missing.append(f"clips/person_{pid:03d}")
            clip_dirs[pid] = clip_dir
        if missing:
            raise SessionError(f"{self.directory}: missing session assets: {missing}")

        self.packets = load_packets(packets_path)
        self.model = FusionActionClassifier.load(model_path)
        self.clips = {pid: load_clip(d) for pid, d in clip_dirs.items()}
        self.subject_to_person = {s: p for p, s in self.persons.items()}
        self.rate_hz = float(self.meta.get("rate_hz", 1.0))
        self.window_timesteps = int(self.meta.get("window_timesteps", 32))


class SlidingWindowPredictor:
    """Keeps per-person sensor windows and emits pending decisions.

    A new decision is created whenever a person's window is full and that
    person has no unresolved pending decision, so the operator queue holds at
    most one open item per person.
    """

    def __init__(self, session: Session, store: DecisionStore,
                 severity_table: dict[str, str] | None = None):
        self.session = session
        self.store = store
        self.severity_table = severity_table
        self.windows: dict[int, list[np.ndarray]] = {p: [] for p in session.persons}
        self.window_t: dict[int, float] = {}

    def feed(self, packet: TelemetryPacket) -> TriageDecision | None:
        person = self.session.subject_to_person.get(packet.subject_id)
        if person is None:
            return None
        window = self.windows[person]
        window.append(packet.values())
        needed = self.session.window_timesteps
        if len(window) > needed:
            del window[: len(window) - needed]
        if len(window) < needed:
            return None
        if self.store.has_pending_for_person(person):
            return None
        return self._predict(person, packet)

    def _predict(self, person: int, packet: TelemetryPacket) -> TriageDecision | None:
        series = VitalSignSeries(
            samples=np.stack(self.windows[person]),
            rate_hz=self.session.rate_hz,
            label="", subject_id=packet.subject_id,
        )
        sample = FusionSample(clip=self.session.clips[person], sensors=series, label="")
        prediction = self.session.model.predict([sample])[0]
        decision = TriageDecision(
            decision_id=f"d-p{person:03d}-s{packet.seq:06d}",
            person_id=person,
            action=prediction.label,
            severity=severity_for_action(prediction.label, self.severity_table),
            probabilities={
                label: float(p)
                for label, p in zip(ACTION_LABELS, prediction.probabilities)
            },
        )
        return self.store.create_pending(decision)


@dataclass
class ReplayEvent:
    delay: float          # seconds to wait before this packet, already speed-scaled
    packet: TelemetryPacket
    dropped: bool
    index: int


def replay_schedule(session: Session, speed: float = 1.0, loss_rate: float = 0.0,
                    seed: int = 0) -> list[ReplayEvent]:
    """Speed-scaled emission plan over the session's packets."""
    if speed <= 0:
        raise ValidationError(f"speed factor must be > 0, got {speed}")
    drops = choose_drops(len(session.packets), loss_rate, seed)
    events = []
    prev_t = session.packets[0].t if session.packets else 0.0
    for i, pkt in enumerate(session.packets):
        delay = max(0.0, (pkt.t - prev_t) / speed)
        prev_t = pkt.t
        events.append(ReplayEvent(delay=delay, packet=pkt, dropped=i in drops, index=i))
    return events
