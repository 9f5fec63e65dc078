"""Wire schema for the streaming gateway.

Every message is one JSON object per line (or per WebSocket text message)
with ``kind`` and ``schema_version`` fields. Server kinds: ``telemetry``,
``clip_ref``, ``prediction``, ``snapshot``, ``ack``, ``error``. Client kinds:
``confirm`` and ``override``.
"""

from __future__ import annotations

import json

from ..validation import ParseError

SCHEMA_VERSION = 1

SEVERITIES = ("low", "mild", "severe")

# default action-to-severity table; operator override is authoritative
ACTION_SEVERITY = {
    "running": "low",
    "crawling": "low",
    "limping": "mild",
    "arm_injury": "mild",
    "head_injury": "severe",
    "walk_collapse": "severe",
}


def severity_for_action(action: str, table: dict[str, str] | None = None) -> str:
    table = table or ACTION_SEVERITY
    if action not in table:
        raise ParseError(f"no severity mapping for action {action!r}")
    return table[action]


def _base(kind: str) -> dict:
    return {"kind": kind, "schema_version": SCHEMA_VERSION}


def telemetry_record(subject_id: str, seq: int, t: float, hr: float, br: float,
                     posture: float, movement: float) -> dict:
    rec = _base("telemetry")
    rec.update({"subject_id": subject_id, "seq": seq, "t": t, "hr_bpm": hr,
                "br_rpm": br, "posture_deg": posture, "movement_g": movement})
    return rec


def clip_ref_record(person_id: int, frame_index: int, uri: str,
                    heatmap_uri: str | None = None) -> dict:
    rec = _base("clip_ref")
    rec.update({"person_id": person_id, "frame_index": frame_index, "uri": uri,
                "heatmap_uri": heatmap_uri})
    return rec


def prediction_record(decision: dict) -> dict:
    rec = _base("prediction")
    rec.update(decision)
    return rec


def snapshot_record(persons: list[dict], decisions: list[dict]) -> dict:
    rec = _base("snapshot")
    rec.update({"persons": persons, "decisions": decisions})
    return rec


def ack_record(decision: dict) -> dict:
    rec = _base("ack")
    rec.update(decision)
    return rec


def error_record(code: str, message: str) -> dict:
    rec = _base("error")
    rec.update({"code": code, "message": message})
    return rec


def encode(record: dict) -> str:
    """One newline-terminated JSON line."""
    return json.dumps(record, separators=(",", ":")) + "\n"


def parse_client_message(text: str) -> dict:
    """Validate a confirm/override message from an operator client."""
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"client message is not valid JSON ({exc})") from None
    kind = msg.get("kind")
    if kind not in ("confirm", "override"):
        raise ParseError(f"unknown client message kind {kind!r}")
    if not isinstance(msg.get("decision_id"), str) or not msg["decision_id"]:
        raise ParseError("client message missing decision_id")
    if kind == "override":
        if msg.get("severity") not in SEVERITIES:
            raise ParseError(
                f"override requires severity in {SEVERITIES}, got {msg.get('severity')!r}"
            )
    return msg
