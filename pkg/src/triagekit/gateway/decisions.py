"""Triage decision lifecycle and the append-only audit log.

A decision is born ``pending`` from a model prediction. Operators move it to
``confirmed`` or ``overridden``; no other transition exists. Every operator
submission is written to the audit log and fsynced before the caller gets an
acknowledgment, so acknowledged decisions survive a crash.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..validation import TriageKitError, ValidationError
from .records import SEVERITIES

PENDING, CONFIRMED, OVERRIDDEN = "pending", "confirmed", "overridden"


class UnknownDecisionError(TriageKitError, KeyError):
    """Submission referenced a decision id that does not exist."""


class DecisionConflictError(TriageKitError, RuntimeError):
    """Submission attempted an illegal state transition (e.g. double submit)."""


@dataclass
class TriageDecision:
    decision_id: str
    person_id: int
    action: str
    severity: str
    probabilities: dict[str, float]
    status: str = PENDING
    operator_severity: str | None = None
    created_at: float = field(default_factory=time.time)
    resolved_at: float | None = None

    def __post_init__(self):
        if self.severity not in SEVERITIES:
            raise ValidationError(f"severity must be one of {SEVERITIES}, got {self.severity!r}")
        if self.status == OVERRIDDEN and self.operator_severity not in SEVERITIES:
            raise ValidationError("an overridden decision must carry an operator severity")

    @property
    def effective_severity(self) -> str:
        return self.operator_severity if self.status == OVERRIDDEN else self.severity

    def to_record(self) -> dict:
        return asdict(self)


class DecisionLog:
    """Append-only JSONL file; every append is flushed and fsynced."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    def read_all(self) -> list[dict]:
        if not self.path.exists():
            return []
        records = []
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return records

    def export_bytes(self) -> bytes:
        return self.path.read_bytes() if self.path.exists() else b""


class DecisionStore:
    """Single-writer decision registry backed by a DecisionLog.

    Construction replays the log, so a store that restarts after a crash
    knows every decision that was ever acknowledged.
    """

    def __init__(self, log_path):
        self.log = DecisionLog(log_path)
        self.pending: dict[str, TriageDecision] = {}
        self.resolved: dict[str, TriageDecision] = {}
        for record in self.log.read_all():
            decision = TriageDecision(**record)
            self.resolved[decision.decision_id] = decision

    def create_pending(self, decision: TriageDecision) -> TriageDecision | None:
        """Register a fresh pending decision.

        Returns None (and registers nothing) when the id was already resolved
        in a previous life of this store; raises on a live duplicate.
        """
        if decision.decision_id in self.resolved:
            return None
        if decision.decision_id in self.pending:
            raise ValidationError(f"duplicate decision id {decision.decision_id!r}")
        if decision.status != PENDING:
            raise ValidationError("new decisions must start pending")
        self.pending[decision.decision_id] = decision
        return decision

    def get(self, decision_id: str) -> TriageDecision:
        if decision_id in self.pending:
            return self.pending[decision_id]
        if decision_id in self.resolved:
            return self.resolved[decision_id]
        raise UnknownDecisionError(decision_id)

    def submit(self, decision_id: str, action: str,
               severity: str | None = None) -> TriageDecision:
        """Apply an operator confirm/override; durable before returning."""
        if decision_id in self.resolved:
            raise DecisionConflictError(
                f"decision {decision_id!r} already {self.resolved[decision_id].status}"
            )
        if decision_id not in self.pending:
            raise UnknownDecisionError(decision_id)
        if action not in (CONFIRMED, OVERRIDDEN):
            raise ValidationError(f"operator action must be confirm or override, got {action!r}")
        decision = self.pending[decision_id]
        decision.status = action
        decision.resolved_at = time.time()
        if action == OVERRIDDEN:
            if severity not in SEVERITIES:
                raise ValidationError(f"override needs a severity from {SEVERITIES}")
            decision.operator_severity = severity
        self.log.append(decision.to_record())
        del self.pending[decision_id]
        self.resolved[decision_id] = decision
        return decision

    def export_audit_log(self) -> list[dict]:
        """Operator decision records in submission order."""
        return self.log.read_all()

    def export_audit_bytes(self) -> bytes:
        return self.log.export_bytes()

    def all_decisions(self) -> list[TriageDecision]:
        return list(self.resolved.values()) + list(self.pending.values())

    def has_pending_for_person(self, person_id: int) -> bool:
        return any(d.person_id == person_id for d in self.pending.values())

    def close(self) -> None:
        self.log.close()
