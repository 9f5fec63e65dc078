from .decisions import (
    CONFIRMED,
    OVERRIDDEN,
    PENDING,
    DecisionConflictError,
    DecisionLog,
    DecisionStore,
    TriageDecision,
    UnknownDecisionError,
)
from .records import (
    ACTION_SEVERITY,
    SCHEMA_VERSION,
    SEVERITIES,
    ack_record,
    clip_ref_record,
    encode,
    error_record,
    parse_client_message,
    prediction_record,
    severity_for_action,
    snapshot_record,
    telemetry_record,
)
from .replay import (
    ReplayEvent,
    Session,
    SessionError,
    SlidingWindowPredictor,
    TelemetryPacket,
    build_packets,
    choose_drops,
    load_packets,
    replay_schedule,
    write_packets,
)
from .server import GatewayApp, create_app, serve

__all__ = [
    "CONFIRMED", "OVERRIDDEN", "PENDING", "DecisionConflictError", "DecisionLog",
    "DecisionStore", "TriageDecision", "UnknownDecisionError", "ACTION_SEVERITY",
    "SCHEMA_VERSION", "SEVERITIES", "ack_record", "clip_ref_record", "encode",
    "error_record", "parse_client_message", "prediction_record",
    "severity_for_action", "snapshot_record", "telemetry_record", "ReplayEvent",
    "Session", "SessionError", "SlidingWindowPredictor", "TelemetryPacket",
    "build_packets", "choose_drops", "load_packets", "replay_schedule",
    "write_packets", "GatewayApp", "create_app", "serve",
]
