"""WebSocket gateway: replays a session to operator consoles.

One replay clock per server process; every connected client receives the
same stream. Client confirm/override messages are applied to the decision
store (durable before acknowledgment) and the updated decision is broadcast
to everyone. All outbound traffic for a client flows through one queue, so
message order is stable per connection.
"""

from __future__ import annotations

import asyncio
import contextlib
import json

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import FileResponse, PlainTextResponse, Response

from ..validation import ParseError
from .decisions import CONFIRMED, OVERRIDDEN, DecisionConflictError, DecisionStore, UnknownDecisionError
from .records import (
    ack_record,
    clip_ref_record,
    encode,
    error_record,
    parse_client_message,
    prediction_record,
    snapshot_record,
    telemetry_record,
)
from .replay import Session, SlidingWindowPredictor, replay_schedule


class GatewayApp:
    def __init__(self, session_dir, speed: float = 1.0, loss_rate: float = 0.0,
                 seed: int = 0, log_path=None, wait_for_client: bool = False):
        self.session = Session(session_dir)
        self.store = DecisionStore(log_path or self.session.directory / "decisions.log")
        self.speed = speed
        self.loss_rate = loss_rate
        self.seed = seed
        self.wait_for_client = wait_for_client
        self.clients: set[asyncio.Queue] = set()
        self.last_seq: dict[str, int] = {}
        self.replay_done = False
        self._replay_task = None

    # -- fan-out -------------------------------------------------------------

    def broadcast(self, record: dict) -> None:
        for queue in self.clients:
            queue.put_nowait(record)

    def _clip_refs(self) -> list[dict]:
        refs = []
        for pid in sorted(self.session.persons):
            last = self.session.clips[pid].length - 1
            refs.append(clip_ref_record(
                person_id=pid, frame_index=last,
                uri=f"/clips/{pid}/frame_{last:06d}.png",
            ))
        return refs

    def snapshot(self) -> dict:
        persons = []
        for pid in sorted(self.session.persons):
            persons.append({
                "person_id": pid,
                "subject_id": self.session.persons[pid],
                "last_seq": self.last_seq.get(self.session.persons[pid]),
            })
        decisions = [d.to_record() for d in self.store.all_decisions()]
        return snapshot_record(persons, decisions)

    # -- replay ---------------------------------------------------------------

    async def replay(self) -> None:
        while self.wait_for_client and not self.clients:
            await asyncio.sleep(0.01)
        predictor = SlidingWindowPredictor(self.session, self.store)
        for event in replay_schedule(self.session, self.speed, self.loss_rate, self.seed):
            if event.delay > 0:
                await asyncio.sleep(event.delay)
            if event.dropped:
                continue  # lost on the air link; sequence gap stays visible
            pkt = event.packet
            self.last_seq[pkt.subject_id] = pkt.seq
            self.broadcast(telemetry_record(
                pkt.subject_id, pkt.seq, pkt.t, pkt.hr, pkt.br, pkt.posture, pkt.movement,
            ))
            decision = predictor.feed(pkt)
            if decision is not None:
                self.broadcast(prediction_record(decision.to_record()))
        self.replay_done = True

    # -- operator messages -----------------------------------------------------

    def apply_client_message(self, text: str) -> tuple[dict, dict | None]:
        """Returns (reply-for-sender, broadcast-record-or-None)."""
        try:
            msg = parse_client_message(text)
        except ParseError as exc:
            return error_record("bad_message", str(exc)), None
        action = CONFIRMED if msg["kind"] == "confirm" else OVERRIDDEN
        try:
            decision = self.store.submit(msg["decision_id"], action, msg.get("severity"))
        except UnknownDecisionError:
            return error_record("not_found", f"unknown decision {msg['decision_id']!r}"), None
        except DecisionConflictError as exc:
            return error_record("conflict", str(exc)), None
        except ParseError as exc:
            return error_record("bad_message", str(exc)), None
        record = decision.to_record()
        return ack_record(record), prediction_record(record)


def create_app(session_dir, speed: float = 1.0, loss_rate: float = 0.0,
               seed: int = 0, log_path=None, wait_for_client: bool = False) -> FastAPI:
    gateway = GatewayApp(session_dir, speed=speed, loss_rate=loss_rate,
                         seed=seed, log_path=log_path, wait_for_client=wait_for_client)

    @contextlib.asynccontextmanager
    async def lifespan(app: FastAPI):
        gateway._replay_task = asyncio.create_task(gateway.replay())
        yield
        gateway._replay_task.cancel()
        with contextlib.suppress(asyncio.CancelledError):
            await gateway._replay_task
        gateway.store.close()

    app = FastAPI(title="triagekit gateway", lifespan=lifespan)
    app.state.gateway = gateway

    @app.get("/health")
    async def health():
        return {"status": "ok", "replay_done": gateway.replay_done,
                "persons": len(gateway.session.persons)}

    @app.get("/audit")
    async def audit():
        return Response(content=gateway.store.export_audit_bytes(),
                        media_type="application/x-ndjson")

    @app.get("/clips/{person_id}/{filename}")
    async def clip_frame(person_id: int, filename: str):
        directory = gateway.session.directory / "clips" / f"person_{person_id:03d}"
        path = (directory / filename).resolve()
        if directory.resolve() not in path.parents or not path.exists():
            return PlainTextResponse("not found", status_code=404)
        return FileResponse(path)

    @app.websocket("/ws")
    async def ws(websocket: WebSocket):
        await websocket.accept()
        queue: asyncio.Queue = asyncio.Queue()
        gateway.clients.add(queue)
        queue.put_nowait(gateway.snapshot())
        for ref in gateway._clip_refs():
            queue.put_nowait(ref)

        async def pump():
            while True:
                record = await queue.get()
                await websocket.send_text(encode(record))

        sender = asyncio.create_task(pump())
        try:
            while True:
                text = await websocket.receive_text()
                reply, broadcast = gateway.apply_client_message(text)
                queue.put_nowait(reply)
                if broadcast is not None:
                    for other in gateway.clients:
                        if other is not queue:
                            other.put_nowait(broadcast)
        except WebSocketDisconnect:
            pass
        finally:
            gateway.clients.discard(queue)
            sender.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await sender

    return app


def serve(session_dir, host: str = "127.0.0.1", port: int = 8765,
          speed: float = 1.0, loss_rate: float = 0.0, seed: int = 0,
          log_path=None, wait_for_client: bool = False) -> None:
    import uvicorn

    app = create_app(session_dir, speed=speed, loss_rate=loss_rate,
                     seed=seed, log_path=log_path, wait_for_client=wait_for_client)
    uvicorn.run(app, host=host, port=port, log_level="warning")
