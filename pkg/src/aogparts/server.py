"""HTTP surface of one live annotation session.

A single session runs behind the endpoints; reads are concurrent, mutation is
serialized, and at most one question is in flight at a time:

    GET  /session/state   pools, budget, known templates
    GET  /question/next   the pending (or next) question plus image bytes
    POST /answer          apply one answer (409 without a pending question,
                          422 when the payload violates the answer contract)
    GET  /model           current model file
"""

from __future__ import annotations

import base64
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import HTMLResponse, Response
from pydantic import BaseModel

from .errors import MissingBbox, PoolExhausted, QaError, UnknownTemplate
from .model import save_model
from .qa import Answer, QaSession, Question, apply_answer, select_question


class AnswerPayload(BaseModel):
    kind: int
    bbox: list[float] | None = None
    template_id: str | None = None
    flipped: bool = False
    new_template: str | None = None

    def to_answer(self) -> Answer:
        bbox = tuple(self.bbox) if self.bbox is not None else None
        if bbox is not None and len(bbox) != 4:
            raise MissingBbox("bbox must be [cx, cy, w, h]")
        return Answer(
            kind=self.kind,
            bbox=bbox,
            template_id=self.template_id,
            flipped=self.flipped,
            new_template=self.new_template,
        )


def make_app(
    session: QaSession,
    images_dir: str | None = None,
    ui_dir: str | None = None,
) -> FastAPI:
    app = FastAPI(title="aogparts annotation session")
    lock = threading.Lock()
    state = {"pending": None}

    def remaining_budget() -> int:
        return max(session.qa_cfg.budget - session.questions_asked, 0)

    def image_payload(image_id: str) -> str | None:
        if images_dir is None:
            return None
        for ext in ("png", "jpg", "jpeg"):
            path = Path(images_dir) / f"{image_id}.{ext}"
            if path.exists():
                return base64.b64encode(path.read_bytes()).decode("ascii")
        return None

    @app.get("/session/state")
    def session_state():
        with lock:
            return {
                "part_name": session.model.part_name,
                "annotated": sorted(session.annotated_ids),
                "unannotated": sorted(session.unannotated_ids),
                "absent": sorted(session.corpus.absent_ids),
                "questions_asked": session.questions_asked,
                "remaining_budget": remaining_budget(),
                "templates": [
                    {"id": t.id, "name": t.name} for t in session.model.templates
                ],
                "answer_log": list(session.answer_log),
                "pending_question": (
                    state["pending"].to_dict() if state["pending"] else None
                ),
            }

    @app.get("/question/next")
    def question_next():
        with lock:
            if state["pending"] is None:
                if remaining_budget() <= 0:
                    raise HTTPException(409, "question budget exhausted")
                try:
                    state["pending"] = select_question(session)
                except PoolExhausted as exc:
                    raise HTTPException(409, str(exc)) from exc
            question: Question = state["pending"]
            doc = question.to_dict()
            doc["remaining_budget"] = remaining_budget()
            doc["image_data"] = image_payload(question.image_id)
            return doc

    @app.post("/answer")
    def post_answer(payload: AnswerPayload):
        with lock:
            if state["pending"] is None:
                raise HTTPException(409, "no pending question")
            try:
                answer = payload.to_answer()
                apply_answer(session, state["pending"], answer)
            except (MissingBbox, UnknownTemplate) as exc:
                raise HTTPException(422, str(exc)) from exc
            except QaError as exc:
                raise HTTPException(422, str(exc)) from exc
            session.questions_asked += 1
            state["pending"] = None
            return {
                "ok": True,
                "questions_asked": session.questions_asked,
                "remaining_budget": remaining_budget(),
            }

    @app.get("/model")
    def get_model():
        with lock:
            return Response(save_model(session.model), media_type="application/json")

    if ui_dir is not None:

        @app.get("/")
        def index():
            return HTMLResponse((Path(ui_dir) / "index.html").read_text())

        @app.get("/js/{name}")
        def script(name: str):
            path = Path(ui_dir) / "js" / name
            if not path.exists() or not name.endswith(".js"):
                raise HTTPException(404, "not found")
            return Response(path.read_text(), media_type="text/javascript")

    return app


def serve_session(
    session: QaSession,
    port: int,
    images_dir: str | None = None,
    ui_dir: str | None = None,
    host: str = "127.0.0.1",
):
    """Run the session endpoint until interrupted."""
    import uvicorn

    app = make_app(session, images_dir=images_dir, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
