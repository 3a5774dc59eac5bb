"""HTTP facade over triage and the manifest for the human review loop.

Endpoints (JSON unless noted):

    GET  /api/rounds                     rounds with flagged/reviewed counts
    GET  /api/queue?round=R&kind=K       unreviewed QueueItems for a round
    GET  /api/sample/{id}/image          PNG bytes, id-scoped (never raw paths)
    POST /api/verdict                    apply one verdict (optimistic version)
    GET  /api/stats?round=R              live round stats + progress

All manifest mutations go through one writer lock and each verdict is
persisted atomically before the response, so successful verdicts survive a
service restart. Errors come back as {code, message, sample_id?}.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, Query
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from .errors import BudgetError, TriageError, VersionConflict, WorkbenchError
from .manifest import load_manifest, save_manifest
from .triage import (ReviewVerdict, TriageSelection, apply_verdicts,
                     compute_round_stats, load_triage_ledger, triage_ledger_path)


class VerdictBody(BaseModel):
    sample_id: str
    action: str
    expected_version: int
    new_label: str | None = None
    reviewer: str = "reviewer"
    round: int | None = None


def _error(status: int, code: str, message: str, sample_id: str | None = None) -> JSONResponse:
    body = {"code": code, "message": message}
    if sample_id is not None:
        body["sample_id"] = sample_id
    return JSONResponse(status_code=status, content=body)


class ReviewState:
    """Mutable service state: the live manifest plus per-round selections."""

    def __init__(self, manifest_path: Path, images_root: Path, triage_path: Path):
        self.manifest_path = manifest_path
        self.images_root = images_root
        self.triage_path = triage_path
        self.manifest = load_manifest(manifest_path)
        self.selections: dict[int, TriageSelection] = load_triage_ledger(triage_path)
        self.lock = threading.Lock()

    def selection(self, round_index: int) -> TriageSelection | None:
        # Pick up selections written after startup (the CLI may flag new rounds).
        if round_index not in self.selections:
            self.selections = load_triage_ledger(self.triage_path)
        return self.selections.get(round_index)

    def queue_items(self, selection: TriageSelection, kind: str | None) -> list[dict]:
        items = []
        blocks = []
        # Suspect tail first (descending loss), then confident head (ascending).
        if kind in (None, "suspect_tail"):
            tail = sorted(selection.tail_ids,
                          key=lambda s: (-selection.losses.get(s, 0.0), s))
            blocks.append(("suspect_tail", tail))
        if kind in (None, "confident_head"):
            head = sorted(selection.head_ids,
                          key=lambda s: (selection.losses.get(s, 0.0), s))
            blocks.append(("confident_head", head))
        for flag_kind, ids in blocks:
            for sid in ids:
                record = self.manifest.get(sid)
                if record.status != "unverified":
                    continue  # already verdicted
                items.append({
                    "sample_id": sid,
                    "image_url": f"/api/sample/{sid}/image",
                    "label": record.label,
                    "suggested_label": record.suggested_label,
                    "loss": selection.losses.get(sid),
                    "flag_kind": flag_kind,
                    "round": selection.round,
                    "version": record.version,
                })
        return items


def create_app(manifest_path: str | Path, images_root: str | Path | None = None,
               triage_path: str | Path | None = None) -> FastAPI:
    manifest_path = Path(manifest_path)
    images_root = Path(images_root) if images_root else manifest_path.parent
    triage_path = Path(triage_path) if triage_path else triage_ledger_path(manifest_path)
    state = ReviewState(manifest_path, images_root, triage_path)
    app = FastAPI(title="dataworkbench review service")
    app.state.review = state

    @app.get("/api/rounds")
    def rounds():
        state.selections = load_triage_ledger(state.triage_path)
        out = []
        for round_index in sorted(state.selections):
            selection = state.selections[round_index]
            stats = compute_round_stats(state.manifest, selection)
            out.append({"round": round_index, "flagged": stats["total"],
                        "reviewed": stats["reviewed"]})
        return {"rounds": out, "classes": state.manifest.classes}

    @app.get("/api/queue")
    def queue(round: int = Query(...), kind: str | None = Query(default=None)):
        if kind not in (None, "confident_head", "suspect_tail"):
            return _error(400, "bad_kind", f"unknown flag kind {kind!r}")
        selection = state.selection(round)
        if selection is None:
            return _error(404, "unknown_round", f"no triage selection for round {round}")
        return state.queue_items(selection, kind)

    @app.get("/api/sample/{sample_id}/image")
    def sample_image(sample_id: str):
        try:
            record = state.manifest.get(sample_id)
        except WorkbenchError as exc:
            return _error(404, "unknown_sample", str(exc), sample_id)
        path = (state.images_root / record.image_path).resolve()
        try:
            path.relative_to(state.images_root.resolve())
        except ValueError:
            return _error(404, "unknown_sample", "image path escapes the images root",
                          sample_id)
        if not path.exists():
            return _error(404, "missing_image", f"no image for {sample_id}", sample_id)
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.post("/api/verdict")
    def verdict(body: VerdictBody):
        with state.lock:
            try:
                record = state.manifest.get(body.sample_id)
            except WorkbenchError as exc:
                return _error(404, "unknown_sample", str(exc), body.sample_id)
            round_index = body.round if body.round is not None else record.round
            if round_index is None:
                return _error(400, "not_flagged",
                              f"sample {body.sample_id} is not flagged in any round",
                              body.sample_id)
            try:
                v = ReviewVerdict(sample_id=body.sample_id, action=body.action,
                                  round=round_index, new_label=body.new_label,
                                  reviewer=body.reviewer,
                                  expected_version=body.expected_version)
                updated = apply_verdicts(state.manifest, [v])
            except VersionConflict as exc:
                return _error(409, "version_conflict", str(exc), body.sample_id)
            except BudgetError as exc:
                return _error(409, "budget_exceeded", str(exc), body.sample_id)
            except (TriageError, WorkbenchError) as exc:
                return _error(400, "invalid_verdict", str(exc), body.sample_id)
            save_manifest(updated, state.manifest_path)  # durable before replying
            state.manifest = updated
            new_record = updated.get(body.sample_id)
            return {"sample_id": body.sample_id, "status": new_record.status,
                    "label": new_record.label, "version": new_record.version,
                    "round": round_index}

    @app.get("/api/stats")
    def stats(round: int = Query(...)):
        selection = state.selection(round)
        if selection is None:
            return _error(404, "unknown_round", f"no triage selection for round {round}")
        return compute_round_stats(state.manifest, selection)

    return app


def serve(manifest_path: str | Path, port: int = 8000, host: str = "127.0.0.1",
          images_root: str | Path | None = None,
          triage_path: str | Path | None = None) -> None:
    import uvicorn

    app = create_app(manifest_path, images_root=images_root, triage_path=triage_path)
    uvicorn.run(app, host=host, port=port, log_level="info")
