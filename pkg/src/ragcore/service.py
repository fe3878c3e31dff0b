"""HTTP surface: chat, traces, ingest, evaluation, and gateway endpoints.

All responses are JSON. Failures map to 4xx/5xx bodies of the form
{"error_code": ..., "message": ...}. The principal is asserted in the
request body; production deployments are expected to hook real
authentication in front (see docs/api.md).
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Header, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import errors
from .engine import RagEngine
from .evals import EvalCase, GridSpec, load_suite
from .gateway import ChatRequest
from .index import Principal
from .ingest import Sensitivity

ERROR_STATUS = [
    (errors.NotFound, 404, "not_found"),
    (errors.Unauthorized, 403, "unauthorized"),
    (errors.UnknownModel, 404, "unknown_model"),
    (errors.UnknownSubscription, 404, "unknown_subscription"),
    (errors.QuotaExceeded, 429, "quota_exceeded"),
    (errors.RateLimited, 429, "rate_limited"),
    (errors.ProviderTimeout, 504, "provider_timeout"),
    (errors.ProviderError, 502, "provider_error"),
    (errors.SuiteMismatch, 400, "suite_mismatch"),
    (errors.EmptySuite, 400, "empty_suite"),
    (errors.UnknownTemplate, 400, "unknown_template"),
    (errors.UnsupportedFormat, 400, "unsupported_format"),
    (errors.EmptyAcl, 400, "empty_acl"),
    (errors.ConfigInvalid, 400, "config_invalid"),
]


class UserModel(BaseModel):
    id: str
    groups: list[str] = Field(default_factory=list)
    clearance: str = "internal"

    def principal(self) -> Principal:
        return Principal(
            user_id=self.id,
            groups=frozenset(self.groups),
            clearance=Sensitivity.parse(self.clearance),
        )


class TurnModel(BaseModel):
    role: str
    text: str


class ChatBody(BaseModel):
    user: UserModel
    message: str
    bot_id: str | None = None
    history: list[TurnModel] = Field(default_factory=list)


class IngestBody(BaseModel):
    corpus_id: str
    path: str | None = None
    jsonl: str | None = None


class EvalBody(BaseModel):
    corpus_id: str
    suite_path: str | None = None
    cases: list[dict] | None = None
    pipeline: dict | None = None


class GridSearchBody(BaseModel):
    corpus_id: str
    grid: dict
    suite_path: str | None = None
    cases: list[dict] | None = None


class GatewayChatBody(BaseModel):
    subscription_id: str
    model_id: str
    messages: list[TurnModel]
    max_tokens: int = 1024


class FeedbackBody(BaseModel):
    trace_id: str
    rating: str
    comment: str = ""


def _load_cases(body) -> list[EvalCase]:
    if body.cases is not None:
        return [EvalCase.from_json(c) for c in body.cases]
    if body.suite_path:
        return load_suite(body.suite_path)
    raise errors.EmptySuite("provide either cases or suite_path")


def create_app(engine: RagEngine, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="ragcore", version="0.1.0")

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"error_code": "bad_request", "message": str(exc.errors()[:3])},
        )

    @app.exception_handler(errors.RagCoreError)
    async def _engine_error(request: Request, exc: errors.RagCoreError):
        for exc_type, status, code in ERROR_STATUS:
            if isinstance(exc, exc_type):
                return JSONResponse(
                    status_code=status,
                    content={"error_code": code, "message": str(exc)},
                )
        return JSONResponse(
            status_code=500,
            content={"error_code": "internal", "message": str(exc)},
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/v1/bots")
    def list_bots():
        return {
            "default_bot_id": engine.config.default_bot_id,
            "bots": [
                {
                    "bot_id": b.bot_id,
                    "display_name": b.display_name,
                    "corpus_id": b.corpus_id,
                    "keyword_terms": sorted(b.keyword_terms),
                }
                for b in engine.config.bots.values()
            ],
        }

    @app.post("/v1/ingest")
    def ingest(body: IngestBody):
        return engine.ingest_corpus(
            body.corpus_id, manifest_path=body.path, jsonl_text=body.jsonl,
        )

    @app.post("/v1/chat")
    def chat(body: ChatBody):
        answer, trace = engine.chat(
            principal=body.user.principal(),
            message=body.message,
            bot_id=body.bot_id,
            history=tuple((t.role, t.text) for t in body.history),
        )
        return {
            "answer": answer.text,
            "citations": [c.__dict__ for c in answer.citations],
            "blocked": answer.blocked,
            "block_reason": answer.block_reason,
            "trace_id": answer.trace_id,
        }

    @app.get("/v1/traces/{trace_id}")
    def get_trace(trace_id: str):
        return engine.traces.get(trace_id).to_json()

    @app.post("/v1/eval/run")
    def eval_run(body: EvalBody):
        report = engine.run_eval(body.corpus_id, _load_cases(body), body.pipeline)
        return report.to_json()

    @app.post("/v1/eval/gridsearch")
    def eval_gridsearch(body: GridSearchBody):
        results = engine.run_grid_search(
            body.corpus_id, GridSpec.from_dict(body.grid), _load_cases(body),
        )
        return {
            "results": [
                {
                    "params": p.params,
                    "config": p.config,
                    "objective_value": p.objective_value,
                    "aggregates": p.report.aggregates if p.report else None,
                    "error": p.error,
                }
                for p in results
            ]
        }

    @app.post("/v1/gateway/chat")
    def gateway_chat(body: GatewayChatBody):
        response = engine.gateway.chat(ChatRequest(
            subscription_id=body.subscription_id,
            model_id=body.model_id,
            messages=tuple((m.role, m.text) for m in body.messages),
            max_tokens=body.max_tokens,
        ))
        return {
            "text": response.text,
            "prompt_tokens": response.prompt_tokens,
            "completion_tokens": response.completion_tokens,
            "provider_latency_ms": response.provider_latency_ms,
        }

    @app.get("/v1/gateway/usage")
    def gateway_usage(subscription_id: str, since: str | None = None,
                      until: str | None = None):
        report = engine.gateway.usage_report(subscription_id, since=since, until=until)
        return {
            "subscription_id": report["subscription_id"],
            "total_cost": str(report["total_cost"]),
            "total_requests": report["total_requests"],
            "per_model": {
                model: {"cost": str(entry["cost"]), "requests": entry["requests"]}
                for model, entry in report["per_model"].items()
            },
        }

    @app.get("/v1/gateway/audit")
    def gateway_audit(subscription_id: str | None = None, model_id: str | None = None,
                      since: str | None = None, until: str | None = None,
                      x_role: str = Header(default="")):
        records = engine.gateway.audit_query(
            caller_role=x_role, subscription_id=subscription_id,
            model_id=model_id, since=since, until=until,
        )
        return {"records": [r.to_json() for r in records]}

    @app.post("/v1/feedback")
    def feedback(body: FeedbackBody):
        try:
            entry = engine.record_feedback(body.trace_id, body.rating, body.comment)
        except ValueError as e:
            return JSONResponse(
                status_code=400,
                content={"error_code": "bad_request", "message": str(e)},
            )
        return {"acknowledged": True, **entry}

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
