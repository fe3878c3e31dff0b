"""Switchboard routing and multi-part query orchestration.

A registry of bots covers different corpora; keyword routing picks the
bot for an unaddressed query. Complex queries are decomposed into
sub-questions by a model call, answered one by one through the regular
pipeline, and aggregated by a final model call. Sub-answer citations
carry through to the final answer, de-duplicated by chunk.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Callable

from .errors import ConfigInvalid, GatewayError
from .gateway import ChatRequest, Gateway
from .guardrails import DEFAULT_FAILURE, GuardrailPolicy, redact_output
from .pipeline import (
    Answer,
    Citation,
    Pipeline,
    PipelineConfig,
    QueryContext,
    render_history,
)
from .pipeline import _StageRecorder  # same stage record shape as the pipeline
from .templates import TemplateStore
from .tokens import tokenize
from .traces import StageRecord, Trace, TraceStore, canonical_digest

MAX_SUB_QUERIES = 8
SUBQ_PREFIX = "SUBQ:"


@dataclass(frozen=True)
class BotSpec:
    bot_id: str
    display_name: str
    keyword_terms: frozenset[str]
    corpus_id: str
    pipeline_cfg: PipelineConfig


@dataclass(frozen=True)
class DecompositionPlan:
    kind: str  # simple | multi_part
    sub_queries: tuple[str, ...] = ()
    dropped: int = 0


def route(query: str, bots: list[BotSpec], default_bot_id: str) -> str:
    """Pick the bot sharing the most keyword terms with the query.

    No overlap at all falls back to the default bot; score ties go to
    the lexicographically smaller bot_id.
    """
    qtokens = set(tokenize(query))
    best_id = None
    best_score = 0
    for bot in sorted(bots, key=lambda b: b.bot_id):
        score = len(qtokens & bot.keyword_terms)
        if score > best_score:
            best_id, best_score = bot.bot_id, score
    return best_id if best_id is not None else default_bot_id


def parse_decomposition(response_text: str) -> DecompositionPlan:
    """Plan from a decomposition response: 2+ SUBQ lines make it multi-part."""
    subs: list[str] = []
    for line in response_text.splitlines():
        stripped = line.strip()
        if stripped.startswith(SUBQ_PREFIX):
            sub = stripped[len(SUBQ_PREFIX):].strip()
            if sub:
                subs.append(sub)
    if len(subs) < 2:
        return DecompositionPlan(kind="simple")
    dropped = max(0, len(subs) - MAX_SUB_QUERIES)
    return DecompositionPlan(
        kind="multi_part", sub_queries=tuple(subs[:MAX_SUB_QUERIES]), dropped=dropped,
    )


class Orchestrator:
    """Runs a query against a chosen bot, decomposing it when needed."""

    def __init__(
        self,
        pipeline_for: Callable[[BotSpec], Pipeline],
        gateway: Gateway,
        policy: GuardrailPolicy,
        templates: TemplateStore | None = None,
        trace_store: TraceStore | None = None,
        failure_message: str = DEFAULT_FAILURE,
    ):
        self.pipeline_for = pipeline_for
        self.gateway = gateway
        self.policy = policy
        self.templates = templates if templates is not None else TemplateStore()
        self.trace_store = trace_store if trace_store is not None else TraceStore()
        self.failure_message = failure_message

    def decompose(self, ctx: QueryContext, query: str,
                  cfg: PipelineConfig) -> DecompositionPlan:
        """Ask the model for sub-questions; any failure means a simple plan."""
        prompt = self.templates.render(
            "DECOMPOSE", history=render_history(ctx.history), question=query,
        )
        try:
            response = self.gateway.chat(ChatRequest(
                subscription_id=ctx.bot_id or "default",
                model_id=cfg.model_id,
                messages=(("user", prompt),),
            ))
        except GatewayError:
            return DecompositionPlan(kind="simple")
        return parse_decomposition(response.text)

    def orchestrate(self, ctx: QueryContext, query: str,
                    bot: BotSpec) -> tuple[Answer, Trace]:
        """Answer through the bot, fanning out when the plan is multi-part.

        Simple plans delegate to the bot's pipeline; the routing decision
        is recorded as an extra leading stage on the pipeline's trace.
        """
        ctx = replace(ctx, bot_id=bot.bot_id)
        cfg = bot.pipeline_cfg
        pipeline = self.pipeline_for(bot)

        plan = self.decompose(ctx, query, cfg)
        if plan.kind == "simple":
            answer, trace = pipeline.answer(ctx, query, cfg)
            trace.stages.insert(0, _route_stage(bot, plan))
            self.trace_store.store(trace)
            return answer, trace

        trace = Trace(trace_id=uuid.uuid4().hex, request_id=ctx.request_id)
        recorder = _StageRecorder(trace)
        trace.stages.append(_route_stage(bot, plan))

        with recorder.stage("decompose", {"query": query}) as stage:
            stage.output({"sub_queries": list(plan.sub_queries)})
            stage.detail(kind=plan.kind, sub_queries=list(plan.sub_queries),
                         dropped=plan.dropped)

        sub_answers: list[tuple[str, Answer, Trace]] = []
        with recorder.stage("sub_answers", {"count": len(plan.sub_queries)}) as stage:
            children = []
            for i, sub_query in enumerate(plan.sub_queries, start=1):
                sub_ctx = replace(ctx, request_id=f"{ctx.request_id}/sub{i}")
                sub_answer, sub_trace = pipeline.answer(sub_ctx, sub_query, cfg)
                sub_answers.append((sub_query, sub_answer, sub_trace))
                children.append({
                    "sub_query": sub_query,
                    "trace_id": sub_trace.trace_id,
                    "answer_digest": canonical_digest(sub_answer.text),
                    "ok": _sub_answer_ok(sub_answer, sub_trace),
                })
            stage.output({"children": [c["trace_id"] for c in children]})
            stage.detail(children=children)

        successes = [
            (q, a) for (q, a, t) in sub_answers if _sub_answer_ok(a, t)
        ]
        aggregate_error: str | None = None
        final_text = self.failure_message
        with recorder.stage("aggregate", {"successes": len(successes)}) as stage:
            if not successes:
                aggregate_error = "no sub-query produced an answer"
                stage.output({"error": aggregate_error})
                stage.detail(outcome="error", error=aggregate_error)
            else:
                context = "\n\n".join(
                    f"[{i}] {q}\n{a.text}" for i, (q, a) in enumerate(successes, 1)
                )
                prompt = self.templates.render(
                    "AGGREGATE", system=pipeline.system_prompt,
                    history=render_history(ctx.history),
                    context=context, question=query,
                )
                try:
                    response = self.gateway.chat(ChatRequest(
                        subscription_id=ctx.bot_id or "default",
                        model_id=cfg.model_id,
                        messages=(("user", prompt),),
                    ))
                    final_text = response.text
                    stage.output({"completion": final_text})
                    stage.detail(outcome="ok", prompt_text=prompt)
                except GatewayError as e:
                    aggregate_error = str(e)
                    stage.output({"error": aggregate_error})
                    stage.detail(outcome="error", error=aggregate_error)

        with recorder.stage("cite", {"sub_answers": len(sub_answers)}) as stage:
            citations = _merge_citations(
                [a for (_, a, _) in sub_answers] if aggregate_error is None else []
            )
            stage.output({"citations": [c.chunk_id for c in citations]})
            stage.detail(citations=[c.__dict__ for c in citations])

        with recorder.stage("guardrail_out", {"length": len(final_text)}) as stage:
            redaction = redact_output(final_text, self.policy)
            final_text = redaction.text
            stage.output({"text": final_text})
            stage.detail(redactions=redaction.redactions, final_text=final_text)

        answer = Answer(
            text=final_text,
            citations=citations,
            trace_id=trace.trace_id,
            blocked=False,
        )
        self.trace_store.store(trace)
        return answer, trace


def _sub_answer_ok(answer: Answer, trace: Trace) -> bool:
    if answer.blocked:
        return False
    try:
        return trace.stage("generate").detail.get("outcome") == "ok"
    except KeyError:
        return False


def _merge_citations(answers: list[Answer]) -> list[Citation]:
    """De-duplicated union by chunk_id, renumbered in first-seen order."""
    merged: list[Citation] = []
    seen: set[str] = set()
    for answer in answers:
        for c in answer.citations:
            if c.chunk_id not in seen:
                seen.add(c.chunk_id)
                merged.append(Citation(
                    marker=len(merged) + 1, doc_id=c.doc_id, uri=c.uri,
                    chunk_id=c.chunk_id,
                ))
    return merged


def _route_stage(bot: BotSpec, plan: DecompositionPlan) -> StageRecord:
    return StageRecord(
        stage_name="route",
        started_at=datetime.now(timezone.utc).isoformat(),
        duration_ms=0.0,
        input_digest=canonical_digest({"bot_id": bot.bot_id}),
        output_digest=canonical_digest({"bot_id": bot.bot_id, "plan": plan.kind}),
        detail={"bot_id": bot.bot_id, "plan_kind": plan.kind},
    )


def load_bot_registry(path, default_cfg: PipelineConfig) -> dict[str, BotSpec]:
    """Read the JSON bot list; partial pipeline settings merge over defaults."""
    with open(path, encoding="utf-8") as f:
        entries = json.load(f)
    if not isinstance(entries, list):
        raise ConfigInvalid(f"{path}: bot registry must be a JSON list")
    bots: dict[str, BotSpec] = {}
    for i, entry in enumerate(entries):
        for required in ("bot_id", "corpus_id"):
            if required not in entry:
                raise ConfigInvalid(f"{path}: bots[{i}]: missing field {required!r}")
        bot_id = entry["bot_id"]
        if bot_id in bots:
            raise ConfigInvalid(f"{path}: bots[{i}]: duplicate bot_id {bot_id!r}")
        merged = default_cfg.to_dict()
        overrides = entry.get("pipeline", {})
        merged_chunking = {**merged["chunking"], **overrides.get("chunking", {})}
        merged.update({k: v for k, v in overrides.items() if k != "chunking"})
        merged["chunking"] = merged_chunking
        bots[bot_id] = BotSpec(
            bot_id=bot_id,
            display_name=entry.get("display_name", bot_id),
            keyword_terms=frozenset(t.lower() for t in entry.get("keyword_terms", [])),
            corpus_id=entry["corpus_id"],
            pipeline_cfg=PipelineConfig.from_dict(merged),
        )
    return bots
