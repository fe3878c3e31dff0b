"""The end-to-end answer flow.

Eight stages run for every non-blocked query:

    guardrail_in -> rephrase -> retrieve -> rerank -> assemble_prompt
    -> generate -> cite -> guardrail_out

Each stage appends one record to the request trace. A blocked input
short-circuits after guardrail_in. Gateway failures never escape:
rephrasing falls back to the original query, and generation failures
produce a fixed failure answer with the error visible in the trace.
"""

from __future__ import annotations

import re
import time
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

from .errors import ConfigInvalid, GatewayError
from .gateway import ChatRequest, Gateway
from .guardrails import (
    DEFAULT_FAILURE,
    GuardrailPolicy,
    check_input,
    filter_sensitive_hits,
    redact_output,
)
from .index import HybridIndex, Principal, ScoredHit
from .ingest import ChunkingConfig
from .templates import TemplateStore
from .tokens import STOPWORDS, count_tokens, tokenize
from .traces import StageRecord, Trace, TraceStore, canonical_digest

FUSION_MODES = ("lexical", "vector", "rrf")
RERANK_MODES = ("none", "lexical_overlap")

DEFAULT_SYSTEM = "You are an enterprise assistant answering from internal documentation."
NO_CONTEXT = "NO CONTEXT"
FALLBACK_CITATIONS = 3

_MARKER_RE = re.compile(r"\[(\d+)\]")


@dataclass(frozen=True)
class PipelineConfig:
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    fusion: str = "rrf"
    rerank: str = "lexical_overlap"
    top_k: int = 5
    context_token_budget: int = 600
    prompt_template_id: str = "ANSWER"
    model_id: str = "demo-echo"
    rephrase_enabled: bool = True

    def validate(self) -> None:
        self.chunking.validate()
        if self.fusion not in FUSION_MODES:
            raise ConfigInvalid(f"unknown fusion mode: {self.fusion!r}")
        if self.rerank not in RERANK_MODES:
            raise ConfigInvalid(f"unknown rerank strategy: {self.rerank!r}")
        if self.top_k < 1:
            raise ConfigInvalid(f"top_k must be >= 1, got {self.top_k}")
        if self.context_token_budget <= 0:
            raise ConfigInvalid(
                f"context_token_budget must be > 0, got {self.context_token_budget}"
            )

    def to_dict(self) -> dict:
        return {
            "chunking": {
                "chunk_tokens": self.chunking.chunk_tokens,
                "overlap_tokens": self.chunking.overlap_tokens,
                "mode": self.chunking.mode,
                "prepend_section_path": self.chunking.prepend_section_path,
            },
            "fusion": self.fusion,
            "rerank": self.rerank,
            "top_k": self.top_k,
            "context_token_budget": self.context_token_budget,
            "prompt_template_id": self.prompt_template_id,
            "model_id": self.model_id,
            "rephrase_enabled": self.rephrase_enabled,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        chunking = data.get("chunking", {})
        cfg = cls(
            chunking=ChunkingConfig(
                chunk_tokens=int(chunking.get("chunk_tokens", 96)),
                overlap_tokens=int(chunking.get("overlap_tokens", 16)),
                mode=chunking.get("mode", "sliding"),
                prepend_section_path=bool(chunking.get("prepend_section_path", False)),
            ),
            fusion=data.get("fusion", "rrf"),
            rerank=data.get("rerank", "lexical_overlap"),
            top_k=int(data.get("top_k", 5)),
            context_token_budget=int(data.get("context_token_budget", 600)),
            prompt_template_id=data.get("prompt_template_id", "ANSWER"),
            model_id=data.get("model_id", "demo-echo"),
            rephrase_enabled=bool(data.get("rephrase_enabled", True)),
        )
        cfg.validate()
        return cfg

    def with_overrides(self, **params) -> "PipelineConfig":
        """Apply grid-search axis values; chunking axes reach into chunking."""
        chunking = self.chunking
        chunk_kwargs = {}
        for key in ("chunk_tokens", "overlap_tokens"):
            if key in params:
                chunk_kwargs[key] = int(params.pop(key))
        if chunk_kwargs:
            chunking = replace(chunking, **chunk_kwargs)
        cfg = replace(self, chunking=chunking, **params)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class QueryContext:
    principal: Principal
    bot_id: str = "default"
    history: tuple[tuple[str, str], ...] = ()
    request_id: str = ""


@dataclass(frozen=True)
class Citation:
    marker: int
    doc_id: str
    uri: str
    chunk_id: str


@dataclass
class Answer:
    text: str
    citations: list[Citation]
    trace_id: str
    blocked: bool = False
    block_reason: str | None = None


@dataclass
class AssembledPrompt:
    prompt_text: str
    included_hits: list[ScoredHit]
    prompt_tokens: int
    overflow: bool


def render_history(history) -> str:
    if not history:
        return "(none)"
    return "\n".join(f"{role}: {text}" for role, text in history)


class Pipeline:
    """Binds one index to the gateway, guardrails, templates, and traces."""

    def __init__(
        self,
        index: HybridIndex,
        gateway: Gateway,
        policy: GuardrailPolicy,
        templates: TemplateStore | None = None,
        trace_store: TraceStore | None = None,
        system_prompt: str = DEFAULT_SYSTEM,
        failure_message: str = DEFAULT_FAILURE,
    ):
        self.index = index
        self.gateway = gateway
        self.policy = policy
        self.templates = templates if templates is not None else TemplateStore()
        self.trace_store = trace_store if trace_store is not None else TraceStore()
        self.system_prompt = system_prompt
        self.failure_message = failure_message

    # -- individual stages --------------------------------------------------

    def rephrase_query(self, ctx: QueryContext, query: str,
                       cfg: PipelineConfig) -> tuple[str, str, bool]:
        """Return (original, rephrased, fell_back). Never raises."""
        if not cfg.rephrase_enabled:
            return query, query, False
        prompt = self.templates.render(
            "REPHRASE", history=render_history(ctx.history), question=query,
        )
        try:
            response = self.gateway.chat(ChatRequest(
                subscription_id=ctx.bot_id or "default",
                model_id=cfg.model_id,
                messages=(("user", prompt),),
            ))
        except GatewayError:
            return query, query, True
        rephrased = response.text.strip()
        if not rephrased:
            return query, query, True
        return query, rephrased, False

    @staticmethod
    def rerank(query: str, hits: list[ScoredHit], strategy: str) -> list[ScoredHit]:
        """Re-sort hits by query-token overlap; stable, so ties keep rank order."""
        if strategy == "none":
            return list(hits)
        if strategy != "lexical_overlap":
            raise ConfigInvalid(f"unknown rerank strategy: {strategy!r}")
        qtokens = {t for t in tokenize(query) if t not in STOPWORDS}
        if not qtokens:
            return list(hits)

        def overlap(hit: ScoredHit) -> float:
            chunk_tokens = set(tokenize(hit.chunk.text)) if hit.chunk else set()
            return len(qtokens & chunk_tokens) / len(qtokens)

        return sorted(hits, key=lambda h: -overlap(h))

    def assemble_prompt(self, template_id: str, query: str, hits: list[ScoredHit],
                        history, budget: int, system: str | None = None) -> AssembledPrompt:
        """Fill the template, packing hits in rank order within the budget.

        The top hit is always included even when it alone exceeds the
        budget; that case is flagged as overflow.
        """
        if budget <= 0:
            raise ConfigInvalid("context token budget must be > 0")
        system = system if system is not None else self.system_prompt
        history_text = render_history(history)

        def render(context: str) -> str:
            return self.templates.render(
                template_id, system=system, history=history_text,
                context=context, question=query,
            )

        if not hits:
            prompt = render(NO_CONTEXT)
            return AssembledPrompt(prompt, [], count_tokens(prompt), False)

        entries = [
            f"[{i}] ({hit.chunk.uri})\n{hit.chunk.text}"
            for i, hit in enumerate(hits, start=1)
        ]
        prompt = render(entries[0])
        included = 1
        tokens = count_tokens(prompt)
        overflow = tokens > budget
        if not overflow:
            for n in range(2, len(entries) + 1):
                candidate = render("\n\n".join(entries[:n]))
                candidate_tokens = count_tokens(candidate)
                if candidate_tokens <= budget:
                    prompt, included, tokens = candidate, n, candidate_tokens
                else:
                    break
        return AssembledPrompt(prompt, list(hits[:included]), tokens, overflow)

    def generate_answer(self, prompt_text: str, model_id: str,
                        ctx: QueryContext) -> tuple[str, float]:
        """One gateway call; returns (completion, provider latency ms)."""
        response = self.gateway.chat(ChatRequest(
            subscription_id=ctx.bot_id or "default",
            model_id=model_id,
            messages=(("user", prompt_text),),
        ))
        return response.text, response.provider_latency_ms

    @staticmethod
    def extract_citations(completion: str,
                          included_hits: list[ScoredHit]) -> tuple[str, list[Citation], bool]:
        """Map [i] markers to citations; strip out-of-range markers.

        Returns (text, citations, fallback_used). When the completion has
        no valid markers, the top hits are attached anyway so answers are
        never silently unsourced.
        """
        n = len(included_hits)
        valid: set[int] = set()
        for m in _MARKER_RE.finditer(completion):
            i = int(m.group(1))
            if 1 <= i <= n:
                valid.add(i)
        text = _MARKER_RE.sub(
            lambda m: m.group(0) if 1 <= int(m.group(1)) <= n else "", completion
        )
        if valid:
            citations = [_cite(i, included_hits[i - 1]) for i in sorted(valid)]
            return text, citations, False
        citations = [
            _cite(i, hit) for i, hit in enumerate(included_hits[:FALLBACK_CITATIONS], 1)
        ]
        return text, citations, bool(citations)

    # -- full flow ------------------------------------------------------------

    def answer(self, ctx: QueryContext, query: str,
               cfg: PipelineConfig) -> tuple[Answer, Trace]:
        """Run all stages, persist the trace, and return the answer."""
        cfg.validate()
        trace = Trace(trace_id=uuid.uuid4().hex, request_id=ctx.request_id)
        recorder = _StageRecorder(trace)

        # guardrail_in
        with recorder.stage("guardrail_in", {"query": query}) as stage:
            reason = check_input(query, self.policy)
            stage.output({"allowed": reason is None, "reason": reason})
            stage.detail(decision="block" if reason else "allow", reason=reason)
        if reason is not None:
            answer = Answer(
                text=self.policy.refusal_message,
                citations=[],
                trace_id=trace.trace_id,
                blocked=True,
                block_reason=reason,
            )
            self.trace_store.store(trace)
            return answer, trace

        # rephrase
        with recorder.stage("rephrase", {"query": query}) as stage:
            original, rephrased, fell_back = self.rephrase_query(ctx, query, cfg)
            stage.output({"rephrased": rephrased})
            stage.detail(
                original=original, rephrased=rephrased,
                enabled=cfg.rephrase_enabled, fallback=fell_back,
            )

        # retrieve
        with recorder.stage("retrieve", {"query": rephrased, "fusion": cfg.fusion,
                                         "top_k": cfg.top_k}) as stage:
            hits = self.index.hybrid_search(rephrased, cfg.top_k, ctx.principal, cfg.fusion)
            before = len(hits)
            hits = filter_sensitive_hits(hits, ctx.principal.clearance)
            stage.output({"chunk_ids": [h.chunk_id for h in hits]})
            stage.detail(
                query=rephrased, fusion=cfg.fusion,
                hits=[_hit_detail(h) for h in hits],
                sensitivity_filtered=before - len(hits),
            )

        # rerank
        with recorder.stage("rerank", {"strategy": cfg.rerank}) as stage:
            hits = self.rerank(rephrased, hits, cfg.rerank)
            stage.output({"chunk_ids": [h.chunk_id for h in hits]})
            stage.detail(strategy=cfg.rerank, order=[h.chunk_id for h in hits])

        # assemble_prompt
        with recorder.stage("assemble_prompt", {"template": cfg.prompt_template_id,
                                                "budget": cfg.context_token_budget}) as stage:
            assembled = self.assemble_prompt(
                cfg.prompt_template_id, rephrased, hits, ctx.history,
                cfg.context_token_budget,
            )
            stage.output({"prompt": assembled.prompt_text})
            stage.detail(
                template_id=cfg.prompt_template_id,
                included_chunk_ids=[h.chunk_id for h in assembled.included_hits],
                prompt_text=assembled.prompt_text,
                prompt_tokens=assembled.prompt_tokens,
                budget=cfg.context_token_budget,
                overflow=assembled.overflow,
            )

        # generate
        generation_error: str | None = None
        completion = ""
        with recorder.stage("generate", {"model": cfg.model_id}) as stage:
            try:
                completion, latency_ms = self.generate_answer(
                    assembled.prompt_text, cfg.model_id, ctx
                )
                stage.output({"completion": completion})
                stage.detail(model_id=cfg.model_id, outcome="ok",
                             provider_latency_ms=latency_ms)
            except GatewayError as e:
                generation_error = str(e)
                stage.output({"error": generation_error})
                stage.detail(model_id=cfg.model_id, outcome="error",
                             error=generation_error)

        # cite
        with recorder.stage("cite", {"completion_length": len(completion)}) as stage:
            if generation_error is None:
                text, citations, fallback_used = self.extract_citations(
                    completion, assembled.included_hits
                )
            else:
                text, citations, fallback_used = self.failure_message, [], False
            stage.output({"citations": [c.chunk_id for c in citations]})
            stage.detail(
                citations=[c.__dict__ for c in citations],
                fallback_used=fallback_used,
                skipped=generation_error is not None,
            )

        # guardrail_out
        with recorder.stage("guardrail_out", {"length": len(text)}) as stage:
            redaction = redact_output(text, self.policy)
            text = redaction.text
            stage.output({"text": text})
            stage.detail(redactions=redaction.redactions, final_text=text)

        answer = Answer(
            text=text,
            citations=citations,
            trace_id=trace.trace_id,
            blocked=False,
        )
        self.trace_store.store(trace)
        return answer, trace


def _cite(marker: int, hit: ScoredHit) -> Citation:
    return Citation(
        marker=marker,
        doc_id=hit.doc_id,
        uri=hit.chunk.uri if hit.chunk else "",
        chunk_id=hit.chunk_id,
    )


def _hit_detail(hit: ScoredHit) -> dict:
    return {
        "chunk_id": hit.chunk_id,
        "doc_id": hit.doc_id,
        "lexical_score": hit.lexical_score,
        "lexical_rank": hit.lexical_rank,
        "vector_score": hit.vector_score,
        "vector_rank": hit.vector_rank,
        "fused_score": hit.fused_score,
    }


class _StageTicket:
    def __init__(self, recorder: "_StageRecorder", name: str, input_obj):
        self._recorder = recorder
        self.name = name
        self.input_digest = canonical_digest(input_obj)
        self.output_digest = canonical_digest(None)
        self._detail: dict = {}

    def output(self, obj) -> None:
        self.output_digest = canonical_digest(obj)

    def detail(self, **kwargs) -> None:
        self._detail.update(kwargs)

    def __enter__(self):
        self._started_wall = datetime.now(timezone.utc).isoformat()
        self._started = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self._recorder.trace.stages.append(StageRecord(
            stage_name=self.name,
            started_at=self._started_wall,
            duration_ms=(time.perf_counter() - self._started) * 1000.0,
            input_digest=self.input_digest,
            output_digest=self.output_digest,
            detail=self._detail,
        ))
        return False


class _StageRecorder:
    def __init__(self, trace: Trace):
        self.trace = trace

    def stage(self, name: str, input_obj) -> _StageTicket:
        return _StageTicket(self, name, input_obj)
