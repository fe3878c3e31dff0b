"""One object binding config, indexes, gateway, bots, and traces.

The engine is shared by the HTTP service and the CLI so both surfaces
answer identically. Index snapshots, the trace log, the audit log, and
feedback all live under the configured data directory.
"""

from __future__ import annotations

import json
import threading
import uuid
from pathlib import Path

from .agent import BotSpec, Orchestrator, route
from .config import AppConfig
from .errors import NotFound
from .evals import EvalCase, EvalReport, GridSpec, evaluate, grid_search
from .gateway import Gateway
from .index import HybridIndex, Principal
from .ingest import Document, enrich_metadata, ingest_document, load_manifest, parse_manifest
from .pipeline import Answer, Pipeline, PipelineConfig, QueryContext
from .templates import TemplateStore
from .traces import Trace, TraceStore

MAX_FEEDBACK_COMMENT = 2000


class RagEngine:
    def __init__(self, config: AppConfig):
        self.config = config
        config.data_dir.mkdir(parents=True, exist_ok=True)
        self.gateway = Gateway(audit_path=config.data_dir / "audit.jsonl")
        for provider in config.providers:
            self.gateway.register_provider(provider)
        for sub in config.subscriptions:
            if sub.get("quota_units") is not None:
                self.gateway.set_quota(sub["subscription_id"], sub["quota_units"])
            if sub.get("requests_per_minute") is not None:
                self.gateway.set_rate_limit(sub["subscription_id"], sub["requests_per_minute"])
        self.templates = TemplateStore(override_dir=config.templates_dir)
        self.traces = TraceStore(path=config.data_dir / "traces.jsonl")
        self.policy = config.policy
        self._feedback_lock = threading.Lock()
        self._indexes: dict[str, HybridIndex] = {}
        self._pipelines: dict[str, Pipeline] = {}
        for corpus_id in config.corpora:
            snapshot = self._snapshot_dir(corpus_id)
            if (snapshot / "header.json").is_file():
                self._indexes[corpus_id] = HybridIndex.load(snapshot)
        self.orchestrator = Orchestrator(
            pipeline_for=self.pipeline_for,
            gateway=self.gateway,
            policy=self.policy,
            templates=self.templates,
            trace_store=self.traces,
            failure_message=config.failure_message,
        )

    # -- corpora ------------------------------------------------------------

    def _snapshot_dir(self, corpus_id: str) -> Path:
        return self.config.data_dir / "indexes" / corpus_id

    def index_for(self, corpus_id: str) -> HybridIndex:
        if corpus_id not in self.config.corpora:
            raise NotFound(f"unknown corpus {corpus_id!r}")
        if corpus_id not in self._indexes:
            self._indexes[corpus_id] = HybridIndex(dim=self.config.embedding_dim)
        return self._indexes[corpus_id]

    def ingest_corpus(self, corpus_id: str, manifest_path=None,
                      jsonl_text: str | None = None, persist: bool = True) -> dict:
        """Parse, enrich, chunk, and index one corpus; returns counts."""
        if corpus_id not in self.config.corpora:
            raise NotFound(f"unknown corpus {corpus_id!r}")
        if jsonl_text is not None:
            docs = parse_manifest(jsonl_text.splitlines(), source=f"<{corpus_id}>")
        else:
            docs = load_manifest(manifest_path or self.config.corpora[corpus_id])

        chunking = self.config.default_pipeline.chunking
        index = self.index_for(corpus_id)
        total_chunks = 0
        for doc in docs:
            _, chunks = ingest_document(
                doc.body, doc.format, doc.uri, set(doc.acl), doc.sensitivity,
                chunking, doc_id=doc.doc_id, modified_at=doc.modified_at,
            )
            index.upsert_chunks(chunks)
            total_chunks += len(chunks)
        if persist:
            index.save(self._snapshot_dir(corpus_id))
        return {"corpus_id": corpus_id, "documents": len(docs), "chunks": total_chunks}

    def corpus_documents(self, corpus_id: str) -> list[Document]:
        if corpus_id not in self.config.corpora:
            raise NotFound(f"unknown corpus {corpus_id!r}")
        return [enrich_metadata(d) for d in load_manifest(self.config.corpora[corpus_id])]

    # -- chat ----------------------------------------------------------------

    def bot(self, bot_id: str) -> BotSpec:
        spec = self.config.bots.get(bot_id)
        if spec is None:
            raise NotFound(f"unknown bot {bot_id!r}")
        return spec

    def pipeline_for(self, bot: BotSpec) -> Pipeline:
        pipeline = self._pipelines.get(bot.bot_id)
        if pipeline is None:
            pipeline = Pipeline(
                index=self.index_for(bot.corpus_id),
                gateway=self.gateway,
                policy=self.policy,
                templates=self.templates,
                trace_store=self.traces,
                system_prompt=(
                    f"You are {bot.display_name}, an enterprise assistant "
                    "answering from internal documentation."
                ),
                failure_message=self.config.failure_message,
            )
            self._pipelines[bot.bot_id] = pipeline
        return pipeline

    def chat(self, principal: Principal, message: str, bot_id: str | None = None,
             history: tuple = (), request_id: str | None = None) -> tuple[Answer, Trace]:
        """Answer a message; routes through the switchboard when no bot is given."""
        ctx = QueryContext(
            principal=principal,
            bot_id=bot_id or "",
            history=tuple(history),
            request_id=request_id or uuid.uuid4().hex,
        )
        if bot_id is not None:
            bot = self.bot(bot_id)
            return self.pipeline_for(bot).answer(ctx, message, bot.pipeline_cfg)
        routed = route(message, list(self.config.bots.values()), self.config.default_bot_id)
        return self.orchestrator.orchestrate(ctx, message, self.bot(routed))

    # -- evaluation ------------------------------------------------------------

    def run_eval(self, corpus_id: str, suite: list[EvalCase],
                 pipeline_overrides: dict | None = None) -> EvalReport:
        docs = self.corpus_documents(corpus_id)
        cfg = self.config.default_pipeline
        if pipeline_overrides:
            merged = cfg.to_dict()
            merged_chunking = {**merged["chunking"], **pipeline_overrides.get("chunking", {})}
            merged.update({k: v for k, v in pipeline_overrides.items() if k != "chunking"})
            merged["chunking"] = merged_chunking
            cfg = PipelineConfig.from_dict(merged)
        return evaluate(docs, cfg, suite, self.gateway, policy=self.policy,
                        templates=self.templates)

    def run_grid_search(self, corpus_id: str, grid: GridSpec, suite: list[EvalCase]):
        docs = self.corpus_documents(corpus_id)
        return grid_search(docs, self.config.default_pipeline, grid, suite,
                           self.gateway, policy=self.policy, templates=self.templates)

    # -- feedback ----------------------------------------------------------------

    def record_feedback(self, trace_id: str, rating: str, comment: str = "") -> dict:
        """Persist one vote per trace; a second vote replaces the first."""
        if rating not in ("up", "down"):
            raise ValueError(f"rating must be 'up' or 'down', got {rating!r}")
        if len(comment) > MAX_FEEDBACK_COMMENT:
            raise ValueError(f"comment longer than {MAX_FEEDBACK_COMMENT} characters")
        self.traces.get(trace_id)  # NotFound when the trace never existed
        entry = {"trace_id": trace_id, "rating": rating, "comment": comment}
        with self._feedback_lock:
            with open(self.config.data_dir / "feedback.jsonl", "a", encoding="utf-8") as f:
                f.write(json.dumps(entry, sort_keys=True) + "\n")
        return entry

    def feedback_for(self, trace_id: str) -> dict | None:
        path = self.config.data_dir / "feedback.jsonl"
        latest = None
        try:
            with open(path, encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        entry = json.loads(line)
                        if entry["trace_id"] == trace_id:
                            latest = entry  # last write wins
        except FileNotFoundError:
            return None
        return latest

    def close(self) -> None:
        self.gateway.close()
        self.traces.close()
