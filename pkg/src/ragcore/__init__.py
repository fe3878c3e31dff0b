"""ragcore: a hermetic enterprise RAG engine.

Hybrid lexical+vector retrieval with ACL enforcement, a guarded answer
pipeline with per-stage traces, an audited LLM gateway with exact cost
accounting, switchboard/bot orchestration, and an offline evaluation
and grid-search loop driven by a deterministic mock provider.
"""

__version__ = "0.1.0"

from .agent import BotSpec, DecompositionPlan, Orchestrator, route
from .embedding import embed
from .engine import RagEngine
from .evals import EvalCase, EvalReport, GridSpec, evaluate, grid_search, regression_gate
from .gateway import ChatRequest, ChatResponse, Gateway, MockScript, ProviderConfig
from .guardrails import GuardrailPolicy, check_input, filter_sensitive_hits, redact_output
from .index import HybridIndex, Principal, ScoredHit
from .ingest import (
    Chunk,
    ChunkingConfig,
    Document,
    Section,
    Sensitivity,
    chunk_document,
    enrich_metadata,
    parse_document,
)
from .pipeline import Answer, Pipeline, PipelineConfig, QueryContext
from .tokens import tokenize
from .traces import Trace, TraceStore

__all__ = [
    "Answer", "BotSpec", "ChatRequest", "ChatResponse", "Chunk", "ChunkingConfig",
    "DecompositionPlan", "Document", "EvalCase", "EvalReport", "Gateway",
    "GridSpec", "GuardrailPolicy", "HybridIndex", "MockScript", "Orchestrator",
    "Pipeline", "PipelineConfig", "Principal", "ProviderConfig", "QueryContext",
    "RagEngine", "ScoredHit", "Section", "Sensitivity", "Trace", "TraceStore",
    "check_input", "chunk_document", "embed", "enrich_metadata", "evaluate",
    "filter_sensitive_hits", "grid_search", "parse_document", "redact_output",
    "regression_gate", "route", "tokenize",
]
