"""Ground-truth evaluation, grid search, and regression gating.

Metrics are deterministic proxies so the whole loop runs offline
against the scripted mock provider:

* hit@k / MRR over retrieved chunk doc_ids vs the case's gold docs
* faithfulness: share of non-stopword answer tokens present in the
  generator's input (the assembled prompt)
* answer F1: bag-of-tokens F1 against a gold answer when one exists

An LLM judge can be slotted in behind the same report shape, but the
hermetic suite never depends on one.
"""

from __future__ import annotations

import itertools
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigInvalid, EmptySuite, SuiteMismatch
from .gateway import Gateway
from .guardrails import GuardrailPolicy, default_policy
from .index import HybridIndex, Principal
from .ingest import Document, Sensitivity, chunk_document
from .pipeline import Pipeline, PipelineConfig, QueryContext
from .templates import TemplateStore
from .tokens import STOPWORDS, tokenize
from .traces import TraceStore, canonical_digest

GRID_AXES = ("chunk_tokens", "overlap_tokens", "fusion", "rerank", "top_k")
QUALITY_METRICS = ("hit_at_k", "mrr", "faithfulness", "answer_f1")


@dataclass(frozen=True)
class EvalCase:
    case_id: str
    query: str
    gold_doc_ids: frozenset[str]
    principal: Principal
    gold_answer: str | None = None

    def to_json(self) -> dict:
        return {
            "case_id": self.case_id,
            "query": self.query,
            "gold_doc_ids": sorted(self.gold_doc_ids),
            "gold_answer": self.gold_answer,
            "principal": {
                "user_id": self.principal.user_id,
                "groups": sorted(self.principal.groups),
                "clearance": self.principal.clearance.name,
            },
        }

    @classmethod
    def from_json(cls, data: dict) -> "EvalCase":
        gold_docs = frozenset(data.get("gold_doc_ids", []))
        gold_answer = data.get("gold_answer")
        if not gold_docs and gold_answer is None:
            raise ConfigInvalid(
                f"case {data.get('case_id')!r}: needs gold_doc_ids or gold_answer"
            )
        p = data.get("principal", {})
        return cls(
            case_id=data["case_id"],
            query=data["query"],
            gold_doc_ids=gold_docs,
            gold_answer=gold_answer,
            principal=Principal(
                user_id=p.get("user_id", "eval"),
                groups=frozenset(p.get("groups", [])),
                clearance=Sensitivity.parse(p.get("clearance", "internal")),
            ),
        )


def load_suite(path) -> list[EvalCase]:
    cases = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                cases.append(EvalCase.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as e:
                raise ConfigInvalid(f"{path}:{lineno}: {e}") from None
    return cases


def suite_digest(suite: list[EvalCase]) -> str:
    return canonical_digest([case.to_json() for case in suite])


# -- metric primitives --------------------------------------------------------

def hit_at_k(ranked_doc_ids: list[str], gold: frozenset[str], k: int) -> int:
    return int(any(d in gold for d in ranked_doc_ids[:k]))


def reciprocal_rank(ranked_doc_ids: list[str], gold: frozenset[str]) -> float:
    for i, doc_id in enumerate(ranked_doc_ids, start=1):
        if doc_id in gold:
            return 1.0 / i
    return 0.0


def faithfulness(answer_text: str, grounding_texts: list[str]) -> float:
    """Fraction of non-stopword answer tokens grounded in the given texts."""
    answer_tokens = {t for t in tokenize(answer_text) if t not in STOPWORDS}
    if not answer_tokens:
        return 1.0
    grounding: set[str] = set()
    for text in grounding_texts:
        grounding.update(tokenize(text))
    return len(answer_tokens & grounding) / len(answer_tokens)


def answer_f1(answer_text: str, gold_answer: str) -> float:
    """Bag-of-tokens F1 between answer and gold."""
    a = Counter(tokenize(answer_text))
    g = Counter(tokenize(gold_answer))
    if not a and not g:
        return 1.0
    common = sum((a & g).values())
    if common == 0:
        return 0.0
    precision = common / sum(a.values())
    recall = common / sum(g.values())
    return 2 * precision * recall / (precision + recall)


# -- reports ------------------------------------------------------------------

@dataclass
class EvalReport:
    rows: list[dict]
    aggregates: dict
    config: dict
    suite_digest: str
    k: int

    def to_json(self) -> dict:
        return {
            "rows": self.rows,
            "aggregates": self.aggregates,
            "config": self.config,
            "suite_digest": self.suite_digest,
            "k": self.k,
        }

    @classmethod
    def from_json(cls, data: dict) -> "EvalReport":
        return cls(
            rows=data["rows"],
            aggregates=data["aggregates"],
            config=data["config"],
            suite_digest=data["suite_digest"],
            k=data["k"],
        )


def compute_aggregates(rows: list[dict]) -> dict:
    """Aggregate metric means and per-stage latency percentiles from rows."""
    aggregates: dict = {}
    for metric in ("hit_at_k", "mrr", "faithfulness"):
        aggregates[metric] = float(np.mean([r[metric] for r in rows]))
    f1_values = [r["answer_f1"] for r in rows if r["answer_f1"] is not None]
    aggregates["answer_f1"] = float(np.mean(f1_values)) if f1_values else None
    stage_latencies: dict[str, list[float]] = {}
    for row in rows:
        for stage, ms in row["stage_latency_ms"].items():
            stage_latencies.setdefault(stage, []).append(ms)
    aggregates["latency_ms"] = {
        stage: {
            "p50": float(np.percentile(values, 50)),
            "p95": float(np.percentile(values, 95)),
        }
        for stage, values in sorted(stage_latencies.items())
    }
    return aggregates


def build_index(docs: list[Document], cfg: PipelineConfig,
                dim: int | None = None) -> HybridIndex:
    index = HybridIndex() if dim is None else HybridIndex(dim=dim)
    chunks = []
    for doc in docs:
        chunks.extend(chunk_document(doc, cfg.chunking))
    if chunks:
        index.upsert_chunks(chunks)
    return index


def evaluate(
    docs: list[Document],
    cfg: PipelineConfig,
    suite: list[EvalCase],
    gateway: Gateway,
    policy: GuardrailPolicy | None = None,
    templates: TemplateStore | None = None,
    index: HybridIndex | None = None,
) -> EvalReport:
    """Run every case through the full pipeline and score it."""
    if not suite:
        raise EmptySuite("evaluation suite has no cases")
    cfg.validate()
    if index is None:
        index = build_index(docs, cfg)
    pipeline = Pipeline(
        index, gateway, policy or default_policy(),
        templates=templates, trace_store=TraceStore(),
    )

    rows: list[dict] = []
    for case in suite:
        ctx = QueryContext(
            principal=case.principal,
            bot_id="eval",
            request_id=f"eval/{case.case_id}",
        )
        answer, trace = pipeline.answer(ctx, case.query, cfg)

        ranked_doc_ids: list[str] = []
        grounding: list[str] = []
        if not answer.blocked:
            retrieve = trace.stage("retrieve").detail
            doc_by_chunk = {h["chunk_id"]: h["doc_id"] for h in retrieve["hits"]}
            order = trace.stage("rerank").detail["order"]
            ranked_doc_ids = [doc_by_chunk[cid] for cid in order]
            grounding = [trace.stage("assemble_prompt").detail["prompt_text"]]

        row = {
            "case_id": case.case_id,
            "query": case.query,
            "blocked": answer.blocked,
            "ranked_doc_ids": ranked_doc_ids,
            "hit_at_k": hit_at_k(ranked_doc_ids, case.gold_doc_ids, cfg.top_k),
            "mrr": reciprocal_rank(ranked_doc_ids, case.gold_doc_ids),
            "faithfulness": faithfulness(answer.text, grounding),
            "answer_f1": (
                answer_f1(answer.text, case.gold_answer)
                if case.gold_answer is not None else None
            ),
            "citations": [c.chunk_id for c in answer.citations],
            "stage_latency_ms": {s.stage_name: s.duration_ms for s in trace.stages},
        }
        rows.append(row)

    return EvalReport(
        rows=rows,
        aggregates=compute_aggregates(rows),
        config=cfg.to_dict(),
        suite_digest=suite_digest(suite),
        k=cfg.top_k,
    )


# -- grid search --------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    axes: dict
    objective: str = "mrr"

    def validate(self) -> None:
        if not self.axes:
            raise ConfigInvalid("grid must define at least one axis")
        for name, values in self.axes.items():
            if name not in GRID_AXES:
                raise ConfigInvalid(
                    f"unknown grid axis {name!r}; expected one of {GRID_AXES}"
                )
            if not isinstance(values, (list, tuple)) or not values:
                raise ConfigInvalid(f"grid axis {name!r} needs a non-empty value list")
        if self.objective not in QUALITY_METRICS:
            raise ConfigInvalid(
                f"unknown objective {self.objective!r}; expected one of {QUALITY_METRICS}"
            )

    def points(self) -> list[dict]:
        names = sorted(self.axes)
        combos = itertools.product(*(self.axes[n] for n in names))
        return [dict(zip(names, combo)) for combo in combos]

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        spec = cls(axes=dict(data.get("axes", {})), objective=data.get("objective", "mrr"))
        spec.validate()
        return spec


@dataclass
class GridPoint:
    params: dict
    config: dict
    objective_value: float | None
    report: EvalReport | None
    error: str | None = None


def grid_search(
    docs: list[Document],
    base_cfg: PipelineConfig,
    grid: GridSpec,
    suite: list[EvalCase],
    gateway: Gateway,
    policy: GuardrailPolicy | None = None,
    templates: TemplateStore | None = None,
) -> list[GridPoint]:
    """Exhaustively evaluate every grid point, best objective first.

    Invalid parameter combinations are recorded and skipped. Ties on the
    objective are broken by the canonical config encoding so the output
    order is reproducible.
    """
    grid.validate()
    if not suite:
        raise EmptySuite("evaluation suite has no cases")

    index_cache: dict[tuple, HybridIndex] = {}
    evaluated: list[GridPoint] = []
    skipped: list[GridPoint] = []
    for params in grid.points():
        try:
            cfg = base_cfg.with_overrides(**params)
        except ConfigInvalid as e:
            skipped.append(GridPoint(params=params, config={}, objective_value=None,
                                     report=None, error=str(e)))
            continue
        chunk_key = (
            cfg.chunking.chunk_tokens, cfg.chunking.overlap_tokens,
            cfg.chunking.mode, cfg.chunking.prepend_section_path,
        )
        if chunk_key not in index_cache:
            index_cache[chunk_key] = build_index(docs, cfg)
        report = evaluate(docs, cfg, suite, gateway, policy=policy,
                          templates=templates, index=index_cache[chunk_key])
        value = report.aggregates.get(grid.objective)
        if value is None:
            skipped.append(GridPoint(params=params, config=cfg.to_dict(),
                                     objective_value=None, report=report,
                                     error=f"objective {grid.objective!r} not measured"))
            continue
        evaluated.append(GridPoint(params=params, config=cfg.to_dict(),
                                   objective_value=float(value), report=report))

    evaluated.sort(key=lambda p: (-p.objective_value,
                                  json.dumps(p.config, sort_keys=True)))
    return evaluated + skipped


# -- regression gate ----------------------------------------------------------

@dataclass
class GateResult:
    passed: bool
    failures: list[dict] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.passed


def regression_gate(baseline: EvalReport, candidate: EvalReport,
                    epsilon: dict | None = None) -> GateResult:
    """Fail when any quality aggregate drops by more than its allowance.

    Both reports must come from the same suite; metrics missing an
    epsilon entry get zero tolerance.
    """
    if baseline.suite_digest != candidate.suite_digest:
        raise SuiteMismatch(
            "baseline and candidate reports were built from different suites"
        )
    epsilon = epsilon or {}
    failures = []
    for metric in QUALITY_METRICS:
        base = baseline.aggregates.get(metric)
        cand = candidate.aggregates.get(metric)
        if base is None or cand is None:
            continue
        allowed = float(epsilon.get(metric, 0.0))
        drop = base - cand
        # 1e-12 guard keeps representation noise (0.8 - 0.75 > 0.05) from
        # tripping the gate on a drop that equals epsilon exactly
        if drop > allowed + 1e-12:
            failures.append({
                "metric": metric,
                "baseline": base,
                "candidate": cand,
                "drop": drop,
                "epsilon": allowed,
            })
    return GateResult(passed=not failures, failures=failures)
