"""Command-line surface over the same engine the HTTP service uses."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import AppConfig
from .engine import RagEngine
from .errors import RagCoreError
from .evals import GridSpec, load_suite, regression_gate, EvalReport
from .index import Principal
from .ingest import Sensitivity


def _engine(config_path: str) -> RagEngine:
    return RagEngine(AppConfig.load(config_path))


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


@click.group()
def main():
    """Enterprise RAG engine: ingest corpora, ask questions, serve, evaluate."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--corpus-id", "corpus_id", default=None,
              help="Single corpus to ingest (default: all configured corpora).")
def ingest(config_path, corpus_id):
    """Build retrieval indexes from the configured corpus manifests."""
    try:
        engine = _engine(config_path)
        corpus_ids = [corpus_id] if corpus_id else list(engine.config.corpora)
        for cid in corpus_ids:
            result = engine.ingest_corpus(cid)
            click.echo(
                f"[{cid}] indexed {result['documents']} documents, "
                f"{result['chunks']} chunks"
            )
        engine.close()
    except RagCoreError as e:
        _fail(str(e))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--bot", "bot_id", default=None, help="Bot to ask (default: switchboard routing).")
@click.option("--user", "user_id", default="cli")
@click.option("--groups", default="", help="Comma-separated principal groups.")
@click.option("--clearance", default="internal",
              type=click.Choice([s.name for s in Sensitivity]))
@click.argument("query")
def ask(config_path, bot_id, user_id, groups, clearance, query):
    """Ask one question and print the answer, citations, and trace id."""
    try:
        engine = _engine(config_path)
        principal = Principal(
            user_id=user_id,
            groups=frozenset(g.strip() for g in groups.split(",") if g.strip()),
            clearance=Sensitivity.parse(clearance),
        )
        answer, _ = engine.chat(principal, query, bot_id=bot_id)
        if answer.blocked:
            click.echo(f"[blocked: {answer.block_reason}] {answer.text}")
        else:
            click.echo(answer.text)
        if answer.citations:
            click.echo("\nSources:")
            for c in answer.citations:
                click.echo(f"  [{c.marker}] {c.doc_id} ({c.uri})")
        click.echo(f"\ntrace: {answer.trace_id}")
        engine.close()
    except RagCoreError as e:
        _fail(str(e))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--host", default=None)
@click.option("--port", default=None, type=int)
@click.option("--ui-dir", default=None, type=click.Path(),
              help="Directory with the built web UI to mount at /ui.")
def serve(config_path, host, port, ui_dir):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    try:
        config = AppConfig.load(config_path)
        engine = RagEngine(config)
        for corpus_id in engine.config.corpora:
            if engine.index_for(corpus_id).stats()["chunks"] == 0:
                engine.ingest_corpus(corpus_id)
        if ui_dir is None:
            base = Path(config_path).resolve().parent
            for candidate in (base / "frontend", base.parent / "frontend"):
                if (candidate / "index.html").is_file():
                    ui_dir = candidate
                    break
    except RagCoreError as e:
        _fail(str(e))
        return
    app = create_app(engine, ui_dir=ui_dir)
    uvicorn.run(app, host=host or config.listen_host, port=port or config.listen_port,
                log_level="warning")


def _parse_epsilon(pairs) -> dict:
    epsilon = {}
    for pair in pairs:
        name, _, value = pair.partition("=")
        if not value:
            raise RagCoreError(f"bad --epsilon entry {pair!r}; expected metric=drop")
        epsilon[name.strip()] = float(value)
    return epsilon


@main.command("eval")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--suite", "suite_path", required=True, type=click.Path())
@click.option("--corpus-id", "corpus_id", default=None,
              help="Corpus to evaluate against (default: first configured).")
@click.option("--out", "out_path", default=None, type=click.Path(),
              help="Where to write the report JSON.")
@click.option("--baseline", "baseline_path", default=None, type=click.Path(),
              help="Baseline report for the regression gate.")
@click.option("--epsilon", "epsilon_pairs", multiple=True,
              help="Allowed metric drop, e.g. --epsilon mrr=0.05 (repeatable).")
def eval_cmd(config_path, suite_path, corpus_id, out_path, baseline_path, epsilon_pairs):
    """Evaluate the pipeline on a ground-truth suite; gate against a baseline.

    Exits 2 when the regression gate fails, 1 on validation errors.
    """
    try:
        engine = _engine(config_path)
        corpus_id = corpus_id or next(iter(engine.config.corpora))
        suite = load_suite(suite_path)
        report = engine.run_eval(corpus_id, suite)
        if out_path is None:
            out_path = engine.config.data_dir / f"eval-report-{corpus_id}.json"
        engine.close()
    except RagCoreError as e:
        _fail(str(e))
        return

    click.echo(f"cases: {len(report.rows)}  suite: {report.suite_digest[:12]}")
    for metric in ("hit_at_k", "mrr", "faithfulness", "answer_f1"):
        value = report.aggregates.get(metric)
        shown = "n/a" if value is None else f"{value:.4f}"
        click.echo(f"  {metric:14} {shown}")
    Path(out_path).write_text(json.dumps(report.to_json(), indent=2) + "\n")
    click.echo(f"report written to {out_path}")

    if baseline_path:
        try:
            baseline = EvalReport.from_json(json.loads(Path(baseline_path).read_text()))
            gate = regression_gate(baseline, report, _parse_epsilon(epsilon_pairs))
        except (RagCoreError, json.JSONDecodeError, OSError) as e:
            _fail(str(e))
            return
        if gate.passed:
            click.echo("regression gate: PASS")
        else:
            click.echo("regression gate: FAIL")
            for f in gate.failures:
                click.echo(
                    f"  {f['metric']}: {f['baseline']:.4f} -> {f['candidate']:.4f} "
                    f"(drop {f['drop']:.4f} > epsilon {f['epsilon']:.4f})"
                )
            sys.exit(2)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--grid", "grid_path", required=True, type=click.Path())
@click.option("--suite", "suite_path", required=True, type=click.Path())
@click.option("--corpus-id", "corpus_id", default=None)
@click.option("--out", "out_path", default=None, type=click.Path())
def gridsearch(config_path, grid_path, suite_path, corpus_id, out_path):
    """Exhaustively evaluate a parameter grid and print the ranked table."""
    try:
        engine = _engine(config_path)
        corpus_id = corpus_id or next(iter(engine.config.corpora))
        grid = GridSpec.from_dict(json.loads(Path(grid_path).read_text()))
        suite = load_suite(suite_path)
        results = engine.run_grid_search(corpus_id, grid, suite)
        engine.close()
    except (RagCoreError, json.JSONDecodeError, OSError) as e:
        _fail(str(e))
        return

    click.echo(f"{'rank':>4}  {grid.objective:>10}  params")
    rank = 0
    for point in results:
        if point.error is not None:
            click.echo(f"{'skip':>4}  {'-':>10}  {point.params}  ({point.error})")
            continue
        rank += 1
        click.echo(f"{rank:>4}  {point.objective_value:>10.4f}  {point.params}")
    if out_path:
        payload = [
            {"params": p.params, "objective_value": p.objective_value,
             "config": p.config, "error": p.error}
            for p in results
        ]
        Path(out_path).write_text(json.dumps(payload, indent=2) + "\n")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--subscription", "subscription_id", required=True)
@click.option("--since", default=None)
@click.option("--until", default=None)
def usage(config_path, subscription_id, since, until):
    """Print a cost summary for one subscription."""
    try:
        engine = _engine(config_path)
        report = engine.gateway.usage_report(subscription_id, since=since, until=until)
        engine.close()
    except RagCoreError as e:
        _fail(str(e))
        return
    click.echo(f"subscription: {report['subscription_id']}")
    click.echo(f"requests:     {report['total_requests']}")
    click.echo(f"total cost:   {report['total_cost']}")
    if report["per_model"]:
        click.echo("per model:")
        for model, entry in sorted(report["per_model"].items()):
            click.echo(f"  {model:20} {entry['requests']:>6}  {entry['cost']}")


if __name__ == "__main__":
    main()
