import pytest

from ragcore.gateway import Gateway, MockRule, MockScript, ProviderConfig
from ragcore.guardrails import default_policy
from ragcore.index import HybridIndex, Principal
from ragcore.ingest import ChunkingConfig, Sensitivity, ingest_document
from ragcore.pipeline import Pipeline, PipelineConfig
from ragcore.traces import TraceStore

EMPLOYEE = Principal(user_id="emp1", groups=frozenset({"employees"}),
                     clearance=Sensitivity.internal)

HANDBOOK_DOCS = [
    {
        "doc_id": "espp",
        "uri": "corp://hr/stock-purchase",
        "format": "markdown",
        "body": (
            "# Benefits\n## Stock Purchase\n"
            "To enroll in the employee stock purchase plan, open the benefits "
            "portal during the enrollment window and elect a contribution "
            "percentage. Contributions are capped at fifteen percent of pay.\n"
        ),
    },
    {
        "doc_id": "parking",
        "uri": "corp://facilities/parking",
        "format": "markdown",
        "body": (
            "# Facilities\n## Parking\n"
            "Overnight parking in headquarters lots requires a permit from "
            "facilities. Visitor parking is limited to one day.\n"
        ),
    },
    {
        "doc_id": "vpn",
        "uri": "corp://it/vpn",
        "format": "plain",
        "body": (
            "Connect to the corporate vpn with your badge credentials. "
            "Reset your vpn password from the identity portal."
        ),
    },
]


def build_index(docs=None, chunking=None, dim=256, acl=("employees",),
                sensitivity="internal"):
    chunking = chunking or ChunkingConfig(chunk_tokens=48, overlap_tokens=8,
                                          mode="section_aware",
                                          prepend_section_path=True)
    index = HybridIndex(dim=dim)
    for spec in docs or HANDBOOK_DOCS:
        _, chunks = ingest_document(
            spec["body"], spec["format"], spec["uri"],
            set(spec.get("acl", acl)), spec.get("sensitivity", sensitivity),
            chunking, doc_id=spec["doc_id"],
        )
        index.upsert_chunks(chunks)
    return index


def mock_gateway(rules=(), model_id="demo-echo", audit_path=None):
    gw = Gateway(audit_path=audit_path)
    gw.register_provider(ProviderConfig(
        provider_id="mock", kind="mock", model_ids=(model_id,),
        script=MockScript(rules=tuple(rules)),
    ))
    return gw


def build_pipeline(index=None, rules=(), policy=None, trace_store=None):
    return Pipeline(
        index=index if index is not None else build_index(),
        gateway=mock_gateway(rules),
        policy=policy or default_policy(),
        trace_store=trace_store if trace_store is not None else TraceStore(),
    )


@pytest.fixture
def pipeline():
    return build_pipeline()


@pytest.fixture
def pipeline_cfg():
    return PipelineConfig(
        chunking=ChunkingConfig(chunk_tokens=48, overlap_tokens=8,
                                mode="section_aware", prepend_section_path=True),
        fusion="rrf",
        rerank="lexical_overlap",
        top_k=5,
        context_token_budget=600,
        model_id="demo-echo",
        rephrase_enabled=True,
    )
