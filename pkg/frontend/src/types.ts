// Shapes of the service's JSON API (see docs/api.md in the repo root).

export interface PrincipalForm {
    id: string;
    groups: string[];
    clearance: "public" | "internal" | "confidential" | "restricted";
}

export interface Turn {
    role: "user" | "assistant";
    text: string;
}

export interface Citation {
    marker: number;
    doc_id: string;
    uri: string;
    chunk_id: string;
}

export interface ChatResponse {
    answer: string;
    citations: Citation[];
    blocked: boolean;
    block_reason: string | null;
    trace_id: string;
}

export interface ScoredHitDetail {
    chunk_id: string;
    doc_id: string;
    lexical_score: number | null;
    lexical_rank: number | null;
    vector_score: number | null;
    vector_rank: number | null;
    fused_score: number;
}

export interface StageRecord {
    stage_name: string;
    started_at: string;
    duration_ms: number;
    input_digest: string;
    output_digest: string;
    detail: Record<string, unknown>;
}

export interface Trace {
    trace_id: string;
    request_id: string;
    stages: StageRecord[];
}

export interface BotInfo {
    bot_id: string;
    display_name: string;
    corpus_id: string;
    keyword_terms: string[];
}

export interface BotsResponse {
    default_bot_id: string;
    bots: BotInfo[];
}

export interface FeedbackRequest {
    trace_id: string;
    rating: "up" | "down";
    comment?: string;
}

export interface ApiError {
    error_code: string;
    message: string;
}
