// Thin typed client over the service API. No computation happens here:
// every number and score the UI shows comes back from these calls verbatim.

import type {
    BotsResponse,
    ChatResponse,
    FeedbackRequest,
    PrincipalForm,
    Trace,
    Turn,
} from "./types.js";

export const MAX_COMMENT_LENGTH = 2000;

export class ServiceError extends Error {
    constructor(
        public readonly errorCode: string,
        message: string,
        public readonly status: number,
    ) {
        super(message);
        this.name = "ServiceError";
    }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
        response = await fetch(base + path, {
            headers: { "Content-Type": "application/json" },
            ...init,
        });
    } catch (err) {
        throw new ServiceError("unreachable", `service unreachable: ${String(err)}`, 0);
    }
    const body = await response.json().catch(() => null);
    if (!response.ok) {
        const code = body && typeof body.error_code === "string" ? body.error_code : "http_error";
        const message = body && typeof body.message === "string"
            ? body.message
            : `HTTP ${response.status}`;
        throw new ServiceError(code, message, response.status);
    }
    return body as T;
}

export class ApiClient {
    constructor(private readonly base: string = "") {}

    chat(
        user: PrincipalForm,
        message: string,
        botId: string | null,
        history: Turn[],
    ): Promise<ChatResponse> {
        const payload: Record<string, unknown> = { user, message, history };
        if (botId) {
            payload.bot_id = botId;
        }
        return request<ChatResponse>(this.base, "/v1/chat", {
            method: "POST",
            body: JSON.stringify(payload),
        });
    }

    trace(traceId: string): Promise<Trace> {
        return request<Trace>(this.base, `/v1/traces/${encodeURIComponent(traceId)}`);
    }

    bots(): Promise<BotsResponse> {
        return request<BotsResponse>(this.base, "/v1/bots");
    }

    feedback(entry: FeedbackRequest): Promise<{ acknowledged: boolean }> {
        if (entry.comment && entry.comment.length > MAX_COMMENT_LENGTH) {
            entry = { ...entry, comment: entry.comment.slice(0, MAX_COMMENT_LENGTH) };
        }
        return request<{ acknowledged: boolean }>(this.base, "/v1/feedback", {
            method: "POST",
            body: JSON.stringify(entry),
        });
    }
}
