// Pure HTML renderers. Pure string-in/string-out keeps these snapshot
// testable without a DOM, and guarantees the UI never computes a score:
// numbers print via raw() exactly as the server sent them.

import type { BotInfo, ChatResponse, Citation, ScoredHitDetail, StageRecord, Trace } from "./types.js";

export function escapeHtml(text: string): string {
    return text
        .replaceAll("&", "&amp;")
        .replaceAll("<", "&lt;")
        .replaceAll(">", "&gt;")
        .replaceAll('"', "&quot;")
        .replaceAll("'", "&#39;");
}

/** Server-provided number, rendered verbatim (no rounding, no math). */
export function raw(value: number | null | undefined): string {
    if (value === null || value === undefined) {
        return "-";
    }
    return String(value);
}

function citationLink(citation: Citation): string {
    const label = `[${citation.marker}]`;
    const title = `${citation.doc_id} (${citation.chunk_id})`;
    return `<a class="citation" href="${escapeHtml(citation.uri)}" title="${escapeHtml(title)}" target="_blank" rel="noopener">${escapeHtml(label)}</a>`;
}

/** Replace [n] markers that map to citations with source links. */
export function linkifyMarkers(text: string, citations: Citation[]): string {
    const byMarker = new Map(citations.map((c) => [c.marker, c]));
    return escapeHtml(text).replace(/\[(\d+)\]/g, (match, digits: string) => {
        const citation = byMarker.get(Number(digits));
        return citation ? citationLink(citation) : match;
    });
}

export function renderAnswer(response: ChatResponse, query: string): string {
    const question = `<div class="bubble user">${escapeHtml(query)}</div>`;
    if (response.blocked) {
        const reason = escapeHtml(response.block_reason ?? "blocked");
        return (
            `${question}\n` +
            `<div class="bubble blocked" data-trace-id="${escapeHtml(response.trace_id)}">` +
            `<span class="blocked-label">Blocked (${reason})</span> ` +
            `${escapeHtml(response.answer)}</div>`
        );
    }
    const sources = response.citations.length
        ? `<div class="sources">Sources: ${response.citations.map(citationLink).join(" ")}</div>`
        : "";
    return (
        `${question}\n` +
        `<div class="bubble assistant" data-trace-id="${escapeHtml(response.trace_id)}">` +
        `<div class="answer-text">${linkifyMarkers(response.answer, response.citations)}</div>` +
        sources +
        `<div class="turn-actions">` +
        `<button class="feedback" data-rating="up" data-trace-id="${escapeHtml(response.trace_id)}">&#128077;</button>` +
        `<button class="feedback" data-rating="down" data-trace-id="${escapeHtml(response.trace_id)}">&#128078;</button>` +
        `<button class="inspect" data-trace-id="${escapeHtml(response.trace_id)}">trace</button>` +
        `</div></div>`
    );
}

function hitsTable(hits: ScoredHitDetail[]): string {
    const rows = hits
        .map(
            (h) =>
                `<tr><td>${escapeHtml(h.chunk_id)}</td><td>${escapeHtml(h.doc_id)}</td>` +
                `<td>${raw(h.lexical_rank)}</td><td>${raw(h.lexical_score)}</td>` +
                `<td>${raw(h.vector_rank)}</td><td>${raw(h.vector_score)}</td>` +
                `<td>${raw(h.fused_score)}</td></tr>`,
        )
        .join("");
    return (
        `<table class="hits"><thead><tr><th>chunk</th><th>doc</th>` +
        `<th>lex rank</th><th>lex score</th><th>vec rank</th><th>vec score</th>` +
        `<th>fused</th></tr></thead><tbody>${rows}</tbody></table>`
    );
}

function stagePanel(stage: StageRecord): string {
    const detail = stage.detail as Record<string, unknown>;
    const parts: string[] = [];
    if (stage.stage_name === "rephrase") {
        parts.push(
            `<dl><dt>original</dt><dd>${escapeHtml(String(detail.original ?? ""))}</dd>` +
            `<dt>rephrased</dt><dd>${escapeHtml(String(detail.rephrased ?? ""))}</dd>` +
            `<dt>fallback</dt><dd>${String(detail.fallback ?? false)}</dd></dl>`,
        );
    } else if (stage.stage_name === "retrieve" && Array.isArray(detail.hits)) {
        parts.push(hitsTable(detail.hits as ScoredHitDetail[]));
    } else if (stage.stage_name === "assemble_prompt" && typeof detail.prompt_text === "string") {
        parts.push(`<pre class="prompt">${escapeHtml(detail.prompt_text)}</pre>`);
    } else if (stage.stage_name === "cite" && Array.isArray(detail.citations)) {
        const items = (detail.citations as Citation[])
            .map((c) => `<li>[${c.marker}] ${escapeHtml(c.doc_id)} &rarr; ${escapeHtml(c.chunk_id)}</li>`)
            .join("");
        parts.push(`<ul class="citation-map">${items}</ul>`);
    } else {
        parts.push(`<pre class="detail-json">${escapeHtml(JSON.stringify(detail, null, 2))}</pre>`);
    }
    return parts.join("");
}

export function renderTrace(trace: Trace): string {
    const stages = trace.stages
        .map(
            (stage, i) =>
                `<details class="stage" data-stage="${escapeHtml(stage.stage_name)}">` +
                `<summary><span class="stage-no">${i + 1}</span> ` +
                `<span class="stage-name">${escapeHtml(stage.stage_name)}</span> ` +
                `<span class="stage-ms">${stage.duration_ms.toFixed(1)} ms</span></summary>` +
                stagePanel(stage) +
                `</details>`,
        )
        .join("\n");
    return (
        `<div class="trace" data-trace-id="${escapeHtml(trace.trace_id)}">` +
        `<h3>Trace ${escapeHtml(trace.trace_id)}</h3>\n${stages}\n</div>`
    );
}

export function renderBotOptions(bots: BotInfo[], defaultBotId: string): string {
    const route = `<option value="">switchboard (auto-route, default: ${escapeHtml(defaultBotId)})</option>`;
    const options = bots
        .map((b) => `<option value="${escapeHtml(b.bot_id)}">${escapeHtml(b.display_name)}</option>`)
        .join("");
    return route + options;
}

export function renderErrorBanner(message: string): string {
    return `<div class="banner error">${escapeHtml(message)}</div>`;
}

export function renderNotice(message: string): string {
    return `<div class="banner notice">${escapeHtml(message)}</div>`;
}
