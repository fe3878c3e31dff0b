// DOM wiring for the chat view and trace inspector. All markup comes from
// render.ts; this file only moves strings into the page and events out.

import { ApiClient, MAX_COMMENT_LENGTH, ServiceError } from "./api.js";
import {
    renderAnswer,
    renderBotOptions,
    renderErrorBanner,
    renderNotice,
    renderTrace,
} from "./render.js";
import type { PrincipalForm, Turn } from "./types.js";

const api = new ApiClient("");

function el<T extends HTMLElement>(id: string): T {
    const node = document.getElementById(id);
    if (!node) {
        throw new Error(`missing element #${id}`);
    }
    return node as T;
}

function principalFromForm(): PrincipalForm {
    const groups = el<HTMLInputElement>("principal-groups").value
        .split(",")
        .map((g) => g.trim())
        .filter(Boolean);
    return {
        id: el<HTMLInputElement>("principal-id").value.trim() || "demo-user",
        groups,
        clearance: el<HTMLSelectElement>("principal-clearance").value as PrincipalForm["clearance"],
    };
}

const history: Turn[] = [];

async function sendMessage(): Promise<void> {
    const input = el<HTMLInputElement>("chat-input");
    const text = input.value.trim();
    if (!text) {
        return;
    }
    const log = el<HTMLDivElement>("chat-log");
    const banner = el<HTMLDivElement>("banner-slot");
    banner.innerHTML = "";
    const botId = el<HTMLSelectElement>("bot-select").value || null;
    try {
        const response = await api.chat(principalFromForm(), text, botId, history.slice());
        log.insertAdjacentHTML("beforeend", renderAnswer(response, text));
        if (!response.blocked) {
            history.push({ role: "user", text });
            history.push({ role: "assistant", text: response.answer });
        }
        input.value = ""; // kept on errors so the user can retry
        log.scrollTop = log.scrollHeight;
    } catch (err) {
        const message = err instanceof ServiceError
            ? `${err.errorCode}: ${err.message}`
            : String(err);
        banner.innerHTML = renderErrorBanner(message);
    }
}

async function inspectTrace(traceId: string): Promise<void> {
    const panel = el<HTMLDivElement>("trace-panel");
    try {
        const trace = await api.trace(traceId);
        panel.innerHTML = renderTrace(trace);
    } catch (err) {
        const message = err instanceof ServiceError && err.status === 404
            ? `trace ${traceId} not found`
            : String(err);
        panel.innerHTML = renderErrorBanner(message);
    }
}

async function submitFeedback(traceId: string, rating: "up" | "down"): Promise<void> {
    const banner = el<HTMLDivElement>("banner-slot");
    const comment = el<HTMLInputElement>("feedback-comment").value.slice(0, MAX_COMMENT_LENGTH);
    try {
        await api.feedback({ trace_id: traceId, rating, comment });
        banner.innerHTML = renderNotice(`feedback recorded (${rating})`);
    } catch (err) {
        banner.innerHTML = renderErrorBanner(String(err));
    }
}

async function loadBots(): Promise<void> {
    const select = el<HTMLSelectElement>("bot-select");
    try {
        const registry = await api.bots();
        select.innerHTML = renderBotOptions(registry.bots, registry.default_bot_id);
    } catch (err) {
        el<HTMLDivElement>("banner-slot").innerHTML = renderErrorBanner(
            `could not load bot registry: ${String(err)}`,
        );
    }
}

export function start(): void {
    void loadBots();
    el<HTMLButtonElement>("send-button").addEventListener("click", () => void sendMessage());
    el<HTMLInputElement>("chat-input").addEventListener("keydown", (event) => {
        if (event.key === "Enter" && !event.shiftKey) {
            event.preventDefault();
            void sendMessage();
        }
    });
    el<HTMLDivElement>("chat-log").addEventListener("click", (event) => {
        const target = event.target as HTMLElement;
        const traceId = target.dataset.traceId;
        if (!traceId) {
            return;
        }
        if (target.classList.contains("inspect")) {
            void inspectTrace(traceId);
        } else if (target.classList.contains("feedback")) {
            void submitFeedback(traceId, target.dataset.rating as "up" | "down");
        }
    });
}

if (typeof document !== "undefined" && document.getElementById("chat-log")) {
    document.addEventListener("DOMContentLoaded", start);
    if (document.readyState !== "loading") {
        start();
    }
}
