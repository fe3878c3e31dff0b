"""Single audited egress for every model call.

All generation goes through ``Gateway.chat``: the request is rate- and
quota-checked, forwarded to the owning provider, and exactly one audit
record is appended whether the call succeeded, was rejected, or failed.
Costs are settled post-paid in exact decimal arithmetic against a
per-subscription ledger, so a request may overshoot the quota once and
the next one is refused.

Providers are pluggable: the deterministic scripted mock keeps the whole
engine testable offline, and ``http_chat`` adapts any real endpoint that
speaks the minimal JSON chat shape.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import ROUND_HALF_EVEN, Decimal

import httpx

from .errors import (
    ConfigInvalid,
    ProviderError,
    ProviderTimeout,
    QuotaExceeded,
    RateLimited,
    Unauthorized,
    UnknownModel,
    UnknownSubscription,
)
from .tokens import tokenize

CENT_MICRO = Decimal("0.000001")
RATE_WINDOW_S = 60.0
AUDITOR_ROLE = "auditor"


# -- mock provider ----------------------------------------------------------

@dataclass(frozen=True)
class MockRule:
    matcher: str
    response: str = ""
    regex: bool = False
    error: str | None = None  # raise ProviderError instead of responding

    def matches(self, message: str) -> bool:
        if self.regex:
            return re.search(self.matcher, message) is not None
        return self.matcher in message


@dataclass(frozen=True)
class MockScript:
    """Ordered first-match-wins rules; unmatched input echoes back."""

    rules: tuple[MockRule, ...] = ()

    def respond(self, last_user_message: str) -> str:
        for rule in self.rules:
            if rule.matches(last_user_message):
                if rule.error is not None:
                    raise ProviderError(rule.error)
                return rule.response
        return "ECHO: " + last_user_message

    @classmethod
    def from_dict(cls, data: dict) -> "MockScript":
        rules = []
        for i, r in enumerate(data.get("rules", [])):
            if "match" not in r:
                raise ConfigInvalid(f"mock script rule {i}: missing 'match'")
            rules.append(MockRule(
                matcher=r["match"],
                response=r.get("response", ""),
                regex=bool(r.get("regex", False)),
                error=r.get("error"),
            ))
        return cls(rules=tuple(rules))

    @classmethod
    def load(cls, path) -> "MockScript":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


# -- provider configs -------------------------------------------------------

@dataclass(frozen=True)
class ProviderConfig:
    provider_id: str
    kind: str  # mock | http_chat
    model_ids: tuple[str, ...]
    prompt_price_per_1k: Decimal = Decimal("0")
    completion_price_per_1k: Decimal = Decimal("0")
    endpoint: str = ""
    timeout_s: float = 30.0
    script: MockScript = field(default_factory=MockScript)

    def validate(self) -> None:
        if self.kind not in ("mock", "http_chat"):
            raise ConfigInvalid(f"provider {self.provider_id}: unknown kind {self.kind!r}")
        if self.kind == "http_chat" and not self.endpoint:
            raise ConfigInvalid(f"provider {self.provider_id}: http_chat requires an endpoint")
        if self.prompt_price_per_1k < 0 or self.completion_price_per_1k < 0:
            raise ConfigInvalid(f"provider {self.provider_id}: prices must be >= 0")
        if not self.model_ids:
            raise ConfigInvalid(f"provider {self.provider_id}: no model_ids")

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "ProviderConfig":
        price = data.get("price", {})
        script = MockScript()
        if "script" in data:
            script = MockScript.from_dict(data["script"])
        elif "script_path" in data:
            path = data["script_path"]
            if base_dir is not None:
                from pathlib import Path

                path = Path(base_dir) / path
            script = MockScript.load(path)
        cfg = cls(
            provider_id=data["provider_id"],
            kind=data["kind"],
            model_ids=tuple(data.get("model_ids", [])),
            prompt_price_per_1k=Decimal(str(price.get("prompt_per_1k", "0"))),
            completion_price_per_1k=Decimal(str(price.get("completion_per_1k", "0"))),
            endpoint=data.get("endpoint", ""),
            timeout_s=float(data.get("timeout_s", 30.0)),
            script=script,
        )
        cfg.validate()
        return cfg


# -- requests / responses ----------------------------------------------------

@dataclass(frozen=True)
class ChatRequest:
    subscription_id: str
    model_id: str
    messages: tuple[tuple[str, str], ...]  # (role, text)
    max_tokens: int = 1024

    def last_user_message(self) -> str:
        for role, text in reversed(self.messages):
            if role == "user":
                return text
        return ""

    def payload(self) -> dict:
        return {
            "subscription_id": self.subscription_id,
            "model_id": self.model_id,
            "messages": [{"role": r, "text": t} for r, t in self.messages],
            "max_tokens": self.max_tokens,
        }

    def digest(self) -> str:
        canonical = json.dumps(self.payload(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    provider_latency_ms: float


@dataclass(frozen=True)
class AuditRecord:
    audit_id: int
    timestamp: str  # ISO 8601 UTC
    subscription_id: str
    model_id: str
    request_digest: str
    request: dict
    response: dict
    prompt_tokens: int
    completion_tokens: int
    cost: Decimal
    outcome: str  # ok | rejected | error

    def to_json(self) -> dict:
        rec = self.__dict__.copy()
        rec["cost"] = str(self.cost)
        return rec

    @classmethod
    def from_json(cls, rec: dict) -> "AuditRecord":
        rec = dict(rec)
        rec["cost"] = Decimal(rec["cost"])
        return cls(**rec)


class _Subscription:
    def __init__(self) -> None:
        self.quota: Decimal | None = None  # None = unlimited
        self.rate_limit: int | None = None  # requests per minute
        self.spent = Decimal("0")
        self.window: deque[float] = deque()


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


class Gateway:
    """Provider registry, audit log, cost ledger, and rate limiting."""

    def __init__(self, audit_path=None, time_fn=time.monotonic,
                 http_transport: httpx.BaseTransport | None = None):
        self._lock = threading.Lock()
        self._providers: dict[str, ProviderConfig] = {}
        self._by_model: dict[str, ProviderConfig] = {}
        self._subs: dict[str, _Subscription] = {}
        self._records: list[AuditRecord] = []
        self._time = time_fn
        self._http_transport = http_transport
        self._audit_path = audit_path
        self._audit_file = None
        if audit_path is not None:
            self._load_audit(audit_path)
            self._audit_file = open(audit_path, "a", encoding="utf-8")

    def _load_audit(self, path) -> None:
        try:
            f = open(path, encoding="utf-8")
        except FileNotFoundError:
            return
        with f:
            for line in f:
                if not line.strip():
                    continue
                rec = AuditRecord.from_json(json.loads(line))
                self._records.append(rec)
                sub = self._subs.setdefault(rec.subscription_id, _Subscription())
                if rec.outcome == "ok":
                    sub.spent += rec.cost

    # -- administration ---------------------------------------------------

    def register_provider(self, cfg: ProviderConfig) -> None:
        cfg.validate()
        with self._lock:
            self._providers[cfg.provider_id] = cfg
            for model_id in cfg.model_ids:
                self._by_model[model_id] = cfg

    def set_quota(self, subscription_id: str, units) -> None:
        quota = None if units is None else Decimal(str(units))
        if quota is not None and quota < 0:
            raise ConfigInvalid("quota must be >= 0")
        with self._lock:
            self._subs.setdefault(subscription_id, _Subscription()).quota = quota

    def set_rate_limit(self, subscription_id: str, requests_per_minute: int | None) -> None:
        if requests_per_minute is not None and requests_per_minute < 1:
            raise ConfigInvalid("rate limit must be >= 1")
        with self._lock:
            self._subs.setdefault(subscription_id, _Subscription()).rate_limit = requests_per_minute

    def models(self) -> list[str]:
        with self._lock:
            return sorted(self._by_model)

    # -- chat --------------------------------------------------------------

    def chat(self, req: ChatRequest) -> ChatResponse:
        """Run one model call with auditing; every attempt leaves a record."""
        prompt_tokens = len(tokenize("\n".join(t for _, t in req.messages)))
        started = self._time()

        with self._lock:
            provider = self._by_model.get(req.model_id)
            sub = self._subs.setdefault(req.subscription_id, _Subscription())
            if provider is None:
                self._append_record(req, prompt_tokens, 0, Decimal("0"), "rejected",
                                    {"error_code": "unknown_model"})
                raise UnknownModel(f"model {req.model_id!r} is not registered")
            now = self._time()
            if sub.rate_limit is not None:
                while sub.window and now - sub.window[0] >= RATE_WINDOW_S:
                    sub.window.popleft()
                if len(sub.window) >= sub.rate_limit:
                    self._append_record(req, prompt_tokens, 0, Decimal("0"), "rejected",
                                        {"error_code": "rate_limited"})
                    raise RateLimited(
                        f"subscription {req.subscription_id!r} exceeded "
                        f"{sub.rate_limit} requests/minute"
                    )
            if sub.quota is not None and sub.spent >= sub.quota:
                self._append_record(req, prompt_tokens, 0, Decimal("0"), "rejected",
                                    {"error_code": "quota_exceeded"})
                raise QuotaExceeded(
                    f"subscription {req.subscription_id!r} spent {sub.spent} "
                    f"of quota {sub.quota}"
                )
            if sub.rate_limit is not None:
                sub.window.append(now)

        try:
            text = self._invoke(provider, req)
        except ProviderError as e:
            latency_ms = (self._time() - started) * 1000.0
            with self._lock:
                self._append_record(
                    req, prompt_tokens, 0, Decimal("0"), "error",
                    {"error_code": "provider_timeout" if isinstance(e, ProviderTimeout)
                     else "provider_error", "error": str(e),
                     "provider_latency_ms": latency_ms},
                )
            raise

        latency_ms = (self._time() - started) * 1000.0
        completion_tokens = len(tokenize(text))
        cost = self._cost(provider, prompt_tokens, completion_tokens)
        response = ChatResponse(
            text=text,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            provider_latency_ms=latency_ms,
        )
        with self._lock:
            self._append_record(
                req, prompt_tokens, completion_tokens, cost, "ok",
                {"text": text, "prompt_tokens": prompt_tokens,
                 "completion_tokens": completion_tokens,
                 "provider_latency_ms": latency_ms},
            )
            self._subs[req.subscription_id].spent += cost
        return response

    def _invoke(self, provider: ProviderConfig, req: ChatRequest) -> str:
        if provider.kind == "mock":
            return provider.script.respond(req.last_user_message())
        return _http_chat(provider, req, transport=self._http_transport)

    @staticmethod
    def _cost(provider: ProviderConfig, prompt_tokens: int, completion_tokens: int) -> Decimal:
        raw = (
            Decimal(prompt_tokens) / 1000 * provider.prompt_price_per_1k
            + Decimal(completion_tokens) / 1000 * provider.completion_price_per_1k
        )
        return raw.quantize(CENT_MICRO, rounding=ROUND_HALF_EVEN)

    def _append_record(self, req: ChatRequest, prompt_tokens: int,
                       completion_tokens: int, cost: Decimal, outcome: str,
                       response_payload: dict) -> None:
        # caller holds the lock
        record = AuditRecord(
            audit_id=len(self._records) + 1,
            timestamp=_now_iso(),
            subscription_id=req.subscription_id,
            model_id=req.model_id,
            request_digest=req.digest(),
            request=req.payload(),
            response=response_payload,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            cost=cost,
            outcome=outcome,
        )
        self._records.append(record)
        if self._audit_file is not None:
            self._audit_file.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
            self._audit_file.flush()

    # -- reporting ----------------------------------------------------------

    def usage_report(self, subscription_id: str, since: str | None = None,
                     until: str | None = None) -> dict:
        """Aggregate spend for one subscription over an optional time window."""
        with self._lock:
            if subscription_id not in self._subs:
                raise UnknownSubscription(f"unknown subscription {subscription_id!r}")
            records = [r for r in self._records if r.subscription_id == subscription_id]
        records = _filter_window(records, since, until)
        per_model: dict[str, dict] = {}
        total = Decimal("0")
        for r in records:
            entry = per_model.setdefault(r.model_id, {"cost": Decimal("0"), "requests": 0})
            entry["cost"] += r.cost
            entry["requests"] += 1
            total += r.cost
        return {
            "subscription_id": subscription_id,
            "total_cost": total,
            "total_requests": len(records),
            "per_model": per_model,
        }

    def ledger_balance(self, subscription_id: str) -> Decimal:
        with self._lock:
            if subscription_id not in self._subs:
                raise UnknownSubscription(f"unknown subscription {subscription_id!r}")
            return self._subs[subscription_id].spent

    def audit_query(self, caller_role: str, subscription_id: str | None = None,
                    model_id: str | None = None, since: str | None = None,
                    until: str | None = None) -> list[AuditRecord]:
        """Audit records in id order; callers must hold the auditor role."""
        if caller_role != AUDITOR_ROLE:
            raise Unauthorized("audit access requires the auditor role")
        with self._lock:
            records = list(self._records)
        if subscription_id is not None:
            records = [r for r in records if r.subscription_id == subscription_id]
        if model_id is not None:
            records = [r for r in records if r.model_id == model_id]
        return _filter_window(records, since, until)

    def audit_count(self) -> int:
        with self._lock:
            return len(self._records)

    def close(self) -> None:
        if self._audit_file is not None:
            self._audit_file.close()
            self._audit_file = None


def _filter_window(records: list[AuditRecord], since: str | None,
                   until: str | None) -> list[AuditRecord]:
    if since is not None:
        records = [r for r in records if r.timestamp >= since]
    if until is not None:
        records = [r for r in records if r.timestamp < until]
    return records


def _http_chat(provider: ProviderConfig, req: ChatRequest,
               transport: httpx.BaseTransport | None = None) -> str:
    """POST the neutral chat shape to a real endpoint and return its text."""
    body = {
        "model": req.model_id,
        "messages": [{"role": r, "content": t} for r, t in req.messages],
        "max_tokens": req.max_tokens,
    }
    try:
        with httpx.Client(timeout=provider.timeout_s, transport=transport) as client:
            resp = client.post(provider.endpoint, json=body)
    except httpx.TimeoutException as e:
        raise ProviderTimeout(f"provider {provider.provider_id}: {e}") from None
    except httpx.HTTPError as e:
        raise ProviderError(f"provider {provider.provider_id}: {e}") from None
    if resp.status_code != 200:
        raise ProviderError(
            f"provider {provider.provider_id}: HTTP {resp.status_code}"
        )
    try:
        return str(resp.json()["text"])
    except (KeyError, ValueError) as e:
        raise ProviderError(f"provider {provider.provider_id}: bad response: {e}") from None
