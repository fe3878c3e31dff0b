"""Input blocking and output redaction enforcing enterprise policy.

Queries are screened before any model call; answers are scrubbed after
generation. Rules live in a JSON policy file so deployments can extend
them without code changes. Blocked queries never reach the gateway.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .errors import ConfigInvalid
from .ingest import Sensitivity

DEFAULT_REFUSAL = "I can't help with that request."
DEFAULT_FAILURE = "Sorry, something went wrong while generating an answer. Please try again."

_EMAIL_RE = r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}"
_SSN_RE = r"(?<!\d)\d{3}-\d{2}-\d{4}(?!\d)"
# 13 to 19 digits, single spaces or dashes allowed between digits
_CARD_RE = r"(?<!\d)\d(?:[ -]?\d){12,18}(?!\d)"

_KIND_PATTERNS = {
    "email": _EMAIL_RE,
    "ssn_like": _SSN_RE,
    "credit_card_luhn": _CARD_RE,
}


def luhn_valid(digits: str) -> bool:
    """Checksum over a plain digit string (no separators)."""
    total = 0
    for pos, ch in enumerate(reversed(digits)):
        d = int(ch)
        if pos % 2 == 1:
            d *= 2
            if d > 9:
                d -= 9
        total += d
    return total % 10 == 0


@dataclass(frozen=True)
class BlockRule:
    pattern: re.Pattern
    reason: str


@dataclass(frozen=True)
class RedactionRule:
    name: str
    kind: str
    pattern: re.Pattern
    label: str


@dataclass(frozen=True)
class GuardrailPolicy:
    input_block_rules: tuple[BlockRule, ...]
    redaction_rules: tuple[RedactionRule, ...]
    refusal_message: str = DEFAULT_REFUSAL

    @classmethod
    def from_dict(cls, data: dict) -> "GuardrailPolicy":
        blocks = []
        for i, rule in enumerate(data.get("input_block_patterns", [])):
            try:
                pattern = re.compile(rule["pattern"], re.IGNORECASE | re.DOTALL)
            except (re.error, KeyError, TypeError) as e:
                raise ConfigInvalid(f"input_block_patterns[{i}]: {e}") from None
            blocks.append(BlockRule(pattern=pattern, reason=rule.get("reason", "blocked")))
        redactions = []
        for i, rule in enumerate(data.get("redaction_rules", [])):
            kind = rule.get("kind")
            label = rule.get("label", "")
            if not label:
                raise ConfigInvalid(f"redaction_rules[{i}]: replacement label must be non-empty")
            if kind in _KIND_PATTERNS:
                pattern = re.compile(_KIND_PATTERNS[kind])
            elif kind == "custom_regex":
                try:
                    pattern = re.compile(rule["pattern"])
                except (re.error, KeyError, TypeError) as e:
                    raise ConfigInvalid(f"redaction_rules[{i}]: {e}") from None
            else:
                raise ConfigInvalid(f"redaction_rules[{i}]: unknown kind {kind!r}")
            redactions.append(RedactionRule(
                name=rule.get("name", kind), kind=kind, pattern=pattern, label=label,
            ))
        return cls(
            input_block_rules=tuple(blocks),
            redaction_rules=tuple(redactions),
            refusal_message=data.get("refusal_message", DEFAULT_REFUSAL),
        )

    @classmethod
    def load(cls, path) -> "GuardrailPolicy":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def default_policy() -> GuardrailPolicy:
    return GuardrailPolicy.from_dict({
        "input_block_patterns": [
            {"pattern": r"ignore (all |any )?(previous|prior) instructions", "reason": "prompt_injection"},
            {"pattern": r"reveal (your|the) (system )?prompt", "reason": "prompt_injection"},
        ],
        "redaction_rules": [
            {"name": "email", "kind": "email", "label": "[REDACTED:EMAIL]"},
            {"name": "ssn", "kind": "ssn_like", "label": "[REDACTED:SSN]"},
            {"name": "card", "kind": "credit_card_luhn", "label": "[REDACTED:CARD]"},
        ],
        "refusal_message": DEFAULT_REFUSAL,
    })


def check_input(query: str, policy: GuardrailPolicy) -> str | None:
    """Reason label of the first matching block rule, or None to allow."""
    for rule in policy.input_block_rules:
        if rule.pattern.search(query):
            return rule.reason
    return None


@dataclass
class RedactionResult:
    text: str
    redactions: list[dict]  # [{"rule": name, "count": n}]

    @property
    def total(self) -> int:
        return sum(r["count"] for r in self.redactions)


def redact_output(text: str, policy: GuardrailPolicy) -> RedactionResult:
    """Replace sensitive spans with rule labels, in policy order.

    Digit runs that look like card numbers are only replaced when they
    pass the Luhn checksum; everything else the rules match is replaced
    unconditionally. Applying the redaction twice changes nothing.
    """
    redactions: list[dict] = []
    for rule in policy.redaction_rules:
        count = 0

        def _sub(m: re.Match) -> str:
            nonlocal count
            if rule.kind == "credit_card_luhn":
                digits = re.sub(r"[ -]", "", m.group(0))
                if not (13 <= len(digits) <= 19 and luhn_valid(digits)):
                    return m.group(0)
            count += 1
            return rule.label

        text = rule.pattern.sub(_sub, text)
        if count:
            redactions.append({"rule": rule.name, "count": count})
    return RedactionResult(text=text, redactions=redactions)


def filter_sensitive_hits(hits: list, clearance: Sensitivity) -> list:
    """Drop hits above the clearance level.

    Defense in depth: the index already filters during retrieval, so
    this should never remove anything on the normal path.
    """
    return [h for h in hits if h.chunk is None or h.chunk.sensitivity <= clearance]
