"""Per-request execution traces and their durable store.

Every answer records one stage per pipeline step: what went in, what
came out (as digests plus a structured detail map), and how long it
took. Traces are the unit of debugging: they show how the query was
rephrased, which chunks were retrieved with which scores, the final
prompt, and the citation mapping.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import asdict, dataclass, field

from .errors import NotFound


def canonical_digest(obj) -> str:
    """sha256 hex of the canonical JSON serialization of obj."""
    canonical = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class StageRecord:
    stage_name: str
    started_at: str  # ISO 8601 UTC
    duration_ms: float
    input_digest: str
    output_digest: str
    detail: dict = field(default_factory=dict)


@dataclass
class Trace:
    trace_id: str
    request_id: str
    stages: list[StageRecord] = field(default_factory=list)

    def stage_names(self) -> list[str]:
        return [s.stage_name for s in self.stages]

    def stage(self, name: str) -> StageRecord:
        for s in self.stages:
            if s.stage_name == name:
                return s
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "trace_id": self.trace_id,
            "request_id": self.request_id,
            "stages": [asdict(s) for s in self.stages],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Trace":
        return cls(
            trace_id=data["trace_id"],
            request_id=data["request_id"],
            stages=[StageRecord(**s) for s in data["stages"]],
        )


class TraceStore:
    """Append-style store; re-storing a trace_id replaces the stored trace."""

    def __init__(self, path=None):
        self._lock = threading.Lock()
        self._traces: dict[str, Trace] = {}
        self._path = path
        self._file = None
        if path is not None:
            self._load(path)
            self._file = open(path, "a", encoding="utf-8")

    def _load(self, path) -> None:
        try:
            f = open(path, encoding="utf-8")
        except FileNotFoundError:
            return
        with f:
            for line in f:
                if line.strip():
                    trace = Trace.from_json(json.loads(line))
                    self._traces[trace.trace_id] = trace  # last write wins

    def store(self, trace: Trace) -> None:
        with self._lock:
            self._traces[trace.trace_id] = trace
            if self._file is not None:
                self._file.write(json.dumps(trace.to_json(), sort_keys=True) + "\n")
                self._file.flush()

    def get(self, trace_id: str) -> Trace:
        with self._lock:
            trace = self._traces.get(trace_id)
        if trace is None:
            raise NotFound(f"no trace with id {trace_id!r}")
        return trace

    def by_request(self, request_id: str) -> list[Trace]:
        with self._lock:
            return [t for t in self._traces.values() if t.request_id == request_id]

    def __len__(self) -> int:
        with self._lock:
            return len(self._traces)

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None
