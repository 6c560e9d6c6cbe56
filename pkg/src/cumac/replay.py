"""Drive the engine over a parsed trace and collect a report.

A replay is deterministic: the same trace, config and store contents yield
the same decision log byte for byte. In Secure mode the store is augmented
with learned exceptions; in Unsecure mode it is strictly read-only.

Timing uses a monotonic clock and reports medians so a stray slow event
cannot skew throughput claims.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from statistics import fmean, median
from time import perf_counter, perf_counter_ns
from typing import Any

from .engine import Engine, EngineConfig
from .model import Decision, Event, Verdict, entity_sort_key
from .store import EnvironmentBit, ExceptionStore
from .trace import EVENT_VERBS, Trace


@dataclass(slots=True)
class TimingStats:
    wall_seconds: float = 0.0
    events_per_second: float = 0.0
    median_us: float = 0.0
    mean_us: float = 0.0
    max_us: float = 0.0

    def to_dict(self) -> dict[str, float]:
        return {
            "wall_seconds": round(self.wall_seconds, 6),
            "events_per_second": round(self.events_per_second, 1),
            "median_us": round(self.median_us, 3),
            "mean_us": round(self.mean_us, 3),
            "max_us": round(self.max_us, 3),
        }


@dataclass(slots=True)
class ReplayReport:
    """Everything one replay produced: the decision log, final taint set,
    counters and timing. Counter totals always equal the event count."""

    mode: EnvironmentBit
    label: str
    event_count: int
    log: list[tuple[Event, Decision]]
    final_taint: list[str]
    allows: int
    denies_by_reason: dict[str, int]
    exception_allows: int
    learned_exceptions: int
    timing: TimingStats = field(default_factory=TimingStats)

    @property
    def deny_count(self) -> int:
        return sum(self.denies_by_reason.values())

    def denials(self) -> list[tuple[Event, Decision]]:
        return [(ev, d) for ev, d in self.log if d.verdict is Verdict.DENY]

    def decision_rows(self) -> list[dict[str, Any]]:
        """The decision log in serializable, deterministic form."""
        rows = []
        for ev, decision in self.log:
            args = dataclasses.asdict(ev)
            del args["seq"]
            if "channel" in args:
                args["channel"] = args["channel"].value
            rows.append(
                {
                    "seq": ev.seq,
                    "event": EVENT_VERBS[type(ev)],
                    "args": args,
                    "verdict": decision.verdict.value,
                    "reason": decision.reason.value,
                    "exception_kind": decision.exception_kind.value,
                    "taint_updates": [
                        [entity, old.value, new.value]
                        for entity, old, new in decision.taint_updates
                    ],
                }
            )
        return rows

    def to_structured(self, include_decisions: bool = True) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "summary": {
                "mode": self.mode.value,
                "label": self.label,
                "events": self.event_count,
                "allows": self.allows,
                "denies": dict(sorted(self.denies_by_reason.items())),
                "deny_total": self.deny_count,
                "exception_allows": self.exception_allows,
                "learned_exceptions": self.learned_exceptions,
            },
            "decisions": self.decision_rows() if include_decisions else [],
            "taint": list(self.final_taint),
            "timing": self.timing.to_dict(),
        }
        return doc

    def to_text(self) -> str:
        lines = [
            f"mode: {self.mode.value}",
            f"label: {self.label}",
            f"events: {self.event_count}",
            f"allowed: {self.allows}",
            f"allowed by exception: {self.exception_allows}",
        ]
        if self.deny_count:
            reasons = ", ".join(
                f"{reason}" if count == 1 else f"{count}x {reason}"
                for reason, count in sorted(self.denies_by_reason.items())
            )
            lines.append(f"{self.deny_count} denied ({reasons})")
            for ev, decision in self.denials():
                lines.append(
                    f"  event {ev.seq} {EVENT_VERBS[type(ev)]}: {decision.reason.value}"
                )
        else:
            lines.append("0 denied")
        if self.mode is EnvironmentBit.SECURE:
            lines.append(f"learned exceptions: {self.learned_exceptions}")
        lines.append(
            "tainted: " + (" ".join(self.final_taint) if self.final_taint else "(none)")
        )
        lines.append(
            f"timing: {self.timing.wall_seconds:.4f}s wall,"
            f" {self.timing.events_per_second:.0f} events/s,"
            f" median {self.timing.median_us:.1f}us"
        )
        return "\n".join(lines) + "\n"


def replay(
    trace: Trace,
    mode: EnvironmentBit,
    store: ExceptionStore | None = None,
    config: EngineConfig | None = None,
) -> ReplayReport:
    """Replay a trace in the given environment.

    The store's environment bit is set to ``mode`` for the whole run. A
    missing store means an empty one. Trace errors abort the replay and
    propagate with the offending sequence number.
    """
    if store is None:
        store = ExceptionStore()
    store.bit = mode
    config = config or EngineConfig.from_trace(trace)
    engine = Engine(config, store)
    learned_before = store.triple_count()

    durations: list[int] = []
    append_duration = durations.append
    step = engine.step
    wall_start = perf_counter()
    for ev in trace.events:
        t0 = perf_counter_ns()
        step(ev)
        append_duration(perf_counter_ns() - t0)
    wall = perf_counter() - wall_start

    allows = 0
    exception_allows = 0
    denies: dict[str, int] = {}
    for _, decision in engine.decision_log:
        verdict = decision.verdict
        if verdict is Verdict.ALLOW:
            allows += 1
        elif verdict is Verdict.ALLOW_BY_EXCEPTION:
            exception_allows += 1
        else:
            reason = decision.reason.value
            denies[reason] = denies.get(reason, 0) + 1

    timing = TimingStats()
    if durations:
        timing.wall_seconds = wall
        timing.events_per_second = len(durations) / wall if wall > 0 else 0.0
        timing.median_us = median(durations) / 1000.0
        timing.mean_us = fmean(durations) / 1000.0
        timing.max_us = max(durations) / 1000.0

    return ReplayReport(
        mode=mode,
        label=trace.header.label,
        event_count=len(trace.events),
        log=engine.decision_log,
        final_taint=sorted(engine.tainted_entities(), key=entity_sort_key),
        allows=allows,
        denies_by_reason=denies,
        exception_allows=exception_allows,
        learned_exceptions=store.triple_count() - learned_before,
        timing=timing,
    )


def learn(trace: Trace, store: ExceptionStore | None = None, config: EngineConfig | None = None) -> tuple[ReplayReport, ExceptionStore]:
    """Convenience wrapper: replay in the Secure environment, returning the
    augmented store alongside the report."""
    if store is None:
        store = ExceptionStore()
    report = replay(trace, EnvironmentBit.SECURE, store, config)
    return report, store
