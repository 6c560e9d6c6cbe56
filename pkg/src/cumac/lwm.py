"""Low-Water-Mark integrity baseline over the same event vocabulary.

A classic two-level integrity engine: a subject's level drops to the
minimum of what it reads (exec counts as a read of the binary), a write
below one's own level is refused, and levels never rise. Its purpose here
is contrast: it refuses benign accesses the tracing engine allows, most
famously the self-revocation pattern, where a process loses the right to
write a file it created itself after reading any low-integrity data.

Mapping choices, also disclosed in every comparison report:

* Initial levels mirror the tracing engine's entrances so both models see
  the same threat surface: files reachable from a mobile mount and
  processes that ever face the network or an untrusted login start Low,
  everything else starts High.
* Privileged operations are treated as writes to a notional High object,
  so a Low subject's privileged operation is refused.
* Create checks the parent directory's level and the new object adopts
  the creator's level (Low when created under a live mobile mount).
* Copy is read-then-write: the subject's level first drops to the
  source's, then the write/create check runs against the destination.
* Denials are inert, matching the tracing engine's discipline; for trace
  compatibility a refused create still registers the object id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any

from .engine import Engine, EngineConfig, _covers, _parent_path
from .errors import TraceError
from .model import (
    ALLOW,
    Copy,
    Create,
    Decision,
    DenyReason,
    Event,
    Exec,
    Fork,
    Ipc,
    Login,
    Mount,
    PrivOp,
    Read,
    RemoteComm,
    Unmount,
    Verdict,
    Write,
)
from .store import ExceptionStore
from .trace import EVENT_VERBS, Trace

MAPPING_NOTES = (
    "low-water-mark mapping: initial levels mirror intrusion entrances"
    " (mobile-mount files and remote-facing or untrusted-login processes start Low);"
    " privileged operations count as writes to a notional High object;"
    " exec counts as a read of the binary."
)

_DENY_WRITE = Decision(Verdict.DENY, DenyReason.INTEGRITY_WRITE)
_DENY_PRIV = Decision(Verdict.DENY, DenyReason.PRIVILEGED_OP)


class IntegrityLevel(IntEnum):
    LOW = 0
    HIGH = 1


class LwmEngine:
    """Two-level low-water-mark engine driven by the shared event types."""

    def __init__(self, trace: Trace, config: EngineConfig | None = None):
        self.config = config or EngineConfig.from_trace(trace)
        self.subject_levels: dict[int, IntegrityLevel] = {}
        self.object_levels: dict[int, IntegrityLevel] = {}
        self.decision_log: list[tuple[Event, Decision]] = []
        self._fid_by_path: dict[str, int] = {}
        self._dir_fids: set[int] = set()
        self._mounts: dict[int, str] = {}
        self._next_fid = 0

        low_pids, mobile_prefixes = self._prescan(trace)
        for proc in trace.header.processes:
            level = IntegrityLevel.LOW if proc.pid in low_pids else IntegrityLevel.HIGH
            self.subject_levels[proc.pid] = level
        for f in trace.header.files:
            mobile = any(_covers(prefix, f.path) for prefix in mobile_prefixes)
            self.object_levels[f.fid] = IntegrityLevel.LOW if mobile else IntegrityLevel.HIGH
            self._fid_by_path[f.path] = f.fid
            if f.is_directory:
                self._dir_fids.add(f.fid)
        self._low_pids = low_pids
        self._next_fid = max((f.fid for f in trace.header.files), default=0) + 1

    def _prescan(self, trace: Trace) -> tuple[set[int], set[str]]:
        """Entrance-mirroring initial assignment: which pids ever face the
        network or an untrusted login, and which prefixes ever mount."""
        low_pids: set[int] = set()
        prefixes: set[str] = set()
        for ev in trace.events:
            if isinstance(ev, RemoteComm):
                if not any(ev.peer_address.startswith(p) for p in self.config.loopback_prefixes):
                    low_pids.add(ev.pid)
            elif isinstance(ev, Login):
                user = self.config.users.get(ev.user)
                if user is None or not user.trusted:
                    low_pids.add(ev.pid)
            elif isinstance(ev, Mount):
                prefixes.add(ev.path_prefix)
        return low_pids, prefixes

    # -- helpers ----------------------------------------------------------------

    def _need_subject(self, seq: int, pid: int) -> IntegrityLevel:
        level = self.subject_levels.get(pid)
        if level is None:
            raise TraceError(seq, f"unknown pid {pid}")
        return level

    def _need_object(self, seq: int, fid: int) -> IntegrityLevel:
        level = self.object_levels.get(fid)
        if level is None:
            raise TraceError(seq, f"unknown fid {fid}")
        return level

    def _under_live_mount(self, path: str) -> bool:
        return any(_covers(prefix, path) for prefix in self._mounts.values())

    def _birth_level(self, subject: IntegrityLevel, path: str) -> IntegrityLevel:
        if self._under_live_mount(path):
            return IntegrityLevel.LOW
        return subject

    def _register(self, path: str, level: IntegrityLevel, is_dir: bool) -> int:
        fid = self._next_fid
        self._next_fid += 1
        self.object_levels[fid] = level
        self._fid_by_path[path] = fid
        if is_dir:
            self._dir_fids.add(fid)
        return fid

    # -- the step rule -------------------------------------------------------------

    def step(self, event: Event) -> Decision:
        decision = self._apply(event)
        self.decision_log.append((event, decision))
        return decision

    def _apply(self, ev: Event) -> Decision:
        if isinstance(ev, Read):
            subject = self._need_subject(ev.seq, ev.pid)
            obj = self._need_object(ev.seq, ev.fid)
            if obj < subject:
                self.subject_levels[ev.pid] = obj
            return ALLOW
        if isinstance(ev, Exec):
            # Exec reads the binary, so the subject's level drops with it.
            subject = self._need_subject(ev.seq, ev.pid)
            obj = self._need_object(ev.seq, ev.fid)
            if obj < subject:
                self.subject_levels[ev.pid] = obj
            return ALLOW
        if isinstance(ev, Write):
            subject = self._need_subject(ev.seq, ev.pid)
            obj = self._need_object(ev.seq, ev.fid)
            return _DENY_WRITE if subject < obj else ALLOW
        if isinstance(ev, Create):
            subject = self._need_subject(ev.seq, ev.pid)
            parent = self._parent_level(ev.seq, ev.path)
            denied = subject < parent
            # Register the object either way so later references resolve.
            self._register(ev.path, self._birth_level(subject, ev.path), ev.is_directory)
            return _DENY_WRITE if denied else ALLOW
        if isinstance(ev, Copy):
            subject = self._need_subject(ev.seq, ev.pid)
            src = self._need_object(ev.seq, ev.src_fid)
            dropped = min(subject, src)
            dst_fid = self._fid_by_path.get(ev.dst_path)
            if dst_fid is None:
                parent = self._parent_level(ev.seq, ev.dst_path)
                denied = dropped < parent
                if denied:
                    self._register(
                        ev.dst_path,
                        self._birth_level(dropped, ev.dst_path),
                        ev.src_fid in self._dir_fids,
                    )
                    return _DENY_WRITE
                self.subject_levels[ev.pid] = dropped
                self._register(
                    ev.dst_path,
                    self._birth_level(dropped, ev.dst_path),
                    ev.src_fid in self._dir_fids,
                )
                return ALLOW
            if dropped < self.object_levels[dst_fid]:
                return _DENY_WRITE
            self.subject_levels[ev.pid] = dropped
            return ALLOW
        if isinstance(ev, Fork):
            parent = self._need_subject(ev.seq, ev.parent_pid)
            if ev.child_pid in self.subject_levels:
                raise TraceError(ev.seq, f"pid {ev.child_pid} already live")
            level = parent
            if ev.child_pid in self._low_pids:
                level = IntegrityLevel.LOW
            self.subject_levels[ev.child_pid] = level
            return ALLOW
        if isinstance(ev, PrivOp):
            subject = self._need_subject(ev.seq, ev.pid)
            return _DENY_PRIV if subject < IntegrityLevel.HIGH else ALLOW
        if isinstance(ev, Mount):
            self._mounts[ev.mount_id] = ev.path_prefix
            for path, fid in self._fid_by_path.items():
                if _covers(ev.path_prefix, path):
                    self.object_levels[fid] = IntegrityLevel.LOW
            return ALLOW
        if isinstance(ev, Unmount):
            self._mounts.pop(ev.mount_id, None)
            return ALLOW
        if isinstance(ev, (RemoteComm, Login)):
            self._need_subject(ev.seq, ev.pid)
            return ALLOW
        if isinstance(ev, Ipc):
            self._need_subject(ev.seq, ev.from_pid)
            self._need_subject(ev.seq, ev.to_pid)
            return ALLOW
        if isinstance(ev, Event):
            return ALLOW
        raise TraceError(getattr(ev, "seq", 0), f"unknown event kind {type(ev).__name__}")

    def _parent_level(self, seq: int, path: str) -> IntegrityLevel:
        parent_fid = self._fid_by_path.get(_parent_path(path))
        if parent_fid is None:
            raise TraceError(seq, f"parent directory of {path!r} does not exist")
        return self.object_levels[parent_fid]


def run_lwm(trace: Trace, config: EngineConfig | None = None) -> list[tuple[Event, Decision]]:
    engine = LwmEngine(trace, config)
    for ev in trace.events:
        engine.step(ev)
    return engine.decision_log


# -- side-by-side comparison ----------------------------------------------------


@dataclass(slots=True)
class ComparisonReport:
    """Per-event verdicts of both engines plus the denial-set difference.

    On a benign-labelled trace every denial is a false negative (a benign
    access wrongly refused); on an attack-labelled trace denials of the
    critical steps are true positives.
    """

    label: str
    event_count: int
    rows: list[dict[str, Any]]
    lwm_only: list[int] = field(default_factory=list)
    both: list[int] = field(default_factory=list)
    cumac_only: list[int] = field(default_factory=list)
    notes: str = MAPPING_NOTES

    @property
    def cumac_deny_count(self) -> int:
        return len(self.both) + len(self.cumac_only)

    @property
    def lwm_deny_count(self) -> int:
        return len(self.both) + len(self.lwm_only)

    def to_structured(self) -> dict[str, Any]:
        classification = (
            "denials are false negatives (benign work refused)"
            if self.label == "benign"
            else "denials are true positives (attack steps refused)"
        )
        return {
            "summary": {
                "label": self.label,
                "events": self.event_count,
                "classification": classification,
                "cumac_denials": self.cumac_deny_count,
                "lwm_denials": self.lwm_deny_count,
            },
            "differences": {
                "lwm_only": list(self.lwm_only),
                "both": list(self.both),
                "cumac_only": list(self.cumac_only),
            },
            "rows": self.rows,
            "notes": self.notes,
        }

    def to_text(self) -> str:
        lines = [
            f"label: {self.label}",
            f"events: {self.event_count}",
            f"cumac denials: {self.cumac_deny_count}",
            f"lwm denials: {self.lwm_deny_count}",
            f"denied by lwm only (cumac compatibility wins): {self.lwm_only or 'none'}",
            f"denied by both: {self.both or 'none'}",
            f"denied by cumac only: {self.cumac_only or 'none'}",
            f"note: {self.notes}",
        ]
        return "\n".join(lines) + "\n"


def compare(
    trace: Trace,
    store: ExceptionStore | None = None,
    config: EngineConfig | None = None,
) -> ComparisonReport:
    """Run the tracing engine (enforcing, with the supplied store) and the
    low-water-mark baseline over the same trace and diff their denials."""
    config = config or EngineConfig.from_trace(trace)
    cumac_engine = Engine(config, store if store is not None else ExceptionStore())
    lwm_engine = LwmEngine(trace, config)
    rows: list[dict[str, Any]] = []
    lwm_only: list[int] = []
    both: list[int] = []
    cumac_only: list[int] = []
    for ev in trace.events:
        cumac_decision = cumac_engine.step(ev)
        lwm_decision = lwm_engine.step(ev)
        cumac_denied = cumac_decision.verdict is Verdict.DENY
        lwm_denied = lwm_decision.verdict is Verdict.DENY
        rows.append(
            {
                "seq": ev.seq,
                "event": EVENT_VERBS[type(ev)],
                "cumac": cumac_decision.verdict.value,
                "lwm": lwm_decision.verdict.value,
            }
        )
        if cumac_denied and lwm_denied:
            both.append(ev.seq)
        elif lwm_denied:
            lwm_only.append(ev.seq)
        elif cumac_denied:
            cumac_only.append(ev.seq)
    return ComparisonReport(
        label=trace.header.label,
        event_count=len(trace.events),
        rows=rows,
        lwm_only=lwm_only,
        both=both,
        cumac_only=cumac_only,
    )
