"""Independent taint oracle and taint-graph export.

The oracle recomputes which entities end up tainted by breadth-first
reachability over a time-expanded information-flow graph built straight
from the trace, consuming only the engine's verdict sequence (denied
events contribute no edges) and never its taint bookkeeping. Nodes are
(entity, step) pairs so that taint acquired late cannot flow backwards
through earlier events.

Flow edges per allowed event:

* fork: parent process -> child process
* exec: file -> process
* ipc over pipe/signal/local socket: sender -> receiver
* ipc over shared memory: both directions
* write/create/copy to an executable file: acting process -> file,
  and for copy additionally source file -> destination file

Sources (entrances):

* a process the moment it communicates with a non-loopback peer
* a process the moment an untrusted user logs into it
* a mobile-mount executable the moment it is exec'd
* the executable destination of a copy whose source sits on a mobile mount
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

from .engine import Engine, EngineConfig, _covers
from .model import (
    Copy,
    Create,
    Event,
    Exec,
    Fork,
    Ipc,
    IpcChannel,
    Login,
    Mount,
    PermissionBits,
    PrivOp,
    Read,
    RemoteComm,
    Unmount,
    Verdict,
    Write,
    entity_sort_key,
    file_entity,
    proc_entity,
)
from .store import ExceptionStore
from .trace import EVENT_VERBS, Trace

if TYPE_CHECKING:
    from .replay import ReplayReport


@dataclass(slots=True)
class _FileFacts:
    """Structural facts about a file the oracle needs: taint-free."""

    fid: int
    path: str
    is_executable: bool
    is_directory: bool
    mobile: bool


class StructureMirror:
    """Replays the structural side of a trace (who exists, what is
    executable, what sits on a mobile mount) without any policy logic.

    Mirrors the engine's deterministic fid allocation, including the id
    reserved by a denied create attempt.
    """

    def __init__(self, trace: Trace, config: EngineConfig | None = None):
        self.config = config or EngineConfig.from_trace(trace)
        self.files: dict[int, _FileFacts] = {}
        self.fid_by_path: dict[str, int] = {}
        self.pids: set[int] = set()
        self.mounts: dict[int, str] = {}
        for f in trace.header.files:
            facts = _FileFacts(f.fid, f.path, f.perms.any_exec and not f.is_directory, f.is_directory, False)
            self.files[f.fid] = facts
            self.fid_by_path[f.path] = f.fid
        for p in trace.header.processes:
            self.pids.add(p.pid)
        self.next_fid = max(self.files, default=0) + 1

    def under_live_mount(self, path: str) -> bool:
        return any(_covers(prefix, path) for prefix in self.mounts.values())

    def observe_mobile(self, facts: _FileFacts) -> bool:
        """Same lazy rule as the engine: a file counts as mobile when used
        under a live mount, and the observation is memoized."""
        if facts.mobile:
            return True
        if self.mounts and self.under_live_mount(facts.path):
            facts.mobile = True
            return True
        return False

    def is_remote(self, peer: str) -> bool:
        return not any(peer.startswith(p) for p in self.config.loopback_prefixes)

    def is_untrusted(self, user: str) -> bool:
        record = self.config.users.get(user)
        return record is None or not record.trusted

    def register(self, path: str, perms: str, is_directory: bool) -> _FileFacts:
        fid = self.next_fid
        self.next_fid += 1
        bits = PermissionBits.parse(perms)
        facts = _FileFacts(
            fid, path, bits.any_exec and not is_directory, is_directory, self.under_live_mount(path)
        )
        self.files[fid] = facts
        self.fid_by_path[path] = fid
        return facts

    def apply(self, ev: Event, denied: bool) -> None:
        """Advance structural state past one event (edges are the caller's
        job). Denied events only consume reserved fids."""
        if isinstance(ev, Fork):
            self.pids.add(ev.child_pid)
        elif isinstance(ev, Mount):
            self.mounts[ev.mount_id] = ev.path_prefix
        elif isinstance(ev, Unmount):
            self.mounts.pop(ev.mount_id, None)
        elif isinstance(ev, Create):
            if denied:
                self.next_fid += 1
            else:
                self.register(ev.path, ev.perms, ev.is_directory)
        elif isinstance(ev, Copy):
            if ev.dst_path not in self.fid_by_path:
                if denied:
                    self.next_fid += 1
                else:
                    src = self.files[ev.src_fid]
                    self.register(ev.dst_path, ev.dst_perms, src.is_directory)


def engine_verdicts(trace: Trace, config: EngineConfig | None = None) -> list[Verdict]:
    """The verdict sequence of an enforcement run over an empty store."""
    engine = Engine(config or EngineConfig.from_trace(trace), ExceptionStore())
    return [engine.step(ev).verdict for ev in trace.events]


def taint_oracle(
    trace: Trace,
    verdicts: Sequence[Verdict] | None = None,
    config: EngineConfig | None = None,
) -> set[str]:
    """Recompute the final tainted-entity set by graph reachability.

    ``verdicts`` defaults to an enforcement run over an empty store; pass
    the verdict sequence of the run under test to check any other mode.
    """
    config = config or EngineConfig.from_trace(trace)
    if verdicts is None:
        verdicts = engine_verdicts(trace, config)
    if len(verdicts) != len(trace.events):
        raise ValueError("one verdict per event is required")

    mirror = StructureMirror(trace, config)
    adjacency: dict[tuple[str, int], list[tuple[str, int]]] = {}
    last_node: dict[str, tuple[str, int]] = {}
    sources: list[tuple[str, int]] = []

    def node(entity: str, step: int) -> tuple[str, int]:
        # Persistence edge: an entity's earlier node reaches its later one.
        current = (entity, step)
        previous = last_node.get(entity)
        if previous is not None and previous != current:
            adjacency.setdefault(previous, []).append(current)
        last_node[entity] = current
        return current

    def edge(src: tuple[str, int], dst: tuple[str, int]) -> None:
        adjacency.setdefault(src, []).append(dst)

    for ev, verdict in zip(trace.events, verdicts):
        denied = verdict is Verdict.DENY
        if not denied:
            step = ev.seq
            if isinstance(ev, Fork):
                edge(node(proc_entity(ev.parent_pid), step), node(proc_entity(ev.child_pid), step))
            elif isinstance(ev, Exec):
                facts = mirror.files[ev.fid]
                file_node = node(file_entity(ev.fid), step)
                if mirror.observe_mobile(facts):
                    sources.append(file_node)
                edge(file_node, node(proc_entity(ev.pid), step))
            elif isinstance(ev, RemoteComm):
                if mirror.is_remote(ev.peer_address):
                    sources.append(node(proc_entity(ev.pid), step))
            elif isinstance(ev, Login):
                if mirror.is_untrusted(ev.user):
                    sources.append(node(proc_entity(ev.pid), step))
            elif isinstance(ev, Ipc):
                a = node(proc_entity(ev.from_pid), step)
                b = node(proc_entity(ev.to_pid), step)
                edge(a, b)
                if ev.channel is IpcChannel.SHARED_MEMORY:
                    edge(b, a)
            elif isinstance(ev, Write):
                if mirror.files[ev.fid].is_executable:
                    edge(node(proc_entity(ev.pid), step), node(file_entity(ev.fid), step))
            elif isinstance(ev, Create):
                mirror.apply(ev, denied)
                facts = mirror.files[mirror.fid_by_path[ev.path]]
                if facts.is_executable:
                    edge(node(proc_entity(ev.pid), step), node(file_entity(facts.fid), step))
                continue
            elif isinstance(ev, Copy):
                src_facts = mirror.files[ev.src_fid]
                src_mobile = mirror.observe_mobile(src_facts)
                mirror.apply(ev, denied)
                dst_facts = mirror.files[mirror.fid_by_path[ev.dst_path]]
                if dst_facts.is_executable:
                    dst_node = node(file_entity(dst_facts.fid), step)
                    edge(node(proc_entity(ev.pid), step), dst_node)
                    edge(node(file_entity(src_facts.fid), step), dst_node)
                    if src_mobile:
                        sources.append(dst_node)
                continue
            # Read and PrivOp propagate nothing; Mount/Unmount below.
        mirror.apply(ev, denied)

    reached: set[tuple[str, int]] = set()
    queue = deque(n for n in sources if n not in reached)
    reached.update(sources)
    while queue:
        current = queue.popleft()
        for nxt in adjacency.get(current, ()):
            if nxt not in reached:
                reached.add(nxt)
                queue.append(nxt)
    return {entity for entity, _ in reached}


# -- taint-graph export --------------------------------------------------------


def _dot_quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_taint_graph(report: "ReplayReport", trace: Trace) -> str:
    """Render the replayed trace as canonical Graphviz DOT text.

    Entities become nodes (tainted ones red), events become labelled edges
    in sequence order, and denied events show as dashed edges. Output is
    byte-stable for equal inputs.
    """
    mirror = StructureMirror(trace)
    tainted = set(report.final_taint)
    proc_nodes: set[str] = {proc_entity(p.pid) for p in trace.header.processes}
    file_labels: dict[str, str] = {
        file_entity(f.fid): f.path for f in trace.header.files
    }
    extra_nodes: set[str] = set()
    edges: list[str] = []

    for ev, decision in report.log:
        denied = decision.verdict is Verdict.DENY
        attrs = [f"label={_dot_quote(f'{ev.seq} {EVENT_VERBS[type(ev)]}')}"]
        if denied:
            attrs.append("style=dashed")
            attrs.append("color=red")
        suffix = f" [{', '.join(attrs)}];"

        def add(src: str, dst: str) -> None:
            edges.append(f"  {_dot_quote(src)} -> {_dot_quote(dst)}{suffix}")

        if isinstance(ev, Fork):
            proc_nodes.add(proc_entity(ev.child_pid))
            add(proc_entity(ev.parent_pid), proc_entity(ev.child_pid))
        elif isinstance(ev, Exec):
            add(file_entity(ev.fid), proc_entity(ev.pid))
        elif isinstance(ev, RemoteComm):
            peer = f"addr:{ev.peer_address}"
            extra_nodes.add(peer)
            add(peer, proc_entity(ev.pid))
        elif isinstance(ev, Login):
            user = f"user:{ev.user}"
            extra_nodes.add(user)
            add(user, proc_entity(ev.pid))
        elif isinstance(ev, Ipc):
            add(proc_entity(ev.from_pid), proc_entity(ev.to_pid))
            if ev.channel is IpcChannel.SHARED_MEMORY:
                add(proc_entity(ev.to_pid), proc_entity(ev.from_pid))
        elif isinstance(ev, Write):
            add(proc_entity(ev.pid), file_entity(ev.fid))
        elif isinstance(ev, Read):
            add(file_entity(ev.fid), proc_entity(ev.pid))
        elif isinstance(ev, Create):
            mirror.apply(ev, denied)
            if not denied:
                fid = mirror.fid_by_path[ev.path]
                file_labels[file_entity(fid)] = ev.path
                add(proc_entity(ev.pid), file_entity(fid))
            continue
        elif isinstance(ev, Copy):
            existing = ev.dst_path in mirror.fid_by_path
            mirror.apply(ev, denied)
            if not denied or existing:
                fid = mirror.fid_by_path[ev.dst_path]
                file_labels.setdefault(file_entity(fid), ev.dst_path)
                add(proc_entity(ev.pid), file_entity(fid))
                add(file_entity(ev.src_fid), file_entity(fid))
            continue
        elif isinstance(ev, PrivOp):
            cap = f"cap:{ev.capability}"
            extra_nodes.add(cap)
            add(proc_entity(ev.pid), cap)
        # Mount/Unmount carry no entity-to-entity flow.
        mirror.apply(ev, denied)

    lines = ["digraph taint_trace {", "  rankdir=LR;"]
    for entity in sorted(proc_nodes, key=entity_sort_key):
        attrs = ["shape=ellipse"]
        if entity in tainted:
            attrs.append("color=red")
            attrs.append("fontcolor=red")
        lines.append(f"  {_dot_quote(entity)} [{', '.join(attrs)}];")
    for entity in sorted(file_labels, key=entity_sort_key):
        attrs = ["shape=box", f"label={_dot_quote(entity + ' ' + file_labels[entity])}"]
        if entity in tainted:
            attrs.append("color=red")
            attrs.append("fontcolor=red")
        lines.append(f"  {_dot_quote(entity)} [{', '.join(attrs)}];")
    for entity in sorted(extra_nodes):
        lines.append(f"  {_dot_quote(entity)} [shape=diamond];")
    lines.extend(edges)
    lines.append("}")
    return "\n".join(lines) + "\n"
