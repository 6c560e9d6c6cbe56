"""Core domain types: taint labels, permission bits, process and file
records, the OS-event vocabulary, and access decisions.

No policy logic lives here; the engine, stores and replay drivers build on
these types. Identifiers (pids, inode numbers) come from the trace, never
from this module.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

from .errors import PermsFormatError

if TYPE_CHECKING:
    from .store import FileExceptionEntry

Key = int
"""Application identity: the inode number of the executable it was started
from. Processes inherit it across fork and adopt the new executable's key
on exec; exception lists are indexed by it."""


class TaintState(Enum):
    """Binary intrusion label for processes and files.

    Within one engine run an entity only ever moves from NON_INTRUSION to
    POTENTIAL_INTRUSION, never back.
    """

    NON_INTRUSION = "NonIntrusion"
    POTENTIAL_INTRUSION = "PotentialIntrusion"


_CAPABILITY_RE = re.compile(r"CAP_[A-Z0-9_]+\Z")


def validate_capability(name: str) -> str:
    """Check a capability name such as CAP_SYS_MODULE and return it.

    Capabilities are an open set compared by exact string equality; the
    only constraint is the CAP_[A-Z0-9_]+ shape.
    """
    if not isinstance(name, str) or not _CAPABILITY_RE.fullmatch(name):
        raise ValueError(f"invalid capability name {name!r} (want CAP_[A-Z0-9_]+)")
    return name


_OCTAL_DIGITS = "01234567"


@dataclass(frozen=True, slots=True)
class PermissionBits:
    """The nine rwx bits of a file, round-trippable with a 3-digit octal
    string ("755" and back)."""

    owner_read: bool = False
    owner_write: bool = False
    owner_exec: bool = False
    group_read: bool = False
    group_write: bool = False
    group_exec: bool = False
    other_read: bool = False
    other_write: bool = False
    other_exec: bool = False

    @classmethod
    def parse(cls, octal: str) -> "PermissionBits":
        if not isinstance(octal, str) or len(octal) != 3:
            raise PermsFormatError(
                f"permission string {octal!r} must be exactly three octal digits"
            )
        for ch in octal:
            if ch not in _OCTAL_DIGITS:
                raise PermsFormatError(f"invalid octal digit {ch!r} in {octal!r}")
        bits: list[bool] = []
        for ch in octal:
            digit = int(ch)
            bits.extend((bool(digit & 4), bool(digit & 2), bool(digit & 1)))
        return cls(*bits)

    def render(self) -> str:
        triples = (
            (self.owner_read, self.owner_write, self.owner_exec),
            (self.group_read, self.group_write, self.group_exec),
            (self.other_read, self.other_write, self.other_exec),
        )
        return "".join(str((4 * r) + (2 * w) + (1 * x)) for r, w, x in triples)

    @property
    def any_exec(self) -> bool:
        return self.owner_exec or self.group_exec or self.other_exec


def parse_perms(octal: str) -> PermissionBits:
    """Parse a 3-digit octal permission string into its nine bits."""
    return PermissionBits.parse(octal)


@dataclass(slots=True)
class UserRecord:
    """A configured account; trust is a configuration input, not derived."""

    name: str
    trusted: bool = False


@dataclass(slots=True)
class ProcessRecord:
    """A live process: identity, application key, taint, owner, lineage."""

    pid: int
    key: Key
    taint: TaintState = TaintState.NON_INTRUSION
    user: str = "root"
    parent: int | None = None


@dataclass(slots=True)
class FileRecord:
    """A filesystem node.

    ``file_exceptions`` is a read-through view of the central exception
    store's per-file list; the engine wires it up when the record enters
    engine state. Directories carry exception lists but never taint.
    """

    fid: int
    path: str
    perms: PermissionBits
    owner: str = "root"
    taint: TaintState = TaintState.NON_INTRUSION
    is_directory: bool = False
    on_mobile_mount: bool = False
    file_exceptions: "list[FileExceptionEntry]" = field(default_factory=list)


def executable(f: FileRecord) -> bool:
    """An executable file has at least one exec bit set and is not a
    directory. Only executable files ever carry taint."""
    return f.perms.any_exec and not f.is_directory


def is_integrity_protected(f: FileRecord) -> bool:
    """A file others may not write requires integrity protection."""
    return not f.perms.other_write


def is_sensitivity_protected(f: FileRecord) -> bool:
    """A file others may not read requires sensitivity protection."""
    return not f.perms.other_read


# --- entity identifiers -----------------------------------------------------
#
# Taint sets and reports mix processes and files, so they use namespaced
# string ids ("proc:12", "file:77") rather than bare integers.


def proc_entity(pid: int) -> str:
    return f"proc:{pid}"


def file_entity(fid: int) -> str:
    return f"file:{fid}"


def entity_sort_key(entity: str) -> tuple[str, int]:
    kind, _, num = entity.partition(":")
    return (kind, int(num))


# --- events ------------------------------------------------------------------


class IpcChannel(Enum):
    PIPE = "pipe"
    SIGNAL = "signal"
    SOCKET_LOCAL = "socket_local"
    SHARED_MEMORY = "shm"


@dataclass(frozen=True, slots=True)
class Event:
    """Base of the twelve OS-event kinds; ``seq`` increases strictly
    within a trace."""

    seq: int


@dataclass(frozen=True, slots=True)
class Fork(Event):
    parent_pid: int
    child_pid: int


@dataclass(frozen=True, slots=True)
class Exec(Event):
    pid: int
    fid: int


@dataclass(frozen=True, slots=True)
class RemoteComm(Event):
    pid: int
    peer_address: str


@dataclass(frozen=True, slots=True)
class Login(Event):
    pid: int
    user: str


@dataclass(frozen=True, slots=True)
class Mount(Event):
    mount_id: int
    path_prefix: str


@dataclass(frozen=True, slots=True)
class Unmount(Event):
    mount_id: int


@dataclass(frozen=True, slots=True)
class Copy(Event):
    pid: int
    src_fid: int
    dst_path: str
    dst_perms: str
    dst_owner: str


@dataclass(frozen=True, slots=True)
class Create(Event):
    pid: int
    path: str
    perms: str
    owner: str
    is_directory: bool


@dataclass(frozen=True, slots=True)
class Write(Event):
    pid: int
    fid: int


@dataclass(frozen=True, slots=True)
class Read(Event):
    pid: int
    fid: int


@dataclass(frozen=True, slots=True)
class Ipc(Event):
    from_pid: int
    to_pid: int
    channel: IpcChannel


@dataclass(frozen=True, slots=True)
class PrivOp(Event):
    pid: int
    capability: str


# --- decisions ---------------------------------------------------------------


class Verdict(Enum):
    ALLOW = "Allow"
    DENY = "Deny"
    ALLOW_BY_EXCEPTION = "AllowByException"


class DenyReason(Enum):
    NONE = "None"
    PRIVILEGED_OP = "PrivilegedOp"
    INTEGRITY_WRITE = "IntegrityWrite"
    SENSITIVITY_READ = "SensitivityRead"


class ExceptionKind(Enum):
    NONE = "None"
    FILE_LIST = "FileList"
    PRIVILEGE_LIST = "PrivilegeList"


TaintUpdate = tuple[str, TaintState, TaintState]
"""(entity id, old state, new state), recorded once per actual transition."""


@dataclass(frozen=True, slots=True)
class Decision:
    """Outcome of applying one event.

    Denied operations propagate nothing, so DENY implies an empty
    ``taint_updates``; an exception kind is present exactly when the
    verdict is ALLOW_BY_EXCEPTION. For ALLOW_BY_EXCEPTION, ``reason``
    carries what the denial reason would have been.
    """

    verdict: Verdict
    reason: DenyReason = DenyReason.NONE
    exception_kind: ExceptionKind = ExceptionKind.NONE
    taint_updates: tuple[TaintUpdate, ...] = ()

    def __post_init__(self) -> None:
        if self.verdict is Verdict.DENY and self.taint_updates:
            raise ValueError("a denied operation must not carry taint updates")
        has_kind = self.exception_kind is not ExceptionKind.NONE
        if has_kind != (self.verdict is Verdict.ALLOW_BY_EXCEPTION):
            raise ValueError(
                "exception_kind must be set exactly when the verdict is AllowByException"
            )


ALLOW = Decision(Verdict.ALLOW)
"""Shared constant for the common clean-allow outcome."""
