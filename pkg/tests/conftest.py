"""Shared fixtures: a small filesystem snapshot and an event driver that
handles sequence numbering, so tests read like short sessions."""

from __future__ import annotations

import pytest

from cumac.engine import Engine, EngineConfig
from cumac.model import (
    Copy,
    Create,
    Exec,
    FileRecord,
    Fork,
    Ipc,
    IpcChannel,
    Login,
    Mount,
    PermissionBits,
    PrivOp,
    ProcessRecord,
    Read,
    RemoteComm,
    Unmount,
    UserRecord,
    Write,
)
from cumac.store import EnvironmentBit, ExceptionStore

# Fixed fids for the small world, used throughout the engine tests.
ROOT_DIR = 1
BIN_DIR = 2
SH = 3
TMP_DIR = 4
ETC_DIR = 5
SHADOW = 6
HOSTS = 7
TMP_LOG = 8
MNT_DIR = 9
USB_DIR = 10
USB_TOOL = 11
LS = 12


def small_files() -> list[FileRecord]:
    spec = [
        (ROOT_DIR, "/", "755", True),
        (BIN_DIR, "/bin", "755", True),
        (SH, "/bin/sh", "755", False),
        (TMP_DIR, "/tmp", "777", True),
        (ETC_DIR, "/etc", "755", True),
        (SHADOW, "/etc/shadow", "600", False),
        (HOSTS, "/etc/hosts", "644", False),
        (TMP_LOG, "/tmp/app.log", "666", False),
        (MNT_DIR, "/mnt", "755", True),
        (USB_DIR, "/mnt/usb", "755", True),
        (USB_TOOL, "/mnt/usb/tool", "755", False),
        (LS, "/bin/ls", "755", False),
    ]
    return [
        FileRecord(fid=fid, path=path, perms=PermissionBits.parse(perms), is_directory=is_dir)
        for fid, path, perms, is_dir in spec
    ]


def small_config() -> EngineConfig:
    return EngineConfig(
        users={
            "root": UserRecord("root", True),
            "mallory": UserRecord("mallory", False),
        },
        files=small_files(),
        processes=[
            ProcessRecord(pid=1, key=SH, user="root"),
            ProcessRecord(pid=2, key=SH, user="root"),
        ],
    )


class Driver:
    """Feeds events to an engine with automatic sequence numbers."""

    def __init__(self, engine: Engine):
        self.engine = engine
        self._seq = 0

    def _next(self) -> int:
        self._seq += 1
        return self._seq

    def fork(self, parent: int, child: int):
        return self.engine.step(Fork(self._next(), parent, child))

    def exec(self, pid: int, fid: int):
        return self.engine.step(Exec(self._next(), pid, fid))

    def net(self, pid: int, peer: str):
        return self.engine.step(RemoteComm(self._next(), pid, peer))

    def login(self, pid: int, user: str):
        return self.engine.step(Login(self._next(), pid, user))

    def mount(self, mount_id: int, prefix: str):
        return self.engine.step(Mount(self._next(), mount_id, prefix))

    def unmount(self, mount_id: int):
        return self.engine.step(Unmount(self._next(), mount_id))

    def copy(self, pid: int, src: int, dst: str, perms: str, owner: str = "root"):
        return self.engine.step(Copy(self._next(), pid, src, dst, perms, owner))

    def create(self, pid: int, path: str, perms: str, owner: str = "root", is_dir: bool = False):
        return self.engine.step(Create(self._next(), pid, path, perms, owner, is_dir))

    def write(self, pid: int, fid: int):
        return self.engine.step(Write(self._next(), pid, fid))

    def read(self, pid: int, fid: int):
        return self.engine.step(Read(self._next(), pid, fid))

    def ipc(self, from_pid: int, to_pid: int, channel: IpcChannel):
        return self.engine.step(Ipc(self._next(), from_pid, to_pid, channel))

    def priv(self, pid: int, capability: str):
        return self.engine.step(PrivOp(self._next(), pid, capability))

    # shortcuts
    def taint_via_net(self, pid: int):
        return self.net(pid, "203.0.113.99")

    def proc(self, pid: int):
        return self.engine.processes[pid]

    def file(self, fid: int):
        return self.engine.files[fid]


def make_driver(
    bit: EnvironmentBit = EnvironmentBit.UNSECURE,
    store: ExceptionStore | None = None,
    config: EngineConfig | None = None,
) -> Driver:
    store = store if store is not None else ExceptionStore()
    store.bit = bit
    return Driver(Engine(config or small_config(), store))


@pytest.fixture
def driver() -> Driver:
    return make_driver()


@pytest.fixture
def secure_driver() -> Driver:
    return make_driver(bit=EnvironmentBit.SECURE)
