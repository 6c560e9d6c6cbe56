"""Per-event rules of the tracing engine, plus its global invariants."""

import json

import pytest

from conftest import (
    HOSTS,
    LS,
    SH,
    SHADOW,
    TMP_LOG,
    USB_TOOL,
    Driver,
    make_driver,
    small_config,
)
from cumac.engine import Engine, EngineConfig, new_engine
from cumac.errors import ConfigError, TraceError
from cumac.model import (
    DenyReason,
    ExceptionKind,
    FileRecord,
    IpcChannel,
    PermissionBits,
    TaintState,
    UserRecord,
    Verdict,
)
from cumac.store import AccessMode, EnvironmentBit, ExceptionStore

PI = TaintState.POTENTIAL_INTRUSION
NI = TaintState.NON_INTRUSION


class TestNewEngine:
    def test_empty_config(self):
        engine = new_engine(EngineConfig(), ExceptionStore())
        assert engine.processes == {}
        assert engine.files == {}
        assert engine.decision_log == []

    def test_seed_identity(self):
        config = EngineConfig(
            users={"root": UserRecord("root", True)},
            files=[FileRecord(fid=10, path="/bin/sh", perms=PermissionBits.parse("755"))],
        )
        engine = new_engine(config, ExceptionStore())
        assert engine.files[10].path == "/bin/sh"
        assert engine.files[10].taint is NI

    def test_duplicate_fid_rejected(self):
        config = EngineConfig(
            files=[
                FileRecord(fid=10, path="/a", perms=PermissionBits.parse("644")),
                FileRecord(fid=10, path="/b", perms=PermissionBits.parse("644")),
            ]
        )
        with pytest.raises(ConfigError, match="duplicate fid 10"):
            new_engine(config, ExceptionStore())

    def test_duplicate_path_rejected(self):
        config = EngineConfig(
            files=[
                FileRecord(fid=10, path="/a", perms=PermissionBits.parse("644")),
                FileRecord(fid=11, path="/a", perms=PermissionBits.parse("644")),
            ]
        )
        with pytest.raises(ConfigError, match="duplicate path"):
            new_engine(config, ExceptionStore())

    def test_configs_are_reusable(self):
        config = small_config()
        d = Driver(Engine(config, ExceptionStore()))
        d.taint_via_net(1)
        second = Engine(config, ExceptionStore())
        assert second.processes[1].taint is NI


class TestFork:
    def test_tainted_parent_taints_child(self, driver):
        driver.taint_via_net(1)
        decision = driver.fork(1, 30)
        assert decision.verdict is Verdict.ALLOW
        assert driver.proc(30).taint is PI
        assert decision.taint_updates == (("proc:30", NI, PI),)

    def test_clean_parent_clean_child(self, driver):
        decision = driver.fork(1, 30)
        assert decision.verdict is Verdict.ALLOW
        assert driver.proc(30).taint is NI
        assert decision.taint_updates == ()

    def test_fork_twice_inherits_key(self, driver):
        driver.fork(1, 30)
        driver.fork(1, 31)
        assert driver.proc(30).key == driver.proc(1).key == SH
        assert driver.proc(31).taint is NI
        assert driver.proc(30).parent == 1

    def test_live_child_pid_is_trace_error(self, driver):
        with pytest.raises(TraceError, match="already live"):
            driver.fork(1, 2)

    def test_unknown_parent_is_trace_error(self, driver):
        with pytest.raises(TraceError, match="unknown pid 99"):
            driver.fork(99, 30)


class TestExec:
    def test_tainted_file_taints_process(self, driver):
        driver.taint_via_net(1)
        driver.copy(1, SH, "/tmp/evil", "755")  # tainted writer, executable dst
        evil = driver.engine._files_by_path["/tmp/evil"]
        assert driver.file(evil).taint is PI
        decision = driver.exec(2, evil)
        assert decision.verdict is Verdict.ALLOW
        assert driver.proc(2).taint is PI

    def test_mobile_mount_file_taints_process_and_itself(self, driver):
        driver.mount(1, "/mnt/usb")
        decision = driver.exec(2, USB_TOOL)
        assert decision.verdict is Verdict.ALLOW
        assert driver.proc(2).taint is PI
        assert driver.file(USB_TOOL).taint is PI

    def test_clean_local_exec_updates_key_only(self, driver):
        decision = driver.exec(1, LS)
        assert decision.verdict is Verdict.ALLOW
        assert driver.proc(1).key == LS
        assert driver.proc(1).taint is NI

    def test_non_executable_is_trace_error(self, driver):
        with pytest.raises(TraceError, match="not executable"):
            driver.exec(1, HOSTS)

    def test_key_switch_changes_exception_identity(self):
        store = ExceptionStore(EnvironmentBit.SECURE)
        store.record_priv_exception(LS, "CAP_KILL")
        store.bit = EnvironmentBit.UNSECURE
        d = make_driver(store=store)
        d.taint_via_net(1)
        assert d.priv(1, "CAP_KILL").verdict is Verdict.DENY  # key is still SH
        d.exec(1, LS)
        assert d.priv(1, "CAP_KILL").verdict is Verdict.ALLOW_BY_EXCEPTION


class TestRemoteComm:
    def test_remote_peer_taints(self, driver):
        decision = driver.net(1, "93.184.216.34")
        assert decision.verdict is Verdict.ALLOW
        assert driver.proc(1).taint is PI

    def test_loopback_does_not_taint(self, driver):
        for peer in ("127.0.0.1", "127.9.9.9", "::1"):
            assert driver.net(1, peer).taint_updates == ()
        assert driver.proc(1).taint is NI

    def test_already_tainted_logs_no_duplicate_update(self, driver):
        driver.net(1, "93.184.216.34")
        decision = driver.net(1, "93.184.216.34")
        assert decision.verdict is Verdict.ALLOW
        assert decision.taint_updates == ()


class TestLogin:
    def test_untrusted_login_taints(self, driver):
        decision = driver.login(1, "mallory")
        assert decision.verdict is Verdict.ALLOW
        assert driver.proc(1).taint is PI
        assert driver.proc(1).user == "mallory"

    def test_trusted_login_clean(self, driver):
        assert driver.login(1, "root").taint_updates == ()
        assert driver.proc(1).taint is NI

    def test_untrusted_login_then_fork_taints_child(self, driver):
        driver.login(1, "mallory")
        driver.fork(1, 30)
        assert driver.proc(30).taint is PI

    def test_unknown_user_is_trace_error(self, driver):
        with pytest.raises(TraceError, match="unknown user"):
            driver.login(1, "nobody")


class TestMount:
    def test_snapshot_file_counts_as_mobile_after_mount(self, driver):
        driver.mount(1, "/mnt/usb")
        assert driver.engine.file_on_mobile_mount(driver.file(USB_TOOL)) is True
        assert driver.engine.file_on_mobile_mount(driver.file(LS)) is False

    def test_mount_unmount_without_access_is_inert(self, driver):
        driver.mount(1, "/mnt/usb")
        driver.unmount(1)
        assert driver.engine.tainted_entities() == set()
        assert all(d.verdict is Verdict.ALLOW for _, d in driver.engine.decision_log)

    def test_file_created_under_live_mount_is_mobile(self, driver):
        driver.mount(1, "/mnt/usb")
        driver.create(1, "/mnt/usb/dropper", "755")
        fid = driver.engine._files_by_path["/mnt/usb/dropper"]
        assert driver.file(fid).on_mobile_mount is True

    def test_overlapping_prefixes_are_trace_errors(self, driver):
        driver.mount(1, "/mnt/usb")
        with pytest.raises(TraceError, match="overlaps"):
            driver.mount(2, "/mnt/usb/sub")
        with pytest.raises(TraceError, match="overlaps"):
            driver.mount(3, "/mnt")

    def test_duplicate_live_mount_id_is_trace_error(self, driver):
        driver.mount(1, "/mnt/usb")
        with pytest.raises(TraceError, match="already live"):
            driver.mount(1, "/tmp")

    def test_unmount_unknown_id_is_trace_error(self, driver):
        with pytest.raises(TraceError, match="not live"):
            driver.unmount(9)

    def test_mount_id_reusable_after_unmount(self, driver):
        driver.mount(1, "/mnt/usb")
        driver.unmount(1)
        assert driver.mount(1, "/mnt/usb").verdict is Verdict.ALLOW


class TestCopy:
    def test_mobile_source_taints_executable_destination(self, driver):
        driver.mount(1, "/mnt/usb")
        decision = driver.copy(1, USB_TOOL, "/tmp/adore", "755")
        assert decision.verdict is Verdict.ALLOW
        fid = driver.engine._files_by_path["/tmp/adore"]
        assert driver.file(fid).taint is PI
        assert driver.proc(1).taint is NI  # the copying process stays clean

    def test_clean_local_copy_stays_clean(self, driver):
        driver.copy(1, HOSTS, "/tmp/hosts.bak", "644")
        fid = driver.engine._files_by_path["/tmp/hosts.bak"]
        assert driver.file(fid).taint is NI

    def test_tainted_process_taints_executable_destination(self, driver):
        driver.taint_via_net(1)
        driver.copy(1, HOSTS, "/tmp/trojan", "755")
        fid = driver.engine._files_by_path["/tmp/trojan"]
        assert driver.file(fid).taint is PI

    def test_non_executable_destination_never_tainted(self, driver):
        driver.mount(1, "/mnt/usb")
        driver.copy(1, USB_TOOL, "/tmp/tool.txt", "644")
        fid = driver.engine._files_by_path["/tmp/tool.txt"]
        assert driver.file(fid).taint is NI

    def test_missing_parent_is_trace_error(self, driver):
        with pytest.raises(TraceError, match="parent directory"):
            driver.copy(1, HOSTS, "/nope/x", "644")

    def test_tainted_copy_onto_protected_existing_file_denied(self, driver):
        driver.taint_via_net(1)
        decision = driver.copy(1, HOSTS, "/bin/ls", "644")
        assert decision.verdict is Verdict.DENY
        assert decision.reason is DenyReason.INTEGRITY_WRITE

    def test_tainted_copy_to_protected_directory_denied(self, driver):
        driver.taint_via_net(1)
        decision = driver.copy(1, HOSTS, "/etc/evil.conf", "644")
        assert decision.verdict is Verdict.DENY
        assert "/etc/evil.conf" not in driver.engine._files_by_path

    def test_existing_destination_keeps_its_perms(self, driver):
        driver.copy(1, HOSTS, "/tmp/app.log", "755")
        assert driver.file(TMP_LOG).perms.render() == "666"

    def test_exception_allowed_copy_still_taints_destination(self, driver):
        store = driver.engine.store
        store.bit = EnvironmentBit.SECURE
        store.record_file_exception(SH, LS, AccessMode.WRITE)
        store.bit = EnvironmentBit.UNSECURE
        driver.taint_via_net(1)
        decision = driver.copy(1, HOSTS, "/bin/ls", "644")
        assert decision.verdict is Verdict.ALLOW_BY_EXCEPTION
        assert decision.exception_kind is ExceptionKind.FILE_LIST
        assert driver.file(LS).taint is PI


class TestIpc:
    def test_pipe_taints_receiver(self, driver):
        driver.taint_via_net(1)
        decision = driver.ipc(1, 2, IpcChannel.PIPE)
        assert decision.verdict is Verdict.ALLOW
        assert driver.proc(2).taint is PI

    def test_pipe_has_no_backward_flow(self, driver):
        driver.taint_via_net(2)
        driver.ipc(1, 2, IpcChannel.PIPE)  # clean sender, tainted receiver
        assert driver.proc(1).taint is NI

    def test_shared_memory_taints_both(self, driver):
        driver.taint_via_net(2)
        decision = driver.ipc(1, 2, IpcChannel.SHARED_MEMORY)
        assert driver.proc(1).taint is PI
        assert decision.taint_updates == (("proc:1", NI, PI),)

    def test_self_ipc_is_trace_error(self, driver):
        with pytest.raises(TraceError, match="must differ"):
            driver.ipc(1, 1, IpcChannel.PIPE)

    @pytest.mark.parametrize("channel", [IpcChannel.SIGNAL, IpcChannel.SOCKET_LOCAL])
    def test_other_directed_channels(self, channel, driver):
        driver.taint_via_net(1)
        driver.ipc(1, 2, channel)
        assert driver.proc(2).taint is PI


class TestCreate:
    def test_tainted_create_in_world_writable_tmp_allowed_and_tainted(self, driver):
        driver.taint_via_net(1)
        decision = driver.create(1, "/tmp/dropper", "755")
        assert decision.verdict is Verdict.ALLOW
        fid = driver.engine._files_by_path["/tmp/dropper"]
        assert driver.file(fid).taint is PI

    def test_tainted_create_in_protected_etc_denied(self, driver):
        driver.taint_via_net(1)
        decision = driver.create(1, "/etc/backdoor.conf", "644")
        assert decision.verdict is Verdict.DENY
        assert decision.reason is DenyReason.INTEGRITY_WRITE
        assert "/etc/backdoor.conf" not in driver.engine._files_by_path

    def test_clean_create_anywhere_writable_is_clean(self, driver):
        decision = driver.create(1, "/tmp/notes.txt", "644")
        assert decision.verdict is Verdict.ALLOW
        fid = driver.engine._files_by_path["/tmp/notes.txt"]
        assert driver.file(fid).taint is NI

    def test_existing_path_is_trace_error(self, driver):
        with pytest.raises(TraceError, match="already exists"):
            driver.create(1, "/etc/hosts", "644")

    def test_missing_parent_is_trace_error(self, driver):
        with pytest.raises(TraceError, match="parent directory"):
            driver.create(1, "/opt/x", "644")

    def test_denied_create_still_reserves_the_fid(self, driver):
        driver.taint_via_net(1)
        driver.create(1, "/etc/backdoor.conf", "644")  # denied, reserves 13
        driver.create(1, "/tmp/next", "644")  # allowed
        assert driver.engine._files_by_path["/tmp/next"] == LS + 2


class TestWrite:
    def test_tainted_write_to_protected_binary_denied(self, driver):
        driver.taint_via_net(1)
        decision = driver.write(1, LS)
        assert decision.verdict is Verdict.DENY
        assert decision.reason is DenyReason.INTEGRITY_WRITE
        assert driver.file(LS).taint is NI  # denied writes propagate nothing

    def test_tainted_write_to_own_world_writable_log_allowed(self, driver):
        driver.taint_via_net(1)
        decision = driver.write(1, TMP_LOG)
        assert decision.verdict is Verdict.ALLOW
        assert driver.file(TMP_LOG).taint is NI  # not executable

    def test_recorded_exception_permits_the_write(self, driver):
        store = driver.engine.store
        store.bit = EnvironmentBit.SECURE
        store.record_file_exception(SH, LS, AccessMode.WRITE)
        store.bit = EnvironmentBit.UNSECURE
        driver.taint_via_net(1)
        decision = driver.write(1, LS)
        assert decision.verdict is Verdict.ALLOW_BY_EXCEPTION
        assert decision.exception_kind is ExceptionKind.FILE_LIST

    def test_exception_allowed_write_still_taints_executable(self, driver):
        store = driver.engine.store
        store.bit = EnvironmentBit.SECURE
        store.record_file_exception(SH, LS, AccessMode.WRITE)
        store.bit = EnvironmentBit.UNSECURE
        driver.taint_via_net(1)
        decision = driver.write(1, LS)
        assert driver.file(LS).taint is PI
        assert decision.taint_updates == (("file:12", NI, PI),)

    def test_clean_write_anywhere_allowed(self, driver):
        assert driver.write(1, LS).verdict is Verdict.ALLOW
        assert driver.file(LS).taint is NI


class TestRead:
    def test_tainted_read_of_shadow_denied(self, driver):
        driver.taint_via_net(1)
        decision = driver.read(1, SHADOW)
        assert decision.verdict is Verdict.DENY
        assert decision.reason is DenyReason.SENSITIVITY_READ

    def test_tainted_read_of_world_readable_allowed(self, driver):
        driver.taint_via_net(1)
        assert driver.read(1, HOSTS).verdict is Verdict.ALLOW

    def test_clean_read_of_shadow_allowed(self, driver):
        assert driver.read(1, SHADOW).verdict is Verdict.ALLOW

    def test_reads_never_propagate_taint(self, driver):
        driver.taint_via_net(1)
        driver.copy(1, SH, "/tmp/evil", "755")  # tainted executable
        evil = driver.engine._files_by_path["/tmp/evil"]
        driver.read(2, evil)
        assert driver.proc(2).taint is NI


class TestPrivOp:
    def test_tainted_module_load_denied(self, driver):
        driver.taint_via_net(1)
        decision = driver.priv(1, "CAP_SYS_MODULE")
        assert decision.verdict is Verdict.DENY
        assert decision.reason is DenyReason.PRIVILEGED_OP

    def test_tainted_ptrace_denied(self, driver):
        driver.login(1, "mallory")
        assert driver.priv(1, "CAP_SYS_PTRACE").verdict is Verdict.DENY

    def test_clean_process_any_capability_allowed(self, driver):
        assert driver.priv(1, "CAP_SYS_MODULE").verdict is Verdict.ALLOW

    def test_secure_mode_allows_and_records(self, secure_driver):
        secure_driver.taint_via_net(1)
        decision = secure_driver.priv(1, "CAP_SYS_MODULE")
        assert decision.verdict is Verdict.ALLOW
        assert secure_driver.engine.store.check_priv_exception(SH, "CAP_SYS_MODULE")

    def test_exception_permits_in_enforcement(self, driver):
        store = driver.engine.store
        store.bit = EnvironmentBit.SECURE
        store.record_priv_exception(SH, "CAP_SYS_MODULE")
        store.bit = EnvironmentBit.UNSECURE
        driver.taint_via_net(1)
        decision = driver.priv(1, "CAP_SYS_MODULE")
        assert decision.verdict is Verdict.ALLOW_BY_EXCEPTION
        assert decision.exception_kind is ExceptionKind.PRIVILEGE_LIST


class TestSecureLearning:
    def test_learning_covers_all_three_denial_kinds(self, secure_driver):
        d = secure_driver
        store = d.engine.store
        d.taint_via_net(1)
        assert d.write(1, LS).verdict is Verdict.ALLOW
        assert d.read(1, SHADOW).verdict is Verdict.ALLOW
        assert d.priv(1, "CAP_CHOWN").verdict is Verdict.ALLOW
        assert store.check_file_exception(SH, LS, AccessMode.WRITE)
        assert store.check_file_exception(SH, SHADOW, AccessMode.READ)
        assert store.check_priv_exception(SH, "CAP_CHOWN")

    def test_clean_operations_record_nothing(self, secure_driver):
        d = secure_driver
        d.write(1, LS)
        d.read(1, SHADOW)
        d.priv(1, "CAP_CHOWN")
        assert d.engine.store.triple_count() == 0

    def test_file_record_exception_list_is_a_read_through_view(self, secure_driver):
        d = secure_driver
        entries = d.file(LS).file_exceptions
        assert entries == []
        d.taint_via_net(1)
        d.write(1, LS)  # recorded against the central store
        assert len(entries) == 1
        assert entries[0].key == SH
        assert entries[0].modes.write is True


def _state_fingerprint(engine: Engine):
    procs = {p.pid: (p.key, p.taint, p.user, p.parent) for p in engine.processes.values()}
    files = {
        f.fid: (f.path, f.perms, f.taint, f.is_directory, f.on_mobile_mount)
        for f in engine.files.values()
    }
    return (procs, files, dict(engine.mounts))


class TestInvariants:
    def test_denials_are_inert(self, driver):
        driver.taint_via_net(1)
        before = _state_fingerprint(driver.engine)
        decision = driver.write(1, LS)
        assert decision.verdict is Verdict.DENY
        assert _state_fingerprint(driver.engine) == before

    def test_decision_log_length_tracks_events(self, driver):
        driver.fork(1, 30)
        driver.net(30, "127.0.0.1")
        assert len(driver.engine.decision_log) == 2

    def test_taint_is_monotone_over_a_session(self, driver):
        driver.taint_via_net(1)
        driver.fork(1, 30)
        driver.ipc(30, 2, IpcChannel.SHARED_MEMORY)
        driver.copy(2, SH, "/tmp/evil", "755")
        for _, decision in driver.engine.decision_log:
            for _, old, new in decision.taint_updates:
                assert old is NI and new is PI

    def test_replay_is_deterministic(self):
        def run():
            d = make_driver()
            d.mount(1, "/mnt/usb")
            d.exec(2, USB_TOOL)
            d.write(2, TMP_LOG)
            d.priv(2, "CAP_SYS_MODULE")
            rows = [
                (type(ev).__name__, dec.verdict.value, dec.reason.value, dec.taint_updates)
                for ev, dec in d.engine.decision_log
            ]
            return json.dumps(rows, default=str)

        assert run() == run()

    def test_decision_locality_under_permutation(self):
        # Unrelated prefix events, permuted, leave the shared suffix verdicts alone.
        def run(prefix_order):
            d = make_driver()
            prefix = {
                "a": lambda: d.fork(1, 40),
                "b": lambda: d.net(2, "127.0.0.1"),
                "c": lambda: d.read(2, HOSTS),
            }
            for name in prefix_order:
                prefix[name]()
            # shared suffix touching neither pid 40 nor anything the prefix tainted
            out = [
                d.login(2, "mallory").verdict,
                d.write(2, LS).verdict,
                d.priv(2, "CAP_SYS_PTRACE").verdict,
            ]
            return out

        baseline = run("abc")
        for order in ("acb", "bac", "bca", "cab", "cba"):
            assert run(order) == baseline
