"""cumac: an event-driven reference monitor that traces potential
intrusions through OS activity, blocks security-critical operations, and
learns benign exceptions automatically.

The package is a userspace simulator: traces of OS events (fork, exec,
network, mounts, file and privilege operations) replay against a
deterministic state machine. A low-water-mark integrity engine over the
same event vocabulary serves as the compatibility baseline.
"""

from .engine import DEFAULT_LOOPBACK_PREFIXES, Engine, EngineConfig, new_engine
from .errors import (
    ConfigError,
    CumacError,
    PermsFormatError,
    StoreFormatError,
    StoreModeError,
    StoreVersionError,
    TraceError,
    TraceParseError,
)
from .lwm import ComparisonReport, IntegrityLevel, LwmEngine, compare, run_lwm
from .model import (
    Decision,
    DenyReason,
    Event,
    ExceptionKind,
    FileRecord,
    PermissionBits,
    ProcessRecord,
    TaintState,
    UserRecord,
    Verdict,
    executable,
    is_integrity_protected,
    is_sensitivity_protected,
    parse_perms,
)
from .oracle import export_taint_graph, taint_oracle
from .randomtrace import random_trace
from .replay import ReplayReport, learn, replay
from .store import AccessMode, EnvironmentBit, ExceptionStore
from .trace import Trace, TraceHeader, parse_trace, render_trace

__version__ = "0.1.0"

__all__ = [
    "AccessMode",
    "ComparisonReport",
    "ConfigError",
    "CumacError",
    "DEFAULT_LOOPBACK_PREFIXES",
    "Decision",
    "DenyReason",
    "Engine",
    "EngineConfig",
    "EnvironmentBit",
    "Event",
    "ExceptionKind",
    "ExceptionStore",
    "FileRecord",
    "IntegrityLevel",
    "LwmEngine",
    "PermissionBits",
    "PermsFormatError",
    "ProcessRecord",
    "ReplayReport",
    "StoreFormatError",
    "StoreModeError",
    "StoreVersionError",
    "TaintState",
    "Trace",
    "TraceError",
    "TraceHeader",
    "TraceParseError",
    "UserRecord",
    "Verdict",
    "compare",
    "executable",
    "export_taint_graph",
    "is_integrity_protected",
    "is_sensitivity_protected",
    "learn",
    "new_engine",
    "parse_perms",
    "parse_trace",
    "random_trace",
    "render_trace",
    "replay",
    "run_lwm",
    "taint_oracle",
]
