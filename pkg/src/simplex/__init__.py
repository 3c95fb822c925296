"""Hidden 64-bit storage in the four MPX bounds registers.

The library treats BND0..BND3 as four thread-private 128-bit slots that
survive context switches but are invisible to ptrace-style register dumps
and plain memory scans.  A hardware backend drives the real registers via
tiny JIT-assembled stubs; a bit-exact emulated backend provides the same
observable behavior everywhere and serves as the oracle.

Quick start:

    from simplex import process_specific_init, process_specific_finish, SlotId

    file = process_specific_init()
    file.setbnd_low(SlotId.BND0, 0xDEADBEEF)
    assert file.getbnd_low(SlotId.BND0) == 0xDEADBEEF
    process_specific_finish(file)
"""

from .errors import (
    BackendConfigError,
    DisabledError,
    DomainError,
    ForkFailedError,
    HardwareUnavailableError,
    HarnessMismatchError,
    NullSlotAddressError,
    SimplexError,
)
from .regfile import (
    HIGH_RESET,
    LOW_RESET,
    MASK64,
    BackendKind,
    BoundsSlot,
    RegisterFile,
    SlotId,
)
from .probe import ENV_BACKEND, OverrideSource, ProbeReport, probe, select_backend
from .runtime import is_enabled, process_specific_finish, process_specific_init
from .context import (
    EXPECTED_FORK_TABLE,
    EXPECTED_REINIT_TABLE,
    EXPECTED_THREAD_TABLE,
    PRESTATED,
    Actor,
    ContextEvent,
    ContextEventLog,
    Observation,
    fork_harness,
    reinit_harness,
    snapshot,
    spawn_inheriting,
    thread_harness,
)
from .strops import (
    ByteCounter,
    OpKind,
    byte_address,
    ref_op,
    slot_address,
    slot_op,
    view_at,
)
from .bench import (
    CSV_HEADER,
    REFERENCE_SIZES,
    BenchRecord,
    HiddenBuffer,
    RunStats,
    bench_loadstore,
    bench_strops,
    bench_traversal,
    geomean,
    hide_split,
    loadstore_ratios,
    render_csv,
    render_json,
    render_markdown,
    unhide_combine,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "SimplexError",
    "DisabledError",
    "HardwareUnavailableError",
    "BackendConfigError",
    "NullSlotAddressError",
    "ForkFailedError",
    "HarnessMismatchError",
    "DomainError",
    # register file
    "MASK64",
    "LOW_RESET",
    "HIGH_RESET",
    "SlotId",
    "BoundsSlot",
    "BackendKind",
    "RegisterFile",
    # probe
    "ENV_BACKEND",
    "OverrideSource",
    "ProbeReport",
    "probe",
    "select_backend",
    # runtime
    "process_specific_init",
    "process_specific_finish",
    "is_enabled",
    # context inheritance
    "Actor",
    "Observation",
    "ContextEvent",
    "ContextEventLog",
    "PRESTATED",
    "EXPECTED_FORK_TABLE",
    "EXPECTED_THREAD_TABLE",
    "EXPECTED_REINIT_TABLE",
    "snapshot",
    "spawn_inheriting",
    "fork_harness",
    "thread_harness",
    "reinit_harness",
    # slot-addressed string ops
    "OpKind",
    "ByteCounter",
    "ref_op",
    "slot_op",
    "slot_address",
    "byte_address",
    "view_at",
    # benchmarks
    "REFERENCE_SIZES",
    "CSV_HEADER",
    "RunStats",
    "BenchRecord",
    "geomean",
    "HiddenBuffer",
    "hide_split",
    "unhide_combine",
    "bench_loadstore",
    "loadstore_ratios",
    "bench_traversal",
    "bench_strops",
    "render_csv",
    "render_markdown",
    "render_json",
]
