"""Bounds-register file: four 128-bit slots repurposed as hidden storage.

The x86 MPX extension left four architecturally invisible registers
(BND0..BND3) on many shipped CPUs.  Each holds two raw 64-bit halves.  This
module exposes them as addressable storage slots behind one data path with
two interchangeable backends:

* Hardware: the real registers, written with a SIB-addressed BNDMK and read
  by spilling the raw image with BNDMOV.  BNDMK stores the one's complement
  of the effective address as the raw upper half, so the write path
  pre-compensates and callers only ever see raw halves.
* Emulated: a bit-exact software model, usable on any machine.  It mirrors
  the spill-through-scratch read protocol so the two backends are
  indistinguishable through the public operations.

Reads spill through a fixed 16-byte scratch buffer (one per thread); every
sanitizing read zeroes the scratch afterwards so spilled payloads never
linger.  The quick variants trade that hygiene for speed: qsetbnd_low
rewrites a slot with a single bounds-make (leaving the upper half
unspecified) and qgetbnd_low skips the scratch wipe.

A RegisterFile is a handle to the calling thread's register context and is
owned by that thread; handles must not be shared or sent across threads.
Files start disabled.  Use runtime.process_specific_init() to obtain an
enabled one.
"""

from __future__ import annotations

import ctypes
import struct
import threading
from dataclasses import dataclass
from enum import Enum, IntEnum

from . import machine
from .errors import DisabledError, HardwareUnavailableError

__all__ = [
    "MASK64",
    "LOW_RESET",
    "HIGH_RESET",
    "SlotId",
    "BoundsSlot",
    "BackendKind",
    "RegisterFile",
]

MASK64 = 0xFFFF_FFFF_FFFF_FFFF

# Post-initialization register value, as observed on hardware: the raw lower
# half reads back as the maximum unsigned 64-bit value and the raw upper
# half as zero.
LOW_RESET = MASK64
HIGH_RESET = 0


class SlotId(IntEnum):
    """The four bounds registers; no other slot values are representable."""

    BND0 = 0
    BND1 = 1
    BND2 = 2
    BND3 = 3


@dataclass(frozen=True)
class BoundsSlot:
    """Raw 128-bit slot image: two unsigned 64-bit halves."""

    low: int
    high: int

    def __post_init__(self) -> None:
        if not 0 <= self.low <= MASK64:
            raise ValueError(f"low half out of range: {self.low:#x}")
        if not 0 <= self.high <= MASK64:
            raise ValueError(f"high half out of range: {self.high:#x}")


RESET_SLOT = BoundsSlot(LOW_RESET, HIGH_RESET)


class BackendKind(Enum):
    HARDWARE = "hardware"
    EMULATED = "emulated"


_QQ = struct.Struct("<QQ")
_Q = struct.Struct("<Q")


# --------------------------------------------------------------------------
# Backend contexts.  One context per (thread, backend kind); it owns the
# slot state, the enable flag, and the 16-byte spill scratch.  Both classes
# expose the same primitive surface so RegisterFile runs a single data path.
# --------------------------------------------------------------------------


class _EmulatedContext:
    kind = BackendKind.EMULATED

    def __init__(self) -> None:
        self.enabled = False
        self._slots = [[LOW_RESET, HIGH_RESET] for _ in range(4)]
        self._scratch = bytearray(16)

    def enable(self) -> None:
        self.enabled = True

    def disable(self) -> None:
        self.enabled = False

    def make_bounds(self, slot: int, low: int, high: int) -> None:
        cell = self._slots[slot]
        cell[0] = low
        cell[1] = high

    def spill(self, slot: int) -> None:
        cell = self._slots[slot]
        _QQ.pack_into(self._scratch, 0, cell[0], cell[1])

    def scratch_qword(self, index: int) -> int:
        return _Q.unpack_from(self._scratch, index * 8)[0]

    def sanitize_scratch(self) -> None:
        self._scratch[:] = b"\x00" * 16

    def scratch_snapshot(self) -> bytes:
        return bytes(self._scratch)

    def raw_slots(self) -> list[tuple[int, int]]:
        return [(cell[0], cell[1]) for cell in self._slots]


class _HardwareContext:
    kind = BackendKind.HARDWARE

    def __init__(self) -> None:
        has_mpx, xcr0_bndregs, xcr0_bndcsr = machine.mpx_facts()
        if not has_mpx:
            raise HardwareUnavailableError("CPU does not advertise MPX (CPUID.7:EBX bit 14)")
        if not (xcr0_bndregs and xcr0_bndcsr):
            raise HardwareUnavailableError(
                "OS does not context-switch the MPX state (XCR0 bits 3 and 4)"
            )
        self._stubs = machine.stubs()
        self.enabled = False

        # Scratch: 16 bytes, 16-byte aligned, fixed for the thread's lifetime.
        self._scratch_buf = ctypes.create_string_buffer(32)
        base = ctypes.addressof(self._scratch_buf)
        self._scratch_addr = (base + 15) & ~15

        # XSAVE area sized for every feature the CPU supports, 64-byte aligned.
        _, _, max_size, _ = self._stubs.cpuid(0x0D, 0)
        self._area_buf = ctypes.create_string_buffer(max_size + 64)
        area_base = ctypes.addressof(self._area_buf)
        self._area_addr = (area_base + 63) & ~63
        self._area_size = max_size
        _, self._bndregs_off, _, _ = self._stubs.cpuid(0x0D, 3)
        _, self._bndcsr_off, _, _ = self._stubs.cpuid(0x0D, 4)

    # XSAVE header layout: XSTATE_BV at +512, XCOMP_BV at +520 (must stay
    # zero for the standard, non-compacted format), remainder reserved.
    def _clear_area(self) -> None:
        ctypes.memset(self._area_addr, 0, self._area_size)

    def enable(self) -> None:
        # User-mode XRSTOR of the BNDCSR component with BNDCFGU = enable |
        # preserve-on-legacy-branch.  The bounds-table base (bits 63:12) is
        # deliberately left zero: slots are plain storage, never bounds.
        self._clear_area()
        ctypes.memmove(self._area_addr + 512, _Q.pack(1 << 4), 8)
        ctypes.memmove(self._area_addr + self._bndcsr_off, _QQ.pack(0b11, 0), 16)
        self._stubs.xrstor(self._area_addr, 1 << 4)
        self.enabled = True

    def disable(self) -> None:
        # XRSTOR with the BNDCSR bit clear in XSTATE_BV writes the component's
        # initial configuration: BNDCFGU = 0, i.e. MPX off for this thread.
        self._clear_area()
        self._stubs.xrstor(self._area_addr, 1 << 4)
        self.enabled = False

    def make_bounds(self, slot: int, low: int, high: int) -> None:
        # BNDMK bndN, [low + index] leaves raw low = low and raw high =
        # ~(low + index); solve for index to land on the requested high.
        index = (~high - low) & MASK64
        self._stubs.bndmk(slot, low, index)

    def spill(self, slot: int) -> None:
        self._stubs.bndmov_spill(slot, self._scratch_addr)

    def scratch_qword(self, index: int) -> int:
        return _Q.unpack_from(
            ctypes.string_at(self._scratch_addr + index * 8, 8), 0
        )[0]

    def sanitize_scratch(self) -> None:
        ctypes.memset(self._scratch_addr, 0, 16)

    def scratch_snapshot(self) -> bytes:
        return ctypes.string_at(self._scratch_addr, 16)

    def raw_slots(self) -> list[tuple[int, int]]:
        # XSAVE can dump the bounds registers even while MPX is disabled, as
        # long as XCR0 advertises the component.  A clear XSTATE_BV bit after
        # the save means the registers sit in their INIT state (raw zeros).
        self._clear_area()
        self._stubs.xsave(self._area_addr, 1 << 3)
        (xstate_bv,) = _Q.unpack_from(ctypes.string_at(self._area_addr + 512, 8), 0)
        if not (xstate_bv >> 3) & 1:
            return [(0, 0)] * 4
        image = ctypes.string_at(self._area_addr + self._bndregs_off, 64)
        return [tuple(_QQ.unpack_from(image, slot * 16)) for slot in range(4)]


# --------------------------------------------------------------------------
# Per-thread context registry
# --------------------------------------------------------------------------

_tls = threading.local()


def _thread_context(kind: BackendKind):
    """Return the calling thread's context for `kind`, creating it if needed.

    Hardware contexts are only constructible when the probe facts authorize
    them; construction raises HardwareUnavailableError otherwise.
    """
    registry = getattr(_tls, "contexts", None)
    if registry is None:
        registry = {}
        _tls.contexts = registry
    ctx = registry.get(kind)
    if ctx is None:
        ctx = _HardwareContext() if kind is BackendKind.HARDWARE else _EmulatedContext()
        registry[kind] = ctx
    return ctx


def _check_value(value: int) -> None:
    if not 0 <= value <= MASK64:
        raise ValueError(f"slot half out of 64-bit range: {value:#x}")


class RegisterFile:
    """Thread-private handle to the four bounds slots of one backend.

    All accessors and mutators require the file to be enabled and raise
    DisabledError otherwise, leaving state untouched.
    """

    def __init__(self, kind: BackendKind, _ctx=None) -> None:
        self.backend = kind
        self._ctx = _ctx if _ctx is not None else _thread_context(kind)

    # -- gating ---------------------------------------------------------

    def _require_enabled(self):
        ctx = self._ctx
        if not ctx.enabled:
            raise DisabledError(f"{self.backend.value} register file is not enabled")
        return ctx

    # -- mutators ---------------------------------------------------------

    def setbnd_low(self, slot: SlotId, value: int) -> None:
        """Write the lower half, preserving the upper half."""
        ctx = self._require_enabled()
        slot = SlotId(slot)
        _check_value(value)
        ctx.spill(slot)
        high = ctx.scratch_qword(1)
        ctx.sanitize_scratch()
        ctx.make_bounds(slot, value, high)

    def setbnd_high(self, slot: SlotId, value: int) -> None:
        """Write the upper half, preserving the lower half."""
        ctx = self._require_enabled()
        slot = SlotId(slot)
        _check_value(value)
        ctx.spill(slot)
        low = ctx.scratch_qword(0)
        ctx.sanitize_scratch()
        ctx.make_bounds(slot, low, value)

    def setbnd128(self, slot: SlotId, low: int, high: int) -> None:
        """Write both halves at once."""
        ctx = self._require_enabled()
        slot = SlotId(slot)
        _check_value(low)
        _check_value(high)
        ctx.make_bounds(slot, low, high)

    def qsetbnd_low(self, slot: SlotId, value: int) -> None:
        """Quick lower-half write: a single bounds-make, no spill.

        The upper half is UNSPECIFIED afterwards; callers must not rely on
        it.  (Both backends currently leave the bitwise complement of the
        written value there, an artifact of the zero-index bounds-make, but
        that is an implementation detail, not API.)
        """
        ctx = self._require_enabled()
        slot = SlotId(slot)
        _check_value(value)
        ctx.make_bounds(slot, value, ~value & MASK64)

    # -- accessors ---------------------------------------------------------

    def getbnd_low(self, slot: SlotId) -> int:
        """Sanitizing lower-half read."""
        ctx = self._require_enabled()
        ctx.spill(SlotId(slot))
        value = ctx.scratch_qword(0)
        ctx.sanitize_scratch()
        return value

    def getbnd_high(self, slot: SlotId) -> int:
        """Sanitizing upper-half read."""
        ctx = self._require_enabled()
        ctx.spill(SlotId(slot))
        value = ctx.scratch_qword(1)
        ctx.sanitize_scratch()
        return value

    def getbnd128(self, slot: SlotId) -> BoundsSlot:
        """Sanitizing full read of both halves."""
        ctx = self._require_enabled()
        ctx.spill(SlotId(slot))
        low = ctx.scratch_qword(0)
        high = ctx.scratch_qword(1)
        ctx.sanitize_scratch()
        return BoundsSlot(low, high)

    def qgetbnd_low(self, slot: SlotId) -> int:
        """Quick lower-half read: spills but skips the scratch wipe.

        The spilled register image stays in the scratch buffer until the
        next sanitizing operation; scratch_snapshot() makes that visible.
        """
        ctx = self._require_enabled()
        ctx.spill(SlotId(slot))
        return ctx.scratch_qword(0)

    # -- resets ---------------------------------------------------------

    def reset_slot(self, slot: SlotId) -> None:
        """Restore one slot to the post-initialization state. Idempotent."""
        ctx = self._require_enabled()
        ctx.make_bounds(SlotId(slot), LOW_RESET, HIGH_RESET)

    def reset_all(self) -> None:
        """Restore all four slots to the post-initialization state."""
        ctx = self._require_enabled()
        for slot in SlotId:
            ctx.make_bounds(slot, LOW_RESET, HIGH_RESET)

    # -- hooks ---------------------------------------------------------

    def scratch_snapshot(self) -> bytes:
        """Return the current 16-byte spill scratch contents (test hook)."""
        return self._ctx.scratch_snapshot()

    def _peek_raw_slots(self) -> list[tuple[int, int]]:
        """Raw slot images regardless of enablement (inspection hook).

        Works through XSAVE on hardware and direct state access on the
        emulated backend; used by the harnesses to verify post-finalize
        state without re-enabling anything.
        """
        return self._ctx.raw_slots()
