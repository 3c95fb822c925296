"""System readiness probe and backend selection.

The hardware backend needs two things at once: a CPU that advertises MPX
(CPUID leaf 7, EBX bit 14) and an OS that context-switches the MPX state,
visible as XCR0 bits 3 (BNDREGS) and 4 (BNDCSR).  probe() gathers those
facts without ever executing an instruction that could trap on an
unsupported machine, then resolves which backend a process should use.

Overrides come from the SIMPLEX_BACKEND environment variable or an explicit
flag (the flag wins).  Valid values are the exact lowercase strings "auto",
"hardware", and "emulated"; anything else is a startup error.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from enum import Enum

from . import machine
from .errors import BackendConfigError, HardwareUnavailableError
from .regfile import BackendKind

__all__ = [
    "ENV_BACKEND",
    "OverrideSource",
    "ProbeReport",
    "probe",
    "select_backend",
]

ENV_BACKEND = "SIMPLEX_BACKEND"

_VALID_OVERRIDES = {
    "auto": None,
    "hardware": BackendKind.HARDWARE,
    "emulated": BackendKind.EMULATED,
}


class OverrideSource(Enum):
    NONE = "none"
    ENV = "env"
    FLAG = "flag"


@dataclass(frozen=True)
class ProbeReport:
    """Readiness facts plus the backend resolution made from them."""

    cpu_has_mpx: bool
    xstate_bndregs: bool
    xstate_bndcsr: bool
    os_context_saves_mpx: bool
    selected: BackendKind
    override_source: OverrideSource

    @property
    def hardware_capable(self) -> bool:
        return self.cpu_has_mpx and self.os_context_saves_mpx

    def to_dict(self) -> dict:
        return {
            "cpu_has_mpx": self.cpu_has_mpx,
            "xstate_bndregs": self.xstate_bndregs,
            "xstate_bndcsr": self.xstate_bndcsr,
            "os_context_saves_mpx": self.os_context_saves_mpx,
            "selected": self.selected.value,
            "override_source": self.override_source.value,
        }


def _parse_override(text: str) -> BackendKind | None:
    try:
        return _VALID_OVERRIDES[text]
    except KeyError:
        raise BackendConfigError(
            f"unknown backend {text!r}; valid values: auto, hardware, emulated"
        ) from None


def probe(env: dict | None = None, flag: str | None = None) -> ProbeReport:
    """Gather readiness facts and resolve the backend. Never traps.

    `env` defaults to os.environ; `flag` is a CLI-style override string that
    takes precedence over the environment variable.  Hardware is selected
    exactly when the CPU and OS are both capable and no override forces the
    emulated backend; an unsatisfiable "hardware" override degrades to
    emulated here and is enforced strictly only by select_backend().
    """
    cpu_has_mpx, bndregs, bndcsr = machine.mpx_facts()
    os_saves = bndregs and bndcsr

    source = OverrideSource.NONE
    requested: BackendKind | None = None
    if flag is not None:
        requested = _parse_override(flag)
        source = OverrideSource.FLAG
    else:
        env_value = (os.environ if env is None else env).get(ENV_BACKEND)
        if env_value is not None:
            requested = _parse_override(env_value)
            source = OverrideSource.ENV

    capable = cpu_has_mpx and os_saves
    if requested is BackendKind.EMULATED:
        selected = BackendKind.EMULATED
    elif capable:
        selected = BackendKind.HARDWARE
    else:
        selected = BackendKind.EMULATED

    return ProbeReport(
        cpu_has_mpx=cpu_has_mpx,
        xstate_bndregs=bndregs,
        xstate_bndcsr=bndcsr,
        os_context_saves_mpx=os_saves,
        selected=selected,
        override_source=source,
    )


def select_backend(
    report: ProbeReport,
    requested: BackendKind | None = None,
    *,
    strict: bool = False,
) -> BackendKind:
    """Resolve a backend request against probe facts.

    With requested=None ("auto") the capable backend wins.  Requesting
    hardware on an incapable machine raises HardwareUnavailableError when
    strict, otherwise falls back to emulated with a warning.
    """
    if requested is BackendKind.EMULATED:
        return BackendKind.EMULATED
    if requested is BackendKind.HARDWARE:
        if report.hardware_capable:
            return BackendKind.HARDWARE
        if strict:
            raise HardwareUnavailableError(
                "hardware backend requested but this machine cannot provide it "
                f"(cpu_has_mpx={report.cpu_has_mpx}, "
                f"os_context_saves_mpx={report.os_context_saves_mpx})"
            )
        warnings.warn(
            "hardware backend unavailable; falling back to emulated",
            RuntimeWarning,
            stacklevel=2,
        )
        return BackendKind.EMULATED
    return BackendKind.HARDWARE if report.hardware_capable else BackendKind.EMULATED
