"""Inheritance semantics: fork, threads, re-init, and the harness plumbing."""

import os
import threading

import pytest

from simplex import (
    LOW_RESET,
    Actor,
    BackendKind,
    BoundsSlot,
    DisabledError,
    ForkFailedError,
    HarnessMismatchError,
    RegisterFile,
    SlotId,
    fork_harness,
    process_specific_finish,
    process_specific_init,
    reinit_harness,
    snapshot,
    spawn_inheriting,
    thread_harness,
)
from simplex.context import EXPECTED_FORK_TABLE, _read_record, _write_record

P, C1, C2 = Actor.PARENT, Actor.CHILD1, Actor.CHILD2

# Independent copies of the expected observations, written out literally.
# Unlike the package's expected tables these pin every cell's exact value,
# including the inherited values the published layout pre-states.

FORK_OBSERVED = [
    (P, {P: (True, 1)}),
    (P, {P: (True, 1), C1: (True, 1)}),
    (C1, {P: (True, 1), C1: (True, 2)}),
    (C1, {P: (True, 1), C1: (False, None)}),
    (C1, {P: (True, 1)}),
    (P, {P: (False, None)}),
]

THREAD_OBSERVED = [
    (P, {P: (True, 0)}),
    (P, {P: (True, 0), C1: (True, 0)}),          # child inherits parent's 0
    (P, {P: (True, 0), C1: (True, 0), C2: (True, 0)}),
    (C1, {P: (True, 0), C1: (True, 1), C2: (True, 0)}),
    (C2, {P: (True, 0), C1: (True, 1), C2: (True, 2)}),
    (C2, {P: (True, 0), C1: (True, 1), C2: (False, None)}),
    (C1, {P: (True, 0), C1: (False, None), C2: (False, None)}),
    (P, {P: (True, 0)}),
    (P, {P: (False, None)}),
]

REINIT_OBSERVED = [
    (P, {P: (True, LOW_RESET)}),
    (P, {P: (True, 5)}),
    (P, {P: (True, LOW_RESET)}),
    (P, {P: (False, None)}),
    (P, {P: (False, None)}),
]


def _assert_log_matches(log, observed):
    assert len(log.rows) == len(observed)
    for row, (actor, cells) in zip(log.rows, observed):
        assert row.actor is actor
        assert set(row.observed) == set(cells)
        for who, (enabled, bnd0_low) in cells.items():
            assert row.observed[who].enabled == enabled, (row.action, who)
            assert row.observed[who].bnd0_low == bnd0_low, (row.action, who)


@pytest.mark.skipif(not hasattr(os, "fork"), reason="platform has no fork()")
def test_fork_harness_matches_observed_table():
    log = fork_harness(BackendKind.EMULATED)
    _assert_log_matches(log, FORK_OBSERVED)


def test_thread_harness_matches_observed_table():
    log = thread_harness(BackendKind.EMULATED)
    _assert_log_matches(log, THREAD_OBSERVED)


def test_reinit_harness_matches_observed_table():
    log = reinit_harness(BackendKind.EMULATED)
    _assert_log_matches(log, REINIT_OBSERVED)


def test_harness_logs_deterministic_across_runs():
    first = thread_harness(BackendKind.EMULATED)
    second = thread_harness(BackendKind.EMULATED)
    assert first.rows == second.rows
    assert first.to_table() == second.to_table()


def test_to_table_renders_every_action():
    log = reinit_harness(BackendKind.EMULATED)
    table = log.to_table()
    lines = table.splitlines()
    assert lines[0].startswith("| Event")
    for row in log.rows:
        assert any(row.action in line for line in lines)


def test_snapshot_reads_all_slots(emulated_file):
    emulated_file.setbnd128(SlotId.BND1, 7, 8)
    shot = snapshot(emulated_file)
    assert len(shot) == 4
    assert shot[SlotId.BND1] == BoundsSlot(7, 8)
    assert shot[SlotId.BND0].low == LOW_RESET
    assert snapshot(emulated_file) == shot


def test_spawn_inheriting_copies_then_isolates(emulated_file):
    emulated_file.setbnd_low(SlotId.BND0, 0)
    emulated_file.setbnd128(SlotId.BND3, 0xAA, 0xBB)
    seen = {}

    def task(child_file):
        seen["initial"] = snapshot(child_file)
        child_file.setbnd_low(SlotId.BND0, 1)
        seen["after_write"] = child_file.getbnd_low(SlotId.BND0)
        process_specific_finish(child_file)

    thread = spawn_inheriting(emulated_file, task)
    thread.join(timeout=30)
    assert not thread.is_alive()
    assert seen["initial"] == snapshot(emulated_file)
    assert seen["after_write"] == 1
    # Child wrote 1 and finished; parent still reads its own 0.
    assert emulated_file.getbnd_low(SlotId.BND0) == 0


def test_bare_thread_starts_disabled():
    outcome = {}

    def task():
        file = RegisterFile(BackendKind.EMULATED)
        try:
            file.getbnd_low(SlotId.BND0)
            outcome["error"] = None
        except DisabledError as exc:
            outcome["error"] = exc

    thread = threading.Thread(target=task)
    thread.start()
    thread.join(timeout=30)
    assert isinstance(outcome["error"], DisabledError)


def test_record_codec_roundtrip(emulated_file):
    emulated_file.setbnd_low(SlotId.BND0, 0x0102030405060708)
    read_fd, write_fd = os.pipe()
    try:
        _write_record(write_fd, Actor.CHILD1, emulated_file)
        obs = _read_record(read_fd, Actor.CHILD1)
        assert obs.enabled is True
        assert obs.bnd0_low == 0x0102030405060708
    finally:
        os.close(read_fd)
        os.close(write_fd)


def test_record_codec_rejects_wrong_actor(emulated_file):
    read_fd, write_fd = os.pipe()
    try:
        _write_record(write_fd, Actor.PARENT, emulated_file)
        with pytest.raises(ForkFailedError):
            _read_record(read_fd, Actor.CHILD1)
    finally:
        os.close(read_fd)
        os.close(write_fd)


def test_record_codec_short_read_fails():
    read_fd, write_fd = os.pipe()
    os.write(write_fd, b"\x01\x01\x02")
    os.close(write_fd)
    try:
        with pytest.raises(ForkFailedError):
            _read_record(read_fd, Actor.CHILD1)
    finally:
        os.close(read_fd)


@pytest.mark.skipif(not hasattr(os, "fork"), reason="platform has no fork()")
def test_fork_failure_maps_to_forkfailed(monkeypatch):
    def broken_fork():
        raise OSError("out of processes")

    monkeypatch.setattr(os, "fork", broken_fork)
    with pytest.raises(ForkFailedError):
        fork_harness(BackendKind.EMULATED)


@pytest.mark.skipif(not hasattr(os, "fork"), reason="platform has no fork()")
def test_fork_harness_reports_first_mismatched_row():
    flipped = [(actor, action, dict(cells)) for actor, action, cells in EXPECTED_FORK_TABLE]
    flipped[2][2][Actor.CHILD1] = (True, 3)
    with pytest.raises(HarnessMismatchError) as excinfo:
        fork_harness(BackendKind.EMULATED, expected=flipped)
    assert excinfo.value.row_index == 2
    assert "row 2" in str(excinfo.value)


def test_thread_harness_reports_first_mismatched_row():
    from simplex.context import EXPECTED_THREAD_TABLE

    flipped = [(actor, action, dict(cells)) for actor, action, cells in EXPECTED_THREAD_TABLE]
    flipped[4][2][Actor.CHILD2] = (True, 7)
    with pytest.raises(HarnessMismatchError) as excinfo:
        thread_harness(BackendKind.EMULATED, expected=flipped)
    assert excinfo.value.row_index == 4


def test_child_finish_part_of_fork_table_leaves_parent_enabled():
    # Narrow re-check of the load-bearing cells, independent of the tables.
    log = thread_harness(BackendKind.EMULATED)
    child2_finish = log.rows[5]
    assert child2_finish.observed[C2].enabled is False
    assert child2_finish.observed[P].enabled is True
    assert child2_finish.observed[C1].enabled is True
