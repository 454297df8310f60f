import numpy as np
import pytest

from chbell.model import EberhardState, ExperimentParams, SettingAngles
from chbell.records import (
    RECORD_DTYPE,
    RecordFormatError,
    TrialBatch,
    count_records,
    iter_records,
    read_header,
    read_records,
    write_records,
)
from chbell.simulate import RngModel, simulate_quantum_run

PARAMS = ExperimentParams(0.9, 0.85, 0.98, 1e-3, 1e-3)


@pytest.fixture(scope="module")
def batch():
    b, _ = simulate_quantum_run(PARAMS, SettingAngles(-80, 55, -12, 33), EberhardState(-1.5),
                                RngModel(), 20_000, seed=1)
    return b


def test_record_width():
    assert RECORD_DTYPE.itemsize == 17


@pytest.mark.parametrize("fmt", ["binary", "text"])
def test_round_trip(tmp_path, batch, fmt):
    path = tmp_path / f"r.{fmt}"
    header = {"n_trials": len(batch), "note": "test"}
    counts = write_records(path, [batch], header, fmt)
    got_header, got = read_records(path)
    assert got_header == header
    assert got.equals(batch)
    assert counts == batch.counts()
    assert count_records(path)[1] == counts


def test_chunked_writes_equal_single_write(tmp_path, batch):
    halves = [TrialBatch(*(getattr(batch, f)[s] for f in ("index", "setting_a", "setting_b", "outcome_a",
                                                          "outcome_b", "time_a", "time_b")))
              for s in (slice(0, 7000), slice(7000, None))]
    write_records(tmp_path / "a.bin", [batch], {"x": 1})
    write_records(tmp_path / "b.bin", halves, {"x": 1})
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert sum(len(b) for b in iter_records(tmp_path / "a.bin", chunk=3000)) == len(batch)


def test_text_layout(tmp_path):
    b = TrialBatch(np.array([0, 1], np.uint64), np.array([1, 2], np.uint8), np.array([2, 1], np.uint8),
                   np.array([True, False]), np.array([False, False]),
                   np.array([251, 0xFFFFFFFF], np.uint32), np.array([0xFFFFFFFF] * 2, np.uint32))
    write_records(tmp_path / "t.txt", [b], {"k": 1}, "text")
    lines = (tmp_path / "t.txt").read_text().splitlines()
    assert lines[0] == '# {"k": 1}'
    assert lines[1:] == ["0 1 2 + 0 251 -", "1 2 1 0 0 - -"]


def test_rejects_non_increasing_index(tmp_path, batch):
    with pytest.raises(RecordFormatError):
        write_records(tmp_path / "x.bin", [batch, batch], {})


def test_rejects_plus_without_time(tmp_path):
    b = TrialBatch(np.array([0], np.uint64), np.array([1], np.uint8), np.array([1], np.uint8),
                   np.array([True]), np.array([False]),
                   np.array([0xFFFFFFFF], np.uint32), np.array([0xFFFFFFFF], np.uint32))
    with pytest.raises(RecordFormatError):
        write_records(tmp_path / "x.bin", [b], {})


def test_corrupt_files(tmp_path, batch):
    (tmp_path / "junk").write_bytes(b"hello world")
    with pytest.raises(RecordFormatError):
        read_header(tmp_path / "junk")
    write_records(tmp_path / "ok.bin", [batch], {})
    raw = (tmp_path / "ok.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(raw[:-3])
    with pytest.raises(RecordFormatError):
        read_records(tmp_path / "cut.bin")
    (tmp_path / "bad.txt").write_text("# {}\n0 1 2 +\n")
    with pytest.raises(RecordFormatError):
        read_records(tmp_path / "bad.txt")
