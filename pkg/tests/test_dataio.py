"""CSV record contract: exact round-trips and errors that name the file
and line."""

import numpy as np
import pytest

from mscr.autodiff import ContractError
from mscr.dataio import (
    DataFormatError,
    load_dataset,
    parse_record,
    read_record,
    render_record,
    write_dataset,
    write_record,
)
from mscr.sigproc import EcgRecord


def test_render_parse_round_trip_preserves_samples_bitwise():
    rng = np.random.default_rng(0)
    rec = EcgRecord(samples=rng.standard_normal(128) * 1e-3, sampling_rate_hz=250.0)
    back = parse_record(render_record(rec))
    assert np.array_equal(back.samples, rec.samples)
    assert back.sampling_rate_hz == rec.sampling_rate_hz
    assert back.record_label is None
    assert back.point_labels is None


def test_round_trip_with_labels():
    labels = np.zeros(16, dtype=np.int64)
    labels[4:9] = 1
    rec = EcgRecord(
        samples=np.linspace(-1, 1, 16),
        sampling_rate_hz=100.0,
        record_label=1,
        point_labels=labels,
    )
    back = parse_record(render_record(rec))
    assert back.record_label == 1
    assert np.array_equal(back.point_labels, labels)
    assert np.array_equal(back.samples, rec.samples)


def test_file_round_trip(tmp_path):
    rec = EcgRecord(samples=np.array([1.5, -2.25, 3.125]), sampling_rate_hz=360.0)
    path = str(tmp_path / "r.csv")
    write_record(rec, path)
    back = read_record(path)
    assert np.array_equal(back.samples, rec.samples)
    assert back.sampling_rate_hz == 360.0


def test_parse_errors_name_the_source_and_line():
    with pytest.raises(DataFormatError, match=r"rec\.csv:1"):
        parse_record("hello\n1.0\n", source="rec.csv")
    with pytest.raises(DataFormatError, match=r":3"):
        parse_record("fs=100.0\n1.0\nnot_a_number\n", source="x.csv")
    with pytest.raises(DataFormatError, match="point_labels"):
        parse_record("fs=100.0\nlabel=1\npoint_labels=1,0\n1.0\n2.0\n3.0\n", source="y.csv")


def test_parse_rejects_bad_header_values():
    with pytest.raises(DataFormatError):
        parse_record("fs=-5.0\n1.0\n")
    with pytest.raises(DataFormatError):
        parse_record("fs=100.0\nlabel=7\n1.0\n")
    with pytest.raises(DataFormatError):
        parse_record("fs=100.0\n")  # no samples


def test_write_and_load_dataset(tmp_path):
    rng = np.random.default_rng(1)
    records = [
        EcgRecord(samples=rng.standard_normal(32), sampling_rate_hz=100.0, record_label=i % 2)
        for i in range(5)
    ]
    out = str(tmp_path / "split")
    paths = write_dataset(records, out)
    assert len(paths) == 5
    back = load_dataset(out)
    assert len(back) == 5
    for a, b in zip(records, back):
        assert np.array_equal(a.samples, b.samples)
        assert a.record_label == b.record_label


def test_load_dataset_orders_by_filename(tmp_path):
    d = tmp_path / "split"
    d.mkdir()
    for name, value in [("b.csv", 2.0), ("a.csv", 1.0)]:
        (d / name).write_text(f"fs=100.0\n{value!r}\n0.0\n")
    back = load_dataset(str(d))
    assert [r.samples[0] for r in back] == [1.0, 2.0]


def test_load_dataset_errors_on_missing_or_empty_dir(tmp_path):
    with pytest.raises(ContractError):
        load_dataset(str(tmp_path / "nope"))
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(ContractError):
        load_dataset(str(empty))
