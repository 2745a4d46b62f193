"""Record CSV i/o.

One record per file: line 1 `fs=<float>`, optional `label=<0|1>`,
optional `point_labels=<comma-separated ints>`, then one sample per
line as decimal text. Floats are written with repr(), which round-trips
float64 exactly, so write/read is lossless and byte-deterministic.
Datasets live under `<split>/<record_id>.csv`.
"""

from __future__ import annotations

import os
from typing import Optional

import numpy as np

from .autodiff import ContractError
from .sigproc import EcgRecord


class DataFormatError(ValueError):
    """A record file violates the CSV contract."""


def render_record(record: EcgRecord) -> str:
    lines = [f"fs={record.sampling_rate_hz!r}"]
    if record.record_label is not None:
        lines.append(f"label={int(record.record_label)}")
    if record.point_labels is not None:
        lines.append("point_labels=" + ",".join(str(int(v)) for v in record.point_labels))
    lines.extend(repr(float(v)) for v in record.samples)
    return "\n".join(lines) + "\n"


def write_record(record: EcgRecord, path: str) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(render_record(record))


def parse_record(text: str, source: str = "<memory>") -> EcgRecord:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("fs="):
        raise DataFormatError(f"{source}:1: expected 'fs=<float>' header")
    try:
        fs = float(lines[0][3:])
    except ValueError as exc:
        raise DataFormatError(f"{source}:1: bad sampling rate {lines[0][3:]!r}") from exc

    idx = 1
    label: Optional[int] = None
    point_labels: Optional[np.ndarray] = None
    if idx < len(lines) and lines[idx].startswith("label="):
        raw = lines[idx][len("label=") :]
        if raw not in ("0", "1"):
            raise DataFormatError(f"{source}:{idx + 1}: label must be 0 or 1, got {raw!r}")
        label = int(raw)
        idx += 1
    if idx < len(lines) and lines[idx].startswith("point_labels="):
        raw = lines[idx][len("point_labels=") :]
        try:
            point_labels = np.array([int(v) for v in raw.split(",")], dtype=np.int64)
        except ValueError as exc:
            raise DataFormatError(f"{source}:{idx + 1}: bad point_labels entry") from exc
        if np.any((point_labels != 0) & (point_labels != 1)):
            raise DataFormatError(f"{source}:{idx + 1}: point_labels must be 0/1")
        idx += 1

    samples = np.empty(len(lines) - idx)
    for j, line in enumerate(lines[idx:]):
        try:
            samples[j] = float(line)
        except ValueError as exc:
            raise DataFormatError(f"{source}:{idx + j + 1}: bad sample {line!r}") from exc
    if samples.size < 2:
        raise DataFormatError(f"{source}: record needs at least 2 samples, got {samples.size}")
    if point_labels is not None and point_labels.size != samples.size:
        raise DataFormatError(
            f"{source}: point_labels length {point_labels.size} != sample count {samples.size}"
        )
    return EcgRecord(
        samples=samples, sampling_rate_hz=fs, record_label=label, point_labels=point_labels
    )


def read_record(path: str) -> EcgRecord:
    with open(path, "r", encoding="ascii") as fh:
        return parse_record(fh.read(), source=path)


def write_dataset(records, out_dir: str, prefix: str = "rec") -> list:
    """Write records as <out_dir>/<prefix>_<i>.csv; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    width = max(4, len(str(max(len(records) - 1, 0))))
    for i, rec in enumerate(records):
        path = os.path.join(out_dir, f"{prefix}_{i:0{width}d}.csv")
        write_record(rec, path)
        paths.append(path)
    return paths


def load_dataset(split_dir: str) -> list:
    """Read every *.csv under split_dir, sorted by record id."""
    if not os.path.isdir(split_dir):
        raise ContractError(f"dataset split directory not found: {split_dir}")
    names = sorted(n for n in os.listdir(split_dir) if n.endswith(".csv"))
    if not names:
        raise ContractError(f"no record files in {split_dir}")
    return [read_record(os.path.join(split_dir, n)) for n in names]
