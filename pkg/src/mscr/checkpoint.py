"""Binary checkpoint format.

Layout: magic line `MSCR1`, an ASCII manifest (precision, tensor count,
flat config key=value lines) terminated by `end_manifest`, then one
record per tensor: a header line `tensor <name> <d0,d1,...> <nbytes>`
followed by raw little-endian float64 bytes. Save/load round-trips are
bitwise exact.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import Tensor
from .config import SECTIONS, config_to_flat, flat_to_configs

MAGIC = b"MSCR1\n"


class FormatError(ValueError):
    """Checkpoint bytes violate the format contract."""


def save_checkpoint(params: dict, configs: dict, path: str) -> None:
    """configs maps section name -> dataclass (model/train/pipe at minimum)."""
    flat = config_to_flat({k: v for k, v in configs.items() if k in SECTIONS})
    lines = [f"precision=float64", f"tensor_count={len(params)}"]
    lines += [f"{k}={flat[k]}" for k in sorted(flat)]
    lines.append("end_manifest")
    blob = bytearray(MAGIC)
    blob += ("\n".join(lines) + "\n").encode("ascii")
    for name, tensor in params.items():
        arr = np.ascontiguousarray(tensor.data, dtype="<f8")
        shape_csv = ",".join(str(s) for s in arr.shape)
        blob += f"tensor {name} {shape_csv} {arr.nbytes}\n".encode("ascii")
        blob += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def _read_line(blob: bytes, offset: int) -> tuple[str, int]:
    nl = blob.find(b"\n", offset)
    if nl < 0:
        raise FormatError(f"truncated checkpoint: no line terminator after byte {offset}")
    try:
        return blob[offset:nl].decode("ascii"), nl + 1
    except UnicodeDecodeError as exc:
        raise FormatError(f"non-ascii manifest bytes at byte {offset}") from exc


def load_checkpoint(path: str) -> tuple[dict, dict]:
    """Returns (params, configs). No partial params on any failure."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError("bad magic at byte 0: not a checkpoint file")
    offset = len(MAGIC)

    flat: dict = {}
    precision = None
    tensor_count = None
    while True:
        line, offset = _read_line(blob, offset)
        if line == "end_manifest":
            break
        if "=" not in line:
            raise FormatError(f"malformed manifest line before byte {offset}: {line!r}")
        key, value = line.split("=", 1)
        if key == "precision":
            precision = value
        elif key == "tensor_count":
            try:
                tensor_count = int(value)
            except ValueError as exc:
                raise FormatError(f"tensor_count is not an integer: {value!r}") from exc
        else:
            flat[key] = value
    if precision is None:
        raise FormatError("manifest missing precision field")
    if precision != "float64":
        raise FormatError(f"unsupported precision {precision!r}")
    if tensor_count is None:
        raise FormatError("manifest missing tensor_count field")

    params: dict[str, Tensor] = {}
    for i in range(tensor_count):
        if offset >= len(blob):
            raise FormatError(
                f"tensor_count mismatch: manifest declares {tensor_count}, file ends after {i}"
            )
        header, offset = _read_line(blob, offset)
        parts = header.split(" ")
        if len(parts) != 4 or parts[0] != "tensor":
            raise FormatError(f"malformed tensor header before byte {offset}: {header!r}")
        _, name, shape_csv, nbytes_s = parts
        shape = tuple(int(s) for s in shape_csv.split(",") if s != "")
        try:
            nbytes = int(nbytes_s)
        except ValueError as exc:
            raise FormatError(f"bad byte count in tensor header: {header!r}") from exc
        expected = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        if nbytes != expected:
            raise FormatError(
                f"tensor {name}: declared {nbytes} bytes, shape {shape} needs {expected}"
            )
        if offset + nbytes > len(blob):
            raise FormatError(f"truncated checkpoint at byte {offset} (tensor {name})")
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
        params[name] = Tensor(arr, requires_grad=True)
    if offset != len(blob):
        raise FormatError(f"trailing data at byte {offset}")

    configs = flat_to_configs(flat)
    return params, configs


def checkpoint_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
