"""Binary container for model checkpoints.

Layout: magic ``LSLM``, format version (u32), a field-tagged config
block, then one record per named tensor: name length (u32), name bytes,
rank (u32), dims (u32 each), row-major little-endian float32 payload.
All integers are little-endian.  Reads are strict: bad magic, an
unknown version, or truncation raise :class:`CheckpointError`.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"LSLM"
VERSION = 1

_FIELD_INT = 0
_FIELD_FLOAT = 1
_FIELD_STR = 2
_FIELD_BOOL = 3
_FIELD_NONE = 4


class CheckpointError(IOError):
    """Corrupt, truncated, or incompatible checkpoint file."""


def write_container(path, fields: dict, arrays: dict) -> None:
    """Write config fields and named float32 arrays; keys are sorted for
    byte-for-byte determinism."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(fields)))
        for name in sorted(fields):
            value = fields[name]
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            if value is None:
                fh.write(struct.pack("<B", _FIELD_NONE))
            elif isinstance(value, bool):
                fh.write(struct.pack("<Bb", _FIELD_BOOL, int(value)))
            elif isinstance(value, int):
                fh.write(struct.pack("<Bq", _FIELD_INT, value))
            elif isinstance(value, float):
                fh.write(struct.pack("<Bd", _FIELD_FLOAT, value))
            elif isinstance(value, str):
                encoded = value.encode("utf-8")
                fh.write(struct.pack("<BI", _FIELD_STR, len(encoded)))
                fh.write(encoded)
            else:
                raise CheckpointError(f"unsupported config field type: {name}={value!r}")
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype=np.float32)
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes(order="C"))


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def read_container(path):
    """Return ``(fields, arrays)`` from a container file."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError("bad magic bytes (not a checkpoint file)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (n_fields,) = struct.unpack("<I", _read_exact(fh, 4))
        fields = {}
        for _ in range(n_fields):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (kind,) = struct.unpack("<B", _read_exact(fh, 1))
            if kind == _FIELD_NONE:
                fields[name] = None
            elif kind == _FIELD_BOOL:
                fields[name] = bool(struct.unpack("<b", _read_exact(fh, 1))[0])
            elif kind == _FIELD_INT:
                fields[name] = struct.unpack("<q", _read_exact(fh, 8))[0]
            elif kind == _FIELD_FLOAT:
                fields[name] = struct.unpack("<d", _read_exact(fh, 8))[0]
            elif kind == _FIELD_STR:
                (str_len,) = struct.unpack("<I", _read_exact(fh, 4))
                fields[name] = _read_exact(fh, str_len).decode("utf-8")
            else:
                raise CheckpointError(f"unknown config field tag {kind}")
        arrays = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("truncated checkpoint file")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            count = int(np.prod(shape)) if rank else 1
            payload = _read_exact(fh, 4 * count)
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        return fields, arrays
