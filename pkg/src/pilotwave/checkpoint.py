"""Versioned binary checkpoints.

Layout (little-endian throughout)::

    b"PWSIM1"  uint32 format version  uint32 section count
    per section:
        uint16 name length, utf-8 name
        uint8 kind (0 float64, 1 complex128 as float pairs, 2 int64, 3 uint8, 4 utf-8 JSON)
        uint8 ndim, ndim x uint64 shape, uint64 payload bytes, payload
    uint32 crc32 of everything above

The whole file is read and verified before anything is decoded, so a
truncated or corrupted file never yields a partial state.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .state import LabeledWavefunction, make_grid

MAGIC = b"PWSIM1"
FORMAT_VERSION = 1

_KINDS = {0: "<f8", 1: "<c16", 2: "<i8", 3: "u1"}
_JSON = 4


class CheckpointError(RuntimeError):
    pass


def _kind_of(arr: np.ndarray) -> int:
    if np.iscomplexobj(arr):
        return 1
    if arr.dtype == np.uint8 or arr.dtype == bool:
        return 3
    if np.issubdtype(arr.dtype, np.integer):
        return 2
    return 0


def encode(sections: dict, version: int = FORMAT_VERSION) -> bytes:
    out = [MAGIC, struct.pack("<II", version, len(sections))]
    for name, value in sections.items():
        key = name.encode()
        out.append(struct.pack("<H", len(key)) + key)
        if isinstance(value, np.ndarray):
            kind = _kind_of(value)
            arr = np.ascontiguousarray(value, dtype=_KINDS[kind])
            payload = arr.tobytes()
            shape = arr.shape
        else:
            kind = _JSON
            payload = json.dumps(value, sort_keys=True).encode()
            shape = ()
        out.append(struct.pack("<BB", kind, len(shape)))
        out.append(struct.pack(f"<{len(shape)}Q", *shape))
        out.append(struct.pack("<Q", len(payload)) + payload)
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        b = self.buf[self.pos : self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes) -> dict:
    if len(buf) < len(MAGIC) + 12:
        raise CheckpointError("checkpoint is truncated")
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a pilotwave checkpoint (bad magic bytes)")
    (version,) = struct.unpack_from("<I", buf, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported; this build reads version {FORMAT_VERSION}")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint is truncated or corrupted (checksum mismatch)")
    r = _Reader(body)
    r.take(len(MAGIC) + 4)
    (count,) = r.unpack("<I")
    out = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        kind, ndim = r.unpack("<BB")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        (nbytes,) = r.unpack("<Q")
        payload = r.take(nbytes)
        if kind == _JSON:
            out[name] = json.loads(payload.decode())
        elif kind in _KINDS:
            arr = np.frombuffer(payload, dtype=_KINDS[kind])
            if arr.size != int(np.prod(shape)):
                raise CheckpointError(f"section {name!r} has {arr.size} values, header says {shape}")
            out[name] = arr.reshape(shape).copy()
        else:
            raise CheckpointError(f"section {name!r} has unknown kind {kind}")
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after the last section")
    return out


def write_sections(path, sections: dict) -> None:
    """Write atomically: a crash mid-write leaves any previous file intact."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(sections))
    os.replace(tmp, path)


def read_sections(path) -> dict:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from None
    return decode(buf)


def _wavefunction_sections(psi: LabeledWavefunction, prefix: str = "psi") -> dict:
    return {
        f"{prefix}.grid": psi.grid.to_dict(),
        f"{prefix}.time": np.array([psi.time]),
        f"{prefix}.amplitudes": np.asarray(psi.amplitudes),
    }


def _wavefunction_from(sections: dict, prefix: str = "psi") -> LabeledWavefunction:
    g = sections[f"{prefix}.grid"]
    grid = make_grid(g["extents"], g["boundary"])
    return LabeledWavefunction(grid, sections[f"{prefix}.amplitudes"], float(sections[f"{prefix}.time"][0]))


def checkpoint(state, path) -> None:
    """Save a ``LabeledWavefunction`` or any object with ``to_sections()``."""
    if isinstance(state, LabeledWavefunction):
        sections = {"type": "wavefunction", **_wavefunction_sections(state)}
    else:
        sections = {"type": type(state).__name__, **state.to_sections()}
    write_sections(path, sections)


def restore(path):
    """Inverse of ``checkpoint``; simulation states are rebuilt by the runner."""
    sections = read_sections(path)
    kind = sections.get("type")
    if kind == "wavefunction":
        return _wavefunction_from(sections)
    if kind == "SimulationState":
        from .runner import SimulationState

        return SimulationState.from_sections(sections)
    raise CheckpointError(f"unknown checkpoint content {kind!r}")
