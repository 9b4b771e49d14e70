"""Manifest-plus-binary-block file container and config hashing.

Files written here share one layout: a UTF-8 key-value header terminated by
an ``end_header`` line, followed by a contiguous data section of raw
little-endian arrays. Block offsets in the header are relative to the first
byte after ``end_header`` so the header length never feeds back into the
offsets. A CRC-32 of the data section guards against truncation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError

_DTYPES = {"f4": np.dtype("<f4"), "u4": np.dtype("<u4")}
_END = b"end_header\n"


def write_container(
    path: str | Path,
    magic: str,
    version: int,
    fields: dict[str, str],
    blocks: list[tuple[str, np.ndarray]],
) -> dict[str, tuple[int, int, tuple[int, ...]]]:
    """Write header fields plus named 2-D arrays; returns block offsets/shapes."""
    layout: dict[str, tuple[int, int, tuple[int, ...]]] = {}
    payload = bytearray()
    block_lines = []
    for name, arr in blocks:
        if arr.ndim != 2:
            raise FormatError(f"block {name!r} must be 2-D, got shape {arr.shape}")
        code = {"float32": "f4", "uint32": "u4"}.get(arr.dtype.name)
        if code is None:
            raise FormatError(f"block {name!r} has unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        offset = len(payload)
        payload += raw
        layout[name] = (offset, len(raw), arr.shape)
        block_lines.append(
            f"block {name} {code} {offset} {len(raw)} {arr.shape[0]} {arr.shape[1]}"
        )
    crc = zlib.crc32(bytes(payload))
    lines = [f"{magic} {version}"]
    lines += [f"{k} = {v}" for k, v in fields.items()]
    lines += block_lines
    lines.append(f"crc32 = {crc:08x}")
    header = ("\n".join(lines) + "\n").encode("utf-8") + _END
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bytes(payload))
    return layout


def read_container(
    path: str | Path, magic: str, version: int
) -> tuple[dict[str, str], dict[str, np.ndarray], dict[str, tuple[int, int, tuple[int, ...]]]]:
    """Read a container back; raises FormatError on any inconsistency."""
    data = Path(path).read_bytes()
    cut = data.find(_END)
    if cut < 0:
        raise FormatError(f"{path}: missing end_header marker")
    header = data[:cut].decode("utf-8", errors="replace").splitlines()
    payload = data[cut + len(_END):]
    if not header or not header[0].startswith(magic + " "):
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    try:
        got_version = int(header[0].split()[1])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: unreadable version line") from exc
    if got_version != version:
        raise FormatError(f"{path}: version {got_version}, expected {version}")

    fields: dict[str, str] = {}
    blocks: dict[str, np.ndarray] = {}
    layout: dict[str, tuple[int, int, tuple[int, ...]]] = {}
    expected = 0
    crc_stated: int | None = None
    for line in header[1:]:
        if line.startswith("block "):
            try:
                _, name, code, off_s, nbytes_s, rows_s, cols_s = line.split()
                off, nbytes, rows, cols = map(int, (off_s, nbytes_s, rows_s, cols_s))
                dt = _DTYPES[code]
            except (ValueError, KeyError) as exc:
                raise FormatError(f"{path}: bad block line {line!r}") from exc
            if off + nbytes > len(payload):
                raise FormatError(f"{path}: truncated file, block {name} out of range")
            if nbytes != rows * cols * dt.itemsize:
                raise FormatError(f"{path}: block {name} size/shape mismatch")
            blocks[name] = (
                np.frombuffer(payload, dtype=dt, count=rows * cols, offset=off)
                .reshape(rows, cols)
                .copy()
            )
            layout[name] = (off, nbytes, (rows, cols))
            expected = max(expected, off + nbytes)
        elif " = " in line:
            k, v = line.split(" = ", 1)
            if k == "crc32":
                crc_stated = int(v, 16)
            else:
                fields[k] = v
    if len(payload) != expected:
        raise FormatError(
            f"{path}: data section is {len(payload)} bytes, offsets imply {expected}"
        )
    if crc_stated is None:
        raise FormatError(f"{path}: missing crc32")
    if zlib.crc32(payload) != crc_stated:
        raise FormatError(f"{path}: checksum failure")
    return fields, blocks, layout


def config_fields(obj) -> dict[str, str]:
    """Dataclass fields as an ordered str->str mapping (None -> 'none')."""
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        out[f.name] = "none" if v is None else repr(v) if isinstance(v, float) else str(v)
    return out


def config_hash(*objs) -> str:
    """Stable hex digest over one or more dataclasses / dicts / scalars."""
    h = hashlib.sha256()
    for obj in objs:
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            items = config_fields(obj).items()
            h.update(type(obj).__name__.encode())
        elif isinstance(obj, dict):
            items = sorted((str(k), str(v)) for k, v in obj.items())
        else:
            h.update(repr(obj).encode() + b"\x00")
            continue
        for k, v in items:
            h.update(f"{k}={v}\n".encode())
    return h.hexdigest()
