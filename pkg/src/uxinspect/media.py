"""Minimal MP4 inspection: read the movie duration from the ``mvhd`` box.

No decoding happens here; frame sampling is left to the model provider.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from pathlib import Path

_CONTAINERS = {b"moov", b"trak", b"mdia", b"minf", b"stbl", b"udta", b"edts"}


def _iter_boxes(data: bytes, start: int, end: int):
    pos = start
    while pos + 8 <= end:
        size, kind = struct.unpack(">I4s", data[pos : pos + 8])
        header = 8
        if size == 1:
            if pos + 16 > end:
                return
            size = struct.unpack(">Q", data[pos + 8 : pos + 16])[0]
            header = 16
        elif size == 0:
            size = end - pos
        if size < header or pos + size > end:
            return
        yield kind, pos + header, pos + size
        pos += size


def _find_mvhd(data: bytes, start: int, end: int) -> tuple[int, int] | None:
    for kind, body, box_end in _iter_boxes(data, start, end):
        if kind == b"mvhd":
            return body, box_end
        if kind in _CONTAINERS:
            found = _find_mvhd(data, body, box_end)
            if found:
                return found
    return None


def probe_mp4_duration(path: str | Path) -> float | None:
    """Duration in seconds from the movie header, or None if it cannot be read."""
    try:
        data = Path(path).read_bytes()
    except OSError:
        return None
    found = _find_mvhd(data, 0, len(data))
    if found is None:
        return None
    body, end = found
    version = data[body]
    try:
        if version == 1:
            timescale, duration = struct.unpack(">IQ", data[body + 20 : body + 32])
        else:
            timescale, duration = struct.unpack(">II", data[body + 12 : body + 20])
    except struct.error:
        return None
    if timescale == 0:
        return None
    return duration / timescale


def build_minimal_mp4(duration_seconds: float, timescale: int = 1000, payload: bytes = b"") -> bytes:
    """Container bytes with only ``ftyp``, ``moov/mvhd`` and an optional ``free`` box.

    Used for fixtures: the result has a valid duration but no media tracks.
    """
    ftyp_body = b"isom" + struct.pack(">I", 512) + b"isomiso2mp41"
    ftyp = struct.pack(">I4s", 8 + len(ftyp_body), b"ftyp") + ftyp_body
    mvhd_body = (
        bytes([0, 0, 0, 0])
        + struct.pack(">III", 0, 0, timescale)
        + struct.pack(">I", round(duration_seconds * timescale))
        + struct.pack(">IH", 0x00010000, 0x0100)
        + bytes(10)
        + struct.pack(">9I", 0x00010000, 0, 0, 0, 0x00010000, 0, 0, 0, 0x40000000)
        + bytes(24)
        + struct.pack(">I", 2)
    )
    mvhd = struct.pack(">I4s", 8 + len(mvhd_body), b"mvhd") + mvhd_body
    moov = struct.pack(">I4s", 8 + len(mvhd), b"moov") + mvhd
    free = struct.pack(">I4s", 8 + len(payload), b"free") + payload if payload else b""
    return ftyp + moov + free


_digest_lock = threading.Lock()
_digest_memo: dict[tuple[str, int, int], str] = {}


def file_digest(path: str | Path) -> str:
    """SHA-256 hex digest of file content, memoised on (path, size, mtime)."""
    p = Path(path)
    st = p.stat()
    memo_key = (str(p.resolve()), st.st_size, st.st_mtime_ns)
    with _digest_lock:
        hit = _digest_memo.get(memo_key)
    if hit is not None:
        return hit
    h = hashlib.sha256()
    with p.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    digest = h.hexdigest()
    with _digest_lock:
        _digest_memo[memo_key] = digest
    return digest
