"""Binary PGM (P5) frames, frame directories and concatenated PGM streams."""
from __future__ import annotations

import io
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np

from .errors import StabkitError
from .image import Frame


class PGMError(StabkitError, OSError):
    pass


def _token(fh: BinaryIO) -> bytes | None:
    tok = b""
    while True:
        c = fh.read(1)
        if not c:
            return tok or None
        if c == b"#" and not tok:
            fh.readline()
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_pgm_from(fh: BinaryIO) -> Frame | None:
    """Next frame from ``fh``, or ``None`` at a clean end of stream."""
    magic = _token(fh)
    if magic is None:
        return None
    if magic != b"P5":
        raise PGMError(f"not a binary PGM (magic {magic!r})")
    try:
        w, h, maxval = (int(_token(fh) or b""), int(_token(fh) or b""), int(_token(fh) or b""))
    except ValueError as exc:
        raise PGMError("malformed PGM header") from exc
    if w < 1 or h < 1 or not (0 < maxval < 65536):
        raise PGMError(f"bad PGM header {w}x{h} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * dtype.itemsize
    raw = fh.read(n)
    if len(raw) != n:
        raise PGMError(f"truncated PGM body ({len(raw)} of {n} bytes)")
    data = np.frombuffer(raw, dtype=dtype).reshape(h, w)
    return Frame.from_array(data.astype(np.float64) / maxval)


def to_pgm_bytes(f: Frame, maxval: int = 255) -> bytes:
    if not (0 < maxval < 65536):
        raise ValueError("maxval must be in 1..65535")
    q = np.rint(np.clip(f.data, 0.0, 1.0) * maxval)
    body = q.astype(">u2" if maxval > 255 else "u1").tobytes()
    return b"P5\n%d %d\n%d\n" % (f.width, f.height, maxval) + body


def read_pgm(path) -> Frame:
    with open(path, "rb") as fh:
        f = read_pgm_from(fh)
    if f is None:
        raise PGMError(f"{path}: empty file")
    return f


def write_pgm(path, f: Frame, maxval: int = 255) -> None:
    Path(path).write_bytes(to_pgm_bytes(f, maxval))


def frame_name(i: int) -> str:
    return f"frame_{i:05d}.pgm"


def write_sequence(directory, frames, maxval: int = 255) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(frames):
        p = d / frame_name(i)
        write_pgm(p, f, maxval)
        paths.append(p)
    return paths


def list_sequence(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise PGMError(f"{d}: not a directory")
    paths = sorted(p for p in d.iterdir() if p.suffix.lower() == ".pgm")
    if not paths:
        raise PGMError(f"{d}: no .pgm frames")
    return paths


def read_sequence(directory) -> list[Frame]:
    return [read_pgm(p) for p in list_sequence(directory)]


def iter_stream(fh: BinaryIO) -> Iterator[Frame]:
    """Frames from concatenated PGMs; each is read only when requested."""
    while True:
        f = read_pgm_from(fh)
        if f is None:
            return
        yield f


def quantize(f: Frame, maxval: int = 255) -> Frame:
    """The frame as it reads back after a PGM round trip."""
    return read_pgm_from(io.BytesIO(to_pgm_bytes(f, maxval)))  # type: ignore[return-value]
