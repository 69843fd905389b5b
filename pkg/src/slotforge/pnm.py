"""Binary PGM (P5) and PPM (P6) image files, 8-bit maxval."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PnmError(Exception):
    pass


def _write_header(fh, magic: bytes, w: int, h: int) -> None:
    fh.write(magic + b"\n%d %d\n255\n" % (w, h))


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise PnmError(f"PGM needs a 2-D array, got shape {gray.shape}")
    if gray.dtype != np.uint8:
        gray = np.clip(np.round(gray), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        _write_header(fh, b"P5", gray.shape[1], gray.shape[0])
        fh.write(gray.tobytes())


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise PnmError(f"PPM needs an HxWx3 array, got shape {rgb.shape}")
    if rgb.dtype != np.uint8:
        rgb = np.clip(np.round(rgb), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        _write_header(fh, b"P6", rgb.shape[1], rgb.shape[0])
        fh.write(rgb.tobytes())


def _read_header(blob: bytes, magic: bytes, path) -> tuple[int, int, int]:
    if not blob.startswith(magic):
        raise PnmError(f"{path}: expected {magic.decode()} file")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        try:
            fields.append(int(blob[start:pos]))
        except ValueError as exc:
            raise PnmError(f"{path}: malformed header") from exc
    if fields[2] != 255:
        raise PnmError(f"{path}: only maxval 255 supported, got {fields[2]}")
    return fields[0], fields[1], pos + 1


def read_pgm(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    w, h, offset = _read_header(blob, b"P5", path)
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=offset)
    if data.size != w * h:
        raise PnmError(f"{path}: truncated pixel data")
    return data.reshape(h, w).copy()


def read_ppm(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    w, h, offset = _read_header(blob, b"P6", path)
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=offset)
    if data.size != w * h * 3:
        raise PnmError(f"{path}: truncated pixel data")
    return data.reshape(h, w, 3).copy()
