"""PGM masks and JSON payloads."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import InstanceMask, PolyBox


class InputError(ValueError):
    """Malformed input file; the message names the file and the field."""


def _tokens(data: bytes, count: int, start: int = 0):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    out, pos = [], start
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        if end == pos:
            break
        out.append(data[pos:end])
        pos = end
    return out, pos


def read_pgm(path) -> InstanceMask:
    path = Path(path)
    data = path.read_bytes()
    header, pos = _tokens(data, 4)
    if len(header) < 4 or header[0] not in (b"P5", b"P2"):
        raise InputError(f"{path}: header: expected P5 or P2 with width, height and maxval")
    try:
        width, height, maxval = (int(t) for t in header[1:])
    except ValueError:
        raise InputError(f"{path}: header: non-integer width/height/maxval") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise InputError(f"{path}: header: invalid dimensions or maxval")
    if header[0] == b"P5":
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        raster = data[pos + 1:]
        n = width * height * np.dtype(dtype).itemsize
        if len(raster) < n:
            raise InputError(f"{path}: pixels: expected {width * height} values")
        values = np.frombuffer(raster[:n], dtype=dtype).astype(np.int64)
    else:
        try:
            values = np.array(data[pos:].split(), dtype=np.int64)
        except ValueError:
            raise InputError(f"{path}: pixels: non-integer value") from None
        if values.size != width * height:
            raise InputError(f"{path}: pixels: expected {width * height} values, got {values.size}")
    return InstanceMask(values.reshape(height, width))


def write_pgm(path, values, plain: bool = False) -> None:
    values = np.asarray(values)
    h, w = values.shape
    if plain:
        rows = "\n".join(" ".join(str(int(v)) for v in row) for row in values)
        Path(path).write_text(f"P2\n{w} {h}\n255\n{rows}\n")
    else:
        Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + values.astype(np.uint8).tobytes())


def load_json(path) -> object:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc.msg})") from None


def load_polybox(path) -> PolyBox:
    obj = load_json(path)
    if not isinstance(obj, dict):
        raise InputError(f"{path}: expected a JSON object with cx, cy, radii")
    for key in ("cx", "cy", "radii"):
        if key not in obj:
            raise InputError(f"{path}: missing field '{key}'")
    try:
        return PolyBox.from_json(obj)
    except (ValueError, TypeError) as exc:
        raise InputError(f"{path}: radii: {exc}") from None
