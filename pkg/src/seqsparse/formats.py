"""File formats: SSR1 matrices, named-matrix containers, P5 PGM images.

SSR1 layout: ``b"SSR1"``, rows and cols as little-endian ``u64``, then
``rows*cols`` little-endian ``f64`` values in row-major order.

A container is a zip archive (stored, fixed timestamps so identical content
gives identical bytes) holding ``manifest.txt`` plus one ``<name>.ssr1`` entry
per matrix. Manifest lines are ``key = value``; floating-point scalars are
written with :meth:`float.hex` so they round-trip exactly.
"""
from __future__ import annotations

import io
import os
import struct
import tempfile
import zipfile
from pathlib import Path

import numpy as np

MAGIC = b"SSR1"
_HEADER = struct.Struct("<4sQQ")
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class FormatError(ValueError):
    """Malformed input file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_ssr1(matrix) -> bytes:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ValueError(f"SSR1 stores 2-D matrices, got shape {m.shape}")
    rows, cols = m.shape
    return _HEADER.pack(MAGIC, rows, cols) + np.ascontiguousarray(m, dtype="<f8").tobytes()


def decode_ssr1(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise FormatError("truncated SSR1 header", offset=len(data))
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    expected = _HEADER.size + 8 * rows * cols
    if len(data) != expected:
        raise FormatError(f"expected {expected} bytes for {rows}x{cols}, got {len(data)}", offset=len(data))
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size, count=rows * cols)
    return body.astype(np.float64).reshape(rows, cols)


def write_ssr1(path, matrix):
    atomic_write_bytes(path, encode_ssr1(matrix))


def read_ssr1(path) -> np.ndarray:
    return decode_ssr1(Path(path).read_bytes())


def format_scalar(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return float(value).hex()
    return str(value)


def parse_scalar(text: str):
    text = text.strip()
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        # plain decimals must not go through fromhex ("0.25" is valid hex)
        return float.fromhex(text) if "0x" in text.lower() else float(text)
    except ValueError:
        return text


def write_container(path, manifest: dict, matrices: dict):
    """Write a named-matrix container; byte-identical for identical input."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        lines = [f"{k} = {format_scalar(v)}" for k, v in manifest.items()]
        lines.append("matrices = " + ",".join(matrices))
        info = zipfile.ZipInfo("manifest.txt", date_time=_ZIP_EPOCH)
        zf.writestr(info, "\n".join(lines) + "\n")
        for name, mat in matrices.items():
            info = zipfile.ZipInfo(f"{name}.ssr1", date_time=_ZIP_EPOCH)
            zf.writestr(info, encode_ssr1(mat))
    atomic_write_bytes(path, buf.getvalue())


def read_container(path):
    """Return ``(manifest, matrices)`` from a container file."""
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise FormatError(f"{path}: not a container file") from exc
    with zf:
        manifest = {}
        for line in zf.read("manifest.txt").decode("utf-8").splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            manifest[key.strip()] = value.strip()
        names = [n for n in manifest.pop("matrices", "").split(",") if n]
        matrices = {n: decode_ssr1(zf.read(f"{n}.ssr1")) for n in names}
    return {k: parse_scalar(v) for k, v in manifest.items()}, matrices


def _pgm_token(data: bytes, pos: int):
    """Next whitespace-delimited header token, skipping ``#`` comments."""
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of PGM header", offset=pos)
    return data[start:pos], pos


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary (P5) PGM into a ``uint8`` array of shape (rows, cols)."""
    data = Path(path).read_bytes()
    magic, pos = _pgm_token(data, 0)
    if magic != b"P5":
        raise FormatError(f"not a binary PGM (magic {magic!r})", offset=0)
    fields = []
    for _ in range(3):
        tok, pos = _pgm_token(data, pos)
        if not tok.isdigit():
            raise FormatError(f"non-numeric PGM header field {tok!r}", offset=pos - len(tok))
        fields.append(int(tok))
    width, height, maxval = fields
    if not 0 < maxval < 256:
        raise FormatError(f"only 8-bit PGM supported (maxval {maxval})", offset=pos - len(tok))
    if width < 1 or height < 1:
        raise FormatError("empty PGM image", offset=pos)
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError("missing whitespace after PGM header", offset=pos)
    pos += 1
    need = width * height
    if len(data) - pos < need:
        raise FormatError(f"truncated pixel data: need {need} bytes, have {len(data) - pos}", offset=len(data))
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=pos)
    return pixels.reshape(height, width).copy()


def write_pgm(path, image):
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + img.tobytes())
