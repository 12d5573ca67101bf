"""Binary PGM (P5) reading/writing and slice-directory volumes.

Samples are big-endian 16-bit when maxval >= 256, single bytes otherwise
(as the netpbm format requires).  The stored maxval is ``K - 1``.
"""

from __future__ import annotations

import json
import os
import re
from pathlib import Path

import numpy as np

from .errors import ImageIOError
from .imaging import Image2D, Volume3D

VOLUME_SIDECAR = "volume.json"

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def encode_pgm(img: Image2D) -> bytes:
    maxval = img.levels - 1
    header = b"P5\n%d %d\n%d\n" % (img.width, img.height, maxval)
    if maxval < 256:
        body = img.pixels.astype(np.uint8).tobytes()
    else:
        body = img.pixels.astype(">u2").tobytes()
    return header + body


def decode_pgm(data: bytes, source: str = "<bytes>") -> Image2D:
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ImageIOError(f"{source}: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise ImageIOError(f"{source}: not a binary PGM (magic {fields[0]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ImageIOError(f"{source}: malformed PGM header") from None
    if width < 1 or height < 1 or not 1 <= maxval < 65536:
        raise ImageIOError(f"{source}: invalid PGM dimensions or maxval")
    pos += 1  # single whitespace byte before the raster
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    need = width * height * dtype.itemsize
    raster = data[pos:pos + need]
    if len(raster) != need:
        raise ImageIOError(f"{source}: expected {need} raster bytes, found {len(raster)}")
    px = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    if px.max() > maxval:
        raise ImageIOError(f"{source}: sample exceeds maxval {maxval}")
    return Image2D(px.astype(np.uint16), maxval + 1)


def read_pgm(path) -> Image2D:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc.strerror or exc}") from exc
    return decode_pgm(data, str(path))


def write_pgm(path, img: Image2D) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_pgm(img))
    os.replace(tmp, path)


def write_volume(directory, volume: Volume3D) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(len(volume) - 1)))
    names = []
    for i, s in enumerate(volume.slices):
        name = f"{i:0{width}d}.pgm"
        write_pgm(directory / name, s)
        names.append(name)
    meta = {"levels": volume.levels, "slices": names}
    (directory / VOLUME_SIDECAR).write_text(json.dumps(meta, indent=2) + "\n")


def read_volume(directory) -> Volume3D:
    directory = Path(directory)
    try:
        meta = json.loads((directory / VOLUME_SIDECAR).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ImageIOError(f"{directory / VOLUME_SIDECAR}: {exc}") from exc
    if (not isinstance(meta, dict) or not isinstance(meta.get("slices"), list)
            or not isinstance(meta.get("levels"), int)):
        raise ImageIOError(f"{directory / VOLUME_SIDECAR}: expected 'levels' and a 'slices' list")
    slices = [read_pgm(directory / name) for name in meta["slices"]]
    for name, s in zip(meta["slices"], slices):
        if s.levels != meta["levels"]:
            raise ImageIOError(f"{directory / name}: K={s.levels} but sidecar says {meta['levels']}")
    try:
        return Volume3D(tuple(slices))
    except ValueError as exc:
        raise ImageIOError(f"{directory}: {exc}") from exc
