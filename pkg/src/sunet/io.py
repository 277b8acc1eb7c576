"""Binary containers and raster formats.

Tensor snapshots use the SUTN container, checkpoints the SUNC container.
Both are little-endian throughout and round-trip bit exactly. Images are
binary PPM (P6), label rasters binary PGM (P5), both 8-bit.
"""
from __future__ import annotations

import struct

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent file content."""


_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

TENSOR_MAGIC = b"SUTN"
CHECKPOINT_MAGIC = b"SUNC"
FORMAT_VERSION = 1


def write_tensor(path, array: np.ndarray) -> None:
    """Write one 4-D float array as a SUTN container."""
    arr = np.ascontiguousarray(array)
    if arr.ndim != 4:
        raise DataError(f"tensor containers hold 4-D arrays, got shape {arr.shape}")
    code = _CODE_FOR.get(arr.dtype)
    if code is None:
        raise DataError(f"tensor containers hold float32/float64, got {arr.dtype}")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<IB", FORMAT_VERSION, code))
        fh.write(struct.pack("<4Q", *arr.shape))
        fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a SUTN container back into a 4-D array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TENSOR_MAGIC:
        raise DataError(f"{path}: not a tensor container (bad magic)")
    version, code = struct.unpack_from("<IB", blob, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    dtype = _DTYPE_CODES.get(code)
    if dtype is None:
        raise DataError(f"{path}: unknown dtype code {code}")
    shape = struct.unpack_from("<4Q", blob, 9)
    start = 9 + 32
    expect = int(np.prod(shape)) * dtype.itemsize
    if len(blob) - start != expect:
        raise DataError(f"{path}: payload is {len(blob) - start} bytes, expected {expect}")
    arr = np.frombuffer(blob, dtype=dtype, offset=start).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def write_checkpoint(path, entries: dict[str, np.ndarray], iteration: int = 0,
                     graph_digest: str = "") -> None:
    """Write named arrays plus metadata as a SUNC container.

    Entries are stored sorted by name behind an entry table so the layout
    is a pure function of the content.
    """
    digest_bytes = graph_digest.encode("utf-8")
    names = sorted(entries)
    arrays = []
    for name in names:
        arr = np.ascontiguousarray(entries[name])
        if arr.ndim != 4:
            raise DataError(f"checkpoint entry {name!r} must be 4-D, got shape {arr.shape}")
        if arr.dtype not in _CODE_FOR:
            raise DataError(f"checkpoint entry {name!r} has dtype {arr.dtype}")
        arrays.append(arr)
    table = bytearray()
    offset = 0
    for name, arr in zip(names, arrays):
        nb = name.encode("utf-8")
        nbytes = arr.nbytes
        table += struct.pack("<H", len(nb)) + nb
        table += struct.pack("<B4QQQ", _CODE_FOR[arr.dtype], *arr.shape, offset, nbytes)
        offset += nbytes
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, iteration))
        fh.write(struct.pack("<H", len(digest_bytes)))
        fh.write(digest_bytes)
        fh.write(struct.pack("<I", len(names)))
        fh.write(table)
        for arr in arrays:
            fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_checkpoint(path):
    """Read a SUNC container; returns (entries, iteration, graph_digest)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    version, iteration = struct.unpack_from("<IQ", blob, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    (dlen,) = struct.unpack_from("<H", blob, pos)
    pos += 2
    digest = blob[pos:pos + dlen].decode("utf-8")
    pos += dlen
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    rows = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        code, s0, s1, s2, s3, offset, nbytes = struct.unpack_from("<B4QQQ", blob, pos)
        pos += struct.calcsize("<B4QQQ")
        if code not in _DTYPE_CODES:
            raise DataError(f"{path}: entry {name!r} has unknown dtype code {code}")
        rows.append((name, _DTYPE_CODES[code], (s0, s1, s2, s3), offset, nbytes))
    base = pos
    entries = {}
    for name, dtype, shape, offset, nbytes in rows:
        expect = int(np.prod(shape)) * dtype.itemsize
        if nbytes != expect or base + offset + nbytes > len(blob):
            raise DataError(f"{path}: entry {name!r} is truncated or mis-sized")
        arr = np.frombuffer(blob, dtype=dtype, offset=base + offset, count=int(np.prod(shape)))
        entries[name] = arr.reshape(shape).astype(dtype.newbyteorder("="), copy=True)
    return entries, iteration, digest


# ----------------------------------------------------------- rasters

def write_ppm(path, image: np.ndarray) -> None:
    """Write an (h, w, 3) uint8 array as binary PPM."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise DataError(f"PPM writer needs (h, w, 3) uint8, got {img.shape} {img.dtype}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_pgm(path, raster: np.ndarray) -> None:
    """Write an (h, w) uint8 array as binary PGM."""
    img = np.asarray(raster)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise DataError(f"PGM writer needs (h, w) uint8, got {img.shape} {img.dtype}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _read_pnm(path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != magic:
        raise DataError(f"{path}: expected {magic.decode()} raster")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token.isdigit():
            raise DataError(f"{path}: malformed header token {token!r}")
        fields.append(int(token))
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 supported, got {maxval}")
    expect = width * height * channels
    payload = blob[pos:pos + expect]
    if len(payload) != expect:
        raise DataError(f"{path}: payload is {len(payload)} bytes, expected {expect}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, channels).copy()


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into (h, w, 3) uint8."""
    return _read_pnm(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into (h, w) uint8."""
    return _read_pnm(path, b"P5", 1)
