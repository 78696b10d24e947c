"""Binary PGM (P5) reading and writing, 8- and 16-bit."""

from pathlib import Path

import numpy as np
import numpy.typing as npt

from .errors import DataError


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise DataError("truncated PGM header")
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates header and raster
    return tokens, pos + 1


def read_pgm_raw(path: Path) -> tuple[npt.NDArray, int]:
    """Return the raw raster (uint8 or uint16) and its maxval."""
    path = Path(path)
    data = path.read_bytes()
    tokens, offset = _header_tokens(data, 4)
    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DataError(f"{path}: bad PGM header") from None
    if not 0 < maxval <= 65535:
        raise DataError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    expected = width * height * dtype.itemsize
    if len(data) - offset < expected:
        raise DataError(f"{path}: raster truncated")
    raster = np.frombuffer(data, dtype=dtype, count=width * height, offset=offset)
    return raster.reshape(height, width).astype(dtype.newbyteorder("=")), maxval


def read_pgm(path: Path) -> npt.NDArray[np.float64]:
    """Read a PGM as floats in [0, 1]."""
    raster, maxval = read_pgm_raw(path)
    return raster.astype(np.float64) / maxval


def write_pgm(path: Path, raster: npt.NDArray) -> None:
    """Write a uint8 (maxval 255) or uint16 (maxval 65535, big-endian) raster."""
    path = Path(path)
    raster = np.asarray(raster)
    if raster.ndim != 2:
        raise DataError(f"PGM raster must be 2-D, got shape {raster.shape}")
    if raster.dtype == np.uint8:
        maxval, body = 255, raster.tobytes()
    elif raster.dtype == np.uint16:
        maxval, body = 65535, raster.astype(">u2").tobytes()
    else:
        raise DataError(f"unsupported PGM dtype {raster.dtype}")
    height, width = raster.shape
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n{maxval}\n".encode("ascii"))
        f.write(body)


def to_uint8(pixels: npt.ArrayLike) -> npt.NDArray[np.uint8]:
    """Quantize [0, 1] floats to 8-bit with rounding and clipping."""
    return np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
