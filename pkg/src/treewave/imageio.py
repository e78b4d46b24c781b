"""Greyscale image I/O: 8-bit PGM (P2/P5), greyscale PNG, raw float dumps.

Intensities map to [0, 1] by value / 255 on load and are clipped and
rounded back to 8 bits on save, so an 8-bit round trip is bit exact.
"""

import re

import numpy as np


def load_image(path) -> np.ndarray:
    """Load a greyscale image as a float array in [0, 1].

    Supports 8-bit PGM (P2 ascii, P5 binary) and greyscale PNG.  Raises
    ValueError for other formats, colour content, or bit depths > 8.
    """
    path = str(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic in (b"P2", b"P5"):
        return _load_pgm(path)
    if magic == b"\x89P":
        return _load_png(path)
    raise ValueError(f"unsupported image format in {path!r} (need PGM or PNG)")


def _load_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    # header: magic, width, height, maxval; '#' comments allowed between tokens
    tokens = []
    pos = 2
    while len(tokens) < 3:
        match = re.match(rb"(?:\s+|#[^\n]*\n)*(\d+)", data[pos:])
        if not match:
            raise ValueError(f"malformed PGM header in {path!r}")
        tokens.append(int(match.group(1)))
        pos += match.end()
    width, height, maxval = tokens
    if maxval > 255:
        raise ValueError(f"{path!r}: only 8-bit PGM supported (maxval {maxval})")
    if data[:2] == b"P5":
        pos += 1  # single whitespace byte after maxval
        raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    else:
        raster = np.array([int(tok) for tok in data[pos:].split()], dtype=np.uint8)
        if raster.size != width * height:
            raise ValueError(f"{path!r}: pixel count mismatch")
    return raster.reshape(height, width).astype(np.float64) / 255.0


def _load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        if img.mode != "L":
            raise ValueError(f"{path!r}: PNG must be 8-bit greyscale, mode is {img.mode!r}")
        arr = np.asarray(img, dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_pgm(path, image: np.ndarray) -> None:
    """Write a float image in [0, 1] as binary 8-bit PGM (P5)."""
    raster = to_uint8(np.asarray(image))
    if raster.ndim != 2:
        raise ValueError("image must be 2-D")
    height, width = raster.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode())
        fh.write(raster.tobytes())


def save_png(path, image: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(np.asarray(image)), mode="L").save(str(path))


def save_f32(path, image: np.ndarray) -> None:
    """Loss-free dump: little-endian float32 row-major plus a dims sidecar."""
    arr = np.asarray(image, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(arr.tobytes())
    with open(f"{path}.txt", "w") as fh:
        fh.write(f"{arr.shape[0]} {arr.shape[1]}\n")


def load_f32(path) -> np.ndarray:
    with open(f"{path}.txt") as fh:
        height, width = map(int, fh.read().split())
    data = np.fromfile(str(path), dtype="<f4")
    return data.reshape(height, width).astype(np.float64)
