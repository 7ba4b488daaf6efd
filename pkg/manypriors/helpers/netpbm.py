"""8-bit binary PGM (P5) and PPM (P6) reading and writing; pixels map to v / 255."""

from pathlib import Path

import numpy as np

from ..exceptions import ImageFormatError, MissingInputError

_WHITESPACE = b" \t\r\n"


def _header(data: bytes) -> tuple[bytes, int, int, int, int]:
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError("only binary PGM (P5) and PPM (P6) images are supported")
    fields, pos = [], 2
    while len(fields) < 3:
        if pos >= len(data):
            raise ImageFormatError("image header is truncated")
        byte = data[pos:pos + 1]
        if byte in (b" ", b"\t", b"\r", b"\n"):
            pos += 1
        elif byte == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif byte.isdigit():
            start = pos
            while pos < len(data) and data[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise ImageFormatError(f"unexpected byte {byte!r} in image header")
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise ImageFormatError("image header must end with a single whitespace byte")
    width, height, maxval = fields
    return magic, width, height, maxval, pos + 1


def parse_netpbm(data: bytes) -> np.ndarray:
    magic, width, height, maxval, offset = _header(data)
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit images are supported (maxval {maxval})")
    planes = 3 if magic == b"P6" else 1
    count = width * height * planes
    if len(data) < offset + count:
        raise ImageFormatError("image raster is truncated")
    raster = np.frombuffer(data, dtype=np.uint8, count=count, offset=offset)
    shape = (height, width, 3) if planes == 3 else (height, width)
    return raster.reshape(shape).astype(np.float64) / 255.0


def to_bytes(image: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def format_netpbm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim == 2:
        magic = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"cannot store an image of shape {image.shape}")
    raster = image if image.dtype == np.uint8 else to_bytes(image)
    height, width = image.shape[:2]
    return magic + f"\n{width} {height}\n255\n".encode("ascii") + raster.tobytes()


def read_netpbm(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"image not found: {path}")
    return parse_netpbm(path.read_bytes())


def write_netpbm(path, image: np.ndarray):
    Path(path).write_bytes(format_netpbm(image))
