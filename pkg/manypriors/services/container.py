"""
The `.mprs` stream: a fixed 64-byte little-endian header followed by the
index and payload sections.

    magic     5s   b"MPRS1"
    version   u16
    height    u32
    width     u32
    planes    u8   0 luma, 1 independent planes
    delta     f32
    c_l       u16
    n_cdf     u16
    y_min     i32
    y_max     i32
    model     32s  SHA-256 binding the table file to geometry and delta

The CDF tables travel separately. The model hash ties a stream to them and
to the coding parameters the tables cannot check: it is the SHA-256 of the
table file digest followed by the packed height, width, plane code and delta.
"""

import hashlib
import math
import struct
from dataclasses import dataclass

from ..exceptions import (
    BadMagicError,
    FormatError,
    ModelMismatchError,
    TruncatedStreamError,
    UnsupportedVersionError,
    UsageError,
)
from .coder import pack_sections, unpack_sections
from .probability_model import CdfTableSet, SymbolAlphabet, tables_digest
from .transform import PlanePolicy

STREAM_MAGIC = b"MPRS1"
STREAM_VERSION = 1

_HEADER = struct.Struct("<5sHIIBfHHii32s")
_VERSION = struct.Struct("<H")
_BINDING = struct.Struct("<IIBf")
_PLANE_CODES = (PlanePolicy.LUMA, PlanePolicy.PLANES)

HEADER_SIZE = _HEADER.size


def stream_hash(tables: CdfTableSet, height: int, width: int, planes: PlanePolicy, delta: float) -> bytes:
    try:
        binding = _BINDING.pack(height, width, _PLANE_CODES.index(planes), delta)
    except struct.error as error:
        raise UsageError(f"header field out of range: {error}") from error
    return hashlib.sha256(tables_digest(tables) + binding).digest()


@dataclass(frozen=True)
class StreamHeader:
    height: int
    width: int
    planes: PlanePolicy
    delta: float
    c_l: int
    n_cdf: int
    y_min: int
    y_max: int
    model_hash: bytes
    version: int = STREAM_VERSION

    @classmethod
    def for_model(cls, height: int, width: int, planes: PlanePolicy, delta: float,
                  tables: CdfTableSet) -> "StreamHeader":
        return cls(
            height=height,
            width=width,
            planes=planes,
            delta=delta,
            c_l=tables.c_l,
            n_cdf=tables.n_cdf,
            y_min=tables.alphabet.y_min,
            y_max=tables.alphabet.y_max,
            model_hash=stream_hash(tables, height, width, planes, delta),
        )

    @property
    def alphabet(self) -> SymbolAlphabet:
        return SymbolAlphabet(self.y_min, self.y_max)

    def pack(self) -> bytes:
        try:
            return _HEADER.pack(
                STREAM_MAGIC, self.version, self.height, self.width,
                _PLANE_CODES.index(self.planes), self.delta, self.c_l, self.n_cdf,
                self.y_min, self.y_max, self.model_hash,
            )
        except struct.error as error:
            raise UsageError(f"header field out of range: {error}") from error

    @classmethod
    def unpack(cls, data: bytes) -> "StreamHeader":
        (_, version, height, width, planes, delta, c_l, n_cdf,
         y_min, y_max, model_hash) = _HEADER.unpack_from(data)
        if planes >= len(_PLANE_CODES):
            raise FormatError(f"unknown plane policy code {planes}")
        if not (math.isfinite(delta) and delta > 0):
            raise FormatError(f"stream declares an invalid quantizer step {delta}")
        if c_l < 1 or n_cdf < 1 or not y_min <= 0 <= y_max or y_max - y_min < 1:
            raise FormatError("stream declares an invalid model shape")
        return cls(height, width, _PLANE_CODES[planes], delta, c_l, n_cdf, y_min, y_max, model_hash, version)

    def check_model(self, tables: CdfTableSet):
        """
        Refuse to decode with tables other than the ones the stream was coded
        with, or with image geometry or a quantizer step other than the encoder used.
        """
        if self.model_hash != stream_hash(tables, self.height, self.width, self.planes, self.delta):
            raise ModelMismatchError(
                "stream was encoded with a different CDF table set or coding parameters (model hash mismatch)"
            )
        if (self.c_l, self.n_cdf, self.y_min, self.y_max) != (
            tables.c_l, tables.n_cdf, tables.alphabet.y_min, tables.alphabet.y_max
        ):
            raise ModelMismatchError("stream header disagrees with the CDF table shape")


def write_stream(header: StreamHeader, index_bytes: bytes, payload: bytes) -> bytes:
    return header.pack() + pack_sections(index_bytes, payload)


def read_stream(data: bytes) -> tuple[StreamHeader, bytes, bytes]:
    if len(data) < len(STREAM_MAGIC):
        if STREAM_MAGIC.startswith(data):
            raise TruncatedStreamError("stream ended inside its magic")
        raise BadMagicError("not a manypriors stream")
    if data[: len(STREAM_MAGIC)] != STREAM_MAGIC:
        raise BadMagicError("not a manypriors stream")
    if len(data) < len(STREAM_MAGIC) + _VERSION.size:
        raise TruncatedStreamError("stream ended inside its version")
    (version,) = _VERSION.unpack_from(data, len(STREAM_MAGIC))
    if version != STREAM_VERSION:
        raise UnsupportedVersionError(f"unsupported stream version {version} (this build reads {STREAM_VERSION})")
    if len(data) < HEADER_SIZE:
        raise TruncatedStreamError("stream ended inside its header")
    header = StreamHeader.unpack(data)
    index_bytes, payload = unpack_sections(data[HEADER_SIZE:])
    return header, index_bytes, payload
