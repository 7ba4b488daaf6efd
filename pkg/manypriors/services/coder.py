"""
Range coder driven by static 16-bit CDF tables, and the side-information
coder for the prior index map.

The coder keeps a 33-bit `low` and a 32-bit `range` that is renormalized a
byte at a time whenever it drops below 2**24. Symbol bounds are scaled by
multiplying before dividing, so the intervals tile the range exactly.
Carries propagate through a cached byte and a run of pending 0xFF bytes.
Only integer arithmetic happens inside the coding loop.
"""

import logging
import struct
from bisect import bisect_right
from itertools import accumulate

import numpy as np

from ..exceptions import CorruptStreamError, ModelMismatchError, TruncatedStreamError, UsageError
from ..helpers.counters import LookupCounter
from .competition import PriorIndexMap, check_alphabet
from .probability_model import CDF_TOTAL, CdfTableSet
from .transform import QuantizedLatent

logger = logging.getLogger(__name__)

MASK32 = 0xFFFFFFFF
TOP = 1 << 24

INDEX_ADAPTIVE = 0
INDEX_RAW = 1
ADAPTIVE_INCREMENT = 32
ADAPTIVE_LIMIT = 1 << 16
MAX_ADAPTIVE_PRIORS = 1024
MAX_PRIORS = 0xFFFF

_INDEX_HEADER = struct.Struct("<BH")  # mode, n_cdf
_SECTION_LENGTH = struct.Struct("<I")


def _scaled_bounds(range_: int, cum: int, freq: int, total: int) -> tuple[int, int]:
    # Multiply before dividing so adjacent symbols share a bound and no range is dropped.
    return range_ * cum // total, range_ * (cum + freq) // total


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        if (self.low & MASK32) < 0xFF000000 or self.low > MASK32:
            carry = self.low >> 32
            byte = self.cache
            while True:
                self.out.append((byte + carry) & 0xFF)
                byte = 0xFF
                self.cache_size -= 1
                if not self.cache_size:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def encode(self, cum: int, freq: int, total: int = CDF_TOTAL):
        lo, hi = _scaled_bounds(self.range, cum, freq, total)
        self.low += lo
        self.range = hi - lo
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(5):
            self.code = ((self.code << 8) | self._byte()) & MASK32

    def _byte(self) -> int:
        if self.pos >= len(self.data):
            raise TruncatedStreamError("entropy-coded payload ended early")
        byte = self.data[self.pos]
        self.pos += 1
        return byte

    def target(self, total: int = CDF_TOTAL) -> int:
        """Largest cumulative count whose scaled bound does not exceed `code`."""
        value = ((self.code + 1) * total - 1) // self.range
        if value >= total:
            raise CorruptStreamError("entropy-coded payload is corrupt")
        return value

    def consume(self, cum: int, freq: int, total: int = CDF_TOTAL):
        lo, hi = _scaled_bounds(self.range, cum, freq, total)
        self.code -= lo
        self.range = hi - lo
        while self.range < TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._byte()) & MASK32

    def decode(self, row) -> int:
        """Decode one symbol offset against a cumulative row starting at 0 and ending at 2**16."""
        s = bisect_right(row, self.target()) - 1
        self.consume(row[s], row[s + 1] - row[s])
        return s


# Latent payload


def _check_shapes(index_map: PriorIndexMap, tables: CdfTableSet, shape: tuple[int, int, int]):
    c_l, h_l, w_l = shape
    if c_l != tables.c_l:
        raise UsageError(f"latent has {c_l} channels, the tables have {tables.c_l}")
    if (h_l, w_l) != index_map.idx.shape:
        raise UsageError(f"index map shape {index_map.idx.shape} does not match latent grid {(h_l, w_l)}")
    if index_map.n_cdf != tables.n_cdf:
        raise ModelMismatchError(f"index map refers to {index_map.n_cdf} priors, the tables hold {tables.n_cdf}")


def gather_rows(index_map: PriorIndexMap, tables: CdfTableSet, counter: LookupCounter | None = None) -> list:
    """One table gather per location: the C_L cumulative rows of its winning prior, in scan order."""
    rows = tables.rows
    gathered = [rows[prior] for prior in index_map.flat().tolist()]
    if counter is not None:
        counter.cdf_gathers += len(gathered)
    return gathered


def encode_symbols(latent: QuantizedLatent, gathered: list, tables: CdfTableSet,
                   counter: LookupCounter | None = None) -> bytes:
    if latent.symbols.size == 0:
        return b""
    offsets = (latent.flat() - tables.alphabet.y_min).T.tolist()
    encoder = RangeEncoder()
    for prior_rows, column in zip(gathered, offsets):
        for row, s in zip(prior_rows, column):
            encoder.encode(row[s], row[s + 1] - row[s])
    if counter is not None:
        counter.symbols += latent.symbols.size
    return encoder.finish()


def encode_latent(latent: QuantizedLatent, index_map: PriorIndexMap, tables: CdfTableSet,
                  counter: LookupCounter | None = None) -> bytes:
    """Code every symbol in (k, l, c) scan order with row tables[idx[k, l], c]."""
    _check_shapes(index_map, tables, latent.shape)
    check_alphabet(tables, latent)
    return encode_symbols(latent, gather_rows(index_map, tables, counter), tables, counter)


def decode_symbols(data: bytes, gathered: list, tables: CdfTableSet, shape: tuple[int, int, int],
                   counter: LookupCounter | None = None) -> QuantizedLatent:
    c_l, h_l, w_l = shape
    if c_l * h_l * w_l == 0:
        return QuantizedLatent(np.zeros(shape, dtype=np.int32))
    decoder = RangeDecoder(data)
    columns = [[decoder.decode(row) for row in prior_rows] for prior_rows in gathered]
    symbols = np.asarray(columns, dtype=np.int32).T.reshape(shape) + tables.alphabet.y_min
    if counter is not None:
        counter.symbols += symbols.size
    return QuantizedLatent(symbols.astype(np.int32))


def decode_latent(data: bytes, index_map: PriorIndexMap, tables: CdfTableSet, shape: tuple[int, int, int],
                  counter: LookupCounter | None = None) -> QuantizedLatent:
    _check_shapes(index_map, tables, shape)
    return decode_symbols(data, gather_rows(index_map, tables, counter), tables, shape, counter)


# Index side information


def _raw_bits(n_cdf: int) -> int:
    return (n_cdf - 1).bit_length()


def _encode_adaptive(values: list[int], n_cdf: int) -> bytes:
    freqs = [1] * n_cdf
    total = n_cdf
    encoder = RangeEncoder()
    for v in values:
        encoder.encode(sum(freqs[:v]), freqs[v], total)
        freqs[v] += ADAPTIVE_INCREMENT
        total += ADAPTIVE_INCREMENT
        if total > ADAPTIVE_LIMIT:
            freqs = [(f + 1) >> 1 for f in freqs]
            total = sum(freqs)
    return encoder.finish()


def _decode_adaptive(data: bytes, count: int, n_cdf: int) -> list[int]:
    freqs = [1] * n_cdf
    total = n_cdf
    decoder = RangeDecoder(data)
    values = []
    for _ in range(count):
        target = decoder.target(total)
        cums = list(accumulate(freqs))
        v = bisect_right(cums, target)
        decoder.consume(cums[v] - freqs[v], freqs[v], total)
        values.append(v)
        freqs[v] += ADAPTIVE_INCREMENT
        total += ADAPTIVE_INCREMENT
        if total > ADAPTIVE_LIMIT:
            freqs = [(f + 1) >> 1 for f in freqs]
            total = sum(freqs)
    return values


def _encode_raw(values: np.ndarray, n_cdf: int) -> bytes:
    bits = _raw_bits(n_cdf)
    if bits == 0 or values.size == 0:
        return b""
    planes = np.unpackbits(values.astype(">u2").view(np.uint8).reshape(-1, 2), axis=1)[:, 16 - bits:]
    return np.packbits(planes.reshape(-1)).tobytes()


def _decode_raw(data: bytes, count: int, n_cdf: int) -> np.ndarray:
    bits = _raw_bits(n_cdf)
    if bits == 0 or count == 0:
        return np.zeros(count, dtype=np.int64)
    needed = -(-count * bits // 8)
    if len(data) < needed:
        raise TruncatedStreamError("index side information ended early")
    planes = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=needed))[: count * bits]
    weights = 1 << np.arange(bits - 1, -1, -1)
    values = planes.reshape(count, bits).astype(np.int64) @ weights
    if values.size and values.max() >= n_cdf:
        raise CorruptStreamError("index side information names an unknown prior")
    return values


def encode_indices(index_map: PriorIndexMap) -> bytes:
    """
    Adaptive order-0 range coding of the index map, or plain bit-packing when
    that is smaller. The first byte records which one was used.
    """
    n_cdf = index_map.n_cdf
    if n_cdf > MAX_PRIORS:
        raise UsageError(f"at most {MAX_PRIORS} priors can be signalled")
    values = index_map.flat()
    raw = _encode_raw(values, n_cdf)
    mode, body = INDEX_RAW, raw
    if values.size and n_cdf > 1 and n_cdf <= MAX_ADAPTIVE_PRIORS:
        adaptive = _encode_adaptive(values.tolist(), n_cdf)
        if len(adaptive) < len(raw):
            mode, body = INDEX_ADAPTIVE, adaptive
    logger.debug("index map %s: %d bytes (%s)", index_map.idx.shape, len(body),
                 "adaptive" if mode == INDEX_ADAPTIVE else "raw")
    return _INDEX_HEADER.pack(mode, n_cdf) + body


def decode_indices(data: bytes, shape: tuple[int, int], n_cdf: int) -> PriorIndexMap:
    if len(data) < _INDEX_HEADER.size:
        raise TruncatedStreamError("index side information ended inside its header")
    mode, stored = _INDEX_HEADER.unpack_from(data)
    if stored != n_cdf:
        raise ModelMismatchError(f"index map was coded for {stored} priors, the model has {n_cdf}")
    count = shape[0] * shape[1]
    body = data[_INDEX_HEADER.size:]
    if mode == INDEX_RAW:
        values = _decode_raw(body, count, n_cdf)
    elif mode == INDEX_ADAPTIVE:
        values = _decode_adaptive(body, count, n_cdf)
    else:
        raise CorruptStreamError(f"unknown index coding mode {mode}")
    return PriorIndexMap(np.asarray(values, dtype=np.int64).reshape(shape), n_cdf)


# Sections


def pack_sections(index_bytes: bytes, payload: bytes) -> bytes:
    return (
        _SECTION_LENGTH.pack(len(index_bytes)) + index_bytes
        + _SECTION_LENGTH.pack(len(payload)) + payload
    )


def unpack_sections(data: bytes) -> tuple[bytes, bytes]:
    sections, pos = [], 0
    for name in ("index", "payload"):
        if len(data) < pos + _SECTION_LENGTH.size:
            raise TruncatedStreamError(f"stream ended inside the {name} section length")
        (length,) = _SECTION_LENGTH.unpack_from(data, pos)
        pos += _SECTION_LENGTH.size
        if len(data) < pos + length:
            raise TruncatedStreamError(f"stream ended inside the {name} section")
        sections.append(bytes(data[pos:pos + length]))
        pos += length
    return sections[0], sections[1]
