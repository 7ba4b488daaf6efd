"""
Image encode/decode pipeline: transform, prior selection on the frozen tables,
table gather, range coding and the stream container.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ..exceptions import UsageError
from ..helpers.counters import LookupCounter
from ..helpers.netpbm import read_netpbm
from ..helpers.timing import StageTimer, maybe_stage
from .coder import decode_indices, decode_symbols, encode_indices, encode_symbols, gather_rows
from .competition import PriorIndexMap, check_alphabet, select_priors
from .container import StreamHeader, read_stream, write_stream
from .probability_model import CdfTableSet
from .transform import (
    IMAGE_CHANNELS,
    PlanePolicy,
    QuantizedLatent,
    TransformConfig,
    analyze,
    clamp_to_alphabet,
    image_planes,
    latent_shape,
    quantize,
    synthesize,
)

logger = logging.getLogger(__name__)


def stream_delta(delta: float) -> float:
    """The quantizer step as the stream stores it (32-bit float)."""
    if not delta > 0:
        raise UsageError(f"quantizer step must be positive, got {delta}")
    return float(np.float32(delta))


def latent_grid(header: StreamHeader) -> tuple[int, int, int]:
    h_l, w_l = latent_shape(header.height, header.width)
    return header.c_l, h_l * header.planes.count, w_l


def reconstruct(latent: QuantizedLatent, header: StreamHeader) -> np.ndarray:
    if header.height * header.width == 0:
        shape = (header.height, header.width) + ((3,) if header.planes is PlanePolicy.PLANES else ())
        return np.zeros(shape)
    cfg = TransformConfig(delta=header.delta, planes=header.planes)
    return synthesize(latent, header.delta, cfg, (header.height, header.width))


def image_latent(image: np.ndarray, delta: float, planes: PlanePolicy = PlanePolicy.LUMA) -> QuantizedLatent:
    delta = stream_delta(delta)
    image = np.asarray(image, dtype=np.float64)
    height, width = image.shape[:2]
    if height * width == 0:
        image_planes(image, planes)
        h_l, w_l = latent_shape(height, width)
        return QuantizedLatent(np.zeros((IMAGE_CHANNELS, h_l * planes.count, w_l), dtype=np.int32))
    return quantize(analyze(image, TransformConfig(delta=delta, planes=planes)), delta)


def latents_from_images(paths: Iterable, delta: float,
                        planes: PlanePolicy = PlanePolicy.LUMA) -> list[QuantizedLatent]:
    latents = []
    for path in paths:
        latent = image_latent(read_netpbm(path), delta, planes)
        if latent.symbols.size:
            latents.append(latent)
        else:
            logger.warning("skipping empty image %s", Path(path).name)
    return latents


@dataclass
class EncodeResult:
    stream: bytes
    header: StreamHeader
    latent: QuantizedLatent
    index_map: PriorIndexMap
    index_bytes: int
    payload_bytes: int
    table_bits: float
    clamped: int
    counter: LookupCounter = field(default_factory=LookupCounter)

    @property
    def pixels(self) -> int:
        return self.header.height * self.header.width

    @property
    def bpp(self) -> float:
        if not self.pixels:
            raise UsageError("bits per pixel is undefined for an empty image")
        return 8.0 * len(self.stream) / self.pixels

    @property
    def index_bpp(self) -> float:
        if not self.pixels:
            raise UsageError("bits per pixel is undefined for an empty image")
        return 8.0 * self.index_bytes / self.pixels

    def reconstruction(self) -> np.ndarray:
        return reconstruct(self.latent, self.header)


@dataclass
class DecodeResult:
    image: np.ndarray
    header: StreamHeader
    latent: QuantizedLatent
    index_map: PriorIndexMap


def encode_image(image: np.ndarray, tables: CdfTableSet, delta: float,
                 planes: PlanePolicy = PlanePolicy.LUMA, allow_clamp: bool = False,
                 timer: StageTimer | None = None, counter: LookupCounter | None = None) -> EncodeResult:
    """
    Encode an image in [0, 1]. Symbols outside the tables' alphabet are an
    error unless `allow_clamp`, in which case they are clamped and counted.
    """
    counter = counter if counter is not None else LookupCounter()
    if tables.c_l != IMAGE_CHANNELS:
        raise UsageError(f"image coding needs a {IMAGE_CHANNELS}-channel model, got {tables.c_l} channels")
    image = np.asarray(image, dtype=np.float64)
    delta = stream_delta(delta)
    header = StreamHeader.for_model(image.shape[0], image.shape[1], planes, delta, tables)

    with maybe_stage(timer, "transform"):
        latent = image_latent(image, delta, planes)
        if not allow_clamp:
            check_alphabet(tables, latent)
        latent, clamped = clamp_to_alphabet(latent, tables.alphabet)
    with maybe_stage(timer, "prior-select"):
        index_map, table_bits = select_priors(tables, latent, counter)
    with maybe_stage(timer, "cdf-gather"):
        gathered = gather_rows(index_map, tables, counter)
    with maybe_stage(timer, "entropy-code"):
        payload = encode_symbols(latent, gathered, tables, counter)
        index_bytes = encode_indices(index_map)
        stream = write_stream(header, index_bytes, payload)

    logger.info("encoded %dx%d image into %d bytes (%d index, %d payload)",
                header.height, header.width, len(stream), len(index_bytes), len(payload))
    return EncodeResult(stream, header, latent, index_map, len(index_bytes), len(payload),
                        table_bits, clamped, counter)


def decode_stream(data: bytes, tables: CdfTableSet, timer: StageTimer | None = None,
                  counter: LookupCounter | None = None) -> DecodeResult:
    with maybe_stage(timer, "entropy-code"):
        header, index_bytes, payload = read_stream(data)
        header.check_model(tables)
        shape = latent_grid(header)
        index_map = decode_indices(index_bytes, shape[1:], tables.n_cdf)
    with maybe_stage(timer, "cdf-gather"):
        gathered = gather_rows(index_map, tables, counter)
    with maybe_stage(timer, "entropy-code"):
        latent = decode_symbols(payload, gathered, tables, shape, counter)
    with maybe_stage(timer, "transform"):
        image = reconstruct(latent, header)
    return DecodeResult(image, header, latent, index_map)
