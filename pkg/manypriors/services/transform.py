"""
Fixed analysis/synthesis transform and latent sources.

The image transform is an orthonormal 16x16 block DCT-II: every 16x16 pixel
patch becomes one latent location whose C_L = 256 channels are its DCT
coefficients, channel c = 16u + v for vertical frequency u and horizontal
frequency v. A uniform quantizer with step `delta` turns coefficients into
integer symbols.

The synthetic source draws symbols from known per-regime pmfs, so trained
rates can be compared against exact entropies.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Literal, Protocol, Sequence

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from ..exceptions import UsageError
from .probability_model import SymbolAlphabet

logger = logging.getLogger(__name__)

BLOCK = 16
IMAGE_CHANNELS = BLOCK * BLOCK

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class PlanePolicy(str, Enum):
    LUMA = "luma"
    PLANES = "planes"

    @property
    def count(self) -> int:
        return 3 if self is PlanePolicy.PLANES else 1


class TransformConfig(BaseModel):
    block: Literal[16] = BLOCK
    delta: float = Field(0.1, gt=0)
    planes: PlanePolicy = PlanePolicy.LUMA


@dataclass
class QuantizedLatent:
    """Integer symbols shaped (c_l, h_l, w_l)."""

    symbols: np.ndarray

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols)
        if self.symbols.ndim != 3:
            raise UsageError(f"latent must be 3-D (c_l, h_l, w_l), got shape {self.symbols.shape}")
        if not np.issubdtype(self.symbols.dtype, np.integer):
            raise UsageError("latent symbols must be integers")

    @property
    def c_l(self) -> int:
        return self.symbols.shape[0]

    @property
    def h_l(self) -> int:
        return self.symbols.shape[1]

    @property
    def w_l(self) -> int:
        return self.symbols.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.symbols.shape

    def flat(self) -> np.ndarray:
        """Symbols shaped (c_l, h_l * w_l), locations in (k, l) row-major order."""
        return self.symbols.reshape(self.c_l, -1)

    @classmethod
    def empty(cls, c_l: int) -> "QuantizedLatent":
        return cls(np.zeros((c_l, 0, 0), dtype=np.int32))


def latent_shape(height: int, width: int) -> tuple[int, int]:
    return -(-height // BLOCK), -(-width // BLOCK)


def _dct_matrix(n: int = BLOCK) -> np.ndarray:
    u = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    matrix = np.cos(np.pi * (2 * x + 1) * u / (2 * n)) * np.sqrt(2.0 / n)
    matrix[0] /= np.sqrt(2.0)
    return matrix


_DCT = _dct_matrix()


def image_planes(image: np.ndarray, policy: PlanePolicy) -> list[np.ndarray]:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        if policy is PlanePolicy.PLANES:
            raise UsageError("independent-plane mode needs a 3-plane (PPM) image")
        return [image]
    if image.ndim == 3 and image.shape[2] == 3:
        if policy is PlanePolicy.LUMA:
            return [image @ LUMA_WEIGHTS]
        return [image[..., p] for p in range(3)]
    raise UsageError(f"unsupported image shape {image.shape}")


def _analyze_plane(plane: np.ndarray) -> np.ndarray:
    height, width = plane.shape
    h_l, w_l = latent_shape(height, width)
    padded = np.zeros((h_l * BLOCK, w_l * BLOCK))
    padded[:height, :width] = plane
    blocks = padded.reshape(h_l, BLOCK, w_l, BLOCK)
    coefficients = np.einsum("ux,kxly,vy->uvkl", _DCT, blocks, _DCT)
    return coefficients.reshape(IMAGE_CHANNELS, h_l, w_l)


def _synthesize_plane(coefficients: np.ndarray) -> np.ndarray:
    _, h_l, w_l = coefficients.shape
    blocks = np.einsum("ux,uvkl,vy->kxly", _DCT, coefficients.reshape(BLOCK, BLOCK, h_l, w_l), _DCT)
    return blocks.reshape(h_l * BLOCK, w_l * BLOCK)


def analyze(image: np.ndarray, cfg: TransformConfig | None = None) -> np.ndarray:
    """
    Real latent (256, H_L, W_L) of an image in [0, 1]. In independent-plane
    mode the three planes' latents are stacked along the row axis.
    """
    cfg = cfg or TransformConfig()
    planes = image_planes(image, cfg.planes)
    if planes[0].size == 0:
        raise UsageError("cannot analyze an empty image")
    return np.concatenate([_analyze_plane(plane) for plane in planes], axis=1)


def quantize(latent: np.ndarray, delta: float) -> QuantizedLatent:
    """Uniform quantizer, rounding half away from zero."""
    if not delta > 0:
        raise UsageError(f"quantizer step must be positive, got {delta}")
    scaled = np.asarray(latent, dtype=np.float64) / delta
    return QuantizedLatent((np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)).astype(np.int32))


def dequantize(latent: QuantizedLatent, delta: float) -> np.ndarray:
    return latent.symbols.astype(np.float64) * delta


def synthesize(latent: QuantizedLatent, delta: float, cfg: TransformConfig | None = None,
               shape: tuple[int, int] | None = None) -> np.ndarray:
    """Dequantize, invert the block DCT, crop to `shape` if given and clip to [0, 1]."""
    cfg = cfg or TransformConfig()
    if latent.c_l != IMAGE_CHANNELS:
        raise UsageError(f"image latents have {IMAGE_CHANNELS} channels, got {latent.c_l}")
    count = cfg.planes.count
    if latent.h_l % count:
        raise UsageError("latent rows do not split into the configured planes")
    stacked = np.split(dequantize(latent, delta), count, axis=1)
    planes = [_synthesize_plane(coefficients) for coefficients in stacked]
    image = planes[0] if count == 1 else np.stack(planes, axis=-1)
    if shape is not None:
        image = image[: shape[0], : shape[1]]
    return np.clip(image, 0.0, 1.0)


def clamp_to_alphabet(latent: QuantizedLatent, alphabet: SymbolAlphabet) -> tuple[QuantizedLatent, int]:
    """Clamp symbols into the alphabet; the count of clamped symbols is the error flag."""
    clamped = np.clip(latent.symbols, alphabet.y_min, alphabet.y_max)
    count = int(np.count_nonzero(clamped != latent.symbols))
    if count:
        logger.warning("%d latent symbols fell outside [%d, %d] and were clamped",
                       count, alphabet.y_min, alphabet.y_max)
    return QuantizedLatent(clamped.astype(np.int32)), count


# Synthetic latent source


class RegimePmf(BaseModel):
    """Discrete pmf over offset, offset + 1, ..., offset + len(probs) - 1."""

    offset: int
    probs: list[float] = Field(min_length=1)

    @field_validator("probs")
    @classmethod
    def _normalized(cls, probs):
        if any(p < 0 for p in probs):
            raise ValueError("probabilities must be non-negative")
        if abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {sum(probs)}, not 1")
        return probs

    @property
    def entropy(self) -> float:
        p = np.asarray(self.probs)
        p = p[p > 0]
        return float(-(p * np.log2(p)).sum())


class SyntheticSourceSpec(BaseModel):
    """regimes[r][c] is the pmf of channel c in regime r."""

    regimes: list[list[RegimePmf]] = Field(min_length=1)
    layout: list[list[int]] | None = None
    seed: int = 0

    @model_validator(mode="after")
    def _consistent(self):
        channels = {len(regime) for regime in self.regimes}
        if len(channels) != 1 or 0 in channels:
            raise ValueError("every regime needs the same, non-zero number of channels")
        if self.layout is not None:
            widths = {len(row) for row in self.layout}
            if not self.layout or len(widths) != 1 or 0 in widths:
                raise ValueError("layout must be a non-empty rectangle")
            if any(not 0 <= label < len(self.regimes) for row in self.layout for label in row):
                raise ValueError("layout refers to an unknown regime")
        return self

    @property
    def n_regimes(self) -> int:
        return len(self.regimes)

    @property
    def c_l(self) -> int:
        return len(self.regimes[0])

    def support(self) -> tuple[int, int]:
        """Smallest and largest symbol any regime can emit."""
        pmfs = [pmf for regime in self.regimes for pmf in regime]
        return min(p.offset for p in pmfs), max(p.offset + len(p.probs) - 1 for p in pmfs)

    def labels(self, h_l: int, w_l: int) -> np.ndarray:
        """Regime of every location; a stored layout is tiled to cover the grid."""
        if self.layout is None:
            k, l = np.indices((h_l, w_l))
            return (k + l) % self.n_regimes
        layout = np.asarray(self.layout)
        reps = (-(-h_l // layout.shape[0]), -(-w_l // layout.shape[1]))
        return np.tile(layout, reps)[:h_l, :w_l]


@dataclass
class SyntheticSample:
    latent: QuantizedLatent
    labels: np.ndarray
    entropy: np.ndarray  # exact bits per location, summed over channels


def sample_synthetic(spec: SyntheticSourceSpec, h_l: int, w_l: int,
                     rng: np.random.Generator | None = None) -> SyntheticSample:
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    labels = spec.labels(h_l, w_l)
    symbols = np.zeros((spec.c_l, h_l, w_l), dtype=np.int32)
    entropy = np.zeros((h_l, w_l))
    for r, regime in enumerate(spec.regimes):
        where = labels == r
        count = int(where.sum())
        entropy[where] = sum(pmf.entropy for pmf in regime)
        if count == 0:
            continue
        for c, pmf in enumerate(regime):
            draws = rng.choice(len(pmf.probs), size=count, p=pmf.probs)
            symbols[c][where] = draws + pmf.offset
    return SyntheticSample(QuantizedLatent(symbols), labels, entropy)


def laplacian_pmf(center: int, scale: float, radius: int = 6) -> RegimePmf:
    support = np.arange(-radius, radius + 1)
    weights = np.exp(-np.abs(support) / scale)
    return RegimePmf(offset=center - radius, probs=(weights / weights.sum()).tolist())


def separated_regimes(n_regimes: int, c_l: int, spacing: int = 6, seed: int = 0) -> SyntheticSourceSpec:
    """
    Regime-structured source: regime r draws every channel from a discrete
    Laplacian-like pmf with its own center and scale.
    """
    if n_regimes < 1 or c_l < 1:
        raise UsageError("a synthetic source needs at least one regime and one channel")
    regimes = []
    for r in range(n_regimes):
        center = int(round((r - (n_regimes - 1) / 2.0) * spacing))
        scale = 0.5 + 0.25 * (r % 3)
        regimes.append([laplacian_pmf(center, scale) for _ in range(c_l)])
    return SyntheticSourceSpec(regimes=regimes, seed=seed)


class LatentSource(Protocol):
    def draw(self, rng: np.random.Generator) -> QuantizedLatent: ...


class SyntheticSource:
    """Fresh synthetic latent of a fixed grid size on every draw."""

    def __init__(self, spec: SyntheticSourceSpec, h_l: int = 16, w_l: int = 16):
        self.spec = spec
        self.h_l = h_l
        self.w_l = w_l

    def draw(self, rng: np.random.Generator) -> QuantizedLatent:
        return sample_synthetic(self.spec, self.h_l, self.w_l, rng).latent


class LatentPool:
    """Draws uniformly from a fixed list of latents (e.g. analyzed training images)."""

    def __init__(self, latents: Sequence[QuantizedLatent]):
        if not latents:
            raise UsageError("latent source is empty")
        self.latents = list(latents)

    def draw(self, rng: np.random.Generator) -> QuantizedLatent:
        return self.latents[int(rng.integers(len(self.latents)))]
