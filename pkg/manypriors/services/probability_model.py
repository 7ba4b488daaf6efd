"""
Cumulative probability model (CPM) for the competing priors.

One monotone scalar CDF is learned per (prior, channel) pair. Each CDF is a
stack of D scalar layers

    h_k = softplus(w_k) * x_k + b_k
    x_{k+1} = h_k + tanh(a_k) * tanh(h_k)        for k < D - 1
    F(x) = sigmoid(h_{D-1})

so every layer is strictly increasing in its input and F is a valid CDF.
Training evaluates F at symbol +/- 0.5; inference uses the frozen fixed-point
tables produced by `freeze`.

All evaluation helpers broadcast: parameter arrays carry the layer axis last
and their leading shape broadcasts against the evaluation points.
"""

import hashlib
import logging
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from ..exceptions import (
    BadMagicError,
    FormatError,
    MissingInputError,
    TruncatedStreamError,
    UsageError,
)

logger = logging.getLogger(__name__)

PRECISION = 16
CDF_TOTAL = 1 << PRECISION
MAX_ALPHABET = 1 << 15
MASS_FLOOR = 2.0 ** -24
ALPHABET_MARGIN = 2
DEFAULT_DEPTH = 4

PARAMS_MAGIC = b"MPCPM1"
TABLES_MAGIC = b"MPCDF1"
_HEADER = struct.Struct("<IIIii")  # n_cdf, c_l, depth, y_min, y_max

_EPS = 2.0 ** -53
_LN2 = np.log(2.0)


@dataclass(frozen=True)
class SymbolAlphabet:
    """Inclusive range of coded symbol values."""

    y_min: int
    y_max: int

    def __post_init__(self):
        if not self.y_min <= 0 <= self.y_max:
            raise UsageError(f"alphabet [{self.y_min}, {self.y_max}] must contain 0")
        if self.size < 2:
            raise UsageError("alphabet needs at least two symbols")

    @property
    def size(self) -> int:
        return self.y_max - self.y_min + 1

    @classmethod
    def covering(cls, symbols, margin: int = ALPHABET_MARGIN) -> "SymbolAlphabet":
        """Smallest alphabet holding every observed symbol, widened by `margin`."""
        symbols = np.asarray(symbols)
        if symbols.size == 0:
            raise UsageError("cannot derive an alphabet from an empty source")
        y_min = min(int(symbols.min()) - margin, 0)
        y_max = max(int(symbols.max()) + margin, 0)
        return cls(y_min, y_max)

    def contains(self, symbols) -> np.ndarray:
        symbols = np.asarray(symbols)
        return (symbols >= self.y_min) & (symbols <= self.y_max)


@dataclass
class MonotoneCdfParams:
    """Raw CPM parameters, shaped (n_cdf, c_l, depth) and (n_cdf, c_l, depth - 1)."""

    weights: np.ndarray
    biases: np.ndarray
    gates: np.ndarray
    alphabet: SymbolAlphabet

    def __post_init__(self):
        if self.weights.ndim != 3 or self.weights.shape != self.biases.shape:
            raise UsageError("weights and biases must share shape (n_cdf, c_l, depth)")
        n_cdf, c_l, depth = self.weights.shape
        if n_cdf < 1 or c_l < 1 or depth < 1:
            raise UsageError("n_cdf, c_l and depth must all be >= 1")
        if self.gates.shape != (n_cdf, c_l, depth - 1):
            raise UsageError("gates must have shape (n_cdf, c_l, depth - 1)")

    @property
    def n_cdf(self) -> int:
        return self.weights.shape[0]

    @property
    def c_l(self) -> int:
        return self.weights.shape[1]

    @property
    def depth(self) -> int:
        return self.weights.shape[2]

    def pair(self, prior: int, channel: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        check_pair(self, prior, channel)
        return self.weights[prior, channel], self.biases[prior, channel], self.gates[prior, channel]

    def copy(self) -> "MonotoneCdfParams":
        return MonotoneCdfParams(self.weights.copy(), self.biases.copy(), self.gates.copy(), self.alphabet)

    def as_stored(self) -> "MonotoneCdfParams":
        """The parameters exactly as they survive a round trip through the model file."""
        def cast(array):
            return array.astype(np.float32).astype(np.float64)

        return MonotoneCdfParams(cast(self.weights), cast(self.biases), cast(self.gates), self.alphabet)

    @classmethod
    def initialize(cls, n_cdf: int, c_l: int, alphabet: SymbolAlphabet,
                   depth: int = DEFAULT_DEPTH, seed: int = 0) -> "MonotoneCdfParams":
        """
        Start every CDF as a logistic whose slope spans the alphabet, with the
        priors' medians spread across its central half and a small seeded
        jitter on every bias so that no two priors start identical.
        """
        if n_cdf < 1:
            raise UsageError("n_cdf must be >= 1")
        rng = np.random.default_rng(seed)
        slope = (8.0 / alphabet.size) ** (1.0 / depth)
        weights = np.full((n_cdf, c_l, depth), np.log(np.expm1(slope)))

        middle = 0.5 * (alphabet.y_min + alphabet.y_max)
        spread = alphabet.size / 4.0
        centers = middle + (np.linspace(-spread, spread, n_cdf) if n_cdf > 1 else np.zeros(1))
        biases = np.zeros((n_cdf, c_l, depth))
        biases[:, :, 0] = -slope * centers[:, None]
        biases += rng.uniform(-0.05, 0.05, size=biases.shape)

        gates = np.zeros((n_cdf, c_l, depth - 1))
        return cls(weights, biases, gates, alphabet)


@dataclass
class CpmGradient:
    """Gradient laid out like MonotoneCdfParams."""

    weights: np.ndarray
    biases: np.ndarray
    gates: np.ndarray

    @classmethod
    def zeros_like(cls, params: MonotoneCdfParams) -> "CpmGradient":
        return cls(np.zeros_like(params.weights), np.zeros_like(params.biases), np.zeros_like(params.gates))

    def pair(self, prior: int, channel: int) -> np.ndarray:
        """Flattened gradient of one (prior, channel) pair: weights, biases, gates."""
        return np.concatenate([self.weights[prior, channel], self.biases[prior, channel], self.gates[prior, channel]])


@dataclass(frozen=True, eq=False)
class CdfTableSet:
    """Frozen fixed-point CDFs, shaped (n_cdf, c_l, L + 1), denominator 2**16."""

    table: np.ndarray
    alphabet: SymbolAlphabet
    depth: int = DEFAULT_DEPTH

    def __post_init__(self):
        if self.table.ndim != 3 or self.table.shape[2] != self.alphabet.size + 1:
            raise FormatError("CDF table shape does not match its alphabet")
        if np.any(self.table[..., 0] != 0) or np.any(self.table[..., -1] != CDF_TOTAL):
            raise FormatError("CDF rows must start at 0 and end at 2**16")
        if np.any(np.diff(self.table.astype(np.int64), axis=-1) <= 0):
            raise FormatError("CDF rows must be strictly increasing")
        self.table.setflags(write=False)

    @property
    def n_cdf(self) -> int:
        return self.table.shape[0]

    @property
    def c_l(self) -> int:
        return self.table.shape[1]

    def row(self, prior: int, channel: int) -> np.ndarray:
        return self.table[prior, channel]

    @cached_property
    def rows(self) -> list:
        """Nested Python lists of the table, indexed [prior][channel][symbol]."""
        return self.table.tolist()

    @cached_property
    def bitcosts(self) -> np.ndarray:
        """Fixed-point cost in bits of every (prior, channel, symbol)."""
        masses = np.diff(self.table.astype(np.int64), axis=-1)
        costs = PRECISION - np.log2(masses)
        costs.setflags(write=False)
        return costs

    @cached_property
    def digest(self) -> bytes:
        return hashlib.sha256(tables_to_bytes(self)).digest()


def check_pair(params: MonotoneCdfParams, prior: int, channel: int):
    if not 0 <= prior < params.n_cdf:
        raise UsageError(f"prior {prior} out of range [0, {params.n_cdf})")
    if not 0 <= channel < params.c_l:
        raise UsageError(f"channel {channel} out of range [0, {params.c_l})")


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _cumulative(weights, biases, gates, x, keep: bool = False):
    depth = weights.shape[-1]
    slopes = _softplus(weights)
    factors = np.tanh(gates)
    inputs, pre = [], []
    h = x
    for k in range(depth):
        if keep:
            inputs.append(h)
        h = slopes[..., k] * h + biases[..., k]
        if keep:
            pre.append(h)
        if k < depth - 1:
            h = h + factors[..., k] * np.tanh(h)
    cdf = np.clip(_sigmoid(h), _EPS, 1.0 - _EPS)
    return cdf, ((inputs, pre, slopes, factors) if keep else None)


def _cumulative_grad(weights, cache, cdf, grad_cdf):
    inputs, pre, slopes, factors = cache
    depth = slopes.shape[-1]
    dslopes = _sigmoid(weights)
    shape = np.shape(grad_cdf)
    grad_w = np.empty(shape + (depth,))
    grad_b = np.empty(shape + (depth,))
    grad_a = np.empty(shape + (depth - 1,))

    g = grad_cdf * cdf * (1.0 - cdf)
    for k in reversed(range(depth)):
        if k < depth - 1:
            squashed = np.tanh(pre[k])
            grad_a[..., k] = g * squashed * (1.0 - factors[..., k] ** 2)
            g = g * (1.0 + factors[..., k] * (1.0 - squashed * squashed))
        grad_b[..., k] = g
        grad_w[..., k] = g * inputs[k] * dslopes[..., k]
        g = g * slopes[..., k]
    return grad_w, grad_b, grad_a


def interval_bits(weights, biases, gates, symbols, with_grad: bool = False):
    """
    Bitcost -log2(F(s + 0.5) - F(s - 0.5)) of integer symbols, optionally with
    per-element gradients (each with a trailing layer axis).
    """
    symbols = np.asarray(symbols, dtype=np.float64)
    upper, upper_cache = _cumulative(weights, biases, gates, symbols + 0.5, keep=with_grad)
    lower, lower_cache = _cumulative(weights, biases, gates, symbols - 0.5, keep=with_grad)
    mass = np.maximum(upper - lower, MASS_FLOOR)
    bits = -np.log2(mass)
    if not with_grad:
        return bits, None

    grad_mass = np.where(upper - lower > MASS_FLOOR, -1.0 / (mass * _LN2), 0.0)
    upper_grads = _cumulative_grad(weights, upper_cache, upper, grad_mass)
    lower_grads = _cumulative_grad(weights, lower_cache, lower, -grad_mass)
    return bits, tuple(u + l for u, l in zip(upper_grads, lower_grads))


def cpm_eval(params: MonotoneCdfParams, prior: int, channel: int, v):
    """Modeled cumulative probability of one (prior, channel) at `v`."""
    weights, biases, gates = params.pair(prior, channel)
    cdf, _ = _cumulative(weights, biases, gates, np.asarray(v, dtype=np.float64))
    return float(cdf) if np.ndim(cdf) == 0 else cdf


def symbol_bitcost(params: MonotoneCdfParams, prior: int, channel: int, s):
    weights, biases, gates = params.pair(prior, channel)
    bits, _ = interval_bits(weights, biases, gates, s)
    return float(bits) if np.ndim(bits) == 0 else bits


def bitcost_grad(params: MonotoneCdfParams, prior: int, channel: int, s: int) -> CpmGradient:
    """Gradient of symbol_bitcost; nonzero only for the (prior, channel) pair evaluated."""
    weights, biases, gates = params.pair(prior, channel)
    _, (grad_w, grad_b, grad_a) = interval_bits(weights, biases, gates, s, with_grad=True)
    gradient = CpmGradient.zeros_like(params)
    gradient.weights[prior, channel] = grad_w
    gradient.biases[prior, channel] = grad_b
    gradient.gates[prior, channel] = grad_a
    return gradient


def channel_bitcosts(params: MonotoneCdfParams, symbols: np.ndarray) -> np.ndarray:
    """Bitcost of symbols shaped (c_l, m) under every prior: shape (n_cdf, c_l, m)."""
    bits, _ = interval_bits(
        params.weights[:, :, None, :],
        params.biases[:, :, None, :],
        params.gates[:, :, None, :],
        symbols,
    )
    return bits


def freeze(params: MonotoneCdfParams, alphabet: SymbolAlphabet | None = None) -> CdfTableSet:
    """
    Evaluate every CPM at the L + 1 half-integer boundaries of the alphabet and
    round to 16-bit fixed point. Rows are pinned to [0, 2**16] and repaired to
    strict monotonicity: entries that would collide are bumped upward, then
    capped from the top so the last interior entry stays below 2**16.
    """
    alphabet = alphabet or params.alphabet
    size = alphabet.size
    if size > MAX_ALPHABET:
        raise UsageError(f"alphabet of {size} symbols exceeds the 16-bit limit of {MAX_ALPHABET}")

    boundaries = alphabet.y_min + np.arange(size + 1) - 0.5
    cdf, _ = _cumulative(
        params.weights[:, :, None, :],
        params.biases[:, :, None, :],
        params.gates[:, :, None, :],
        boundaries,
    )
    table = np.rint(cdf * CDF_TOTAL).astype(np.int64)
    table[..., 0] = 0
    table[..., -1] = CDF_TOTAL

    # Strictly increasing rows <=> (table - ramp) non-decreasing.
    ramp = np.arange(size + 1)
    excess = np.maximum.accumulate(table - ramp, axis=-1)
    excess[..., -1] = CDF_TOTAL - size
    excess = np.minimum.accumulate(excess[..., ::-1], axis=-1)[..., ::-1]
    table = excess + ramp

    moved = int(np.count_nonzero(table != np.rint(cdf * CDF_TOTAL)))
    logger.info("froze %d x %d CDF tables over %d symbols (%d entries repaired)",
                params.n_cdf, params.c_l, size, moved)
    return CdfTableSet(table.astype(np.uint32), alphabet, params.depth)


def table_bitcost(tables: CdfTableSet, prior: int, channel: int, s) -> np.ndarray:
    """Fixed-point bitcost of symbol(s) `s` in one frozen row."""
    return tables.bitcosts[prior, channel, np.asarray(s) - tables.alphabet.y_min]


# Model files


def params_to_bytes(params: MonotoneCdfParams) -> bytes:
    depth = params.depth
    packed = np.empty((params.n_cdf, params.c_l, 3 * depth - 1))
    packed[..., 0::3] = params.weights
    packed[..., 1::3] = params.biases
    packed[..., 2::3] = params.gates
    header = PARAMS_MAGIC + _HEADER.pack(
        params.n_cdf, params.c_l, depth, params.alphabet.y_min, params.alphabet.y_max
    )
    return header + packed.astype("<f4").tobytes()


def _read_header(data: bytes, magic: bytes) -> tuple[int, int, int, SymbolAlphabet]:
    if len(data) < len(magic) and magic.startswith(data):
        raise TruncatedStreamError("model file truncated inside its magic")
    if data[: len(magic)] != magic:
        raise BadMagicError(f"expected a {magic.decode()} model file")
    end = len(magic) + _HEADER.size
    if len(data) < end:
        raise TruncatedStreamError("model file truncated inside its header")
    n_cdf, c_l, depth, y_min, y_max = _HEADER.unpack_from(data, len(magic))
    if n_cdf < 1 or c_l < 1 or depth < 1:
        raise FormatError("model header declares an empty model")
    try:
        alphabet = SymbolAlphabet(y_min, y_max)
    except UsageError as error:
        raise FormatError(f"model header: {error}") from error
    return n_cdf, c_l, depth, alphabet


def params_from_bytes(data: bytes) -> MonotoneCdfParams:
    n_cdf, c_l, depth, alphabet = _read_header(data, PARAMS_MAGIC)
    offset = len(PARAMS_MAGIC) + _HEADER.size
    count = n_cdf * c_l * (3 * depth - 1)
    if len(data) < offset + 4 * count:
        raise TruncatedStreamError("model file truncated inside its parameters")
    packed = np.frombuffer(data, dtype="<f4", count=count, offset=offset).astype(np.float64)
    packed = packed.reshape(n_cdf, c_l, 3 * depth - 1)
    return MonotoneCdfParams(
        np.ascontiguousarray(packed[..., 0::3]),
        np.ascontiguousarray(packed[..., 1::3]),
        np.ascontiguousarray(packed[..., 2::3]),
        alphabet,
    )


def tables_to_bytes(tables: CdfTableSet) -> bytes:
    # 2**16 does not fit 16 bits; the pinned last entry is stored modulo 2**16.
    header = TABLES_MAGIC + _HEADER.pack(
        tables.n_cdf, tables.c_l, tables.depth, tables.alphabet.y_min, tables.alphabet.y_max
    )
    return header + (tables.table % CDF_TOTAL).astype("<u2").tobytes()


def tables_from_bytes(data: bytes) -> CdfTableSet:
    n_cdf, c_l, depth, alphabet = _read_header(data, TABLES_MAGIC)
    offset = len(TABLES_MAGIC) + _HEADER.size
    count = n_cdf * c_l * (alphabet.size + 1)
    if len(data) < offset + 2 * count:
        raise TruncatedStreamError("table file truncated inside its entries")
    table = np.frombuffer(data, dtype="<u2", count=count, offset=offset).astype(np.uint32)
    table = table.reshape(n_cdf, c_l, alphabet.size + 1)
    if np.any(table[..., -1] != 0):
        raise FormatError("CDF rows must end at 2**16")
    table[..., -1] = CDF_TOTAL
    return CdfTableSet(table, alphabet, depth)


def tables_digest(tables: CdfTableSet) -> bytes:
    """32-byte content hash identifying a frozen table set."""
    return tables.digest


def _read(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"model file not found: {path}")
    return path.read_bytes()


def save_params(params: MonotoneCdfParams, path):
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path) -> MonotoneCdfParams:
    return params_from_bytes(_read(path))


def save_tables(tables: CdfTableSet, path):
    Path(path).write_bytes(tables_to_bytes(tables))


def load_tables(path) -> CdfTableSet:
    return tables_from_bytes(_read(path))
