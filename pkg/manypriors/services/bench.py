"""
Accounting and measurement: lookup counts (formula and instrumented), stage
timings, rate/distortion metrics, segmentation maps and CDF dumps.
"""

import colorsys
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from time import perf_counter
from typing import Sequence

import numpy as np
from pydantic import BaseModel

from ..exceptions import UsageError
from ..helpers.counters import LookupCounter
from ..helpers.timing import ENCODE_STAGES, StageTimer
from .codec import decode_stream, encode_image
from .coder import decode_latent, encode_latent
from .competition import CompetitionTrainer, PriorIndexMap, TrainerConfig, select_priors
from .probability_model import CDF_TOTAL, CdfTableSet, MonotoneCdfParams, SymbolAlphabet
from .transform import BLOCK, LatentSource, PlanePolicy, QuantizedLatent, image_planes

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
GOLDEN_RATIO_CONJUGATE = 0.6180339887498949
DEFAULT_RUNS = 50


class LookupReport(BaseModel):
    h_l: int
    w_l: int
    c_l: int
    n_cdf: int
    encode_index_lookups: int
    encode_cdf_gathers: int
    decode_index_lookups: int = 0
    decode_cdf_gathers: int
    hp_equivalent_cdf_evals: int

    @property
    def encode_total(self) -> int:
        return self.encode_index_lookups + self.encode_cdf_gathers

    @property
    def encode_ratio(self) -> float:
        return self.encode_total / self.hp_equivalent_cdf_evals

    @property
    def decode_ratio(self) -> float:
        return self.decode_cdf_gathers / self.hp_equivalent_cdf_evals

    def lines(self) -> list[str]:
        return [
            f"index lookups (encode): {self.encode_index_lookups:,}",
            f"CDF gathers (encode):   {self.encode_cdf_gathers:,}",
            f"CDF gathers (decode):   {self.decode_cdf_gathers:,}",
            f"encode total:           {self.encode_total:,}",
            f"per-variable CDF evals: {self.hp_equivalent_cdf_evals:,}",
            f"encode ratio:           {self.encode_ratio:.4g}",
            f"decode ratio:           {self.decode_ratio:.4g}",
        ]


def count_lookups(h_l: int, w_l: int, c_l: int, n_cdf: int) -> LookupReport:
    """Closed-form lookup counts for coding an h_l x w_l x c_l latent with n_cdf priors."""
    if min(h_l, w_l, c_l, n_cdf) < 1:
        raise UsageError("lookup accounting needs positive latent dimensions and n_cdf")
    locations = h_l * w_l
    return LookupReport(
        h_l=h_l,
        w_l=w_l,
        c_l=c_l,
        n_cdf=n_cdf,
        encode_index_lookups=locations * c_l * n_cdf,
        encode_cdf_gathers=locations,
        decode_cdf_gathers=locations,
        hp_equivalent_cdf_evals=locations * c_l,
    )


def instrument_counts(latent: QuantizedLatent, tables: CdfTableSet) -> LookupReport:
    """Run selection, encode and decode with counters attached and report what they saw."""
    encoding, decoding = LookupCounter(), LookupCounter()
    index_map, _ = select_priors(tables, latent, encoding)
    payload = encode_latent(latent, index_map, tables, encoding)
    decode_latent(payload, index_map, tables, latent.shape, decoding)
    return LookupReport(
        h_l=latent.h_l,
        w_l=latent.w_l,
        c_l=latent.c_l,
        n_cdf=tables.n_cdf,
        encode_index_lookups=encoding.index_lookups,
        encode_cdf_gathers=encoding.cdf_gathers,
        decode_index_lookups=decoding.index_lookups,
        decode_cdf_gathers=decoding.cdf_gathers,
        hp_equivalent_cdf_evals=encoding.symbols,
    )


# Metrics


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB for images in [0, 1], capped at 99 dB."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"cannot compare images of shapes {a.shape} and {b.shape}")
    if a.size == 0:
        raise UsageError("PSNR is undefined for empty images")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def bpp(n_bytes: int, height: int, width: int) -> float:
    if height * width <= 0:
        raise UsageError("bits per pixel is undefined for an empty image")
    return 8.0 * n_bytes / (height * width)


# Stage timings


@dataclass
class StageReport:
    runs: int
    encode: dict[str, float]
    decode: dict[str, float]
    encode_total: float
    decode_total: float
    n_bytes: int
    bpp: float

    def rows(self) -> list[tuple[str, str, float]]:
        return [("encode", stage, self.encode[stage]) for stage in ENCODE_STAGES] + [
            ("decode", stage, self.decode[stage]) for stage in ENCODE_STAGES
        ]

    def lines(self) -> list[str]:
        lines = [f"{direction:<7}{stage:<14}{seconds * 1000:10.3f} ms" for direction, stage, seconds in self.rows()]
        lines.append(f"{'encode':<7}{'total':<14}{self.encode_total * 1000:10.3f} ms")
        lines.append(f"{'decode':<7}{'total':<14}{self.decode_total * 1000:10.3f} ms")
        return lines


def stage_timings(image: np.ndarray, tables: CdfTableSet, delta: float,
                  planes: PlanePolicy = PlanePolicy.LUMA, runs: int = DEFAULT_RUNS,
                  allow_clamp: bool = False) -> StageReport:
    """Mean wall-clock seconds per stage over `runs` encode/decode round trips."""
    if runs < 1:
        raise UsageError("runs must be >= 1")
    # Warm the table caches outside the measurement.
    result = encode_image(image, tables, delta, planes, allow_clamp)
    decode_stream(result.stream, tables)

    encoding, decoding = StageTimer(), StageTimer()
    encode_total = decode_total = 0.0
    for _ in range(runs):
        start = perf_counter()
        result = encode_image(image, tables, delta, planes, allow_clamp, timer=encoding)
        middle = perf_counter()
        decode_stream(result.stream, tables, timer=decoding)
        encode_total += middle - start
        decode_total += perf_counter() - middle

    height, width = result.header.height, result.header.width
    return StageReport(
        runs=runs,
        encode={stage: encoding.seconds.get(stage, 0.0) / runs for stage in ENCODE_STAGES},
        decode={stage: decoding.seconds.get(stage, 0.0) / runs for stage in ENCODE_STAGES},
        encode_total=encode_total / runs,
        decode_total=decode_total / runs,
        n_bytes=len(result.stream),
        bpp=bpp(len(result.stream), height, width),
    )


class BenchRow(BaseModel):
    image: str
    height: int
    width: int
    bytes: int
    bpp: float
    index_bpp: float
    psnr: float
    clamped: int
    encode_seconds: float
    decode_seconds: float
    encode_transform: float
    encode_prior_select: float
    encode_cdf_gather: float
    encode_entropy_code: float
    decode_transform: float
    decode_prior_select: float
    decode_cdf_gather: float
    decode_entropy_code: float
    index_lookups: int
    cdf_gathers: int
    hp_equivalent_cdf_evals: int


def bench_image(name: str, image: np.ndarray, tables: CdfTableSet, delta: float,
                planes: PlanePolicy = PlanePolicy.LUMA, runs: int = DEFAULT_RUNS,
                allow_clamp: bool = False) -> BenchRow:
    result = encode_image(image, tables, delta, planes, allow_clamp)
    decoded = decode_stream(result.stream, tables)
    timings = stage_timings(image, tables, delta, planes, runs, allow_clamp)
    reference = np.asarray(image, dtype=np.float64)
    if planes is PlanePolicy.LUMA:
        reference = image_planes(reference, planes)[0]
    stages = {
        f"{direction}_{stage.replace('-', '_')}": seconds for direction, stage, seconds in timings.rows()
    }
    return BenchRow(
        image=name,
        height=result.header.height,
        width=result.header.width,
        bytes=len(result.stream),
        bpp=result.bpp,
        index_bpp=result.index_bpp,
        psnr=psnr(reference, decoded.image),
        clamped=result.clamped,
        encode_seconds=timings.encode_total,
        decode_seconds=timings.decode_total,
        index_lookups=result.counter.index_lookups,
        cdf_gathers=result.counter.cdf_gathers,
        hp_equivalent_cdf_evals=result.counter.symbols,
        **stages,
    )


def write_rows(rows: Sequence[BaseModel], path):
    if not rows:
        raise UsageError("nothing to write")
    fields = list(type(rows[0]).model_fields)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row.model_dump())


# Figures' data


def palette(n_cdf: int, seed: int = 0) -> np.ndarray:
    """
    Distinct 8-bit RGB colour per prior: hues step by the golden ratio from a
    seeded start, brightness alternates between neighbours.
    """
    start = np.random.default_rng(seed).random()
    colours = np.empty((n_cdf, 3), dtype=np.uint8)
    for i in range(n_cdf):
        hue = (start + i * GOLDEN_RATIO_CONJUGATE) % 1.0
        value = 0.95 if i % 2 == 0 else 0.75
        colours[i] = np.rint(np.array(colorsys.hsv_to_rgb(hue, 0.85, value)) * 255.0)
    return colours


def segmentation_map(index_map: PriorIndexMap, seed: int = 0) -> np.ndarray:
    """RGB image (16 H_L, 16 W_L, 3) painting each location's block in its prior's colour."""
    coloured = palette(index_map.n_cdf, seed)[index_map.idx]
    return np.repeat(np.repeat(coloured, BLOCK, axis=0), BLOCK, axis=1)


def cdf_dump(tables: CdfTableSet, out_dir) -> list[Path]:
    """One CSV per prior: a row per channel holding its CDF at every alphabet boundary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    boundaries = tables.alphabet.y_min + np.arange(tables.alphabet.size + 1) - 0.5
    header = ",".join(f"{b:g}" for b in boundaries)
    paths = []
    for prior in range(tables.n_cdf):
        path = out_dir / f"prior_{prior:03d}.csv"
        np.savetxt(path, tables.table[prior] / CDF_TOTAL, fmt="%.8f", delimiter=",", header=header, comments="")
        paths.append(path)
    return paths


# Number-of-priors sweep


class SweepRow(BaseModel):
    n_cdf: int
    rate: float
    priors_in_use: int
    best_step: int


def prior_sweep(source: LatentSource, n_cdf_values: Sequence[int], steps: int, c_l: int,
                alphabet: SymbolAlphabet, cfg: TrainerConfig | None = None,
                validation: Sequence[QuantizedLatent] | None = None,
                depth: int = 4) -> list[SweepRow]:
    """Train one model per n_cdf on the same source and compare validation rates."""
    cfg = cfg or TrainerConfig()
    if validation is None:
        held_out = np.random.default_rng([cfg.seed, 2])
        validation = [source.draw(held_out) for _ in range(cfg.validation_latents)]
    rows = []
    for n_cdf in n_cdf_values:
        params = MonotoneCdfParams.initialize(n_cdf, c_l, alphabet, depth, cfg.seed)
        trainer = CompetitionTrainer(params, cfg)
        best, report = trainer.fit(source, steps, validation)
        final = CompetitionTrainer(best, cfg).validate(validation)
        logger.info("%d priors: %.4f bits/symbol", n_cdf, final.rate)
        rows.append(SweepRow(n_cdf=n_cdf, rate=final.rate, priors_in_use=final.priors_in_use,
                             best_step=report.best_step))
    return rows
