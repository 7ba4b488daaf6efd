from pathlib import Path

import numpy as np

from ...exceptions import UsageError
from ...helpers.netpbm import read_netpbm
from ...services.bench import bench_image, prior_sweep, write_rows
from ...services.probability_model import SymbolAlphabet, load_tables
from ...services.transform import PlanePolicy, SyntheticSource
from ._base import CodecCommand, default


class Command(CodecCommand):
    help = (
        "Benchmark a model on images (bpp, PSNR, stage timings, lookup counts), or sweep the "
        "number of priors on a synthetic source with --sweep-n-cdf."
    )

    def add_arguments(self, parser):
        self.add_source_arguments(parser)
        self.add_delta_arguments(parser)
        self.add_training_arguments(parser)
        parser.add_argument("--model", help="Frozen CDF table file (.cdf) for image benchmarks.")
        parser.add_argument("--runs", type=int, default=default("BENCH_RUNS"),
                            help="Timing runs averaged per image (default %(default)s).")
        parser.add_argument("--allow-clamp", action="store_true")
        parser.add_argument("--sweep-n-cdf", type=int, nargs="+",
                            help="Train one model per value on a synthetic source and compare rates.")
        parser.add_argument("--out", required=True, help="CSV file to write.")

    def _images(self, options):
        if not options.get("model"):
            raise UsageError("--model is required for image benchmarks")
        if not options.get("images"):
            raise UsageError("--images is required for image benchmarks")
        tables = load_tables(options["model"])
        planes = PlanePolicy(options["planes"])
        rows = []
        for path in self.image_paths(options["images"]):
            rows.append(bench_image(path.name, read_netpbm(path), tables, options["delta"], planes,
                                    options["runs"], options["allow_clamp"]))
        for row in rows:
            self.emit(f"{row.image}: {row.bpp:.4f} bpp (index {row.index_bpp:.5f}), {row.psnr:.2f} dB, "
                      f"encode {row.encode_seconds * 1000:.1f} ms, decode {row.decode_seconds * 1000:.1f} ms")
        return rows

    def _sweep(self, options):
        spec = self.synthetic_spec(options)
        if spec is None:
            raise UsageError("--sweep-n-cdf needs --synthetic-regimes or --source-spec")
        if min(options["sweep_n_cdf"]) < 1:
            raise UsageError("every --sweep-n-cdf value must be >= 1")
        source = SyntheticSource(spec, options["grid"], options["grid"])
        alphabet = SymbolAlphabet.covering(np.array(spec.support()))
        rows = prior_sweep(source, options["sweep_n_cdf"], options["steps"], spec.c_l, alphabet,
                           self.trainer_config(options), depth=default("CPM_DEPTH"))
        for row in rows:
            self.emit(f"{row.n_cdf:4d} priors: {row.rate:.4f} bits/symbol ({row.priors_in_use} in use)")
        return rows

    def run(self, **options):
        if options.get("runs", 1) < 1:
            raise UsageError("--runs must be >= 1")
        rows = self._sweep(options) if options.get("sweep_n_cdf") else self._images(options)
        out = Path(options["out"])
        write_rows(rows, out)
        self.emit(f"wrote {len(rows)} rows to {out}", self.style.SUCCESS)
