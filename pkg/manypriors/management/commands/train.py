from pathlib import Path

import numpy as np
from humanfriendly import format_size

from ...exceptions import UsageError
from ...services.codec import latents_from_images
from ...services.competition import CompetitionTrainer
from ...services.probability_model import (
    MonotoneCdfParams,
    SymbolAlphabet,
    freeze,
    save_params,
    save_tables,
    tables_digest,
)
from ...services.transform import LatentPool, PlanePolicy, SyntheticSource
from ._base import CodecCommand, default


class Command(CodecCommand):
    help = "Train competing CDF priors on images or a synthetic source and freeze them into CDF tables."

    def add_arguments(self, parser):
        self.add_source_arguments(parser)
        self.add_delta_arguments(parser)
        self.add_training_arguments(parser)
        parser.add_argument("--n-cdf", type=int, default=default("N_CDF"), help="Number of competing priors.")
        parser.add_argument("--depth", type=int, default=default("CPM_DEPTH"), help="Layers per monotone CDF.")
        parser.add_argument("--out", required=True,
                            help="Frozen table file (.cdf); the parameters go next to it as .cpm.")
        parser.add_argument("--report", help="Training report path (default: next to --out as .txt).")

    def _source(self, options):
        spec = self.synthetic_spec(options)
        chosen = sum(bool(x) for x in (options.get("images"), spec))
        if chosen != 1:
            raise UsageError("choose exactly one of --images, --synthetic-regimes or --source-spec")
        if spec is not None:
            grid = options["grid"]
            if grid < 1:
                raise UsageError("--grid must be >= 1")
            alphabet = SymbolAlphabet.covering(np.array(spec.support()))
            return SyntheticSource(spec, grid, grid), spec.c_l, alphabet, None

        latents = latents_from_images(self.image_paths(options["images"]), options["delta"],
                                      PlanePolicy(options["planes"]))
        if not latents:
            raise UsageError("the image source holds no pixels")
        pool = LatentPool(latents)
        alphabet = SymbolAlphabet.covering(np.concatenate([latent.symbols.ravel() for latent in latents]))
        return pool, latents[0].c_l, alphabet, latents

    def run(self, **options):
        n_cdf = options["n_cdf"]
        if n_cdf < 1:
            raise UsageError(f"--n-cdf must be >= 1, got {n_cdf}")
        cfg = self.trainer_config(options)
        source, c_l, alphabet, latents = self._source(options)
        validation = latents[: cfg.validation_latents] if latents else None

        params = MonotoneCdfParams.initialize(n_cdf, c_l, alphabet, options["depth"], options["seed"])
        trainer = CompetitionTrainer(params, cfg)
        best, report = trainer.fit(source, options["steps"], validation, progress=self.progress)

        stored = best.as_stored()
        tables = freeze(stored)
        out = Path(options["out"])
        params_path = out.with_suffix(".cpm")
        report_path = Path(options["report"]) if options.get("report") else out.with_suffix(".txt")
        save_tables(tables, out)
        save_params(stored, params_path)
        report.write(report_path)

        self.emit(f"priors {n_cdf}, channels {c_l}, alphabet [{alphabet.y_min}, {alphabet.y_max}]")
        self.emit(f"best validation rate {report.best_rate:.4f} bits/symbol at step {report.best_step}")
        self.emit(f"final validation rate {report.final_rate:.4f} bits/symbol, {trainer.state.revivals} revivals")
        self.emit(f"model {tables_digest(tables).hex()}")
        self.emit(f"wrote {out} ({format_size(out.stat().st_size)}), {params_path}, {report_path}",
                  self.style.SUCCESS)

