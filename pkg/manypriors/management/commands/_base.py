import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError

from ...exceptions import ManypriorsError, MissingInputError, UsageError
from ...services.competition import TrainerConfig
from ...services.transform import PlanePolicy, SyntheticSourceSpec, separated_regimes

logger = logging.getLogger("manypriors")

IMAGE_SUFFIXES = {".pgm", ".ppm", ".pnm"}


def default(key: str):
    return settings.MANYPRIORS[key]


class CodecCommand(BaseCommand):
    """
    Shared plumbing for the codec commands. Subclasses implement `run()` and
    queue their report with `emit()`; nothing is written unless `run()`
    succeeds. Typed errors leave as CommandError carrying their exit code.
    """

    def handle(self, *args, **options):
        verbosity = options.get("verbosity", 1)
        if verbosity >= 3:
            logger.setLevel(logging.DEBUG)
        elif verbosity >= 2:
            logger.setLevel(logging.INFO)
        self.progress = verbosity >= 2
        self._pending = []
        try:
            self.run(**options)
        except ManypriorsError as error:
            raise CommandError(str(error), returncode=error.exit_code) from error
        except ValidationError as error:
            raise CommandError(f"invalid arguments: {error}", returncode=UsageError.exit_code) from error
        for text, style in self._pending:
            self.stdout.write(style(text) if style else text)

    def run(self, **options):
        raise NotImplementedError

    def emit(self, text: str, style=None):
        self._pending.append((text, style))

    def add_delta_arguments(self, parser):
        parser.add_argument("--delta", type=float, default=default("DELTA"),
                            help="Quantizer step for DCT coefficients (default %(default)s).")
        parser.add_argument("--planes", choices=[p.value for p in PlanePolicy], default=PlanePolicy.LUMA.value,
                            help="Code colour images as luma only or as three independent planes.")

    def add_training_arguments(self, parser):
        parser.add_argument("--steps", type=int, default=default("STEPS"))
        parser.add_argument("--seed", type=int, default=default("SEED"))
        parser.add_argument("--lr", type=float, default=default("LEARNING_RATE"))
        parser.add_argument("--eval-every", type=int, default=default("EVAL_EVERY"))

    def add_source_arguments(self, parser):
        parser.add_argument("--images", nargs="+", help="PGM/PPM files or directories holding them.")
        parser.add_argument("--synthetic-regimes", type=int,
                            help="Train on the built-in synthetic source with this many regimes.")
        parser.add_argument("--source-spec", help="JSON description of a synthetic source.")
        parser.add_argument("--c-l", type=int, default=default("C_L"),
                            help="Channels per location for synthetic sources (images always have 256).")
        parser.add_argument("--grid", type=int, default=16, help="Side of each synthetic latent grid.")

    @staticmethod
    def synthetic_spec(options) -> SyntheticSourceSpec | None:
        if options.get("source_spec"):
            path = Path(options["source_spec"])
            if not path.is_file():
                raise MissingInputError(f"source spec not found: {path}")
            return SyntheticSourceSpec.model_validate_json(path.read_text(encoding="utf-8"))
        if options.get("synthetic_regimes") is not None:
            return separated_regimes(options["synthetic_regimes"], options["c_l"], seed=options["seed"])
        return None

    @staticmethod
    def image_paths(values) -> list[Path]:
        paths = []
        for value in values:
            path = Path(value)
            if path.is_dir():
                paths.extend(sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES))
            elif path.is_file():
                paths.append(path)
            else:
                raise MissingInputError(f"image not found: {path}")
        if not paths:
            raise UsageError("no PGM/PPM images found")
        return paths

    @staticmethod
    def trainer_config(options) -> TrainerConfig:
        return TrainerConfig(
            learning_rate=options["lr"],
            eval_every=options["eval_every"],
            lr_decay=default("LR_DECAY"),
            patience=default("PATIENCE"),
            revive_after=default("REVIVE_AFTER"),
            revive_top_k=default("REVIVE_TOP_K"),
            seed=options["seed"],
        )
