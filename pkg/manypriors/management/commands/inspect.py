from pathlib import Path

from ...services.bench import cdf_dump
from ...services.probability_model import load_tables, tables_digest
from ._base import CodecCommand


class Command(CodecCommand):
    help = "Dump every prior's CDF table as CSV (rows = channels) for plotting."

    def add_arguments(self, parser):
        parser.add_argument("--model", required=True, help="Frozen CDF table file (.cdf).")
        parser.add_argument("--out", required=True, help="Directory for the CSV files.")

    def run(self, **options):
        tables = load_tables(options["model"])
        paths = cdf_dump(tables, options["out"])
        self.emit(f"{tables.n_cdf} priors x {tables.c_l} channels, "
                  f"alphabet [{tables.alphabet.y_min}, {tables.alphabet.y_max}], depth {tables.depth}")
        self.emit(f"model {tables_digest(tables).hex()}")
        self.emit(f"wrote {len(paths)} files to {Path(options['out'])}", self.style.SUCCESS)
