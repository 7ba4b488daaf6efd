from pathlib import Path

from ...exceptions import UsageError
from ...services.probability_model import SymbolAlphabet, freeze, load_params, save_tables, tables_digest
from ._base import CodecCommand


class Command(CodecCommand):
    help = "Freeze a saved CPM parameter file (.cpm) into 16-bit CDF tables (.cdf)."

    def add_arguments(self, parser):
        parser.add_argument("--model", required=True, help="CPM parameter file.")
        parser.add_argument("--out", required=True, help="Table file to write.")
        parser.add_argument("--y-min", type=int, help="Override the lowest coded symbol.")
        parser.add_argument("--y-max", type=int, help="Override the highest coded symbol.")

    def run(self, **options):
        params = load_params(options["model"])
        alphabet = params.alphabet
        if options.get("y_min") is not None or options.get("y_max") is not None:
            y_min = alphabet.y_min if options.get("y_min") is None else options["y_min"]
            y_max = alphabet.y_max if options.get("y_max") is None else options["y_max"]
            if y_min > y_max:
                raise UsageError("--y-min must not exceed --y-max")
            alphabet = SymbolAlphabet(y_min, y_max)

        tables = freeze(params, alphabet)
        out = Path(options["out"])
        save_tables(tables, out)
        self.emit(f"{tables.n_cdf} x {tables.c_l} tables over [{alphabet.y_min}, {alphabet.y_max}]")
        self.emit(f"model {tables_digest(tables).hex()}")
        self.emit(f"wrote {out}", self.style.SUCCESS)
