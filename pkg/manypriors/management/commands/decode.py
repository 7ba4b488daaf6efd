from pathlib import Path

from ...exceptions import MissingInputError
from ...helpers.netpbm import write_netpbm
from ...services.codec import decode_stream
from ...services.probability_model import load_tables
from ._base import CodecCommand


class Command(CodecCommand):
    help = "Decode a .mprs stream back into a PGM/PPM image."

    def add_arguments(self, parser):
        parser.add_argument("--stream", required=True)
        parser.add_argument("--model", required=True, help="Frozen CDF table file (.cdf) the stream was coded with.")
        parser.add_argument("--out", required=True, help="Image to write (.pgm for luma, .ppm for planes).")

    def run(self, **options):
        stream = Path(options["stream"])
        if not stream.is_file():
            raise MissingInputError(f"stream not found: {stream}")
        tables = load_tables(options["model"])
        result = decode_stream(stream.read_bytes(), tables)
        out = Path(options["out"])
        write_netpbm(out, result.image)
        self.emit(f"{result.header.width}x{result.header.height} image, delta {result.header.delta:g}")
        self.emit(f"wrote {out}", self.style.SUCCESS)
