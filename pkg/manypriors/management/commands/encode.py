from pathlib import Path

from humanfriendly import format_size

from ...helpers.netpbm import read_netpbm
from ...helpers.timing import StageTimer
from ...services.bench import LookupReport
from ...services.codec import encode_image, latent_grid
from ...services.probability_model import load_tables
from ...services.transform import PlanePolicy
from ._base import CodecCommand


class Command(CodecCommand):
    help = "Encode a PGM/PPM image into a .mprs stream with frozen CDF tables."

    def add_arguments(self, parser):
        parser.add_argument("--image", required=True)
        parser.add_argument("--model", required=True, help="Frozen CDF table file (.cdf).")
        parser.add_argument("--out", required=True, help="Stream to write (.mprs).")
        parser.add_argument("--allow-clamp", action="store_true",
                            help="Clamp symbols outside the model's alphabet instead of failing.")
        self.add_delta_arguments(parser)

    def run(self, **options):
        tables = load_tables(options["model"])
        image = read_netpbm(options["image"])
        timer = StageTimer()
        result = encode_image(image, tables, options["delta"], PlanePolicy(options["planes"]),
                              options["allow_clamp"], timer=timer)
        out = Path(options["out"])
        out.write_bytes(result.stream)

        header = result.header
        self.emit(f"{header.width}x{header.height} -> {len(result.stream)} bytes ({format_size(len(result.stream))})")
        if result.pixels:
            self.emit(f"bpp {result.bpp:.4f} (index side info {result.index_bpp:.5f})")
        if result.clamped:
            self.emit(f"{result.clamped} symbols clamped to the alphabet", self.style.WARNING)
        for stage, seconds in timer.seconds.items():
            self.emit(f"  {stage:<14}{seconds * 1000:10.3f} ms")
        c_l, h_l, w_l = latent_grid(header)
        if h_l * w_l:
            counter = result.counter
            lookups = LookupReport(
                h_l=h_l, w_l=w_l, c_l=c_l, n_cdf=tables.n_cdf,
                encode_index_lookups=counter.index_lookups,
                encode_cdf_gathers=counter.cdf_gathers,
                decode_cdf_gathers=counter.cdf_gathers,
                hp_equivalent_cdf_evals=counter.symbols,
            )
            for line in lookups.lines():
                self.emit(f"  {line}")
        self.emit(f"wrote {out}", self.style.SUCCESS)
