from pathlib import Path

import numpy as np

from ...exceptions import MissingInputError, UsageError
from ...helpers.netpbm import read_netpbm, write_netpbm
from ...services.bench import segmentation_map
from ...services.codec import image_latent, latent_grid
from ...services.coder import decode_indices
from ...services.competition import select_priors
from ...services.container import read_stream
from ...services.probability_model import load_tables
from ...services.transform import PlanePolicy, clamp_to_alphabet
from ._base import CodecCommand


class Command(CodecCommand):
    help = "Paint each 16x16 block with the colour of the prior that codes it (PPM)."

    def add_arguments(self, parser):
        parser.add_argument("--model", required=True, help="Frozen CDF table file (.cdf).")
        parser.add_argument("--image", help="Select priors for this image.")
        parser.add_argument("--stream", help="Read the prior indices from an encoded stream instead.")
        parser.add_argument("--out", required=True, help="PPM file to write.")
        parser.add_argument("--seed", type=int, default=0, help="Palette seed.")
        self.add_delta_arguments(parser)

    def run(self, **options):
        if bool(options.get("image")) == bool(options.get("stream")):
            raise UsageError("choose exactly one of --image or --stream")
        tables = load_tables(options["model"])
        if options.get("stream"):
            path = Path(options["stream"])
            if not path.is_file():
                raise MissingInputError(f"stream not found: {path}")
            header, index_bytes, _ = read_stream(path.read_bytes())
            header.check_model(tables)
            index_map = decode_indices(index_bytes, latent_grid(header)[1:], tables.n_cdf)
        else:
            latent = image_latent(read_netpbm(options["image"]), options["delta"], PlanePolicy(options["planes"]))
            latent, _ = clamp_to_alphabet(latent, tables.alphabet)
            index_map, _ = select_priors(tables, latent)

        out = Path(options["out"])
        write_netpbm(out, segmentation_map(index_map, options["seed"]))
        used = int(np.count_nonzero(index_map.usage()))
        self.emit(f"{index_map.h_l}x{index_map.w_l} locations, {used} of {index_map.n_cdf} priors in use")
        self.emit(f"wrote {out}", self.style.SUCCESS)
