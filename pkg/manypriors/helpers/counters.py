from dataclasses import dataclass


@dataclass
class LookupCounter:
    """Memory-lookup tallies collected along the real encode/decode path."""

    index_lookups: int = 0
    cdf_gathers: int = 0
    symbols: int = 0
