from collections import defaultdict
from contextlib import contextmanager
from time import perf_counter

ENCODE_STAGES = ("transform", "prior-select", "cdf-gather", "entropy-code")


class StageTimer:
    """Accumulates wall-clock seconds per named stage."""

    def __init__(self):
        self.seconds: dict[str, float] = defaultdict(float)

    @contextmanager
    def stage(self, name: str):
        start = perf_counter()
        try:
            yield
        finally:
            self.seconds[name] += perf_counter() - start


@contextmanager
def maybe_stage(timer: StageTimer | None, name: str):
    if timer is None:
        yield
    else:
        with timer.stage(name):
            yield
