"""
Competition of priors.

Every latent location is coded with the prior whose CDFs give it the smallest
total bitcost. Training is winner-take-all: a location's gradient flows only
into the parameters of the prior that won it, so priors specialize on the
regions they describe best. Priors that stop winning are revived by handing
them one of the batch's most expensive locations.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from pydantic import BaseModel, Field
from tqdm import tqdm

from ..exceptions import AlphabetError, NonFiniteLossError, TrainingDivergedError, UsageError
from ..helpers.counters import LookupCounter
from .probability_model import (
    CdfTableSet,
    CpmGradient,
    MonotoneCdfParams,
    channel_bitcosts,
    check_pair,
    interval_bits,
)
from .transform import LatentSource, QuantizedLatent

logger = logging.getLogger(__name__)

# Upper bound on n_cdf * c_l * locations evaluated at once.
_CHUNK_ELEMENTS = 1 << 20


@dataclass
class PriorIndexMap:
    """Winning prior of every latent location, shaped (h_l, w_l)."""

    idx: np.ndarray
    n_cdf: int

    def __post_init__(self):
        self.idx = np.asarray(self.idx)
        if self.idx.ndim != 2:
            raise UsageError(f"index map must be 2-D, got shape {self.idx.shape}")
        if self.n_cdf < 1:
            raise UsageError("n_cdf must be >= 1")
        if self.idx.size and (self.idx.min() < 0 or self.idx.max() >= self.n_cdf):
            raise UsageError(f"prior indices must lie in [0, {self.n_cdf})")

    @property
    def h_l(self) -> int:
        return self.idx.shape[0]

    @property
    def w_l(self) -> int:
        return self.idx.shape[1]

    def flat(self) -> np.ndarray:
        return self.idx.reshape(-1)

    def usage(self) -> np.ndarray:
        """Number of locations won by each prior."""
        return np.bincount(self.flat(), minlength=self.n_cdf)


def _chunk(n_cdf: int, c_l: int) -> int:
    return max(1, _CHUNK_ELEMENTS // (n_cdf * c_l))


def _check_latent(latent: QuantizedLatent, c_l: int):
    if latent.c_l != c_l:
        raise UsageError(f"latent has {latent.c_l} channels, the model has {c_l}")


def location_costs(params: MonotoneCdfParams, symbols: np.ndarray) -> np.ndarray:
    """Continuous bitcost of every location (columns of `symbols`) under every prior: (n_cdf, m)."""
    m = symbols.shape[1]
    costs = np.empty((params.n_cdf, m))
    step = _chunk(params.n_cdf, params.c_l)
    for start in range(0, m, step):
        stop = min(start + step, m)
        costs[:, start:stop] = channel_bitcosts(params, symbols[:, start:stop]).sum(axis=1)
    return costs


def location_bitcost(params: MonotoneCdfParams, latent: QuantizedLatent, k: int, l: int, prior: int) -> float:
    check_pair(params, prior, 0)
    _check_latent(latent, params.c_l)
    if not (0 <= k < latent.h_l and 0 <= l < latent.w_l):
        raise UsageError(f"location ({k}, {l}) outside the {latent.h_l} x {latent.w_l} latent")
    bits, _ = interval_bits(
        params.weights[prior], params.biases[prior], params.gates[prior], latent.symbols[:, k, l]
    )
    return float(bits.sum())


def _argmin_map(costs: np.ndarray, latent: QuantizedLatent, n_cdf: int) -> tuple[PriorIndexMap, float]:
    # argmin returns the first minimum, so ties go to the smallest prior index.
    winners = np.argmin(costs, axis=0)
    total = float(costs[winners, np.arange(costs.shape[1])].sum())
    return PriorIndexMap(winners.reshape(latent.h_l, latent.w_l), n_cdf), total


def assign_priors(params: MonotoneCdfParams, latent: QuantizedLatent) -> tuple[PriorIndexMap, float]:
    """Per-location argmin of the continuous bitcost, with the total bits of the winners."""
    _check_latent(latent, params.c_l)
    if latent.h_l * latent.w_l == 0:
        return PriorIndexMap(np.zeros((latent.h_l, latent.w_l), dtype=np.int64), params.n_cdf), 0.0
    return _argmin_map(location_costs(params, latent.flat()), latent, params.n_cdf)


def check_alphabet(tables: CdfTableSet, latent: QuantizedLatent):
    inside = tables.alphabet.contains(latent.symbols)
    if not inside.all():
        c, k, l = (int(v) for v in np.argwhere(~inside)[0])
        raise AlphabetError(
            f"symbol {int(latent.symbols[c, k, l])} at (c={c}, k={k}, l={l}) is outside "
            f"the alphabet [{tables.alphabet.y_min}, {tables.alphabet.y_max}]",
            (c, k, l),
        )


def select_priors(tables: CdfTableSet, latent: QuantizedLatent,
                  counter: LookupCounter | None = None) -> tuple[PriorIndexMap, float]:
    """
    Encoder-side prior selection on the frozen tables: every location looks up
    the fixed-point bitcost of each of its symbols in every prior and keeps the
    cheapest prior.
    """
    _check_latent(latent, tables.c_l)
    check_alphabet(tables, latent)
    m = latent.h_l * latent.w_l
    if m == 0:
        return PriorIndexMap(np.zeros((latent.h_l, latent.w_l), dtype=np.int64), tables.n_cdf), 0.0

    offsets = latent.flat() - tables.alphabet.y_min
    channels = np.arange(tables.c_l)[:, None]
    costs = np.empty((tables.n_cdf, m))
    step = _chunk(tables.n_cdf, tables.c_l)
    for start in range(0, m, step):
        stop = min(start + step, m)
        costs[:, start:stop] = tables.bitcosts[:, channels, offsets[:, start:stop]].sum(axis=1)
    if counter is not None:
        counter.index_lookups += tables.n_cdf * tables.c_l * m
    return _argmin_map(costs, latent, tables.n_cdf)


def inference_rate(params: MonotoneCdfParams, latents: Sequence[QuantizedLatent]) -> tuple[float, int]:
    """Mean bits per symbol under argmin assignment, and the number of priors that won anything."""
    bits, symbols = 0.0, 0
    used = np.zeros(params.n_cdf, dtype=bool)
    for latent in latents:
        index_map, total = assign_priors(params, latent)
        bits += total
        symbols += latent.symbols.size
        used |= index_map.usage() > 0
    if symbols == 0:
        raise UsageError("validation set holds no symbols")
    return bits / symbols, int(used.sum())


# Training


class TrainerConfig(BaseModel):
    learning_rate: float = Field(0.001, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    eval_every: int = Field(2500, ge=1)
    lr_decay: float = Field(0.99, gt=0, le=1)
    patience: int = Field(2, ge=1)
    revive_after: int = Field(50, ge=1)
    revive_top_k: int = Field(8, ge=1)
    divergence_factor: float = Field(2.0, gt=1)
    divergence_patience: int = Field(3, ge=1)
    validation_latents: int = Field(4, ge=1)
    seed: int = 0


@dataclass
class ValidationResult:
    rate: float
    priors_in_use: int


@dataclass
class EvalRecord:
    step: int
    rate: float
    lr: float
    priors_in_use: int
    revivals: int

    def line(self) -> str:
        return f"{self.step} {self.rate:.6f} {self.lr:.6g} {self.priors_in_use} {self.revivals}"


@dataclass
class TrainingReport:
    records: list[EvalRecord]
    best_step: int
    best_rate: float

    HEADER = "# step rate_bits_per_symbol lr priors_in_use revivals"

    @property
    def final_rate(self) -> float:
        return self.records[-1].rate

    def lines(self) -> list[str]:
        return [self.HEADER] + [record.line() for record in self.records]

    def write(self, path):
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")


@dataclass
class StepResult:
    loss: float  # bits per symbol of the trained assignment
    winners: np.ndarray
    revived: list[int]


@dataclass
class TrainerState:
    step: int
    lr: float
    last_used: np.ndarray
    first_moment: CpmGradient
    second_moment: CpmGradient
    pair_updates: np.ndarray
    rng: np.random.Generator
    plateau: int = 0
    diverging: int = 0
    revivals: int = 0
    initial_rate: float | None = None
    best_rate: float = np.inf
    best_step: int = 0
    history: list[EvalRecord] = field(default_factory=list)

    @classmethod
    def initial(cls, params: MonotoneCdfParams, cfg: TrainerConfig) -> "TrainerState":
        return cls(
            step=0,
            lr=cfg.learning_rate,
            last_used=np.zeros(params.n_cdf, dtype=np.int64),
            first_moment=CpmGradient.zeros_like(params),
            second_moment=CpmGradient.zeros_like(params),
            pair_updates=np.zeros((params.n_cdf, params.c_l), dtype=np.int64),
            rng=np.random.default_rng([cfg.seed, 1]),
        )


class CompetitionTrainer:
    """
    Winner-take-all trainer. Adam is applied lazily: only (prior, channel)
    pairs that received gradient this step move, and their bias correction
    counts their own updates, so losing priors stay bitwise unchanged.
    """

    def __init__(self, params: MonotoneCdfParams, cfg: TrainerConfig | None = None):
        self.cfg = cfg or TrainerConfig()
        self.params = params.copy()
        self.state = TrainerState.initial(self.params, self.cfg)
        self._best = self.params.copy()

    # one step

    def _check_finite(self, costs: np.ndarray, symbols: np.ndarray):
        bad = ~np.isfinite(costs)
        if not bad.any():
            return
        prior, location = (int(v) for v in np.argwhere(bad)[0])
        bits, _ = interval_bits(
            self.params.weights[prior], self.params.biases[prior], self.params.gates[prior], symbols[:, location]
        )
        channels = np.flatnonzero(~np.isfinite(bits))
        channel = int(channels[0]) if channels.size else 0
        raise NonFiniteLossError(
            f"non-finite rate loss at step {self.state.step} from prior {prior}, channel {channel}",
            prior,
            channel,
        )

    def _revive(self, winners: np.ndarray, best_bits: np.ndarray) -> list[int]:
        """Hand each dead prior one of the highest-bitcount locations; edits `winners` in place."""
        state, cfg = self.state, self.cfg
        dead = np.flatnonzero(state.step - state.last_used >= cfg.revive_after)
        dead = dead[~np.isin(dead, winners)]
        if dead.size == 0:
            return []
        pool = np.argsort(-best_bits, kind="stable")[: min(best_bits.size, max(cfg.revive_top_k, dead.size))]
        count = min(dead.size, pool.size)
        if count < dead.size:
            logger.warning("only %d locations to revive %d dead priors", pool.size, dead.size)
        chosen = state.rng.choice(pool, size=count, replace=False)
        revived = [int(prior) for prior in dead[:count]]
        winners[chosen] = revived
        state.revivals += count
        logger.debug("step %d revived priors %s", state.step, revived)
        return revived

    def _gradient(self, symbols: np.ndarray, winners: np.ndarray) -> tuple[float, CpmGradient]:
        c_l, m = symbols.shape
        params = self.params
        bits, (grad_w, grad_b, grad_a) = interval_bits(
            params.weights[winners].transpose(1, 0, 2),
            params.biases[winners].transpose(1, 0, 2),
            params.gates[winners].transpose(1, 0, 2),
            symbols,
            with_grad=True,
        )
        scale = 1.0 / (c_l * m)
        prior = np.broadcast_to(winners[None, :], (c_l, m))
        channel = np.broadcast_to(np.arange(c_l)[:, None], (c_l, m))
        gradient = CpmGradient.zeros_like(params)
        np.add.at(gradient.weights, (prior, channel), grad_w * scale)
        np.add.at(gradient.biases, (prior, channel), grad_b * scale)
        np.add.at(gradient.gates, (prior, channel), grad_a * scale)
        return float(bits.sum() * scale), gradient

    def _adam(self, gradient: CpmGradient, priors: np.ndarray):
        cfg, state = self.cfg, self.state
        touched = np.zeros(state.pair_updates.shape, dtype=bool)
        touched[priors] = True
        state.pair_updates[touched] += 1
        t = state.pair_updates[touched][:, None]
        for name in ("weights", "biases", "gates"):
            param = getattr(self.params, name)
            if param.shape[-1] == 0:
                continue
            g = getattr(gradient, name)[touched]
            m = getattr(state.first_moment, name)
            v = getattr(state.second_moment, name)
            m[touched] = cfg.beta1 * m[touched] + (1.0 - cfg.beta1) * g
            v[touched] = cfg.beta2 * v[touched] + (1.0 - cfg.beta2) * g * g
            m_hat = m[touched] / (1.0 - cfg.beta1 ** t)
            v_hat = v[touched] / (1.0 - cfg.beta2 ** t)
            param[touched] -= state.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)

    def _costs(self, latent: QuantizedLatent) -> tuple[np.ndarray, np.ndarray]:
        _check_latent(latent, self.params.c_l)
        symbols = latent.flat()
        if symbols.shape[1] == 0:
            raise UsageError("cannot train on an empty latent")
        costs = location_costs(self.params, symbols)
        self._check_finite(costs, symbols)
        return symbols, costs

    def train_step(self, latent: QuantizedLatent) -> StepResult:
        symbols, costs = self._costs(latent)
        winners = np.argmin(costs, axis=0)
        best_bits = costs[winners, np.arange(winners.size)]
        revived = self._revive(winners, best_bits)

        loss, gradient = self._gradient(symbols, winners)
        used = np.unique(winners)
        self._adam(gradient, used)
        self.state.last_used[used] = self.state.step
        self.state.step += 1
        return StepResult(loss, winners, revived)

    def revive_dead_priors(self, latent: QuantizedLatent) -> list[int]:
        """
        Revival on its own: dead priors take over top-bitcount locations of
        `latent` and are updated on them. Nothing else moves.
        """
        symbols, costs = self._costs(latent)
        winners = np.argmin(costs, axis=0)
        revived = self._revive(winners, costs[winners, np.arange(winners.size)])
        if not revived:
            return []
        _, gradient = self._gradient(symbols, winners)
        self._adam(gradient, np.asarray(revived))
        self.state.last_used[revived] = self.state.step
        return revived

    # training loop

    def validate(self, latents: Sequence[QuantizedLatent]) -> ValidationResult:
        rate, in_use = inference_rate(self.params, latents)
        return ValidationResult(rate, in_use)

    def _evaluate(self, latents: Sequence[QuantizedLatent], scheduled: bool):
        cfg, state = self.cfg, self.state
        result = self.validate(latents)
        record = EvalRecord(state.step, result.rate, state.lr, result.priors_in_use, state.revivals)
        state.history.append(record)
        logger.info("step %d: %.4f bits/symbol, lr %.3g, %d priors in use",
                    state.step, result.rate, state.lr, result.priors_in_use)

        improved = result.rate < state.best_rate
        if improved:
            state.best_rate = result.rate
            state.best_step = state.step
            self._best = self.params.copy()
        if not scheduled:
            return

        if improved:
            state.plateau = 0
        else:
            state.plateau += 1
            if state.plateau >= cfg.patience:
                state.lr *= cfg.lr_decay
                state.plateau = 0
                logger.info("no improvement in %d tests, learning rate now %.6g", cfg.patience, state.lr)

        if result.rate > cfg.divergence_factor * state.initial_rate:
            state.diverging += 1
            if state.diverging >= cfg.divergence_patience:
                raise TrainingDivergedError(
                    f"validation rate {result.rate:.4f} exceeded {cfg.divergence_factor}x the initial "
                    f"{state.initial_rate:.4f} bits/symbol for {state.diverging} consecutive tests"
                )
        else:
            state.diverging = 0

    def fit(self, source: LatentSource, steps: int,
            validation: Sequence[QuantizedLatent] | None = None,
            progress: bool = False) -> tuple[MonotoneCdfParams, TrainingReport]:
        """
        Train for `steps` steps on latents drawn from `source`, testing every
        `eval_every` steps. Returns the best-validating snapshot and the report.
        """
        if steps < 1:
            raise UsageError("steps must be >= 1")
        cfg, state = self.cfg, self.state
        data_rng = np.random.default_rng([cfg.seed, 0])
        if validation is None:
            held_out = np.random.default_rng([cfg.seed, 2])
            validation = [source.draw(held_out) for _ in range(cfg.validation_latents)]

        if state.initial_rate is None:
            initial = self.validate(validation)
            state.initial_rate = initial.rate
            state.best_rate = initial.rate
            state.best_step = state.step
            self._best = self.params.copy()
            state.history.append(EvalRecord(state.step, initial.rate, state.lr, initial.priors_in_use, 0))

        final = state.step + steps
        for _ in tqdm(range(steps), desc="training", unit="step", disable=not progress):
            self.train_step(source.draw(data_rng))
            if state.step % cfg.eval_every == 0:
                self._evaluate(validation, scheduled=True)
            elif state.step == final:
                self._evaluate(validation, scheduled=False)

        report = TrainingReport(list(state.history), state.best_step, state.best_rate)
        return self._best.copy(), report
