from unittest import mock

import numpy as np
from django.test import SimpleTestCase, tag

from manypriors.exceptions import (
    AlphabetError,
    NonFiniteLossError,
    TrainingDivergedError,
    UsageError,
)
from manypriors.helpers.counters import LookupCounter
from manypriors.services.competition import (
    CompetitionTrainer,
    PriorIndexMap,
    TrainerConfig,
    TrainingReport,
    ValidationResult,
    assign_priors,
    location_bitcost,
    select_priors,
)
from manypriors.services.probability_model import (
    MonotoneCdfParams,
    SymbolAlphabet,
    freeze,
    symbol_bitcost,
    table_bitcost,
)
from manypriors.services.transform import (
    LatentPool,
    QuantizedLatent,
    RegimePmf,
    SyntheticSource,
    SyntheticSourceSpec,
    sample_synthetic,
    separated_regimes,
)

ALPHABET = SymbolAlphabet(-6, 6)


def random_latent(rng, c_l, h_l, w_l, low=-3, high=3):
    return QuantizedLatent(rng.integers(low, high + 1, size=(c_l, h_l, w_l)).astype(np.int32))


def with_duplicates(n_cdf, c_l, copies, seed=0):
    """Priors listed in `copies` become exact copies of prior 0, so they tie and never win."""
    params = MonotoneCdfParams.initialize(n_cdf, c_l, ALPHABET, seed=seed)
    for prior in copies:
        params.weights[prior] = params.weights[0]
        params.biases[prior] = params.biases[0]
        params.gates[prior] = params.gates[0]
    return params


def regime_agreement(labels, idx, n_regimes):
    mapping = np.array([np.bincount(idx[labels == r], minlength=n_regimes).argmax() for r in range(n_regimes)])
    if len(set(mapping.tolist())) != n_regimes:
        return 0.0
    return float(np.mean(mapping[labels] == idx))


class AssignmentTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.params = MonotoneCdfParams.initialize(5, 3, ALPHABET, seed=4)
        self.params.biases += self.rng.normal(0.0, 0.5, size=self.params.biases.shape)
        self.latent = random_latent(self.rng, 3, 4, 5)

    def test_half_mass_symbol_costs_one_bit(self):
        params = MonotoneCdfParams(np.full((1, 1, 1), 1000.0), np.full((1, 1, 1), -500.0),
                                   np.zeros((1, 1, 0)), SymbolAlphabet(-2, 2))
        latent = QuantizedLatent(np.zeros((1, 1, 1), dtype=np.int32))
        self.assertAlmostEqual(location_bitcost(params, latent, 0, 0, 0), 1.0, places=9)

    def test_location_cost_is_sum_over_channels(self):
        for prior in range(5):
            expected = sum(symbol_bitcost(self.params, prior, c, int(self.latent.symbols[c, 2, 3])) for c in range(3))
            self.assertAlmostEqual(location_bitcost(self.params, self.latent, 2, 3, prior), expected, places=10)

    def test_location_outside_grid_is_rejected(self):
        with self.assertRaises(UsageError):
            location_bitcost(self.params, self.latent, 4, 0, 0)

    def test_assignment_matches_brute_force(self):
        index_map, total = assign_priors(self.params, self.latent)
        expected_total = 0.0
        for k in range(4):
            for l in range(5):
                costs = [location_bitcost(self.params, self.latent, k, l, i) for i in range(5)]
                self.assertEqual(index_map.idx[k, l], int(np.argmin(costs)))
                expected_total += min(costs)
        self.assertAlmostEqual(total, expected_total, places=8)

    def test_single_prior_assigns_zero_everywhere(self):
        params = MonotoneCdfParams.initialize(1, 3, ALPHABET)
        index_map, _ = assign_priors(params, self.latent)
        self.assertTrue(np.all(index_map.idx == 0))

    def test_ties_go_to_the_smaller_index(self):
        params = with_duplicates(3, 3, copies=[2])
        index_map, _ = assign_priors(params, self.latent)
        self.assertNotIn(2, index_map.idx)

    def test_channel_mismatch_is_rejected(self):
        with self.assertRaises(UsageError):
            assign_priors(self.params, random_latent(self.rng, 2, 2, 2))

    def test_index_map_validation(self):
        with self.assertRaises(UsageError):
            PriorIndexMap(np.array([[0, 3]]), n_cdf=3)
        usage = PriorIndexMap(np.array([[0, 2], [2, 2]]), n_cdf=4).usage()
        np.testing.assert_array_equal(usage, [1, 0, 3, 0])


class TableSelectionTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(1)
        params = MonotoneCdfParams.initialize(4, 3, ALPHABET, seed=2)
        params.biases += rng.normal(0.0, 0.5, size=params.biases.shape)
        self.tables = freeze(params)
        self.latent = random_latent(rng, 3, 3, 4, -6, 6)

    def test_selection_matches_brute_force_and_counts_lookups(self):
        counter = LookupCounter()
        index_map, total = select_priors(self.tables, self.latent, counter)
        self.assertEqual(counter.index_lookups, 3 * 4 * 3 * 4)
        expected_total = 0.0
        for k in range(3):
            for l in range(4):
                column = self.latent.symbols[:, k, l]
                costs = [sum(float(table_bitcost(self.tables, i, c, column[c])) for c in range(3)) for i in range(4)]
                self.assertEqual(index_map.idx[k, l], int(np.argmin(costs)))
                expected_total += min(costs)
        self.assertAlmostEqual(total, expected_total, places=8)

    def test_out_of_alphabet_symbol_is_located(self):
        symbols = self.latent.symbols.copy()
        symbols[2, 1, 3] = 7
        with self.assertRaises(AlphabetError) as caught:
            select_priors(self.tables, QuantizedLatent(symbols))
        self.assertEqual(caught.exception.position, (2, 1, 3))


class TrainStepTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(5)
        self.latent = random_latent(self.rng, 2, 4, 4)

    def test_losing_prior_is_untouched(self):
        params = with_duplicates(3, 2, copies=[2])
        trainer = CompetitionTrainer(params)
        result = trainer.train_step(self.latent)
        self.assertNotIn(2, result.winners)
        np.testing.assert_array_equal(trainer.params.weights[2], params.weights[2])
        np.testing.assert_array_equal(trainer.params.biases[2], params.biases[2])
        np.testing.assert_array_equal(trainer.params.gates[2], params.gates[2])
        for prior in np.unique(result.winners):
            self.assertFalse(np.array_equal(trainer.params.biases[prior], params.biases[prior]))
        self.assertEqual(trainer.state.step, 1)
        self.assertEqual(trainer.state.last_used[2], 0)

    def test_caller_parameters_are_not_modified(self):
        params = MonotoneCdfParams.initialize(2, 2, ALPHABET)
        before = params.copy()
        CompetitionTrainer(params).train_step(self.latent)
        np.testing.assert_array_equal(params.biases, before.biases)

    def test_non_finite_loss_names_prior_and_channel(self):
        params = MonotoneCdfParams.initialize(2, 2, ALPHABET)
        params.weights[0, 1, :] = np.nan
        with self.assertRaises(NonFiniteLossError) as caught:
            CompetitionTrainer(params).train_step(self.latent)
        self.assertEqual((caught.exception.prior, caught.exception.channel), (0, 1))

    def test_empty_latent_is_rejected(self):
        trainer = CompetitionTrainer(MonotoneCdfParams.initialize(2, 2, ALPHABET))
        with self.assertRaises(UsageError):
            trainer.train_step(QuantizedLatent(np.zeros((2, 0, 0), dtype=np.int32)))

    def test_single_prior_rate_decreases(self):
        spec = separated_regimes(1, 2)
        source = SyntheticSource(spec, 8, 8)
        trainer = CompetitionTrainer(MonotoneCdfParams.initialize(1, 2, SymbolAlphabet(-8, 8)))
        rng = np.random.default_rng(0)
        losses = [trainer.train_step(source.draw(rng)).loss for _ in range(1000)]
        self.assertLess(np.mean(losses[-100:]), np.mean(losses[:100]))


class RevivalTests(SimpleTestCase):
    def setUp(self):
        self.latent = random_latent(np.random.default_rng(6), 2, 4, 4)

    def test_nothing_happens_while_priors_are_alive(self):
        params = with_duplicates(4, 2, copies=[1, 2, 3])
        trainer = CompetitionTrainer(params)
        self.assertEqual(trainer.revive_dead_priors(self.latent), [])
        np.testing.assert_array_equal(trainer.params.biases, params.biases)

    def test_dead_priors_take_over_expensive_locations(self):
        params = with_duplicates(4, 2, copies=[1, 2, 3])
        trainer = CompetitionTrainer(params)
        trainer.state.step = 50
        revived = trainer.revive_dead_priors(self.latent)
        self.assertEqual(revived, [1, 2, 3])
        self.assertEqual(trainer.state.last_used[3], 50)
        self.assertEqual(trainer.state.revivals, 3)
        self.assertFalse(np.array_equal(trainer.params.biases[3], params.biases[3]))
        np.testing.assert_array_equal(trainer.params.biases[0], params.biases[0])

    def test_train_step_revives_after_fifty_idle_steps(self):
        trainer = CompetitionTrainer(with_duplicates(4, 2, copies=[1, 2, 3]), TrainerConfig(revive_top_k=16))
        trainer.state.step = 50
        result = trainer.train_step(self.latent)
        self.assertIn(3, result.revived)
        self.assertEqual(trainer.state.last_used[3], 50)
        self.assertIn(3, result.winners)

    def test_revival_is_seeded(self):
        picks = []
        for _ in range(2):
            trainer = CompetitionTrainer(with_duplicates(4, 2, copies=[1, 2, 3]), TrainerConfig(seed=9))
            trainer.state.step = 50
            picks.append(trainer.train_step(self.latent).winners)
        np.testing.assert_array_equal(picks[0], picks[1])

    @tag("slow")
    def test_no_prior_idles_longer_than_the_revival_window(self):
        spec = SyntheticSourceSpec(regimes=[[RegimePmf(offset=-2, probs=[0.1, 0.2, 0.4, 0.2, 0.1])]])
        source = SyntheticSource(spec, 4, 4)
        cfg = TrainerConfig(seed=1)
        trainer = CompetitionTrainer(MonotoneCdfParams.initialize(4, 1, SymbolAlphabet(-4, 4)), cfg)
        rng = np.random.default_rng(2)
        worst = 0
        for _ in range(10_000):
            trainer.train_step(source.draw(rng))
            worst = max(worst, int(np.max(trainer.state.step - 1 - trainer.state.last_used)))
        self.assertLess(worst, cfg.revive_after)


class FitTests(SimpleTestCase):
    def setUp(self):
        self.source = LatentPool([random_latent(np.random.default_rng(7), 2, 4, 4)])
        self.params = MonotoneCdfParams.initialize(2, 2, ALPHABET)

    def test_learning_rate_decays_after_two_flat_tests(self):
        trainer = CompetitionTrainer(self.params, TrainerConfig(eval_every=1))
        rates = [ValidationResult(r, 2) for r in (1.0, 0.9, 0.95, 0.97)]
        with mock.patch.object(CompetitionTrainer, "validate", side_effect=rates):
            _, report = trainer.fit(self.source, 3, validation=[self.source.latents[0]])
        self.assertEqual(trainer.state.lr, 0.001 * 0.99)
        self.assertEqual(report.best_step, 1)
        self.assertEqual(len(report.records), 4)

    def test_divergence_aborts(self):
        trainer = CompetitionTrainer(self.params, TrainerConfig(eval_every=1))
        rates = [ValidationResult(r, 2) for r in (1.0, 2.5, 2.5, 2.5)]
        with mock.patch.object(CompetitionTrainer, "validate", side_effect=rates):
            with self.assertRaises(TrainingDivergedError):
                trainer.fit(self.source, 3, validation=[self.source.latents[0]])

    def test_steps_must_be_positive(self):
        with self.assertRaises(UsageError):
            CompetitionTrainer(self.params).fit(self.source, 0)

    def test_report_lines(self):
        _, report = CompetitionTrainer(self.params, TrainerConfig(eval_every=5)).fit(self.source, 12)
        self.assertIsInstance(report, TrainingReport)
        lines = report.lines()
        self.assertTrue(lines[0].startswith("#"))
        self.assertEqual([int(line.split()[0]) for line in lines[1:]], [0, 5, 10, 12])
        self.assertTrue(all(len(line.split()) == 5 for line in lines[1:]))

    def test_seeded_runs_are_identical(self):
        spec = separated_regimes(2, 2)
        runs = []
        for _ in range(2):
            trainer = CompetitionTrainer(MonotoneCdfParams.initialize(3, 2, SymbolAlphabet(-11, 11), seed=3),
                                         TrainerConfig(eval_every=10, seed=4))
            best, _ = trainer.fit(SyntheticSource(spec, 4, 4), 25)
            runs.append(trainer.params)
        np.testing.assert_array_equal(runs[0].weights, runs[1].weights)
        np.testing.assert_array_equal(runs[0].biases, runs[1].biases)
        np.testing.assert_array_equal(runs[0].gates, runs[1].gates)


@tag("slow")
class ConvergenceTests(SimpleTestCase):
    def test_uniform_source_reaches_its_entropy(self):
        spec = SyntheticSourceSpec(regimes=[[RegimePmf(offset=0, probs=[0.125] * 8)] * 4])
        params = MonotoneCdfParams.initialize(1, 4, SymbolAlphabet.covering([0, 7]))
        _, report = CompetitionTrainer(params, TrainerConfig(seed=0)).fit(SyntheticSource(spec, 16, 16), 50_000)
        self.assertAlmostEqual(report.best_rate, 3.0, delta=0.1)

    def test_competing_priors_specialize_on_regimes(self):
        spec = separated_regimes(4, 2, seed=0)
        source = SyntheticSource(spec, 16, 16)
        alphabet = SymbolAlphabet.covering(list(spec.support()))
        cfg = TrainerConfig(learning_rate=0.01, eval_every=500, seed=0)
        held_out = [sample_synthetic(spec, 16, 16, np.random.default_rng(100 + i)) for i in range(4)]
        validation = [sample.latent for sample in held_out]

        many, many_report = CompetitionTrainer(
            MonotoneCdfParams.initialize(4, 2, alphabet, seed=0), cfg
        ).fit(source, 4000, validation)
        _, single_report = CompetitionTrainer(
            MonotoneCdfParams.initialize(1, 2, alphabet, seed=0), cfg
        ).fit(source, 4000, validation)

        for sample in held_out:
            index_map, _ = assign_priors(many, sample.latent)
            self.assertGreaterEqual(regime_agreement(sample.labels, index_map.idx, 4), 0.95)
        oracle = np.mean([sample.entropy.mean() for sample in held_out]) / spec.c_l
        self.assertLessEqual(many_report.best_rate, oracle + 0.15)
        self.assertLessEqual(many_report.best_rate, single_report.best_rate - 0.3)
