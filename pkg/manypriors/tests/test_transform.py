from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from pydantic import ValidationError

from manypriors.exceptions import UsageError
from manypriors.helpers.netpbm import read_netpbm
from manypriors.services.bench import psnr
from manypriors.services.probability_model import SymbolAlphabet
from manypriors.services.transform import (
    LUMA_WEIGHTS,
    LatentPool,
    PlanePolicy,
    QuantizedLatent,
    RegimePmf,
    SyntheticSource,
    SyntheticSourceSpec,
    TransformConfig,
    analyze,
    clamp_to_alphabet,
    dequantize,
    latent_shape,
    quantize,
    sample_synthetic,
    separated_regimes,
    synthesize,
)

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def smooth_image(height, width, seed=0):
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:height, 0:width] / 16.0
    image = 0.5 + 0.2 * np.sin(x + rng.random()) * np.cos(0.7 * y)
    return np.clip(image, 0.0, 1.0)


class BlockTransformTests(SimpleTestCase):
    def test_latent_shape_rounds_up(self):
        self.assertEqual(latent_shape(40, 50), (3, 4))
        self.assertEqual(latent_shape(32, 16), (2, 1))
        self.assertEqual(analyze(smooth_image(40, 50)).shape, (256, 3, 4))

    def test_transform_preserves_energy(self):
        image = smooth_image(32, 48)
        latent = analyze(image)
        self.assertAlmostEqual(float(np.sum(latent ** 2)), float(np.sum(image ** 2)), places=8)

    def test_constant_block_lands_in_channel_zero(self):
        latent = analyze(np.full((16, 16), 0.5))
        self.assertAlmostEqual(float(latent[0, 0, 0]), 8.0, places=10)
        self.assertLess(float(np.max(np.abs(latent[1:]))), 1e-12)

    def test_channel_index_is_vertical_then_horizontal_frequency(self):
        ramp = np.linspace(0.0, 1.0, 16)
        varies_down = analyze(np.repeat(ramp[:, None], 16, axis=1))[:, 0, 0].reshape(16, 16)
        varies_across = analyze(np.repeat(ramp[None, :], 16, axis=0))[:, 0, 0].reshape(16, 16)
        self.assertLess(float(np.max(np.abs(varies_down[:, 1:]))), 1e-12)
        self.assertLess(float(np.max(np.abs(varies_across[1:, :]))), 1e-12)
        self.assertGreater(abs(float(varies_down[1, 0])), 0.1)
        self.assertGreater(abs(float(varies_across[0, 1])), 0.1)

    def test_fine_quantization_reconstructs_the_image(self):
        image = smooth_image(40, 37)
        latent = quantize(analyze(image), 1e-6)
        restored = synthesize(latent, 1e-6, shape=image.shape)
        self.assertEqual(restored.shape, image.shape)
        self.assertLess(float(np.max(np.abs(restored - image))), 1e-4)

    def test_synthesis_clips_to_unit_range(self):
        symbols = np.zeros((256, 1, 1), dtype=np.int32)
        symbols[0] = 1000
        restored = synthesize(QuantizedLatent(symbols), 0.1)
        self.assertTrue(np.all(restored == 1.0))

    def test_luma_policy_uses_bt601_weights(self):
        rgb = np.stack([smooth_image(32, 32, s) for s in range(3)], axis=-1)
        np.testing.assert_allclose(analyze(rgb), analyze(rgb @ LUMA_WEIGHTS), atol=1e-12)

    def test_independent_planes_stack_along_rows(self):
        rgb = np.stack([smooth_image(32, 32, s) for s in range(3)], axis=-1)
        cfg = TransformConfig(delta=1e-6, planes=PlanePolicy.PLANES)
        latent = analyze(rgb, cfg)
        self.assertEqual(latent.shape, (256, 6, 2))
        np.testing.assert_allclose(latent[:, 2:4], analyze(rgb[..., 1]), atol=1e-12)
        restored = synthesize(quantize(latent, 1e-6), 1e-6, cfg, (32, 32))
        self.assertEqual(restored.shape, (32, 32, 3))
        self.assertLess(float(np.max(np.abs(restored - rgb))), 1e-4)

    def test_plane_mode_needs_colour(self):
        with self.assertRaises(UsageError):
            analyze(smooth_image(16, 16), TransformConfig(planes=PlanePolicy.PLANES))

    def test_empty_image_is_rejected(self):
        with self.assertRaises(UsageError):
            analyze(np.zeros((0, 0)))

    def test_delta_must_be_positive(self):
        with self.assertRaises(ValidationError):
            TransformConfig(delta=0.0)
        with self.assertRaises(UsageError):
            quantize(np.zeros((1, 1, 1)), -0.1)


class QuantizerTests(SimpleTestCase):
    def test_rounds_half_away_from_zero(self):
        values = np.array([-1.5, -0.25, -0.2, 0.0, 0.2, 0.25, 0.74, 1.25]).reshape(1, 1, -1)
        symbols = quantize(values, 0.5).symbols.ravel()
        np.testing.assert_array_equal(symbols, [-3, -1, 0, 0, 0, 1, 1, 3])

    def test_dequantize_scales_symbols(self):
        latent = QuantizedLatent(np.array([[[-2, 0, 3]]], dtype=np.int32))
        np.testing.assert_allclose(dequantize(latent, 0.25), [[[-0.5, 0.0, 0.75]]])

    def test_latent_rejects_non_integer_symbols(self):
        with self.assertRaises(UsageError):
            QuantizedLatent(np.zeros((1, 2, 2)))
        with self.assertRaises(UsageError):
            QuantizedLatent(np.zeros((2, 2), dtype=np.int32))

    def test_flat_is_row_major_over_locations(self):
        latent = QuantizedLatent(np.arange(12, dtype=np.int32).reshape(2, 2, 3))
        self.assertEqual(latent.flat().shape, (2, 6))
        self.assertEqual(int(latent.flat()[1, 4]), int(latent.symbols[1, 1, 1]))

    def test_reconstruction_error_is_at_most_half_a_step(self):
        rng = np.random.default_rng(4)
        values = rng.normal(0.0, 5.0, size=(16, 8, 8))
        for delta in (0.01, 0.1, 0.37, 2.0):
            error = np.abs(dequantize(quantize(values, delta), delta) - values)
            self.assertLessEqual(float(error.max()), delta / 2 + 1e-9)

    def test_psnr_falls_as_the_step_grows(self):
        image = read_netpbm(FIXTURES / "texture.pgm")
        quality = []
        for delta in (0.05, 0.1, 0.2, 0.4):
            reconstruction = synthesize(quantize(analyze(image), delta), delta, shape=image.shape)
            quality.append(psnr(image, reconstruction))
        self.assertEqual(quality, sorted(quality, reverse=True))
        self.assertGreater(quality[0], quality[-1])

    def test_clamp_reports_clamped_symbols(self):
        latent = QuantizedLatent(np.array([[[-7, 0, 2, 9]]], dtype=np.int32))
        clamped, count = clamp_to_alphabet(latent, SymbolAlphabet(-3, 4))
        np.testing.assert_array_equal(clamped.symbols.ravel(), [-3, 0, 2, 4])
        self.assertEqual(count, 2)


class SyntheticSourceTests(SimpleTestCase):
    def setUp(self):
        self.spec = SyntheticSourceSpec(
            regimes=[
                [RegimePmf(offset=-1, probs=[0.25, 0.5, 0.25]), RegimePmf(offset=0, probs=[1.0])],
                [RegimePmf(offset=4, probs=[0.5, 0.5]), RegimePmf(offset=-3, probs=[0.25] * 4)],
            ],
            seed=3,
        )

    def test_pmf_validation(self):
        with self.assertRaises(ValidationError):
            RegimePmf(offset=0, probs=[0.5, 0.4])
        with self.assertRaises(ValidationError):
            RegimePmf(offset=0, probs=[1.5, -0.5])

    def test_entropies(self):
        self.assertAlmostEqual(RegimePmf(offset=0, probs=[0.25] * 4).entropy, 2.0)
        self.assertEqual(RegimePmf(offset=5, probs=[1.0]).entropy, 0.0)

    def test_regimes_need_matching_channels(self):
        with self.assertRaises(ValidationError):
            SyntheticSourceSpec(regimes=[[RegimePmf(offset=0, probs=[1.0])], []])

    def test_default_layout_is_striped(self):
        labels = self.spec.labels(3, 4)
        np.testing.assert_array_equal(labels, np.indices((3, 4)).sum(axis=0) % 2)

    def test_explicit_layout_is_tiled(self):
        spec = self.spec.model_copy(update={"layout": [[0, 1, 1]]})
        np.testing.assert_array_equal(spec.labels(2, 5), [[0, 1, 1, 0, 1], [0, 1, 1, 0, 1]])

    def test_samples_follow_their_regime(self):
        sample = sample_synthetic(self.spec, 8, 8, np.random.default_rng(0))
        symbols, labels = sample.latent.symbols, sample.labels
        self.assertTrue(np.all(np.isin(symbols[0][labels == 0], [-1, 0, 1])))
        self.assertTrue(np.all(symbols[1][labels == 0] == 0))
        self.assertTrue(np.all(np.isin(symbols[0][labels == 1], [4, 5])))
        self.assertTrue(np.all(np.isin(symbols[1][labels == 1], [-3, -2, -1, 0])))
        np.testing.assert_allclose(sample.entropy[labels == 0], 1.5)
        np.testing.assert_allclose(sample.entropy[labels == 1], 3.0)
        self.assertEqual(self.spec.support(), (-3, 5))

    def test_symbol_frequencies_match_the_pmf(self):
        probs = np.array([0.1, 0.2, 0.3, 0.4])
        spec = SyntheticSourceSpec(regimes=[[RegimePmf(offset=-1, probs=probs.tolist())]])
        symbols = sample_synthetic(spec, 1000, 1000, np.random.default_rng(5)).latent.symbols.ravel()
        counts = np.bincount(symbols + 1, minlength=4)
        n = symbols.size
        sigma = np.sqrt(n * probs * (1 - probs))
        self.assertEqual(int(counts.sum()), 1_000_000)
        self.assertTrue(np.all(np.abs(counts - n * probs) <= 3 * sigma), counts)

    def test_sampling_is_seeded(self):
        a = sample_synthetic(self.spec, 6, 6).latent.symbols
        b = sample_synthetic(self.spec, 6, 6).latent.symbols
        np.testing.assert_array_equal(a, b)

    def test_separated_regimes(self):
        spec = separated_regimes(4, 3)
        self.assertEqual((spec.n_regimes, spec.c_l), (4, 3))
        centers = [regime[0].offset + 6 for regime in spec.regimes]
        self.assertEqual(centers, sorted(set(centers)))
        self.assertTrue(all(b - a >= 6 for a, b in zip(centers, centers[1:])))
        with self.assertRaises(UsageError):
            separated_regimes(0, 3)

    def test_sources(self):
        rng = np.random.default_rng(1)
        latent = SyntheticSource(self.spec, 4, 5).draw(rng)
        self.assertEqual(latent.shape, (2, 4, 5))
        pool = LatentPool([latent])
        self.assertIs(pool.draw(rng), latent)
        with self.assertRaises(UsageError):
            LatentPool([])
