import math
import os
import sys
import unittest

import numpy as np

# Add src directory to Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src import config
from src.analysis import (ObservedCountVector, Provenance, average_error_prob, baseline_error_prob,
                          expected_error_prob, first_hop_means, isi_decompose, relay_budget_estimate,
                          sample_first_hop_realization, second_hop_mean)
from src.channel import SamplingScheme, hit_probability, hit_sums, poisson_tail_below
from src.errors import ConfigError, DomainError, InvalidProtocolError
from src.protocols import AmplificationSchedule, GainModel


class TestFirstHop(unittest.TestCase):

    def setUp(self):
        self.cfg = config.SystemConfig(seq_len=8)

    def means(self, bits, scheme=None):
        return first_hop_means(bits, self.cfg.source_model, self.cfg.first_hop, scheme or self.cfg.scheme)

    def test_all_zero_sequence(self):
        np.testing.assert_array_equal(self.means([0, 0, 0, 0]), np.zeros(4))

    def test_single_bit_single_sample(self):
        scheme = SamplingScheme(400e-6, 1, 20e-6)
        expected = self.cfg.n_a1 * hit_probability(self.cfg.first_hop, 20e-6)
        self.assertAlmostEqual(self.means([1], scheme)[0] / expected, 1.0, places=12)

    def test_earlier_bits_add_isi(self):
        self.assertGreater(self.means([1, 1])[1], self.means([0, 1])[1])
        self.assertGreater(self.means([1, 0])[1], 0.0)

    def test_realization(self):
        counts = sample_first_hop_realization([0.0, 0.0, 1e6], seed=3)
        self.assertEqual(counts.provenance, Provenance.SAMPLED)
        self.assertEqual(counts.counts[0], 0.0)
        self.assertLess(abs(counts.counts[2] - 1e6), 5 * math.sqrt(1e6))
        again = sample_first_hop_realization([0.0, 0.0, 1e6], seed=3)
        np.testing.assert_array_equal(counts.counts, again.counts)

    def test_realization_rejects_bad_means(self):
        with self.assertRaises(DomainError):
            sample_first_hop_realization([1.0, -2.0], seed=1)

    def test_observed_vector_validation(self):
        with self.assertRaises(DomainError):
            ObservedCountVector([1.5, 2.0], Provenance.SAMPLED)
        self.assertEqual(len(ObservedCountVector([1.5, 2.0], Provenance.MEAN)), 2)


class TestSecondHop(unittest.TestCase):

    def setUp(self):
        self.cfg = config.SystemConfig(seq_len=8)
        self.hops = (self.cfg.first_hop, self.cfg.second_hop)

    def test_zero_counts(self):
        self.assertEqual(second_hop_mean(np.zeros(3), 150, self.cfg.second_hop, self.cfg.scheme, 3), 0.0)

    def test_single_interval_single_sample(self):
        scheme = SamplingScheme(400e-6, 1, 20e-6)
        value = second_hop_mean([12], 150, self.cfg.second_hop, scheme, 1)
        self.assertAlmostEqual(value / (150 * 12 * hit_probability(self.cfg.second_hop, 20e-6)), 1.0, places=12)

    def test_linear_in_gains(self):
        counts = [10, 0, 25, 7]
        single = second_hop_mean(counts, [100, 120, 80, 60], self.cfg.second_hop, self.cfg.scheme, 4)
        double = second_hop_mean(counts, [200, 240, 160, 120], self.cfg.second_hop, self.cfg.scheme, 4)
        self.assertAlmostEqual(double / single, 2.0, places=12)

    def test_needs_enough_counts_and_gains(self):
        with self.assertRaises(DomainError):
            second_hop_mean([1, 2], 100, self.cfg.second_hop, self.cfg.scheme, 3)
        with self.assertRaises(DomainError):
            second_hop_mean([1, 2, 3], [100, 100], self.cfg.second_hop, self.cfg.scheme, 3)

    def test_decomposition_of_single_bit(self):
        parts = isi_decompose([1], 150, self.hops, self.cfg.scheme, self.cfg.source_model)
        sr = hit_sums(self.cfg.first_hop, self.cfg.scheme, 1)[0]
        rd = hit_sums(self.cfg.second_hop, self.cfg.scheme, 1)[0]
        self.assertEqual(parts.second_hop_isi, 0.0)
        self.assertEqual(parts.amplified_first_hop_isi, 0.0)
        self.assertAlmostEqual(parts.current_bit_term / (150 * self.cfg.n_a1 * sr * rd), 1.0, places=12)

    def test_decomposition_of_silence(self):
        parts = isi_decompose([0, 0, 0], 150, self.hops, self.cfg.scheme, self.cfg.source_model)
        self.assertEqual(parts.total, 0.0)

    def test_decomposition_sums_to_second_hop_mean(self):
        generator = np.random.default_rng(21)
        source = self.cfg.source_model
        for _ in range(100):
            j = int(generator.integers(1, 9))
            bits = generator.integers(0, 2, j)
            gains = generator.uniform(1.0, 500.0, j)
            scheme = SamplingScheme(float(generator.choice([300e-6, 400e-6, 600e-6])), 10, 20e-6)
            parts = isi_decompose(bits, gains, self.hops, scheme, source)
            means = first_hop_means(bits, source, self.cfg.first_hop, scheme)
            direct = second_hop_mean(means, gains, self.cfg.second_hop, scheme, j)
            if direct == 0.0:
                self.assertEqual(parts.total, 0.0)
            else:
                self.assertAlmostEqual(parts.total / direct, 1.0, places=12)

    def test_longer_bit_interval_reduces_second_hop_isi(self):
        bits = [1, 1, 1, 1, 1]
        short = isi_decompose(bits, 150, self.hops, SamplingScheme(400e-6, 10, 20e-6), self.cfg.source_model)
        long = isi_decompose(bits, 150, self.hops, SamplingScheme(600e-6, 10, 20e-6), self.cfg.source_model)
        self.assertLessEqual(long.second_hop_isi, short.second_hop_isi)
        self.assertLessEqual(long.amplified_first_hop_isi, short.amplified_first_hop_isi)


class TestExpectedErrorProb(unittest.TestCase):

    def setUp(self):
        self.cfg = config.SystemConfig(seq_len=10, gain=150.0)

    def test_silent_prefix_never_errs_on_zero(self):
        pe1, pe0, pe = expected_error_prob(4, [0, 0, 0], 150, self.cfg, mode="mean")
        self.assertEqual(pe0, 0.0)
        self.assertAlmostEqual(pe, 0.5 * pe1 + 0.5 * pe0)

    def test_unit_threshold_is_exponential(self):
        cfg = self.cfg.replace(xi_d=1)
        pe1, pe0, _ = expected_error_prob(3, [0, 0], 150, cfg, mode="mean")
        sr = hit_sums(cfg.first_hop, cfg.scheme, 1)[0]
        rd = hit_sums(cfg.second_hop, cfg.scheme, 1)[0]
        self.assertAlmostEqual(pe1, math.exp(-150 * cfg.n_a1 * sr * rd), places=12)
        self.assertEqual(pe0, 0.0)

    def test_mixture(self):
        cfg = self.cfg.replace(p1=0.3)
        pe1, pe0, pe = expected_error_prob(5, [1, 0, 1, 1], 150, cfg, mode="realization", seed=4)
        self.assertAlmostEqual(pe, 0.3 * pe1 + 0.7 * pe0, places=14)
        for value in (pe1, pe0, pe):
            self.assertTrue(0.0 <= value <= 1.0)

    def test_prefix_length_must_match(self):
        with self.assertRaises(DomainError):
            expected_error_prob(5, [1, 0], 150, self.cfg)
        with self.assertRaises(ConfigError):
            expected_error_prob(3, [1, 0], 150, self.cfg, mode="median")

    def test_error_curve_over_gain_is_u_shaped(self):
        prefix = [int(c) for c in "101101001"]
        ks = [10, 50, 150, 250, 400, 1000]
        values = [expected_error_prob(10, prefix, k, self.cfg, mode="mean")[2] for k in ks]
        best = int(np.argmin(values))
        self.assertTrue(0 < best < len(ks) - 1, values)

    def test_realization_mode_averages_single_draws(self):
        prefix = [1, 1, 0, 1]
        single = np.array([expected_error_prob(5, prefix, 200, self.cfg, seed=s, draws=1)[2] for s in range(300)])
        averaged = expected_error_prob(5, prefix, 200, self.cfg, seed=5000, draws=300)[2]
        se = single.std(ddof=1) / math.sqrt(single.shape[0])
        self.assertLessEqual(abs(single.mean() - averaged), 4 * math.sqrt(2.0) * se + 1e-12)

    def test_mean_mode_is_deterministic(self):
        first = expected_error_prob(5, [1, 0, 1, 1], 150, self.cfg, mode="mean", seed=1)
        second = expected_error_prob(5, [1, 0, 1, 1], 150, self.cfg, mode="mean", seed=99)
        self.assertEqual(first, second)

    def grid_minimiser(self, cfg, prefix, k_max=1000):
        values = [expected_error_prob(len(prefix) + 1, prefix, k, cfg, mode="mean")[2] for k in range(1, k_max + 1)]
        return int(np.argmin(values)) + 1

    def test_relay_isi_gain_is_the_mean_count_minimiser(self):
        cfg = config.SystemConfig(seq_len=10)
        prefix = [int(c) for c in "101101001"]
        best = self.grid_minimiser(cfg, prefix)
        aware = GainModel.from_config(cfg.replace(isi_aware_gain=True)).optimal_gain(prefix)
        self.assertLessEqual(abs(aware - best), 1)
        self.assertLessEqual(abs(aware - best) / best, 0.09)

    def test_closed_form_gain_overshoots_without_relay_isi(self):
        # Only the first hop ISI enters B0, so the relay's own tail pushes the true minimum lower
        cfg = config.SystemConfig(seq_len=10)
        prefix = [int(c) for c in "101101001"]
        best = self.grid_minimiser(cfg, prefix)
        plain = GainModel.from_config(cfg).optimal_gain(prefix)
        self.assertGreater(plain, best)
        self.assertGreater((plain - best) / best, 0.09)

    def test_relay_isi_gain_matches_minimiser_for_short_histories(self):
        cfg = config.SystemConfig(seq_len=10)
        model = GainModel.from_config(cfg.replace(isi_aware_gain=True))
        for prefix in ([1], [0, 1], [1, 1, 0], [0, 0, 0, 1]):
            best = self.grid_minimiser(cfg, prefix)
            self.assertLessEqual(abs(model.optimal_gain(prefix) - best), 1, prefix)


class TestAverageErrorProb(unittest.TestCase):

    def setUp(self):
        self.cfg = config.SystemConfig(seq_len=6, gain=150.0)

    def test_report_shape_for_every_relay_protocol(self):
        for key in ("FIXED_GAIN_AF", "VARIABLE_GAIN_AF_TYPE1", "VARIABLE_GAIN_AF_TYPE2", "DECODE_FORWARD"):
            for mode in config.ANALYSIS_MODES:
                report = average_error_prob(key, self.cfg, 40, seed=2, mode=mode, gain_samples=500)
                self.assertEqual(report.protocol, key)
                self.assertEqual(len(report.per_interval), self.cfg.seq_len)
                self.assertEqual([e.j for e in report.per_interval], list(range(1, 7)))
                for e in report.per_interval:
                    self.assertTrue(0.0 <= e.pe_given_0 <= 1.0)
                    self.assertTrue(0.0 <= e.pe_given_1 <= 1.0)
                    self.assertAlmostEqual(e.pe, 0.5 * e.pe_given_1 + 0.5 * e.pe_given_0, places=14)
                self.assertAlmostEqual(report.overall, sum(e.pe for e in report.per_interval) / 6, places=14)
                self.assertGreater(report.mean_relay_emission, 0.0)

    def test_reproducible(self):
        first = average_error_prob("FIXED_GAIN_AF", self.cfg, 30, seed=7)
        second = average_error_prob("FIXED_GAIN_AF", self.cfg, 30, seed=7)
        self.assertEqual(first, second)

    def test_all_zero_source(self):
        report = average_error_prob("FIXED_GAIN_AF", self.cfg.replace(p1=0.0), 20, seed=1)
        self.assertEqual(report.overall, 0.0)

    def test_zero_threshold_always_decides_one(self):
        report = average_error_prob("FIXED_GAIN_AF", self.cfg.replace(xi_d=0), 20, seed=1, mode="mean")
        self.assertAlmostEqual(report.overall, 0.5, places=14)

    def test_schedule_must_match(self):
        with self.assertRaises(ConfigError):
            average_error_prob("FIXED_GAIN_AF", self.cfg, 10, seed=1, schedule=AmplificationSchedule.per_interval([1]))

    def test_fixed_gain_emission_budget(self):
        report = average_error_prob("FIXED_GAIN_AF", self.cfg, 200, seed=3, mode="mean")
        sr = hit_sums(self.cfg.first_hop, self.cfg.scheme, self.cfg.seq_len)
        # Mean relay count per interval, averaged over intervals, for p1 = 0.5
        expected = 150 * 0.5 * self.cfg.n_a1 * np.mean([sr[:j].sum() for j in range(1, 7)])
        self.assertLess(abs(report.mean_relay_emission - expected) / expected, 0.1)
        self.assertEqual(relay_budget_estimate(report), report.mean_relay_emission)

    def test_decode_forward_realization_uses_the_sampled_relay_count(self):
        cfg = config.SystemConfig(seq_len=1, p1=1.0, xi_r=20, df_emission=2500)
        boosted = 2500 * hit_sums(cfg.second_hop, cfg.scheme, 1)[0]
        # The relay either forwards the bit or stays silent; nothing in between
        outcomes = (poisson_tail_below(cfg.xi_d, boosted), 1.0)
        for seed in range(1, 6):
            report = average_error_prob("DECODE_FORWARD", cfg, 1, seed=seed, mode="realization")
            self.assertTrue(any(abs(report.overall - v) < 1e-12 for v in outcomes), report.overall)
        mixed = average_error_prob("DECODE_FORWARD", cfg, 1, seed=1, mode="mean")
        self.assertTrue(outcomes[0] < mixed.overall < 1.0, mixed.overall)

    def test_decode_forward_realization_varies_with_the_draw(self):
        cfg = config.SystemConfig(seq_len=1, p1=1.0, xi_r=20, df_emission=2500)
        values = {average_error_prob("DECODE_FORWARD", cfg, 1, seed=s, mode="realization").overall
                  for s in range(1, 41)}
        self.assertEqual(len(values), 2)


class TestRelayingAgainstBaseline(unittest.TestCase):
    """Fixed-gain AF against a direct link given the relay's extra molecules."""

    def best_over_threshold(self, evaluate, thresholds):
        reports = [evaluate(xi) for xi in thresholds]
        return min(reports, key=lambda r: r.overall)

    def test_fixed_gain_beats_baseline_at_equal_budget(self):
        cfg = config.SystemConfig(seq_len=20, gain=200.0)
        thresholds = range(4, 41, 2)
        relay = self.best_over_threshold(
            lambda xi: average_error_prob("FIXED_GAIN_AF", cfg.replace(xi_d=xi), 200, seed=1), thresholds)
        budget = relay_budget_estimate(relay)
        direct = self.best_over_threshold(
            lambda xi: baseline_error_prob(cfg.replace(protocol="BASELINE", xi_d=xi), 200, seed=1,
                                           relay_budget=budget), thresholds)
        self.assertLess(relay.overall, direct.overall)

    def test_fixed_gain_beats_baseline_at_long_bit_interval(self):
        cfg = config.SystemConfig(seq_len=20, bit_interval=800e-6, xi_d=20)
        relay = average_error_prob("FIXED_GAIN_AF", cfg, 200, seed=2, gain_samples=2000)
        direct = baseline_error_prob(cfg.replace(protocol="BASELINE"), 200, seed=2,
                                     relay_budget=relay_budget_estimate(relay))
        self.assertLess(relay.overall, direct.overall)


class TestBaseline(unittest.TestCase):

    def setUp(self):
        self.cfg = config.SystemConfig(seq_len=6, protocol="BASELINE")

    def test_needs_a_budget(self):
        with self.assertRaises(ConfigError):
            baseline_error_prob(self.cfg, 10, seed=1)
        with self.assertRaises(ConfigError):
            average_error_prob("BASELINE", self.cfg, 10, seed=1)

    def test_single_bit(self):
        cfg = self.cfg.replace(seq_len=1)
        report = baseline_error_prob(cfg, 10, seed=1, relay_budget=0.0)
        sd = hit_sums(cfg.direct_link, cfg.scheme, 1)[0]
        self.assertAlmostEqual(report.overall, 0.5 * poisson_tail_below(cfg.xi_d, cfg.n_a1 * sd), places=14)
        self.assertEqual(report.mode, "exact")

    def test_budget_lowers_missed_ones(self):
        low = baseline_error_prob(self.cfg, 50, seed=1, relay_budget=0.0)
        high = baseline_error_prob(self.cfg, 50, seed=1, relay_budget=2500.0)
        for a, b in zip(low.per_interval, high.per_interval):
            self.assertLessEqual(b.pe_given_1, a.pe_given_1)

    def test_has_no_relay_budget(self):
        report = baseline_error_prob(self.cfg, 10, seed=1, relay_budget=100.0)
        with self.assertRaises(InvalidProtocolError):
            relay_budget_estimate(report)


if __name__ == '__main__':
    unittest.main()
