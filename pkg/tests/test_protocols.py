import os
import sys
import unittest

import numpy as np
from scipy.special import gammaincc

# Add src directory to Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src import config
from src.channel import hit_sums
from src.errors import ConfigError, DomainError, InvalidProtocolError, UnsupportedConfigurationError
from src.protocols import (AmplificationSchedule, BitSequence, DetectionConfig, GainModel, ProtocolKind, SourceModel,
                           Variant, build_schedule, default_relay_threshold, detect, fixed_gain, isi_factor_b,
                           optimal_gain, relay_emission_count, relay_step, round_half_away, type2_gain_schedule)


class TestDetectionAndEmission(unittest.TestCase):

    def test_detect(self):
        self.assertEqual(detect(20, 20), 1)
        self.assertEqual(detect(19, 20), 0)
        self.assertEqual(detect(0, 0), 1)

    def test_relay_emission_count(self):
        self.assertEqual(relay_emission_count(200, 12), 2400)
        self.assertEqual(relay_emission_count(0, 5), 0)
        self.assertEqual(relay_emission_count(2.5, 3), 8)
        self.assertEqual(relay_emission_count(0.5, 1), 1)
        with self.assertRaises(DomainError):
            relay_emission_count(-1, 3)
        with self.assertRaises(DomainError):
            relay_emission_count(2, -3)

    def test_round_half_away(self):
        np.testing.assert_array_equal(round_half_away(np.array([0.5, 1.5, 2.5, -0.5, 2.4])), [1, 2, 3, -1, 2])

    def test_detection_config(self):
        DetectionConfig(0, 1)
        with self.assertRaises(DomainError):
            DetectionConfig(-1, 1)
        with self.assertRaises(DomainError):
            DetectionConfig(20, 0)

    def test_bit_sequence(self):
        sequence = BitSequence.from_string("1011")
        self.assertEqual(len(sequence), 4)
        self.assertEqual(str(sequence), "1011")
        np.testing.assert_array_equal(sequence.as_array(), [1, 0, 1, 1])
        with self.assertRaises(DomainError):
            BitSequence((0, 2))

    def test_source_model(self):
        source = SourceModel(0.3, 2500, 2000)
        bits = source.draw_bits(np.random.default_rng(4))
        self.assertEqual(bits.shape, (2000,))
        self.assertLess(abs(bits.mean() - 0.3), 0.05)
        self.assertAlmostEqual(source.p0, 0.7)
        with self.assertRaises(DomainError):
            SourceModel(1.2, 2500, 5)

    def test_protocol_kind(self):
        for variant in Variant:
            kind = ProtocolKind.from_key(variant.value, 100)
            self.assertEqual(kind.key, variant.value)
        self.assertEqual(ProtocolKind.from_key("DECODE_FORWARD", 100).df_emission, 100)
        self.assertEqual(ProtocolKind.from_key("FIXED_GAIN_AF", 100).df_emission, 0)
        with self.assertRaises(InvalidProtocolError):
            ProtocolKind.from_key("AMPLIFY_TWICE")


class TestIsiFactors(unittest.TestCase):

    def setUp(self):
        self.cfg = config.SystemConfig(seq_len=12)
        self.hops = (self.cfg.first_hop, self.cfg.second_hop)
        self.model = GainModel.from_config(self.cfg)

    def b(self, history, bit):
        return isi_factor_b(history, bit, *self.hops, self.cfg.scheme)

    def test_empty_history(self):
        self.assertEqual(self.b([], 0), 0.0)
        self.assertAlmostEqual(self.b([], 1), self.model.current_weight, places=15)

    def test_more_ones_raise_the_factor(self):
        self.assertGreater(self.b([1, 1], 0), self.b([0, 0], 0))
        self.assertGreater(self.b([0, 1], 0), self.b([1, 0], 0))

    def test_gap_is_independent_of_history(self):
        generator = np.random.default_rng(11)
        for _ in range(10):
            history = generator.integers(0, 2, generator.integers(0, 10))
            gap = self.b(history, 1) - self.b(history, 0)
            self.assertAlmostEqual(gap / self.model.current_weight, 1.0, places=12)

    def test_batched_factors_match(self):
        generator = np.random.default_rng(12)
        histories = generator.integers(0, 2, (20, 8))
        b0, b1 = self.model.b_factors(histories)
        np.testing.assert_allclose(b0, [self.b(row, 0) for row in histories], rtol=1e-12, atol=0)
        np.testing.assert_allclose(b1, [self.b(row, 1) for row in histories], rtol=1e-12, atol=0)


class TestOptimalGain(unittest.TestCase):

    def setUp(self):
        self.cfg = config.SystemConfig(seq_len=20)
        self.model = GainModel.from_config(self.cfg)

    def gain(self, history, **changes):
        cfg = self.cfg.replace(**changes)
        return optimal_gain(history, cfg.source_model, cfg.detection, (cfg.first_hop, cfg.second_hop), cfg.scheme,
                            cfg.k_max)

    def test_degenerate_history_gives_k_max(self):
        self.assertEqual(self.gain([]), self.cfg.k_max)
        self.assertEqual(self.gain([0, 0, 0, 0]), self.cfg.k_max)

    def test_threshold_below_two_is_unsupported(self):
        with self.assertRaises(UnsupportedConfigurationError):
            self.gain([1, 0, 1], xi_d=1, gain=10.0)

    def test_source_edge_cases(self):
        self.assertEqual(self.gain([1, 0, 1], p1=1.0), self.cfg.k_max)
        self.assertEqual(self.gain([1, 0, 1], p1=0.0, gain=10.0), 1)
        self.assertEqual(self.gain([1, 0, 1], n_a1=0, gain=10.0), self.cfg.k_max)

    def test_equal_factors_give_equal_gains(self):
        # bit 2 back from the current interval in both cases
        self.assertEqual(self.gain([1, 0]), self.gain([0, 1, 0]))

    def test_gain_falls_as_isi_grows(self):
        gains = [self.gain(h) for h in ([0, 0, 0, 1], [0, 0, 1, 1], [0, 1, 1, 1], [1, 1, 1, 1])]
        self.assertTrue(all(b <= a for a, b in zip(gains, gains[1:])), gains)
        self.assertTrue(all(1 <= k <= self.cfg.k_max for k in gains))

    def test_closed_form_is_the_relaxed_minimum(self):
        prefix = np.array([int(c) for c in "101101001"])
        b0, b1 = (float(v[0]) for v in self.model.b_factors(prefix))
        n = self.cfg.n_a1
        ks = np.arange(1, 1001)
        pe = 0.5 * gammaincc(self.cfg.xi_d, ks * n * b1) + 0.5 * (1.0 - gammaincc(self.cfg.xi_d, ks * n * b0))
        best = int(ks[np.argmin(pe)])
        self.assertLessEqual(abs(best - self.model.optimal_gain(prefix)), 1)

    def test_gain_scales_with_threshold(self):
        prefix = [1, 0, 1, 1, 0, 1, 0, 0, 1]
        ratio = self.gain(prefix, xi_d=20) / self.gain(prefix, xi_d=10)
        self.assertTrue(1.7 <= ratio <= 2.3, ratio)

    def test_gains_along_matches_single_histories(self):
        bits = np.array([1, 0, 1, 1, 0, 0, 1, 0])
        gains, degenerate = self.model.gains_along(bits)
        for j in range(1, len(bits) + 1):
            self.assertEqual(gains[j - 1], self.model.optimal_gain(bits[:j - 1]))
        self.assertTrue(degenerate[0])
        self.assertFalse(degenerate[-1])

    def test_gains_along_batches(self):
        batch = np.random.default_rng(5).integers(0, 2, (6, 7))
        gains, _ = self.model.gains_along(batch)
        self.assertEqual(gains.shape, (6, 7))
        for row, expected in zip(batch, gains):
            np.testing.assert_array_equal(self.model.gains_along(row)[0], expected)

    def test_relay_isi_lowers_the_gain(self):
        aware = GainModel.from_config(self.cfg.replace(isi_aware_gain=True))
        histories = np.random.default_rng(8).integers(0, 2, (40, 9))
        plain_gains, _ = self.model.optimal_gains(histories)
        aware_gains, degenerate = aware.optimal_gains(histories)
        self.assertTrue(np.all(aware_gains <= plain_gains))
        # B0 = 0 stays degenerate either way
        np.testing.assert_array_equal(degenerate, self.model.optimal_gains(histories)[1])
        self.assertEqual(aware.optimal_gain([0, 0, 0]), self.cfg.k_max)

    def test_relay_isi_is_the_second_hop_mean_per_unit_gain(self):
        aware = GainModel.from_config(self.cfg.replace(isi_aware_gain=True))
        history = np.array([1, 0, 1, 1, 0])
        sr = hit_sums(self.cfg.first_hop, self.cfg.scheme, 6)
        rd = hit_sums(self.cfg.second_hop, self.cfg.scheme, 6)
        relay_means = [sum(history[m] * sr[i - m] for m in range(i + 1)) for i in range(5)]
        expected = sum(relay_means[i] * rd[5 - i] for i in range(5))
        self.assertAlmostEqual(aware.second_hop_isi(history)[0] / expected, 1.0, places=12)

    def test_relay_isi_gains_along_match_single_histories(self):
        aware = GainModel.from_config(self.cfg.replace(isi_aware_gain=True))
        bits = np.array([1, 0, 1, 1, 0, 0, 1, 0])
        gains, _ = aware.gains_along(bits)
        for j in range(1, len(bits) + 1):
            self.assertEqual(gains[j - 1], aware.optimal_gain(bits[:j - 1]))
        self.assertEqual(optimal_gain(bits[:5], self.cfg.source_model, self.cfg.detection,
                                      (self.cfg.first_hop, self.cfg.second_hop), self.cfg.scheme, self.cfg.k_max,
                                      include_second_hop_isi=True), gains[5])


class TestGainSchedules(unittest.TestCase):

    def setUp(self):
        self.cfg = config.SystemConfig(seq_len=12)

    def schedule(self, cfg=None, n_samples=2000, seed=1, **kwargs):
        cfg = cfg or self.cfg
        return type2_gain_schedule(cfg.source_model, cfg.detection, (cfg.first_hop, cfg.second_hop), cfg.scheme,
                                   n_samples, seed, cfg.k_max, **kwargs)

    def test_first_entry_is_degenerate(self):
        with self.assertLogs("src.protocols", level="WARNING"):
            schedule = self.schedule()
        self.assertEqual(len(schedule.gains), self.cfg.seq_len)
        self.assertTrue(schedule.degenerate[0])
        self.assertEqual(schedule.gains[0], self.cfg.k_max)
        self.assertFalse(any(schedule.degenerate[1:]))

    def test_all_ones_source_reduces_to_optimal_gains(self):
        cfg = self.cfg.replace(p1=1.0, seq_len=4)
        schedule = self.schedule(cfg)
        hops = (cfg.first_hop, cfg.second_hop)
        for j in range(1, 5):
            expected = optimal_gain([1] * (j - 1), cfg.source_model, cfg.detection, hops, cfg.scheme, cfg.k_max)
            self.assertEqual(schedule.gains[j - 1], expected)

    def test_sampled_schedule_is_deterministic(self):
        cfg = self.cfg.replace(seq_len=8)
        first = self.schedule(cfg, n_samples=20000, seed=3, exhaustive_limit=0)
        second = self.schedule(cfg, n_samples=20000, seed=3, exhaustive_limit=0)
        self.assertEqual(first, second)
        other = self.schedule(cfg, n_samples=20000, seed=4, exhaustive_limit=0)
        for a, b in zip(first.gains[1:], other.gains[1:]):
            self.assertLessEqual(abs(a - b) / a, 0.02)

    def test_sampled_schedule_agrees_with_enumeration(self):
        cfg = self.cfg.replace(seq_len=8)
        exact = self.schedule(cfg)
        sampled = self.schedule(cfg, n_samples=20000, exhaustive_limit=0)
        for a, b in zip(exact.gains[1:], sampled.gains[1:]):
            self.assertLessEqual(abs(a - b) / a, 0.02)

    def test_schedule_settles(self):
        cfg = self.cfg.replace(seq_len=24)
        gains = self.schedule(cfg, n_samples=100_000).gains
        # gains[i] is k_bar[i + 2]; from k_bar[20] on each entry moves by at most 2%
        for i in range(18, len(gains)):
            self.assertLessEqual(abs(gains[i] - gains[i - 1]) / gains[i - 1], 0.02, msg=f"k_bar[{i + 2}]")

    def test_fixed_gain_lies_within_the_schedule(self):
        schedule = self.schedule()
        hops = (self.cfg.first_hop, self.cfg.second_hop)
        k = fixed_gain(self.cfg.source_model, self.cfg.detection, hops, self.cfg.scheme, 2000, 1, self.cfg.k_max)
        live = schedule.gains[1:]
        self.assertTrue(min(live) <= k <= max(live))

    def test_fixed_gain_doubles_with_threshold(self):
        hops = (self.cfg.first_hop, self.cfg.second_hop)
        ks = {}
        for xi_d in (10, 20):
            cfg = self.cfg.replace(xi_d=xi_d)
            ks[xi_d] = fixed_gain(cfg.source_model, cfg.detection, hops, cfg.scheme, 2000, 1, cfg.k_max)
        self.assertTrue(1.7 <= ks[20] / ks[10] <= 2.3, ks)


class TestAmplificationSchedule(unittest.TestCase):

    def test_fixed(self):
        schedule = AmplificationSchedule.fixed(150)
        self.assertEqual(schedule.gain_for(2), 150)
        self.assertEqual(schedule.gain_for(40, (1, 0)), 150)

    def test_fixed_gain_above_k_max_raises_the_cap(self):
        self.assertEqual(AmplificationSchedule.fixed(20000, 100).k_max, 20000)

    def test_per_interval(self):
        schedule = AmplificationSchedule.per_interval([10, 20, 30], k_max=100)
        self.assertEqual(schedule.gain_for(2), 10)
        self.assertEqual(schedule.gain_for(4), 30)
        with self.assertRaises(DomainError):
            schedule.gain_for(5)

    def test_gains_outside_range_rejected(self):
        with self.assertRaises(ConfigError):
            AmplificationSchedule.per_interval([10, 200], k_max=100)
        with self.assertRaises(ConfigError):
            AmplificationSchedule("fixed", 100, (1, 2))
        with self.assertRaises(ConfigError):
            AmplificationSchedule("online", 100)

    def test_build_schedule(self):
        cfg = config.SystemConfig(seq_len=6, gain=120.0)
        self.assertEqual(build_schedule(ProtocolKind.from_key("FIXED_GAIN_AF"), cfg).gains, (120.0,))
        self.assertEqual(build_schedule(ProtocolKind.from_key("VARIABLE_GAIN_AF_TYPE2"), cfg, 500).mode,
                         "per_interval")
        self.assertEqual(build_schedule(ProtocolKind.from_key("VARIABLE_GAIN_AF_TYPE1"), cfg).mode, "online")
        self.assertIsNone(build_schedule(ProtocolKind.from_key("DECODE_FORWARD"), cfg))
        self.assertIsNone(build_schedule(ProtocolKind.from_key("BASELINE"), cfg))


class TestRelayStep(unittest.TestCase):

    def setUp(self):
        self.cfg = config.SystemConfig(seq_len=10)
        self.fixed = ProtocolKind.from_key("FIXED_GAIN_AF")
        self.schedule = AmplificationSchedule.fixed(150, self.cfg.k_max)

    def test_nothing_is_forwarded_in_the_first_interval(self):
        self.assertEqual(relay_step(self.fixed, self.schedule, 12, (), 1), 0)

    def test_fixed_gain(self):
        self.assertEqual(relay_step(self.fixed, self.schedule, 12, (1,), 2), 1800)

    def test_baseline_has_no_relay(self):
        with self.assertRaises(InvalidProtocolError):
            relay_step(ProtocolKind.from_key("BASELINE"), None, 3, (), 2)

    def test_schedule_must_match_protocol(self):
        with self.assertRaises(ConfigError):
            relay_step(self.fixed, AmplificationSchedule.per_interval([1, 2]), 3, (), 2)
        with self.assertRaises(ConfigError):
            relay_step(self.fixed, None, 3, (), 2)

    def test_decode_forward(self):
        df = ProtocolKind.from_key("DECODE_FORWARD", 700)
        self.assertEqual(relay_step(df, None, 8, (), 3, relay_threshold=8), 700)
        self.assertEqual(relay_step(df, None, 7, (), 3, relay_threshold=8), 0)
        with self.assertRaises(ConfigError):
            relay_step(df, None, 7, (), 3)

    def test_type1_uses_its_own_estimates(self):
        model = GainModel.from_config(self.cfg)
        schedule = AmplificationSchedule.online(model.optimal_gain, self.cfg.k_max)
        type1 = ProtocolKind.from_key("VARIABLE_GAIN_AF_TYPE1")
        # All-zero estimated history: degenerate, gain k_max
        self.assertEqual(relay_step(type1, schedule, 3, (0, 0, 0, 1), 5), 3 * self.cfg.k_max)
        expected = relay_emission_count(model.optimal_gain((1, 0, 1)), 4)
        self.assertEqual(relay_step(type1, schedule, 4, (1, 0, 1, 1), 5), expected)

    def test_type2_reads_the_schedule_by_interval(self):
        schedule = AmplificationSchedule.per_interval([10, 20, 30], k_max=100)
        type2 = ProtocolKind.from_key("VARIABLE_GAIN_AF_TYPE2")
        self.assertEqual(relay_step(type2, schedule, 2, (1, 1), 4), 60)


class TestRelayThreshold(unittest.TestCase):

    def test_decode_forward_with_symmetric_hops(self):
        cfg = config.SystemConfig(protocol="DECODE_FORWARD")
        self.assertEqual(default_relay_threshold(cfg), cfg.xi_d)

    def test_amplify_forward_threshold_is_positive(self):
        cfg = config.SystemConfig()
        xi_r = default_relay_threshold(cfg)
        self.assertTrue(1 <= xi_r <= cfg.xi_d)
        # A smaller gain means a weaker forwarded signal, so the relay threshold rises
        low = default_relay_threshold(cfg.replace(gain=100.0))
        high = default_relay_threshold(cfg.replace(gain=50.0))
        self.assertGreaterEqual(high, low)


if __name__ == '__main__':
    unittest.main()
