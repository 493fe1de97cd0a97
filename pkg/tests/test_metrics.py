"""Tests for the objective metrics: STOI, LSD, and evaluation reports."""

import numpy as np
import pytest

from bcenhance import metrics, toycorpus
from bcenhance.errors import DataError, DimensionError


def speech(seed=0):
    return toycorpus.generate_utterance(seed)


def equal_rms_noise(wave, seed):
    noise = np.random.default_rng(seed).standard_normal(wave.shape[0])
    return noise * np.sqrt(np.sum(wave**2) / np.sum(noise**2))


class TestStoiConfig:
    def test_band_layout_is_fifteen_ascending_bands_under_nyquist(self):
        bands = metrics.STOI_CONFIG.band_bins()
        assert bands.shape == (15, 2)
        assert np.all(bands[:, 0] < bands[:, 1])
        assert np.all(bands[1:, 0] >= bands[:-1, 0])
        assert bands[-1, 1] <= metrics.STOI_CONFIG.dft_size // 2 + 1

    def test_lowest_band_sits_at_150_hz(self):
        k1, k2 = metrics.STOI_CONFIG.band_bins()[0]
        hz_per_bin = metrics.STOI_CONFIG.sample_rate / metrics.STOI_CONFIG.dft_size
        assert k1 * hz_per_bin < 150.0 < k2 * hz_per_bin


class TestStoi:
    def test_identical_signals_score_one(self):
        x = speech()
        assert abs(metrics.stoi(x, x) - 1.0) <= 1e-6

    def test_scale_of_test_signal_is_ignored(self):
        x = speech()
        for gain in (0.1, 3.7, 100.0):
            assert abs(metrics.stoi(x, gain * x) - 1.0) < 1e-6

    def test_added_noise_lowers_score_monotonically(self):
        for seed in range(3):
            x = speech(seed)
            noise = equal_rms_noise(x, 1000 + seed)
            scores = [metrics.stoi(x, x + noise * 10 ** (-snr / 20)) for snr in (20, 15, 10, 5, 0)]
            assert all(b < a for a, b in zip(scores, scores[1:])), scores

    def test_pure_noise_scores_low(self):
        x = speech()
        assert metrics.stoi(x, equal_rms_noise(x, 1000)) < 0.3

    def test_scores_bounded_for_arbitrary_pairs(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            a = rng.standard_normal(16000)
            b = rng.standard_normal(16000)
            assert abs(metrics.stoi(a, b)) <= 1.0 + 1e-12

    def test_stationary_filtering_is_tolerated(self):
        # Per-band normalization makes the measure blind to a fixed spectral
        # tilt; distortion must be tracked by the spectral distance instead.
        x = speech()
        assert metrics.stoi(x, toycorpus.bone_conduct(x)) > 0.9

    def test_mismatched_lengths_truncate_to_overlap(self):
        x = speech()
        assert abs(metrics.stoi(x, x[: x.shape[0] - 1000]) - 1.0) <= 1e-6

    def test_short_signal_rejected(self):
        x = speech()[:3000]
        with pytest.raises(DataError):
            metrics.stoi(x, x)

    def test_silent_reference_rejected(self):
        x = speech()
        with pytest.raises(DataError):
            metrics.stoi(np.zeros_like(x), x)

    def test_stereo_rejected(self):
        x = speech()
        with pytest.raises(DataError):
            metrics.stoi(np.stack([x, x]), np.stack([x, x]))


class TestLsd:
    def test_identical_spectra_score_zero(self):
        p = np.random.default_rng(0).uniform(0.01, 10.0, size=(512, 40))
        assert metrics.lsd(p, p) == 0.0

    def test_constant_power_ratio_reads_in_decibels(self):
        p = np.random.default_rng(1).uniform(0.01, 10.0, size=(512, 40))
        assert abs(metrics.lsd(10.0 * p, p) - 10.0) < 1e-9
        assert abs(metrics.lsd(p, 10.0 * p) - 10.0) < 1e-9

    def test_alternating_ratio_reads_as_rms(self):
        p = np.random.default_rng(2).uniform(0.01, 10.0, size=(512, 40))
        ratio = np.where(np.arange(512)[:, None] % 2 == 0, 100.0, 0.01)
        assert abs(metrics.lsd(ratio * p, p) - 20.0) < 1e-9

    def test_symmetric_in_arguments(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            p = rng.uniform(1e-6, 100.0, size=(64, 7))
            q = rng.uniform(1e-6, 100.0, size=(64, 7))
            assert abs(metrics.lsd(p, q) - metrics.lsd(q, p)) < 1e-12

    def test_common_scale_cancels(self):
        rng = np.random.default_rng(4)
        p = rng.uniform(0.01, 10.0, size=(128, 11))
        q = rng.uniform(0.01, 10.0, size=(128, 11))
        base = metrics.lsd(p, q)
        for c in (4.0, 3.1, 1e3):
            assert abs(metrics.lsd(c * p, c * q) - base) < 1e-9

    def test_nonnegative(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            p = rng.uniform(1e-6, 100.0, size=(32, 5))
            q = rng.uniform(1e-6, 100.0, size=(32, 5))
            assert metrics.lsd(p, q) >= 0.0

    def test_mismatched_shapes_rejected(self):
        p = np.ones((512, 40))
        with pytest.raises(DimensionError):
            metrics.lsd(p, p[:, :20])

    def test_vector_inputs_accepted(self):
        p = np.full(16, 2.0)
        assert abs(metrics.lsd(10.0 * p, p) - 10.0) < 1e-9

    def test_floor_prevents_infinite_distance(self):
        p = np.ones((8, 3))
        assert np.isfinite(metrics.lsd(p, np.zeros((8, 3))))


class TestWaveformLsd:
    def test_identical_waveforms_score_zero(self):
        x = speech()
        assert metrics.waveform_lsd(x, x) == 0.0

    def test_double_amplitude_reads_six_decibels(self):
        # A gapless fixture: during silence both envelopes sit on the power
        # floor, where a pure gain is invisible and would dilute the oracle.
        t = np.arange(16000) / 16000.0
        x = np.zeros(16000)
        for k in range(1, 45):
            x += np.sin(2 * np.pi * 180.0 * k * t) / k
        x *= 0.3 / np.max(np.abs(x))
        assert abs(metrics.waveform_lsd(x, 2.0 * x) - 20.0 * np.log10(2.0)) < 1e-9

    def test_lowpass_registers_large_distance(self):
        x = speech()
        assert metrics.waveform_lsd(x, toycorpus.bone_conduct(x)) > 10.0

    def test_length_mismatch_truncates_to_overlap(self):
        x = speech()
        tail = np.zeros(500)
        assert metrics.waveform_lsd(x, np.concatenate([x, tail])) == 0.0


class TestEvalReport:
    def filled(self):
        report = metrics.EvalReport()
        report.add("utt002", 0.5, 2.0)
        report.add("utt000", 0.7, 1.0)
        report.add("utt001", 0.9, 3.0)
        return report

    def test_average_is_arithmetic_mean(self):
        report = self.filled()
        assert abs(report.average_stoi - 0.7) < 1e-15
        assert abs(report.average_lsd - 2.0) < 1e-15

    def test_sorted_orders_rows_by_utterance_id(self):
        rows = self.filled().sorted().rows
        assert [r[0] for r in rows] == ["utt000", "utt001", "utt002"]

    def test_records_roundtrip(self):
        report = self.filled()
        parsed = metrics.parse_records(report.to_records())
        assert parsed.rows == report.rows

    def test_records_have_header_and_average_row(self):
        lines = self.filled().to_records().strip().splitlines()
        assert lines[0] == "utterance\tstoi\tlsd"
        assert lines[-1].startswith("AVERAGE\t")
        assert len(lines) == 5

    def test_table_lists_every_utterance_and_average(self):
        text = self.filled().to_table()
        for utt in ("utt000", "utt001", "utt002", "AVERAGE"):
            assert utt in text

    def test_empty_report_has_no_average(self):
        with pytest.raises(DataError):
            metrics.EvalReport().average_stoi

    def test_parse_rejects_foreign_text(self):
        with pytest.raises(DataError):
            metrics.parse_records("hello\tworld\n")

    def test_parse_rejects_malformed_rows(self):
        with pytest.raises(DataError):
            metrics.parse_records("utterance\tstoi\tlsd\nutt000\t0.5\n")
