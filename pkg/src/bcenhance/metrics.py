"""Objective evaluation: short-time intelligibility and log-spectral distance.

STOI follows the standard short-time objective intelligibility construction:
both signals are resampled to 10 kHz, frames where the reference carries no
speech energy (40 dB below its loudest frame) are discarded from both, the
rest are decomposed into one-third-octave band energies on a 256-sample /
50%-overlap grid, and compared by correlating 30-frame segments per band
after energy normalization and a -15 dB signal-to-distortion clipping bound.
Without the silent-frame removal, the clipping bound would imprint the
reference's on/off pattern onto any stationary test signal and score pure
noise as partly intelligible.

LSD is the root-mean-square log ratio between two power spectrograms,
averaged over frames. For waveforms the spectra come from the vocoder's
smoothed-envelope analysis (512 bins on the 5 ms grid), which measures how
well the parametric representation is preserved rather than the unresolvable
fine structure of excitation phase and noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample_poly

from bcenhance import vocoder
from bcenhance.errors import DataError, DimensionError

LSD_FLOOR = 1e-10


@dataclass(frozen=True)
class StoiConfig:
    """Frozen constants of the intelligibility measure."""

    sample_rate: int = 10000
    frame: int = 256
    hop: int = 128
    dft_size: int = 512
    bands: int = 15
    lowest_center_hz: float = 150.0
    segment_frames: int = 30  # N
    sdr_bound_db: float = -15.0  # beta
    silence_range_db: float = 40.0  # reference frames below max-range are dropped

    def band_bins(self) -> np.ndarray:
        """[bands x 2] inclusive-exclusive DFT bin ranges per one-third octave."""
        centers = self.lowest_center_hz * 2.0 ** (np.arange(self.bands) / 3.0)
        lo = centers * 2.0 ** (-1.0 / 6.0)
        hi = centers * 2.0 ** (1.0 / 6.0)
        to_bin = self.dft_size / self.sample_rate
        k1 = np.round(lo * to_bin).astype(int)
        k2 = np.round(hi * to_bin).astype(int)
        if np.any(k2 > self.dft_size // 2 + 1):
            raise DataError("one-third octave bands exceed Nyquist")
        return np.stack([k1, k2], axis=1)


STOI_CONFIG = StoiConfig()


def _windowed_frames(wave: np.ndarray, config: StoiConfig) -> np.ndarray:
    """[M x frame] Hann-windowed 50%-overlap frames."""
    frame, hop = config.frame, config.hop
    m = 1 + (wave.shape[0] - frame) // hop
    if m < 1:
        raise DataError(f"signal shorter than one {frame}-sample analysis frame")
    idx = np.arange(m)[:, None] * hop + np.arange(frame)[None, :]
    return wave[idx] * np.hanning(frame)


def _band_energies(frames: np.ndarray, config: StoiConfig) -> np.ndarray:
    """[bands x M] one-third-octave band magnitudes of windowed frames."""
    spectra = np.fft.rfft(frames, n=config.dft_size, axis=1)
    power = spectra.real**2 + spectra.imag**2
    bands = config.band_bins()
    out = np.empty((config.bands, frames.shape[0]))
    for j, (k1, k2) in enumerate(bands):
        out[j] = np.sqrt(np.sum(power[:, k1:k2], axis=1))
    return out


def stoi(reference: np.ndarray, test: np.ndarray, rate: int = vocoder.SAMPLE_RATE) -> float:
    """Short-time objective intelligibility of `test` against `reference`.

    Parameters
    ----------
    reference : ndarray
        Clean reference waveform.
    test : ndarray
        Degraded/processed waveform, sample-synchronous with the reference.
    rate : int
        Sample rate of both inputs; resampled internally to 10 kHz.

    Returns
    -------
    float
        Mean correlation over bands and segments, practically in [0, 1].
    """
    config = STOI_CONFIG
    ref = np.asarray(reference, dtype=np.float64)
    tst = np.asarray(test, dtype=np.float64)
    if ref.ndim != 1 or tst.ndim != 1:
        raise DataError("stoi expects mono waveforms")
    n = min(ref.shape[0], tst.shape[0])
    ref, tst = ref[:n], tst[:n]
    if not np.any(ref):
        raise DataError("silent reference: intelligibility undefined")
    if rate != config.sample_rate:
        g = math.gcd(rate, config.sample_rate)
        ref = resample_poly(ref, config.sample_rate // g, rate // g)
        tst = resample_poly(tst, config.sample_rate // g, rate // g)

    rf = _windowed_frames(ref, config)
    tf = _windowed_frames(tst, config)
    big_n = config.segment_frames
    if rf.shape[0] < big_n:
        raise DataError(f"need at least {big_n} analysis frames, got {rf.shape[0]}")
    energy = np.sum(rf**2, axis=1)
    peak = float(np.max(energy))
    if peak <= 0.0:
        raise DataError("silent reference: intelligibility undefined")
    keep = energy > peak * 10.0 ** (-config.silence_range_db / 10.0)
    rf, tf = rf[keep], tf[keep]

    x = _band_energies(rf, config)
    y = _band_energies(tf, config)
    m = x.shape[1]
    if m < big_n:
        raise DataError(f"need at least {big_n} speech-active frames, got {m}")

    clip_gain = 1.0 + 10.0 ** (-config.sdr_bound_db / 20.0)
    total, units = 0.0, 0
    for end in range(big_n, m + 1):
        xs = x[:, end - big_n : end]
        ys = y[:, end - big_n : end]
        alpha = np.sqrt(np.sum(xs**2, axis=1) / np.maximum(np.sum(ys**2, axis=1), 1e-20))
        yn = np.minimum(ys * alpha[:, None], xs * clip_gain)
        xc = xs - xs.mean(axis=1, keepdims=True)
        yc = yn - yn.mean(axis=1, keepdims=True)
        norm = np.sqrt(np.sum(xc**2, axis=1) * np.sum(yc**2, axis=1))
        live = norm > 0
        total += float(np.sum(np.sum(xc * yc, axis=1)[live] / norm[live]))
        units += int(np.count_nonzero(live))
    if units == 0:
        raise DataError("no band segment had signal variance; cannot score")
    return total / units


def lsd(reference_spectra: np.ndarray, test_spectra: np.ndarray) -> float:
    """Log-spectral distance in dB between two power spectrograms.

    Parameters
    ----------
    reference_spectra, test_spectra : ndarray
        Power spectra [bins x frames]; values are floored at 1e-10.

    Returns
    -------
    float
        Mean over frames of the RMS over bins of 10*log10(p/p_hat).
    """
    p = np.asarray(reference_spectra, dtype=np.float64)
    q = np.asarray(test_spectra, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"spectra shapes differ: {p.shape} vs {q.shape}")
    if p.ndim == 1:
        p, q = p[:, None], q[:, None]
    d = 10.0 * np.log10(np.maximum(p, LSD_FLOOR) / np.maximum(q, LSD_FLOOR))
    return float(np.mean(np.sqrt(np.mean(d * d, axis=0))))


def power_spectra(wave: np.ndarray) -> np.ndarray:
    """[512 x T] smoothed power spectra of a waveform on the 5 ms grid."""
    x = np.asarray(wave, dtype=np.float64)
    f0 = vocoder.estimate_f0(x)
    return vocoder.spectral_envelope(x, f0)[:512, :]


def waveform_lsd(reference: np.ndarray, test: np.ndarray) -> float:
    """LSD between two waveforms via the vocoder's analysis grid."""
    n = min(reference.shape[0], test.shape[0])
    p = power_spectra(reference[:n])
    q = power_spectra(test[:n])
    t = min(p.shape[1], q.shape[1])
    return lsd(p[:, :t], q[:, :t])


@dataclass
class EvalReport:
    """Per-utterance scores plus corpus averages."""

    rows: list = field(default_factory=list)  # (utterance_id, stoi, lsd)

    def add(self, utterance_id: str, stoi_score: float, lsd_db: float) -> None:
        self.rows.append((utterance_id, float(stoi_score), float(lsd_db)))

    @property
    def average_stoi(self) -> float:
        if not self.rows:
            raise DataError("empty evaluation report")
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def average_lsd(self) -> float:
        if not self.rows:
            raise DataError("empty evaluation report")
        return float(np.mean([r[2] for r in self.rows]))

    def sorted(self) -> "EvalReport":
        return EvalReport(rows=sorted(self.rows, key=lambda r: r[0]))

    def to_records(self) -> str:
        """Machine-readable TSV: utterance, stoi, lsd; final AVERAGE row."""
        lines = ["utterance\tstoi\tlsd"]
        for utt, s, d in self.rows:
            lines.append(f"{utt}\t{s:.17g}\t{d:.17g}")
        lines.append(f"AVERAGE\t{self.average_stoi:.17g}\t{self.average_lsd:.17g}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        """Human-readable aligned table."""
        width = max([len("utterance")] + [len(r[0]) for r in self.rows])
        lines = [f"{'utterance':<{width}}  {'STOI':>7}  {'LSD dB':>8}"]
        for utt, s, d in self.rows:
            lines.append(f"{utt:<{width}}  {s:7.4f}  {d:8.4f}")
        lines.append(f"{'AVERAGE':<{width}}  {self.average_stoi:7.4f}  {self.average_lsd:8.4f}")
        return "\n".join(lines) + "\n"


def parse_records(text: str) -> EvalReport:
    """Inverse of EvalReport.to_records (the AVERAGE row is recomputed)."""
    report = EvalReport()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split("\t") != ["utterance", "stoi", "lsd"]:
        raise DataError("not an evaluation record file (bad header)")
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) != 3:
            raise DataError(f"malformed evaluation record: {ln!r}")
        if parts[0] == "AVERAGE":
            continue
        report.add(parts[0], float(parts[1]), float(parts[2]))
    return report

def evaluate_pairs(pairs) -> EvalReport:
    """Score (utterance_id, reference_wave, test_wave) triples into a report."""
    report = EvalReport()
    for utterance_id, reference, test in pairs:
        report.add(utterance_id, stoi(reference, test), waveform_lsd(reference, test))
    return report.sorted()


def evaluate(checkpoint, dataset_dir, split: str = "test", synthesis_seed: int = 0) -> EvalReport:
    """Enhance every BC utterance in a dataset split and score it against AC.

    ``split`` selects which side of the checkpoint's seeded utterance split
    to score: "test" (default), "train", or "all". Rows are sorted by
    utterance id, so equal inputs give byte-identical reports.
    """
    from bcenhance import trainer  # deferred: keeps metric functions import-light

    state, config = trainer.load_checkpoint(checkpoint)
    dataset = trainer.load_dataset(dataset_dir)
    train_ids, test_ids = trainer.split_ids(dataset.ids, config)
    if split == "test":
        ids = test_ids
    elif split == "train":
        ids = train_ids
    elif split == "all":
        ids = dataset.ids
    else:
        raise DataError(f"unknown split {split!r} (expected test, train, or all)")

    def pairs():
        for utterance_id in ids:
            enhanced = trainer.enhance_features(state, dataset.bc[utterance_id], seed=synthesis_seed)
            reference = vocoder.read_wav(dataset.root / "ac" / f"{utterance_id}.wav")
            yield utterance_id, reference, enhanced

    return evaluate_pairs(pairs())
