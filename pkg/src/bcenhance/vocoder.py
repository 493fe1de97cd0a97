"""Analysis/synthesis front end.

Decomposes 16 kHz speech every 5 ms into the feature triplet the model
consumes: a fundamental-frequency contour (0 on unvoiced frames), 24
mel-cepstral coefficients encoding a smoothed spectral envelope, and a
4-band aperiodicity matrix. Synthesis rebuilds a waveform from the triplet
as envelope-filtered pulse-plus-noise excitation; the periodic part is
realized in its Fourier-series form (a bank of harmonic sinusoids sharing
one dispersed phase pattern), which places every glottal period exactly
without sub-sample jitter.

Conventions fixed here, and relied on by the serializer and tests:

* frames are centered at ``t * 80`` samples; T = floor(len / 80) + 1
* spectral analysis uses a 1024-point Hann window and FFT
* mel warping uses the all-pass constant alpha = 0.42
* mcep[0] is the mean log amplitude (energy); coefficients 1..23 carry
  twice the cepstrum so decoding is a plain cosine series
* aperiodicity bands cover 0-2, 2-4, 4-6, 6-8 kHz

The feature file format (extension ``.bcf1``) is little-endian: the magic
bytes ``BCF1``; three uint32 dims T, Q, bands; then float64 arrays f0 [T],
mcep [Q x T] row-major, ap [bands x T] row-major. Nothing else is stored:
the frame shift (5 ms) and sample rate (16 kHz) are fixed by the format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile

from bcenhance.errors import DataError

SAMPLE_RATE = 16000
FRAME_SHIFT_MS = 5.0
HOP = 80  # samples per frame at 16 kHz / 5 ms
FFT_SIZE = 1024
SPECTRUM_BINS = FFT_SIZE // 2 + 1
MCEP_ORDER = 24
WARP_ALPHA = 0.42
F0_MIN = 50.0
F0_MAX = 500.0
VOICING_THRESHOLD = 0.3
AP_BANDS = 4
POWER_FLOOR = 1e-12
MAGIC = b"BCF1"

# Excitation levels calibrated so analyze(synthesize(features)) returns the
# same envelope energy the features encode (see tests for the round trip).
HARMONIC_CAL = 1.012
NOISE_CAL = 1.037

_F0_WINDOW = 320  # one period of F0_MIN
_F0_SEGMENT = 2 * _F0_WINDOW
_LAG_MIN = int(SAMPLE_RATE / F0_MAX)  # 32
_LAG_MAX = int(SAMPLE_RATE / F0_MIN)  # 320

_HANN = np.hanning(FFT_SIZE)
_WINDOW_ENERGY = float(np.sum(_HANN**2))


@dataclass
class FeatureSet:
    """Per-utterance acoustic features on a shared 5 ms frame grid."""

    f0: np.ndarray  # [T] Hz, 0 = unvoiced
    mcep: np.ndarray  # [MCEP_ORDER x T]
    ap: np.ndarray  # [AP_BANDS x T] in [0, 1]
    frame_shift_ms: float = FRAME_SHIFT_MS
    sample_rate: int = SAMPLE_RATE

    @property
    def frames(self) -> int:
        return self.f0.shape[0]

    def validate(self) -> None:
        t = self.f0.shape[0]
        if self.mcep.shape != (MCEP_ORDER, t) or self.ap.shape != (AP_BANDS, t):
            raise DataError(
                f"inconsistent feature shapes: f0 {self.f0.shape}, mcep {self.mcep.shape}, ap {self.ap.shape}"
            )
        voiced = self.f0 > 0
        if np.any((self.f0[voiced] < F0_MIN) | (self.f0[voiced] > F0_MAX)):
            raise DataError(f"voiced f0 outside [{F0_MIN}, {F0_MAX}] Hz")
        if np.any((self.ap < 0) | (self.ap > 1)):
            raise DataError("aperiodicity outside [0, 1]")


@dataclass
class F0Stats:
    """Log-F0 mean and deviation over the voiced frames of one corpus side."""

    mu: float
    sigma: float


def read_wav(path) -> np.ndarray:
    """Load a mono 16 kHz WAV as float64 in [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except (ValueError, FileNotFoundError) as exc:
        raise DataError(f"cannot read wav {path}: {exc}") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got {data.ndim} channels")
    if rate != SAMPLE_RATE:
        raise DataError(f"{path}: sample rate {rate}, expected {SAMPLE_RATE}; resample before use")
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise DataError(f"{path}: unsupported sample format {data.dtype}")


def write_wav(path, wave: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write float samples as 16-bit PCM, clipping to [-1, 1]."""
    clipped = np.clip(np.asarray(wave, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, sample_rate, (clipped * 32767.0).round().astype(np.int16))


def frame_count(n_samples: int) -> int:
    return n_samples // HOP + 1


def _framed(x: np.ndarray, length: int, clamp: bool = False) -> np.ndarray:
    """[T x length] matrix of frames centered at t * HOP.

    Short-time spectra use reflect padding at the edges (the default).  The
    periodicity estimators pass clamp=True instead: a reflected segment is an
    even palindrome whose spurious correlation peaks derail lag picking, so
    edge frames are slid inward to cover genuine samples only.
    """
    t = frame_count(x.shape[0])
    half = length // 2
    if clamp:
        start = np.clip(np.arange(t) * HOP - half, 0, max(x.shape[0] - length, 0))
        idx = start[:, None] + np.arange(length)[None, :]
        return np.asarray(x)[idx]
    pad = np.pad(x, (half, half + length), mode="reflect")
    idx = np.arange(t)[:, None] * HOP + np.arange(length)[None, :]
    return pad[idx]


def _nccf(frames: np.ndarray) -> np.ndarray:
    """Normalized cross-correlation per frame over the pitch lag range."""
    t = frames.shape[0]
    out = np.zeros((t, _LAG_MAX + 1))
    w = _F0_WINDOW
    for i in range(t):
        seg = frames[i] - frames[i].mean()
        cross = np.correlate(seg, seg[:w], mode="valid")  # cross[tau], tau 0.._F0_WINDOW
        sq = np.concatenate(([0.0], np.cumsum(seg * seg)))
        e0 = sq[w]
        etau = sq[w : w + _LAG_MAX + 1] - sq[: _LAG_MAX + 1]
        out[i] = cross[: _LAG_MAX + 1] / np.sqrt(e0 * etau + 1e-20)
    return out


def estimate_f0(x: np.ndarray) -> np.ndarray:
    """Autocorrelation-class F0 with a voicing decision per frame.

    Picks the smallest lag whose local correlation peak comes within 10% of
    the frame's best peak (rejecting octave-down subharmonics), refines it by
    parabolic interpolation, then median-filters the voiced track to remove
    isolated harmonic mispicks.
    """
    frames = _framed(x, _F0_SEGMENT, clamp=True)
    nccf = _nccf(frames)
    rms = np.sqrt(np.mean(frames**2, axis=1))
    f0 = np.zeros(frames.shape[0])
    for i in range(frames.shape[0]):
        row = nccf[i]
        lo, hi = _LAG_MIN, _LAG_MAX
        segment = row[lo : hi + 1]
        peak = segment.max()
        if peak < VOICING_THRESHOLD or rms[i] < 1e-5:
            continue
        local = np.flatnonzero(
            (segment[1:-1] >= segment[:-2])
            & (segment[1:-1] >= segment[2:])
            & (segment[1:-1] >= 0.9 * peak)
        )
        lag = lo + 1 + int(local[0]) if local.size else lo + int(np.argmax(segment))
        if 0 < lag < row.shape[0] - 1:
            a, b, c = row[lag - 1], row[lag], row[lag + 1]
            denom = a - 2 * b + c
            if abs(denom) > 1e-12:
                lag = lag + 0.5 * (a - c) / denom
        lag = float(np.clip(lag, _LAG_MIN, _LAG_MAX))
        f0[i] = SAMPLE_RATE / lag
    return _median_smooth_voiced(f0)


def _median_smooth_voiced(f0: np.ndarray, reach: int = 2) -> np.ndarray:
    """Median over the surrounding voiced frames; voicing decisions unchanged."""
    out = f0.copy()
    voiced = np.flatnonzero(f0 > 0)
    for i in voiced:
        lo, hi = max(0, i - reach), min(f0.shape[0], i + reach + 1)
        window = f0[lo:hi]
        out[i] = np.median(window[window > 0])
    return out


def _power_spectra(x: np.ndarray) -> np.ndarray:
    """[T x SPECTRUM_BINS] windowed power spectra normalized by window energy."""
    frames = _framed(x, FFT_SIZE)
    spec = np.fft.rfft(frames * _HANN, axis=1)
    return (spec.real**2 + spec.imag**2) / _WINDOW_ENERGY


def spectral_envelope(x: np.ndarray, f0: np.ndarray) -> np.ndarray:
    """Smoothed power envelope [SPECTRUM_BINS x T].

    Harmonic combs are flattened by averaging power over one pitch period's
    bin spacing (pitch-adaptive width; a fixed width on unvoiced frames).
    """
    spectra = _power_spectra(x)
    t = spectra.shape[0]
    env = np.empty_like(spectra)
    cum = np.cumsum(np.pad(spectra, ((0, 0), (1, 0)), mode="constant"), axis=1)
    for i in range(t):
        width = FFT_SIZE * f0[i] / SAMPLE_RATE if f0[i] > 0 else 13.0
        half = max(1, int(round(width / 2)))
        lo = np.maximum(np.arange(SPECTRUM_BINS) - half, 0)
        hi = np.minimum(np.arange(SPECTRUM_BINS) + half + 1, SPECTRUM_BINS)
        env[i] = (cum[i, hi] - cum[i, lo]) / (hi - lo)
        if f0[i] > 0:
            # No harmonic exists below F0 or above the last one under Nyquist,
            # so the raw average dives in both line-free margins and the dives
            # would bleed into the cepstral fit; hold the nearest harmonic's
            # level across each margin instead.
            first = min(int(round(width)), SPECTRUM_BINS - 1)
            env[i, :first] = env[i, first]
            # The last-harmonic index backs off half a spacing from Nyquist:
            # a harmonic sitting on the boundary would flip in and out with
            # tiny F0 estimation jitter, toggling the hold over a whole gap.
            k_hi = max(1, int(SAMPLE_RATE / 2.0 / f0[i] - 0.5))
            last = min(int(round(k_hi * width)), SPECTRUM_BINS - 1)
            env[i, last:] = env[i, last]
    return np.maximum(env.T, POWER_FLOOR)


def _warp(omega: np.ndarray, alpha: float) -> np.ndarray:
    return omega + 2.0 * np.arctan2(alpha * np.sin(omega), 1.0 - alpha * np.cos(omega))


_OMEGA = np.linspace(0.0, np.pi, SPECTRUM_BINS)
# Sampling points in natural frequency for the warped-grid envelope.
_UNWARPED_AT = _warp(_OMEGA, -WARP_ALPHA)


def _decode_matrix(order: int) -> np.ndarray:
    warped = _warp(_OMEGA, WARP_ALPHA)
    return np.cos(np.outer(warped, np.arange(order)))


_DECODE_24 = _decode_matrix(MCEP_ORDER)


def mcep_encode(envelope: np.ndarray, order: int = MCEP_ORDER) -> np.ndarray:
    """Mel-warped cepstral truncation of a power envelope [bins x T] -> [order x T]."""
    log_amp = 0.5 * np.log(np.maximum(envelope, POWER_FLOOR))
    warped = np.empty_like(log_amp)
    for t in range(log_amp.shape[1]):
        warped[:, t] = np.interp(_UNWARPED_AT, _OMEGA, log_amp[:, t])
    ceps = np.fft.irfft(warped, n=FFT_SIZE, axis=0)[:order]
    ceps[1:] *= 2.0
    return ceps


def mcep_decode(mcep: np.ndarray) -> np.ndarray:
    """Log-amplitude envelope [SPECTRUM_BINS x T] from mel-cepstra [order x T]."""
    order = mcep.shape[0]
    matrix = _DECODE_24 if order == MCEP_ORDER else _decode_matrix(order)
    return matrix @ mcep


_BAND_EDGES = [1, 128, 256, 384, SPECTRUM_BINS]  # DC excluded from band 1


def _band_signals(x: np.ndarray) -> np.ndarray:
    """[AP_BANDS x n] zero-phase band-filtered copies via full-signal FFT masks."""
    spec = np.fft.rfft(x)
    edges_hz = np.array(_BAND_EDGES) * (SAMPLE_RATE / FFT_SIZE)
    freqs = np.fft.rfftfreq(x.shape[0], 1.0 / SAMPLE_RATE)
    out = np.empty((AP_BANDS, x.shape[0]))
    for b in range(AP_BANDS):
        mask = (freqs >= edges_hz[b]) & (freqs < edges_hz[b + 1])
        if b == AP_BANDS - 1:
            mask |= freqs >= edges_hz[-1]
        out[b] = np.fft.irfft(spec * mask, n=x.shape[0])
    return out


def band_aperiodicity(x: np.ndarray, f0: np.ndarray) -> np.ndarray:
    """Per-band noise fraction [AP_BANDS x T].

    Each band's normalized autocorrelation at the pitch lag measures how
    periodic that band is over a two-period window; aperiodicity is its
    complement.  The lag is fractional, and interpolating correlation values
    between integer lags breaks down once the band's own oscillation period
    approaches a sample, so the sub-sample part of the lag is applied to the
    segment itself as a spectral phase ramp before correlating.  Unvoiced
    frames are fully aperiodic, and bands holding a negligible share of frame
    energy default to aperiodic.
    """
    t = f0.shape[0]
    ap = np.ones((AP_BANDS, t))
    bands = _band_signals(np.asarray(x, dtype=np.float64))
    frames = np.stack([_framed(bands[b], _F0_SEGMENT, clamp=True) for b in range(AP_BANDS)])
    w = _F0_WINDOW
    seg_ramp = 1j * 2.0 * np.pi * np.arange(_F0_SEGMENT // 2 + 1) / _F0_SEGMENT
    energy = np.sum(frames[:, :, : w + _LAG_MAX] ** 2, axis=2)
    frame_energy = energy.sum(axis=0)
    for i in range(t):
        if f0[i] <= 0:
            continue
        lag = SAMPLE_RATE / f0[i]
        l0 = int(np.floor(lag))
        frac = lag - l0
        for b in range(AP_BANDS):
            if frame_energy[i] <= 0 or energy[b, i] < 1e-7 * frame_energy[i]:
                continue
            seg = frames[b, i]
            base = seg[:w]
            e0 = float(base @ base)
            if frac > 0.0:
                seg = np.fft.irfft(np.fft.rfft(seg) * np.exp(seg_ramp * frac), n=_F0_SEGMENT)
            shifted = seg[l0 : l0 + w]
            el = float(shifted @ shifted)
            if e0 > 0 and el > 0:
                nac = float(base @ shifted) / np.sqrt(e0 * el)
                ap[b, i] = 1.0 - np.clip(nac, 0.0, 1.0)
    return np.clip(ap, 0.001, 1.0)


def analyze(wave: np.ndarray, sample_rate: int = SAMPLE_RATE) -> FeatureSet:
    """Full analysis of a mono 16 kHz waveform into a FeatureSet."""
    if sample_rate != SAMPLE_RATE:
        raise DataError(f"sample rate {sample_rate} unsupported; resample to {SAMPLE_RATE} first")
    x = np.asarray(wave, dtype=np.float64)
    if x.ndim != 1:
        raise DataError(f"expected mono samples, got shape {x.shape}")
    if x.shape[0] < FFT_SIZE:
        raise DataError(f"waveform shorter than one {FFT_SIZE}-sample analysis window")
    f0 = estimate_f0(x)
    env = spectral_envelope(x, f0)
    mcep = mcep_encode(env)
    ap = band_aperiodicity(x, f0)
    features = FeatureSet(f0=f0, mcep=mcep, ap=ap)
    features.validate()
    return features


def _min_phase_angles(log_amp: np.ndarray) -> np.ndarray:
    """Minimum-phase response angles (rfft bins) for a log-amplitude response."""
    ceps = np.fft.irfft(log_amp, n=FFT_SIZE)
    folded = np.zeros(FFT_SIZE)
    folded[0] = ceps[0]
    folded[1 : FFT_SIZE // 2] = 2.0 * ceps[1 : FFT_SIZE // 2]
    folded[FFT_SIZE // 2] = ceps[FFT_SIZE // 2]
    return np.fft.rfft(folded).imag


def _band_profile(ap_column: np.ndarray) -> np.ndarray:
    """Expand 4 band values to a per-bin profile."""
    profile = np.empty(SPECTRUM_BINS)
    profile[: _BAND_EDGES[1]] = ap_column[0]
    for b in range(1, AP_BANDS):
        profile[_BAND_EDGES[b] : _BAND_EDGES[b + 1]] = ap_column[b]
    return profile


def synthesize(features: FeatureSet, seed: int = 0) -> np.ndarray:
    """Rebuild a waveform as a harmonic sinusoid bank plus shaped noise.

    The periodic part is synthesized additively: each harmonic of the running
    fundamental phase gets the amplitude the envelope prescribes at its exact
    frequency, so the line spectrum is reproduced without the sub-sample
    placement error a sampled pulse train would pick up near Nyquist.  The
    harmonics share a fixed minimum-phase offset pattern (from the utterance's
    mean voiced envelope) so each period still looks like a dispersed glottal
    pulse rather than a cosine spike.
    """
    features.validate()
    t_frames = features.frames
    n_out = t_frames * HOP
    log_amp = mcep_decode(features.mcep)

    margin = FFT_SIZE
    buf = np.zeros(n_out + 2 * margin)

    voiced_cols = np.flatnonzero(features.f0 > 0)
    if voiced_cols.size:
        # Per-harmonic amplitude grid: line power a_k^2/2 must integrate to the
        # envelope's smoothed power density over one harmonic spacing delta.
        min_f0 = float(features.f0[voiced_cols].min())
        k_max = max(1, int(np.floor((SAMPLE_RATE / 2) / min_f0)))
        harmonics = np.arange(1, k_max + 1)
        amp_grid = np.zeros((k_max, t_frames))
        for t in voiced_cols:
            freq = harmonics * features.f0[t]
            live = freq < SAMPLE_RATE / 2
            omega = np.pi * freq[live] / (SAMPLE_RATE / 2)
            env = np.exp(2.0 * np.interp(omega, _OMEGA, log_amp[:, t]))
            periodic = 1.0 - np.interp(omega, _OMEGA, _band_profile(features.ap[:, t]))
            delta = FFT_SIZE * features.f0[t] / SAMPLE_RATE
            amp_grid[live, t] = HARMONIC_CAL * 2.0 * np.sqrt(
                delta * env * np.maximum(periodic, 0.0) / FFT_SIZE
            )

        # Fixed dispersion shared by every frame keeps the phase track smooth.
        mean_log_amp = log_amp[:, voiced_cols].mean(axis=1)
        angles = _min_phase_angles(mean_log_amp)

        # Fundamental phase accumulates per sample; harmonic k rides at k
        # times that angle, and amplitudes interpolate linearly between frame
        # centers so frame boundaries do not step.
        frame_of_sample = np.minimum((np.arange(n_out) + HOP // 2) // HOP, t_frames - 1)
        theta = 2.0 * np.pi * np.cumsum(features.f0[frame_of_sample] / SAMPLE_RATE)
        sample_pos = np.arange(n_out) / HOP
        voiced_part = np.zeros(n_out)
        for idx, k in enumerate(harmonics):
            row = amp_grid[idx]
            if not row.any():
                continue
            amp = np.interp(sample_pos, np.arange(t_frames, dtype=float), row)
            phi = np.interp(k * features.f0[frame_of_sample] * np.pi / (SAMPLE_RATE / 2), _OMEGA, angles)
            voiced_part += amp * np.cos(k * theta + phi)
        buf[margin : margin + n_out] += voiced_part

    # Noise component: per-frame white noise shaped by the aperiodic envelope,
    # overlap-added with a Hann window. Independent segments add in power, so
    # the overlap normalization divides by the root of the summed squared window.
    rng = np.random.default_rng(seed)
    noise = np.zeros_like(buf)
    w2 = np.zeros_like(buf)
    for t in range(t_frames):
        noise_amp = np.exp(log_amp[:, t]) * np.sqrt(_band_profile(features.ap[:, t]))
        white = rng.standard_normal(FFT_SIZE)
        shaped = np.fft.irfft(np.fft.rfft(white) * noise_amp, n=FFT_SIZE)
        start = margin + t * HOP - FFT_SIZE // 2
        noise[start : start + FFT_SIZE] += shaped * _HANN
        w2[start : start + FFT_SIZE] += _HANN**2
    buf += NOISE_CAL * noise / np.sqrt(np.maximum(w2, 1e-12))

    return buf[margin : margin + n_out]


def f0_statistics(corpus: Sequence[FeatureSet]) -> F0Stats:
    """Population mean/stddev of log F0 over all voiced frames in the corpus."""
    voiced = np.concatenate([fs.f0[fs.f0 > 0] for fs in corpus]) if corpus else np.array([])
    if voiced.size < 2:
        raise DataError(f"need at least 2 voiced frames for F0 statistics, found {voiced.size}")
    logs = np.log(voiced)
    mu = float(np.mean(logs))
    sigma = float(np.std(logs))
    if sigma <= 0:
        raise DataError("degenerate F0 distribution: zero variance in log F0")
    return F0Stats(mu=mu, sigma=sigma)


def lgn_convert(f0: np.ndarray, src: F0Stats, tgt: F0Stats) -> np.ndarray:
    """Map voiced log-F0 from source statistics onto target statistics."""
    if src.sigma <= 0:
        raise DataError(f"source F0 sigma must be positive, got {src.sigma}")
    out = np.zeros_like(np.asarray(f0, dtype=np.float64))
    voiced = f0 > 0
    out[voiced] = np.exp((np.log(f0[voiced]) - src.mu) / src.sigma * tgt.sigma + tgt.mu)
    return out


def save_features(features: FeatureSet, path) -> None:
    features.validate()
    t = features.frames
    payload = [
        MAGIC,
        struct.pack("<III", t, MCEP_ORDER, AP_BANDS),
        np.ascontiguousarray(features.f0, dtype="<f8").tobytes(),
        np.ascontiguousarray(features.mcep, dtype="<f8").tobytes(),
        np.ascontiguousarray(features.ap, dtype="<f8").tobytes(),
    ]
    Path(path).write_bytes(b"".join(payload))


def load_features(path) -> FeatureSet:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise DataError(f"{path}: not a feature file (bad magic)")
    t, q, bands = struct.unpack("<III", raw[4:16])
    if q != MCEP_ORDER or bands != AP_BANDS:
        raise DataError(f"{path}: unsupported dims Q={q}, bands={bands}")
    need = 16 + 8 * (t + q * t + bands * t)
    if len(raw) != need:
        raise DataError(f"{path}: truncated feature file ({len(raw)} bytes, expected {need})")
    offset = 16
    f0 = np.frombuffer(raw, dtype="<f8", count=t, offset=offset).copy()
    offset += 8 * t
    mcep = np.frombuffer(raw, dtype="<f8", count=q * t, offset=offset).reshape(q, t).copy()
    offset += 8 * q * t
    ap = np.frombuffer(raw, dtype="<f8", count=bands * t, offset=offset).reshape(bands, t).copy()
    features = FeatureSet(f0=f0, mcep=mcep, ap=ap)
    features.validate()
    return features
