"""Synthetic paired corpus for desk-scale experiments.

Real bone-conduction corpora are external recordings; this module fabricates
sample-synchronous AC/BC pairs instead.  The air-conducted side is syllabic
pseudo-speech: bursts of harmonic stacks shaped by vowel-like formant
resonances, separated by short pauses, with per-syllable pitch and gain
variation so the signal has the temporal modulation that intelligibility
measures rely on.  The bone-conducted side is the same waveform through a
zero-phase lowpass with a -34 dB stopband, mimicking the strong
high-frequency attenuation of skull transmission while keeping the pair
aligned to the sample.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from bcenhance import vocoder

# (center Hz, bandwidth Hz) triples roughly matching open/close/front/back vowels
FORMANT_PRESETS = (
    ((730, 90), (1090, 110), (2440, 140)),
    ((270, 60), (2290, 210), (3010, 240)),
    ((300, 70), (870, 100), (2240, 180)),
    ((530, 80), (1840, 150), (2480, 200)),
    ((570, 80), (840, 100), (2410, 190)),
)

LOWPASS_PASS_HZ = 800.0
LOWPASS_STOP_HZ = 1600.0
LOWPASS_FLOOR = 0.02  # residual HF transmission, -34 dB


def generate_utterance(seed, seconds: float = 1.4, amp: float = 0.3) -> np.ndarray:
    """Air-conducted pseudo-speech: syllabic harmonic bursts at 16 kHz."""
    rng = np.random.default_rng(seed)
    sr = vocoder.SAMPLE_RATE
    n = int(seconds * sr)
    x = np.zeros(n)
    pos = 0
    while pos < n - sr // 20:
        dur = min(int(rng.uniform(0.14, 0.22) * sr), n - pos)
        f0 = rng.uniform(120.0, 230.0)
        gain = rng.uniform(0.4, 1.0)
        formants = FORMANT_PRESETS[rng.integers(len(FORMANT_PRESETS))]
        tt = np.arange(dur) / sr
        seg = np.zeros(dur)
        k = 1
        while k * f0 < sr / 2:
            f = k * f0
            g = 0.01
            for fc, bw in formants:
                g += 1.0 / (1.0 + ((f - fc) / (2.5 * bw)) ** 2)
            g *= np.exp(-f / 3000.0)
            seg += g * np.cos(2 * np.pi * f * tt + rng.uniform(0.0, 2.0 * np.pi))
            k += 1
        ramp = min(320, dur // 4)
        window = np.ones(dur)
        window[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        window[-ramp:] = window[:ramp][::-1]
        seg *= window * gain / np.max(np.abs(seg))
        x[pos : pos + dur] += seg
        pos += dur + int(rng.uniform(0.04, 0.09) * sr)
    return amp * x / np.max(np.abs(x))


def bone_conduct(wave: np.ndarray) -> np.ndarray:
    """Zero-phase lowpass: unity below 800 Hz, raised-cosine to -34 dB by 1.6 kHz."""
    spec = np.fft.rfft(wave)
    freq = np.fft.rfftfreq(wave.shape[0], 1.0 / vocoder.SAMPLE_RATE)
    gain = np.full(freq.shape, LOWPASS_FLOOR)
    gain[freq <= LOWPASS_PASS_HZ] = 1.0
    slope = (freq > LOWPASS_PASS_HZ) & (freq < LOWPASS_STOP_HZ)
    phase = (freq[slope] - LOWPASS_PASS_HZ) / (LOWPASS_STOP_HZ - LOWPASS_PASS_HZ)
    gain[slope] = LOWPASS_FLOOR + (1.0 - LOWPASS_FLOOR) * 0.5 * (1.0 + np.cos(np.pi * phase))
    return np.fft.irfft(spec * gain, n=wave.shape[0])


def write_corpus(dataset_dir, count: int = 2, seed: int = 0, seconds: float = 1.4) -> list:
    """Write dataset_dir/{ac,bc}/utt###.wav pairs; returns the utterance ids."""
    root = Path(dataset_dir)
    (root / "ac").mkdir(parents=True, exist_ok=True)
    (root / "bc").mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(count):
        ac = generate_utterance([seed, i], seconds)
        bc = bone_conduct(ac)
        utt = f"utt{i:03d}"
        vocoder.write_wav(root / "ac" / f"{utt}.wav", ac)
        vocoder.write_wav(root / "bc" / f"{utt}.wav", bc)
        ids.append(utt)
    return ids
