"""Static figure rendering: training loss curves and spectrogram comparisons.

Everything here takes plain arrays or parsed records and writes image files;
no figure is ever shown interactively (the Agg backend is forced so the
functions work in headless runs).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from bcenhance import vocoder
from bcenhance.errors import DataError

SPECTROGRAM_FLOOR_DB = -100.0


def plot_loss_curves(records, path) -> Path:
    """Render per-iteration loss components from parsed log records.

    Parameters
    ----------
    records : sequence of LossRecord
        Parsed loss-log rows, in iteration order.
    path : path-like
        Output image file (format from the extension).
    """
    records = list(records)
    if not records:
        raise DataError("cannot plot an empty loss log")
    iterations = [r.iteration for r in records]
    series = (
        ("adversarial (classification)", [r.adv_classification for r in records]),
        ("adversarial (defect)", [r.adv_defect for r in records]),
        ("cycle", [r.cycle for r in records]),
        ("identity", [r.identity for r in records]),
        ("total", [r.total for r in records]),
    )
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for label, values in series[:4]:
        top.plot(iterations, values, label=label, linewidth=0.9)
    top.set_ylabel("loss term")
    top.legend(fontsize=8)
    top.grid(True, alpha=0.3)
    bottom.plot(iterations, series[4][1], color="black", linewidth=0.9)
    bottom.set_ylabel("total objective")
    bottom.set_xlabel("iteration")
    bottom.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _power_db(wave: np.ndarray) -> np.ndarray:
    """[bins x frames] envelope power in dB on the shared analysis grid."""
    spectra = vocoder.spectral_envelope(wave, vocoder.estimate_f0(wave))[: vocoder.FFT_SIZE // 2, :]
    return np.maximum(10.0 * np.log10(spectra), SPECTROGRAM_FLOOR_DB)


def plot_spectrograms(panels, path, rate: int = vocoder.SAMPLE_RATE) -> Path:
    """Render stacked spectrogram panels (e.g. BC / enhanced / AC).

    Parameters
    ----------
    panels : sequence of (title, waveform)
        Waveforms at ``rate``; one image row per entry, shared color scale.
    path : path-like
        Output image file.
    rate : int
        Sample rate of the waveforms.
    """
    panels = list(panels)
    if not panels:
        raise DataError("no waveforms to plot")
    grids = [(title, _power_db(np.asarray(wave, dtype=np.float64))) for title, wave in panels]
    vmax = max(float(g.max()) for _, g in grids)
    vmin = vmax - 80.0
    fig, axes = plt.subplots(len(grids), 1, figsize=(8, 2.6 * len(grids)), squeeze=False)
    frame_s = vocoder.FRAME_SHIFT_MS / 1000.0
    for ax, (title, grid) in zip(axes[:, 0], grids):
        image = ax.imshow(
            grid,
            origin="lower",
            aspect="auto",
            cmap="magma",
            vmin=vmin,
            vmax=vmax,
            extent=(0.0, grid.shape[1] * frame_s, 0.0, rate / 2.0 / 1000.0),
        )
        ax.set_title(title, fontsize=9)
        ax.set_ylabel("kHz")
        fig.colorbar(image, ax=ax, label="dB")
    axes[-1, 0].set_xlabel("time (s)")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
