"""Range spectra and SNIR bookkeeping for before/after comparisons."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

from .errors import ChirpletError, LengthMismatch
from .signal_model import SampledSignal, WaveformParams

SPEED_OF_LIGHT = 299_792_458.0
# dB value reported for bins with zero power.
FLOOR_DB = -300.0
GUARD_CELLS = 3


@dataclass
class RangeSpectrum:
    power_db: np.ndarray
    bin_freqs: np.ndarray
    window: str
    range_axis: np.ndarray | None = None

    def __len__(self):
        return self.power_db.size

    @property
    def power(self) -> np.ndarray:
        return 10.0 ** (self.power_db / 10.0)


@dataclass
class SnirEstimate:
    target_bins: list[int]
    signal_power: float
    noise_plus_interference_floor: float
    snir: float


@dataclass
class Comparison:
    per_bin_delta: np.ndarray
    snir_before: float
    snir_after: float
    snir_delta: float
    gap_to_reference: float | None = None
    reference_snir: float | None = None


def range_spectrum(signal, window: str = "hann",
                   waveform: WaveformParams | None = None) -> RangeSpectrum:
    """One-sided power spectrum in dB, compensated for the window's coherent gain.

    Bin powers are scaled so that with a rectangular window they sum to the
    signal energy; a tone centred on a bin reads the same peak power for any
    window.
    """
    x = signal.samples if isinstance(signal, SampledSignal) else np.asarray(signal, float)
    fs = signal.sample_rate if isinstance(signal, SampledSignal) else 1.0
    n = x.size
    if n < 2:
        raise ChirpletError("need at least two samples")
    w = np.ones(n) if window in (None, "rect", "boxcar", "rectangular") else \
        get_window(window, n, fftbins=False)
    gain = w.sum() / n
    X = np.fft.rfft(x * w)
    p = np.abs(X) ** 2 / (n * gain**2)
    p[1:] *= 2
    if n % 2 == 0:
        p[-1] /= 2
    with np.errstate(divide="ignore"):
        db = np.where(p > 0, 10 * np.log10(np.maximum(p, 1e-300)), FLOOR_DB)
    db = np.maximum(db, FLOOR_DB)
    freqs = np.fft.rfftfreq(n, 1 / fs)
    rng = freqs * SPEED_OF_LIGHT / (2 * waveform.slope) if waveform is not None else None
    return RangeSpectrum(db, freqs, window or "rect", rng)


def beat_bins(beat_freq: float, spectrum: RangeSpectrum, spread: int = 1) -> list[int]:
    """Bins within ``spread`` of the bin nearest to ``beat_freq``."""
    df = spectrum.bin_freqs[1] - spectrum.bin_freqs[0]
    k = int(round(abs(beat_freq) / df))
    return [b for b in range(k - spread, k + spread + 1) if 0 <= b < len(spectrum)]


def _excluded(bins, n, guard):
    mask = np.zeros(n, dtype=bool)
    for b in bins:
        mask[max(b - guard, 0):b + guard + 1] = True
    return mask


def snir_estimate(spectrum: RangeSpectrum, target_bins, guard: int = GUARD_CELLS,
                  exclude_bins=None) -> SnirEstimate:
    """Peak power over ``target_bins`` against the median of all other bins.

    Bins within ``guard`` of any target bin (and of ``exclude_bins``, e.g.
    other targets) are left out of the floor.
    """
    target_bins = [int(b) for b in target_bins]
    n = len(spectrum)
    if not target_bins or min(target_bins) < 0 or max(target_bins) >= n:
        raise ChirpletError("target bins outside spectrum")
    mask = _excluded(list(target_bins) + list(exclude_bins or []), n, guard)
    if mask.all():
        raise ChirpletError("no bins left for the floor estimate")
    signal = float(spectrum.power_db[target_bins].max())
    floor = float(np.median(spectrum.power_db[~mask]))
    return SnirEstimate(target_bins, signal, floor, signal - floor)


def mean_snir(spectrum: RangeSpectrum, targets, guard: int = GUARD_CELLS) -> float:
    """Average SNIR over several targets (each a list of bins); all targets leave the floor."""
    every = [b for bins in targets for b in bins]
    return float(np.mean([snir_estimate(spectrum, bins, guard, every).snir for bins in targets]))


def compare_runs(before: RangeSpectrum, after: RangeSpectrum,
                 reference: RangeSpectrum | None = None, target_bins=None,
                 guard: int = GUARD_CELLS) -> Comparison:
    """Per-bin change, SNIR change and, with a clean reference, the gap at the target peak.

    ``target_bins`` is a list of bins or a list of per-target bin lists; SNIR
    figures are averaged over targets.  ``gap_to_reference`` is the largest
    absolute peak-power difference between ``after`` and ``reference`` at the
    targets.
    """
    if len(before) != len(after) or (reference is not None and len(reference) != len(after)):
        raise LengthMismatch("spectra have different lengths")
    if target_bins is None:
        raise ChirpletError("target_bins required")
    targets = [list(t) for t in target_bins] if np.ndim(target_bins[0]) else [list(target_bins)]
    delta = after.power_db - before.power_db
    sb, sa = mean_snir(before, targets, guard), mean_snir(after, targets, guard)
    gap = ref_snir = None
    if reference is not None:
        gap = max(abs(float(after.power_db[t].max() - reference.power_db[t].max()))
                  for t in targets)
        ref_snir = mean_snir(reference, targets, guard)
    return Comparison(delta, sb, sa, sa - sb, gap, ref_snir)
