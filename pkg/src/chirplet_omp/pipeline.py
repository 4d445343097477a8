"""Blind two-stage interference mitigation.

A coarse OMP pass over the whole (time-shift, slope) plane finds where
interference is likely; fine grids around every coarse detection are then
searched from scratch on the same input, and the fine reconstruction is
subtracted.  When a high-pass is configured, the measurement and every
dictionary atom go through the same filter.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import kaiserord

from .analysis import beat_bins, mean_snir, range_spectrum
from .dictionary import (DictionaryGrid, apply_fir, build_grid, default_min_slope,
                         filter_dictionary, refine_grid)
from .errors import ChirpletError, InvalidCutoff, LengthMismatch
from .omp import OmpConfig, OmpResult, omp_run
from .signal_model import ReceiverConfig, SampledSignal, WaveformParams


@dataclass
class FilterCoeffs:
    taps: np.ndarray
    cutoff: float
    transition_width: float
    sample_rate: float
    design: str = "kaiser windowed-sinc, spectral inversion"

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=float)
        if self.taps.size < 1:
            raise ChirpletError("filter needs at least one tap")

    @property
    def dc_gain(self) -> float:
        return float(self.taps.sum())

    def apply(self, x) -> np.ndarray:
        return apply_fir(x, self.taps)


def design_highpass(cutoff: float, transition_width: float, receiver: ReceiverConfig,
                    attenuation_db: float = 60.0) -> FilterCoeffs:
    """Linear-phase (odd length) FIR high-pass by Kaiser-windowed sinc and spectral inversion.

    The low-pass prototype is normalised to unit DC gain before inversion, so
    the high-pass has zero gain at DC up to rounding.
    """
    fr = receiver.cutoff
    if not 0 < cutoff < fr:
        raise InvalidCutoff(f"cutoff {cutoff:g} Hz must lie in (0, {fr:g})")
    if not transition_width > 0:
        raise InvalidCutoff("transition_width must be positive")
    numtaps, beta = kaiserord(attenuation_db, transition_width / fr)
    numtaps |= 1
    n = np.arange(numtaps) - (numtaps - 1) / 2
    fc = cutoff / receiver.sample_rate
    lowpass = 2 * fc * np.sinc(2 * fc * n) * np.kaiser(numtaps, beta)
    lowpass /= lowpass.sum()
    taps = -lowpass
    taps[(numtaps - 1) // 2] += 1.0
    return FilterCoeffs(taps, cutoff, transition_width, receiver.sample_rate)


@dataclass
class MitigationConfig:
    coarse_slope_hypotheses: int = 200
    coarse_time_hypotheses: int = 600
    slope_range: tuple[float, float] | None = None
    time_range: tuple[float, float] | None = None
    fine_slope_hypotheses: int = 40
    fine_time_hypotheses: int = 40
    coarse_omp: OmpConfig = field(default_factory=OmpConfig)
    # the fine stage mops up sub-cell mismatch, so it runs longer and stops later
    fine_omp: OmpConfig = field(default_factory=lambda: OmpConfig(
        max_iterations=300, energy_variation_threshold=3e-4))
    highpass: FilterCoeffs | None = None
    k_min: float | None = None
    slope_spacing: str = "linear"
    # clusters with less than this fraction of the strongest cluster's energy are not reported
    min_cluster_energy: float = 0.01


@dataclass
class DetectedInterferer:
    slope: float
    time_shift: float
    duration: float
    amplitude: float
    phase: float
    atoms: int = 1
    energy: float = 0.0


@dataclass
class MitigationReport:
    detected_interferers: list[DetectedInterferer]
    snir_before: float
    snir_after: float
    snir_improvement: float
    residual_energy_ratio: float
    iterations: dict
    wall_time: float
    stage_times: dict = field(default_factory=dict)
    target_bins: list = field(default_factory=list)
    coarse_result: OmpResult | None = field(default=None, repr=False)
    fine_result: OmpResult | None = field(default=None, repr=False)
    fine_grid: DictionaryGrid | None = field(default=None, repr=False)


def prepare_coarse_grid(waveform: WaveformParams, receiver: ReceiverConfig,
                        config: MitigationConfig) -> DictionaryGrid:
    """Coarse dictionary for ``config``, filtered when a high-pass is configured."""
    k_min = config.k_min if config.k_min is not None else default_min_slope(receiver, waveform)
    grid = build_grid(config.slope_range, config.time_range, config.coarse_slope_hypotheses,
                      config.coarse_time_hypotheses, receiver, waveform, k_min,
                      config.slope_spacing)
    if config.highpass is not None:
        grid = filter_dictionary(grid, config.highpass)
    return grid


def atom_energies(result: OmpResult, grid: DictionaryGrid) -> np.ndarray:
    """Energy of each fitted component ``Im(w exp(1j psi))`` of ``result``."""
    if not result.support:
        return np.zeros(0)
    ss, cc, sc = grid.gram[result.support].T
    bs, bc = result.coefficients.real, result.coefficients.imag
    return bs * bs * ss + bc * bc * cc + 2 * bs * bc * sc


def cluster_detections(result: OmpResult, grid: DictionaryGrid, radius: float = 1.0,
                       min_energy: float = 0.0) -> list[DetectedInterferer]:
    """Group selected atoms lying within ``radius`` coarse cells of a stronger atom.

    Distances are measured on the coarse hypothesis axes (``grid.coords``),
    so "one cell" means the same thing for fast and slow chirps.  Atoms are
    ranked by fitted energy; clusters are returned strongest first, described
    by their strongest atom, and dropped when their total energy is below
    ``min_energy`` times that of the strongest cluster.
    """
    energy = atom_energies(result, grid)
    order = np.argsort(-energy, kind="stable")
    coords = grid.coords
    clusters: list[tuple[int, list[int]]] = []
    for j in order:
        a = result.support[j]
        for lead, members in clusters:
            b = result.support[lead]
            if np.all(np.abs(coords[a] - coords[b]) <= radius + 1e-9):
                members.append(j)
                break
        else:
            clusters.append((j, [j]))
    amps, phases = result.amplitudes, result.phases
    out = []
    for lead, members in clusters:
        i = result.support[lead]
        out.append(DetectedInterferer(float(grid.slopes[i]), float(grid.shifts[i]),
                                      float(grid.durations[i]), float(amps[lead]),
                                      float(phases[lead]), len(members),
                                      float(energy[members].sum())))
    out.sort(key=lambda d: -d.energy)
    if out and min_energy > 0:
        top = out[0].energy
        out = [d for d in out if d.energy >= min_energy * top]
    return out


def _blind_targets(spectrum):
    return [[int(np.argmax(spectrum.power_db[1:]) + 1)]]


def mitigate(y, waveform: WaveformParams, receiver: ReceiverConfig,
             config: MitigationConfig | None = None, *, target_beats=None,
             coarse_grid: DictionaryGrid | None = None, verbose: bool = False):
    """Remove chirp-like interference from one chirp of baseband samples.

    Returns ``(clean, report)``.  ``clean`` is in the filtered domain when a
    high-pass is configured.  ``target_beats`` (beat frequencies in Hz) tells
    the report where to measure SNIR; without it the strongest peak of the
    cleaned spectrum is used.  A prebuilt ``coarse_grid`` skips dictionary
    construction.
    """
    config = config or MitigationConfig()
    t_start = time.perf_counter()
    samples = y.samples if isinstance(y, SampledSignal) else np.asarray(y, dtype=float)
    if samples.size != receiver.num_samples:
        raise LengthMismatch(f"signal has {samples.size} samples, receiver expects "
                             f"{receiver.num_samples}")
    fs = receiver.sample_rate
    stage_times = {}

    if config.highpass is not None:
        work = SampledSignal(config.highpass.apply(samples), fs)
    else:
        work = y if isinstance(y, SampledSignal) else SampledSignal(samples, fs)

    t0 = time.perf_counter()
    if coarse_grid is None:
        coarse_grid = prepare_coarse_grid(waveform, receiver, config)
    stage_times["coarse_dictionary"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    coarse = omp_run(coarse_grid, work, config.coarse_omp, verbose=verbose)
    stage_times["coarse_omp"] = time.perf_counter() - t0

    fine = fine_grid = None
    detections: list[DetectedInterferer] = []
    if coarse.support:
        t0 = time.perf_counter()
        fine_grid = refine_grid(coarse, coarse_grid, config.fine_slope_hypotheses,
                                config.fine_time_hypotheses)
        stage_times["fine_dictionary"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        fine = omp_run(fine_grid, work, config.fine_omp, verbose=verbose)
        stage_times["fine_omp"] = time.perf_counter() - t0
        detections = cluster_detections(fine, fine_grid,
                                        min_energy=config.min_cluster_energy)

    if fine is not None and fine.support:
        clean = fine.residual
    else:
        clean = work

    before = range_spectrum(work, waveform=waveform)
    after = range_spectrum(clean, waveform=waveform)
    if target_beats is not None:
        targets = [beat_bins(fb, before) for fb in target_beats]
    else:
        targets = _blind_targets(after)
    snir_before = mean_snir(before, targets)
    snir_after = mean_snir(after, targets)
    e_in = work.energy()
    report = MitigationReport(
        detected_interferers=detections,
        snir_before=snir_before,
        snir_after=snir_after,
        snir_improvement=snir_after - snir_before,
        residual_energy_ratio=clean.energy() / e_in if e_in > 0 else 1.0,
        iterations={"coarse": coarse.iterations_run,
                    "fine": fine.iterations_run if fine is not None else 0},
        wall_time=time.perf_counter() - t_start,
        stage_times=stage_times,
        target_bins=targets,
        coarse_result=coarse,
        fine_result=fine,
        fine_grid=fine_grid,
    )
    return clean, report
