"""Real-valued baseband model of an FMCW receiver under FMCW/CW interference.

After mixing with the reference chirp a target echo becomes a tone at the
beat frequency ``k * tau``, while an interfering chirp with a different slope
becomes a baseband chirp of slope ``k_i - k``.  The anti-alias filter (an
ideal low-pass at ``f_s / 2``) only lets the interference through while its
instantaneous frequency stays inside the receiver band, so each interferer
is a time-limited chirp.  The ideal filter is modelled analytically by gating
the closed-form interference, not by digital filtering.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ChirpletError, DegenerateSlope

AUTOMOTIVE_BAND = (76e9, 81e9)

# Sample-index tolerance used when deciding whether t_n sits on a gate edge.
_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class WaveformParams:
    """Transmit chirp: carrier ``f_c``, bandwidth ``B``, duration ``T``, slope ``k = B/T``."""

    carrier_freq: float
    bandwidth: float
    chirp_duration: float
    slope: float | None = None

    def __post_init__(self):
        if not self.bandwidth > 0 or not self.chirp_duration > 0:
            raise ChirpletError("bandwidth and chirp_duration must be positive")
        k = self.bandwidth / self.chirp_duration
        if self.slope is None:
            object.__setattr__(self, "slope", k)
        elif not math.isclose(self.slope, k, rel_tol=1e-9):
            raise ChirpletError(
                f"slope {self.slope:g} inconsistent with B/T = {k:g} Hz/s"
            )
        lo, hi = AUTOMOTIVE_BAND
        if not lo <= self.carrier_freq <= hi:
            warnings.warn(
                f"carrier {self.carrier_freq:g} Hz outside the 76-81 GHz automotive band",
                stacklevel=3,
            )


@dataclass(frozen=True)
class ReceiverConfig:
    """ADC sampling: ``num_samples`` at ``sample_rate``; ideal anti-alias cutoff at ``f_s/2``."""

    sample_rate: float
    num_samples: int

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ChirpletError("sample_rate must be positive")
        if int(self.num_samples) != self.num_samples or self.num_samples < 2:
            raise ChirpletError("num_samples must be an integer >= 2")
        object.__setattr__(self, "num_samples", int(self.num_samples))

    @property
    def cutoff(self) -> float:
        return self.sample_rate / 2

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.num_samples) / self.sample_rate

    @property
    def bin_width(self) -> float:
        """DFT frequency resolution ``f_s / N``."""
        return self.sample_rate / self.num_samples

    def check_fits(self, waveform: WaveformParams) -> None:
        window = self.num_samples / self.sample_rate
        if window > waveform.chirp_duration * (1 + 1e-9):
            raise ChirpletError(
                f"{self.num_samples} samples at {self.sample_rate:g} Hz span {window:g} s, "
                f"longer than the chirp ({waveform.chirp_duration:g} s)"
            )


@dataclass(frozen=True)
class TargetEcho:
    delay: float
    amplitude: float

    def __post_init__(self):
        if self.delay < 0:
            raise ChirpletError("target delay must be >= 0")
        if not self.amplitude > 0:
            raise ChirpletError("target amplitude must be > 0")

    def beat_frequency(self, waveform: WaveformParams) -> float:
        return waveform.slope * self.delay


@dataclass(frozen=True)
class InterferenceSource:
    """Interfering FMCW (or CW, ``slope=0``) transmitter as seen by the victim radar."""

    slope: float
    delay: float
    amplitude: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise ChirpletError("interferer amplitude must be >= 0")


@dataclass
class SampledSignal:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise ChirpletError("samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise ChirpletError("samples must be finite")

    def __len__(self):
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) / self.sample_rate

    def energy(self) -> float:
        return float(np.dot(self.samples, self.samples))


@dataclass
class Scenario:
    waveform: WaveformParams
    receiver: ReceiverConfig
    targets: list[TargetEcho] = field(default_factory=list)
    interferers: list[InterferenceSource] = field(default_factory=list)
    noise_std: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        self.receiver.check_fits(self.waveform)
        if self.noise_std < 0:
            raise ChirpletError("noise_std must be >= 0")
        for tgt in self.targets:
            fb = tgt.beat_frequency(self.waveform)
            if fb >= self.receiver.cutoff:
                warnings.warn(
                    f"target beat frequency {fb:g} Hz is above the receiver cutoff "
                    f"{self.receiver.cutoff:g} Hz and would be filtered out",
                    stacklevel=3,
                )

    def without_interference(self) -> "Scenario":
        return Scenario(
            self.waveform, self.receiver, list(self.targets), [], self.noise_std, self.rng_seed
        )


def gate_indices(t_start: float, t_end: float, receiver: ReceiverConfig) -> tuple[int, int]:
    """Half-open sample range ``[n0, n1)`` of samples with ``t_start <= n/f_s <= t_end``."""
    fs = receiver.sample_rate
    n0 = math.ceil(t_start * fs - _EDGE_TOL)
    n1 = math.floor(t_end * fs + _EDGE_TOL) + 1
    n0 = min(max(n0, 0), receiver.num_samples)
    n1 = min(max(n1, n0), receiver.num_samples)
    return n0, n1


def _target_phase(waveform, target, t, extra_phase=0.0):
    k, tau = waveform.slope, target.delay
    const = math.fmod(2 * math.pi * waveform.carrier_freq * tau, 2 * math.pi)
    return math.pi * k * (tau**2 - 2 * t * tau) + const + extra_phase


def target_baseband(
    waveform: WaveformParams, target: TargetEcho, receiver: ReceiverConfig
) -> SampledSignal:
    """Beat tone ``P_t sin(pi k (tau^2 - 2 t tau) + 2 pi f_c tau)`` sampled on ``t_n = n/f_s``."""
    t = receiver.times
    return SampledSignal(target.amplitude * np.sin(_target_phase(waveform, target, t)),
                         receiver.sample_rate)


def interference_support(
    waveform: WaveformParams, interferer: InterferenceSource, receiver: ReceiverConfig
) -> tuple[float, float]:
    """Time interval in which the baseband interference passes the anti-alias filter.

    The instantaneous frequency ``(k_i - k) t - k_i tau_i`` must stay within
    ``[-f_r, f_r]``.  The interval is clipped to the chirp ``[0, T]``; an
    empty interval is returned as ``(t, t)`` with ``t`` the clipped endpoint.
    When ``k_i == k`` the interference is a constant tone and the whole chirp
    is returned (with a :class:`DegenerateSlope` warning).
    """
    T = waveform.chirp_duration
    dk = interferer.slope - waveform.slope
    if dk == 0:
        warnings.warn("interferer slope equals radar slope; support is the whole chirp",
                      DegenerateSlope, stacklevel=2)
        return 0.0, T
    fr = receiver.cutoff
    ki_tau = interferer.slope * interferer.delay
    a, b = sorted(((ki_tau - fr) / dk, (ki_tau + fr) / dk))
    a, b = min(max(a, 0.0), T), min(max(b, 0.0), T)
    return a, max(a, b)


def interference_baseband(
    waveform: WaveformParams, interferer: InterferenceSource, receiver: ReceiverConfig
) -> SampledSignal:
    """Gated baseband interference chirp; exactly zero outside :func:`interference_support`."""
    out = np.zeros(receiver.num_samples)
    if interferer.amplitude == 0:
        return SampledSignal(out, receiver.sample_rate)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSlope)
        t0, t1 = interference_support(waveform, interferer, receiver)
    dk = interferer.slope - waveform.slope
    ki, tau = interferer.slope, interferer.delay
    if dk == 0 and abs(ki * tau) > receiver.cutoff:
        # constant tone outside the pass band never reaches the ADC
        return SampledSignal(out, receiver.sample_rate)
    if t1 <= t0 and dk != 0:
        return SampledSignal(out, receiver.sample_rate)
    n0, n1 = gate_indices(t0, t1, receiver)
    t = np.arange(n0, n1) / receiver.sample_rate
    const = math.fmod(2 * math.pi * waveform.carrier_freq * tau, 2 * math.pi)
    phase = math.pi * (dk * t**2 - 2 * ki * t * tau + ki * tau**2) + const
    out[n0:n1] = interferer.amplitude * np.sin(phase)
    return SampledSignal(out, receiver.sample_rate)


def instantaneous_frequency(
    waveform: WaveformParams, interferer: InterferenceSource, t: np.ndarray
) -> np.ndarray:
    """Baseband instantaneous frequency of an (ungated) interferer at times ``t``."""
    return (interferer.slope - waveform.slope) * np.asarray(t) - interferer.slope * interferer.delay


def synthesize_scenario(scenario: Scenario) -> SampledSignal:
    """Sum of all target tones, gated interferers and seeded white Gaussian noise."""
    wf, rx = scenario.waveform, scenario.receiver
    y = np.zeros(rx.num_samples)
    for tgt in scenario.targets:
        y += target_baseband(wf, tgt, rx).samples
    for intf in scenario.interferers:
        y += interference_baseband(wf, intf, rx).samples
    if scenario.noise_std > 0:
        rng = np.random.default_rng(scenario.rng_seed)
        y += scenario.noise_std * rng.standard_normal(rx.num_samples)
    return SampledSignal(y, rx.sample_rate)


def doppler_chirps(
    scenario: Scenario, num_chirps: int, phase_steps: list[float]
) -> list[SampledSignal]:
    """Repeat a scenario over ``num_chirps`` chirps with a per-chirp target phase rotation.

    ``phase_steps[j]`` is the phase increment (rad/chirp) applied to target
    ``j``, mimicking the slow-time Doppler phase.  Interferers repeat
    unchanged; noise uses seed ``rng_seed + m`` for chirp ``m``.
    """
    if len(phase_steps) != len(scenario.targets):
        raise ChirpletError("need one phase step per target")
    wf, rx = scenario.waveform, scenario.receiver
    t = rx.times
    interference = np.zeros(rx.num_samples)
    for intf in scenario.interferers:
        interference += interference_baseband(wf, intf, rx).samples
    chirps = []
    for m in range(num_chirps):
        y = interference.copy()
        for tgt, step in zip(scenario.targets, phase_steps):
            y += tgt.amplitude * np.sin(_target_phase(wf, tgt, t, m * step))
        if scenario.noise_std > 0:
            rng = np.random.default_rng(scenario.rng_seed + m)
            y += scenario.noise_std * rng.standard_normal(rx.num_samples)
        chirps.append(SampledSignal(y, rx.sample_rate))
    return chirps
