"""Reduced chirplet dictionary over (time-shift, slope) hypotheses.

Every atom starts at the receiver cutoff ``f_r = f_s/2`` and sweeps with slope
``k`` for ``min(2 f_r / |k|, T)`` seconds, i.e. until it has crossed the whole
receiver band.  Only the start time and the slope are free, which is what
makes the dictionary small enough to search exhaustively.

Atoms are stored as rows of a sparse complex matrix ``exp(1j * psi)``; the
real part is the cosine (quadrature) waveform and the imaginary part the
sine (in-phase) waveform.  Fitting both jointly is what lets a real-valued
atom absorb the unknown interference phase.

Because the start frequency is exactly Nyquist, the sampled atoms with slope
``+k`` and ``-k`` span the same sine/cosine plane.  The default slope range is
therefore one-sided (down-chirps from ``f_r``).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import EmptySupport, EmptyWindow, InvalidRange, SlopeTooSmall
from .signal_model import ReceiverConfig, SampledSignal, WaveformParams, gate_indices

# Default upper slope bound: the shortest atom spans this many samples.
DEFAULT_MIN_ATOM_SAMPLES = 8

_EDGE_TOL = 1e-9


def default_min_slope(receiver: ReceiverConfig, waveform: WaveformParams) -> float:
    """``2 f_r / (N / f_s)``: the slowest atom crosses the band in exactly the sampled window.

    Slower atoms would be cut by the window edges, and such partial chirps
    correlate with beat tones strongly enough to be picked on clean signals.
    """
    return 2 * receiver.cutoff * receiver.sample_rate / receiver.num_samples


def default_max_slope(receiver: ReceiverConfig,
                      min_samples: float = DEFAULT_MIN_ATOM_SAMPLES) -> float:
    return 2 * receiver.cutoff * receiver.sample_rate / min_samples


def default_slope_range(receiver, waveform) -> tuple[float, float]:
    return (-default_max_slope(receiver), -default_min_slope(receiver, waveform))


def default_time_range(receiver, waveform, slope_range=None, k_min=None) -> tuple[float, float]:
    """``[-longest atom duration, T]``: every atom overlapping the chirp is covered."""
    if slope_range is None:
        slope_range = default_slope_range(receiver, waveform)
    if k_min is None:
        k_min = default_min_slope(receiver, waveform)
    lo, hi = slope_range
    slowest = k_min if lo <= 0 <= hi else min(abs(lo), abs(hi))
    longest = min(2 * receiver.cutoff / max(slowest, k_min), waveform.chirp_duration)
    return (-longest, waveform.chirp_duration)


@dataclass(frozen=True)
class ChirpletAtom:
    time_shift: float
    slope: float
    duration: float
    start_freq: float


@dataclass
class AtomWaveforms:
    in_phase: SampledSignal
    quadrature: SampledSignal
    norm: np.ndarray  # Euclidean norms of (in_phase, quadrature)


def atom_duration(k_kappa: float, receiver: ReceiverConfig, waveform: WaveformParams,
                  k_min: float | None = None) -> float:
    """``min(|2 f_r / k|, T)``: time for a chirp of slope ``k`` to cross the receiver band."""
    if k_min is None:
        k_min = default_min_slope(receiver, waveform)
    if abs(k_kappa) < k_min or k_kappa == 0:
        raise SlopeTooSmall(f"|slope| {abs(k_kappa):g} below minimum {k_min:g} Hz/s")
    return min(abs(2 * receiver.cutoff / k_kappa), waveform.chirp_duration)


def make_atom(time_shift, slope, receiver, waveform, k_min=None) -> ChirpletAtom:
    return ChirpletAtom(float(time_shift), float(slope),
                        atom_duration(slope, receiver, waveform, k_min), receiver.cutoff)


def _atom_phase(n, shift, slope, fs, fr):
    u = n / fs - shift
    return 2 * np.pi * (fr * u + 0.5 * slope * u * u)


def synthesize_atom(atom: ChirpletAtom, receiver: ReceiverConfig) -> AtomWaveforms:
    """Sine/cosine waveforms of one atom, zero outside ``[T_tau, T_tau + T_dur]``.

    Phase is referenced to the window start, so atoms of equal slope are
    time translates of each other.
    """
    n0, n1 = gate_indices(atom.time_shift, atom.time_shift + atom.duration, receiver)
    if n1 <= n0:
        raise EmptyWindow(
            f"atom window [{atom.time_shift:g}, {atom.time_shift + atom.duration:g}] s "
            "does not overlap the sampled chirp"
        )
    fs = receiver.sample_rate
    psi = _atom_phase(np.arange(n0, n1), atom.time_shift, atom.slope, fs, atom.start_freq)
    s = np.zeros(receiver.num_samples)
    c = np.zeros(receiver.num_samples)
    s[n0:n1] = np.sin(psi)
    c[n0:n1] = np.cos(psi)
    norm = np.array([np.linalg.norm(s), np.linalg.norm(c)])
    return AtomWaveforms(SampledSignal(s, fs), SampledSignal(c, fs), norm)


class _Axis:
    """Hypothesis axis uniform in a warped coordinate ``u``.

    Slopes use ``u = sign(k) * (rho(|k|) - rho(k_min))``, which collapses the
    forbidden band ``(-k_min, k_min)`` to a point, so a range straddling zero
    is covered symmetrically without hypotheses inside the band.  Positions
    are addressed by a (possibly fractional) index, which lets fine grids sit
    on a lattice commensurate with the coarse one.
    """

    def __init__(self, lo, hi, count, spacing="linear", k_min=None, T=None, fr=None):
        self.spacing = spacing
        self.k_min = k_min
        self.T, self.fr = T, fr
        self.lo, self.hi = float(lo), float(hi)
        self.count = int(count)
        self.u_lo, self.u_hi = self.forward(self.lo), self.forward(self.hi)
        self.length = self.u_hi - self.u_lo
        if count > 1:
            self.origin, self.step = 0.0, self.length / (count - 1)
        else:
            self.origin, self.step = self.length / 2, self.length / 2

    # warping of |k| (time axes use the identity)
    def _rho(self, a):
        if self.spacing == "linear":
            return a
        if self.spacing == "inverse":
            return -1.0 / a
        if self.spacing == "resolution":
            kc = 2 * self.fr / self.T
            return np.where(a <= kc, self.T**2 * a,
                            self.T**2 * kc + 4 * self.fr**2 * (1 / kc - 1 / np.maximum(a, kc)))
        raise InvalidRange(f"unknown spacing {self.spacing!r}")

    def _rho_inv(self, r):
        if self.spacing == "linear":
            return r
        if self.spacing == "inverse":
            return -1.0 / r
        kc = 2 * self.fr / self.T
        rc = self.T**2 * kc
        with np.errstate(divide="ignore"):
            fast = 1.0 / np.maximum(1 / kc - (r - rc) / (4 * self.fr**2), 1e-300)
        return np.where(r <= rc, r / self.T**2, fast)

    def forward(self, k):
        k = np.asarray(k, dtype=float)
        if self.k_min is None:
            return k * 1.0
        r0 = self._rho(np.asarray(self.k_min, dtype=float))
        return np.sign(k) * (self._rho(np.abs(k)) - r0)

    def inverse(self, u):
        u = np.asarray(u, dtype=float)
        if self.k_min is None:
            return u * 1.0
        r0 = self._rho(np.asarray(self.k_min, dtype=float))
        mag = self._rho_inv(np.abs(u) + r0)
        negative = (u < 0) | ((u == 0) & (self.hi < 0))
        return np.where(negative, -mag, mag)

    @property
    def cell(self) -> float:
        """Hypothesis spacing in value units (linear axes) or at the range start."""
        if self.count < 2:
            return self.hi - self.lo
        return float(abs(self.at(1) - self.at(0)))

    def local_cell(self, index) -> np.ndarray:
        index = np.asarray(index, dtype=float)
        return np.abs(self.at(index + 0.5) - self.at(index - 0.5))

    def at(self, index) -> np.ndarray:
        return self.inverse(self.u_lo + self.origin + np.asarray(index, dtype=float) * self.step)

    def inside(self, index, tol=1e-9) -> np.ndarray:
        c = self.origin + np.asarray(index, dtype=float) * self.step
        return (c >= -tol * max(self.length, 1e-300)) & (c <= self.length * (1 + tol) + 1e-300)

    def values(self) -> np.ndarray:
        return self.at(np.arange(self.count))

    def to_dict(self):
        return {"range": [self.lo, self.hi], "count": self.count, "spacing": self.spacing,
                "k_min": self.k_min}


def _slope_axis(slope_range, count, k_min, spacing="linear", receiver=None,
                waveform=None) -> _Axis:
    lo, hi = map(float, slope_range)
    if not lo <= hi:
        raise InvalidRange(f"empty slope range {slope_range}")
    if -k_min < lo and hi < k_min:
        raise InvalidRange(
            f"slope range {slope_range} lies inside the forbidden band (-{k_min:g}, {k_min:g})"
        )
    if -k_min < lo < k_min:
        lo = k_min
    if -k_min < hi < k_min:
        hi = -k_min
    T = waveform.chirp_duration if waveform is not None else None
    fr = receiver.cutoff if receiver is not None else None
    return _Axis(lo, hi, count, spacing, k_min, T, fr)


def _time_axis(time_range, count) -> _Axis:
    lo, hi = map(float, time_range)
    if not lo <= hi:
        raise InvalidRange(f"empty time range {time_range}")
    return _Axis(lo, hi, count)


def _assemble(slopes, shifts, durations, receiver):
    """Sparse complex atom matrix (one row per atom) and per-row Gram entries."""
    fs, N, fr = receiver.sample_rate, receiver.num_samples, receiver.cutoff
    n0 = np.ceil(shifts * fs - _EDGE_TOL).astype(np.int64)
    n1 = np.floor((shifts + durations) * fs + _EDGE_TOL).astype(np.int64) + 1
    n0 = np.clip(n0, 0, N)
    n1 = np.clip(n1, n0, N)
    lengths = n1 - n0
    indptr = np.zeros(len(slopes) + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    nnz = int(indptr[-1])
    row = np.repeat(np.arange(len(slopes)), lengths)
    cols = np.arange(nnz, dtype=np.int64) - np.repeat(indptr[:-1], lengths) + n0[row]
    psi = _atom_phase(cols, shifts[row], slopes[row], fs, fr)
    data = np.exp(1j * psi)
    matrix = sp.csr_matrix((data, cols, indptr), shape=(len(slopes), N))
    return matrix


def _gram(matrix: sp.csr_matrix) -> np.ndarray:
    """Per-row ``[<s,s>, <c,c>, <s,c>]`` for the sine (imag) and cosine (real) parts."""
    d = matrix.data
    parts = np.stack([d.imag * d.imag, d.real * d.real, d.imag * d.real])
    counts = np.diff(matrix.indptr)
    rows = np.repeat(np.arange(matrix.shape[0]), counts)
    out = np.zeros((matrix.shape[0], 3))
    for j in range(3):
        out[:, j] = np.bincount(rows, weights=parts[j], minlength=matrix.shape[0])
    return out


class DictionaryGrid:
    """Immutable set of chirplet hypotheses together with their sampled waveforms.

    For grids made by :func:`build_grid`, atom ``i`` has slope index
    ``i // time_hypotheses`` and time index ``i % time_hypotheses``.  Refined
    grids are unions of local patches; they keep the coarse axes and record
    every atom's (fractional) position on them in ``coords``.
    """

    def __init__(self, slopes, shifts, receiver, waveform, k_min, *, slope_axis=None,
                 time_axis=None, slope_hypotheses=None, time_hypotheses=None,
                 coords=None, lattice=(1, 1), rectangular=False, matrix=None, gram=None,
                 filter_taps=None):
        self.slopes = np.asarray(slopes, dtype=float)
        self.shifts = np.asarray(shifts, dtype=float)
        self.receiver = receiver
        self.waveform = waveform
        self.k_min = float(k_min)
        self.slope_axis = slope_axis
        self.time_axis = time_axis
        self.slope_hypotheses = slope_hypotheses
        self.time_hypotheses = time_hypotheses
        self.rectangular = rectangular
        self.lattice = tuple(lattice)
        if coords is None and rectangular:
            coords = np.stack(np.divmod(np.arange(self.slopes.size), time_hypotheses), axis=1)
        self.coords = None if coords is None else np.asarray(coords, dtype=float)
        self.durations = np.minimum(2 * receiver.cutoff / np.abs(self.slopes),
                                    waveform.chirp_duration)
        if matrix is None:
            matrix = _assemble(self.slopes, self.shifts, self.durations, receiver)
        self.matrix = matrix
        self.gram = _gram(matrix) if gram is None else gram
        self.filter_taps = None if filter_taps is None else np.asarray(filter_taps, dtype=float)
        for arr in (self.slopes, self.shifts, self.durations, self.gram, self.coords):
            if arr is not None:
                arr.setflags(write=False)

    def _derive(self, **changes) -> "DictionaryGrid":
        kw = dict(slope_axis=self.slope_axis, time_axis=self.time_axis,
                  slope_hypotheses=self.slope_hypotheses, time_hypotheses=self.time_hypotheses,
                  coords=self.coords, lattice=self.lattice, rectangular=self.rectangular,
                  matrix=self.matrix, gram=self.gram, filter_taps=self.filter_taps)
        kw.update(changes)
        return DictionaryGrid(self.slopes, self.shifts, self.receiver, self.waveform,
                              self.k_min, **kw)

    def cells(self, i: int) -> tuple[float, float]:
        """Local (slope, time) spacing around atom ``i`` in Hz/s and s."""
        ks, kt = self.coords[i]
        ls, lt = self.lattice
        return (float(self.slope_axis.local_cell(ks)) / ls,
                float(self.time_axis.local_cell(kt)) / lt)

    def __len__(self):
        return self.slopes.size

    @property
    def num_atoms(self) -> int:
        return self.slopes.size

    @property
    def slope_range(self):
        return (float(self.slopes.min()), float(self.slopes.max()))

    @property
    def time_range(self):
        return (float(self.shifts.min()), float(self.shifts.max()))

    @property
    def is_rectangular(self) -> bool:
        return self.rectangular

    def index(self, slope_index: int, time_index: int) -> int:
        if not self.is_rectangular:
            raise TypeError("index() needs a rectangular grid")
        return slope_index * self.time_hypotheses + time_index

    def unravel(self, i: int) -> tuple[int, int]:
        if not self.is_rectangular:
            raise TypeError("unravel() needs a rectangular grid")
        return divmod(int(i), self.time_hypotheses)

    def atom(self, i: int) -> ChirpletAtom:
        return ChirpletAtom(float(self.shifts[i]), float(self.slopes[i]),
                            float(self.durations[i]), self.receiver.cutoff)

    @property
    def atoms(self) -> list[ChirpletAtom]:
        return [self.atom(i) for i in range(len(self))]

    def columns(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Dense (sine, cosine) waveforms of atom ``i`` as stored (filtered if applicable)."""
        row = self.matrix.getrow(int(i)).toarray().ravel()
        return row.imag.copy(), row.real.copy()

    def waveforms(self, i: int) -> AtomWaveforms:
        s, c = self.columns(i)
        fs = self.receiver.sample_rate
        norm = np.sqrt(self.gram[i, :2])
        return AtomWaveforms(SampledSignal(s, fs), SampledSignal(c, fs), norm)

    @property
    def norms(self) -> np.ndarray:
        """``(M, 2)`` Euclidean norms of the sine and cosine columns."""
        return np.sqrt(self.gram[:, :2])

    def parameters(self) -> dict:
        """JSON-able description of everything that determines the atom waveforms."""
        return {
            "receiver": {"sample_rate": self.receiver.sample_rate,
                         "num_samples": self.receiver.num_samples},
            "waveform": {"carrier_freq": self.waveform.carrier_freq,
                         "bandwidth": self.waveform.bandwidth,
                         "chirp_duration": self.waveform.chirp_duration},
            "k_min": self.k_min,
            "slope_axis": self.slope_axis.to_dict() if self.slope_axis else None,
            "time_axis": self.time_axis.to_dict() if self.time_axis else None,
            "num_atoms": len(self),
            "atoms_sha1": hashlib.sha1(
                np.concatenate([self.slopes, self.shifts]).tobytes()).hexdigest(),
            "filter_taps": None if self.filter_taps is None else self.filter_taps.tolist(),
        }

    def cache_key(self) -> str:
        blob = json.dumps(self.parameters(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def build_grid(slope_range, time_range, slope_hypotheses: int, time_hypotheses: int,
               receiver: ReceiverConfig, waveform: WaveformParams,
               k_min: float | None = None, spacing: str = "linear") -> DictionaryGrid:
    """Uniform ``slope_hypotheses x time_hypotheses`` grid, time index varying fastest.

    A slope range that straddles zero has the band ``(-k_min, k_min)`` cut out
    and the hypotheses spread uniformly over what remains.  A single
    hypothesis sits at the range midpoint.
    """
    if slope_hypotheses < 1 or time_hypotheses < 1:
        raise InvalidRange("need at least one slope and one time hypothesis")
    if k_min is None:
        k_min = default_min_slope(receiver, waveform)
    if slope_range is None:
        slope_range = default_slope_range(receiver, waveform)
    if time_range is None:
        time_range = default_time_range(receiver, waveform, slope_range, k_min)
    s_axis = _slope_axis(slope_range, slope_hypotheses, k_min, spacing, receiver, waveform)
    t_axis = _time_axis(time_range, time_hypotheses)
    slopes = np.repeat(s_axis.values(), time_hypotheses)
    shifts = np.tile(t_axis.values(), slope_hypotheses)
    return DictionaryGrid(slopes, shifts, receiver, waveform, k_min, slope_axis=s_axis,
                          time_axis=t_axis, slope_hypotheses=slope_hypotheses,
                          time_hypotheses=time_hypotheses, rectangular=True)


def _fine_offsets(count: int) -> tuple[np.ndarray, int]:
    """Integer lattice offsets of a fine patch and lattice points per coarse cell."""
    if count == 1:
        return np.array([0]), 1
    if count % 2:
        half = (count - 1) // 2
        return np.arange(-half, half + 1), half
    half = count // 2
    return np.arange(-half, half), half


def refine_grid(coarse_result, coarse_grid: DictionaryGrid, slope_hypotheses_fine: int,
                time_hypotheses_fine: int) -> DictionaryGrid:
    """Fine grids spanning one coarse cell either side of every selected coarse atom.

    Fine points live on a lattice commensurate with the coarse grid, so
    patches around neighbouring detections share points and duplicates are
    dropped.  Slopes are kept inside the coarse slope range.
    """
    support = list(getattr(coarse_result, "support", coarse_result))
    if not support:
        raise EmptySupport("coarse search selected no atoms")
    if not coarse_grid.is_rectangular:
        raise TypeError("refine_grid needs a grid produced by build_grid")
    s_off, s_per = _fine_offsets(slope_hypotheses_fine)
    t_off, t_per = _fine_offsets(time_hypotheses_fine)
    keys = []
    for i in support:
        ks, kt = coarse_grid.unravel(i)
        ss = ks * s_per + s_off
        tt = kt * t_per + t_off
        keys.append(np.stack(np.meshgrid(ss, tt, indexing="ij"), axis=-1).reshape(-1, 2))
    keys = np.concatenate(keys)
    # keep first occurrence, preserving patch order
    _, first = np.unique(keys, axis=0, return_index=True)
    keys = keys[np.sort(first)]
    s_idx = keys[:, 0] / s_per
    t_idx = keys[:, 1] / t_per
    keep = coarse_grid.slope_axis.inside(s_idx)
    s_idx, t_idx = s_idx[keep], t_idx[keep]
    slopes = coarse_grid.slope_axis.at(s_idx)
    shifts = coarse_grid.time_axis.at(t_idx)
    ok = np.abs(slopes) >= coarse_grid.k_min * (1 - 1e-12)
    fine = DictionaryGrid(
        slopes[ok], shifts[ok], coarse_grid.receiver, coarse_grid.waveform, coarse_grid.k_min,
        slope_axis=coarse_grid.slope_axis, time_axis=coarse_grid.time_axis,
        slope_hypotheses=slope_hypotheses_fine, time_hypotheses=time_hypotheses_fine,
        coords=np.stack([s_idx[ok], t_idx[ok]], axis=1), lattice=(s_per, t_per),
    )
    if coarse_grid.filter_taps is not None:
        fine = filter_dictionary(fine, coarse_grid.filter_taps)
    return fine


def convolution_matrix(taps, num_samples: int) -> sp.csr_matrix:
    """Sparse ``N x N`` operator of centred ('same') FIR convolution, matching :func:`apply_fir`."""
    taps = np.asarray(taps, dtype=float)
    c = (taps.size - 1) // 2
    offsets = [c - j for j in range(taps.size)]
    keep = [j for j, off in enumerate(offsets) if abs(off) < num_samples]
    return sp.diags([np.full(num_samples - abs(offsets[j]), taps[j]) for j in keep],
                    [offsets[j] for j in keep], shape=(num_samples, num_samples),
                    format="csr")


def apply_fir(x, taps) -> np.ndarray:
    """Centred FIR filtering: output sample ``n`` aligned with input sample ``n``."""
    x = np.asarray(x, dtype=float)
    taps = np.asarray(taps, dtype=float)
    c = (taps.size - 1) // 2
    return np.convolve(x, taps, mode="full")[c:c + x.size]


def filter_dictionary(grid: DictionaryGrid, filter) -> DictionaryGrid:
    """Pass every atom through the FIR filter used on the measurements; norms recomputed."""
    taps = np.asarray(getattr(filter, "taps", filter), dtype=float)
    H = convolution_matrix(taps, grid.receiver.num_samples)
    matrix = (grid.matrix @ H.T).tocsr()
    matrix.sort_indices()
    prior = grid.filter_taps
    combined = taps if prior is None else np.convolve(prior, taps)
    out = grid._derive(matrix=matrix, gram=None, filter_taps=combined)
    return out
