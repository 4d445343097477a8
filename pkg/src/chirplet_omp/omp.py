"""Orthogonal Matching Pursuit over paired sine/cosine chirplet atoms.

Each iteration picks the atom whose sine/cosine plane captures the most
residual energy, appends its two columns to an incrementally maintained QR
factorisation, refits all coefficients by least squares and recomputes the
residual ``r = y - E w``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ChirpletError, LengthMismatch, RankDeficient
from .signal_model import SampledSignal

log = logging.getLogger(__name__)

# Relative size of the orthogonal component below which a column adds no rank.
RANK_TOL = 1e-7
# Relative det(G) below which a sine/cosine pair is treated as one direction.
_PAIR_DEGENERATE = 1e-12


@dataclass
class OmpConfig:
    max_iterations: int = 100
    energy_variation_threshold: float = 0.01
    absolute_residual_threshold: float | None = 1e-6
    normalized: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ChirpletError("max_iterations must be >= 1")
        if not 0 < self.energy_variation_threshold < 1:
            raise ChirpletError("energy_variation_threshold must lie in (0, 1)")
        if self.absolute_residual_threshold is not None and not (
                0 < self.absolute_residual_threshold < 1):
            raise ChirpletError("absolute_residual_threshold must lie in (0, 1)")


@dataclass
class OmpResult:
    support: list[int]
    coefficients: np.ndarray  # complex; contribution is Im(w * exp(1j*psi))
    residual: SampledSignal
    reconstruction: SampledSignal
    iterations_run: int
    residual_energy_history: list[float]
    stop_reason: str
    trace: list[dict] = field(default_factory=list, repr=False)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.abs(self.coefficients)

    @property
    def phases(self) -> np.ndarray:
        return np.angle(self.coefficients)


def _samples(y) -> tuple[np.ndarray, float | None]:
    if isinstance(y, SampledSignal):
        return y.samples, y.sample_rate
    return np.asarray(y, dtype=float), None


def correlation_scores(grid, residual, normalized: bool = True) -> np.ndarray:
    """Per-atom quadrature correlation ``sqrt(<s,r>^2 + <c,r>^2)`` (optionally normalised).

    Normalised scores are the norm of the projection of ``r`` onto each atom's
    sine/cosine plane, which reduces to the plain quadrature correlation over
    the column norm when the two columns are orthogonal with equal norms.
    """
    r, _ = _samples(residual)
    if r.size != grid.receiver.num_samples:
        raise LengthMismatch(f"residual has {r.size} samples, grid expects "
                             f"{grid.receiver.num_samples}")
    z = grid.matrix @ r
    b, a = z.real, z.imag  # <cos, r>, <sin, r>
    if not normalized:
        return np.hypot(a, b)
    ss, cc, sc = grid.gram.T
    tot = ss + cc
    det = ss * cc - sc * sc
    with np.errstate(divide="ignore", invalid="ignore"):
        plane = (cc * a * a - 2 * sc * a * b + ss * b * b) / det
        line = (a * a + b * b) / tot
    energy = np.where(det > _PAIR_DEGENERATE * tot * tot, plane, line)
    energy = np.where(tot > 0, energy, 0.0)
    return np.sqrt(np.maximum(energy, 0.0))


def correlate_select(grid, residual, normalized: bool = True) -> int:
    """Index of the atom best correlated with ``residual``; lowest index on ties."""
    return int(np.argmax(correlation_scores(grid, residual, normalized)))


class IncrementalQR:
    """Thin QR of a growing column set, one column appended at a time.

    Uses Gram-Schmidt with one re-orthogonalisation pass, which keeps ``Q``
    orthonormal to working precision.
    """

    def __init__(self, num_rows: int, capacity: int = 16):
        self.n = num_rows
        self.m = 0
        self._Q = np.zeros((num_rows, capacity))
        self._R = np.zeros((capacity, capacity))

    @property
    def Q(self):
        return self._Q[:, :self.m]

    @property
    def R(self):
        return self._R[:self.m, :self.m]

    def _grow(self):
        cap = self._Q.shape[1] * 2
        Q = np.zeros((self.n, cap))
        R = np.zeros((cap, cap))
        Q[:, :self.m] = self.Q
        R[:self.m, :self.m] = self.R
        self._Q, self._R = Q, R

    def append(self, v: np.ndarray, tol: float = RANK_TOL) -> bool:
        """Append ``v``; return False (and leave the factorisation unchanged) if dependent."""
        vnorm = np.linalg.norm(v)
        if vnorm == 0:
            return False
        Q = self.Q
        h = Q.T @ v
        w = v - Q @ h
        h2 = Q.T @ w
        w -= Q @ h2
        h += h2
        rho = np.linalg.norm(w)
        if rho <= tol * vnorm:
            return False
        if self.m == self._Q.shape[1]:
            self._grow()
        self._Q[:, self.m] = w / rho
        self._R[:self.m, self.m] = h
        self._R[self.m, self.m] = rho
        self.m += 1
        return True

    def truncate(self, m: int):
        self._Q[:, m:self.m] = 0
        self._R[:, m:self.m] = 0
        self._R[m:self.m, :] = 0
        self.m = m

    def solve(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Least-squares coefficients and the projection ``Q Q^T y``."""
        qty = self.Q.T @ y
        coef = solve_triangular(self.R, qty) if self.m else np.zeros(0)
        return coef, self.Q @ qty


class _PairedFit:
    """Least-squares fit over atoms realised as (sine, cosine) column pairs."""

    def __init__(self, num_rows):
        self.qr = IncrementalQR(num_rows)
        self.layout: list[tuple[int, int]] = []  # (atom slot, 0=sine / 1=cosine)

    def add(self, s: np.ndarray, c: np.ndarray) -> bool:
        slot = len({a for a, _ in self.layout})
        added = []
        for part, col in ((0, s), (1, c)):
            if self.qr.append(col):
                added.append((slot, part))
        if not added:
            return False
        self.layout.extend(added)
        return True

    def drop_last_atom(self):
        slot = self.layout[-1][0]
        keep = [x for x in self.layout if x[0] != slot]
        self.qr.truncate(len(keep))
        self.layout = keep

    def solve(self, y, num_atoms):
        beta, projection = self.qr.solve(y)
        w = np.zeros(num_atoms, dtype=complex)
        for (slot, part), b in zip(self.layout, beta):
            if part == 0:
                w[slot] += b
            else:
                w[slot] += 1j * b
        return w, projection


def least_squares_fit(selected_atoms, y) -> np.ndarray:
    """Complex coefficients ``w`` minimising ``||y - sum_j Im(w_j exp(1j psi_j))||``.

    ``w_j = beta_sin + 1j * beta_cos``, so ``|w_j|`` is the fitted amplitude and
    ``angle(w_j)`` its phase relative to the sine atom.  Within an atom a
    column that is a multiple of its partner is ignored; an atom that adds
    no new direction at all raises :class:`RankDeficient`.
    """
    y, _ = _samples(y)
    fit = _PairedFit(y.size)
    for j, atom in enumerate(selected_atoms):
        s, c = _samples(atom.in_phase)[0], _samples(atom.quadrature)[0]
        if s.size != y.size or c.size != y.size:
            raise LengthMismatch("atom and measurement lengths differ")
        if not fit.add(s, c):
            raise RankDeficient(f"atom {j} is linearly dependent on the previous atoms")
    w, _ = fit.solve(y, len(selected_atoms))
    return w


def omp_run(grid, y, config: OmpConfig | None = None, verbose: bool = False) -> OmpResult:
    """Greedy sparse decomposition of ``y`` over ``grid``.

    Stops when the iteration budget is used up, when the residual energy
    drops below ``absolute_residual_threshold`` times the input energy, or
    when the newest atom reduces the residual energy by less than
    ``energy_variation_threshold`` of its previous value.  In the last case
    the newest atom is discarded.  A rank-deficient selection also ends the
    run with the support it had before.
    """
    config = config or OmpConfig()
    ys, fs = _samples(y)
    if fs is None:
        fs = grid.receiver.sample_rate
    if ys.size != grid.receiver.num_samples:
        raise LengthMismatch(f"signal has {ys.size} samples, grid expects "
                             f"{grid.receiver.num_samples}")
    if not np.all(np.isfinite(ys)):
        raise ChirpletError("signal contains non-finite samples")

    e0 = float(ys @ ys)
    history = [e0]
    support: list[int] = []
    w = np.zeros(0, dtype=complex)
    residual = ys.copy()
    reconstruction = np.zeros_like(ys)
    trace = []
    fit = _PairedFit(ys.size)
    reason = "max_iterations"

    if e0 == 0:
        reason = "residual_threshold"
    else:
        while len(support) < config.max_iterations:
            scores = correlation_scores(grid, residual, config.normalized)
            m = int(np.argmax(scores))
            if scores[m] <= 1e-14 * math.sqrt(history[-1]):
                reason = "exhausted"
                break
            if m in support:
                reason = "reselected"
                break
            s, c = grid.columns(m)
            if not fit.add(s, c):
                reason = "rank_deficient"
                break
            w_new, proj = fit.solve(ys, len(support) + 1)
            r_new = ys - proj
            e_new = float(r_new @ r_new)
            drop = (history[-1] - e_new) / history[-1]
            if verbose:
                trace.append({"iteration": len(support) + 1, "atom": m,
                              "slope": float(grid.slopes[m]), "time_shift": float(grid.shifts[m]),
                              "score": float(scores[m]), "residual_energy": e_new,
                              "relative_decrease": drop})
            if drop < config.energy_variation_threshold:
                fit.drop_last_atom()
                reason = "energy_variation"
                if verbose:
                    trace[-1]["accepted"] = False
                break
            if verbose:
                trace[-1]["accepted"] = True
            support.append(m)
            w, reconstruction, residual = w_new, proj, r_new
            history.append(e_new)
            if (config.absolute_residual_threshold is not None
                    and e_new <= config.absolute_residual_threshold * e0):
                reason = "residual_threshold"
                break
    log.debug("omp stopped after %d atoms (%s)", len(support), reason)
    return OmpResult(
        support=support,
        coefficients=w,
        residual=SampledSignal(residual, fs),
        reconstruction=SampledSignal(reconstruction, fs),
        iterations_run=len(support),
        residual_energy_history=history,
        stop_reason=reason,
        trace=trace,
    )
