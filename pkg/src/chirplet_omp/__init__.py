"""Blind FMCW radar interference mitigation by OMP over a reduced chirplet dictionary."""

from .analysis import (RangeSpectrum, SnirEstimate, beat_bins, compare_runs, mean_snir,
                       range_spectrum, snir_estimate)
from .dictionary import (AtomWaveforms, ChirpletAtom, DictionaryGrid, apply_fir, atom_duration,
                         build_grid, filter_dictionary, make_atom, refine_grid, synthesize_atom)
from .errors import (ChirpletError, ConfigError, DegenerateSlope, EmptySupport, EmptyWindow,
                     InvalidCutoff, InvalidRange, LengthMismatch, RankDeficient, SlopeTooSmall)
from .omp import OmpConfig, OmpResult, correlate_select, least_squares_fit, omp_run
from .pipeline import (FilterCoeffs, MitigationConfig, MitigationReport, design_highpass,
                       mitigate)
from .signal_model import (InterferenceSource, ReceiverConfig, SampledSignal, Scenario,
                           TargetEcho, WaveformParams, interference_baseband,
                           interference_support, synthesize_scenario, target_baseband)

__version__ = "0.1.0"
