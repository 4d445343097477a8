"""
Transmitter leakage and the high-pass
=====================================

Real front ends leak the transmit chirp into the receiver, which shows up as
a strong DC and low-frequency component.  It dwarfs the interference, so no
single atom explains enough of the total energy and OMP stops before it
starts.  A high-pass applied to both the measurement and every dictionary
atom removes the leakage first.

Run with ``python demos/leakage_highpass.py``.
"""

# %%
import numpy as np

from chirplet_omp import (MitigationConfig, SampledSignal, design_highpass, mitigate,
                          synthesize_scenario)
from chirplet_omp.cli import preset_path
from chirplet_omp.io import read_scenario, read_setup

path = preset_path("fig3")
scenario = read_scenario(path)
waveform, receiver, config, beats = read_setup(path)
t = receiver.times
leak = 40 + 25 * np.sin(2 * np.pi * 30e3 * t) + 10 * np.sin(2 * np.pi * 80e3 * t)
y = SampledSignal(synthesize_scenario(scenario).samples + leak, receiver.sample_rate)

# %%
# Design the filter: cutoff 300 kHz, 200 kHz transition, 60 dB stop band.
hp = design_highpass(300e3, 200e3, receiver)
print("%d taps, DC gain %.1e" % (hp.taps.size, hp.dc_gain))

# %%
# With the filter the measurement and the dictionary live in the filtered
# domain, and the clean output does too.
filtered_cfg = MitigationConfig(**{**config.__dict__, "highpass": hp})
_, plain = mitigate(y, waveform, receiver, config, target_beats=beats)
_, filtered = mitigate(y, waveform, receiver, filtered_cfg, target_beats=beats)
print("without high-pass: %.1f dB after, %d coarse iterations"
      % (plain.snir_after, plain.iterations["coarse"]))
print("with high-pass:    %.1f dB after, %d coarse iterations"
      % (filtered.snir_after, filtered.iterations["coarse"]))
