"""
Several interferers at once
===========================

Four radars disturb one chirp: three chirps with different slopes, two of
which overlap in time, and a continuous-wave source whose sweep entered the
band before the chirp started.  The report groups the fitted atoms into
clusters, one per interferer.

Run with ``python demos/several_interferers.py``.
"""

# %%
from chirplet_omp import mitigate, synthesize_scenario
from chirplet_omp.cli import preset_path
from chirplet_omp.io import read_scenario, read_setup

path = preset_path("fig4")
scenario = read_scenario(path)
waveform, receiver, config, beats = read_setup(path)
y = synthesize_scenario(scenario)

# %%
clean, report = mitigate(y, waveform, receiver, config, target_beats=beats)
print("SNIR improvement %.1f dB, %d clusters reported"
      % (report.snir_improvement, len(report.detected_interferers)))

# %%
# Each cluster is described by its strongest atom.  Atom slopes are one-sided
# (down-chirps), so compare them with ``-|k_i - k|``.
print("%-12s %-10s %-8s %s" % ("slope", "start us", "atoms", "energy"))
for d in report.detected_interferers:
    print("%-12.3g %-10.2f %-8d %.0f" % (d.slope, d.time_shift * 1e6, d.atoms, d.energy))
print()
for src in scenario.interferers:
    dk = src.slope - waveform.slope
    start = min((src.slope * src.delay - receiver.cutoff) / dk,
                (src.slope * src.delay + receiver.cutoff) / dk)
    print("truth: slope %.3g, start %.2f us" % (-abs(dk), start * 1e6))
