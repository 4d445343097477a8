"""Shared fixtures.

Every ``omp_run`` call made anywhere in the suite is recorded so the
residual-monotonicity criterion can be checked across all runs, and the
acceptance suite's verdict lines are printed in the terminal summary.
"""

import functools
import warnings

import numpy as np
import pytest

import chirplet_omp
import chirplet_omp.cli
import chirplet_omp.omp
import chirplet_omp.pipeline

OMP_HISTORIES: list = []
ACCEPTANCE_LINES: dict = {}

_original_omp_run = chirplet_omp.omp.omp_run


@functools.wraps(_original_omp_run)
def _recording_omp_run(*args, **kwargs):
    result = _original_omp_run(*args, **kwargs)
    OMP_HISTORIES.append(list(result.residual_energy_history))
    return result


for _mod in (chirplet_omp, chirplet_omp.omp, chirplet_omp.pipeline, chirplet_omp.cli):
    _mod.omp_run = _recording_omp_run


def monotonicity_violations():
    bad = []
    for i, h in enumerate(OMP_HISTORIES):
        d = np.diff(h)
        if np.any(d > 0):
            bad.append((i, float(d.max())))
    return bad


def record(criterion: int, passed: bool, detail: str):
    ACCEPTANCE_LINES[criterion] = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    bad = monotonicity_violations()
    tr = terminalreporter
    if ACCEPTANCE_LINES:
        tr.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            tr.write_line(ACCEPTANCE_LINES[k])
    tr.section("residual monotonicity (whole suite)")
    tr.write_line(f"{len(OMP_HISTORIES)} OMP runs recorded, {len(bad)} with an increasing "
                  f"residual energy")


def pytest_sessionfinish(session, exitstatus):
    if monotonicity_violations() and session.exitstatus == 0:
        session.exitstatus = 1


@pytest.fixture(scope="session")
def small_setup():
    """A compact waveform/receiver pair for fast unit tests (N = 128)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        wf = chirplet_omp.WaveformParams(77e9, 200e6, 12.8e-6)
    rx = chirplet_omp.ReceiverConfig(10e6, 128)
    return wf, rx


@pytest.fixture(scope="session")
def fig_setup():
    wf = chirplet_omp.WaveformParams(77e9, 300e6, 100e-6)
    rx = chirplet_omp.ReceiverConfig(20e6, 2000)
    return wf, rx


@pytest.fixture(scope="session")
def fig_coarse_grid(fig_setup):
    wf, rx = fig_setup
    return chirplet_omp.pipeline.prepare_coarse_grid(wf, rx, chirplet_omp.MitigationConfig())
