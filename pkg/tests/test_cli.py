import json

import numpy as np
import pytest
import yaml

from chirplet_omp import build_grid
from chirplet_omp.cli import EXIT_CONFIG, EXIT_IO, main, preset_path
from chirplet_omp.io import file_sha256, read_scenario, read_setup, read_signal

SMALL = """\
waveform: {carrier_freq: 77e9, bandwidth: 300e6, chirp_duration: 50e-6}
receiver: {sample_rate: 20e6, num_samples: 1000}
targets:
  - {delay: 3.3333333333333335e-07, amplitude: 1.0}
interferers:
  - {slope: 2.0e12, delay: -4.0e-05, amplitude: 20.0}
noise_std: 0.01
rng_seed: 4
mitigation:
  coarse: {slope_hypotheses: 60, time_hypotheses: 400}
  fine: {slope_hypotheses: 20, time_hypotheses: 40}
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.scenario"
    p.write_text(SMALL)
    return p


def _simulate(cfg, out, *extra):
    assert main(["simulate", "--config", str(cfg), "--out", str(out), *extra]) == 0


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_simulate_outputs_and_manifest(tmp_path, small_cfg):
    out = tmp_path / "sim"
    _simulate(small_cfg, out)
    man = _manifest(out)
    assert set(man["outputs"]) == {"signal.csv", "reference.csv"}
    for name, digest in man["outputs"].items():
        assert file_sha256(out / name) == digest
    assert man["seed"] == 4 and man["command"] == "simulate"
    y, ref = read_signal(out / "signal.csv"), read_signal(out / "reference.csv")
    assert y.samples.size == 1000 and np.abs(y.samples).max() > 10 > np.abs(ref.samples).max()


def test_simulate_is_deterministic_and_seedable(tmp_path, small_cfg):
    _simulate(small_cfg, tmp_path / "a")
    _simulate(small_cfg, tmp_path / "b")
    _simulate(small_cfg, tmp_path / "c", "--seed", "5")
    a, b, c = (_manifest(tmp_path / x)["outputs"]["signal.csv"] for x in "abc")
    assert a == b != c


def test_simulate_frames(tmp_path, small_cfg):
    out = tmp_path / "f"
    _simulate(small_cfg, out, "--frames", "3")
    names = sorted(_manifest(out)["outputs"])
    assert names == [f"{s}_{i:03d}.csv" for s in ("reference", "signal") for i in range(3)]


def test_mitigate_and_analyze(tmp_path, small_cfg):
    sim, mit, ana = tmp_path / "sim", tmp_path / "mit", tmp_path / "ana"
    _simulate(small_cfg, sim)
    cache = tmp_path / "grid.npz"
    args = ["mitigate", str(sim / "signal.csv"), "--config", str(small_cfg), "--out", str(mit),
            "--cache", str(cache), "--verbose"]
    assert main(args) == 0
    assert _manifest(mit)["dictionary_cache"] == "written"
    report = yaml.safe_load((mit / "report.yaml").read_text())
    assert report["snir_improvement_db"] > 25 and len(report["detected_interferers"]) >= 1
    assert (mit / "trace.csv").read_text().startswith("stage,iteration")
    first = file_sha256(mit / "clean.csv")

    again = tmp_path / "mit2"
    assert main(args[:4] + ["--out", str(again), "--cache", str(cache)]) == 0
    assert _manifest(again)["dictionary_cache"] == "hit"
    assert file_sha256(again / "clean.csv") == first

    assert main(["analyze", str(sim / "signal.csv"), str(mit / "clean.csv"), "--reference",
                 str(sim / "reference.csv"), "--config", str(small_cfg), "--out", str(ana),
                 "--range-axis"]) == 0
    comp = yaml.safe_load((ana / "comparison.yaml").read_text())
    assert comp["snir_delta_db"] == pytest.approx(report["snir_improvement_db"], abs=1e-9)
    assert comp["gap_to_reference_db"] < 5
    assert (ana / "spectrum_reference.csv").read_text().startswith("range_m,power_db")

    bare = tmp_path / "ana2"
    assert main(["analyze", str(sim / "signal.csv"), str(mit / "clean.csv"),
                 "--targets", "2e6", "--out", str(bare)]) == 0
    comp = yaml.safe_load((bare / "comparison.yaml").read_text())
    assert "gap_to_reference_db" not in comp and "reference_snir_db" not in comp
    assert not (bare / "spectrum_reference.csv").exists()


def test_mitigate_several_chirps_in_parallel(tmp_path, small_cfg):
    sim, mit = tmp_path / "sim", tmp_path / "mit"
    _simulate(small_cfg, sim, "--frames", "2")
    files = [str(sim / f"signal_{i:03d}.csv") for i in range(2)]
    assert main(["mitigate", *files, "--config", str(small_cfg), "--out", str(mit),
                 "--frames", "2"]) == 0
    rows = (mit / "reports.csv").read_text().splitlines()
    assert len(rows) == 3 and (mit / "clean_001.csv").exists()


def test_empty_scenario_gives_zeros(tmp_path):
    cfg = tmp_path / "empty.scenario"
    cfg.write_text(SMALL.split("targets:")[0] + "mitigation:\n  coarse: {slope_hypotheses: 10, "
                   "time_hypotheses: 20}\n")
    sim, mit = tmp_path / "sim", tmp_path / "mit"
    _simulate(cfg, sim)
    assert not read_signal(sim / "signal.csv").samples.any()
    assert main(["mitigate", str(sim / "signal.csv"), "--config", str(cfg),
                 "--out", str(mit)]) == 0
    assert not read_signal(mit / "clean.csv").samples.any()
    report = yaml.safe_load((mit / "report.yaml").read_text())
    assert report["detected_interferers"] == [] and report["iterations"]["coarse"] == 0


def test_bench_single_repetition(tmp_path, capsys):
    out = tmp_path / "bench"
    assert main(["bench", "--repetitions", "1", "--out", str(out)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "repetition,omp_s,fine_dictionary_s" and lines[1].startswith("0,")
    summary = json.loads((out / "bench.json").read_text())
    assert summary["num_samples"] == 229 and summary["coarse_grid"] == [20, 300]
    assert summary["fine_grid"] == [20, 100] and summary["repetitions"] == 1


def test_exit_codes(tmp_path, small_cfg, capsys):
    bad = tmp_path / "bad.scenario"
    bad.write_text(SMALL.replace("num_samples: 1000", "num_samples: many"))
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "bad.scenario:2" in capsys.readouterr().err
    assert main(["simulate", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["simulate", "--config", str(small_cfg), "--out", str(tmp_path / "x"),
                 "--frames", "0"]) == EXIT_CONFIG
    assert main(["mitigate", str(tmp_path / "missing.csv"), "--config", str(small_cfg),
                 "--out", str(tmp_path / "y")]) == EXIT_IO
    junk = tmp_path / "junk.csv"
    junk.write_text("hello\n")
    assert main(["mitigate", str(junk), "--config", str(small_cfg),
                 "--out", str(tmp_path / "z")]) == EXIT_IO
    assert main(["simulate", "--config", str(tmp_path / "nope.scenario"),
                 "--out", str(tmp_path / "w")]) == EXIT_IO


def test_fig4_clusters_match_sources(tmp_path):
    sim, mit = tmp_path / "sim", tmp_path / "mit"
    assert main(["simulate", "--config", "fig4", "--out", str(sim)]) == 0
    assert main(["mitigate", str(sim / "signal.csv"), "--config", "fig4",
                 "--out", str(mit)]) == 0
    found = yaml.safe_load((mit / "report.yaml").read_text())["detected_interferers"]
    sc = read_scenario(preset_path("fig4"))
    wf, rx, cfg, _ = read_setup(preset_path("fig4"))
    grid = build_grid(cfg.slope_range, cfg.time_range, cfg.coarse_slope_hypotheses,
                      cfg.coarse_time_hypotheses, rx, wf, cfg.k_min)
    ds, dt = grid.slope_axis.cell, grid.time_axis.cell
    assert len(found) >= 4
    for src in sc.interferers:
        dk = src.slope - wf.slope
        # matching atom: slope -|dk|, starting where the sweep enters the band
        start = min((src.slope * src.delay - rx.cutoff) / dk,
                    (src.slope * src.delay + rx.cutoff) / dk)
        assert any(abs(d["slope"] + abs(dk)) <= ds and abs(d["time_shift"] - start) <= dt
                   for d in found), src
