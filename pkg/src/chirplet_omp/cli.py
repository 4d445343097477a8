"""Command line front end: ``simulate``, ``mitigate``, ``analyze`` and ``bench``.

Every command writes a ``manifest.json`` next to its outputs.  Exit codes:
0 success, 2 bad configuration, 3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import platform
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from importlib.resources import files
from pathlib import Path

import numpy as np

from . import __version__
from . import io as cio
from .analysis import beat_bins, compare_runs, range_spectrum
from .dictionary import refine_grid
from .errors import ChirpletError, ConfigError, SignalFileError
from .omp import omp_run
from .pipeline import mitigate, prepare_coarse_grid
from .signal_model import doppler_chirps, synthesize_scenario

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("chirplet_omp")


def preset_path(name: str) -> Path:
    """Path of a bundled preset (``fig3``, ``fig4`` or ``bench``)."""
    return Path(str(files("chirplet_omp") / "presets" / f"{name}.scenario"))


def _config_path(arg) -> Path:
    if arg is None:
        raise ConfigError("--config is required")
    p = Path(arg)
    if not p.exists() and not p.suffix and preset_path(arg).exists():
        return preset_path(arg)
    return p


class _Manifest:
    def __init__(self, args, out: Path):
        self.out = out
        self.data = {"command": args.command, "argv": sys.argv[1:], "tool_version": __version__,
                     "python": platform.python_version(), "numpy": np.__version__,
                     "config": None, "inputs": [], "outputs": {}, "seed": None,
                     "timings_s": {}}
        self.t0 = time.perf_counter()

    def output(self, path: Path):
        self.data["outputs"][path.name] = cio.file_sha256(path)

    def write(self):
        self.data["timings_s"]["total"] = time.perf_counter() - self.t0
        cio.write_json(self.out / "manifest.json", self.data)


def _signal_name(i, n, stem="signal"):
    return f"{stem}.csv" if n == 1 else f"{stem}_{i:03d}.csv"


def cmd_simulate(args) -> int:
    cfg = _config_path(args.config)
    scenario = cio.read_scenario(cfg, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = _Manifest(args, out)
    man.data.update(config=str(cfg), seed=scenario.rng_seed)
    t0 = time.perf_counter()
    n = args.frames
    if n == 1:
        signals = [synthesize_scenario(scenario)]
        refs = [synthesize_scenario(scenario.without_interference())]
    else:
        zero = [0.0] * len(scenario.targets)
        signals = doppler_chirps(scenario, n, zero)
        refs = doppler_chirps(scenario.without_interference(), n, zero)
    man.data["timings_s"]["synthesis"] = time.perf_counter() - t0
    for i, (s, r) in enumerate(zip(signals, refs)):
        for sig, stem in ((s, "signal"), (r, "reference")):
            path = out / _signal_name(i, n, stem)
            cio.write_signal(path, sig)
            man.output(path)
    man.write()
    print(f"wrote {2 * n} signal file(s) of {scenario.receiver.num_samples} samples to {out}")
    return EXIT_OK


def _load_grid(args, wf, rx, cfg, man):
    t0 = time.perf_counter()
    grid = None
    tag = cio.setup_key(wf, rx, cfg)
    if args.cache and Path(args.cache).exists():
        try:
            grid = cio.load_grid(args.cache, expected_tag=tag)
            man.data["dictionary_cache"] = "hit"
        except SignalFileError as exc:
            log.info("%s; rebuilding", exc)
    if grid is None:
        grid = prepare_coarse_grid(wf, rx, cfg)
        if args.cache:
            cio.save_grid(args.cache, grid, tag)
            man.data["dictionary_cache"] = "written"
    man.data["timings_s"]["coarse_dictionary"] = time.perf_counter() - t0
    return grid


def cmd_mitigate(args) -> int:
    cfg_path = _config_path(args.config)
    wf, rx, cfg, beats = cio.read_setup(cfg_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = _Manifest(args, out)
    man.data["config"] = str(cfg_path)
    signals = [cio.read_signal(p, None if cio.is_csv(p) else rx.sample_rate)
               for p in args.signals]
    man.data["inputs"] = [str(p) for p in args.signals]
    grid = _load_grid(args, wf, rx, cfg, man)

    def one(y):
        return mitigate(y, wf, rx, cfg, target_beats=beats, coarse_grid=grid,
                        verbose=args.verbose)

    t0 = time.perf_counter()
    workers = max(1, min(args.frames, len(signals)))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, signals))
    else:
        results = [one(y) for y in signals]
    man.data["timings_s"]["mitigation"] = time.perf_counter() - t0
    n = len(signals)
    for i, (clean, rep) in enumerate(results):
        path = out / _signal_name(i, n, "clean")
        cio.write_signal(path, clean)
        man.output(path)
        rpath = out / ("report.yaml" if n == 1 else f"report_{i:03d}.yaml")
        cio.write_report(rpath, rep)
        man.output(rpath)
        if args.verbose:
            tpath = out / ("trace.csv" if n == 1 else f"trace_{i:03d}.csv")
            traces = {"coarse": rep.coarse_result.trace}
            if rep.fine_result is not None:
                traces["fine"] = rep.fine_result.trace
            cio.write_trace(tpath, traces)
            man.output(tpath)
        print(f"chirp {i}: {len(rep.detected_interferers)} interferer(s), SNIR "
              f"{rep.snir_before:.1f} -> {rep.snir_after:.1f} dB "
              f"({rep.snir_improvement:+.1f} dB) in {rep.wall_time:.2f} s")
    rows = out / "reports.csv"
    cio.write_report_rows(rows, [r for _, r in results])
    man.output(rows)
    man.write()
    return EXIT_OK


def _parse_targets(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--targets: expected comma separated beat frequencies, got {text!r}")


def cmd_analyze(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = _Manifest(args, out)
    wf = rx = None
    beats = None
    if args.config:
        cfg_path = _config_path(args.config)
        wf, rx, _, beats = cio.read_setup(cfg_path)
        man.data["config"] = str(cfg_path)
    if args.targets:
        beats = _parse_targets(args.targets)
    fs = rx.sample_rate if rx else None
    read = lambda p: cio.read_signal(p, None if cio.is_csv(p) else fs)  # noqa: E731
    before, after = read(args.before), read(args.after)
    reference = read(args.reference) if args.reference else None
    man.data["inputs"] = [str(p) for p in (args.before, args.after, args.reference) if p]
    spectra = {"before": range_spectrum(before, args.window, wf),
               "after": range_spectrum(after, args.window, wf)}
    if reference is not None:
        spectra["reference"] = range_spectrum(reference, args.window, wf)
    for name, spec in spectra.items():
        path = out / f"spectrum_{name}.csv"
        cio.write_spectrum_csv(path, spec, use_range=args.range_axis)
        man.output(path)
    if beats:
        targets = [beat_bins(fb, spectra["before"]) for fb in beats]
    else:
        targets = [[int(np.argmax(spectra["after"].power_db[1:]) + 1)]]
    comp = compare_runs(spectra["before"], spectra["after"], spectra.get("reference"), targets)
    report = {"target_bins": targets, "snir_before_db": comp.snir_before,
              "snir_after_db": comp.snir_after, "snir_delta_db": comp.snir_delta,
              "max_abs_bin_delta_db": float(np.max(np.abs(comp.per_bin_delta)))}
    if reference is not None:
        report["gap_to_reference_db"] = comp.gap_to_reference
        report["reference_snir_db"] = comp.reference_snir
    path = out / "comparison.yaml"
    cio.write_yaml(path, report)
    man.output(path)
    man.write()
    msg = f"SNIR {comp.snir_before:.1f} -> {comp.snir_after:.1f} dB ({comp.snir_delta:+.1f} dB)"
    if reference is not None:
        msg += f", gap to reference {comp.gap_to_reference:.2f} dB"
    print(msg)
    return EXIT_OK


def bench_once(grid, y, cfg):
    """OMP-only timing of one coarse + fine run; fine dictionary assembly is timed apart."""
    t0 = time.perf_counter()
    coarse = omp_run(grid, y, cfg.coarse_omp)
    t1 = time.perf_counter()
    fine_time = build_time = 0.0
    if coarse.support:
        fine_grid = refine_grid(coarse, grid, cfg.fine_slope_hypotheses,
                                cfg.fine_time_hypotheses)
        t2 = time.perf_counter()
        omp_run(fine_grid, y, cfg.fine_omp)
        fine_time = time.perf_counter() - t2
        build_time = t2 - t1
    return (t1 - t0) + fine_time, build_time


def cmd_bench(args) -> int:
    cfg_path = _config_path(args.config or "bench")
    wf, rx, cfg, _ = cio.read_setup(cfg_path)
    if args.signal:
        y = cio.read_signal(args.signal, None if cio.is_csv(args.signal) else rx.sample_rate)
    else:
        y = synthesize_scenario(cio.read_scenario(cfg_path, args.seed))
    if cfg.highpass is not None:
        y = type(y)(cfg.highpass.apply(y.samples), y.sample_rate)
    out = Path(args.out) if args.out else None
    man = _Manifest(args, out) if out else None
    grid = prepare_coarse_grid(wf, rx, cfg)
    rows = [bench_once(grid, y, cfg) for _ in range(args.repetitions)]
    omp_times = [r[0] for r in rows]
    summary = {"num_samples": rx.num_samples,
               "coarse_grid": [cfg.coarse_slope_hypotheses, cfg.coarse_time_hypotheses],
               "fine_grid": [cfg.fine_slope_hypotheses, cfg.fine_time_hypotheses],
               "repetitions": args.repetitions,
               "omp_median_s": statistics.median(omp_times), "omp_min_s": min(omp_times),
               "omp_max_s": max(omp_times),
               "fine_dictionary_median_s": statistics.median(r[1] for r in rows),
               "reference_anchor_s": 0.07}
    print("repetition,omp_s,fine_dictionary_s")
    for i, (t, b) in enumerate(rows):
        print(f"{i},{t:.6f},{b:.6f}")
    print(f"median {summary['omp_median_s']:.4f} s, min {summary['omp_min_s']:.4f} s, "
          f"max {summary['omp_max_s']:.4f} s (anchor 0.07 s)")
    if man:
        out.mkdir(parents=True, exist_ok=True)
        man.data["config"] = str(cfg_path)
        man.data["timings_s"].update(summary)
        path = out / "bench.json"
        cio.write_json(path, summary)
        man.output(path)
        man.write()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chirplet-omp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="YAML config file or preset name (fig3, fig4, bench)")
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int, help="override the scenario rng_seed")
        sp.add_argument("--verbose", action="store_true", help="debug logging and OMP traces")
        sp.add_argument("--frames", type=int, default=1,
                        help="simulate: chirps to write; mitigate: parallel workers")

    s = sub.add_parser("simulate", help="synthesize a scenario and its interference-free twin")
    common(s)
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("mitigate", help="remove interference from stored chirps")
    m.add_argument("signals", nargs="+", help="signal files (.csv or float32 binary)")
    m.add_argument("--cache", help="dictionary cache file (created when missing)")
    common(m)
    m.set_defaults(func=cmd_mitigate)

    a = sub.add_parser("analyze", help="spectra and SNIR comparison of two signals")
    a.add_argument("before")
    a.add_argument("after")
    a.add_argument("--reference", help="interference-free signal")
    a.add_argument("--targets", help="comma separated beat frequencies in Hz")
    a.add_argument("--window", default="hann")
    a.add_argument("--range-axis", action="store_true", help="first CSV column in metres")
    common(a)
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("bench", help="time the OMP stages with the dictionary prebuilt")
    b.add_argument("signal", nargs="?", help="signal file; default: simulate the config")
    b.add_argument("--repetitions", type=int, default=5)
    common(b, out_required=False)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "frames", 1) < 1 or getattr(args, "repetitions", 1) < 1:
        print("error: --frames and --repetitions must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SignalFileError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ChirpletError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
