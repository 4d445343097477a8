"""File formats: YAML configs, signal files, dictionary caches, reports and traces.

Config files are YAML mirroring the dataclasses field for field.  Numbers may
be written as ``77e9``; YAML 1.1 would otherwise read that as a string.
Field errors are reported as :class:`ConfigError` with the file line.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io as _io
import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import yaml

from .dictionary import DictionaryGrid, _slope_axis, _time_axis
from .errors import ChirpletError, ConfigError, SignalFileError
from .omp import OmpConfig
from .pipeline import FilterCoeffs, MitigationConfig, MitigationReport, design_highpass
from .signal_model import (InterferenceSource, ReceiverConfig, SampledSignal, Scenario,
                           TargetEcho, WaveformParams)

CACHE_FORMAT = "chirplet-dictionary/1"


# ---------------------------------------------------------------- config parsing

def _plain(node, path, lines):
    """Python value of a YAML node; records the line of every key path in ``lines``."""
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            if key in out:
                raise ConfigError(f"line {k.start_mark.line + 1}: duplicate key {key!r}")
            out[key] = _plain(v, path + (key,), lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, path + (i,), lines) for i, v in enumerate(node.value)]
    return yaml.SafeLoader(_io.StringIO("")).construct_object(node)


class _Doc:
    """Parsed config plus line lookup for diagnostics."""

    def __init__(self, data, lines, source="<config>"):
        self.data = data
        self.lines = lines
        self.source = source

    def error(self, path, msg) -> ConfigError:
        p = tuple(path)
        while p and p not in self.lines:
            p = p[:-1]
        line = self.lines.get(p)
        where = ".".join(str(x) for x in path) or "<root>"
        prefix = f"{self.source}:{line}" if line else self.source
        return ConfigError(f"{prefix}: field {where}: {msg}")


def parse_config(text: str, source: str = "<config>") -> _Doc:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        line = mark.line + 1 if mark is not None else "?"
        raise ConfigError(f"{source}:{line}: {exc.problem}") from None
    lines: dict = {}
    data = {} if node is None else _plain(node, (), lines)
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: top level must be a mapping")
    return _Doc(data, lines, source)


def load_config(path) -> _Doc:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


def _get(doc, d, path, key, kind=float, default=dataclasses.MISSING):
    if key not in d or d[key] is None:
        if default is dataclasses.MISSING:
            raise doc.error(path + (key,), "missing")
        return default
    v = d[key]
    try:
        if kind is int:
            if isinstance(v, bool) or float(v) != int(float(v)):
                raise ValueError
            return int(float(v))
        if kind is float:
            if isinstance(v, bool):
                raise ValueError
            return float(v)
        if kind is bool:
            if not isinstance(v, bool):
                raise ValueError
            return v
        if kind is str:
            return str(v)
        if kind == "pair":
            if len(v) != 2:
                raise ValueError
            return (float(v[0]), float(v[1]))
    except (TypeError, ValueError):
        raise doc.error(path + (key,), f"expected {getattr(kind, '__name__', kind)}, "
                                       f"got {v!r}") from None
    raise AssertionError(kind)


def _section(doc, d, path, key, required=True):
    v = d.get(key)
    if v is None:
        if required:
            raise doc.error(path + (key,), "missing section")
        return None
    if not isinstance(v, dict):
        raise doc.error(path + (key,), "expected a mapping")
    return v


def _unknown(doc, d, path, allowed):
    for k in d:
        if k not in allowed:
            raise doc.error(path + (k,), f"unknown field (allowed: {', '.join(sorted(allowed))})")


def _build(doc, path, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ChirpletError as exc:
        raise doc.error(path, str(exc)) from None


def waveform_from(doc, d, path=("waveform",)) -> WaveformParams:
    _unknown(doc, d, path, {"carrier_freq", "bandwidth", "chirp_duration", "slope"})
    return _build(doc, path, WaveformParams, _get(doc, d, path, "carrier_freq"),
                  _get(doc, d, path, "bandwidth"), _get(doc, d, path, "chirp_duration"),
                  _get(doc, d, path, "slope", default=None))


def receiver_from(doc, d, path=("receiver",)) -> ReceiverConfig:
    _unknown(doc, d, path, {"sample_rate", "num_samples"})
    return _build(doc, path, ReceiverConfig, _get(doc, d, path, "sample_rate"),
                  _get(doc, d, path, "num_samples", int))


def _list(doc, d, key):
    v = d.get(key) or []
    if not isinstance(v, list):
        raise doc.error((key,), "expected a list")
    return v


def scenario_from(doc: _Doc, seed: int | None = None) -> Scenario:
    d = doc.data
    _unknown(doc, d, (), {"waveform", "receiver", "targets", "interferers", "noise_std",
                          "rng_seed", "mitigation"})
    wf = waveform_from(doc, _section(doc, d, (), "waveform"))
    rx = receiver_from(doc, _section(doc, d, (), "receiver"))
    targets = []
    for i, t in enumerate(_list(doc, d, "targets")):
        p = ("targets", i)
        if not isinstance(t, dict):
            raise doc.error(p, "expected a mapping")
        _unknown(doc, t, p, {"delay", "amplitude"})
        targets.append(_build(doc, p, TargetEcho, _get(doc, t, p, "delay"),
                              _get(doc, t, p, "amplitude")))
    interferers = []
    for i, s in enumerate(_list(doc, d, "interferers")):
        p = ("interferers", i)
        if not isinstance(s, dict):
            raise doc.error(p, "expected a mapping")
        _unknown(doc, s, p, {"slope", "delay", "amplitude"})
        interferers.append(_build(doc, p, InterferenceSource, _get(doc, s, p, "slope"),
                                  _get(doc, s, p, "delay"), _get(doc, s, p, "amplitude")))
    noise = _get(doc, d, (), "noise_std", default=0.0)
    rng_seed = _get(doc, d, (), "rng_seed", int, default=0)
    if seed is not None:
        rng_seed = int(seed)
    return _build(doc, (), Scenario, wf, rx, targets, interferers, noise, rng_seed)


def _omp_from(doc, d, path) -> OmpConfig:
    if d is None:
        return None
    _unknown(doc, d, path, {f.name for f in dataclasses.fields(OmpConfig)})
    base = OmpConfig()
    return _build(doc, path, OmpConfig,
                  _get(doc, d, path, "max_iterations", int, default=base.max_iterations),
                  _get(doc, d, path, "energy_variation_threshold",
                       default=base.energy_variation_threshold),
                  _get(doc, d, path, "absolute_residual_threshold",
                       default=base.absolute_residual_threshold),
                  _get(doc, d, path, "normalized", bool, default=base.normalized))


def mitigation_from(doc: _Doc, receiver: ReceiverConfig | None = None) -> MitigationConfig:
    """MitigationConfig from the ``mitigation`` section (defaults when absent)."""
    d = doc.data.get("mitigation")
    if d is None:
        return MitigationConfig()
    root = ("mitigation",)
    if not isinstance(d, dict):
        raise doc.error(root, "expected a mapping")
    _unknown(doc, d, root, {"coarse", "fine", "coarse_omp", "fine_omp", "highpass", "k_min",
                            "slope_spacing", "min_cluster_energy"})
    base = MitigationConfig()
    kw = {}
    c = _section(doc, d, root, "coarse", required=False)
    if c is not None:
        p = root + ("coarse",)
        _unknown(doc, c, p, {"slope_hypotheses", "time_hypotheses", "slope_range", "time_range"})
        kw["coarse_slope_hypotheses"] = _get(doc, c, p, "slope_hypotheses", int,
                                             default=base.coarse_slope_hypotheses)
        kw["coarse_time_hypotheses"] = _get(doc, c, p, "time_hypotheses", int,
                                            default=base.coarse_time_hypotheses)
        kw["slope_range"] = _get(doc, c, p, "slope_range", "pair", default=None)
        kw["time_range"] = _get(doc, c, p, "time_range", "pair", default=None)
    f = _section(doc, d, root, "fine", required=False)
    if f is not None:
        p = root + ("fine",)
        _unknown(doc, f, p, {"slope_hypotheses", "time_hypotheses"})
        kw["fine_slope_hypotheses"] = _get(doc, f, p, "slope_hypotheses", int,
                                           default=base.fine_slope_hypotheses)
        kw["fine_time_hypotheses"] = _get(doc, f, p, "time_hypotheses", int,
                                          default=base.fine_time_hypotheses)
    for stage in ("coarse_omp", "fine_omp"):
        sec = _section(doc, d, root, stage, required=False)
        if sec is not None:
            # unspecified fields fall back to the stage's own defaults
            merged = dataclasses.asdict(getattr(base, stage)) | sec
            kw[stage] = _omp_from(doc, merged, root + (stage,))
    hp = _section(doc, d, root, "highpass", required=False)
    if hp is not None:
        p = root + ("highpass",)
        _unknown(doc, hp, p, {"cutoff", "transition_width", "attenuation_db", "taps"})
        if "taps" in hp:
            taps = hp["taps"]
            if not isinstance(taps, list) or not taps:
                raise doc.error(p + ("taps",), "expected a non-empty list")
            kw["highpass"] = _build(doc, p, FilterCoeffs, np.array(taps, dtype=float),
                                    _get(doc, hp, p, "cutoff", default=float("nan")),
                                    _get(doc, hp, p, "transition_width", default=float("nan")),
                                    receiver.sample_rate if receiver else float("nan"),
                                    "explicit taps")
        else:
            if receiver is None:
                raise doc.error(p, "designing a high-pass needs a receiver section")
            kw["highpass"] = _build(doc, p, design_highpass, _get(doc, hp, p, "cutoff"),
                                    _get(doc, hp, p, "transition_width"), receiver,
                                    _get(doc, hp, p, "attenuation_db", default=60.0))
    kw["k_min"] = _get(doc, d, root, "k_min", default=None)
    kw["slope_spacing"] = _get(doc, d, root, "slope_spacing", str, default=base.slope_spacing)
    if kw["slope_spacing"] not in ("linear", "inverse", "resolution"):
        raise doc.error(root + ("slope_spacing",), "expected linear, inverse or resolution")
    kw["min_cluster_energy"] = _get(doc, d, root, "min_cluster_energy",
                                       default=base.min_cluster_energy)
    return MitigationConfig(**kw)


def read_scenario(path, seed: int | None = None) -> Scenario:
    return scenario_from(load_config(path), seed)


def read_setup(path):
    """``(waveform, receiver, mitigation_config, target_beats or None)`` from a config file.

    Targets, when listed, are used only to tell the report where to measure SNIR.
    """
    doc = load_config(path)
    d = doc.data
    wf = waveform_from(doc, _section(doc, d, (), "waveform"))
    rx = receiver_from(doc, _section(doc, d, (), "receiver"))
    cfg = mitigation_from(doc, rx)
    beats = None
    if d.get("targets"):
        beats = [_get(doc, t, ("targets", i), "delay") * wf.slope
                 for i, t in enumerate(_list(doc, d, "targets"))]
    return wf, rx, cfg, beats


# ---------------------------------------------------------------- config writing

def scenario_to_dict(scenario: Scenario) -> dict:
    wf, rx = scenario.waveform, scenario.receiver
    return {
        "waveform": {"carrier_freq": wf.carrier_freq, "bandwidth": wf.bandwidth,
                     "chirp_duration": wf.chirp_duration},
        "receiver": {"sample_rate": rx.sample_rate, "num_samples": rx.num_samples},
        "targets": [{"delay": t.delay, "amplitude": t.amplitude} for t in scenario.targets],
        "interferers": [{"slope": s.slope, "delay": s.delay, "amplitude": s.amplitude}
                        for s in scenario.interferers],
        "noise_std": scenario.noise_std,
        "rng_seed": scenario.rng_seed,
    }


def mitigation_to_dict(cfg: MitigationConfig) -> dict:
    hp = None
    if cfg.highpass is not None:
        hp = {"taps": cfg.highpass.taps.tolist(), "cutoff": cfg.highpass.cutoff,
              "transition_width": cfg.highpass.transition_width}
    pair = lambda r: None if r is None else [float(r[0]), float(r[1])]  # noqa: E731
    return {
        "coarse": {"slope_hypotheses": cfg.coarse_slope_hypotheses,
                   "time_hypotheses": cfg.coarse_time_hypotheses,
                   "slope_range": pair(cfg.slope_range), "time_range": pair(cfg.time_range)},
        "fine": {"slope_hypotheses": cfg.fine_slope_hypotheses,
                 "time_hypotheses": cfg.fine_time_hypotheses},
        "coarse_omp": dataclasses.asdict(cfg.coarse_omp),
        "fine_omp": dataclasses.asdict(cfg.fine_omp),
        "highpass": hp,
        "k_min": cfg.k_min,
        "slope_spacing": cfg.slope_spacing,
        "min_cluster_energy": cfg.min_cluster_energy,
    }


def dump_config(scenario: Scenario | None = None, mitigation: MitigationConfig | None = None,
                header: str | None = None) -> str:
    d = scenario_to_dict(scenario) if scenario is not None else {}
    if mitigation is not None:
        d["mitigation"] = mitigation_to_dict(mitigation)
    body = yaml.safe_dump(d, sort_keys=False, default_flow_style=None)
    if header:
        body = "".join(f"# {ln}\n" for ln in header.splitlines()) + body
    return body


def write_config(path, scenario=None, mitigation=None, header=None):
    Path(path).write_text(dump_config(scenario, mitigation, header), encoding="utf-8")


# ---------------------------------------------------------------- signals

def is_csv(path) -> bool:
    return Path(path).suffix.lower() in (".csv", ".txt")


def write_signal(path, signal: SampledSignal) -> None:
    """CSV (``.csv``/``.txt``, exact round trip) or little-endian float32 (anything else)."""
    path = Path(path)
    if is_csv(path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"sample_rate={signal.sample_rate!r}\n")
            np.savetxt(fh, signal.samples, fmt="%.17g")
    else:
        signal.samples.astype("<f4").tofile(path)


def read_signal(path, sample_rate: float | None = None) -> SampledSignal:
    """Read a signal file.  Binary files carry no rate, so ``sample_rate`` is required."""
    path = Path(path)
    if is_csv(path):
        with open(path, encoding="utf-8") as fh:
            head = fh.readline().strip()
            if not head.startswith("sample_rate="):
                raise SignalFileError(f"{path}:1: expected header 'sample_rate=<Hz>'")
            try:
                fs = float(head.split("=", 1)[1])
            except ValueError:
                raise SignalFileError(f"{path}:1: bad sample rate {head!r}") from None
            try:
                x = np.loadtxt(fh, dtype=float, ndmin=1)
            except ValueError as exc:
                raise SignalFileError(f"{path}: {exc}") from None
        if sample_rate is not None and sample_rate != fs:
            raise SignalFileError(f"{path}: sample rate {fs:g} differs from expected "
                                f"{sample_rate:g}")
        return SampledSignal(x, fs)
    if sample_rate is None:
        raise SignalFileError(f"{path}: binary signal needs an explicit sample rate")
    return SampledSignal(np.fromfile(path, dtype="<f4").astype(float), sample_rate)


def write_spectrum_csv(path, spectrum, use_range: bool = False) -> None:
    """Two columns: frequency (Hz) or range (m), and power (dB)."""
    x = spectrum.range_axis if use_range and spectrum.range_axis is not None \
        else spectrum.bin_freqs
    label = "range_m" if x is not spectrum.bin_freqs else "freq_hz"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([label, "power_db"])
        for a, b in zip(x, spectrum.power_db):
            w.writerow([f"{a:.10g}", f"{b:.6f}"])


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------- dictionary cache

def setup_key(waveform, receiver, config) -> str:
    """Hash of everything that determines a coarse dictionary, without building it."""
    d = {"waveform": [waveform.carrier_freq, waveform.bandwidth, waveform.chirp_duration],
         "receiver": [receiver.sample_rate, receiver.num_samples]}
    d.update({k: v for k, v in mitigation_to_dict(config).items()
              if k in ("coarse", "highpass", "k_min", "slope_spacing")})
    return hashlib.sha256(json.dumps(_py(d), sort_keys=True).encode()).hexdigest()


def save_grid(path, grid: DictionaryGrid, tag: str | None = None) -> str:
    """Store a grid with its packed atom waveforms; returns the cache key.

    ``tag`` is an opaque string (e.g. :func:`setup_key`) checked on load.
    """
    header = grid.parameters()
    header.update(format=CACHE_FORMAT, key=grid.cache_key(), tag=tag,
                  slope_hypotheses=grid.slope_hypotheses, time_hypotheses=grid.time_hypotheses,
                  rectangular=grid.rectangular, lattice=list(grid.lattice))
    m = grid.matrix
    arrays = dict(slopes=grid.slopes, shifts=grid.shifts, data=m.data, indices=m.indices,
                  indptr=m.indptr, gram=grid.gram)
    if grid.coords is not None:
        arrays["coords"] = grid.coords
    if grid.filter_taps is not None:
        arrays["filter_taps"] = grid.filter_taps
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)
    return header["key"]


def load_grid(path, expected_key: str | None = None,
              expected_tag: str | None = None) -> DictionaryGrid:
    """Load a cached grid; ``expected_key`` / ``expected_tag`` guard against stale caches."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != CACHE_FORMAT:
            raise SignalFileError(f"{path}: not a dictionary cache")
        if expected_key is not None and header["key"] != expected_key:
            raise SignalFileError(f"{path}: cache key mismatch")
        if expected_tag is not None and header.get("tag") != expected_tag:
            raise SignalFileError(f"{path}: cache was built for a different setup")
        arrays = {k: z[k] for k in z.files if k != "header"}
    rx = ReceiverConfig(**header["receiver"])
    wf = WaveformParams(**header["waveform"])
    sa, ta = header["slope_axis"], header["time_axis"]
    s_axis = _slope_axis(sa["range"], sa["count"], sa["k_min"], sa["spacing"], rx, wf) \
        if sa else None
    t_axis = _time_axis(ta["range"], ta["count"]) if ta else None
    n = arrays["slopes"].size
    matrix = sp.csr_matrix((arrays["data"], arrays["indices"], arrays["indptr"]),
                           shape=(n, rx.num_samples))
    grid = DictionaryGrid(arrays["slopes"], arrays["shifts"], rx, wf, header["k_min"],
                          slope_axis=s_axis, time_axis=t_axis,
                          slope_hypotheses=header["slope_hypotheses"],
                          time_hypotheses=header["time_hypotheses"],
                          coords=arrays.get("coords"), lattice=header["lattice"],
                          rectangular=header["rectangular"], matrix=matrix,
                          gram=arrays["gram"], filter_taps=arrays.get("filter_taps"))
    if grid.cache_key() != header["key"]:
        raise SignalFileError(f"{path}: cache contents do not match its key")
    return grid


# ---------------------------------------------------------------- reports

def report_to_dict(report: MitigationReport) -> dict:
    return {
        "detected_interferers": [dataclasses.asdict(d) for d in report.detected_interferers],
        "snir_before_db": report.snir_before,
        "snir_after_db": report.snir_after,
        "snir_improvement_db": report.snir_improvement,
        "residual_energy_ratio": report.residual_energy_ratio,
        "iterations": dict(report.iterations),
        "stop_reasons": {
            "coarse": report.coarse_result.stop_reason if report.coarse_result else None,
            "fine": report.fine_result.stop_reason if report.fine_result else None},
        "wall_time_s": report.wall_time,
        "stage_times_s": dict(report.stage_times),
        "target_bins": [list(map(int, t)) for t in report.target_bins],
    }


def _py(x):
    if isinstance(x, dict):
        return {k: _py(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_py(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def write_yaml(path, obj) -> None:
    Path(path).write_text(yaml.safe_dump(_py(obj), sort_keys=False), encoding="utf-8")


def write_report(path, report: MitigationReport) -> None:
    write_yaml(path, report_to_dict(report))


REPORT_CSV_FIELDS = ["chirp", "detected", "snir_before_db", "snir_after_db",
                     "snir_improvement_db", "residual_energy_ratio", "coarse_iterations",
                     "fine_iterations", "wall_time_s"]


def report_row(report: MitigationReport, chirp: int = 0) -> dict:
    return {"chirp": chirp, "detected": len(report.detected_interferers),
            "snir_before_db": f"{report.snir_before:.4f}",
            "snir_after_db": f"{report.snir_after:.4f}",
            "snir_improvement_db": f"{report.snir_improvement:.4f}",
            "residual_energy_ratio": f"{report.residual_energy_ratio:.6g}",
            "coarse_iterations": report.iterations.get("coarse", 0),
            "fine_iterations": report.iterations.get("fine", 0),
            "wall_time_s": f"{report.wall_time:.4f}"}


def write_report_rows(path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, REPORT_CSV_FIELDS)
        w.writeheader()
        for i, rep in enumerate(reports):
            w.writerow(report_row(rep, i))


TRACE_FIELDS = ["stage", "iteration", "atom", "slope", "time_shift", "score",
                "residual_energy", "relative_decrease", "accepted"]


def write_trace(path, traces: dict) -> None:
    """OMP traces (``{stage: trace list}``) as one CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, TRACE_FIELDS)
        w.writeheader()
        for stage, trace in traces.items():
            for row in trace:
                w.writerow({"stage": stage, **row})


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_py(obj), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
