"""
Parameter sweeps over the paging simulator and the data files behind the plots.

A config file (TOML) describes the topology, mobility and traffic and the
sweep lists. ``run_experiment`` runs one simulation per sweep point and
writes each into ``points/<config hash>/``; the manifest lists every artifact.
Wall-clock timestamps live only in the manifest's ``metadata`` block, so two
runs of one config produce byte-identical data files.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from . import __version__
from .aka import run_mass_attach, write_delay_histogram_csv, write_outcomes_jsonl
from .anonymity import area_anonymity, global_bulk_anonymity, local_bulk_anonymity
from .errors import ConfigError, PgppError
from .mobility import attach_all, hold_until, read_traces_csv, synth_traces
from .paging import (
    CALL_DURATION_TICKS,
    CALL_FRACTION,
    HOUR_TICKS,
    MAX_TAL_LENGTH,
    PAGE_BUDGET_PER_SEC,
    SimReport,
    TrafficConfig,
    capacity_estimate,
    hourly_page_budget,
    run_sim,
)
from .topology import SynthTopologyConfig, Topology, load_topology, synth_topology

log = logging.getLogger(__name__)

MODES = ("conventional", "tal")


@dataclass(frozen=True)
class TopologyParams:
    source: str = "synth"  # "synth" or a path to an enb_id,lat,lon,ta_id CSV
    n_sites: int = 500
    n_clusters: int = 8
    n_tas: int = 0  # 0: one TA per ~200 sites
    extent_m: float = 40_000.0


@dataclass(frozen=True)
class MobilityParams:
    n_cars: int = 500
    n_pedestrians: int = 500
    duration_ticks: int = HOUR_TICKS
    traces: str = ""  # optional CSV of pre-computed traces


@dataclass(frozen=True)
class TrafficParams:
    call_fraction: float = CALL_FRACTION
    call_duration_ticks: int = CALL_DURATION_TICKS
    page_budget_per_sec: float = PAGE_BUDGET_PER_SEC


@dataclass(frozen=True)
class SweepParams:
    modes: tuple[str, ...] = MODES
    tal_lengths: tuple[int, ...] = (1, 2, 4, 8, 16)
    ta_counts: tuple[int, ...] = ()  # empty: keep the topology's own TA map
    tal_policy: str = "grow"


@dataclass(frozen=True)
class AkaParams:
    n_ues: int = 0  # 0 disables the attach-storm run
    mean_latency_ms: float = 200.0
    latency_cv: float = 0.25
    bin_ms: float = 50.0


_SECTIONS = {
    "topology": TopologyParams,
    "mobility": MobilityParams,
    "traffic": TrafficParams,
    "sweep": SweepParams,
    "aka": AkaParams,
}


@dataclass(frozen=True)
class ExperimentConfig:
    topology: TopologyParams = field(default_factory=TopologyParams)
    mobility: MobilityParams = field(default_factory=MobilityParams)
    traffic: TrafficParams = field(default_factory=TrafficParams)
    sweep: SweepParams = field(default_factory=SweepParams)
    aka: AkaParams = field(default_factory=AkaParams)
    seed: int = 0
    output_dir: str = "out"
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        sw = self.sweep
        bad_modes = [m for m in sw.modes if m not in MODES]
        if bad_modes or not sw.modes:
            raise ConfigError(f"sweep.modes must be a non-empty subset of {MODES}, got {list(sw.modes)}")
        bad = [x for x in sw.tal_lengths if not 1 <= x <= MAX_TAL_LENGTH]
        if bad or ("tal" in sw.modes and not sw.tal_lengths):
            raise ConfigError(f"sweep.tal_lengths must be in 1..{MAX_TAL_LENGTH}, got {list(sw.tal_lengths)}")
        if any(k < 1 for k in sw.ta_counts):
            raise ConfigError("sweep.ta_counts must be positive")
        if self.topology.source == "synth" and any(k > self.topology.n_sites for k in sw.ta_counts):
            raise ConfigError("sweep.ta_counts may not exceed the site count")
        if sw.tal_policy not in ("grow", "anchor"):
            raise ConfigError(f"unknown sweep.tal_policy {sw.tal_policy!r}")
        if self.mobility.duration_ticks < 1 or self.mobility.n_cars + self.mobility.n_pedestrians < 1:
            raise ConfigError("mobility needs at least one UE and one tick")
        if not 0 <= self.traffic.call_fraction <= 1 or self.traffic.call_duration_ticks < 1:
            raise ConfigError("invalid traffic parameters")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    # -- serialization ------------------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for sec in ("sweep",):
            d[sec] = {k: list(v) if isinstance(v, tuple) else v for k, v in d[sec].items()}
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        data = dict(data)
        kw: dict[str, Any] = {}
        try:
            for name, typ in _SECTIONS.items():
                sec = dict(data.pop(name, {}))
                unknown = set(sec) - {f.name for f in dataclasses.fields(typ)}
                if unknown:
                    raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
                if name == "sweep":
                    sec = {k: tuple(v) if isinstance(v, list) else v for k, v in sec.items()}
                kw[name] = typ(**sec)
            unknown = set(data) - {"seed", "output_dir", "workers"}
            if unknown:
                raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
            return cls(**kw, **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_toml(self) -> str:
        d = self.to_dict()
        top = {k: d[k] for k in ("seed", "output_dir", "workers")}
        return tomli_w.dumps({**top, **{k: d[k] for k in _SECTIONS}})

    @classmethod
    def from_toml(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(tomllib.loads(text))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_toml(text)

    def data_echo(self) -> dict:
        """The config minus keys that do not affect results."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        return d


def canonical_hash(obj: Any, n: int = 16) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:n]


def sweep_points(cfg: ExperimentConfig) -> list[dict]:
    pts = []
    for k in cfg.sweep.ta_counts or (None,):
        for mode in cfg.sweep.modes:
            for L in (1,) if mode == "conventional" else cfg.sweep.tal_lengths:
                pts.append({"mode": mode, "tal_length": int(L), "ta_count": k})
    return pts


# -----------------------------------------------------------------------------
# Shared inputs, built once per process


_CONTEXT: dict[str, tuple] = {}


def build_inputs(cfg: ExperimentConfig) -> tuple[Topology, list]:
    """Topology and attachment timelines for ``cfg`` (cached per process)."""
    key = canonical_hash({"t": cfg.to_dict()["topology"], "m": cfg.to_dict()["mobility"], "s": cfg.seed})
    hit = _CONTEXT.get(key)
    if hit is not None:
        return hit
    tp, mp = cfg.topology, cfg.mobility
    if tp.source == "synth":
        topo = synth_topology(SynthTopologyConfig(
            n_sites=tp.n_sites, n_clusters=tp.n_clusters, seed=cfg.seed,
            n_tas=tp.n_tas or None, extent_m=tp.extent_m,
        ))
    else:
        sites, _ = load_topology(tp.source)
        topo = Topology.build(sites)
    if mp.traces:
        traces = [hold_until(t, mp.duration_ticks) for t in read_traces_csv(open(mp.traces, newline=""))]
    else:
        traces = synth_traces(topo.region, mp.n_cars, mp.n_pedestrians, mp.duration_ticks, cfg.seed)
    timelines = attach_all(traces, topo.locator, topo.ta_map)
    _CONTEXT.clear()
    _CONTEXT[key] = (topo, timelines)
    return topo, timelines


def point_metrics(report: SimReport, topo: Topology, page_budget_per_sec: float) -> dict:
    pages = np.array(list(report.per_enb_pages.values()), dtype=float)
    m: dict[str, Any] = {
        "mode": report.mode,
        "tal_length": report.tal_length,
        "ta_count": report.config["ta_count"],
        "n_enbs": len(pages),
        "n_ues": report.n_ues,
        "total_pages": report.total_pages,
        "page_events": len(report.page_records),
        "per_enb_pages_median": float(np.median(pages)),
        "per_enb_pages_p95": float(np.percentile(pages, 95)),
        "per_enb_pages_max": float(pages.max()),
        "suppressed": report.suppressed,
        "tal_refreshes": report.tal_refreshes,
    }
    if report.page_records:
        m["d_global"] = global_bulk_anonymity(report, len(pages))
        m["d_global_network"] = global_bulk_anonymity(report, len(pages), scope="network")
        m["area"] = area_anonymity(report, topo).summary()
    else:
        m["d_global"] = m["d_global_network"] = None
        m["area"] = None
    m["d_local"] = local_bulk_anonymity(report, report.n_ues) if report.n_ues >= 2 else 0.0
    if report.duration_ticks == HOUR_TICKS:
        cap = capacity_estimate(report, hourly_page_budget(page_budget_per_sec))
        m["capacity"] = {
            **cap.as_row(),
            "page_budget_per_hour": cap.page_budget_per_hour,
            "load_max": cap.load_max,
            "load_p95": cap.load_p95,
            "load_median": cap.load_median,
        }
    else:
        m["capacity"] = None
    # flat row used by the plot-data emitters
    m["median_area_km2"] = m["area"]["median_km2"] if m["area"] else None
    for q in ("max", "p95", "median"):
        m[f"capacity_{q}"] = m["capacity"][f"capacity_{q}"] if m["capacity"] else None
    return m


def run_point(cfg: ExperimentConfig, point: Mapping) -> dict[str, str]:
    """Simulate one sweep point; returns {filename: contents}."""
    topo, timelines = build_inputs(cfg)
    if point["ta_count"] is not None:
        topo = topo.with_kmeans_tas(int(point["ta_count"]), cfg.seed)
    report = run_sim(
        timelines, topo.ta_map, point["mode"], point["tal_length"],
        TrafficConfig(cfg.traffic.call_fraction, cfg.traffic.call_duration_ticks),
        cfg.seed, cfg.sweep.tal_policy,
    )
    metrics = point_metrics(report, topo, cfg.traffic.page_budget_per_sec)
    echo = {"experiment": cfg.data_echo(), "point": dict(point), "simulation": report.config}
    per_enb = io.StringIO()
    report.write_per_enb_csv(per_enb)
    return {
        "report.json": json.dumps({"echo": echo, **report.to_dict()}, sort_keys=True, separators=(",", ":")),
        "metrics.json": json.dumps({"echo": echo, "metrics": metrics}, sort_keys=True, indent=1),
        "per_enb.csv": per_enb.getvalue(),
    }


def _run_point_safe(cfg_dict: dict, point: dict) -> tuple[dict | None, str | None]:
    try:
        return run_point(ExperimentConfig.from_dict(cfg_dict), point), None
    except (PgppError, ValueError, KeyError, OSError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def run_aka(cfg: ExperimentConfig, out: Path) -> dict:
    from .aka import gamma_latency

    files = {}
    for shared in (True, False):
        tag = "shared" if shared else "unique"
        res = run_mass_attach(
            cfg.aka.n_ues, shared, gamma_latency(cfg.aka.mean_latency_ms, cfg.aka.latency_cv), cfg.seed
        )
        buf = io.StringIO()
        write_outcomes_jsonl(res.outcomes, buf)
        _write(out / "aka" / f"outcomes_{tag}.jsonl", buf.getvalue())
        buf = io.StringIO()
        write_delay_histogram_csv(res.outcomes, buf, cfg.aka.bin_ms)
        _write(out / "aka" / f"delay_hist_{tag}.csv", buf.getvalue())
        files[tag] = {"outcomes": f"aka/outcomes_{tag}.jsonl", "histogram": f"aka/delay_hist_{tag}.csv"}
    return files


def run_experiment(cfg: ExperimentConfig, output_dir: str | Path | None = None) -> dict:
    """Run every sweep point; failures are recorded per point and never stop the rest."""
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    points = sweep_points(cfg)
    cfg_dict = cfg.to_dict()

    if cfg.workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_point_safe, [cfg_dict] * len(points), points))
    else:
        results = [_run_point_safe(cfg_dict, p) for p in points]

    entries = []
    for point, (files, err) in zip(points, results):
        h = canonical_hash({"experiment": cfg.data_echo(), "point": point})
        rel = f"points/{h}"
        entry = {"point": point, "hash": h, "dir": rel}
        if err is None:
            for name, text in files.items():
                _write(out / rel / name, text)
            entry.update(status="ok", files={n: f"{rel}/{n}" for n in sorted(files)})
        else:
            log.warning("sweep point %s failed: %s", point, err)
            entry.update(status="failed", error=err, files={})
        entries.append(entry)

    try:
        topo, _ = build_inputs(cfg)
        _write(out / "topology.json", topo.to_json())
        topo_file = "topology.json"
    except (PgppError, ValueError, OSError):
        topo_file = None

    manifest = {
        "version": 1,
        "config": cfg.data_echo(),
        "config_hash": canonical_hash(cfg.data_echo()),
        "topology": topo_file,
        "points": entries,
        "aka": run_aka(cfg, out) if cfg.aka.n_ues > 0 else None,
        "metadata": {
            "started_at": started,
            "finished_at": time.time(),
            "package_version": __version__,
            "output_dir": str(out),
        },
    }
    _write(out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=1))
    return manifest


def failed_points(manifest: Mapping) -> list[dict]:
    return [e for e in manifest.get("points", []) if e.get("status") != "ok"]


# -----------------------------------------------------------------------------
# Plot data

FIGURE_COLUMNS = {
    "control_cdf.csv": ["enb_id", "pages", "mode", "tal_length", "ta_count"],
    "capacity.csv": [
        "mode", "tal_length", "ta_count", "capacity_max", "capacity_p95", "capacity_median",
        "load_max", "load_p95", "load_median",
    ],
    "anonymity.csv": ["mode", "tal_length", "ta_count", "d_global", "d_global_network", "d_local", "total_pages"],
    "area_cdf.csv": ["mode", "tal_length", "ta_count", "area_km2", "cdf"],
    "attach_delay.csv": ["imsi", "bin_start_ms", "bin_end_ms", "count", "density"],
}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_figures_data(manifest: Mapping | str | Path, out_dir: str | Path | None = None) -> tuple[dict, list[str]]:
    """Write the plot-ready CSVs; returns ({name: path}, warnings).

    Missing or failed runs are skipped with a warning; every file is written,
    with its header, even when no run contributes rows.
    """
    if not isinstance(manifest, Mapping):
        root = Path(manifest)
        if root.is_dir():
            root = root / "manifest.json"
        manifest = json.loads(root.read_text())
        base = root.parent
    else:
        base = Path(manifest.get("metadata", {}).get("output_dir", "."))
    dest = Path(out_dir) if out_dir is not None else base / "figures"
    rows: dict[str, list[list]] = {name: [] for name in FIGURE_COLUMNS}
    warnings: list[str] = []

    for e in manifest.get("points", []):
        p = e["point"]
        key = [p["mode"], p["tal_length"], "" if p["ta_count"] is None else p["ta_count"]]
        if e.get("status") != "ok":
            warnings.append(f"point {e.get('hash')} ({p}) failed: {e.get('error')}")
            continue
        try:
            report = json.loads((base / e["files"]["report.json"]).read_text())
            metrics = json.loads((base / e["files"]["metrics.json"]).read_text())["metrics"]
        except (OSError, KeyError, ValueError) as exc:
            warnings.append(f"point {e.get('hash')} ({p}) unreadable: {exc}")
            continue
        for enb, pages in report["per_enb_pages"]:
            rows["control_cdf.csv"].append([enb, pages, p["mode"], p["tal_length"], key[2]])
        cap = metrics.get("capacity")
        if cap is not None:
            rows["capacity.csv"].append(key + [
                cap["capacity_max"], cap["capacity_p95"], cap["capacity_median"],
                cap["load_max"], cap["load_p95"], cap["load_median"],
            ])
        rows["anonymity.csv"].append(
            key + [metrics["d_global"], metrics["d_global_network"], metrics["d_local"], metrics["total_pages"]]
        )
        if metrics.get("area") is not None:
            sim = SimReport.from_dict(report)
            topo_xy = _topology_xy(base, manifest)
            if topo_xy is None:
                warnings.append("topology.json missing; area CDF skipped")
            else:
                areas = np.sort(area_anonymity(sim, topo_xy).areas_km2)
                n = len(areas)
                for i, a in enumerate(areas):
                    rows["area_cdf.csv"].append(key + [float(a), (i + 1) / n])

    aka = manifest.get("aka")
    if aka:
        for tag in ("shared", "unique"):
            try:
                text = (base / aka[tag]["histogram"]).read_text()
            except (OSError, KeyError) as exc:
                warnings.append(f"attach-delay histogram ({tag}) unreadable: {exc}")
                continue
            for r in list(csv.reader(io.StringIO(text)))[1:]:
                rows["attach_delay.csv"].append([tag] + r)

    dest.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, header in FIGURE_COLUMNS.items():
        path = dest / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows[name]:
                w.writerow([_fmt(v) for v in r])
        paths[name] = str(path)
    for wmsg in warnings:
        log.warning(wmsg)
    return paths, warnings


_XY_CACHE: dict[str, dict] = {}


def _topology_xy(base: Path, manifest: Mapping) -> dict | None:
    name = manifest.get("topology")
    if not name:
        return None
    path = base / name
    key = str(path.resolve())
    if key not in _XY_CACHE:
        try:
            data = json.loads(path.read_text())
        except OSError:
            return None
        from .topology import AzimuthalEquidistant

        proj = AzimuthalEquidistant(**data["projection"])
        lat = [s["lat"] for s in data["sites"]]
        lon = [s["lon"] for s in data["sites"]]
        x, y = proj.forward(lat, lon)
        _XY_CACHE.clear()
        _XY_CACHE[key] = {s["enb_id"]: (float(x[i]), float(y[i])) for i, s in enumerate(data["sites"])}
    return _XY_CACHE[key]
