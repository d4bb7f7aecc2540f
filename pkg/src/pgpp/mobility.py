"""
Per-UE position timelines at fixed 5-second ticks and their eNB attachment.

Synthetic traces are straight-line waypoint trips (random start and end inside
the region) at a per-profile speed with per-tick jitter; a UE that arrives
early holds its final position. Pre-computed traces can be replayed from CSV.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import OutOfRegionError
from .topology import CellLocator, CoverageCell, Region, TrackingAreaMap

TICK_SECONDS = 5.0

# metres per second
SPEED_MEAN = {"car": 13.0, "pedestrian": 1.4}
SPEED_CAP = {"car": 40.0, "pedestrian": 2.5}
SPEED_JITTER = 0.2


@dataclass(frozen=True, eq=False)
class MobilityTrace:
    ue_id: Hashable
    profile: str
    ticks: np.ndarray  # (T,) int, consecutive
    positions: np.ndarray  # (T, 2) projected metres

    def __post_init__(self):
        if self.profile not in SPEED_CAP:
            raise ValueError(f"unknown profile {self.profile!r}")
        ticks = np.asarray(self.ticks, dtype=np.int64)
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if len(ticks) != len(pos):
            raise ValueError("ticks and positions differ in length")
        if len(ticks) == 0:
            raise ValueError(f"trace {self.ue_id!r} has no samples")
        if np.any(np.diff(ticks) != 1):
            raise ValueError(f"trace {self.ue_id!r}: tick indices must increase by exactly 1")
        step = np.hypot(*np.diff(pos, axis=0).T) if len(pos) > 1 else np.zeros(0)
        cap = SPEED_CAP[self.profile] * TICK_SECONDS
        if np.any(step > cap * (1 + 1e-9)):
            bad = int(ticks[1:][step > cap][0])
            raise ValueError(f"trace {self.ue_id!r}: speed cap exceeded at tick {bad}")
        object.__setattr__(self, "ticks", ticks)
        object.__setattr__(self, "positions", pos)

    @property
    def samples(self) -> list[tuple[int, tuple[float, float]]]:
        return [(int(t), (float(x), float(y))) for t, (x, y) in zip(self.ticks, self.positions)]

    def path_length(self) -> float:
        if len(self.positions) < 2:
            return 0.0
        return float(np.hypot(*np.diff(self.positions, axis=0).T).sum())


@dataclass(frozen=True, eq=False)
class AttachmentTimeline:
    ue_id: Hashable
    ticks: np.ndarray
    enb_ids: np.ndarray
    ta_ids: np.ndarray

    @property
    def attachments(self) -> list[tuple]:
        return list(zip(self.ticks.tolist(), self.enb_ids.tolist(), self.ta_ids.tolist()))

    def __len__(self) -> int:
        return len(self.ticks)


def _one_trace(ue_id: int, profile: str, bounds: Region, duration_ticks: int, seed: int) -> MobilityTrace:
    rng = np.random.default_rng([seed, ue_id])
    xmin, ymin, xmax, ymax = bounds
    lo = np.array([xmin, ymin])
    hi = np.array([xmax, ymax])
    start = rng.uniform(lo, hi)
    end = rng.uniform(lo, hi)
    speeds = SPEED_MEAN[profile] * rng.uniform(1 - SPEED_JITTER, 1 + SPEED_JITTER, size=duration_ticks - 1)
    travelled = np.concatenate([[0.0], np.cumsum(speeds * TICK_SECONDS)])
    total = float(np.hypot(*(end - start)))
    frac = np.minimum(travelled, total) / total if total > 0 else np.zeros(duration_ticks)
    pos = start + frac[:, None] * (end - start)
    return MobilityTrace(ue_id, profile, np.arange(duration_ticks), pos)


def synth_traces(
    bounds: Region,
    n_cars: int,
    n_pedestrians: int,
    duration_ticks: int,
    seed: int,
) -> list[MobilityTrace]:
    """Seeded waypoint traces; cars get ue_ids 0..n_cars-1, pedestrians follow.

    Each UE draws from its own stream keyed by (seed, ue_id), so traces are
    independent of how many other UEs are generated.
    """
    if duration_ticks < 1:
        raise ValueError("duration_ticks must be at least 1")
    if n_cars < 0 or n_pedestrians < 0:
        raise ValueError("UE counts must be non-negative")
    profiles = ["car"] * n_cars + ["pedestrian"] * n_pedestrians
    return [_one_trace(i, p, bounds, duration_ticks, seed) for i, p in enumerate(profiles)]


def attach_timeline(
    trace: MobilityTrace,
    cells: Sequence[CoverageCell] | CellLocator,
    ta_map: TrackingAreaMap,
) -> AttachmentTimeline:
    """Resolve every tick of ``trace`` to its serving eNB and tracking area."""
    locator = cells if isinstance(cells, CellLocator) else CellLocator(cells)
    idx = locator.locate(trace.positions)
    if np.any(idx < 0):
        k = int(np.flatnonzero(idx < 0)[0])
        raise OutOfRegionError(
            f"UE {trace.ue_id!r} is outside the coverage region at tick {int(trace.ticks[k])}",
            ue_id=trace.ue_id,
            tick=int(trace.ticks[k]),
        )
    ids = np.asarray(locator.enb_ids, dtype=object)[idx]
    enb_to_ta = ta_map.enb_to_ta
    enbs = _compact(ids)
    tas = _compact(np.array([enb_to_ta[e] for e in ids], dtype=object))
    return AttachmentTimeline(trace.ue_id, trace.ticks.copy(), enbs, tas)


def _compact(values: np.ndarray) -> np.ndarray:
    # int ids stay as an int array; anything else stays object
    if all(isinstance(v, (int, np.integer)) for v in values):
        return values.astype(np.int64)
    return values


def attach_all(
    traces: Iterable[MobilityTrace],
    cells: Sequence[CoverageCell] | CellLocator,
    ta_map: TrackingAreaMap,
) -> list[AttachmentTimeline]:
    locator = cells if isinstance(cells, CellLocator) else CellLocator(cells)
    return [attach_timeline(t, locator, ta_map) for t in traces]


def distinct_enbs_visited(timeline: AttachmentTimeline) -> int:
    return len(set(timeline.enb_ids.tolist()))


# -----------------------------------------------------------------------------
# Trace files: ue_id,profile,tick,x_m,y_m


def write_traces_csv(traces: Iterable[MobilityTrace], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["ue_id", "profile", "tick", "x_m", "y_m"])
    for tr in traces:
        for t, (x, y) in zip(tr.ticks.tolist(), tr.positions.tolist()):
            w.writerow([tr.ue_id, tr.profile, t, repr(x), repr(y)])


def read_traces_csv(fh) -> list[MobilityTrace]:
    rows: dict = {}
    order = []
    for n, row in enumerate(csv.DictReader(fh), start=2):
        try:
            raw = row["ue_id"].strip()
            ue = int(raw) if raw.lstrip("-").isdigit() else raw
            rec = rows.get(ue)
            if rec is None:
                rec = rows[ue] = (row["profile"].strip(), [], [])
                order.append(ue)
            elif rec[0] != row["profile"].strip():
                raise ValueError(f"profile changes mid-trace for UE {ue!r}")
            rec[1].append(int(row["tick"]))
            rec[2].append((float(row["x_m"]), float(row["y_m"])))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"trace file row {n}: {exc}") from None
    out = []
    for ue in order:
        profile, ticks, pos = rows[ue]
        ticks = np.asarray(ticks)
        sort = np.argsort(ticks, kind="stable")
        out.append(MobilityTrace(ue, profile, ticks[sort], np.asarray(pos)[sort]))
    return out


def hold_until(trace: MobilityTrace, duration_ticks: int) -> MobilityTrace:
    """Extend a trace that ends early by holding its final position.

    Keeps UEs present (and pageable) for the whole simulated window.
    """
    have = len(trace.ticks)
    if trace.ticks[0] != 0:
        raise ValueError(f"trace {trace.ue_id!r} does not start at tick 0")
    if have >= duration_ticks:
        return MobilityTrace(trace.ue_id, trace.profile, trace.ticks[:duration_ticks], trace.positions[:duration_ticks])
    extra = np.repeat(trace.positions[-1:], duration_ticks - have, axis=0)
    return MobilityTrace(
        trace.ue_id, trace.profile, np.arange(duration_ticks), np.vstack([trace.positions, extra])
    )
