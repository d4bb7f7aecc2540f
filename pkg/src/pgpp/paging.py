"""
Paging simulation under conventional tracking areas and randomized per-UE TALs.

Every tick a fixed fraction of the population is drawn to receive a "call";
a drawn UE that is not already in a call is paged across its broadcast domain
(its current TA, or the TAs of its TAL) and then stays busy for the call
duration. Per-eNB page counts feed the capacity estimate.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import SimulationError, UnknownTrackingAreaError
from .mobility import TICK_SECONDS, AttachmentTimeline
from .topology import TrackingAreaMap, id_key

MAX_TAL_LENGTH = 16
HOUR_TICKS = 720
CALL_DURATION_TICKS = 36  # 3 minutes
CALL_FRACTION = 0.05

BTS3202E_PAGES_PER_SEC = 750
PAGE_BUDGET_PER_SEC = 525  # 70% of BTS3202E


@dataclass(frozen=True)
class Tal:
    ta_ids: tuple
    anchor: Hashable

    def __post_init__(self):
        object.__setattr__(self, "ta_ids", tuple(self.ta_ids))
        if not 1 <= len(self.ta_ids) <= MAX_TAL_LENGTH:
            raise ValueError(f"TAL length {len(self.ta_ids)} outside 1..{MAX_TAL_LENGTH}")
        if self.anchor not in self.ta_ids:
            raise ValueError("TAL does not contain its anchor")
        if len(set(self.ta_ids)) != len(self.ta_ids):
            raise ValueError("TAL contains duplicate tracking areas")

    def __len__(self) -> int:
        return len(self.ta_ids)

    def __contains__(self, ta) -> bool:
        return ta in self.ta_ids


def make_tal(
    anchor: Hashable,
    length: int,
    ta_map: TrackingAreaMap,
    rng: np.random.Generator,
    policy: str = "grow",
) -> Tal:
    """Grow a random TAL of up to ``length`` TAs starting from ``anchor``.

    policy="grow" picks each new member uniformly among TAs adjacent to any
    current member; policy="anchor" only among TAs adjacent to the anchor.
    Stops early when no candidate is left.
    """
    if anchor not in ta_map:
        raise UnknownTrackingAreaError(anchor)
    if not 1 <= length <= MAX_TAL_LENGTH:
        raise ValueError(f"TAL length must be in 1..{MAX_TAL_LENGTH}, got {length}")
    if policy not in ("grow", "anchor"):
        raise ValueError(f"unknown TAL policy {policy!r}")
    adj = ta_map.adjacency
    members = [anchor]
    chosen = {anchor}
    frontier = set(adj[anchor])
    for _ in range(length - 1):
        if not frontier:
            break
        candidates = sorted(frontier, key=id_key)
        pick = candidates[int(rng.integers(len(candidates)))]
        members.append(pick)
        chosen.add(pick)
        frontier.discard(pick)
        if policy == "grow":
            frontier |= adj[pick] - chosen
    return Tal(tuple(members), anchor)


@dataclass(frozen=True)
class TrafficConfig:
    call_fraction: float = CALL_FRACTION
    call_duration_ticks: int = CALL_DURATION_TICKS

    def __post_init__(self):
        if not 0.0 <= self.call_fraction <= 1.0:
            raise ValueError("call_fraction must lie in [0, 1]")
        if self.call_duration_ticks < 1:
            raise ValueError("call_duration_ticks must be positive")


@dataclass(frozen=True, eq=False)
class PageRecord:
    tick: int
    target_ue: Hashable
    serving_enb: Hashable
    broadcast_tas: tuple
    enbs_paged: np.ndarray
    enbs_with_users: int
    network_enbs_with_users: int

    def to_dict(self) -> dict:
        return {
            "tick": self.tick,
            "target_ue": self.target_ue,
            "serving_enb": self.serving_enb,
            "broadcast_tas": list(self.broadcast_tas),
            "enbs_paged": self.enbs_paged.tolist(),
            "enbs_with_users": self.enbs_with_users,
            "network_enbs_with_users": self.network_enbs_with_users,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PageRecord":
        return cls(
            d["tick"],
            d["target_ue"],
            d["serving_enb"],
            tuple(d["broadcast_tas"]),
            np.asarray(d["enbs_paged"]),
            d["enbs_with_users"],
            d["network_enbs_with_users"],
        )


@dataclass(frozen=True, eq=False)
class SimReport:
    per_enb_pages: dict
    page_records: list
    config: dict
    ue_ticks: int
    occupied_enb_ticks: int
    suppressed: int = 0
    tal_refreshes: int = 0

    @property
    def mode(self) -> str:
        return self.config["mode"]

    @property
    def tal_length(self) -> int:
        return self.config["tal_length"]

    @property
    def n_ues(self) -> int:
        return self.config["n_ues"]

    @property
    def duration_ticks(self) -> int:
        return self.config["duration_ticks"]

    @property
    def total_pages(self) -> int:
        return int(sum(self.per_enb_pages.values()))

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "ue_ticks": self.ue_ticks,
            "occupied_enb_ticks": self.occupied_enb_ticks,
            "suppressed": self.suppressed,
            "tal_refreshes": self.tal_refreshes,
            "per_enb_pages": [[e, int(c)] for e, c in self.per_enb_pages.items()],
            "page_records": [r.to_dict() for r in self.page_records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimReport":
        return cls(
            {e: c for e, c in d["per_enb_pages"]},
            [PageRecord.from_dict(r) for r in d["page_records"]],
            dict(d["config"]),
            d["ue_ticks"],
            d["occupied_enb_ticks"],
            d.get("suppressed", 0),
            d.get("tal_refreshes", 0),
        )

    @classmethod
    def from_json(cls, text: str) -> "SimReport":
        return cls.from_dict(json.loads(text))

    def write_per_enb_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["enb_id", "pages"])
        for e, c in self.per_enb_pages.items():
            w.writerow([e, int(c)])


def run_sim(
    timelines: Sequence[AttachmentTimeline],
    ta_map: TrackingAreaMap,
    mode: str = "conventional",
    tal_length: int = 1,
    traffic: TrafficConfig | None = None,
    seed: int = 0,
    tal_policy: str = "grow",
) -> SimReport:
    """Simulate paging over the attachment timelines.

    Tracking areas are taken from ``ta_map`` via each tick's serving eNB, so
    one set of timelines can be replayed over several TA maps. In TAL mode a
    UE gets a fresh TAL at tick 0 and whenever its TA leaves its TAL. Call
    draws and TAL growth use separate RNG streams, so runs that differ only
    in mode or TAL length page the same UEs at the same ticks.
    """
    traffic = traffic or TrafficConfig()
    if mode not in ("conventional", "tal"):
        raise ValueError(f"mode must be 'conventional' or 'tal', got {mode!r}")
    if mode == "conventional":
        tal_length = 1
    if not 1 <= tal_length <= MAX_TAL_LENGTH:
        raise ValueError(f"tal_length must be in 1..{MAX_TAL_LENGTH}")
    if not timelines:
        raise SimulationError("no timelines to simulate")
    ticks = np.asarray(timelines[0].ticks)
    for tl in timelines[1:]:
        if len(tl.ticks) != len(ticks) or not np.array_equal(tl.ticks, ticks):
            raise SimulationError(f"timeline of UE {tl.ue_id!r} covers a different tick range")

    enb_ids = sorted(ta_map.enb_to_ta, key=id_key)
    enb_index = {e: i for i, e in enumerate(enb_ids)}
    enb_arr = np.asarray(enb_ids)
    ta_ids = ta_map.ta_ids
    ta_index = {t: i for i, t in enumerate(ta_ids)}
    enb_ta = np.array([ta_index[ta_map.enb_to_ta[e]] for e in enb_ids], dtype=np.int64)
    ta_enbs = [np.array(sorted(enb_index[e] for e in ta_map.tas[t]), dtype=np.int64) for t in ta_ids]

    n, T, n_enb = len(timelines), len(ticks), len(enb_ids)
    try:
        E = np.empty((n, T), dtype=np.int64)
        for u, tl in enumerate(timelines):
            E[u] = [enb_index[e] for e in tl.enb_ids.tolist()]
    except KeyError as exc:
        raise SimulationError(f"eNB {exc.args[0]!r} is not in the tracking-area map") from None
    A = enb_ta[E]
    ue_ids = [tl.ue_id for tl in timelines]

    traffic_rng = np.random.default_rng([seed, 0])
    tal_rng = np.random.default_rng([seed, 1])
    n_draw = int(math.floor(traffic.call_fraction * n + 1e-9))
    busy_until = np.zeros(n, dtype=np.int64)
    pages = np.zeros(n_enb, dtype=np.int64)
    records: list[PageRecord] = []
    tals: list[tuple[int, ...]] = [()] * n
    tal_sets: list[frozenset] = [frozenset()] * n
    refreshes = suppressed = occupied = 0

    for t in range(T):
        tick = int(ticks[t])
        occ = np.bincount(E[:, t], minlength=n_enb)
        network_users = int(np.count_nonzero(occ))
        occupied += network_users
        if mode == "tal":
            movers = range(n) if t == 0 else np.flatnonzero(A[:, t] != A[:, t - 1])
            for u in movers:
                cur = int(A[u, t])
                if cur not in tal_sets[u]:
                    tal = make_tal(ta_ids[cur], tal_length, ta_map, tal_rng, tal_policy)
                    tals[u] = tuple(ta_index[x] for x in tal.ta_ids)
                    tal_sets[u] = frozenset(tals[u])
                    refreshes += 1
        if n_draw == 0:
            continue
        for u in traffic_rng.choice(n, size=n_draw, replace=False):
            u = int(u)
            if busy_until[u] > t:
                suppressed += 1
                continue
            domain = tals[u] if mode == "tal" else (int(A[u, t]),)
            enbs = np.sort(np.concatenate([ta_enbs[x] for x in domain]))
            pages[enbs] += 1
            records.append(
                PageRecord(
                    tick=tick,
                    target_ue=ue_ids[u],
                    serving_enb=enb_ids[E[u, t]],
                    broadcast_tas=tuple(ta_ids[x] for x in domain),
                    enbs_paged=enb_arr[enbs],
                    enbs_with_users=int(np.count_nonzero(occ[enbs])),
                    network_enbs_with_users=network_users,
                )
            )
            busy_until[u] = t + traffic.call_duration_ticks

    config = {
        "mode": mode,
        "tal_length": int(tal_length),
        "tal_policy": tal_policy,
        "ta_map_id": ta_map.digest(),
        "ta_count": len(ta_map),
        "seed": seed,
        "call_fraction": traffic.call_fraction,
        "call_duration_ticks": traffic.call_duration_ticks,
        "n_ues": n,
        "duration_ticks": T,
        "tick_seconds": TICK_SECONDS,
    }
    return SimReport(
        per_enb_pages={e: int(pages[i]) for i, e in enumerate(enb_ids)},
        page_records=records,
        config=config,
        ue_ticks=n * T,
        occupied_enb_ticks=occupied,
        suppressed=suppressed,
        tal_refreshes=refreshes,
    )


# -----------------------------------------------------------------------------
# Capacity


class Unbounded:
    """Marker for a capacity that no recorded load constrains."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "UNBOUNDED"

    def __reduce__(self):
        return (Unbounded, ())


UNBOUNDED = Unbounded()


def hourly_page_budget(pages_per_sec: float = PAGE_BUDGET_PER_SEC, seconds: int = 3600) -> int:
    return int(round(pages_per_sec * seconds))


@dataclass(frozen=True)
class CapacityEstimate:
    max: float | Unbounded
    p95: float | Unbounded
    median: float | Unbounded
    page_budget_per_hour: int
    load_max: float
    load_p95: float
    load_median: float

    def as_row(self) -> dict:
        def fmt(v):
            return "unbounded" if v is UNBOUNDED else v

        return {"capacity_max": fmt(self.max), "capacity_p95": fmt(self.p95), "capacity_median": fmt(self.median)}


def capacity_estimate(report: SimReport, page_budget_per_hour: int, hour_ticks: int = HOUR_TICKS) -> CapacityEstimate:
    """Supportable users at the max / 95th-percentile / median loaded eNB.

    Linear scaling: users = N_sim * budget / load. An eNB with zero load
    yields UNBOUNDED rather than a number.
    """
    if page_budget_per_hour <= 0:
        raise ValueError("page budget must be positive")
    if report.duration_ticks != hour_ticks:
        raise SimulationError(
            f"capacity needs exactly one simulated hour ({hour_ticks} ticks), got {report.duration_ticks}"
        )
    loads = np.array(list(report.per_enb_pages.values()), dtype=float)
    lmax, l95, lmed = float(loads.max()), float(np.percentile(loads, 95)), float(np.median(loads))

    def users(load: float):
        if load <= 0:
            return UNBOUNDED
        return report.n_ues * page_budget_per_hour / load

    return CapacityEstimate(users(lmax), users(l95), users(lmed), page_budget_per_hour, lmax, l95, lmed)


# -----------------------------------------------------------------------------
# Paging-log analysis


@dataclass(frozen=True)
class PagingLogSummary:
    counts: dict
    intervals: list
    intervals_by_identifier: dict = field(default_factory=dict)

    def repeat_fraction(self) -> float:
        """Fraction of identifiers paged more than once."""
        if not self.counts:
            return 0.0
        return sum(1 for c in self.counts.values() if c > 1) / len(self.counts)


def analyze_paging_log(log: Iterable[tuple[float, Hashable]], collapse_s: float = 1.0) -> PagingLogSummary:
    """Per-identifier page counts and inter-page gaps.

    Repeats of an identifier within ``collapse_s`` of its last counted page
    fold into that page, so every reported gap exceeds ``collapse_s``.
    """
    last_counted: dict = {}
    counts: dict = {}
    by_id: dict = {}
    intervals: list[float] = []
    prev_ts = -math.inf
    for ts, ident in log:
        ts = float(ts)
        if ts < prev_ts:
            raise ValueError(f"timestamps must be non-decreasing ({ts} after {prev_ts})")
        prev_ts = ts
        last = last_counted.get(ident)
        if last is not None and ts - last <= collapse_s:
            continue
        if last is not None:
            gap = ts - last
            intervals.append(gap)
            by_id.setdefault(ident, []).append(gap)
        last_counted[ident] = ts
        counts[ident] = counts.get(ident, 0) + 1
    return PagingLogSummary(counts, intervals, by_id)


PGPP_SHARED_IMSI = "001010000000001"


def _synthetic_imsi(ue_id) -> str:
    digest = hashlib.sha256(repr(ue_id).encode()).digest()
    return f"00101{int.from_bytes(digest[:8], 'big') % 10**10:010d}"


def paging_log_from_report(
    report: SimReport, shared_imsi: bool, imsi: str = PGPP_SHARED_IMSI, tick_seconds: float = TICK_SECONDS
) -> list[tuple[float, str]]:
    """What an over-the-air observer logs: (timestamp, paged identifier).

    With shared IMSIs every page carries the same identifier; otherwise each
    UE gets a distinct synthetic IMSI.
    """
    out = []
    for r in report.page_records:
        ident = imsi if shared_imsi else _synthetic_imsi(r.target_ue)
        out.append((r.tick * tick_seconds, ident))
    return out


@dataclass(frozen=True)
class PagingConfig:
    mode: str = "conventional"
    tal_length: int = 1
    call_fraction: float = CALL_FRACTION
    call_duration_ticks: int = CALL_DURATION_TICKS
    duration_ticks: int = HOUR_TICKS
    page_budget_per_sec: float = PAGE_BUDGET_PER_SEC
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("conventional", "tal"):
            raise ValueError(f"mode must be conventional or tal, got {self.mode!r}")
        if not 1 <= self.tal_length <= MAX_TAL_LENGTH:
            raise ValueError(f"tal_length must be in 1..{MAX_TAL_LENGTH}")
        TrafficConfig(self.call_fraction, self.call_duration_ticks)

    @property
    def traffic(self) -> TrafficConfig:
        return TrafficConfig(self.call_fraction, self.call_duration_ticks)

    @classmethod
    def from_mapping(cls, data: Mapping) -> "PagingConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown paging config keys: {sorted(unknown)}")
        return cls(**data)
