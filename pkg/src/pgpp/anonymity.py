"""
Privacy metrics over paging simulation reports.

Degree of anonymity is the attacker's candidate-set entropy normalised by the
maximum, log2(S) / log2(N). Global-bulk attackers see which eNBs carry users;
local-bulk attackers see the users under one eNB; local-targeted attackers
learn only the area a page was broadcast over.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import AnonymityDomainError, SimulationError
from .paging import SimReport
from .topology import AzimuthalEquidistant, EnbSite, Topology


def degree_of_anonymity(S: float, N: float) -> float:
    """log2(S) / log2(N). ``S`` may be non-integer (e.g. a mean set size)."""
    if N < 2:
        raise AnonymityDomainError(f"population N={N} must be at least 2")
    if not 1 <= S <= N:
        raise AnonymityDomainError(f"candidate-set size S={S} must lie in [1, N={N}]")
    return math.log2(S) / math.log2(N)


def global_bulk_anonymity(report: SimReport, N: int, scope: str = "paged") -> float:
    """Network-wide passive attacker with shared IMSIs.

    S is the median over pages of the number of eNBs with at least one user;
    scope="paged" counts only eNBs in the broadcast domain, scope="network"
    counts every occupied eNB at that tick. Unique IMSIs (conventional mode)
    pin the victim, so the result is 0.
    """
    if not report.page_records:
        raise SimulationError("report has no page records")
    if report.mode == "conventional":
        return 0.0
    if scope == "paged":
        sizes = [r.enbs_with_users for r in report.page_records]
    elif scope == "network":
        sizes = [r.network_enbs_with_users for r in report.page_records]
    else:
        raise ValueError(f"unknown scope {scope!r}")
    S = float(np.median(sizes))
    if N < 2:
        return 0.0
    return degree_of_anonymity(max(S, 1.0), N)


def mean_users_per_occupied_enb(report: SimReport) -> float:
    if report.occupied_enb_ticks == 0:
        raise SimulationError("no attachments recorded")
    return report.ue_ticks / report.occupied_enb_ticks


def local_bulk_anonymity(report: SimReport, N: int) -> float:
    """Passive attacker at one eNB: S is the mean user count over occupied (eNB, tick) pairs."""
    S = mean_users_per_occupied_enb(report)
    return degree_of_anonymity(S, N)


@dataclass(frozen=True)
class AreaReport:
    areas_km2: np.ndarray

    @property
    def median(self) -> float:
        return float(np.median(self.areas_km2)) if len(self.areas_km2) else 0.0

    def percentile(self, q: float) -> float:
        return float(np.percentile(self.areas_km2, q)) if len(self.areas_km2) else 0.0

    def summary(self) -> dict:
        return {
            "pages": int(len(self.areas_km2)),
            "median_km2": self.median,
            "p5_km2": self.percentile(5),
            "p25_km2": self.percentile(25),
            "p75_km2": self.percentile(75),
            "p95_km2": self.percentile(95),
        }


def _coordinates(sites) -> Mapping:
    if isinstance(sites, Topology):
        return {e: sites.xy[i] for i, e in enumerate(sites.enb_ids)}
    if isinstance(sites, Mapping):
        return {e: np.asarray(p, dtype=float) for e, p in sites.items()}
    sites = list(sites)
    proj = AzimuthalEquidistant.centered_on(sites)
    x, y = proj.forward([s.lat for s in sites], [s.lon for s in sites])
    return {s.enb_id: np.array([x[i], y[i]]) for i, s in enumerate(sites)}


def area_anonymity(report: SimReport, sites: Topology | Sequence[EnbSite] | Mapping) -> AreaReport:
    """Axis-aligned bounding-box area (km^2) of each page's broadcast eNBs.

    ``sites`` is a Topology, a list of EnbSite (projected about their
    centroid), or a mapping enb_id -> (x, y) metres.
    """
    coords = _coordinates(sites)
    ids = list(coords)
    index = {e: i for i, e in enumerate(ids)}
    xy = np.array([coords[e] for e in ids], dtype=float).reshape(-1, 2)
    areas = np.empty(len(report.page_records))
    for k, rec in enumerate(report.page_records):
        pts = xy[[index[e] for e in rec.enbs_paged.tolist()]]
        span = pts.max(axis=0) - pts.min(axis=0)
        areas[k] = span[0] * span[1] / 1e6
    return AreaReport(areas)
