"""
Cell-site topology: eNB sites, Voronoi coverage cells, tracking-area maps.

All geometry is done in a local azimuthal equidistant projection centred on the
site centroid, so distances, k-means and areas are in metres.

Usage:
    sites, ta_map = load_topology("sites.csv")
    topo = Topology.build(sites)
    topo.locator.locate_one(x, y)
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Any, Hashable, Iterable, Mapping, Sequence

import numpy as np
import shapely
from scipy.spatial import Delaunay, QhullError, cKDTree

from .errors import (
    DegenerateGeometryError,
    InvalidKError,
    OutOfRegionError,
    TopologyParseError,
    TopologyTooSmallError,
)

EARTH_RADIUS_M = 6_371_008.8

Region = tuple[float, float, float, float]  # xmin, ymin, xmax, ymax (metres)

# OpenCellID export: radio,mcc,net,area,cell,unit,lon,lat,...
# LTE "cell" is the 28-bit ECI = eNB id << 8 | sector; "area" is the TAC.
OPENCELLID_COLUMNS = {"enb_id": "cell", "lat": "lat", "lon": "lon", "ta_id": "area"}


def id_key(value: Hashable) -> tuple:
    """Total order over mixed int/str identifiers (ints first)."""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return (0, int(value), "")
    return (1, 0, str(value))


def _parse_id(raw: str) -> int | str:
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        return raw


@dataclass(frozen=True)
class EnbSite:
    enb_id: Hashable
    lat: float
    lon: float
    ta_id: Hashable

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude {self.lat} out of range for eNB {self.enb_id}")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"longitude {self.lon} out of range for eNB {self.enb_id}")


class AzimuthalEquidistant:
    """Spherical azimuthal equidistant projection about (lat0, lon0)."""

    def __init__(self, lat0: float, lon0: float):
        self.lat0 = float(lat0)
        self.lon0 = float(lon0)
        self._phi0 = math.radians(self.lat0)
        self._lam0 = math.radians(self.lon0)

    @classmethod
    def centered_on(cls, sites: Sequence[EnbSite]) -> "AzimuthalEquidistant":
        lats = np.array([s.lat for s in sites])
        lons = np.array([s.lon for s in sites])
        return cls(float(lats.mean()), float(lons.mean()))

    def forward(self, lat, lon):
        phi = np.radians(np.asarray(lat, dtype=float))
        dlam = np.radians(np.asarray(lon, dtype=float)) - self._lam0
        sin0, cos0 = math.sin(self._phi0), math.cos(self._phi0)
        cos_c = sin0 * np.sin(phi) + cos0 * np.cos(phi) * np.cos(dlam)
        c = np.arccos(np.clip(cos_c, -1.0, 1.0))
        with np.errstate(invalid="ignore", divide="ignore"):
            k = np.where(c > 1e-12, c / np.sin(c), 1.0)
        x = EARTH_RADIUS_M * k * np.cos(phi) * np.sin(dlam)
        y = EARTH_RADIUS_M * k * (cos0 * np.sin(phi) - sin0 * np.cos(phi) * np.cos(dlam))
        return x, y

    def inverse(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        rho = np.hypot(x, y)
        c = rho / EARTH_RADIUS_M
        sin0, cos0 = math.sin(self._phi0), math.cos(self._phi0)
        with np.errstate(invalid="ignore", divide="ignore"):
            lat = np.where(
                rho > 1e-9,
                np.arcsin(np.cos(c) * sin0 + y * np.sin(c) * cos0 / np.where(rho > 0, rho, 1.0)),
                self._phi0,
            )
        lon = self._lam0 + np.arctan2(x * np.sin(c), rho * cos0 * np.cos(c) - y * sin0 * np.sin(c))
        return np.degrees(lat), (np.degrees(lon) + 180.0) % 360.0 - 180.0

    def to_dict(self) -> dict:
        return {"lat0": self.lat0, "lon0": self.lon0}


# -----------------------------------------------------------------------------
# Coverage cells


@dataclass(frozen=True, eq=False)
class CoverageCell:
    enb_id: Hashable
    polygon: np.ndarray  # (k, 2) counter-clockwise vertices, metres
    neighbors: frozenset

    @property
    def area_m2(self) -> float:
        x, y = self.polygon[:, 0], self.polygon[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def default_region(xy: np.ndarray) -> Region:
    """Axis-aligned bounding box of the points, inflated by 10%."""
    lo = xy.min(axis=0)
    hi = xy.max(axis=0)
    pad = 0.05 * (hi - lo)
    pad = np.where(pad > 0, pad, 1.0)
    return (float(lo[0] - pad[0]), float(lo[1] - pad[1]), float(hi[0] + pad[0]), float(hi[1] + pad[1]))


def _clip_halfplane(pts, labels, ax, ay, b, label, eps):
    # keep {p : ax*px + ay*py <= b}; labels[k] tags the edge pts[k] -> pts[k+1]
    fs = [ax * x + ay * y - b for x, y in pts]
    if max(fs) <= eps:
        return pts, labels
    out, out_lab = [], []
    n = len(pts)
    for k in range(n):
        px, py = pts[k]
        fp = fs[k]
        nk = (k + 1) % n
        qx, qy = pts[nk]
        fq = fs[nk]
        if fp <= eps:
            if fq > eps:
                if fp < -eps:
                    out.append((px, py))
                    out_lab.append(labels[k])
                    t = fp / (fp - fq)
                    out.append((px + t * (qx - px), py + t * (qy - py)))
                    out_lab.append(label)
                else:
                    out.append((px, py))
                    out_lab.append(label)
            else:
                out.append((px, py))
                out_lab.append(labels[k])
        elif fq < -eps:
            t = fp / (fp - fq)
            out.append((px + t * (qx - px), py + t * (qy - py)))
            out_lab.append(labels[k])
    return out, out_lab


def _dedupe_ring(pts, labels, tol):
    i = 0
    while len(pts) > 1 and i < len(pts):
        j = (i + 1) % len(pts)
        if abs(pts[i][0] - pts[j][0]) <= tol and abs(pts[i][1] - pts[j][1]) <= tol:
            del pts[i]
            del labels[i]
        else:
            i += 1
    return pts, labels


def _voronoi_from_xy(xy: np.ndarray, region: Region) -> tuple[list[np.ndarray], list[set[int]]]:
    n = len(xy)
    if n < 3:
        raise TopologyTooSmallError(f"need at least 3 sites for a Voronoi partition, got {n}")
    if len(np.unique(xy, axis=0)) != n:
        raise DegenerateGeometryError("duplicate site coordinates")
    xmin, ymin, xmax, ymax = region
    inside = (xy[:, 0] >= xmin) & (xy[:, 0] <= xmax) & (xy[:, 1] >= ymin) & (xy[:, 1] <= ymax)
    if not inside.all():
        raise OutOfRegionError(f"{int((~inside).sum())} sites lie outside the bounding region")
    centred = xy - xy.mean(axis=0)
    if np.linalg.matrix_rank(centred, tol=1e-9 * max(1.0, np.abs(centred).max())) < 2:
        raise DegenerateGeometryError("sites are collinear")
    try:
        tri = Delaunay(xy)
    except QhullError as exc:
        raise DegenerateGeometryError(f"Delaunay triangulation failed: {exc}") from None

    scale = math.hypot(xmax - xmin, ymax - ymin)
    eps = 1e-10 * scale
    edge_tol = 1e-7 * scale
    indptr, indices = tri.vertex_neighbor_vertices
    box = [(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)]
    polygons: list[np.ndarray] = []
    edge_neighbors: list[set[int]] = []
    for i in range(n):
        xi, yi = float(xy[i, 0]), float(xy[i, 1])
        # work relative to the generator to keep bisector arithmetic well conditioned
        pts = [(x - xi, y - yi) for x, y in box]
        labels = [-1, -1, -1, -1]
        for j in indices[indptr[i]:indptr[i + 1]]:
            ax = float(xy[j, 0]) - xi
            ay = float(xy[j, 1]) - yi
            pts, labels = _clip_halfplane(pts, labels, ax, ay, 0.5 * (ax * ax + ay * ay), int(j), eps)
        pts, labels = _dedupe_ring(pts, labels, eps)
        ring = np.array(pts) + (xi, yi)
        polygons.append(ring)
        nb = set()
        m = len(ring)
        for k in range(m):
            lab = labels[k]
            if lab >= 0:
                d = ring[(k + 1) % m] - ring[k]
                if math.hypot(d[0], d[1]) > edge_tol:
                    nb.add(lab)
        edge_neighbors.append(nb)
    # symmetric closure guards against one-sided rounding at near-degenerate vertices
    for i, nb in enumerate(edge_neighbors):
        for j in list(nb):
            edge_neighbors[j].add(i)
    return polygons, edge_neighbors


def voronoi_cells(
    sites: Sequence[EnbSite],
    bounding_region: Region | None = None,
    projection: AzimuthalEquidistant | None = None,
) -> list[CoverageCell]:
    """Voronoi coverage cells of ``sites`` clipped to ``bounding_region``.

    The region is in metres of ``projection`` (default: centred on the sites).
    Neighbor sets contain eNBs sharing an edge of positive length; cells that
    only touch at a vertex are not neighbors.
    """
    if len(sites) < 3:
        raise TopologyTooSmallError(f"need at least 3 sites for a Voronoi partition, got {len(sites)}")
    projection = projection or AzimuthalEquidistant.centered_on(sites)
    xy = _project_sites(sites, projection)
    region = bounding_region if bounding_region is not None else default_region(xy)
    polygons, nbs = _voronoi_from_xy(xy, region)
    ids = [s.enb_id for s in sites]
    return [
        CoverageCell(ids[i], polygons[i], frozenset(ids[j] for j in nbs[i]))
        for i in range(len(sites))
    ]


def _project_sites(sites: Sequence[EnbSite], projection: AzimuthalEquidistant) -> np.ndarray:
    x, y = projection.forward([s.lat for s in sites], [s.lon for s in sites])
    return np.column_stack([x, y])


class CellLocator:
    """Point-in-cell lookup over a list of coverage cells.

    Points on a shared boundary (within ``tol`` metres) go to the lowest enb_id.
    """

    def __init__(self, cells: Sequence[CoverageCell], tol: float = 1e-6):
        self.cells = list(cells)
        self.enb_ids = [c.enb_id for c in self.cells]
        self.tol = tol
        self._polys = [shapely.Polygon(c.polygon) for c in self.cells]
        self._tree = shapely.STRtree(self._polys)
        order = sorted(range(len(self.cells)), key=lambda i: id_key(self.enb_ids[i]))
        self._rank = np.empty(len(order), dtype=np.int64)
        self._rank[order] = np.arange(len(order))
        self._by_rank = np.asarray(order, dtype=np.int64)

    def locate(self, xy: np.ndarray) -> np.ndarray:
        """Cell indices for an (m, 2) array of points; -1 where outside every cell."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if len(xy) == 0:
            return np.empty(0, dtype=np.int64)
        pts = shapely.points(xy)
        hit_pt, hit_poly = self._tree.query(pts, predicate="dwithin", distance=self.tol)
        sentinel = len(self.cells)
        best = np.full(len(xy), sentinel, dtype=np.int64)
        np.minimum.at(best, hit_pt, self._rank[hit_poly])
        out = np.full(len(xy), -1, dtype=np.int64)
        found = best < sentinel
        out[found] = self._by_rank[best[found]]
        return out

    def locate_one(self, x: float, y: float) -> Hashable:
        idx = int(self.locate(np.array([[x, y]]))[0])
        if idx < 0:
            raise OutOfRegionError(f"point ({x:.3f}, {y:.3f}) lies outside the coverage region")
        return self.enb_ids[idx]


def assign_enb(position: Sequence[float], cells: Sequence[CoverageCell] | CellLocator) -> Hashable:
    """eNB whose coverage cell contains ``position`` (projected metres)."""
    locator = cells if isinstance(cells, CellLocator) else CellLocator(cells)
    return locator.locate_one(float(position[0]), float(position[1]))


# -----------------------------------------------------------------------------
# Tracking areas


@dataclass(frozen=True, eq=False)
class TrackingAreaMap:
    tas: Mapping[Hashable, frozenset]
    adjacency: Mapping[Hashable, frozenset]

    def __post_init__(self):
        tas = {ta: frozenset(m) for ta, m in self.tas.items()}
        adj = {ta: frozenset(self.adjacency.get(ta, ())) for ta in tas}
        seen: dict[Hashable, Hashable] = {}
        for ta, members in tas.items():
            if not members:
                raise ValueError(f"tracking area {ta!r} is empty")
            for e in members:
                if e in seen:
                    raise ValueError(f"eNB {e!r} in both {seen[e]!r} and {ta!r}")
                seen[e] = ta
        for ta, nbs in adj.items():
            if ta in nbs:
                raise ValueError(f"tracking area {ta!r} adjacent to itself")
            for other in nbs:
                if other not in tas or ta not in adj[other]:
                    raise ValueError(f"adjacency {ta!r}-{other!r} is not symmetric")
        extra = set(self.adjacency) - set(tas)
        if extra:
            raise ValueError(f"adjacency mentions unknown tracking areas {sorted(extra, key=id_key)}")
        object.__setattr__(self, "tas", tas)
        object.__setattr__(self, "adjacency", adj)

    @cached_property
    def enb_to_ta(self) -> dict:
        return {e: ta for ta, members in self.tas.items() for e in members}

    @cached_property
    def ta_ids(self) -> list:
        return sorted(self.tas, key=id_key)

    def __len__(self) -> int:
        return len(self.tas)

    def __contains__(self, ta) -> bool:
        return ta in self.tas

    def to_dict(self) -> dict:
        return {
            "tas": [
                {"ta_id": ta, "enbs": sorted(self.tas[ta], key=id_key)} for ta in self.ta_ids
            ],
            "adjacency": [
                {"ta_id": ta, "adjacent": sorted(self.adjacency[ta], key=id_key)} for ta in self.ta_ids
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrackingAreaMap":
        return cls(
            {row["ta_id"]: frozenset(row["enbs"]) for row in data["tas"]},
            {row["ta_id"]: frozenset(row["adjacent"]) for row in data["adjacency"]},
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def ta_adjacency(cells: Sequence[CoverageCell], enb_to_ta: Mapping) -> dict:
    adj: dict[Hashable, set] = {ta: set() for ta in set(enb_to_ta.values())}
    for cell in cells:
        a = enb_to_ta[cell.enb_id]
        for nb in cell.neighbors:
            b = enb_to_ta[nb]
            if a != b:
                adj[a].add(b)
                adj[b].add(a)
    return {ta: frozenset(v) for ta, v in adj.items()}


def build_ta_map(cells: Sequence[CoverageCell], enb_to_ta: Mapping) -> TrackingAreaMap:
    tas: dict[Hashable, set] = {}
    for cell in cells:
        tas.setdefault(enb_to_ta[cell.enb_id], set()).add(cell.enb_id)
    return TrackingAreaMap({k: frozenset(v) for k, v in tas.items()}, ta_adjacency(cells, enb_to_ta))


def kmeans_labels(points: np.ndarray, k: int, seed: int, max_iter: int = 100) -> np.ndarray:
    """Lloyd's k-means with seeded farthest-point initialisation.

    The first centre is drawn with the seeded RNG; each further centre is the
    point farthest from all chosen centres (lowest index on ties). An empty
    cluster is reseeded at the point farthest from its assigned centre.
    Stops when no assignment changes, or after ``max_iter`` rounds.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if not 1 <= k <= n:
        raise InvalidKError(f"k={k} must be between 1 and the number of distinct locations ({n})")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    dmin = np.linalg.norm(points - points[chosen[0]], axis=1)
    for _ in range(1, k):
        j = int(np.argmax(dmin))
        chosen.append(j)
        dmin = np.minimum(dmin, np.linalg.norm(points - points[j], axis=1))
    centers = points[chosen].copy()

    labels = None
    for _ in range(max_iter):
        dist, new = cKDTree(centers).query(points)
        new = np.asarray(new, dtype=np.int64)
        dist = np.asarray(dist, dtype=float)
        counts = np.bincount(new, minlength=k)
        for c in np.flatnonzero(counts == 0):
            p = int(np.argmax(dist))
            counts[new[p]] -= 1
            new[p] = c
            dist[p] = 0.0
            centers[c] = points[p]
            counts[c] = 1
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, points)
        counts = np.bincount(labels, minlength=k)
        centers = sums / counts[:, None]
    return labels


def kmeans_tas(
    sites: Sequence[EnbSite],
    k: int,
    seed: int,
    projection: AzimuthalEquidistant | None = None,
    cells: Sequence[CoverageCell] | None = None,
) -> TrackingAreaMap:
    """Cluster sites into ``k`` custom tracking areas (TA ids 0..k-1)."""
    if k < 1:
        raise InvalidKError(f"k must be positive, got {k}")
    projection = projection or AzimuthalEquidistant.centered_on(sites)
    xy = _project_sites(sites, projection)
    uniq, inverse = np.unique(xy, axis=0, return_inverse=True)
    if k > len(uniq):
        raise InvalidKError(f"k={k} exceeds the number of distinct site locations ({len(uniq)})")
    labels = kmeans_labels(uniq, k, seed)[np.asarray(inverse).reshape(-1)]
    if cells is None:
        cells = voronoi_cells(sites, projection=projection)
    enb_to_ta = {s.enb_id: int(labels[i]) for i, s in enumerate(sites)}
    return build_ta_map(cells, enb_to_ta)


# -----------------------------------------------------------------------------
# Loading


def _iter_rows(source) -> Iterable[Mapping[str, Any]]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="") as fh:
            yield from csv.DictReader(fh)
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        yield from csv.DictReader(source)
    else:
        yield from source


def parse_site_records(source, columns: Mapping[str, str] | None = None) -> list[EnbSite]:
    """Parse tabular site records; rows are numbered from 2 (row 1 = header)."""
    cols = {"enb_id": "enb_id", "lat": "lat", "lon": "lon", "ta_id": "ta_id"}
    if columns:
        cols.update(columns)
    sites: list[EnbSite] = []
    seen_ids: dict = {}
    for rowno, row in enumerate(_iter_rows(source), start=2):
        try:
            raw = {k: row[v] for k, v in cols.items()}
        except KeyError as exc:
            raise TopologyParseError(rowno, f"missing column {exc.args[0]!r}") from None
        try:
            enb = _parse_id(str(raw["enb_id"]))
            ta = _parse_id(str(raw["ta_id"]))
            site = EnbSite(enb, float(raw["lat"]), float(raw["lon"]), ta)
        except (TypeError, ValueError) as exc:
            raise TopologyParseError(rowno, str(exc)) from None
        if enb == "" or ta == "":
            raise TopologyParseError(rowno, "empty identifier")
        if not (math.isfinite(site.lat) and math.isfinite(site.lon)):
            raise TopologyParseError(rowno, "non-finite coordinate")
        if enb in seen_ids:
            raise TopologyParseError(rowno, f"duplicate enb_id {enb!r} (first seen on row {seen_ids[enb]})")
        seen_ids[enb] = rowno
        sites.append(site)
    return sites


def dedupe_sites(sites: Iterable[EnbSite]) -> list[EnbSite]:
    """Drop sites sharing (lat, lon) with a lower enb_id; result sorted by enb_id."""
    kept: dict[tuple[float, float], EnbSite] = {}
    for s in sorted(sites, key=lambda s: id_key(s.enb_id)):
        kept.setdefault((s.lat, s.lon), s)
    return sorted(kept.values(), key=lambda s: id_key(s.enb_id))


def load_topology(source, columns: Mapping[str, str] | None = None) -> tuple[list[EnbSite], TrackingAreaMap]:
    """Read ``enb_id,lat,lon,ta_id`` records, dedupe, and build the TA map with adjacency.

    ``source`` may be a path, an open text file, or an iterable of mappings.
    """
    sites = dedupe_sites(parse_site_records(source, columns))
    if len(sites) < 3:
        raise TopologyTooSmallError(f"need at least 3 distinct sites, got {len(sites)}")
    topo = Topology.build(sites)
    return list(topo.sites), topo.ta_map


def read_opencellid(path, radio: str = "LTE", mcc: int | None = None, net: int | None = None) -> list[EnbSite]:
    """Sites from a raw OpenCellID export.

    Mapping: enb_id = cell >> 8 (LTE ECI minus sector byte), ta_id = area (TAC).
    Sectors of one eNB collapse to the first row seen for that eNB.
    """
    out: dict[int, EnbSite] = {}
    with open(path, newline="") as fh:
        for rowno, row in enumerate(csv.DictReader(fh), start=2):
            if row.get("radio", radio) != radio:
                continue
            if mcc is not None and int(row["mcc"]) != mcc:
                continue
            if net is not None and int(row["net"]) != net:
                continue
            try:
                enb = int(row["cell"]) >> 8
                site = EnbSite(enb, float(row["lat"]), float(row["lon"]), int(row["area"]))
            except (KeyError, ValueError) as exc:
                raise TopologyParseError(rowno, str(exc)) from None
            out.setdefault(enb, site)
    return dedupe_sites(out.values())


# -----------------------------------------------------------------------------
# Assembled topology


@dataclass(frozen=True, eq=False)
class Topology:
    sites: tuple[EnbSite, ...]
    projection: AzimuthalEquidistant
    region: Region
    cells: tuple[CoverageCell, ...]
    ta_map: TrackingAreaMap

    @classmethod
    def build(
        cls,
        sites: Sequence[EnbSite],
        region: Region | None = None,
        projection: AzimuthalEquidistant | None = None,
    ) -> "Topology":
        sites = tuple(sites)
        if len(sites) < 3:
            raise TopologyTooSmallError(f"need at least 3 sites, got {len(sites)}")
        projection = projection or AzimuthalEquidistant.centered_on(sites)
        xy = _project_sites(sites, projection)
        region = tuple(region) if region is not None else default_region(xy)
        cells = tuple(voronoi_cells(sites, region, projection))
        ta_map = build_ta_map(cells, {s.enb_id: s.ta_id for s in sites})
        topo = cls(sites, projection, region, cells, ta_map)
        topo.__dict__["xy"] = xy
        return topo

    @cached_property
    def xy(self) -> np.ndarray:
        return _project_sites(self.sites, self.projection)

    @cached_property
    def enb_ids(self) -> tuple:
        return tuple(s.enb_id for s in self.sites)

    @cached_property
    def index_of(self) -> dict:
        return {e: i for i, e in enumerate(self.enb_ids)}

    @cached_property
    def locator(self) -> CellLocator:
        return CellLocator(self.cells)

    def relabel(self, ta_map: TrackingAreaMap) -> "Topology":
        """Same geometry under a different tracking-area map."""
        missing = set(self.enb_ids) - set(ta_map.enb_to_ta)
        if missing:
            raise ValueError(f"{len(missing)} eNBs have no tracking area in the new map")
        sites = tuple(replace(s, ta_id=ta_map.enb_to_ta[s.enb_id]) for s in self.sites)
        topo = Topology(sites, self.projection, self.region, self.cells, ta_map)
        topo.__dict__["xy"] = self.xy
        return topo

    def with_kmeans_tas(self, k: int, seed: int) -> "Topology":
        return self.relabel(kmeans_tas(self.sites, k, seed, self.projection, self.cells))

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "projection": self.projection.to_dict(),
            "region": list(self.region),
            "sites": [
                {"enb_id": s.enb_id, "lat": s.lat, "lon": s.lon, "ta_id": s.ta_id} for s in self.sites
            ],
            **self.ta_map.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: Mapping) -> "Topology":
        sites = [EnbSite(r["enb_id"], r["lat"], r["lon"], r["ta_id"]) for r in data["sites"]]
        proj = AzimuthalEquidistant(**data["projection"])
        return cls.build(sites, tuple(data["region"]), proj)

    @classmethod
    def from_json(cls, text: str) -> "Topology":
        return cls.from_dict(json.loads(text))


def write_sites_csv(sites: Iterable[EnbSite], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["enb_id", "lat", "lon", "ta_id"])
    for s in sites:
        w.writerow([s.enb_id, repr(s.lat), repr(s.lon), s.ta_id])


# -----------------------------------------------------------------------------
# Synthetic metro-like topology


@dataclass(frozen=True)
class SynthTopologyConfig:
    n_sites: int = 500
    n_clusters: int = 8
    seed: int = 0
    n_tas: int | None = None
    center_lat: float = 34.05
    center_lon: float = -118.25
    extent_m: float = 40_000.0

    def __post_init__(self):
        if self.n_sites < 3:
            raise ValueError("n_sites must be at least 3")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be positive")


def synth_topology(cfg: SynthTopologyConfig | None = None, **kwargs) -> Topology:
    """Clustered urban/rural site layout with k-means tracking areas.

    Three quarters of the sites are drawn around Gaussian "downtown" clusters of
    varying spread, the rest uniformly over a square of half-width ``extent_m``.
    ``n_tas`` defaults to one TA per ~200 sites.
    """
    cfg = cfg or SynthTopologyConfig(**kwargs)
    rng = np.random.default_rng(cfg.seed)
    half = cfg.extent_m
    centers = rng.uniform(-0.7 * half, 0.7 * half, size=(cfg.n_clusters, 2))
    spreads = rng.uniform(0.05 * half, 0.2 * half, size=cfg.n_clusters)
    weights = rng.dirichlet(np.ones(cfg.n_clusters) * 2.0)
    n_clustered = int(round(0.75 * cfg.n_sites))
    which = rng.choice(cfg.n_clusters, size=n_clustered, p=weights)
    pts = centers[which] + rng.normal(size=(n_clustered, 2)) * spreads[which, None]
    uniform = rng.uniform(-half, half, size=(cfg.n_sites - n_clustered, 2))
    xy = np.clip(np.vstack([pts, uniform]), -half, half)
    proj = AzimuthalEquidistant(cfg.center_lat, cfg.center_lon)
    lat, lon = proj.inverse(xy[:, 0], xy[:, 1])
    sites = dedupe_sites(EnbSite(i, float(lat[i]), float(lon[i]), 0) for i in range(cfg.n_sites))
    base = Topology.build(sites)
    n_tas = cfg.n_tas if cfg.n_tas is not None else max(1, cfg.n_sites // 200)
    return base.with_kmeans_tas(n_tas, cfg.seed)
