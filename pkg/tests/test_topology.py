from __future__ import annotations

import io
import itertools

import numpy as np
import pytest
from scipy.spatial import Delaunay

from conftest import PROJ, nearest_site, sites_from_xy, topo_from_xy
from pgpp.errors import (
    DegenerateGeometryError,
    InvalidKError,
    OutOfRegionError,
    TopologyParseError,
    TopologyTooSmallError,
)
from pgpp.topology import (
    CellLocator,
    EnbSite,
    Topology,
    TrackingAreaMap,
    assign_enb,
    dedupe_sites,
    kmeans_tas,
    load_topology,
    read_opencellid,
    synth_topology,
    voronoi_cells,
    write_sites_csv,
)


def exact_voronoi_neighbors(xy: np.ndarray, region) -> set[tuple[int, int]]:
    """Brute force: i, j are neighbours iff the part of their bisector where
    both are nearest (a set of linear inequalities) has positive length inside
    the region."""
    xmin, ymin, xmax, ymax = region
    out = set()
    n = len(xy)
    for i, j in itertools.combinations(range(n), 2):
        a, b = xy[i], xy[j]
        mid = (a + b) / 2
        d = np.array([-(b - a)[1], (b - a)[0]])
        lo, hi = -1e12, 1e12
        # |p-a|^2 <= |p-k|^2  <=>  2 p.(k-a) <= |k|^2 - |a|^2, with p = mid + t d
        cons = []
        for k in range(n):
            if k in (i, j):
                continue
            c = xy[k]
            cons.append((2 * np.dot(d, c - a), np.dot(c, c) - np.dot(a, a) - 2 * np.dot(mid, c - a)))
        for dim, (vmin, vmax) in enumerate([(xmin, xmax), (ymin, ymax)]):
            cons.append((d[dim], vmax - mid[dim]))
            cons.append((-d[dim], mid[dim] - vmin))
        for coef, rhs in cons:
            if abs(coef) < 1e-15:
                if rhs < 0:
                    lo, hi = 1, 0
                continue
            t = rhs / coef
            if coef > 0:
                hi = min(hi, t)
            else:
                lo = max(lo, t)
        if (hi - lo) * np.linalg.norm(d) > 1e-6:
            out.add((i, j))
    return out


def test_square_corners_give_four_congruent_cells_with_two_neighbors():
    xy = np.array([[-1000, -1000], [1000, -1000], [1000, 1000], [-1000, 1000]], float)
    cells = voronoi_cells(sites_from_xy(xy), (-3000, -3000, 3000, 3000), PROJ)
    areas = [c.area_m2 for c in cells]
    assert np.allclose(areas, 9e6, rtol=1e-9)
    assert [sorted(c.neighbors) for c in cells] == [[1, 3], [0, 2], [1, 3], [0, 2]]


def test_two_sites_is_too_small():
    with pytest.raises(TopologyTooSmallError):
        voronoi_cells(sites_from_xy([[0, 0], [100, 0]]))


def test_collinear_and_duplicate_sites_are_degenerate():
    with pytest.raises(DegenerateGeometryError):
        voronoi_cells(sites_from_xy([[0, 0], [100, 0], [200, 0], [300, 0]]))
    with pytest.raises(DegenerateGeometryError):
        voronoi_cells(sites_from_xy([[0, 0], [0, 0], [100, 50]]))


def test_site_outside_region_is_rejected():
    with pytest.raises(OutOfRegionError):
        voronoi_cells(sites_from_xy([[0, 0], [100, 0], [0, 100], [5000, 5000]]), (-10, -10, 200, 200), PROJ)


def test_cells_partition_the_region():
    rng = np.random.default_rng(3)
    xy = rng.uniform(-5000, 5000, (60, 2))
    region = (-6000, -6000, 6000, 6000)
    cells = voronoi_cells(sites_from_xy(xy), region, PROJ)
    assert sum(c.area_m2 for c in cells) == pytest.approx(12000 * 12000, rel=1e-9)
    for c in cells:
        assert c.enb_id not in c.neighbors
        for nb in c.neighbors:
            assert c.enb_id in cells[nb].neighbors


def test_neighbors_match_exact_bisector_oracle():
    rng = np.random.default_rng(11)
    for trial in range(5):
        xy = rng.uniform(-4000, 4000, (25, 2))
        region = (-5000, -5000, 5000, 5000)
        cells = voronoi_cells(sites_from_xy(xy), region, PROJ)
        got = {(i, j) for i, c in enumerate(cells) for j in c.neighbors if i < j}
        assert got == exact_voronoi_neighbors(xy, region)


def test_neighbors_are_a_subset_of_delaunay_edges():
    rng = np.random.default_rng(5)
    xy = rng.uniform(-4000, 4000, (40, 2))
    cells = voronoi_cells(sites_from_xy(xy), (-5000, -5000, 5000, 5000), PROJ)
    tri = Delaunay(xy)
    edges = {tuple(sorted((int(s[a]), int(s[b])))) for s in tri.simplices for a, b in ((0, 1), (1, 2), (0, 2))}
    got = {(i, j) for i, c in enumerate(cells) for j in c.neighbors if i < j}
    assert got <= edges


def test_point_location_matches_nearest_site_sampling():
    rng = np.random.default_rng(2)
    xy = rng.uniform(-5000, 5000, (50, 2))
    region = (-6000, -6000, 6000, 6000)
    topo = topo_from_xy(xy, region)
    pts = rng.uniform(-6000, 6000, (10_000, 2))
    got = topo.locator.locate(pts)
    assert np.array_equal(got, nearest_site(topo.xy, pts))


def test_assign_enb_examples():
    xy = np.array([[0, 0], [2000, 0], [1000, 3000], [-1500, 2500]], float)
    topo = topo_from_xy(xy, (-3000, -3000, 4000, 5000), ids=[10, 4, 7, 2])
    for i, e in enumerate(topo.enb_ids):
        assert assign_enb(topo.xy[i], topo.cells) == e
    mid = (topo.xy[0] + topo.xy[1]) / 2  # on the 10|4 boundary
    assert assign_enb(mid, topo.locator) == 4
    with pytest.raises(OutOfRegionError):
        assign_enb((1e6, 0), topo.locator)


def test_assign_enb_random_points_match_nearest():
    rng = np.random.default_rng(9)
    xy = rng.uniform(-3000, 3000, (30, 2))
    topo = topo_from_xy(xy, (-3500, -3500, 3500, 3500))
    pts = rng.uniform(-3500, 3500, (1000, 2))
    want = nearest_site(topo.xy, pts)
    assert [assign_enb(p, topo.locator) for p in pts] == [topo.enb_ids[i] for i in want]


def test_two_cluster_ta_adjacency_follows_voronoi_edges():
    rng = np.random.default_rng(4)
    xy = np.vstack([rng.normal([-3000, 0], 400, (5, 2)), rng.normal([3000, 0], 400, (5, 2))])
    region = (-5000, -3000, 5000, 3000)
    tas = ["A"] * 5 + ["B"] * 5
    topo = topo_from_xy(xy, region, tas=tas)
    pairs = exact_voronoi_neighbors(xy, region)
    crosses = any(tas[i] != tas[j] for i, j in pairs)
    assert crosses
    assert topo.ta_map.adjacency["A"] == {"B"}
    assert topo.ta_map.adjacency["B"] == {"A"}


def test_load_topology_single_ta_has_no_adjacency():
    csv_text = "enb_id,lat,lon,ta_id\n1,40.0,-75.0,A\n2,40.01,-75.0,A\n3,40.0,-75.01,A\n"
    sites, ta_map = load_topology(io.StringIO(csv_text))
    assert len(sites) == 3
    assert ta_map.ta_ids == ["A"]
    assert ta_map.adjacency == {"A": frozenset()}


def test_load_topology_reports_malformed_row():
    csv_text = "enb_id,lat,lon,ta_id\n1,40.0,-75.0,1\n2,north,-75.0,1\n"
    with pytest.raises(TopologyParseError) as err:
        load_topology(io.StringIO(csv_text))
    assert err.value.row == 3
    bad_lat = "enb_id,lat,lon,ta_id\n1,40.0,-75.0,1\n2,95.0,-75.0,1\n"
    with pytest.raises(TopologyParseError, match="row 3"):
        load_topology(io.StringIO(bad_lat))


def test_load_topology_dedupes_and_counts_usable_sites():
    rows = "enb_id,lat,lon,ta_id\n5,40.0,-75.0,1\n3,40.0,-75.0,1\n4,40.02,-75.0,1\n"
    with pytest.raises(TopologyTooSmallError):
        load_topology(io.StringIO(rows))
    sites = dedupe_sites([EnbSite(5, 1.0, 1.0, 0), EnbSite(3, 1.0, 1.0, 0), EnbSite(9, 2.0, 1.0, 0)])
    assert [s.enb_id for s in sites] == [3, 9]


def test_opencellid_column_mapping(tmp_path):
    path = tmp_path / "cells.csv"
    path.write_text(
        "radio,mcc,net,area,cell,unit,lon,lat,range,samples,changeable,created,updated,averageSignal\n"
        f"LTE,310,410,100,{(1 << 8) | 3},0,-75.0,40.0,1000,1,1,0,0,0\n"
        f"LTE,310,410,100,{(1 << 8) | 4},0,-75.0,40.0,1000,1,1,0,0,0\n"
        f"LTE,310,410,101,{(2 << 8) | 1},0,-75.01,40.01,1000,1,1,0,0,0\n"
        "GSM,310,410,7,99,0,-75.02,40.02,1000,1,1,0,0,0\n"
    )
    sites = read_opencellid(path)
    assert [(s.enb_id, s.ta_id) for s in sites] == [(1, 100), (2, 101)]


def test_kmeans_edge_cases_and_determinism():
    rng = np.random.default_rng(0)
    sites = sites_from_xy(rng.uniform(-4000, 4000, (40, 2)))
    one = kmeans_tas(sites, 1, seed=1)
    assert len(one) == 1 and len(one.tas[0]) == 40
    alln = kmeans_tas(sites, 40, seed=1)
    assert len(alln) == 40 and all(len(m) == 1 for m in alln.tas.values())
    a = kmeans_tas(sites, 6, seed=3)
    b = kmeans_tas(sites, 6, seed=3)
    assert a.to_dict() == b.to_dict()
    with pytest.raises(InvalidKError):
        kmeans_tas(sites, 41, seed=1)
    with pytest.raises(InvalidKError):
        kmeans_tas(sites, 0, seed=1)


def test_kmeans_assigns_each_site_to_nearest_center():
    rng = np.random.default_rng(8)
    xy = rng.uniform(-4000, 4000, (200, 2))
    ta_map = kmeans_tas(sites_from_xy(xy), 9, seed=2, projection=PROJ)
    labels = np.array([ta_map.enb_to_ta[i] for i in range(200)])
    centers = np.array([xy[labels == k].mean(axis=0) for k in range(9)])
    assert np.array_equal(nearest_site(centers, xy), labels)


@pytest.mark.slow
def test_kmeans_ta_counts_on_synthetic_metro():
    topo = synth_topology(n_sites=1000, seed=1, n_tas=1)
    for k in (25, 50, 100, 500, 1000):
        m = topo.with_kmeans_tas(k, seed=0).ta_map
        assert len(m) == k
        assert sum(len(v) for v in m.tas.values()) == len(topo.sites)


def test_ta_map_partition_and_adjacency_consistency(topo500):
    ta_map = topo500.ta_map
    members = [e for m in ta_map.tas.values() for e in m]
    assert len(members) == len(set(members)) == len(topo500.sites)
    cell_of = {c.enb_id: c for c in topo500.cells}
    for a, b in itertools.permutations(ta_map.ta_ids, 2):
        linked = any(nb in ta_map.tas[b] for e in ta_map.tas[a] for nb in cell_of[e].neighbors)
        assert (b in ta_map.adjacency[a]) == linked


def test_ta_map_validation():
    with pytest.raises(ValueError):
        TrackingAreaMap({1: frozenset()}, {})
    with pytest.raises(ValueError):
        TrackingAreaMap({1: frozenset({1}), 2: frozenset({1})}, {})
    with pytest.raises(ValueError):
        TrackingAreaMap({1: frozenset({1}), 2: frozenset({2})}, {1: frozenset({2})})


def test_topology_json_and_csv_round_trip(tmp_path, topo500):
    again = Topology.from_json(topo500.to_json())
    assert again.ta_map.to_dict() == topo500.ta_map.to_dict()
    assert np.allclose(again.xy, topo500.xy)
    path = tmp_path / "sites.csv"
    with open(path, "w", newline="") as fh:
        write_sites_csv(topo500.sites, fh)
    sites, ta_map = load_topology(path)
    assert ta_map.to_dict() == topo500.ta_map.to_dict()


def test_locator_tie_break_uses_lowest_id():
    xy = np.array([[-1000, 0], [1000, 0], [0, 3000]], float)
    topo = topo_from_xy(xy, (-2000, -2000, 2000, 4000), ids=["b", "a", "c"])
    loc = CellLocator(topo.cells)
    assert loc.locate_one(0.0, 0.0) == "a"
