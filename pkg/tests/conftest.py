from __future__ import annotations

import numpy as np
import pytest

from pgpp.topology import AzimuthalEquidistant, EnbSite, Topology, synth_topology

PROJ = AzimuthalEquidistant(40.0, -75.0)


def sites_from_xy(xy, tas=None, ids=None, proj=PROJ) -> list[EnbSite]:
    """EnbSites whose projection under ``proj`` lands on the given metre coordinates."""
    xy = np.asarray(xy, dtype=float)
    lat, lon = proj.inverse(xy[:, 0], xy[:, 1])
    ids = list(range(len(xy))) if ids is None else list(ids)
    tas = [0] * len(xy) if tas is None else list(tas)
    return [EnbSite(ids[i], float(lat[i]), float(lon[i]), tas[i]) for i in range(len(xy))]


def topo_from_xy(xy, region, tas=None, ids=None) -> Topology:
    return Topology.build(sites_from_xy(xy, tas, ids), region, PROJ)


def nearest_site(xy_sites: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Brute-force nearest site index for each point (ties -> lowest index)."""
    d = ((pts[:, None, :] - xy_sites[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)


@pytest.fixture(scope="session")
def topo500() -> Topology:
    return synth_topology(n_sites=500, seed=7, n_tas=50)
