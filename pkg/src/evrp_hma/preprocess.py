"""Instance-level precomputation.

* Mercator projection of geographic coordinates (WGS84 semi-major axis).
* Floyd-Warshall closure over travel time where only charging stations may be
  used as relay nodes ("hyperarcs"), which restores the triangle inequality
  needed when station visits are dropped from a route.
* Per node-pair station rankings by detour distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Instance, Node, Route

WGS84_A = 6378137.0


def mercator_project(lng: float, lat: float) -> tuple[float, float]:
    """Spherical Mercator projection of ``(lng, lat)`` degrees to meters."""
    if not -90.0 < lat < 90.0:
        raise ValueError(f"latitude {lat} outside the open interval (-90, 90)")
    x = WGS84_A * math.pi * lng / 180.0
    y = WGS84_A * math.log(math.tan(math.pi / 4.0 + math.pi * lat / 360.0))
    return x, y


def projected_positions(instance: Instance) -> np.ndarray:
    """Cartesian coordinates of all nodes, projecting geographic instances."""
    if instance.coord_mode == "geographic":
        return np.array([mercator_project(nd.x, nd.y) for nd in instance.nodes])
    return instance.positions()


@dataclass
class HyperArcMap:
    """Relay station sequences of the closed arcs; pairs absent from ``relays`` are direct."""

    relays: dict
    dist: np.ndarray
    time: np.ndarray

    def relay(self, i: int, j: int) -> tuple:
        return self.relays.get((i, j), ())


def hyperarc_closure(instance: Instance) -> Instance:
    """Replace every arc by the fastest path whose interior nodes are stations only.

    Returns a new instance (``triangle_ok=True``) whose ``hyperarcs`` attribute
    holds the relay sequences.  Distances follow the chosen fastest paths.
    """
    n = instance.n
    T = np.array(instance.time, dtype=float)
    mid = np.full((n, n), -1, dtype=int)
    for k in instance.station_ids:
        cand = T[:, k][:, None] + T[k, :][None, :]
        better = cand < T * (1 - 1e-12) - 1e-12
        better[k, :] = False
        better[:, k] = False
        np.fill_diagonal(better, False)
        if better.any():
            T = np.where(better, cand, T)
            mid = np.where(better, k, mid)

    def path(i, j):
        k = mid[i, j]
        if k < 0:
            return []
        return path(i, k) + [int(k)] + path(k, j)

    relays = {}
    D = np.array(instance.dist, dtype=float)
    T2 = np.array(instance.time, dtype=float)
    d0, t0 = instance.dist, instance.time
    for i, j in zip(*np.nonzero(mid >= 0)):
        seq = path(int(i), int(j))
        relays[(int(i), int(j))] = tuple(seq)
        full = [int(i), *seq, int(j)]
        D[i, j] = sum(d0[a, b] for a, b in zip(full, full[1:]))
        T2[i, j] = sum(t0[a, b] for a, b in zip(full, full[1:]))
    hmap = HyperArcMap(relays, np.array(instance.dist), np.array(instance.time))
    return instance.replace(dist=D, time=T2, triangle_ok=True, hyperarcs=hmap)


def expand_route(original: Instance, closed: Instance, route: Route) -> Route:
    """Turn a route over closed arcs into explicit station visits on ``original``.

    Charges are recomputed by the scheduler; when that schedule is infeasible
    the original charges are kept with zero charge at relay stations, which
    reproduces the closed-arc trace exactly.
    """
    from .charging import schedule_route

    hmap = closed.hyperarcs
    if hmap is None:
        return route
    visits, charges = [route.visits[0]], [route.charges[0]]
    for j in range(1, len(route.visits)):
        a, b = route.visits[j - 1], route.visits[j]
        for k in hmap.relay(a, b):
            visits.append(k)
            charges.append(0.0)
        visits.append(b)
        charges.append(route.charges[j])
    if len(visits) == len(route.visits):
        return Route(route.visits, route.charges)
    fallback = Route(tuple(visits), tuple(charges))
    rescheduled = schedule_route(original, Route(tuple(visits)))
    if rescheduled.evaluated(original).feasible:
        return rescheduled
    return fallback


class StationRanking:
    """Candidate stations for every ordered node pair, sorted by detour.

    The detour of station ``k`` between ``i`` and ``j`` is
    ``d[i,k] + d[k,j] - d[i,j]``; ties go to the lower station id.  Each list is
    truncated to ``ceil(sr * P)`` entries and never contains ``i`` or ``j``.
    """

    def __init__(self, instance: Instance, sr: float):
        if not 0.0 < sr <= 1.0:
            raise ValueError(f"selection range must lie in (0, 1], got {sr}")
        self.sr = sr
        P = instance.P
        self.size = min(P, math.ceil(sr * P - 1e-9)) if P else 0
        stations = np.array(list(instance.station_ids), dtype=int)
        n = instance.n
        dist = instance.dist
        self.lists = []
        self.costs = []
        if not P:
            self.lists = [[[] for _ in range(n)] for _ in range(n)]
            self.costs = [[[] for _ in range(n)] for _ in range(n)]
            return
        to_st = dist[:, stations]            # (n, P): d[i, k]
        from_st = dist[stations, :].T        # (n, P): d[k, j]
        for i in range(n):
            detour = to_st[i][None, :] + from_st - dist[i][:, None]  # (j, k)
            detour[:, stations == i] = np.inf
            detour[np.arange(n)[:, None] == stations[None, :]] = np.inf
            order = np.argsort(detour, axis=1, kind="stable")[:, :self.size]
            ids = stations[order]
            cost = np.take_along_axis(detour, order, axis=1)
            row_ids, row_cost = [], []
            for j in range(n):
                keep = np.isfinite(cost[j])
                row_ids.append(ids[j][keep].tolist())
                row_cost.append(cost[j][keep].tolist())
            self.lists.append(row_ids)
            self.costs.append(row_cost)

    def candidates(self, i: int, j: int) -> list:
        return self.lists[i][j]

    def detours(self, i: int, j: int) -> list:
        return self.costs[i][j]


def rank_stations(instance: Instance, sr: float) -> StationRanking:
    return StationRanking(instance, sr)


def subinstance(instance: Instance, customers, name: str = "") -> tuple[Instance, list]:
    """Restrict an instance to the depot, the given customers and all stations.

    Returns the new instance and the list mapping new node ids to old ones.
    """
    customers = sorted(customers)
    old_ids = [0, *customers, *instance.station_ids]
    idx = np.array(old_ids)
    nodes = [Node(new, nd.kind, nd.delivery, nd.pickup, nd.tw_open, nd.tw_close, nd.service, nd.x, nd.y, nd.name)
             for new, nd in enumerate(instance.nodes[i] for i in old_ids)]
    sub = Instance(
        nodes, instance.dist[np.ix_(idx, idx)], instance.time[np.ix_(idx, idx)],
        instance.C, instance.Q, instance.g, instance.h, instance.mu1, instance.mu2,
        coord_mode=instance.coord_mode, triangle_ok=instance.triangle_ok,
        name=name or f"{instance.name}[sub]",
    )
    return sub, old_ids
