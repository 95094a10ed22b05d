"""Exhaustive optimum for tiny instances.

For every customer subset the shortest feasible route is found by trying all
customer orders and, in every gap, every station sequence of up to
``max_stations_per_gap`` stations without immediate repeats.  Whether a visit
sequence can be made feasible by *some* choice of charge amounts is decided
exactly by a small linear program over charges and service start times.
Subsets are then combined by a set-partition recursion.

Only meant for a handful of customers and stations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog

from .model import EPS, Instance, Route, Solution

LP_TOL = 1e-7


@dataclass
class OracleResult:
    tc: float
    solution: Solution | None
    routes_checked: int


def _station_sequences(stations, max_len):
    out = [()]
    for length in range(1, max_len + 1):
        for seq in itertools.product(stations, repeat=length):
            if all(a != b for a, b in zip(seq, seq[1:])):
                out.append(seq)
    return out


def charge_lp(instance: Instance, visits) -> tuple | None:
    """Charges that make ``visits`` feasible, or ``None`` if there are none.

    Variables: a charge per station visit and a service start per customer
    visit.  Travel times, windows, battery bounds and the fixed depot
    departure are linear in them; waiting at customers is implied by the
    start-time variables, stations never wait.
    """
    d, t, e, l, s = instance.d, instance.t, instance.e, instance.l, instance.s
    is_st = instance.is_station
    Q, g, h, C = instance.Q, instance.g, instance.h, instance.C
    n = len(visits)

    load = sum(instance.u[i] for i in visits)
    if load > C + EPS:
        return None
    for j in range(1, n):
        load += instance.v[visits[j - 1]] - instance.u[visits[j - 1]]
        if load > C + EPS or load < -EPS:
            return None

    st_pos = [j for j in range(1, n - 1) if is_st[visits[j]]]
    cu_pos = [j for j in range(1, n - 1) if not is_st[visits[j]]]
    qi = {j: k for k, j in enumerate(st_pos)}
    ti = {j: len(st_pos) + k for k, j in enumerate(cu_pos)}
    nv = len(st_pos) + len(cu_pos)
    A, b = [], []

    def row():
        return np.zeros(nv)

    # departure time from position j as (coeff vector, constant)
    def departure(j):
        if j == 0:
            return row(), e[visits[0]]
        if j in ti:
            r = row()
            r[ti[j]] = 1.0
            return r, s[visits[j]]
        ra, ca = arrival(j)
        ra = ra.copy()
        ra[qi[j]] += g
        return ra, ca

    def arrival(j):
        r, c = departure(j - 1)
        return r, c + t[visits[j - 1]][visits[j]]

    cache_arr = {}
    for j in range(1, n):
        r, c = arrival(j)
        cache_arr[j] = (r, c)
        # arrival <= l
        A.append(r)
        b.append(l[visits[j]] - c)
        if j in ti:
            # start >= arrival, start >= e
            rr = r.copy()
            rr[ti[j]] -= 1.0
            A.append(rr)
            b.append(-c)
            z = row()
            z[ti[j]] = -1.0
            A.append(z)
            b.append(-e[visits[j]])

    # battery: energy on arrival = Q - h*dist_so_far + charges_so_far >= 0
    used = 0.0
    charged = row()
    for j in range(1, n):
        used += h * d[visits[j - 1]][visits[j]]
        A.append(-charged.copy())
        b.append(Q - used)
        if j in qi:
            charged = charged.copy()
            charged[qi[j]] = 1.0
            # after charging <= Q
            A.append(charged.copy())
            b.append(used)
    if nv == 0:
        ok = all(bb >= -EPS for bb in b)
        return () if ok else None
    res = linprog(np.zeros(nv), A_ub=np.array(A), b_ub=np.array(b) + LP_TOL,
                  bounds=[(0, None)] * nv, method="highs")
    if res.status != 0:
        return None
    x = res.x
    return tuple(max(0.0, float(x[qi[j]])) if j in qi else 0.0 for j in range(n))


def _time_prefix_ok(instance: Instance, visits) -> bool:
    """Necessary check: no window is missed even without charging."""
    t, e, l, s = instance.t, instance.e, instance.l, instance.s
    now = e[visits[0]]
    for j in range(1, len(visits)):
        a = now + t[visits[j - 1]][visits[j]]
        if a > l[visits[j]] + EPS:
            return False
        now = max(a, e[visits[j]]) + s[visits[j]] if not instance.is_station[visits[j]] else a
    return True


def _legs_ok(instance: Instance, visits) -> bool:
    """Necessary check: every stretch between recharge opportunities fits a full battery."""
    d, h, Q = instance.d, instance.h, instance.Q
    used = 0.0
    for j in range(1, len(visits)):
        used += h * d[visits[j - 1]][visits[j]]
        if used > Q + EPS:
            return False
        if instance.is_station[visits[j]]:
            used = 0.0
    return True


def best_route(instance: Instance, customers, max_stations_per_gap: int = 2, counter=None) -> tuple:
    """Shortest feasible route serving exactly ``customers``: ``(td, visits, charges)``."""
    d = instance.d
    seqs = _station_sequences(list(instance.station_ids), max_stations_per_gap)
    best = (math.inf, None, None)
    for perm in itertools.permutations(sorted(customers)):
        base = (0, *perm, 0)
        if not _time_prefix_ok(instance, base):
            continue
        gaps = len(base) - 1
        # per-gap options sorted by added distance for pruning
        options = []
        for j in range(gaps):
            a, b = base[j], base[j + 1]
            opts = []
            for seq in seqs:
                path = (a, *seq, b)
                opts.append((sum(d[x][y] for x, y in zip(path, path[1:])), seq))
            opts.sort()
            options.append(opts)
        floor = [0.0] * (gaps + 1)
        for j in range(gaps - 1, -1, -1):
            floor[j] = floor[j + 1] + options[j][0][0]

        def dfs(j, visits, dist):
            nonlocal best
            if dist + floor[j] >= best[0] - 1e-12:
                return
            if j == gaps:
                if counter is not None:
                    counter[0] += 1
                charges = charge_lp(instance, visits)
                if charges is not None:
                    best = (dist, tuple(visits), charges)
                return
            for add, seq in options[j]:
                if dist + add + floor[j + 1] >= best[0] - 1e-12:
                    break
                nxt = visits + [*seq, base[j + 1]]
                if not _legs_ok(instance, nxt) or not _time_prefix_ok(instance, nxt):
                    continue
                dfs(j + 1, nxt, dist + add)

        dfs(0, [0], 0.0)
    return best


def brute_force(instance: Instance, max_stations_per_gap: int = 2) -> OracleResult:
    """Minimum total cost over all partitions of the customers into routes."""
    customers = list(instance.customer_ids)
    counter = [0]
    route_of = {}
    for size in range(1, len(customers) + 1):
        for subset in itertools.combinations(customers, size):
            route_of[frozenset(subset)] = best_route(instance, subset, max_stations_per_gap, counter)

    mu1, mu2 = instance.mu1, instance.mu2

    @lru_cache(maxsize=None)
    def solve(remaining: frozenset):
        if not remaining:
            return 0.0, ()
        first = min(remaining)
        rest = sorted(remaining - {first})
        best = (math.inf, ())
        for size in range(len(rest) + 1):
            for extra in itertools.combinations(rest, size):
                group = frozenset((first, *extra))
                td = route_of[group][0]
                if math.isinf(td):
                    continue
                sub_cost, sub_groups = solve(remaining - group)
                cost = mu1 + mu2 * td + sub_cost
                if cost < best[0] - 1e-12:
                    best = (cost, (group, *sub_groups))
        return best

    tc, groups = solve(frozenset(customers))
    if math.isinf(tc):
        return OracleResult(math.inf, None, counter[0])
    routes = [Route(route_of[g][1], route_of[g][2]) for g in groups]
    sol = Solution(routes)
    sol.tc = tc
    return OracleResult(tc, sol, counter[0])
