"""Building and perturbing solutions.

* ``rcrs_construct`` grows routes one at a time by cheapest insertion under a
  score that mixes detour, residual capacity and distance from the depot.
* ``regret_insert`` completes a partial solution with a regret-2 rule.
* ``destroy_repair`` removes a cluster of nearby customers and re-inserts them.

Insertions are first judged with the charges rescheduled on the current
route; when that fails only because of the battery, the sequential station
repair is tried on the station-free sequence.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .charging import schedule_charges
from .model import Instance, InstanceInfeasibleError, Route, Solution, trace
from .moves import RouteData, concat, node_summary, summary_feasible
from .preprocess import StationRanking
from .pssi import ssi


@dataclass(frozen=True)
class RcrsParams:
    lam: float = 0.5
    gamma: float = 0.5

    def __post_init__(self):
        for name in ("lam", "gamma"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class DestroyParams:
    omega1: float
    omega2: float

    def __post_init__(self):
        if not 0.0 < self.omega1 <= self.omega2 <= 1.0:
            raise ValueError(f"need 0 < omega1 <= omega2 <= 1, got {self.omega1}, {self.omega2}")

    def removal_bounds(self, customers: int) -> tuple:
        lo = max(1, math.ceil(self.omega1 * customers - 1e-9))
        hi = max(1, math.floor(self.omega2 * customers + 1e-9))
        hi = max(lo, hi)
        return min(lo, customers), min(hi, customers)


def _scheduled(instance: Instance, visits) -> Route:
    visits = tuple(visits)
    charges = schedule_charges(instance, visits)
    r = Route(visits, charges)
    r.eval = trace(instance, visits, charges)
    return r


class InsertionHelper:
    """Position screening and realisation of single-customer insertions."""

    def __init__(self, instance: Instance, ranking: StationRanking):
        self.instance = instance
        self.ranking = ranking
        self._data = {}
        self._nodes = [node_summary(instance, i) for i in range(instance.n)]

    def data(self, visits: tuple) -> RouteData:
        rd = self._data.get(visits)
        if rd is None:
            if len(self._data) > 4096:
                self._data.clear()
            rd = RouteData(self.instance, visits, with_segments=True)
            self._data[visits] = rd
        return rd

    def screen(self, visits: tuple, u: int):
        """Yield ``(detour, position, summary)`` for positions that pass the
        charge-free time window and capacity check."""
        d = self.instance.d
        rd = self.data(visits)
        node = self._nodes[u]
        n = rd.n
        for p in range(n - 1):
            a, b = visits[p], visits[p + 1]
            seg = concat(self.instance, concat(self.instance, rd.segs[0][p], node), rd.segs[p + 1][n - 1])
            if summary_feasible(self.instance, seg):
                yield d[a][u] + d[u][b] - d[a][b], p, seg

    def realize(self, visits: tuple, u: int, p: int):
        """Route with ``u`` inserted after position ``p``, or ``None``.

        Returns ``(route, needed_repair)``.
        """
        new = visits[:p + 1] + (u,) + visits[p + 1:]
        r = _scheduled(self.instance, new)
        if r.eval.feasible:
            return r, False
        is_st = self.instance.is_station
        bare = tuple(i for i in new if not is_st[i])
        fixed = ssi(self.instance, Route(bare), self.ranking)
        return fixed, True

    def single(self, u: int) -> Route | None:
        r, _ = self.realize((0, 0), u, 0)
        return r


def rcrs_construct(instance: Instance, params: RcrsParams, ranking: StationRanking,
                   rng: random.Random | None = None) -> Solution:
    """Sequential route building with the residual-capacity/radial-surcharge score.

    Candidates that stay feasible with rescheduled charges are preferred;
    otherwise the best-scoring candidate that a station repair can fix is
    taken.  ``rng`` is accepted for interface symmetry; the procedure is
    deterministic.
    """
    helper = InsertionHelper(instance, ranking)
    d = instance.d
    C = instance.C
    unassigned = set(instance.customer_ids)
    routes = []
    while unassigned:
        current = _scheduled(instance, (0, 0))
        while unassigned:
            cands = []
            for u in sorted(unassigned):
                radial = params.gamma * d[0][u]
                for detour, p, seg in helper.screen(current.visits, u):
                    score = detour - params.lam * (C - seg[9]) + radial
                    cands.append((score, u, p))
            cands.sort()
            chosen = None
            repairable = []
            for score, u, p in cands:
                new = current.visits[:p + 1] + (u,) + current.visits[p + 1:]
                r = _scheduled(instance, new)
                if r.eval.feasible:
                    chosen = (u, r)
                    break
                repairable.append((u, p))
            if chosen is None:
                for u, p in repairable:
                    r, _ = helper.realize(current.visits, u, p)
                    if r is not None:
                        chosen = (u, r)
                        break
            if chosen is None:
                break
            u, current = chosen
            unassigned.discard(u)
        if len(current.visits) == 2:
            bad = sorted(unassigned)
            raise InstanceInfeasibleError(f"customers {bad[:10]} cannot be served by a dedicated vehicle")
        routes.append(current)
    return Solution.build(instance, routes)


def regret_insert(instance: Instance, routes, unassigned, ranking: StationRanking,
                  rng: random.Random | None = None, helper: InsertionHelper | None = None) -> Solution | None:
    """Insert ``unassigned`` customers into ``routes`` by regret-2.

    Each step takes, in order of priority, a customer with no feasible
    position (it opens a new route), a customer with a single feasible
    position, or the customer whose second-best position is the most
    expensive relative to its best.  Returns ``None`` if some customer fits
    nowhere, not even alone.
    """
    helper = helper or InsertionHelper(instance, ranking)
    routes = [r if r.eval is not None else _scheduled(instance, r.visits) for r in routes]
    pending = set(unassigned)
    cache = {}

    def top_two(u, route):
        key = (u, route.visits)
        if key in cache:
            return cache[key]
        found = []
        screened = sorted(helper.screen(route.visits, u), key=lambda x: (x[0], x[1]))
        for detour, p, _ in screened:
            r, _ = helper.realize(route.visits, u, p)
            if r is not None:
                found.append((r.eval.td - route.eval.td, p, r))
                if len(found) == 2:
                    break
        cache[key] = found
        return found

    while pending:
        best = None
        for u in sorted(pending):
            options = []
            for idx, route in enumerate(routes):
                for cost, p, r in top_two(u, route):
                    options.append((cost, idx, p, r))
            options.sort(key=lambda o: (o[0], o[1], o[2]))
            if not options:
                key = (0, 0.0, u)
            elif len(options) == 1:
                key = (1, 0.0, u)
            else:
                key = (2, -(options[1][0] - options[0][0]), u)
            if best is None or key < best[0]:
                best = (key, u, options[0] if options else None)
        _, u, opt = best
        if opt is None:
            r = helper.single(u)
            if r is None:
                return None
            routes.append(r)
        else:
            _, idx, _, r = opt
            routes[idx] = r
        pending.discard(u)
    return Solution.build(instance, routes)


def removal_set(instance: Instance, solution: Solution, rho: int, rng: random.Random) -> list:
    """A random seed customer plus its ``rho - 1`` nearest customers."""
    d = instance.d
    customers = sorted(c for r in solution.routes for c in r.customers(instance))
    seed = rng.choice(customers)
    others = sorted((c for c in customers if c != seed), key=lambda c: ((d[seed][c] + d[c][seed]) / 2, c))
    return [seed, *others[:rho - 1]]


def destroy_repair(instance: Instance, solution: Solution, dparams: DestroyParams, ranking: StationRanking,
                   rng: random.Random, helper: InsertionHelper | None = None) -> Solution:
    """Remove a cluster of related customers and re-insert them by regret.

    Returns ``solution`` unchanged when the repair fails.
    """
    helper = helper or InsertionHelper(instance, ranking)
    m = sum(len(r.customers(instance)) for r in solution.routes)
    if m == 0:
        return solution
    lo, hi = dparams.removal_bounds(m)
    rho = rng.randint(lo, hi)
    removed = set(removal_set(instance, solution, rho, rng))
    is_st = instance.is_station
    routes = []
    unassigned = set(removed)
    for r in solution.routes:
        if not removed.intersection(r.visits):
            routes.append(r)
            continue
        bare = tuple(i for i in r.visits if i not in removed and not is_st[i])
        if len(bare) == 2:
            continue
        plain = _scheduled(instance, bare)
        fixed = plain if plain.eval.feasible else ssi(instance, plain, ranking)
        if fixed is None:
            unassigned.update(bare[1:-1])
        else:
            routes.append(fixed)
    out = regret_insert(instance, routes, unassigned, ranking, rng, helper)
    return solution if out is None else out
