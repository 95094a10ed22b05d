"""Station insertion: turn a route that runs out of battery into a feasible one.

Two strategies run side by side and the shorter result wins:

* a small genetic algorithm over one bit per customer gap ("insert a station
  here or not"), decoded greedily against the station rankings;
* a sequential repair that keeps inserting the cheapest admissible station in
  front of the first visit with a negative battery, followed by a clean-up
  of runs of adjacent stations.

Neither strategy ever reorders customers.
"""

from __future__ import annotations

import random
import time
from collections import OrderedDict
from dataclasses import dataclass, field

from .charging import schedule_charges, station_charge
from .model import BATTERY, EPS, Instance, Route, trace
from .preprocess import StationRanking


@dataclass
class PssiParams:
    alpha: float = 3.0
    generations: int = 5
    sr: float = 1.0
    flip_prob: float = 0.02
    one_to_zero_prob: float = 0.20
    regen_factor: int = 50

    def population_size(self, gaps: int) -> int:
        return max(1, round(self.alpha * gaps))


@dataclass
class GapChromosome:
    bits: tuple
    route: Route | None = None

    @property
    def feasible(self) -> bool:
        return self.route is not None


@dataclass
class PssiStats:
    """Counters for how often each branch alone produced the returned route."""

    calls: int = 0
    psi_only: int = 0
    ssi_only: int = 0
    shared: int = 0
    failures: int = 0
    shortcuts: int = 0
    cache_hits: int = 0
    psi_seconds: float = 0.0
    ssi_seconds: float = 0.0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _scheduled(instance: Instance, visits) -> Route:
    visits = tuple(visits)
    charges = schedule_charges(instance, visits)
    route = Route(visits, charges)
    route.eval = trace(instance, visits, charges)
    return route


def _stripped(instance: Instance, route: Route) -> tuple:
    is_st = instance.is_station
    return tuple(i for i in route.visits if not is_st[i])


def _blocked_without_battery(ev) -> bool:
    return any(tag != BATTERY for _, tag in ev.violations)


# ---------------------------------------------------------------- decoding

def decode(instance: Instance, bits, base: tuple, ranking: StationRanking) -> Route | None:
    """Insert one station in every gap whose bit is set.

    Gaps are handled left to right.  Each gap tries its ranked stations in
    order and keeps the first one for which the tentative route (later set
    gaps holding their top-ranked station) shows no violation up to the next
    tentative station.  Returns ``None`` when some gap admits no station or
    the final route is infeasible.

    Everything up to the previously chosen station is fixed once that station
    is chosen, so each candidate only replays the stretch from there to the
    next tentative station.
    """
    if len(bits) != len(base) - 1:
        raise ValueError(f"chromosome has {len(bits)} bits for {len(base) - 1} gaps")
    ones = [j for j, b in enumerate(bits) if b]
    if not ones:
        route = _scheduled(instance, base)
        return route if route.eval.feasible else None
    stations = {}
    for j in ones:
        cands = ranking.candidates(base[j], base[j + 1])
        if not cands:
            return None
        stations[j] = cands[0]
    load = sum(instance.u[i] for i in base)
    if load > instance.C + EPS:
        return None
    visits, pos_of = _with_stations(base, stations)
    # arrival time, battery and load at the last fixed position
    anchor, state = 0, (instance.e[base[0]], instance.Q, load)
    for idx, j in enumerate(ones):
        pos = pos_of[j]
        limit = pos_of[ones[idx + 1]] if idx + 1 < len(ones) else len(visits) - 1
        reached = None
        for k in ranking.candidates(base[j], base[j + 1]):
            visits[pos] = k
            reached = _replay(instance, visits, anchor, pos, limit, state)
            if reached is not None:
                break
        if reached is None:
            return None
        anchor, state = pos, reached
    route = _scheduled(instance, visits)
    return route if route.eval.feasible else None


def _replay(instance: Instance, visits, start: int, mark: int, stop: int, state):
    """Walk ``visits`` from ``start`` to ``stop`` without a violation, charging as the scheduler would.

    ``state`` is the arrival (time, battery, load) at ``start``, whose own
    checks have passed.  Returns the arrival state at ``mark``, or ``None``
    at the first violation.
    """
    d, t, e, l, s, u, v = instance.d, instance.t, instance.e, instance.l, instance.s, instance.u, instance.v
    is_st = instance.is_station
    g, h, C = instance.g, instance.h, instance.C
    last = len(visits) - 1
    a, y, load = state
    at_mark, dep = None, 0.0  # dep: departure time from the previous position
    for j in range(start, stop + 1):
        k = visits[j]
        if j > start:
            i = visits[j - 1]
            a = dep + t[i][k]
            y -= h * d[i][k]
            load = load - u[i] + v[i]
            if y < -EPS or load > C + EPS or load < -EPS or a > l[k] + EPS:
                return None
            if j == mark:
                at_mark = (a, y, load)
            if j == stop:
                break
        if j == 0:
            dep = e[k]
        elif is_st[k] and j < last:
            q = station_charge(instance, visits, j, a, y)
            y += q
            dep = a + g * q
        else:
            dep = (a if a > e[k] else e[k]) + s[k]
    return at_mark


def decode_by_full_trace(instance: Instance, bits, base: tuple, ranking: StationRanking) -> Route | None:
    """:func:`decode` with every tentative route scheduled and traced in full."""
    if len(bits) != len(base) - 1:
        raise ValueError(f"chromosome has {len(bits)} bits for {len(base) - 1} gaps")
    ones = [j for j, b in enumerate(bits) if b]
    if not ones:
        route = _scheduled(instance, base)
        return route if route.eval.feasible else None
    chosen = {}
    provisional = {}
    for j in ones:
        cands = ranking.candidates(base[j], base[j + 1])
        if not cands:
            return None
        provisional[j] = cands[0]
    for idx, j in enumerate(ones):
        accepted = None
        for k in ranking.candidates(base[j], base[j + 1]):
            stations = {**provisional, **chosen, j: k}
            visits, pos_of = _with_stations(base, stations)
            route = _scheduled(instance, visits)
            limit = pos_of[ones[idx + 1]] if idx + 1 < len(ones) else len(visits) - 1
            if route.eval.ok_through(limit):
                accepted = k
                break
        if accepted is None:
            return None
        chosen[j] = accepted
    visits, _ = _with_stations(base, chosen)
    route = _scheduled(instance, visits)
    return route if route.eval.feasible else None


def _with_stations(base: tuple, stations: dict):
    visits = [base[0]]
    pos_of = {}
    for j in range(len(base) - 1):
        if j in stations:
            pos_of[j] = len(visits)
            visits.append(stations[j])
        visits.append(base[j + 1])
    return visits, pos_of


# ---------------------------------------------------------------- genetic branch

def psi(instance: Instance, route: Route, ranking: StationRanking, params: PssiParams, rng: random.Random) -> Route | None:
    base = _stripped(instance, route)
    gaps = len(base) - 1
    size = params.population_size(gaps)
    cache = {}

    def realize(bits):
        if bits not in cache:
            cache[bits] = decode(instance, bits, base, ranking)
        return cache[bits]

    population = []
    budget = params.regen_factor * size
    while len(population) < size and budget > 0:
        budget -= 1
        bits = tuple(rng.randint(0, 1) for _ in range(gaps))
        r = realize(bits)
        if r is not None:
            population.append(GapChromosome(bits, r))
    if not population:
        return None
    feasible = list(population)
    while len(population) < size:
        src = feasible[len(population) % len(feasible)]
        population.append(GapChromosome(src.bits, src.route))

    for _ in range(params.generations):
        for i in range(size):
            p1 = population[rng.randrange(size)]
            p2 = population[rng.randrange(size)]
            child = [a ^ b for a, b in zip(p1.bits, p2.bits)]
            for j in range(gaps):
                if rng.random() < params.flip_prob:
                    child[j] ^= 1
            for j in range(gaps):
                if child[j] and rng.random() < params.one_to_zero_prob:
                    child[j] = 0
            bits = tuple(child)
            r = realize(bits)
            if r is not None and r.eval.td < population[i].route.eval.td - 1e-12:
                population[i] = GapChromosome(bits, r)
    best = min(population, key=lambda c: c.route.eval.td)
    return best.route


# ---------------------------------------------------------------- sequential branch

def ssi(instance: Instance, route: Route, ranking: StationRanking) -> Route | None:
    """Greedy repair in front of the first battery shortfall, then run clean-up.

    Each step considers every ranked station in every gap between the last
    station (or the depot) before the shortfall and the shortfall itself.
    Insertions that clear the shortfall are preferred; otherwise one that
    strictly raises the battery level there is taken, which bounds the number
    of steps.  Among equals the smallest distance increase wins.
    """
    current = _scheduled(instance, route.visits)
    if _blocked_without_battery(current.eval):
        return None
    is_st = instance.is_station
    d = instance.d
    while True:
        ev = current.eval
        right = ev.first_negative_battery()
        if right is None:
            break
        left = right - 1
        while left > 0 and not is_st[current.visits[left]]:
            left -= 1
        visits = current.visits
        level = ev.batt_arrive[right]
        best_key, best_route = None, None
        for p in range(left, right):
            a, b = visits[p], visits[p + 1]
            base_cost = d[a][b]
            for k in ranking.candidates(a, b):
                cand = _scheduled(instance, visits[:p + 1] + (k,) + visits[p + 1:])
                cev = cand.eval
                if not cev.ok_through(p + 1) or _blocked_without_battery(cev):
                    continue
                cleared = cev.ok_through(right + 1)
                if not cleared and cev.batt_arrive[right + 1] <= level + EPS:
                    continue
                key = (0 if cleared else 1, d[a][k] + d[k][b] - base_cost, p, k)
                if best_key is None or key < best_key:
                    best_key, best_route = key, cand
        if best_route is None:
            return None
        current = best_route
    current = _refine_runs(instance, current, ranking)
    return current if current.eval.feasible else None


def _station_runs(instance: Instance, visits) -> list:
    is_st = instance.is_station
    runs, j = [], 1
    while j < len(visits) - 1:
        if is_st[visits[j]]:
            k = j
            while k + 1 < len(visits) - 1 and is_st[visits[k + 1]]:
                k += 1
            if k > j:
                runs.append((j, k))
            j = k + 1
        else:
            j += 1
    return runs


def _refine_runs(instance: Instance, route: Route, ranking: StationRanking) -> Route:
    """Improve runs of adjacent stations by ranked replacement.

    A run is first offered a collapse into one station ranked for its
    surrounding nodes; then each member is offered the stations ranked for
    its own neighbours.  Only strictly shorter feasible routes are kept and
    the scan restarts after every accepted change.
    """
    current = route
    improved = True
    while improved:
        improved = False
        for lo, hi in _station_runs(instance, current.visits):
            visits = current.visits
            prev, nxt = visits[lo - 1], visits[hi + 1]
            options = [visits[:lo] + (k,) + visits[hi + 1:] for k in ranking.candidates(prev, nxt)]
            for pos in range(lo, hi + 1):
                for k in ranking.candidates(visits[pos - 1], visits[pos + 1]):
                    if k != visits[pos]:
                        options.append(visits[:pos] + (k,) + visits[pos + 1:])
            for opt in options:
                cand = _scheduled(instance, opt)
                if cand.eval.feasible and cand.eval.td < current.eval.td - 1e-9:
                    current = cand
                    improved = True
                    break
            if improved:
                break
    return current


# ---------------------------------------------------------------- combined

def pssi(instance: Instance, route: Route, ranking: StationRanking, params: PssiParams,
         rng: random.Random, stats: PssiStats | None = None) -> Route | None:
    """Shorter of the genetic and the sequential result; ties go to the sequential one."""
    if stats is not None:
        stats.calls += 1
    base = _stripped(instance, route)
    plain = _scheduled(instance, base)
    if plain.eval.feasible:
        if stats is not None:
            stats.shortcuts += 1
        return plain
    if _blocked_without_battery(plain.eval):
        if stats is not None:
            stats.failures += 1
        return None
    t0 = time.perf_counter()
    r_psi = psi(instance, plain, ranking, params, rng)
    t1 = time.perf_counter()
    r_ssi = ssi(instance, plain, ranking)
    t2 = time.perf_counter()
    if stats is not None:
        stats.psi_seconds += t1 - t0
        stats.ssi_seconds += t2 - t1
    if r_psi is None and r_ssi is None:
        if stats is not None:
            stats.failures += 1
        return None
    if r_psi is None or (r_ssi is not None and r_ssi.eval.td <= r_psi.eval.td):
        if stats is not None:
            if r_psi is not None and abs(r_ssi.eval.td - r_psi.eval.td) <= 1e-9:
                stats.shared += 1
            else:
                stats.ssi_only += 1
        return r_ssi
    if stats is not None:
        stats.psi_only += 1
    return r_psi


@dataclass
class StationInserter:
    """PSSI bound to one instance, with a per-customer-sequence result cache.

    The cache makes repeated requests for the same customer order free; it
    keeps at most ``capacity`` entries, evicting the least recently used.
    """

    instance: Instance
    ranking: StationRanking
    params: PssiParams
    rng: random.Random
    capacity: int = 20000
    stats: PssiStats = field(default_factory=PssiStats)

    def __post_init__(self):
        self._cache = OrderedDict()

    def __call__(self, route: Route) -> Route | None:
        key = _stripped(self.instance, route)
        hit = self._cache.get(key, False)
        if hit is not False:
            self._cache.move_to_end(key)
            self.stats.cache_hits += 1
            return hit
        out = pssi(self.instance, route, self.ranking, self.params, self.rng, self.stats)
        self._cache[key] = out
        if len(self._cache) > self.capacity:
            self._cache.popitem(last=False)
        return out
