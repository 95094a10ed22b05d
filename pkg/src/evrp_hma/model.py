"""Problem and solution data model, route evaluation and feasibility checking.

Nodes are indexed ``0`` (depot), ``1..M`` (customers) and ``M+1..M+P``
(charging stations).  A route is a visit sequence that starts and ends at the
depot; station ids may repeat, customer ids may not.  Charge amounts are kept
in a tuple aligned with the visits and are zero everywhere except at station
visits.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

EPS = 1e-6

DEPOT = "depot"
CUSTOMER = "customer"
STATION = "station"

# constraint tags, numbered as in the model formulation
ENDPOINTS, COVERAGE, CAPACITY, TIME_WINDOW, DEPOT_WINDOW, BATTERY = 6, 7, 8, 9, 10, 11
ALL_CONSTRAINTS = (ENDPOINTS, COVERAGE, CAPACITY, TIME_WINDOW, DEPOT_WINDOW, BATTERY)


class RouteStructureError(ValueError):
    """Raised for malformed routes (bad endpoints, repeated customers, unknown ids)."""


class InstanceInfeasibleError(RuntimeError):
    """Raised when some customer cannot be served even by a dedicated vehicle."""


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    delivery: float = 0.0
    pickup: float = 0.0
    tw_open: float = 0.0
    tw_close: float = math.inf
    service: float = 0.0
    x: float = 0.0
    y: float = 0.0
    name: str = ""

    def __post_init__(self):
        # plain Python numbers, so that checksums do not depend on how a node was built
        object.__setattr__(self, "id", int(self.id))
        for f in ("delivery", "pickup", "tw_open", "tw_close", "service", "x", "y"):
            object.__setattr__(self, f, float(getattr(self, f)))


class Instance:
    """Immutable EVRP-TW-SPD instance.

    ``dist`` and ``time`` are dense ``(M+P+1)x(M+P+1)`` matrices.  Python list
    copies (``d``, ``t``) and per-node attribute lists are kept alongside the
    arrays because scalar indexing into numpy is slow in the search loops.
    """

    def __init__(
        self,
        nodes: Sequence[Node],
        dist,
        time,
        load_capacity: float,
        battery_capacity: float,
        charge_rate: float,
        consume_rate: float,
        dispatch_cost: float = 1000.0,
        distance_cost: float = 1.0,
        coord_mode: str = "cartesian",
        triangle_ok: bool = False,
        name: str = "",
        hyperarcs=None,
    ):
        self.nodes = tuple(nodes)
        self.name = name
        n = len(self.nodes)
        dist = np.array(dist, dtype=float)
        time = np.array(time, dtype=float)
        if dist.shape != (n, n) or time.shape != (n, n):
            raise ValueError(f"matrices must be {n}x{n}, got {dist.shape} and {time.shape}")
        if (dist < 0).any() or (time < 0).any():
            raise ValueError("negative distance or time entry")
        if np.any(np.diag(dist) != 0) or np.any(np.diag(time) != 0):
            raise ValueError("distance/time matrices must have a zero diagonal")
        for param, value in (("load_capacity", load_capacity), ("battery_capacity", battery_capacity),
                             ("charge_rate", charge_rate), ("consume_rate", consume_rate)):
            if not value > 0:
                raise ValueError(f"{param} must be positive, got {value}")
        if dispatch_cost < 0 or distance_cost < 0:
            raise ValueError("cost coefficients must be nonnegative")
        if coord_mode not in ("cartesian", "geographic"):
            raise ValueError(f"unknown coord_mode {coord_mode!r}")

        kinds = [nd.kind for nd in self.nodes]
        if not kinds or kinds[0] != DEPOT or DEPOT in kinds[1:]:
            raise ValueError("node 0 must be the only depot")
        m = kinds.count(CUSTOMER)
        if kinds[1:m + 1] != [CUSTOMER] * m or kinds[m + 1:] != [STATION] * (n - m - 1):
            raise ValueError("nodes must be ordered depot, customers, stations")
        for i, nd in enumerate(self.nodes):
            if nd.id != i:
                raise ValueError(f"node at position {i} has id {nd.id}")
            if nd.tw_open > nd.tw_close:
                raise ValueError(f"node {i}: empty time window")
            if min(nd.delivery, nd.pickup, nd.service) < 0:
                raise ValueError(f"node {i}: negative demand or service time")
            if nd.kind != CUSTOMER and (nd.delivery or nd.pickup or nd.service):
                raise ValueError(f"node {i}: depot/station must have zero demand and service")
        depot = self.nodes[0]
        for nd in self.nodes[m + 1:]:
            if (nd.tw_open, nd.tw_close) != (depot.tw_open, depot.tw_close):
                raise ValueError(f"station {nd.id}: time window must equal the depot's")

        dist.setflags(write=False)
        time.setflags(write=False)
        self.dist = dist
        self.time = time
        self.C = float(load_capacity)
        self.Q = float(battery_capacity)
        self.g = float(charge_rate)
        self.h = float(consume_rate)
        self.mu1 = float(dispatch_cost)
        self.mu2 = float(distance_cost)
        self.coord_mode = coord_mode
        self.triangle_ok = bool(triangle_ok)
        self.hyperarcs = hyperarcs

        self.M = m
        self.P = n - m - 1
        self.n = n
        self.d = dist.tolist()
        self.t = time.tolist()
        self.u = [nd.delivery for nd in self.nodes]
        self.v = [nd.pickup for nd in self.nodes]
        self.e = [nd.tw_open for nd in self.nodes]
        self.l = [nd.tw_close for nd in self.nodes]
        self.s = [nd.service for nd in self.nodes]
        self.is_station = [nd.kind == STATION for nd in self.nodes]

    depot_index = 0

    @property
    def customer_ids(self) -> range:
        return range(1, self.M + 1)

    @property
    def station_ids(self) -> range:
        return range(self.M + 1, self.M + self.P + 1)

    @property
    def horizon(self) -> float:
        return self.l[0]

    def positions(self) -> np.ndarray:
        return np.array([(nd.x, nd.y) for nd in self.nodes], dtype=float)

    def replace(self, **changes) -> "Instance":
        """Copy with some constructor arguments replaced."""
        kwargs = dict(
            nodes=self.nodes, dist=self.dist, time=self.time, load_capacity=self.C,
            battery_capacity=self.Q, charge_rate=self.g, consume_rate=self.h,
            dispatch_cost=self.mu1, distance_cost=self.mu2, coord_mode=self.coord_mode,
            triangle_ok=self.triangle_ok, name=self.name, hyperarcs=self.hyperarcs,
        )
        kwargs.update(changes)
        return Instance(**kwargs)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for nd in self.nodes:
            h.update(repr((nd.id, nd.kind, nd.delivery, nd.pickup, nd.tw_open, nd.tw_close,
                           nd.service, nd.x, nd.y)).encode())
        h.update(repr((self.C, self.Q, self.g, self.h, self.mu1, self.mu2)).encode())
        h.update(np.ascontiguousarray(self.dist).tobytes())
        h.update(np.ascontiguousarray(self.time).tobytes())
        return h.hexdigest()[:32]

    def __getstate__(self):
        state = self.__dict__.copy()
        for key in ("d", "t", "u", "v", "e", "l", "s", "is_station"):
            state.pop(key)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self.d = self.dist.tolist()
        self.t = self.time.tolist()
        self.u = [nd.delivery for nd in self.nodes]
        self.v = [nd.pickup for nd in self.nodes]
        self.e = [nd.tw_open for nd in self.nodes]
        self.l = [nd.tw_close for nd in self.nodes]
        self.s = [nd.service for nd in self.nodes]
        self.is_station = [nd.kind == STATION for nd in self.nodes]

    def __repr__(self) -> str:
        return f"Instance({self.name!r}, M={self.M}, P={self.P})"


@dataclass
class RouteEval:
    td: float
    arrive: list
    depart: list
    batt_arrive: list
    batt_depart: list
    load: list
    violations: list  # (position, constraint tag)

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def violated(self) -> set:
        return {tag for _, tag in self.violations}

    def ok_through(self, pos: int, ignore=()) -> bool:
        """True when no violation occurs at a visit position ``<= pos``."""
        return not any(p <= pos and tag not in ignore for p, tag in self.violations)

    def first_negative_battery(self) -> int | None:
        for j, y in enumerate(self.batt_arrive):
            if y < -EPS:
                return j
        return None


@dataclass
class Route:
    visits: tuple
    charges: tuple = None
    eval: RouteEval | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.visits = tuple(self.visits)
        if self.charges is None:
            self.charges = (0.0,) * len(self.visits)
        else:
            self.charges = tuple(float(q) for q in self.charges)

    @classmethod
    def of(cls, *nodes: int) -> "Route":
        return cls((0, *nodes, 0))

    def customers(self, instance: Instance) -> list:
        return [i for i in self.visits[1:-1] if not instance.is_station[i]]

    def evaluated(self, instance: Instance) -> RouteEval:
        if self.eval is None:
            self.eval = evaluate_route(instance, self)
        return self.eval

    @property
    def key(self) -> tuple:
        return self.visits, self.charges


def _check_structure(instance: Instance, visits: Sequence[int], charges: Sequence[float]) -> None:
    if len(visits) < 2 or visits[0] != 0 or visits[-1] != 0:
        raise RouteStructureError(f"route must start and end at the depot: {visits}")
    if len(charges) != len(visits):
        raise RouteStructureError("charge vector length differs from visit count")
    seen = set()
    for pos, i in enumerate(visits[1:-1], start=1):
        if not 0 < i < instance.n:
            raise RouteStructureError(f"invalid node id {i} at position {pos}")
        if instance.is_station[i]:
            continue
        if i in seen:
            raise RouteStructureError(f"customer {i} visited twice")
        seen.add(i)
        if charges[pos] != 0:
            raise RouteStructureError(f"charge given at customer visit {pos}")


def trace(instance: Instance, visits: Sequence[int], charges: Sequence[float]) -> RouteEval:
    """Run the distance/battery/time/load recurrences without structure checks."""
    d, t, e, l, s, u, v = instance.d, instance.t, instance.e, instance.l, instance.s, instance.u, instance.v
    is_st = instance.is_station
    Q, g, h, C = instance.Q, instance.g, instance.h, instance.C
    n = len(visits)
    arrive = [0.0] * n
    depart = [0.0] * n
    y = [0.0] * n
    Y = [0.0] * n
    load = [0.0] * n
    violations = []

    first = visits[0]
    arrive[0] = e[first]
    depart[0] = e[first]
    y[0] = Q
    Y[0] = Q
    load[0] = sum(u[i] for i in visits)
    if load[0] > C + EPS:
        violations.append((0, CAPACITY))
    td = 0.0
    for j in range(1, n):
        i, k = visits[j - 1], visits[j]
        dij = d[i][k]
        td += dij
        a = depart[j - 1] + t[i][k]
        arrive[j] = a
        yj = Y[j - 1] - h * dij
        y[j] = yj
        ld = load[j - 1] - u[i] + v[i]
        load[j] = ld
        if is_st[k]:
            q = charges[j]
            Y[j] = yj + q
            depart[j] = a + g * q
            if yj < -EPS or q < -EPS or yj + q > Q + EPS:
                violations.append((j, BATTERY))
        else:
            Y[j] = yj
            depart[j] = (a if a > e[k] else e[k]) + s[k]
            if yj < -EPS:
                violations.append((j, BATTERY))
        if ld > C + EPS or ld < -EPS:
            violations.append((j, CAPACITY))
        if a > l[k] + EPS:
            violations.append((j, DEPOT_WINDOW if j == n - 1 else TIME_WINDOW))
    return RouteEval(td, arrive, depart, y, Y, load, violations)


def evaluate_route(instance: Instance, route: Route) -> RouteEval:
    """Full evaluation trace of a route.

    Raises :class:`RouteStructureError` for malformed routes; constraint
    violations are reported in the returned trace instead.
    """
    _check_structure(instance, route.visits, route.charges)
    return trace(instance, route.visits, route.charges)


def route_distance(instance: Instance, visits: Sequence[int]) -> float:
    d = instance.d
    return sum(d[visits[j]][visits[j + 1]] for j in range(len(visits) - 1))


@dataclass
class Solution:
    routes: list
    tc: float = 0.0

    @property
    def k(self) -> int:
        return len(self.routes)

    @classmethod
    def build(cls, instance: Instance, routes: Iterable[Route]) -> "Solution":
        is_st = instance.is_station
        routes = [r for r in routes if any(not is_st[i] for i in r.visits[1:-1])]
        sol = cls(routes)
        sol.tc = total_cost(instance, sol)
        return sol

    def copy(self) -> "Solution":
        return Solution([Route(r.visits, r.charges, r.eval) for r in self.routes], self.tc)

    def signature(self) -> tuple:
        return tuple(sorted(r.key for r in self.routes))


def total_cost(instance: Instance, solution: Solution) -> float:
    """Dispatch cost per vehicle plus distance cost over all routes."""
    td = sum(r.evaluated(instance).td for r in solution.routes)
    return instance.mu1 * len(solution.routes) + instance.mu2 * td


def solution_feasible(instance: Instance, solution: Solution) -> bool:
    return check_feasibility(instance, solution).feasible


@dataclass
class FeasibilityReport:
    constraints: dict
    violations: list  # (route index, visit position, constraint tag)
    tc: float
    errors: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return all(self.constraints.values())

    def summary(self) -> str:
        lines = [f"({tag}) {'ok' if ok else 'VIOLATED'}" for tag, ok in sorted(self.constraints.items())]
        lines.append(f"TC {self.tc:.6f}")
        return "\n".join(lines)


def check_feasibility(instance: Instance, solution: Solution, electric: bool = True) -> FeasibilityReport:
    """Recompute every route from scratch and report each constraint separately.

    Cached evaluations are never consulted.  With ``electric=False`` the
    battery constraint is skipped (the non-electric counterpart problem).
    """
    violations = []
    errors = []
    served = {}
    Q, g, h, C = instance.Q, instance.g, instance.h, instance.C
    total_td = 0.0
    for r_idx, route in enumerate(solution.routes):
        visits = list(route.visits)
        charges = list(route.charges) if route.charges is not None else [0.0] * len(visits)
        if len(charges) != len(visits):
            errors.append(f"route {r_idx}: charge vector length mismatch")
            charges = (charges + [0.0] * len(visits))[:len(visits)]
        if len(visits) < 2 or visits[0] != 0 or visits[-1] != 0:
            violations.append((r_idx, 0, ENDPOINTS))
        bad = [p for p, i in enumerate(visits) if not (isinstance(i, (int, np.integer)) and 0 <= i < instance.n)]
        if bad:
            errors.append(f"route {r_idx}: unknown node ids at positions {bad}")
            violations.append((r_idx, bad[0], ENDPOINTS))
            continue
        for p, i in enumerate(visits):
            if i == 0 and 0 < p < len(visits) - 1:
                violations.append((r_idx, p, ENDPOINTS))
            if instance.nodes[i].kind == CUSTOMER:
                served.setdefault(i, []).append((r_idx, p))
        if not visits:
            continue

        # from-scratch recurrences
        time_now = instance.nodes[0].tw_open
        battery = Q
        load = sum(instance.nodes[i].delivery for i in visits)
        if load > C + EPS:
            violations.append((r_idx, 0, CAPACITY))
        for p in range(1, len(visits)):
            prev, node = instance.nodes[visits[p - 1]], instance.nodes[visits[p]]
            dist = float(instance.dist[prev.id, node.id])
            total_td += dist
            arrival = time_now + float(instance.time[prev.id, node.id])
            battery -= h * dist
            load = load - prev.delivery + prev.pickup
            if not -EPS <= load <= C + EPS:
                violations.append((r_idx, p, CAPACITY))
            if arrival > node.tw_close + EPS:
                tag = DEPOT_WINDOW if (p == len(visits) - 1 and node.kind == DEPOT) else TIME_WINDOW
                violations.append((r_idx, p, tag))
            q = charges[p]
            if node.kind == STATION:
                if electric and (battery < -EPS or q < -EPS or battery + q > Q + EPS):
                    violations.append((r_idx, p, BATTERY))
                battery += q
                time_now = arrival + g * q
            else:
                if q != 0:
                    errors.append(f"route {r_idx}: charge at non-station position {p}")
                    violations.append((r_idx, p, BATTERY))
                if electric and battery < -EPS:
                    violations.append((r_idx, p, BATTERY))
                time_now = max(arrival, node.tw_open) + node.service
    for cust in instance.customer_ids:
        hits = served.get(cust, [])
        if len(hits) != 1:
            pos = hits[1] if len(hits) > 1 else (-1, -1)
            violations.append((pos[0], pos[1], COVERAGE))
    constraints = {tag: True for tag in ALL_CONSTRAINTS}
    if not electric:
        constraints.pop(BATTERY)
    for _, _, tag in violations:
        if tag in constraints:
            constraints[tag] = False
    tc = instance.mu1 * len(solution.routes) + instance.mu2 * total_td
    return FeasibilityReport(constraints, violations, tc, errors)


def strip_route(instance: Instance, route: Route) -> Route:
    keep = [i for i in route.visits if not instance.is_station[i]]
    return Route(tuple(keep))


def strip_stations(instance: Instance, solution: Solution) -> Solution:
    """Remove every station visit (and its charge) from every route."""
    return Solution.build(instance, [strip_route(instance, r) for r in solution.routes])
