"""Charge amounts at station visits.

A station visit charges at least enough to reach the next station (or the
depot) and then tops up for as long as the extra charging time can be absorbed
by waiting at the following customers without pushing anyone past their
deadline.  The top-up therefore never changes the arrival time at the next
station.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .model import EPS, Instance, Route


class InfeasibleSegmentError(ValueError):
    """The battery cannot hold enough energy to reach the next stop."""


@dataclass(frozen=True)
class PathSegment:
    """The stretch of a route from one station visit to the next station or the depot."""

    station: int
    arrival: float
    battery: float
    customers: tuple
    terminal: int

    @classmethod
    def at(cls, instance: Instance, visits, f: int, arrival: float, battery: float) -> "PathSegment":
        is_st = instance.is_station
        j = f + 1
        while j < len(visits) - 1 and not is_st[visits[j]]:
            j += 1
        return cls(visits[f], arrival, battery, tuple(visits[f + 1:j]), visits[j])

    def nodes(self) -> tuple:
        return (self.station, *self.customers, self.terminal)

    def distance(self, instance: Instance) -> float:
        d = instance.d
        nodes = self.nodes()
        return sum(d[a][b] for a, b in zip(nodes, nodes[1:]))


@dataclass(frozen=True)
class ChargePlan:
    minimal: float
    additional: float
    amount: float
    delta: tuple = ()
    tau: tuple = ()
    arrive: tuple = ()
    depart: tuple = ()
    feasible: bool = field(default=True)


def minimal_charge(instance: Instance, segment: PathSegment) -> float:
    return max(0.0, instance.h * segment.distance(instance) - segment.battery)


def slack_sentinel(instance: Instance) -> float:
    return instance.horizon + 1.0 if math.isfinite(instance.horizon) else math.inf


def additional_charge(instance: Instance, segment: PathSegment, minimal: float, early_stop: bool = True):
    """Extra charge absorbed by waiting at the segment's customers.

    Returns ``(q1, delta, tau, arrive, depart)`` where ``delta[j]`` is the
    waiting time at customer ``j`` turned into charging time and ``tau[j]``
    the shift still allowed after leaving it (``tau[0]`` is the sentinel).
    The recursion stops as soon as no shift is left unless ``early_stop`` is off.
    """
    t, e, l, s = instance.t, instance.e, instance.l, instance.s
    depart = segment.arrival + instance.g * minimal
    tau = [slack_sentinel(instance)]
    delta, arrive, departs = [], [], [depart]
    prev = segment.station
    for k in segment.customers:
        if early_stop and tau[-1] <= 0:
            break
        a = depart + t[prev][k]
        dj = max(0.0, min(tau[-1], max(0.0, e[k] - a)))
        depart = max(e[k], a + dj) + s[k]
        delta.append(dj)
        tau.append(min(tau[-1], l[k] - a) - dj)
        arrive.append(a)
        departs.append(depart)
        prev = k
    return sum(delta) / instance.g, tuple(delta), tuple(tau), tuple(arrive), tuple(departs)


def charge_amount(instance: Instance, segment: PathSegment, strict: bool = True) -> ChargePlan:
    """Full plan for one station visit: ``min(q0 + q1, Q - y)``.

    With ``strict`` a minimal charge that does not fit raises
    :class:`InfeasibleSegmentError`; otherwise the plan is marked infeasible
    and charges to full.
    """
    q0 = minimal_charge(instance, segment)
    room = instance.Q - segment.battery
    fits = q0 <= room + EPS
    if not fits and strict:
        raise InfeasibleSegmentError(
            f"station {segment.station} needs {q0:.6g} but only {room:.6g} fits")
    q1, delta, tau, arrive, depart = additional_charge(instance, segment, q0)
    amount = max(0.0, min(q0 + q1, room))
    return ChargePlan(q0, q1, amount, delta, tau, arrive, depart, fits)


def schedule_route(instance: Instance, route: Route) -> Route:
    """Assign charges to every station visit, left to right.

    Segments whose minimal charge does not fit are charged to full and left
    for the route evaluation to flag.
    """
    return Route(route.visits, schedule_charges(instance, route.visits))


def station_charge(instance: Instance, visits, j: int, arrival: float, battery: float) -> float:
    """Charge at the station in position ``j``; the same number :func:`charge_amount` gives.

    The segment arithmetic is inlined because this runs for every candidate
    route the station inserters look at.
    """
    d, t, e, l, s = instance.d, instance.t, instance.e, instance.l, instance.s
    is_st = instance.is_station
    g, h = instance.g, instance.h
    n = len(visits)
    end = j + 1
    while end < n - 1 and not is_st[visits[end]]:
        end += 1
    dist, prev = 0, visits[j]
    for x in visits[j + 1:end + 1]:
        dist += d[prev][x]
        prev = x
    q0 = max(0.0, h * dist - battery)
    # waiting at the segment's customers that can become charging time
    dep, tau, waited, prev = arrival + g * q0, slack_sentinel(instance), 0, visits[j]
    for x in visits[j + 1:end]:
        if tau <= 0:
            break
        ax = dep + t[prev][x]
        dj = max(0.0, min(tau, max(0.0, e[x] - ax)))
        dep = max(e[x], ax + dj) + s[x]
        waited += dj
        tau = min(tau, l[x] - ax) - dj
        prev = x
    return max(0.0, min(q0 + waited / g, instance.Q - battery))


def schedule_charges(instance: Instance, visits) -> tuple:
    """Charge vector for ``visits``, stations left to right."""
    d, t, e, s = instance.d, instance.t, instance.e, instance.s
    is_st = instance.is_station
    g, h, Q = instance.g, instance.h, instance.Q
    n = len(visits)
    charges = [0.0] * n
    if not any(is_st[i] for i in visits):
        return tuple(charges)
    now = e[visits[0]]
    batt = Q
    for j in range(1, n):
        i, k = visits[j - 1], visits[j]
        a = now + t[i][k]
        batt -= h * d[i][k]
        if is_st[k] and j < n - 1:
            q = station_charge(instance, visits, j, a, batt)
            charges[j] = q
            batt += q
            now = a + g * q
        else:
            now = (a if a > e[k] else e[k]) + s[k]
    return tuple(charges)


def schedule_charges_by_segments(instance: Instance, visits) -> tuple:
    """Reference form of :func:`schedule_charges` built from explicit segments and plans."""
    d, t, e, s = instance.d, instance.t, instance.e, instance.s
    is_st = instance.is_station
    g, h, Q = instance.g, instance.h, instance.Q
    n = len(visits)
    charges = [0.0] * n
    if not any(is_st[i] for i in visits):
        return tuple(charges)
    now = e[visits[0]]
    batt = Q
    for j in range(1, n):
        i, k = visits[j - 1], visits[j]
        a = now + t[i][k]
        batt -= h * d[i][k]
        if is_st[k] and j < n - 1:
            seg = PathSegment.at(instance, visits, j, a, batt)
            q = charge_amount(instance, seg, strict=False).amount
            charges[j] = q
            batt += q
            now = a + g * q
        else:
            now = (a if a > e[k] else e[k]) + s[k]
    return tuple(charges)
