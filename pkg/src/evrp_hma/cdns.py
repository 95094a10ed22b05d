"""Local search across the non-electric and electric solution spaces.

The aggressive phase forgets about the battery, improves the bare customer
routes with best-improvement moves and after every move asks the station
inserter to make each route electric-feasible again.  The conservative phase
then searches the electric space directly.
"""

from __future__ import annotations

import enum
import time

from .model import Instance, Route, Solution
from .moves import Neighborhood, apply_move, route_objects


class SearchMode(enum.Enum):
    FULL = "full"
    LARGE_SCALE = "large_scale"


def _deadline_passed(deadline) -> bool:
    return deadline is not None and time.monotonic() >= deadline


def stripped_visits(instance: Instance, solution: Solution) -> list:
    is_st = instance.is_station
    return [tuple(i for i in r.visits if not is_st[i]) for r in solution.routes]


def als(instance: Instance, solution: Solution, inserter, deadline=None) -> Solution:
    """Best-improvement descent on the station-free routes.

    After every move all routes are passed through ``inserter``; the search
    stops when no improving move is left or some route cannot be made
    electric-feasible.  Returns the cheapest electric solution seen.
    """
    best = solution
    plain = stripped_visits(instance, solution)
    nb = Neighborhood(instance, electric=False)
    while not _deadline_passed(deadline):
        move = nb.best_move(plain)
        if move is None:
            break
        plain = apply_move(plain, move)
        nb.forget(plain)
        routes = []
        for v in plain:
            r = inserter(Route(v))
            if r is None:
                return best
            routes.append(r)
        cand = Solution.build(instance, routes)
        if cand.tc < best.tc - 1e-9:
            best = cand
    return best


def cls(instance: Instance, solution: Solution, deadline=None) -> Solution:
    """Best-improvement descent in the electric space; every accepted move lowers the cost."""
    keep = {r.visits: r for r in solution.routes}
    current = [r.visits for r in solution.routes]
    nb = Neighborhood(instance, electric=True)
    moved = False
    while not _deadline_passed(deadline):
        move = nb.best_move(current)
        if move is None:
            break
        current = apply_move(current, move)
        nb.forget(current)
        moved = True
    if not moved:
        return solution
    fresh = [v for v in current if v not in keep]
    rebuilt = {r.visits: r for r in route_objects(instance, fresh, electric=True)}
    routes = [keep.get(v) or rebuilt[v] for v in current]
    out = Solution.build(instance, routes)
    return out if out.tc < solution.tc else solution


def cdns(instance: Instance, solution: Solution, mode: SearchMode, inserter, deadline=None) -> Solution:
    out = als(instance, solution, inserter, deadline)
    if mode is SearchMode.FULL:
        out = cls(instance, out, deadline)
    return out
