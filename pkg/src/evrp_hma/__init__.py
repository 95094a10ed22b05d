"""Hybrid memetic solver for the electric vehicle routing problem with time
windows, simultaneous pickup-delivery and partial recharging."""

from .model import (
    EPS, FeasibilityReport, Instance, InstanceInfeasibleError, Node, Route, RouteEval,
    RouteStructureError, Solution, check_feasibility, evaluate_route, strip_stations, total_cost,
)

__all__ = [
    "EPS", "FeasibilityReport", "Instance", "InstanceInfeasibleError", "Node", "Route", "RouteEval",
    "RouteStructureError", "Solution", "check_feasibility", "evaluate_route", "strip_stations", "total_cost",
]
__version__ = "0.1.0"
