"""Instance and solution files.

Two instance formats are understood:

``akb``  Whitespace-separated node table with a header row
         (``StringID Type x y delivery pickup ReadyTime DueDate ServiceTime``;
         a single ``demand`` column is read as delivery with zero pickup),
         followed by scalar lines ending in ``/value/`` whose first token
         selects the parameter: ``Q`` battery, ``C`` load capacity,
         ``r`` consumption rate, ``g`` inverse recharge rate, ``v`` velocity.
         Distances are Euclidean, travel time is distance / velocity.

``jd``   Line-oriented format with explicit, possibly asymmetric matrices::

             EVRPTWSPD-JD v1
             NAME: example
             DIMENSION: 4
             DISPATCHINGCOST: 300
             UNITCOST: 0.014
             CAPACITY: 200
             ELECTRIC_POWER: 80000
             CONSUMPTION_RATE: 1
             RECHARGING_RATE: 0.001
             NODE_SECTION
             id,type,lng,lat,delivery,pickup,ready_time,due_time,service_time
             0,d,116.4,39.9,0,0,0,720,0
             ...
             DISTANCETIME_SECTION
             from,to,distance,spend_tm
             0,1,1523.5,3.8
             ...
             DEPOT_SECTION
             0
             EOF

         ``type`` is ``d``, ``c`` or ``f``.  Every ordered pair of distinct
         nodes needs one DISTANCETIME row.  Files without the first line are
         accepted as well.

Solutions are JSON documents with the visit and charge lists of every route,
the total cost, the vehicle count and the instance checksum.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import CUSTOMER, DEPOT, STATION, Instance, Node, Route, Solution

JD_MAGIC = "EVRPTWSPD-JD v1"
KIND_CODES = {"d": DEPOT, "c": CUSTOMER, "f": STATION}
KIND_LETTERS = {v: k for k, v in KIND_CODES.items()}


class InstanceParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = ""):
        where = f"{source}:" if source else ""
        where += f"{line}: " if line is not None else (" " if where else "")
        super().__init__(f"{where}{message}")
        self.line = line


class ChecksumMismatchError(ValueError):
    """Solution file was written for a different instance."""


def _float(token: str, line: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise InstanceParseError(f"cannot read {what} from {token!r}", line) from None


def _ordered(records):
    """Sort node records into depot, customers, stations, keeping file order within each kind."""
    order = {DEPOT: 0, CUSTOMER: 1, STATION: 2}
    return sorted(records, key=lambda r: order[r["kind"]])


# ---------------------------------------------------------------- akb

_AKB_SCALARS = {"q": "Q", "c": "C", "r": "h", "g": "g", "v": "velocity"}


def parse_akb(text: str, name: str = "", dispatch_cost: float = 1000.0, distance_cost: float = 1.0) -> Instance:
    lines = text.splitlines()
    header = None
    records = []
    scalars = {}
    for no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if header is None:
            header = [t.lower() for t in tokens]
            missing = {"stringid", "type", "x", "y", "readytime", "servicetime"} - set(header)
            if "duedate" not in header and "duetime" not in header:
                missing.add("duedate")
            if missing:
                raise InstanceParseError(f"header lacks columns {sorted(missing)}", no)
            if "demand" not in header and not {"delivery", "pickup"} <= set(header):
                raise InstanceParseError("header needs 'demand' or both 'delivery' and 'pickup'", no)
            continue
        m = re.search(r"/([^/]*)/\s*$", line)
        if m:
            key = tokens[0].lower()
            if key not in _AKB_SCALARS:
                raise InstanceParseError(f"unknown scalar line {tokens[0]!r}", no)
            scalars[_AKB_SCALARS[key]] = _float(m.group(1), no, f"scalar {tokens[0]}")
            continue
        if len(tokens) != len(header):
            raise InstanceParseError(f"expected {len(header)} fields, found {len(tokens)}", no)
        row = dict(zip(header, tokens))
        kind = KIND_CODES.get(row["type"].lower())
        if kind is None:
            raise InstanceParseError(f"unknown node type {row['type']!r}", no)
        due = row.get("duedate", row.get("duetime"))
        if "delivery" in row:
            delivery = _float(row["delivery"], no, "delivery")
            pickup = _float(row["pickup"], no, "pickup")
        else:
            delivery, pickup = _float(row["demand"], no, "demand"), 0.0
        records.append(dict(
            name=row["stringid"], kind=kind, x=_float(row["x"], no, "x"), y=_float(row["y"], no, "y"),
            delivery=delivery, pickup=pickup, tw_open=_float(row["readytime"], no, "ready time"),
            tw_close=_float(due, no, "due date"), service=_float(row["servicetime"], no, "service time"), line=no))
    if header is None:
        raise InstanceParseError("empty file")
    for key in ("Q", "C", "h", "g"):
        if key not in scalars:
            raise InstanceParseError(f"missing scalar line for {key}")
    velocity = scalars.get("velocity", 1.0)
    if sum(r["kind"] == DEPOT for r in records) != 1:
        raise InstanceParseError("exactly one depot row (type d) is required")
    records = _ordered(records)
    nodes = _nodes(records)
    pos = np.array([(r["x"], r["y"]) for r in records], dtype=float)
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    try:
        return Instance(nodes, dist, dist / velocity, scalars["C"], scalars["Q"], scalars["g"], scalars["h"],
                        dispatch_cost, distance_cost, coord_mode="cartesian", triangle_ok=True, name=name)
    except ValueError as exc:
        raise InstanceParseError(str(exc)) from exc


def _nodes(records):
    nodes = []
    for i, r in enumerate(records):
        kind = r["kind"]
        if kind != CUSTOMER and (r["delivery"] or r["pickup"] or r["service"]):
            raise InstanceParseError(f"{kind} {r['name']} must have zero demand and service", r.get("line"))
        nodes.append(Node(i, kind, r["delivery"], r["pickup"], r["tw_open"], r["tw_close"], r["service"],
                          r["x"], r["y"], r["name"]))
    return nodes


def write_akb(instance: Instance, velocity: float = 1.0) -> str:
    """akb text for a Cartesian instance (matrices are re-derived when read back)."""
    rows = ["StringID Type x y delivery pickup ReadyTime DueDate ServiceTime"]
    for nd in instance.nodes:
        label = nd.name or f"{KIND_LETTERS[nd.kind].upper()}{nd.id}"
        rows.append(" ".join([label, KIND_LETTERS[nd.kind]] + [repr(float(x)) for x in (
            nd.x, nd.y, nd.delivery, nd.pickup, nd.tw_open, nd.tw_close, nd.service)]))
    rows.append("")
    rows.append(f"Q Vehicle fuel tank capacity /{instance.Q!r}/")
    rows.append(f"C Vehicle load capacity /{instance.C!r}/")
    rows.append(f"r fuel consumption rate /{instance.h!r}/")
    rows.append(f"g inverse refueling rate /{instance.g!r}/")
    rows.append(f"v average Velocity /{float(velocity)!r}/")
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------- jd

_JD_KEYS = {
    "NAME": "name", "DIMENSION": "dimension", "DISPATCHINGCOST": "mu1", "UNITCOST": "mu2",
    "CAPACITY": "C", "ELECTRIC_POWER": "Q", "CONSUMPTION_RATE": "h", "RECHARGING_RATE": "g",
}


def parse_jd(text: str, dispatch_cost: float | None = None, distance_cost: float | None = None) -> Instance:
    lines = text.splitlines()
    idx = 0
    if lines and lines[0].strip().startswith("EVRPTWSPD-JD"):
        if lines[0].strip() != JD_MAGIC:
            raise InstanceParseError(f"unsupported format version {lines[0].strip()!r}", 1)
        idx = 1
    meta = {}
    section = None
    records = []
    edges = {}
    depot_ids = []
    file_ids = []
    for no in range(idx + 1, len(lines) + 1):
        line = lines[no - 1].strip()
        if not line:
            continue
        if line == "EOF":
            break
        if line in ("NODE_SECTION", "DISTANCETIME_SECTION", "DEPOT_SECTION"):
            section = line
            continue
        if section is None:
            key, sep, value = line.partition(":")
            key = key.strip().upper()
            if not sep or key not in _JD_KEYS:
                raise InstanceParseError(f"unexpected line {line!r}", no)
            meta[_JD_KEYS[key]] = value.strip()
            continue
        parts = [p.strip() for p in line.split(",")]
        if section == "NODE_SECTION":
            if parts[0].lower() == "id":
                continue
            if len(parts) != 9:
                raise InstanceParseError(f"node row needs 9 fields, found {len(parts)}", no)
            kind = KIND_CODES.get(parts[1].lower())
            if kind is None:
                raise InstanceParseError(f"unknown node type {parts[1]!r}", no)
            vals = [_float(p, no, "node field") for p in parts[2:]]
            file_ids.append(parts[0])
            records.append(dict(name=parts[0], kind=kind, x=vals[0], y=vals[1], delivery=vals[2], pickup=vals[3],
                                tw_open=vals[4], tw_close=vals[5], service=vals[6], line=no))
        elif section == "DISTANCETIME_SECTION":
            if parts[0].lower() == "from":
                continue
            if len(parts) != 4:
                raise InstanceParseError(f"edge row needs 4 fields, found {len(parts)}", no)
            dval, tval = _float(parts[2], no, "distance"), _float(parts[3], no, "time")
            if dval < 0 or tval < 0:
                raise InstanceParseError("negative distance or time", no)
            edges[(parts[0], parts[1])] = (dval, tval, no)
        else:
            depot_ids.append(parts[0])
    for key in ("C", "Q", "h", "g"):
        if key not in meta:
            raise InstanceParseError(f"missing required key for {key}")
    if "dimension" in meta and int(meta["dimension"]) != len(records):
        raise InstanceParseError(f"DIMENSION is {meta['dimension']} but {len(records)} nodes were given")
    if len(set(file_ids)) != len(file_ids):
        raise InstanceParseError("duplicate node id")
    if depot_ids:
        kinds = {r["name"]: r["kind"] for r in records}
        if any(kinds.get(d) != DEPOT for d in depot_ids):
            raise InstanceParseError("DEPOT_SECTION names a node that is not the depot")
    records = _ordered(records)
    n = len(records)
    dist = np.zeros((n, n))
    tm = np.zeros((n, n))
    names = [r["name"] for r in records]
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            e = edges.get((names[a], names[b]))
            if e is None:
                raise InstanceParseError(f"no DISTANCETIME row for {names[a]} -> {names[b]}")
            dist[a, b], tm[a, b] = e[0], e[1]
    mu1 = dispatch_cost if dispatch_cost is not None else float(meta.get("mu1", 300.0))
    mu2 = distance_cost if distance_cost is not None else float(meta.get("mu2", 0.014))
    try:
        return Instance(_nodes(records), dist, tm, float(meta["C"]), float(meta["Q"]), float(meta["g"]),
                        float(meta["h"]), mu1, mu2, coord_mode="geographic", triangle_ok=False,
                        name=meta.get("name", ""))
    except ValueError as exc:
        raise InstanceParseError(str(exc)) from exc


def write_jd(instance: Instance) -> str:
    out = [JD_MAGIC, f"NAME: {instance.name}", f"DIMENSION: {instance.n}",
           f"DISPATCHINGCOST: {instance.mu1!r}", f"UNITCOST: {instance.mu2!r}", f"CAPACITY: {instance.C!r}",
           f"ELECTRIC_POWER: {instance.Q!r}", f"CONSUMPTION_RATE: {instance.h!r}",
           f"RECHARGING_RATE: {instance.g!r}", "NODE_SECTION",
           "id,type,lng,lat,delivery,pickup,ready_time,due_time,service_time"]
    for nd in instance.nodes:
        out.append(",".join([str(nd.id), KIND_LETTERS[nd.kind]] + [repr(float(x)) for x in (
            nd.x, nd.y, nd.delivery, nd.pickup, nd.tw_open, nd.tw_close, nd.service)]))
    out.append("DISTANCETIME_SECTION")
    out.append("from,to,distance,spend_tm")
    d, t = instance.d, instance.t
    for a in range(instance.n):
        for b in range(instance.n):
            if a != b:
                out.append(f"{a},{b},{d[a][b]!r},{t[a][b]!r}")
    out += ["DEPOT_SECTION", "0", "EOF"]
    return "\n".join(out) + "\n"


def load_instance(path) -> Instance:
    """Read an instance file, picking the format from its content."""
    path = Path(path)
    text = path.read_text()
    head = text.lstrip()[:200]
    if head.startswith("EVRPTWSPD-JD") or "NODE_SECTION" in text[:4000]:
        inst = parse_jd(text)
        if not inst.name:
            inst = inst.replace(name=path.stem)
        return inst
    return parse_akb(text, name=path.stem)


# ---------------------------------------------------------------- generators

@dataclass
class JdConfig:
    """Knobs of the jd-like generator (units: meters, minutes)."""

    lng_range: tuple = (116.10, 116.70)
    lat_range: tuple = (39.70, 40.10)
    depot: tuple = (116.40, 39.90)
    road_noise: float = 0.15
    speed: float = 500.0
    horizon: float = 720.0
    window_width: tuple = (60.0, 240.0)
    service: tuple = (5.0, 15.0)
    delivery: tuple = (0, 20)
    pickup: tuple = (0, 20)
    capacity: float = 200.0
    battery: float = 80000.0
    consumption: float = 1.0
    recharge: float = 0.001
    dispatch_cost: float = 300.0
    distance_cost: float = 0.014
    extra: dict = field(default_factory=dict)


def _reach_times(dist, tm, c, stations, Q, g, h):
    """Fastest battery-feasible trip out to ``c`` and back, with at most one
    full-charge station stop on each leg: ``(arrival at c, return time)``.

    Either value is ``inf`` when no such leg exists.
    """
    best_out, left = np.inf, -np.inf
    if h * dist[0, c] <= Q:
        best_out, left = tm[0, c], Q - h * dist[0, c]
    for k in stations:
        if h * dist[0, k] <= Q and h * dist[k, c] <= Q:
            arrive = tm[0, k] + g * h * dist[0, k] + tm[k, c]
            if arrive < best_out:
                best_out, left = arrive, Q - h * dist[k, c]
    if np.isinf(best_out):
        return np.inf, np.inf
    back = tm[c, 0] if h * dist[c, 0] <= left else np.inf
    for k in stations:
        if h * dist[c, k] <= left and h * dist[k, 0] <= Q:
            need = max(0.0, h * dist[k, 0] - (left - h * dist[c, k]))
            back = min(back, tm[c, k] + g * need + tm[k, 0])
    return best_out, back


def generate_jd_like(M: int, P: int, seed: int, config: JdConfig | None = None, name: str = "") -> Instance:
    """Synthetic geographic instance with noisy road distances.

    Distances are Mercator-projected straight lines scaled by an independent
    factor per ordered pair drawn from ``[1, 1 + 2 * road_noise]``, so the
    matrix is asymmetric and breaks the triangle inequality on some triples.
    Customers that a dedicated vehicle could not reach and leave again
    (directly or with one station stop per leg) are moved to a fresh random
    location, and every window is drawn so that such a visit fits.
    """
    from .preprocess import mercator_project

    if M < 1 or P < 1:
        raise ValueError("need at least one customer and one station")
    cfg = config or JdConfig()
    rng = np.random.default_rng(seed)
    n = M + P + 1
    coords = np.empty((n, 2))
    coords[0] = cfg.depot
    coords[1:, 0] = rng.uniform(*cfg.lng_range, size=M + P)
    coords[1:, 1] = rng.uniform(*cfg.lat_range, size=M + P)
    factor = rng.uniform(1.0, 1.0 + 2 * cfg.road_noise, size=(n, n))
    service = np.round(rng.uniform(*cfg.service, size=M + 1), 1)
    width = rng.uniform(*cfg.window_width, size=M + 1)
    offset = rng.uniform(0.0, 1.0, size=M + 1)
    delivery = rng.integers(cfg.delivery[0], cfg.delivery[1] + 1, size=M + 1)
    pickup = rng.integers(cfg.pickup[0], cfg.pickup[1] + 1, size=M + 1)
    stations = range(M + 1, n)
    H = cfg.horizon
    Q, g, h = cfg.battery, cfg.recharge, cfg.consumption

    pending = list(range(1, M + 1))
    reach = {}
    for _ in range(200):
        xy = np.array([mercator_project(a, b) for a, b in coords.tolist()])
        base = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2))
        dist = np.round(base * factor, 1)
        np.fill_diagonal(dist, 0.0)
        tm = np.round(dist / cfg.speed, 3)
        moved = []
        for c in pending:
            out, back = _reach_times(dist, tm, c, stations, Q, g, h)
            if out + service[c] + back > H:
                moved.append(c)
            else:
                reach[c] = (out, back)
        if not moved:
            break
        for c in moved:
            coords[c] = (rng.uniform(*cfg.lng_range), rng.uniform(*cfg.lat_range))
            factor[c, :] = rng.uniform(1.0, 1.0 + 2 * cfg.road_noise, size=n)
            factor[:, c] = rng.uniform(1.0, 1.0 + 2 * cfg.road_noise, size=n)
        pending = moved
    else:
        raise ValueError("battery and horizon leave no servable customer locations")

    nodes = [Node(0, DEPOT, 0, 0, 0.0, H, 0.0, *coords[0].tolist(), "0")]
    for c in range(1, M + 1):
        s = float(service[c])
        earliest, latest = reach[c][0], H - s - reach[c][1]
        w = float(width[c])
        lo = float(offset[c]) * max(0.0, latest - w)
        e, l = round(lo, 1), round(min(lo + w, latest), 1)
        if l < earliest:
            # the window must leave room to arrive; keep it inside [earliest, latest]
            l = math.floor(min(latest, earliest + w) * 10) / 10
            e = round(min(e, l), 1)
        nodes.append(Node(c, CUSTOMER, float(delivery[c]), float(pickup[c]), e, l, s, *coords[c].tolist(), str(c)))
    for k in stations:
        nodes.append(Node(k, STATION, 0, 0, 0.0, H, 0.0, *coords[k].tolist(), str(k)))
    return Instance(nodes, dist, tm, cfg.capacity, cfg.battery, cfg.recharge, cfg.consumption,
                    cfg.dispatch_cost, cfg.distance_cost, coord_mode="geographic", triangle_ok=False,
                    name=name or f"jd_like_{M}_{P}_{seed}")


def generate_small(seed: int, M: int = 4, P: int = 2, battery_tightness: float = 0.7,
                   window_tightness: float = 0.5, capacity_tightness: float = 0.6,
                   dispatch_cost: float = 1000.0, distance_cost: float = 1.0) -> Instance:
    """Small Cartesian instance for exhaustive checks.

    The battery holds ``battery_tightness`` times the longest depot round
    trip, so stations matter on some routes; windows shrink with
    ``window_tightness``.  Every customer can be served alone with the
    help of stations; draws where some customer is not are discarded.
    """
    from .preprocess import rank_stations
    from .pssi import ssi

    rng = random.Random(seed)
    for _ in range(1000):
        pts = [(50.0, 50.0)] + [(rng.uniform(0, 100), rng.uniform(0, 100)) for _ in range(M + P)]
        pos = np.array(pts)
        dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2))
        trip = max(dist[0, c] + dist[c, 0] for c in range(1, M + 1))
        Q = round(battery_tightness * trip, 3)
        legs_ok = all(_leg_reachable(dist, Q, 0, c, M, P) and _leg_reachable(dist, Q, c, 0, M, P)
                      for c in range(1, M + 1))
        if not legs_ok:
            continue
        g = 0.5
        H = round(3.0 * trip + 2 * g * Q + 40.0, 3)
        nodes = [Node(0, DEPOT, 0, 0, 0.0, H, 0.0, *pts[0], "D0")]
        for c in range(1, M + 1):
            s = float(rng.randint(0, 10))
            width = (1.0 - window_tightness) * H
            latest = H - s - dist[c, 0] - g * Q
            e = round(rng.uniform(0, max(0.0, latest - width)), 3)
            l = round(max(e, min(latest, e + width)), 3)
            l = max(l, round(dist[0, c] + g * Q + 1e-3, 3))
            nodes.append(Node(c, CUSTOMER, float(rng.randint(0, 10)), float(rng.randint(0, 10)), e, l, s,
                              *pts[c], f"C{c}"))
        for k in range(M + 1, M + P + 1):
            nodes.append(Node(k, STATION, 0, 0, 0.0, H, 0.0, *pts[k], f"S{k}"))
        C = max(10.0, round(capacity_tightness * sum(nd.delivery + nd.pickup for nd in nodes), 1))
        inst = Instance(nodes, dist, dist, C, Q, g, 1.0, dispatch_cost, distance_cost,
                        coord_mode="cartesian", triangle_ok=True, name=f"small_{seed}_{M}_{P}")
        ranking = rank_stations(inst, 1.0)
        if all(ssi(inst, Route((0, c, 0)), ranking) is not None for c in inst.customer_ids):
            return inst
    raise RuntimeError("could not draw a servable instance")


def _leg_reachable(dist, Q, a, b, M, P) -> bool:
    if dist[a, b] <= Q:
        return True
    return any(dist[a, k] <= Q and dist[k, b] <= Q for k in range(M + 1, M + P + 1))


# ---------------------------------------------------------------- solutions

SOLUTION_FORMAT = "evrp-hma-solution"


def solution_to_dict(instance: Instance, solution: Solution) -> dict:
    return {
        "format": SOLUTION_FORMAT,
        "version": 1,
        "instance": instance.name,
        "checksum": instance.checksum(),
        "tc": solution.tc,
        "k": solution.k,
        "routes": [{"visits": list(map(int, r.visits)), "charges": list(map(float, r.charges))}
                   for r in solution.routes],
    }


def write_solution(instance: Instance, solution: Solution, path=None) -> str:
    text = json.dumps(solution_to_dict(instance, solution), indent=1)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def read_solution(text: str, instance: Instance, check: bool = True) -> Solution:
    """Parse a solution document; the stored cost is recomputed, not trusted."""
    doc = json.loads(text)
    if doc.get("format") != SOLUTION_FORMAT:
        raise ValueError("not a solution document")
    if check and doc.get("checksum") != instance.checksum():
        raise ChecksumMismatchError(
            f"solution belongs to instance checksum {doc.get('checksum')}, not {instance.checksum()}")
    routes = []
    for k, r in enumerate(doc["routes"]):
        visits = r["visits"]
        if any(not isinstance(i, int) or not 0 <= i < instance.n for i in visits):
            raise ValueError(f"route {k}: unknown node id")
        charges = r.get("charges") or [0.0] * len(visits)
        if len(charges) != len(visits):
            raise ValueError(f"route {k}: charge list length differs from visit list")
        routes.append(Route(tuple(visits), tuple(float(q) for q in charges)))
    sol = Solution(routes)
    sol.tc = instance.mu1 * len(routes) + instance.mu2 * sum(
        sum(instance.d[a][b] for a, b in zip(r.visits, r.visits[1:])) for r in routes)
    return sol
