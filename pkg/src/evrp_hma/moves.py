"""Route-improvement moves and best-improvement search.

Five operators act on the visit lists of one or two routes:

``two_opt``       reverse ``visits[i..j]`` inside a route
``two_opt_star``  exchange the tails after positions ``i`` and ``j`` of two routes
``or_opt``        move a block of one or two consecutive visits elsewhere
``swap``          exchange two non-overlapping blocks of one or two visits
``relocate``      move a single visit elsewhere

Cost deltas are computed in constant time from the touched arcs.  In the
non-electric domain feasibility is also constant time: every route keeps a
table of segment summaries (duration, time warp, earliest/latest start, load
profile) that concatenate exactly.  In the electric domain a candidate route
is rebuilt, its charges rescheduled and its trace re-run.
"""

from __future__ import annotations

from dataclasses import dataclass

from .charging import schedule_charges
from .model import EPS, Instance, Route, trace

KINDS = ("two_opt", "two_opt_star", "or_opt", "swap", "relocate")
KIND_ORDER = {k: i for i, k in enumerate(KINDS)}
IMPROVEMENT = 1e-9


@dataclass(frozen=True)
class Move:
    """A move on routes identified by their visit tuples.

    ``routes`` holds one tuple for intra-route moves and two for inter-route
    moves; ``pos`` and ``lens`` are positions and block lengths in those
    tuples; ``delta`` is the change in total cost.
    """

    kind: str
    routes: tuple
    pos: tuple
    lens: tuple
    delta: float
    dist_delta: float

    def sort_key(self):
        return (self.delta, KIND_ORDER[self.kind], self.routes, self.pos, self.lens)

    def pieces(self) -> list:
        """New routes as lists of ``(role, lo, hi, reversed)`` pieces of the old ones."""
        return _pieces(self.kind, self.pos, self.lens, [len(r) for r in self.routes])

    def apply(self) -> list:
        """Visit tuples of the routes that replace ``self.routes``."""
        return [build(self.routes, p) for p in self.pieces()]


def build(routes, pieces) -> tuple:
    out = []
    for role, lo, hi, rev in pieces:
        seg = routes[role][lo:hi + 1]
        out.extend(reversed(seg) if rev else seg)
    return tuple(out)


def _pieces(kind, pos, lens, sizes):
    if kind == "two_opt":
        n = sizes[0]
        i, j = pos
        return [[(0, 0, i - 1, False), (0, i, j, True), (0, j + 1, n - 1, False)]]
    if kind == "two_opt_star":
        na, nb = sizes
        i, j = pos
        return [[(0, 0, i, False), (1, j + 1, nb - 1, False)],
                [(1, 0, j, False), (0, i + 1, na - 1, False)]]
    if kind in ("or_opt", "relocate"):
        L = lens[0]
        if len(sizes) == 1:
            n = sizes[0]
            i, p = pos
            if p < i - 1:
                parts = [(0, 0, p), (0, i, i + L - 1), (0, p + 1, i - 1), (0, i + L, n - 1)]
            else:
                parts = [(0, 0, i - 1), (0, i + L, p), (0, i, i + L - 1), (0, p + 1, n - 1)]
            return [[(r, lo, hi, False) for r, lo, hi in parts]]
        na, nb = sizes
        i, p = pos
        return [[(0, 0, i - 1, False), (0, i + L, na - 1, False)],
                [(1, 0, p, False), (0, i, i + L - 1, False), (1, p + 1, nb - 1, False)]]
    if kind == "swap":
        L1, L2 = lens
        i, j = pos
        if len(sizes) == 1:
            n = sizes[0]
            parts = [(0, 0, i - 1), (0, j, j + L2 - 1), (0, i + L1, j - 1), (0, i, i + L1 - 1), (0, j + L2, n - 1)]
            return [[(r, lo, hi, False) for r, lo, hi in parts if lo <= hi]]
        na, nb = sizes
        return [[(0, 0, i - 1, False), (1, j, j + L2 - 1, False), (0, i + L1, na - 1, False)],
                [(1, 0, j - 1, False), (0, i, i + L1 - 1, False), (1, j + L2, nb - 1, False)]]
    raise ValueError(f"unknown move kind {kind!r}")


# ---------------------------------------------------------------- segment summaries

def node_summary(instance: Instance, i: int) -> tuple:
    """(first, last, dist, duration, time warp, earliest, latest, deliveries, pickups, peak load)."""
    return (i, i, 0.0, instance.s[i], 0.0, instance.e[i], instance.l[i], instance.u[i], instance.v[i], instance.u[i])


def concat(instance: Instance, a: tuple, b: tuple) -> tuple:
    f1, l1, d1, D1, TW1, E1, L1, U1, V1, M1 = a
    f2, l2, d2, D2, TW2, E2, L2, U2, V2, M2 = b
    tt = instance.t[l1][f2]
    delta = D1 - TW1 + tt
    dwt = E2 - delta - L1
    if dwt < 0:
        dwt = 0.0
    dtw = E1 + delta - L2
    if dtw < 0:
        dtw = 0.0
    return (f1, l2, d1 + d2 + instance.d[l1][f2], D1 + D2 + tt + dwt, TW1 + TW2 + dtw,
            max(E2 - delta, E1) - dwt, min(L2 - delta, L1) + dtw,
            U1 + U2, V1 + V2, max(M1 + U2, V1 + M2))


def summary_feasible(instance: Instance, seg: tuple) -> bool:
    return seg[4] <= EPS and seg[9] <= instance.C + EPS


class RouteData:
    """Per-route arrays shared by all moves touching the route."""

    __slots__ = ("visits", "n", "cum", "rcum", "ncust", "segs", "dist")

    def __init__(self, instance: Instance, visits: tuple, with_segments: bool):
        d = instance.d
        is_st = instance.is_station
        self.visits = visits
        n = self.n = len(visits)
        cum = [0.0] * n
        rcum = [0.0] * n
        ncust = [0] * n
        for k in range(1, n):
            a, b = visits[k - 1], visits[k]
            cum[k] = cum[k - 1] + d[a][b]
            rcum[k] = rcum[k - 1] + d[b][a]
            ncust[k] = ncust[k - 1] + (0 < b and not is_st[b])
        self.cum, self.rcum, self.ncust = cum, rcum, ncust
        self.dist = cum[-1]
        self.segs = None
        if with_segments:
            nodes = [node_summary(instance, i) for i in visits]
            segs = []
            for lo in range(n):
                row = [None] * n
                cur = nodes[lo]
                row[lo] = cur
                for hi in range(lo + 1, n):
                    cur = concat(instance, cur, nodes[hi])
                    row[hi] = cur
                segs.append(row)
            self.segs = segs

    def customers_between(self, lo: int, hi: int) -> int:
        """Customers at positions ``lo..hi`` (inclusive)."""
        if hi < lo:
            return 0
        return self.ncust[hi] - (self.ncust[lo - 1] if lo > 0 else 0)

    @property
    def customers(self) -> int:
        return self.ncust[-1]


class Neighborhood:
    """Best-improvement search over the five operators.

    ``electric=False`` ignores the battery and checks candidates through the
    segment tables; ``electric=True`` reschedules charges and re-runs the
    full route trace.  Best moves are cached per route and per route pair,
    keyed by visit tuples, so after a move only the pairs involving the new
    routes are re-scanned.
    """

    def __init__(self, instance: Instance, electric: bool, kinds=KINDS):
        self.instance = instance
        self.electric = electric
        self.kinds = tuple(kinds)
        self._data = {}
        self._intra = {}
        self._inter = {}
        self._rev = {}

    # -- caches
    def data(self, visits: tuple) -> RouteData:
        rd = self._data.get(visits)
        if rd is None:
            rd = RouteData(self.instance, visits, not self.electric)
            self._data[visits] = rd
        return rd

    def forget(self, keep) -> None:
        keep = set(keep)
        self._data = {k: v for k, v in self._data.items() if k in keep}
        self._intra = {k: v for k, v in self._intra.items() if k in keep}
        self._inter = {k: v for k, v in self._inter.items() if k[0] in keep and k[1] in keep}
        self._rev = {k: v for k, v in self._rev.items() if k[0] in keep}

    # -- feasibility
    def _reversed_summary(self, rd: RouteData, lo: int, hi: int) -> tuple:
        key = (rd.visits, lo, hi)
        seg = self._rev.get(key)
        if seg is None:
            inst = self.instance
            seg = node_summary(inst, rd.visits[hi])
            for k in range(hi - 1, lo - 1, -1):
                seg = concat(inst, seg, node_summary(inst, rd.visits[k]))
            self._rev[key] = seg
        return seg

    def route_feasible(self, rds, pieces) -> bool:
        if self.electric:
            visits = build([rd.visits for rd in rds], pieces)
            charges = schedule_charges(self.instance, visits)
            return trace(self.instance, visits, charges).feasible
        seg = None
        for role, lo, hi, rev in pieces:
            rd = rds[role]
            part = self._reversed_summary(rd, lo, hi) if rev else rd.segs[lo][hi]
            seg = part if seg is None else concat(self.instance, seg, part)
        return summary_feasible(self.instance, seg)

    def move_feasible(self, move: Move) -> bool:
        rds = [self.data(v) for v in move.routes]
        new = move.pieces()
        return all(self.route_feasible(rds, p) for p in new)

    # -- enumeration
    def intra_moves(self, va: tuple):
        """All intra-route moves of one route with their deltas (unfiltered)."""
        inst = self.instance
        d = inst.d
        mu2 = inst.mu2
        rd = self.data(va)
        v, n = va, rd.n
        cum, rc = rd.cum, rd.rcum
        kinds = self.kinds
        if "two_opt" in kinds:
            for i in range(1, n - 2):
                a = v[i - 1]
                for j in range(i + 1, n - 1):
                    b, c = v[j], v[j + 1]
                    dd = (d[a][b] + d[v[i]][c] - d[a][v[i]] - d[b][c]
                          + (rc[j] - rc[i]) - (cum[j] - cum[i]))
                    yield Move("two_opt", (va,), (i, j), (), mu2 * dd, dd)
        for kind in ("or_opt", "relocate"):
            if kind not in kinds:
                continue
            for L in ((1, 2) if kind == "or_opt" else (1,)):
                for i in range(1, n - L):
                    s, e = v[i], v[i + L - 1]
                    prev, nxt = v[i - 1], v[i + L]
                    rem = d[prev][nxt] - d[prev][s] - d[e][nxt]
                    for p in range(0, n - 1):
                        if i - 1 <= p <= i + L - 1:
                            continue
                        x, y = v[p], v[p + 1]
                        dd = rem + d[x][s] + d[e][y] - d[x][y]
                        yield Move(kind, (va,), (i, p), (L,), mu2 * dd, dd)
        if "swap" in kinds:
            for L1 in (1, 2):
                for L2 in (1, 2):
                    for i in range(1, n - L1):
                        a0, a1 = v[i - 1], v[i]
                        a2, a3 = v[i + L1 - 1], v[i + L1]
                        for j in range(i + L1, n - L2):
                            b0, b1 = v[j - 1], v[j]
                            b2, b3 = v[j + L2 - 1], v[j + L2]
                            if j == i + L1:
                                dd = d[a0][b1] + d[b2][a1] + d[a2][b3] - d[a0][a1] - d[a2][b1] - d[b2][b3]
                            else:
                                dd = (d[a0][b1] + d[b2][a3] + d[b0][a1] + d[a2][b3]
                                      - d[a0][a1] - d[a2][a3] - d[b0][b1] - d[b2][b3])
                            yield Move("swap", (va,), (i, j), (L1, L2), mu2 * dd, dd)

    def inter_moves(self, va: tuple, vb: tuple):
        """All moves between two routes (both directions where asymmetric)."""
        inst = self.instance
        d = inst.d
        mu1, mu2 = inst.mu1, inst.mu2
        ra, rb = self.data(va), self.data(vb)
        na, nb = ra.n, rb.n
        kinds = self.kinds
        if "two_opt_star" in kinds:
            ca, cb = ra.customers, rb.customers
            for i in range(0, na - 1):
                x, x1 = va[i], va[i + 1]
                ka = ra.ncust[i]
                for j in range(0, nb - 1):
                    if (i == 0 and j == 0) or (i == na - 2 and j == nb - 2):
                        continue
                    y, y1 = vb[j], vb[j + 1]
                    dd = d[x][y1] + d[y][x1] - d[x][x1] - d[y][y1]
                    kb = rb.ncust[j]
                    empty_a, empty_b = ka + cb - kb == 0, kb + ca - ka == 0
                    if (empty_a and i + nb - j > 2) or (empty_b and j + na - i > 2):
                        continue  # would leave a station-only route behind
                    emptied = empty_a + empty_b
                    yield Move("two_opt_star", (va, vb), (i, j), (), mu2 * dd - mu1 * emptied, dd)
        for kind in ("or_opt", "relocate"):
            if kind not in kinds:
                continue
            for src, dst, rs, rdst in ((va, vb, ra, rb), (vb, va, rb, ra)):
                ns, nd_ = rs.n, rdst.n
                for L in ((1, 2) if kind == "or_opt" else (1,)):
                    for i in range(1, ns - L):
                        s, e = src[i], src[i + L - 1]
                        prev, nxt = src[i - 1], src[i + L]
                        rem = d[prev][nxt] - d[prev][s] - d[e][nxt]
                        emptied = 1 if rs.customers == rs.customers_between(i, i + L - 1) else 0
                        if emptied and ns - L > 2:
                            continue
                        for p in range(0, nd_ - 1):
                            x, y = dst[p], dst[p + 1]
                            dd = rem + d[x][s] + d[e][y] - d[x][y]
                            yield Move(kind, (src, dst), (i, p), (L,), mu2 * dd - mu1 * emptied, dd)
        if "swap" in kinds:
            for L1 in (1, 2):
                for L2 in (1, 2):
                    for i in range(1, na - L1):
                        a0, a1 = va[i - 1], va[i]
                        a2, a3 = va[i + L1 - 1], va[i + L1]
                        cin_a = ra.customers_between(i, i + L1 - 1)
                        for j in range(1, nb - L2):
                            b0, b1 = vb[j - 1], vb[j]
                            b2, b3 = vb[j + L2 - 1], vb[j + L2]
                            dd = (d[a0][b1] + d[b2][a3] + d[b0][a1] + d[a2][b3]
                                  - d[a0][a1] - d[a2][a3] - d[b0][b1] - d[b2][b3])
                            if self.electric:
                                cin_b = rb.customers_between(j, j + L2 - 1)
                                if ra.customers - cin_a + cin_b == 0 or rb.customers - cin_b + cin_a == 0:
                                    continue
                            yield Move("swap", (va, vb), (i, j), (L1, L2), mu2 * dd, dd)

    # -- best move
    def _best_of(self, moves):
        improving = [m for m in moves if m.delta < -IMPROVEMENT]
        improving.sort(key=Move.sort_key)
        for m in improving:
            if self.move_feasible(m):
                return m
        return None

    def best_intra(self, va: tuple):
        if va not in self._intra:
            self._intra[va] = self._best_of(self.intra_moves(va))
        return self._intra[va]

    def best_inter(self, va: tuple, vb: tuple):
        key = (va, vb) if va <= vb else (vb, va)
        if key not in self._inter:
            self._inter[key] = self._best_of(self.inter_moves(*key))
        return self._inter[key]

    def best_move(self, routes) -> Move | None:
        routes = [tuple(r) for r in routes]
        best = None
        for a, va in enumerate(routes):
            cands = [self.best_intra(va)]
            cands += [self.best_inter(va, vb) for vb in routes[a + 1:]]
            for m in cands:
                if m is not None and (best is None or m.sort_key() < best.sort_key()):
                    best = m
        return best

    def all_moves(self, routes):
        routes = [tuple(r) for r in routes]
        for a, va in enumerate(routes):
            yield from self.intra_moves(va)
            for vb in routes[a + 1:]:
                key = (va, vb) if va <= vb else (vb, va)
                yield from self.inter_moves(*key)


def apply_move(routes, move: Move) -> list:
    """Replace the routes touched by ``move``; empty routes are dropped."""
    routes = [tuple(r) for r in routes]
    new = move.apply()
    index = {r: k for k, r in enumerate(routes)}
    out = list(routes)
    for old, nv in zip(move.routes, new):
        out[index[old]] = nv
    return [r for r in out if len(r) > 2]


def route_objects(instance: Instance, visit_lists, electric: bool) -> list:
    out = []
    for v in visit_lists:
        charges = schedule_charges(instance, v) if electric else (0.0,) * len(v)
        out.append(Route(v, charges))
    return out
