"""The hybrid driver.

A large neighbourhood search loop (destroy-repair followed by local search)
runs until it stagnates for ``G1`` iterations; a memetic phase then evolves a
population seeded from the incumbent.  If the memetic phase cannot improve
the incumbent the run ends.  Instances above ``large_scale_threshold``
customers skip the electric local search and split the memetic phase into
subproblems obtained by clustering route barycenters.
"""

from __future__ import annotations

import math
import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cdns import SearchMode, cdns
from .construct import DestroyParams, InsertionHelper, RcrsParams, destroy_repair, rcrs_construct, regret_insert
from .model import Instance, Route, Solution
from .preprocess import expand_route, hyperarc_closure, projected_positions, rank_stations, subinstance
from .pssi import PssiParams, StationInserter

PROFILE_DIR = Path(__file__).with_name("profiles")
SUBPROBLEM_COUNTS = (2, 4, 6, 8, 10)


@dataclass
class HmaParams:
    G1: int = 20
    G2: int = 20
    N: int = 9
    alpha: float = 3.0
    B: int = 5
    sr: float = 1.0
    omega1: float = 0.2
    omega2: float = 0.4
    time_limit: float = math.inf
    large_scale_threshold: int = 200
    subproblems: int | None = None
    seed: int = 0
    workers: int = 1
    init_lambda: float = 0.5
    init_gamma: float = 0.5

    def pssi_params(self) -> PssiParams:
        return PssiParams(alpha=self.alpha, generations=self.B, sr=self.sr)

    @classmethod
    def from_mapping(cls, values: dict) -> "HmaParams":
        known = {f: f for f in cls.__dataclass_fields__}
        out = {}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown parameter {key!r}")
            typ = type(getattr(cls(), key))
            if key == "subproblems":
                out[key] = None if str(raw).lower() in ("", "none", "auto") else int(raw)
            elif typ is int:
                out[key] = int(raw)
            else:
                out[key] = float(raw)
        return cls(**out)

    @classmethod
    def profile(cls, name: str, **overrides) -> "HmaParams":
        return replace(cls.from_mapping(read_config(PROFILE_DIR / f"{name}.cfg")), **overrides)


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{no}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def subproblem_count(customers: int) -> int:
    target = customers / 100
    return min(SUBPROBLEM_COUNTS, key=lambda k: (abs(k - target), k))


@dataclass
class SearchContext:
    """Everything one run shares between its components."""

    instance: Instance
    params: HmaParams
    rng: random.Random
    mode: SearchMode
    deadline: float | None = None
    ranking: object = None
    inserter: StationInserter | None = None
    helper: InsertionHelper | None = None

    def __post_init__(self):
        if self.ranking is None:
            self.ranking = rank_stations(self.instance, self.params.sr)
        if self.inserter is None:
            self.inserter = StationInserter(self.instance, self.ranking, self.params.pssi_params(), self.rng)
        if self.helper is None:
            self.helper = InsertionHelper(self.instance, self.ranking)

    def expired(self) -> bool:
        return self.deadline is not None and time.monotonic() >= self.deadline

    def improve(self, solution: Solution) -> Solution:
        return cdns(self.instance, solution, self.mode, self.inserter, self.deadline)

    def perturb(self, solution: Solution, omega1: float, omega2: float) -> Solution:
        return destroy_repair(self.instance, solution, DestroyParams(omega1, omega2), self.ranking, self.rng,
                              self.helper)


# ---------------------------------------------------------------- population

def seeding_weights(i: int, N: int) -> tuple:
    """``(lambda, gamma)`` for the even-indexed member ``i`` (1-based) of a population of ``N``."""
    side = math.isqrt(N)
    if side * side != N:
        side = math.ceil(math.sqrt(N))
    if side <= 1:
        return 0.0, 0.0
    p = math.ceil(i / side)
    q = i - side * (p - 1)
    return (p - 1) / (side - 1), (q - 1) / (side - 1)


def population_init(ctx: SearchContext, elite: Solution, N: int) -> list:
    """Member 1 copies the elite, odd members perturb it, even members are rebuilt from scratch."""
    pop = [elite.copy()]
    for i in range(2, N + 1):
        if ctx.expired():
            pop.append(elite.copy())
            continue
        if i % 2:
            w = min(i / N, 1.0)
            pop.append(ctx.perturb(elite, w, w))
        else:
            lam, gamma = seeding_weights(i, N)
            lam, gamma = min(max(lam, 0.0), 1.0), min(max(gamma, 0.0), 1.0)
            pop.append(rcrs_construct(ctx.instance, RcrsParams(lam, gamma), ctx.ranking))
    return pop


def rari_crossover(ctx: SearchContext, p1: Solution, p2: Solution) -> Solution:
    """Take whole parent routes alternately, cheapest per customer first, then repair by regret."""
    inst = ctx.instance
    unassigned = set(inst.customer_ids)
    chosen = []
    parents = (p1, p2)
    turn = 0
    stalled = 0
    while stalled < 2:
        parent = parents[turn % 2]
        turn += 1
        admissible = []
        for r in parent.routes:
            cust = r.customers(inst)
            if cust and unassigned.issuperset(cust):
                ev = r.evaluated(inst)
                admissible.append(((inst.mu1 + inst.mu2 * ev.td) / len(cust), r.visits, r))
        if not admissible:
            stalled += 1
            continue
        stalled = 0
        _, _, r = min(admissible, key=lambda a: (a[0], a[1]))
        chosen.append(Route(r.visits, r.charges, r.eval))
        unassigned.difference_update(r.customers(inst))
    child = regret_insert(inst, chosen, unassigned, ctx.ranking, ctx.rng, ctx.helper)
    return p1.copy() if child is None else child


def memetic_search(ctx: SearchContext, elite: Solution) -> Solution:
    N = ctx.params.N
    pop = population_init(ctx, elite, N)
    best = min([elite, *pop], key=lambda s: s.tc)
    stagnant = 0
    while stagnant < ctx.params.G2 and not ctx.expired():
        perm = list(range(N))
        ctx.rng.shuffle(perm)
        for i in range(N):
            if ctx.expired():
                break
            a, b = perm[i], perm[(i + 1) % N]
            child = ctx.improve(rari_crossover(ctx, pop[a], pop[b]))
            if child.tc < pop[a].tc - 1e-9:
                pop[a] = child
        gen_best = min(pop, key=lambda s: s.tc)
        if gen_best.tc < best.tc - 1e-9:
            best = gen_best
            stagnant = 0
        else:
            stagnant += 1
    return best


# ---------------------------------------------------------------- decomposition

@dataclass
class Barycenter:
    route: int
    x: float
    y: float


def barycenters(instance: Instance, solution: Solution) -> list:
    """Mean position of each route's visits, the closing depot visit excluded."""
    pos = projected_positions(instance)
    out = []
    for k, r in enumerate(solution.routes):
        pts = pos[list(r.visits[:-1])]
        x, y = pts.mean(axis=0)
        out.append(Barycenter(k, float(x), float(y)))
    return out


def bcd_decompose(instance: Instance, solution: Solution, k: int, seed: int = 0) -> list:
    """Cluster routes by barycenter into at most ``k`` subproblems.

    Returns ``(subinstance, old_ids, subsolution)`` triples; each subinstance
    keeps the depot and every station, and customers of one route always
    land in the same subproblem.
    """
    from sklearn.cluster import KMeans

    routes = solution.routes
    k = max(1, min(k, len(routes)))
    if k == 1:
        labels = [0] * len(routes)
    else:
        pts = np.array([(b.x, b.y) for b in barycenters(instance, solution)])
        km = KMeans(n_clusters=k, init="k-means++", n_init=50, random_state=seed % (2 ** 32))
        labels = km.fit_predict(pts).tolist()
    parts = []
    for label in sorted(set(labels)):
        members = [r for r, lab in zip(routes, labels) if lab == label]
        customers = [c for r in members for c in r.customers(instance)]
        sub, old_ids = subinstance(instance, customers, name=f"{instance.name}[{label}]")
        new_id = {old: new for new, old in enumerate(old_ids)}
        sub_routes = [Route(tuple(new_id[i] for i in r.visits), r.charges) for r in members]
        parts.append((sub, old_ids, Solution.build(sub, sub_routes)))
    return parts


def _solve_subproblem(args):
    # the monotonic clock is shared by worker processes, so the parent's deadline applies as is
    sub, sub_solution, params, seed, deadline = args
    ctx = SearchContext(sub, params, random.Random(seed), SearchMode.LARGE_SCALE, deadline)
    best = memetic_search(ctx, sub_solution)
    return [(r.visits, r.charges) for r in best.routes], ctx.inserter.stats.as_dict()


def decomposed_memetic_search(ctx: SearchContext, elite: Solution, stats_sink: list | None = None) -> Solution:
    inst, params = ctx.instance, ctx.params
    k = params.subproblems or subproblem_count(inst.M)
    parts = bcd_decompose(inst, elite, k, seed=ctx.rng.getrandbits(32))
    seeds = [ctx.rng.getrandbits(63) for _ in parts]
    jobs = [(sub, sol, params, s, ctx.deadline) for (sub, _, sol), s in zip(parts, seeds)]
    if params.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(params.workers, len(jobs))) as pool:
            results = list(pool.map(_solve_subproblem, jobs))
    else:
        results = [_solve_subproblem(job) for job in jobs]
    routes = []
    for (sub, old_ids, _), (sub_routes, stats) in zip(parts, results):
        for visits, charges in sub_routes:
            routes.append(Route(tuple(old_ids[i] for i in visits), charges))
        if stats_sink is not None:
            stats_sink.append(stats)
    out = Solution.build(inst, routes)
    return out if out.tc < elite.tc else elite


# ---------------------------------------------------------------- main loop

@dataclass
class HmaResult:
    solution: Solution
    working_solution: Solution
    log: list
    construction_tc: float
    iterations: int
    memetic_rounds: int
    elapsed: float
    stats: dict = field(default_factory=dict)
    time_to_best: float = 0.0


def prepare_instance(instance: Instance, closure: bool | None = None) -> Instance:
    """Apply the station-relay closure when the matrices may break the triangle inequality."""
    if closure is None:
        closure = instance.coord_mode == "geographic" or not instance.triangle_ok
    return hyperarc_closure(instance) if closure else instance


def expand_solution(original: Instance, working: Instance, solution: Solution) -> Solution:
    if working is original or working.hyperarcs is None:
        return solution
    return Solution.build(original, [expand_route(original, working, r) for r in solution.routes])


def hma_solve(instance: Instance, params: HmaParams, closure: bool | None = None, progress=None) -> HmaResult:
    start = time.monotonic()
    deadline = None if math.isinf(params.time_limit) else start + params.time_limit
    working = prepare_instance(instance, closure)
    large = working.M > params.large_scale_threshold
    mode = SearchMode.LARGE_SCALE if large else SearchMode.FULL
    ctx = SearchContext(working, params, random.Random(params.seed), mode, deadline)
    sub_stats = []

    best = rcrs_construct(working, RcrsParams(params.init_lambda, params.init_gamma), ctx.ranking)
    construction_tc = best.tc
    log = [(time.monotonic() - start, best.tc, best.k)]
    best_at = log[0][0]

    def record(sol):
        nonlocal best_at
        best_at = time.monotonic() - start
        log.append((best_at, sol.tc, sol.k))
        if progress is not None:
            progress(best_at, sol)

    iterations = rounds = stagnant = 0
    while not ctx.expired():
        iterations += 1
        cand = ctx.improve(ctx.perturb(best, params.omega1, params.omega2))
        if cand.tc < best.tc - 1e-9:
            best = cand
            stagnant = 0
            record(best)
        else:
            stagnant += 1
        if stagnant >= params.G1 and not ctx.expired():
            rounds += 1
            if large:
                cand = decomposed_memetic_search(ctx, best, sub_stats)
            else:
                cand = memetic_search(ctx, best)
            if cand.tc < best.tc - 1e-9:
                best = cand
                stagnant = 0
                record(best)
            else:
                break
    stats = ctx.inserter.stats.as_dict()
    for extra in sub_stats:
        for key, value in extra.items():
            stats[key] = stats.get(key, 0) + value
    final = expand_solution(instance, working, best)
    return HmaResult(final, best, log, construction_tc, iterations, rounds, time.monotonic() - start, stats, best_at)


def params_dict(params: HmaParams) -> dict:
    return asdict(params)
