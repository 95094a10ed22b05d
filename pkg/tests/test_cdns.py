import random

import pytest

from evrp_hma.cdns import SearchMode, als, cdns, cls, stripped_visits
from evrp_hma.charging import schedule_charges
from evrp_hma.construct import RcrsParams, rcrs_construct
from evrp_hma.instance_io import generate_small
from evrp_hma.model import BATTERY, Route, Solution, check_feasibility, trace
from evrp_hma.moves import Neighborhood, apply_move
from evrp_hma.preprocess import rank_stations
from evrp_hma.pssi import PssiParams, StationInserter


def start(seed, M=7, P=2, **kw):
    inst = generate_small(seed, M=M, P=P, **kw)
    rk = rank_stations(inst, 1.0)
    return inst, rk, rcrs_construct(inst, RcrsParams(), rk)


def inserter(inst, rk, seed=0):
    return StationInserter(inst, rk, PssiParams(), random.Random(seed))


def improving_moves(inst, routes, electric):
    """Every improving move whose new routes pass a full trace."""
    out = []
    for mv in Neighborhood(inst, electric).all_moves(routes):
        if mv.delta >= -1e-9:
            continue
        ok = True
        for r in mv.apply():
            charges = schedule_charges(inst, r) if electric else (0.0,) * len(r)
            ev = trace(inst, r, charges)
            ok &= ev.feasible if electric else not (ev.violated - {BATTERY})
        if ok:
            out.append(mv)
    return out


def replay_als(inst, sol, insert):
    """ALS by brute force: cheapest trace-feasible move, then station insertion."""
    best = sol
    plain = stripped_visits(inst, sol)
    while True:
        moves = improving_moves(inst, plain, electric=False)
        if not moves:
            return best, plain, False
        plain = apply_move(plain, min(moves, key=lambda m: m.sort_key()))
        routes = [insert(Route(v)) for v in plain]
        if any(r is None for r in routes):
            return best, plain, True
        cand = Solution.build(inst, routes)
        if cand.tc < best.tc - 1e-9:
            best = cand


@pytest.mark.parametrize("seed", range(20))
def test_als_never_increases_cost_and_stays_feasible(seed):
    inst, rk, sol = start(seed)
    out = als(inst, sol, inserter(inst, rk))
    assert out.tc <= sol.tc + 1e-9
    assert check_feasibility(inst, out).feasible


@pytest.mark.parametrize("seed", range(12))
def test_als_matches_brute_force_replay(seed):
    inst, rk, sol = start(seed, M=8)
    out = als(inst, sol, inserter(inst, rk))
    expect, final_plain, blocked = replay_als(inst, sol, inserter(inst, rk))
    assert out.signature() == expect.signature()
    if not blocked:
        # the walk ended in a non-electric local optimum
        assert improving_moves(inst, final_plain, electric=False) == []


def test_als_leaves_local_optimum_unchanged():
    inst, rk, sol = start(6)
    _, plain, blocked = replay_als(inst, sol, inserter(inst, rk))
    assert not blocked
    ins = inserter(inst, rk)
    local = Solution.build(inst, [ins(Route(v)) for v in plain])
    assert als(inst, local, inserter(inst, rk)) is local


@pytest.mark.parametrize("seed", range(20))
def test_cls_reaches_electric_local_optimum(seed):
    inst, rk, sol = start(seed, M=6)
    out = cls(inst, sol)
    assert out.tc <= sol.tc + 1e-9
    assert check_feasibility(inst, out).feasible
    if out is not sol:
        assert improving_moves(inst, [r.visits for r in out.routes], electric=True) == []


def test_cls_on_local_optimum_returns_input():
    inst, rk, sol = start(5, M=6)
    out = cls(inst, sol)
    assert cls(inst, out) is out


@pytest.mark.parametrize("seed", range(15))
def test_cdns_full_mode_is_monotone_and_feasible(seed):
    inst, rk, sol = start(seed, M=8, battery_tightness=0.6)
    out = cdns(inst, sol, SearchMode.FULL, inserter(inst, rk))
    assert out.tc <= sol.tc + 1e-9
    rep = check_feasibility(inst, out)
    assert rep.feasible, rep.summary()


@pytest.mark.parametrize("seed", range(10))
def test_large_scale_mode_is_als(seed):
    inst, rk, sol = start(seed)
    a = cdns(inst, sol, SearchMode.LARGE_SCALE, inserter(inst, rk))
    b = als(inst, sol, inserter(inst, rk))
    assert a.signature() == b.signature()


@pytest.mark.parametrize("seed", range(10))
def test_cdns_twice_keeps_cost(seed):
    inst, rk, sol = start(seed)
    once = cdns(inst, sol, SearchMode.FULL, inserter(inst, rk))
    twice = cdns(inst, once, SearchMode.FULL, inserter(inst, rk))
    assert twice.tc == pytest.approx(once.tc, abs=1e-9)


def test_expired_deadline_returns_input():
    inst, rk, sol = start(1)
    assert cdns(inst, sol, SearchMode.FULL, inserter(inst, rk), deadline=0.0) is sol
