import json

import pytest

from evrp_hma.cli import EXIT_CHECKSUM, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_OK, main
from evrp_hma.instance_io import generate_small, load_instance, read_solution, write_akb
from evrp_hma.model import check_feasibility


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "five.txt"
    assert main(["gen", "small", "--customers", "5", "--stations", "2", "--seed", "3", "--out", str(path)]) == 0
    return path


def solve(path, out, *extra):
    return main(["solve", str(path), "--seed", "1", "--time-limit", "5", "--out", str(out), *extra])


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


def test_solve_writes_a_feasible_solution_and_record(small, tmp_path, capsys):
    out = tmp_path / "s.json"
    assert solve(small, out) == EXIT_OK
    rec = last_json(capsys.readouterr().out)
    inst = load_instance(small)
    sol = read_solution(out.read_text(), inst)
    assert rec["feasible"] and rec["seed"] == 1
    assert rec["tc"] == pytest.approx(sol.tc, abs=1e-9)
    assert rec["tc"] <= rec["construction_tc"] + 1e-9
    assert {"time_to_best", "wall_time"} <= rec.keys()


def test_solve_same_seed_gives_identical_files(small, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert solve(small, a) == 0 and solve(small, b) == 0
    assert a.read_bytes() == b.read_bytes()


def test_solve_record_file_holds_the_log(small, tmp_path, capsys):
    rec_path = tmp_path / "run.json"
    assert solve(small, tmp_path / "s.json", "--record", str(rec_path)) == 0
    rec = json.loads(rec_path.read_text())
    costs = [entry[1] for entry in rec["log"]]  # (time, tc, k)
    assert costs == sorted(costs, reverse=True)
    assert last_json(capsys.readouterr().out)["log_file"] == str(rec_path)


def test_solve_missing_file_is_exit_2_with_json_error(tmp_path, capsys):
    assert main(["solve", str(tmp_path / "nope.txt")]) == EXIT_INPUT
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "missing_file"


def test_solve_garbage_file_is_a_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("this is not an instance\n")
    assert main(["solve", str(bad)]) == EXIT_INPUT
    assert json.loads(capsys.readouterr().err)["error"] == "parse_error"


def test_solve_unservable_instance_is_exit_1(tmp_path, capsys):
    inst = generate_small(0, M=2, P=1)
    nodes = list(inst.nodes)
    far = nodes[1]
    # the window closes before the vehicle could possibly get there
    nodes[1] = type(far)(**{**far.__dict__, "tw_open": 0.0, "tw_close": 1e-3})
    path = tmp_path / "dead.txt"
    path.write_text(write_akb(inst.replace(nodes=nodes)))
    assert main(["solve", str(path), "--time-limit", "2", "--out", str(tmp_path / "x.json")]) == EXIT_INFEASIBLE
    assert json.loads(capsys.readouterr().err)["error"] == "infeasible_instance"


@pytest.mark.parametrize("args", [
    ["--set", "G1"], ["--set", "nonsense=3"], ["--profile", "no_such_profile"], ["--set", "N=abc"],
])
def test_bad_parameters_are_exit_2(small, tmp_path, args):
    assert main(["solve", str(small), "--out", str(tmp_path / "s.json"), *args]) == EXIT_INPUT


def test_config_file_and_override(small, tmp_path, capsys):
    cfg = tmp_path / "p.cfg"
    cfg.write_text("# tiny run\nG1 = 3\nG2 = 2\nN = 4\nsr = 1\nomega1 = 0.2\nomega2 = 0.4\n")
    assert solve(small, tmp_path / "s.json", "--config", str(cfg), "--set", "G2=1") == 0
    assert last_json(capsys.readouterr().out)["feasible"]


def test_worker_env_var_must_be_an_integer(small, tmp_path, monkeypatch):
    monkeypatch.setenv("EVRP_HMA_WORKERS", "many")
    assert solve(small, tmp_path / "s.json") == EXIT_INPUT


# ---------------------------------------------------------------- validate

def test_validate_closes_the_loop(small, tmp_path, capsys):
    out = tmp_path / "s.json"
    solve(small, out)
    tc = last_json(capsys.readouterr().out)["tc"]
    assert main(["validate", str(small), str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert text.count(": ok") == 6 and "VIOLATED" not in text
    shown = float(next(l for l in text.splitlines() if l.startswith("TC ")).split()[1])
    assert shown == pytest.approx(tc, abs=0.01)


def test_validate_dropped_customer_is_a_coverage_failure(small, tmp_path, capsys):
    out = tmp_path / "s.json"
    solve(small, out)
    doc = json.loads(out.read_text())
    route = next(r for r in doc["routes"] if sum(v <= 5 and v > 0 for v in r["visits"]) >= 2)
    j = next(j for j, v in enumerate(route["visits"]) if 0 < v <= 5)
    del route["visits"][j], route["charges"][j]
    out.write_text(json.dumps(doc))
    capsys.readouterr()
    assert main(["validate", str(small), str(out)]) == EXIT_INFEASIBLE
    text = capsys.readouterr().out
    assert "(7) every customer served exactly once: VIOLATED" in text
    assert text.rstrip().endswith("infeasible")


def test_validate_charge_above_headroom_is_a_battery_failure(small, tmp_path, capsys):
    out = tmp_path / "s.json"
    solve(small, out)
    inst = load_instance(small)
    doc = json.loads(out.read_text())
    route = next(r for r in doc["routes"] if any(inst.is_station[v] for v in r["visits"]))
    j = next(j for j, v in enumerate(route["visits"]) if inst.is_station[v])
    route["charges"][j] = inst.Q * 1.5
    out.write_text(json.dumps(doc))
    capsys.readouterr()
    assert main(["validate", str(small), str(out)]) == EXIT_INFEASIBLE
    assert "(11) battery and charge amounts within bounds: VIOLATED" in capsys.readouterr().out


def test_validate_other_instance_is_exit_3(small, tmp_path, capsys):
    out = tmp_path / "s.json"
    solve(small, out)
    other = tmp_path / "other.txt"
    main(["gen", "small", "--customers", "5", "--stations", "2", "--seed", "4", "--out", str(other)])
    assert main(["validate", str(other), str(out)]) == EXIT_CHECKSUM
    assert json.loads(capsys.readouterr().err)["error"] == "checksum_mismatch"


def test_validate_missing_solution_is_exit_2(small, tmp_path):
    assert main(["validate", str(small), str(tmp_path / "none.json")]) == EXIT_INPUT


# ---------------------------------------------------------------- gen

def test_gen_is_deterministic_per_seed(tmp_path):
    for kind in ("small", "jd"):
        a, b = tmp_path / f"{kind}1.txt", tmp_path / f"{kind}2.txt"
        for p in (a, b):
            assert main(["gen", kind, "--customers", "8", "--stations", "3", "--seed", "5", "--out", str(p)]) == 0
        assert a.read_bytes() == b.read_bytes()
        inst = load_instance(a)
        assert (inst.M, inst.P) == (8, 3)


def test_gen_to_stdout(capsys):
    assert main(["gen", "jd", "--customers", "3", "--stations", "1", "--name", "tiny"]) == 0
    assert "NAME: tiny" in capsys.readouterr().out


def test_unknown_command_is_exit_2():
    assert main(["frobnicate"]) == EXIT_INPUT


def test_solved_generated_jd_instance_validates(tmp_path, capsys):
    path = tmp_path / "jd.txt"
    main(["gen", "jd", "--customers", "10", "--stations", "3", "--seed", "2", "--out", str(path)])
    out = tmp_path / "s.json"
    assert main(["solve", str(path), "--profile", "jd", "--time-limit", "5", "--out", str(out)]) == 0
    assert main(["validate", str(path), str(out)]) == 0
    inst = load_instance(path)
    assert check_feasibility(inst, read_solution(out.read_text(), inst)).feasible
