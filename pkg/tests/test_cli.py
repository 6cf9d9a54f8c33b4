import json
import subprocess
import sys

import pytest

from gridshield.cli import bus_ranges, main, pct

TOY_CASE = """
name = "toy"

[grid]
source = "fixture:five_bus"

[planner]
budget = 1

[[attackers]]
id = "basic"
capability = "basic"
budget = 1
probability = 0.05

[[attackers]]
id = "advanced"
capability = "advanced"
budget = 1
probability = 0.02
"""


@pytest.fixture
def case_file(tmp_path):
    path = tmp_path / "toy.toml"
    path.write_text(TOY_CASE)
    return path


@pytest.mark.parametrize("value, text", [
    (100.285, "100.28"), (100.295, "100.30"), (0.125, "0.12"), (0.135, "0.14"),
    (157.354999, "157.35"), (2.0, "2.00"), (-0.004, "-0.00"),
])
def test_pct_rounds_half_even(value, text):
    assert pct(value) == text


@pytest.mark.parametrize("ids, text", [
    ([], "none"), ([3], "3"), ([1, 2, 3, 5], "1-3,5"), ([7, 1, 2, 9, 10], "1-2,7,9-10"),
])
def test_bus_ranges(ids, text):
    assert bus_ranges(ids) == text


def test_opf_on_a_toy(capsys, tmp_path):
    assert main(["opf", "--grid", "fixture:five_bus", "--out", str(tmp_path)]) == 0
    assert "base-case cost" in capsys.readouterr().out
    recs = [json.loads(x) for x in (tmp_path / "opf.jsonl").read_text().splitlines()]
    assert recs[0]["record"] == "opf"
    assert (tmp_path / "plan.toml").exists()


def test_solve_then_report(capsys, tmp_path, case_file):
    out = tmp_path / "run"
    assert main(["solve", "--case", str(case_file), "--out", str(out)]) == 0
    first = capsys.readouterr().out
    assert "converged" in first
    assert main(["report", "--out", str(out)]) == 0
    assert capsys.readouterr().out.strip() == first.strip()
    summary = json.loads((out / "summary.jsonl").read_text().splitlines()[0])
    assert abs(summary["total_pct"] - summary["reserve_dispatch_pct"] - summary["firewall_pct"]
               - summary["expected_pct"]) < 1e-9


def test_assess_with_a_saved_plan(capsys, tmp_path, case_file):
    assert main(["opf", "--case", str(case_file), "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    assert main(["assess", "--case", str(case_file), "--plan", str(tmp_path / "plan.toml"),
                 "--out", str(tmp_path)]) == 0
    recs = [json.loads(x) for x in (tmp_path / "assess.jsonl").read_text().splitlines()]
    assert [r["attacker"] for r in recs] == ["basic", "advanced"]


def test_oracle_subcommand_passes_on_a_toy(capsys, case_file):
    assert main(["oracle", "--case", str(case_file)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 3


def test_iteration_cap_exits_with_gap_code(case_file, capsys):
    assert main(["solve", "--case", str(case_file), "--max-iter", "1"]) == 2


@pytest.mark.parametrize("argv", [
    ["opf", "--grid", "no/such/file.m"],
    ["opf"],
    ["solve", "--case", "Z"],
    ["opf", "--grid", "fixture:nothing"],
    ["solve", "--grid", "fixture:five_bus", "--tolerance", "-1"],
    ["solve", "--case", "B", "--extra-scenarios", "-1"],
    ["opf", "--grid", "fixture:five_bus", "--format", "excel"],
    ["report", "--out", "/nonexistent/dir"],
])
def test_input_errors_exit_3(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        sys.exit(main(argv))
    assert exc.value.code == 3


def test_bad_plan_file_exits_3(tmp_path, case_file, capsys):
    plan = tmp_path / "plan.toml"
    plan.write_text('firewall = [1, 2, 3]\n[dispatch]\n"1" = 1000.0\n')
    assert main(["assess", "--case", str(case_file), "--plan", str(plan)]) == 3


def test_backend_error_exits_4(case_file, capsys):
    assert main(["assess", "--case", str(case_file), "--dual-bound-factor", "1e-4"]) == 4
    assert "dual_bound_factor" in capsys.readouterr().err


def test_solve_output_is_byte_stable(tmp_path, case_file):
    outs = []
    for k in range(2):
        d = tmp_path / f"r{k}"
        proc = subprocess.run([sys.executable, "-m", "gridshield", "solve", "--case",
                               str(case_file), "--out", str(d), "--seed", "3"],
                              capture_output=True, text=True, check=True)
        outs.append(((d / "summary.jsonl").read_bytes(), (d / "plan.toml").read_bytes(),
                     proc.stdout.split("\ntime:")[0]))
    assert outs[0] == outs[1]


def test_shipped_cases_parse(capsys):
    from gridshield.cli import _shipped_case
    from gridshield.threat import load_case_config
    for name in "ABCDEFGHI":
        cfg = load_case_config(_shipped_case(name))
        assert cfg.name == name and cfg.grid_source in ("case24", "case118")
