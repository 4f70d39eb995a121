from __future__ import annotations

import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from hjbhomog import config as cfgmod
from hjbhomog.cli import SHIPPED_CONFIGS, run
from hjbhomog.errors import InvalidInputError

ROOT = Path(__file__).resolve().parents[1]
EX12 = SHIPPED_CONFIGS / "example_1_2.toml"
EX14 = SHIPPED_CONFIGS / "example_1_4.toml"


def _run(capsys, *argv):
    code = run([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, json.loads(out)


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


BASE = """
seed = 7
[problem]
dim = 1
family = "eikonal"
x = [0.0]
[problem.potential]
kind = "trig"
offset = 2.0
components = [[[0, 1, 1.0, 0.0]]]
"""


# --- configuration ------------------------------------------------------------


@pytest.mark.parametrize("path", sorted(SHIPPED_CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = cfgmod.load(path)
    assert cfg.dim == 1
    assert cfg.seed == 20240601


def test_top_level_configs_mirror_the_package():
    names = sorted(p.name for p in (ROOT / "configs").glob("*.toml"))
    assert names == sorted(p.name for p in SHIPPED_CONFIGS.glob("*.toml"))


def test_unknown_key_rejected_with_pointer():
    with pytest.raises(InvalidInputError) as info:
        cfgmod.load_text(BASE + "[solver]\ncells = 32\nspeed = 3\n")
    assert info.value.pointer == "/solver/speed"


def test_non_positive_discount_rejected_with_pointer():
    with pytest.raises(InvalidInputError) as info:
        cfgmod.load_text(BASE + "[solver]\nlambda_min = 0.0\n")
    assert info.value.pointer == "/solver/lambda_min"


def test_semantic_checks():
    with pytest.raises(InvalidInputError):
        cfgmod.load_text(BASE.replace("x = [0.0]", "x = [0.0, 1.0]"))
    with pytest.raises(InvalidInputError):
        cfgmod.load_text(BASE + "[homogenize]\neps_schedule = [0.1, 0.2]\n")
    with pytest.raises(InvalidInputError):
        cfgmod.load_text(BASE + "[homogenize]\nmu = 1.0\nhorizon = 0.5\n")


def test_ratio_strings():
    assert cfgmod.parse_value("sqrt(2)") == pytest.approx(2**0.5)
    assert str(cfgmod.parse_value("1/2")) == "1/2"


def test_overrides_revalidate():
    cfg = cfgmod.load_text(BASE)
    assert cfg.with_overrides(solver__cells=64).section("solver")["cells"] == 64
    with pytest.raises(InvalidInputError):
        cfg.with_overrides(solver__cells=4)


# --- commands -----------------------------------------------------------------


def test_invalid_discount_exits_one_with_pointer(capsys, tmp_path):
    code, out = _run(capsys, "cell", _write(tmp_path, BASE + "[solver]\nlambda_min = -1.0\n"))
    assert code == 1
    assert out["error"]["pointer"] == "/solver/lambda_min"


def test_flag_override_is_validated(capsys):
    code, out = _run(capsys, "cell", EX12, "--lambda-min", "0")
    assert code == 1
    assert out["error"]["pointer"] == "/solver/lambda_min"


def test_missing_config_exits_one(capsys, tmp_path):
    code, out = _run(capsys, "cell", tmp_path / "absent.toml")
    assert code == 1
    assert out["error"]["type"] == "InvalidInputError"


def test_resonant_scales_report(capsys, tmp_path):
    text = BASE.replace('components = [[[0, 1, 1.0, 0.0]]]', 'components = [[[0, 1, 0.5, 0.0]], [[0, 1, 0.5, 0.0]]]')
    text += '[problem.scales]\ngamma = [[1], ["1/2"]]\n'
    code, out = _run(capsys, "resonance", _write(tmp_path, text))
    assert code == 0
    assert out["result"]["report"]["resonant"] == [True]
    assert out["seed"] == 7


def test_resonance_budget_exits_four(capsys, tmp_path):
    text = BASE.replace('components = [[[0, 1, 1.0, 0.0]]]',
                        'components = [[[0, 1, 0.5, 0.0]], [[0, 1, 0.5, 0.0]], [[0, 1, 0.5, 0.0]]]')
    text += '[problem.scales]\ngamma = [[1], ["sqrt(2)"], ["sqrt(3)"]]\n[resonance]\nbudget = 100\n'
    code, out = _run(capsys, "resonance", _write(tmp_path, text))
    assert code == 4
    assert out["error"]["type"] == "BudgetExceededError"


def test_non_convergence_exits_two(capsys, tmp_path):
    text = BASE.replace('family = "eikonal"', 'family = "quadratic"') + "[solver]\nmax_iter = 1\np = [1.0]\n"
    code, out = _run(capsys, "cell", _write(tmp_path, text))
    assert code == 2
    assert out["error"]["residual"] > 0


def test_cell_writes_index_csv(capsys, tmp_path):
    code, out = _run(capsys, "cell", EX12, "--grid", "64", "--out", tmp_path)
    assert code == 0
    assert out["result"]["effective_value"] == pytest.approx(-1.0, abs=3e-2)
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "i1,w"
    assert len(lines) == 65


def test_table_for_compact_well(capsys, tmp_path):
    code, out = _run(capsys, "table", EX14, "--out", tmp_path)
    assert code == 0
    assert out["result"]["properties"]["passed"]
    assert (tmp_path / "table.csv").exists() and (tmp_path / "table.json").exists()


def test_average_rest_at_minimum(capsys):
    code, out = _run(capsys, "average", EX12)
    assert code == 0
    assert out["result"]["effective_value_estimate"] == pytest.approx(-1.0, abs=1e-9)


def test_homogenize_report(capsys, tmp_path):
    report = tmp_path / "rep.json"
    code, out = _run(capsys, "homogenize", EX12, "--eps-schedule", "0.25,0.125", "--report", report)
    assert code == 0
    assert json.loads(report.read_text()) == out["result"]
    assert out["result"]["mode"] == "stationary"


def test_verify_reports_failed_criterion(capsys):
    code, out = _run(capsys, "verify", "--criteria", "8")
    assert code == 3
    assert out["criteria"][0]["number"] == 8 and not out["passed"]


def _cli(args, env_extra, cwd):
    env = dict(os.environ, **env_extra)
    return subprocess.run([sys.executable, "-W", "ignore", "-m", "hjbhomog.cli", *args], capture_output=True,
                          text=True, env=env, cwd=cwd, check=False)


def test_outputs_are_byte_identical_across_runs_and_threads(tmp_path):
    outs = []
    for k, threads in enumerate(("1", "4", "4")):
        d = tmp_path / "out"
        res = _cli(["cell", str(EX12), "--grid", "64", "--out", str(d)], {"NUMBA_NUM_THREADS": threads}, tmp_path)
        assert res.returncode == 0, res.stderr
        outs.append((res.stdout, (d / "w.csv").read_bytes(), (d / "cell.json").read_bytes()))
    assert outs[0] == outs[1] == outs[2]
