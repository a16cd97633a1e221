import filecmp
import json
import math
from importlib import resources
from pathlib import Path

import pytest

from rgsde.cli import main
from rgsde.config import parse_config
from rgsde.errors import ConfigError

CONFIGS = resources.files("rgsde") / "configs"

SMALL = """
[run]
n_paths = 2
master_seed = 5

[volatility]
sigma_lo_sq = 0.25
sigma_hi_sq = 1.0

[grid]
n_steps = 32

[coefficients]
family = linear
f_a = 0.2
f_c = -1
g_a = 0.4

[solver]
x0 = 0.0
oracle_check = true

[controls]
family = constant
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.fixture(autouse=True)
def _no_env_cache(monkeypatch):
    monkeypatch.delenv("RGSDE_CACHE_DIR", raising=False)


def test_simulate_writes_files_and_manifest(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    out = json.loads(capsys.readouterr().out)
    d = Path(out["cache_dir"])
    assert len(list(d.glob("*.csv"))) == 4 and (d / "manifest.json").exists()
    before = {f.name: f.read_bytes() for f in d.iterdir()}
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert before == {f.name: f.read_bytes() for f in d.iterdir()}


def test_env_cache_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("RGSDE_CACHE_DIR", str(tmp_path / "shared"))
    assert main(["simulate", "--config", str(write(tmp_path, SMALL)), "--out", str(tmp_path / "o")]) == 0
    assert str(tmp_path / "shared") in capsys.readouterr().out


def test_stale_manifest_forces_regeneration(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")])
    d = Path(json.loads(capsys.readouterr().out)["cache_dir"])
    m = json.loads((d / "manifest.json").read_text())
    m["hash"] = "0" * 64
    (d / "manifest.json").write_text(json.dumps(m))
    f = d / "c000_s000000.csv"
    good = f.read_bytes()
    f.write_text("garbage")
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert f.read_bytes() == good


def test_invalid_bounds_rejected_before_output(tmp_path, capsys):
    cfg = write(tmp_path, SMALL.replace("sigma_lo_sq = 0.25", "sigma_lo_sq = 2.0"))
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert "line" in capsys.readouterr().err


def test_unknown_key_has_line_number(tmp_path):
    text = SMALL.replace("f_c = -1", "f_cc = -1")
    with pytest.raises(ConfigError) as ei:
        parse_config(text)
    assert ei.value.line == text.splitlines().index("f_cc = -1") + 1
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config(SMALL + "\n[extra]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(SMALL.replace("n_steps = 32", "n_steps = 32\nnsteps = 3"))
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(SMALL.replace("n_steps = 32", "n_steps = 3.5"))


def test_obstacle_above_start_rejected(tmp_path, capsys):
    cfg = write(tmp_path, SMALL + "\n[obstacle]\nvalue = 1.0\n")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "obstacle-violation" in err and "x0" in err


def test_zero_dynamics_solve(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", "--config", str(CONFIGS / "zero.ini"), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_failed"] == 0
    for f in (out / "solutions").glob("*.csv"):
        rows = [line.split(",") for line in f.read_text().splitlines()[1:]]
        assert all(float(r[1]) == 0.5 and float(r[2]) == 0.0 for r in rows)


def test_resistance_solve(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", "--config", str(CONFIGS / "resistance.ini"), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert all(abs(s["K_T"] - (math.e - 1)) <= 5e-4 for s in summary["scenarios"])


def test_expect_constant_and_b2(tmp_path):
    cfg = write(tmp_path, SMALL + "\n[expect]\nfunctional = constant\nc = 1.25\n")
    assert main(["expect", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "expect.json").read_text())["value"] == 1.25
    assert main(["expect", "--config", str(CONFIGS / "expect_b2.ini"), "--out", str(tmp_path / "b")]) == 0
    rep = json.loads((tmp_path / "b" / "expect.json").read_text())
    hi = next(c for c in rep["controls"] if c["label"] == rep["argmax_control"])
    assert rep["argmax_control"] == "const:hi" and abs(rep["value"] - 1) <= 3 * hi["stderr"]


def test_expect_unknown_functional(tmp_path):
    cfg = write(tmp_path, SMALL + "\n[expect]\nfunctional = nope\n")
    assert main(["expect", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_check_default_suite_passes(tmp_path):
    out = tmp_path / "o"
    assert main(["check", "--config", str(CONFIGS / "check.ini"), "--out", str(out)]) == 0
    rep = json.loads((out / "check.json").read_text())
    assert rep["passed"] and all(s["passed"] for s in rep["suites"])


COMPARE = SMALL + """
[comparison {name}]
profile = thm37_general
coefficients1 = sinusoidal: f_a={f1}, g_a=1, g_s=0.1
coefficients2 = sinusoidal: f_a={f2}, g_a=1, g_s=0.1
obstacle1 = constant -1
obstacle2 = constant -1
"""


def test_check_misordered_drifts_fail(tmp_path, capsys):
    cfg = write(tmp_path, COMPARE.format(name="bad", f1=1, f2=-1))
    out = tmp_path / "o"
    assert main(["check", "--config", str(cfg), "--out", str(out)]) == 4
    rep = json.loads((out / "check.json").read_text())
    assert rep["suites"][0]["error"] == "ill-posed-case"
    assert rep["suites"][0]["probe"] == "f_order_at_zero"


def test_check_identical_problems(tmp_path):
    cfg = write(tmp_path, COMPARE.format(name="same", f1=0.5, f2=0.5))
    assert main(["check", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "check.json").read_text())
    assert rep["suites"][0]["max_violation"] == 0.0


def test_check_without_suites_is_config_error(tmp_path):
    assert main(["check", "--config", str(write(tmp_path, SMALL)), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_refine(tmp_path):
    out = tmp_path / "o"
    cfg = write(tmp_path, SMALL + "\n[refine]\nlevels = 3\ncontrol = 1\nn_paths = 8\n")
    assert main(["refine", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "refine.json").read_text())
    assert rep["n_steps"] == [32, 64, 128] and rep["control"] == "const:hi"
    bad = write(tmp_path, SMALL + "\n[refine]\nlevels = 1\n", "bad.ini")
    assert main(["refine", "--config", str(bad), "--out", str(tmp_path / "p")]) == 2


def test_seed_override_changes_output(tmp_path):
    cfg = write(tmp_path, SMALL)
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["solve", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "6"])
    a = json.loads((tmp_path / "a" / "summary.json").read_text())
    b = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert b["master_seed"] == 6 and a["scenarios"][0]["X_T"] != b["scenarios"][0]["X_T"]


def test_non_convergence_reported_per_scenario(tmp_path):
    cfg = write(tmp_path, SMALL.replace("oracle_check = true", "max_picard = 2"))
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 3
    summary = json.loads((out / "summary.json").read_text())
    failed = [s for s in summary["scenarios"] if s["status"] == "failed"]
    assert summary["n_failed"] == len(failed) >= 1
    assert all("Picard" in s["error"] for s in failed)
    ok = [s for s in summary["scenarios"] if s["status"] == "ok"]
    assert len(list((out / "solutions").glob("*.csv"))) == len(ok)


def _tree_equal(a: Path, b: Path) -> bool:
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(_tree_equal(a / d, b / d) for d in cmp.common_dirs)


@pytest.mark.parametrize("command", ["simulate", "solve", "expect", "refine"])
def test_byte_identical_across_jobs(tmp_path, command, capsys):
    cfg = CONFIGS / "default.ini"
    assert main([command, "--config", str(cfg), "--out", str(tmp_path / "a"), "--jobs", "1"]) == 0
    assert main([command, "--config", str(cfg), "--out", str(tmp_path / "b"), "--jobs", "3"]) == 0
    assert _tree_equal(tmp_path / "a", tmp_path / "b")
