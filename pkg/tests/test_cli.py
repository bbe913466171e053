import json
from pathlib import Path

import pytest

from spikehom.cli import main

from conftest import config


def small_config(tmp_path, name="two_label", nt=24, nx=24, **extra):
    cfg = config(name)
    cfg["grid"].update(nt=nt, nx=nx)
    cfg.update(extra)
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(cfg), encoding="utf-8")
    return str(p)


def run(tmp_path, *argv, out="out"):
    out_dir = tmp_path / out
    code = main(list(argv) + ["--out", str(out_dir)])
    return code, out_dir


def outputs(out_dir):
    return {p.name: p.read_bytes() for p in sorted(Path(out_dir).iterdir()) if p.name != "manifest.json"}


def test_validate_ok(tmp_path):
    code, out = run(tmp_path, "validate", "--config", small_config(tmp_path), "--samples", "32")
    assert code == 0
    assert json.loads((out / "validation.json").read_text())["passed"] is True
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "validate" and man["status"] == "ok"


def test_validate_failure_exit_1(tmp_path):
    cfg = small_config(tmp_path, Lambda=1.5)
    assert run(tmp_path, "validate", "--config", cfg)[0] == 1


def test_missing_config_exit_2(tmp_path, capsys):
    code, _ = run(tmp_path, "solve", "--config", str(tmp_path / "missing.json"))
    assert code == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "missing.json" in err[0]


def test_config_required(tmp_path):
    assert run(tmp_path, "solve")[0] == 2


def test_bad_arguments_exit_2(tmp_path):
    assert main(["spike", "--config", "x.json", "--delta", "0.5", "--eps-list", "a,b"]) == 2
    assert main(["no-such-command"]) == 2


def test_bad_expression_exit_2(tmp_path):
    cfg = config("two_label")
    cfg["controls"][0]["f"] = "1 + q"
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(cfg))
    assert run(tmp_path, "solve", "--config", str(p))[0] == 2


def test_solver_failure_exit_3(tmp_path):
    cfg = config("two_label")
    cfg["grid"].update(nt=4, nx=10)
    cfg["controls"] = [{"name": "a", "A": "1", "f": "z^2", "f0": "0"}]
    cfg["z0"] = "50*sin(3.141592653589793*x)"
    cfg["M"] = 1e9
    cfg["Lambda"] = 1.0
    cfg.pop("control_fields")
    p = tmp_path / "blow.json"
    p.write_text(json.dumps(cfg))
    assert run(tmp_path, "solve", "--config", str(p))[0] == 3


def test_dry_run_writes_nothing(tmp_path, capsys):
    code, out = run(tmp_path, "solve", "--config", small_config(tmp_path), "--dry-run")
    assert code == 0 and not out.exists()
    assert json.loads(capsys.readouterr().out)["status"] == "dry-run"


@pytest.mark.parametrize("argv,files", [
    (["solve"], {"state.csv", "state.json"}),
    (["adjoint"], {"state.csv", "adjoint.csv"}),
    (["variational"], {"variational.csv"}),
    (["homogenize", "--delta", "0.3"], {"Q.csv", "homogenize.json"}),
    (["delta-sweep", "--delta-list", "0.1,0.05"], {"delta_sweep.csv", "delta_sweep.json"}),
])
def test_subcommands_and_determinism(tmp_path, argv, files):
    cfg = small_config(tmp_path)
    c1, o1 = run(tmp_path, *argv, "--config", cfg, out="a")
    c2, o2 = run(tmp_path, *argv, "--config", cfg, out="b")
    assert c1 == c2 == 0
    got = outputs(o1)
    assert files <= set(got)
    assert got == outputs(o2)


def test_spike_command(tmp_path):
    cfg = small_config(tmp_path, "laminate", nt=80, nx=80)
    code, out = run(tmp_path, "spike", "--config", cfg, "--delta", "0.5", "--eps-list", "0.2,0.1",
                    "--threads", "2")
    assert code == 0
    rep = json.loads((out / "spike_sweep.json").read_text())
    assert rep["values"] == [0.2, 0.1]


def test_certify_three_rows(tmp_path, capsys):
    code, out = run(tmp_path, "certify-lemma22", "--delta-list", "0.2,0.1,0.05", "--cell-grid", "32")
    assert code == 0
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("delta=")]
    assert len(lines) == 3 and all("pass=True" in ln for ln in lines)
    data = json.loads((out / "certify.json").read_text())
    assert data["all_pass"] and len(data["reports"]) == 3


def test_certify_with_config_checkerboard(tmp_path):
    code, out = run(tmp_path, "certify-lemma22", "--config", small_config(tmp_path, "checkerboard"),
                    "--delta-list", "0.1", "--cell-grid", "32")
    assert code == 0


def test_certify_seed_is_deterministic(tmp_path):
    args = ["certify-lemma22", "--delta-list", "0.1", "--specs", "2", "--seed", "5", "--cell-grid", "32"]
    _, a = run(tmp_path, *args, out="a")
    _, b = run(tmp_path, *args, out="b")
    assert outputs(a) == outputs(b)


def test_certify_rejects_bad_delta(tmp_path):
    assert run(tmp_path, "certify-lemma22", "--delta-list", "1.5")[0] == 2


def test_verify_maxcond_and_optimize(tmp_path):
    cfg = small_config(tmp_path, "affine_8x8", nt=8, nx=8)
    code, _ = run(tmp_path, "verify-maxcond", "--config", cfg, out="before")
    assert code == 1  # the all-off control is not optimal
    code, out = run(tmp_path, "optimize", "--config", cfg, out="opt")
    assert code == 0
    result = json.loads((out / "optimize.json").read_text())
    assert result["status"] == "converged"
    assert (out / "control.csv").read_text().count("\n") == 65


def test_face_average_option_changes_state(tmp_path):
    cfg = small_config(tmp_path, "laminate", nt=20, nx=20)
    _, a = run(tmp_path, "solve", "--config", cfg, "--control", "u3", out="a")
    _, b = run(tmp_path, "solve", "--config", cfg, "--control", "u3", "--face-average", "arithmetic", out="b")
    # constant coefficients: both averages agree
    assert outputs(a)["state.csv"] == outputs(b)["state.csv"]
