import json
import os

import pytest

from app.cli import apply_overrides, load_config, main, parse_overrides, parse_value
from app.errors import ConfigError


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def test_parse_value():
    assert parse_value("0.5") == 0.5
    assert parse_value("true") is True
    assert parse_value("2,4,8") == [2, 4, 8]
    assert parse_value("[1, 2]") == [1, 2]
    assert parse_value("ito") == "ito"


def test_parse_overrides():
    overrides = parse_overrides(["--plan.n_list", "2,4,8", "--grid.n-z=64", "--mc.scheme", "midpoint"])
    assert overrides == {"plan.n_list": [2, 4, 8], "grid.n_z": 64, "mc.scheme": "midpoint"}
    with pytest.raises(ConfigError):
        parse_overrides(["plan.t", "0.5"])
    with pytest.raises(ConfigError):
        parse_overrides(["--plan.t"])


def test_apply_overrides():
    data = apply_overrides({"plan": {"t": 0.5}}, {"plan.n_list": [2], "seed": 3, "grid.d": 2})
    assert data == {"plan": {"t": 0.5, "n_list": [2]}, "seed": 3, "grid": {"d": 2}}
    with pytest.raises(ConfigError):
        apply_overrides({"plan": 5}, {"plan.t": 0.1})


def test_load_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"kind": "heat", "plan": {"t": 0.1}}))
    cfg = load_config("walk", str(path), {"walk.paths": 50}, seed=9)
    assert cfg.kind == "walk"
    assert cfg.plan.t == 0.1
    assert cfg.walk.paths == 50
    assert cfg.seed == 9
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config("heat", str(path), {})
    with pytest.raises(ConfigError):
        load_config("heat", str(tmp_path / "missing.json"), {})


def test_verify_writes_artifacts_and_is_idempotent(tmp_path, capsys):
    out = tmp_path / "verify"
    assert main(["verify", "--out", str(out)]) == 0
    assert "[Verify]" in capsys.readouterr().out
    for name in ("verify.json", "config.json", "summary.json", "manifest.json"):
        assert (out / name).is_file()
    checks = read_json(out / "verify.json")
    assert all(c["passed"] for c in checks)
    manifest = read_json(out / "manifest.json")
    assert sorted(e["file"] for e in manifest) == ["config.json", "summary.json", "verify.json"]

    assert main(["verify", "--out", str(out)]) == 0
    assert read_json(out / "manifest.json") == manifest
    assert not [p for p in os.listdir(tmp_path) if p.startswith(".staging-")]


def test_invalid_config_exits_2_without_output(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"grid": {"n_z": 30}}))
    out = tmp_path / "heat"
    assert main(["heat", "--config", str(bad), "--out", str(out)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["type"] == "ValidationError"
    assert not out.exists()

    assert main(["heat", "--plan.bogus", "1", "--out", str(out)]) == 2
    assert main(["heat", "--threads", "0", "--out", str(out)]) == 2
    assert main(["heat", "--initial.center", "7,0,0", "--out", str(out)]) == 2
    assert not out.exists()
    assert not [p for p in os.listdir(tmp_path) if p.startswith(".staging-")]


def test_caustic_exits_3(tmp_path, capsys):
    out = tmp_path / "schrodinger"
    assert main(["schrodinger", "--plan.t", "0.5", "--out", str(out)]) == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["type"] == "CausticError"
    assert not out.exists()


def test_failed_run_keeps_previous_output(tmp_path):
    out = tmp_path / "run"
    assert main(["dump-kernel", "--out", str(out)]) == 0
    before = read_json(out / "manifest.json")
    assert main(["dump-kernel", "--kernel.t", "-1", "--out", str(out)]) == 2
    assert read_json(out / "manifest.json") == before


def test_dump_kernel(tmp_path):
    out = tmp_path / "kernel"
    assert main(["dump-kernel", "--kernel.alphas", "0,1", "--kernel.flavor", "schrodinger", "--out", str(out)]) == 0
    lines = (out / "kernel.csv").read_text().splitlines()
    assert lines[0] == "alpha,t,x,y,xp,yp,re,im"
    assert len(lines) == 1 + 2 * 3
    assert read_json(out / "summary.json")["flavor"] == "schrodinger"


def test_small_heat_run(tmp_path):
    out = tmp_path / "heat"
    argv = [
        "heat", "--out", str(out),
        "--grid.extent_z", "6", "--grid.n_z", "16", "--grid.n_s", "16",
        "--initial.widths", "[1.0]", "--plan.t", "0.1", "--plan.n_list", "2,4",
        "--plan.dump_fields", "false",
    ]
    assert main(argv) == 0
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0] == "n,method,l2_error_vs_oracle,norm_drift,boundary_mass"
    assert len(lines) == 3
    summary = read_json(out / "summary.json")
    assert summary["oracle"] == "mehler"
    assert summary["errors"][1] < summary["errors"][0]


def test_schema_command(tmp_path, capsys):
    assert main(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert "plan" in schema["properties"]
    target = tmp_path / "schema.json"
    assert main(["schema", "--out", str(target)]) == 0
    assert read_json(target) == schema


def test_shipped_schema_covers_the_config_model():
    from app.schemas import ExperimentConfig

    path = os.path.join(os.path.dirname(__file__), "..", "docs", "experiment_config.schema.json")
    shipped = read_json(path)
    live = ExperimentConfig.model_json_schema()
    assert set(shipped["properties"]) == set(live["properties"])
    for name, model in live["$defs"].items():
        assert set(shipped["$defs"][name]["properties"]) == set(model["properties"])
