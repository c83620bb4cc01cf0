import json
import subprocess
import sys

import pytest

from homogbd.data import DataError
from homogbd.operators import evaluate, SymMatrix
from homogbd.pipeline import (
    REGISTRY,
    ConfigError,
    ExperimentConfig,
    build_data,
    build_operator,
    list_experiments,
    main,
)


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return str(p)


def test_registry_has_twelve_experiments():
    assert len(REGISTRY) == 12
    assert [e.name for e in list_experiments("barriers")] == ["barrier-certificates"]
    assert list_experiments("no-such-tag") == []


def test_config_round_trip():
    for name in REGISTRY:
        cfg = ExperimentConfig.from_dict({"name": name})
        again = ExperimentConfig.from_json(cfg.to_json())
        assert again.to_dict() == cfg.to_dict()
        assert again.hash() == cfg.hash()


def test_hash_changes_with_content():
    a = ExperimentConfig.from_dict({"name": "barrier-certificates"})
    b = ExperimentConfig.from_dict({"name": "barrier-certificates", "seed": 1})
    assert a.hash() != b.hash()


@pytest.mark.parametrize("cfg,field", [
    ({"name": "prop3.4-shift", "operator": {"kind": "pucci_plus", "Lam": 2}}, "operator.lam"),
    ({"name": "prop3.4-shift", "colour": 1}, "unknown fields"),
    ({"name": "nope"}, "name"),
    ({}, "name"),
    ({"name": "prop3.4-shift", "grid": {"n_lattice": 4}}, "grid"),
    ({"name": "prop3.4-shift", "tolerances": {"shift": -1}}, "tolerances.shift"),
    ({"name": "prop3.4-shift", "tolerances": {"other": 1}}, "tolerances"),
    ({"name": "prop3.4-shift", "params": {"zz": 1}}, "params"),
    ({"name": "prop3.4-shift", "seed": "x"}, "seed"),
    ({"name": "prop3.4-shift", "data": {"mode": "sin", "k": [1, 0], "bad": 1}}, "data"),
    ({"name": "prop3.4-shift", "domain": {"kind": "sphere"}}, "domain"),
])
def test_config_errors_name_the_field(cfg, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        ExperimentConfig.from_dict(cfg)


def test_build_operator_kinds():
    M = SymMatrix.diag(1.0, -1.0)
    assert evaluate(build_operator({"kind": "heat"}), M) == pytest.approx(0.0)
    assert evaluate(build_operator({"kind": "pucci_plus", "lam": 1, "Lam": 2}), M) == pytest.approx(1.0)
    assert evaluate(build_operator({"kind": "linear_matrix", "matrix": [[2, 0.5], [0.5, 1]]}), M) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        build_operator({"kind": "unknown"})


def test_build_data_wraps_errors():
    assert build_data({"const": 2}, 2).mean() == 2.0
    with pytest.raises((ConfigError, DataError)):
        build_data({"mode": "sin"}, 2)


def test_cli_list(capsys):
    assert main(["list"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 13
    assert main(["list", "--tag", "barriers"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 2
    assert main(["list", "--tag", "none-such"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 1


def test_cli_config_errors_exit_2(tmp_path, capsys):
    bad = write(tmp_path, {"name": "prop3.4-shift", "operator": {"kind": "pucci_plus", "Lam": 2}})
    assert main(["--out", str(tmp_path), "run", bad]) == 2
    assert "operator.lam" in capsys.readouterr().err
    assert main(["--out", str(tmp_path), "run", write(tmp_path, "{not json", "b.json")]) == 2
    assert main(["--out", str(tmp_path), "run", str(tmp_path / "missing.json")]) == 2
    assert main(["--out", str(tmp_path), "repro", "no-such"]) == 2
    assert main(["--tol-scale", "0", "list"]) == 2


def test_cli_failure_exit_1(tmp_path):
    assert main(["--out", str(tmp_path), "--tol-scale", "1e-12", "repro", "barrier-certificates"]) == 1


def test_repro_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--out", str(a), "repro", "barrier-certificates"]) == 0
    assert main(["--out", str(b), "repro", "barrier-certificates"]) == 0
    (da,), (db,) = list(a.iterdir()), list(b.iterdir())
    assert da.name == db.name
    for f in ("summary.csv", "table.csv", "config.json"):
        assert (da / f).read_bytes() == (db / f).read_bytes()
    ra, rb = json.loads((da / "record.json").read_text()), json.loads((db / "record.json").read_text())
    for r in (ra, rb):
        r.pop("wall_clock")
        r.pop("timing")
    assert ra == rb
    header = (da / "summary.csv").read_text().splitlines()[0]
    assert header == "experiment,check,value,relation,threshold,passed"


def test_run_config_file_and_env_out(tmp_path, monkeypatch):
    monkeypatch.setenv("HOMOG_OUT", str(tmp_path / "env"))
    cfg = write(tmp_path, {"name": "barrier-certificates", "grid": {"samples": 100}})
    assert main(["run", cfg]) == 0
    (d,) = list((tmp_path / "env").iterdir())
    assert d.name.startswith("barrier-certificates-")
    saved = ExperimentConfig.from_json((d / "config.json").read_text())
    assert saved.grid["samples"] == 100


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "homogbd", "list", "--tag", "sweep"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "sweep-gamma2" in out.stdout and "sweep-bottom" in out.stdout
