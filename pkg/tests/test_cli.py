"""Command-line harness: configs, runs, sweeps, exporters, shipped data."""

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from ccmqd.channels import channel_from_dict, verify_cptp
from ccmqd.cli import (
    LEDGER_COLUMNS,
    REPORT_COLUMNS,
    ConfigError,
    _parse_sweep,
    config_hash,
    main,
    resolve_sweep_path,
)
from ccmqd.training import config_from_dict, result_from_dict

BASE_CONFIG = {
    "schema_version": 1,
    "n_qubits": 1,
    "schedule": {"family": "haar_random", "length": 3, "n_ops": 3, "seed": 0},
    "l_b": 3,
    "k_b": 2,
    "loss": {"kind": "pc", "lambda": 0.02},
    "max_iters": 15,
    "seeds": [7],
}


def _write_config(tmp_path, name="config.json", **overrides):
    doc = json.loads(json.dumps(BASE_CONFIG))
    doc.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path, doc


def _run_dir(doc):
    cell = {
        k: v
        for k, v in doc.items()
        if k not in ("schema_version", "output_dir", "exports")
    }
    return config_hash(config_from_dict(cell))


def test_run_writes_result_and_ledger(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    path, doc = _write_config(tmp_path)
    assert main(["run", str(path)]) == 0
    out = tmp_path / "ccmqd_runs" / _run_dir(doc)
    payload = json.loads((out / "result.json").read_text())
    assert payload["schema_version"] == 1
    assert payload["config_hash"] == _run_dir(doc)
    res = result_from_dict(payload["result"])
    assert res.n_ok == 1
    assert 0.0 <= res.mean_fidelity <= 1.0
    with open(tmp_path / "ccmqd_runs" / "ledger.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert tuple(rows[0].keys()) == LEDGER_COLUMNS
    assert rows[0]["config_hash"] == _run_dir(doc)
    assert int(rows[0]["n_seeds"]) == 1
    assert float(rows[0]["mean_fidelity"]) == res.mean_fidelity


def test_run_respects_output_dir_and_appends_ledger(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    path, doc = _write_config(tmp_path, output_dir="elsewhere")
    assert main(["run", str(path)]) == 0
    assert main(["run", str(path)]) == 0
    assert (tmp_path / "elsewhere" / _run_dir(doc) / "result.json").exists()
    with open(tmp_path / "elsewhere" / "ledger.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2


def test_run_can_export_channels(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    path, doc = _write_config(tmp_path, exports={"channels": True})
    assert main(["run", str(path)]) == 0
    chan_path = tmp_path / "ccmqd_runs" / _run_dir(doc) / "channels_seed7.json"
    payload = json.loads(chan_path.read_text())
    chans = [channel_from_dict(c) for c in payload["channels"]]
    assert len(chans) == 3
    for ch in chans:
        assert verify_cptp(ch.kraus_ops()).passed


def test_run_partial_failure_exits_2(tmp_path, monkeypatch):
    import ccmqd.training as training_mod

    real = training_mod.train_hqto
    calls = {"n": 0}

    def flaky(traj, cfg, rng):
        calls["n"] += 1
        if calls["n"] == 1:
            raise RuntimeError("forced failure")
        return real(traj, cfg, rng)

    monkeypatch.setattr(training_mod, "train_hqto", flaky)
    monkeypatch.chdir(tmp_path)
    path, _ = _write_config(tmp_path, seeds=[7, 8])
    assert main(["run", str(path)]) == 2


@pytest.mark.parametrize(
    "mutation, fragment",
    [
        ({"bogus": 1}, "bogus"),
        ({"schema_version": 2}, "unsupported schema_version"),
        ({"schedule": {"family": "haar_random", "length": 3, "shape": 1}}, "shape"),
        ({"loss": {"kind": "pc", "weight": 1}}, "weight"),
        ({"exports": {"png": True}}, "png"),
        ({"output_dir": 7}, "output_dir"),
        ({"n_qubits": "remove"}, "n_qubits"),
        ({"schema_version": "remove"}, "schema_version"),
    ],
)
def test_run_config_errors_name_the_key(tmp_path, monkeypatch, capsys, mutation, fragment):
    monkeypatch.chdir(tmp_path)
    doc = json.loads(json.dumps(BASE_CONFIG))
    for key, value in mutation.items():
        if value == "remove":
            doc.pop(key, None)
        else:
            doc[key] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    assert main(["run", str(path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert fragment in err


def test_run_missing_file_and_bad_json(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(["run", str(tmp_path / "absent.json")]) == 1
    assert "not found" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert main(["run", str(bad)]) == 1
    assert "not valid JSON" in capsys.readouterr().err


def _sweep_doc(**kw):
    doc = {
        "schema_version": 1,
        "base": {
            "n_qubits": 1,
            "schedule": {"family": "haar_random", "length": 2, "n_ops": 3, "seed": 0},
            "l_b": 2,
            "k_b": 2,
            "loss": {"kind": "pc", "lambda": 0.02},
            "max_iters": 10,
            "seeds": [7],
        },
        "grid": {"lambda": [0.0, 0.02]},
    }
    doc.update(kw)
    return doc


def test_sweep_grid_runs_and_reports(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("CCMQD_THREADS", "1")
    path = tmp_path / "mini.sweep"
    path.write_text(json.dumps(_sweep_doc(output_dir="out")))
    assert main(["sweep", str(path)]) == 0
    with open(tmp_path / "out" / "report.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        assert tuple(reader.fieldnames) == REPORT_COLUMNS
        rows = list(reader)
    assert len(rows) == 2
    # grid cells enumerate in documented key order, here the lambda axis
    assert [r["strategy"] for r in rows] == ["hqto", "hqto+pc"]
    assert [r["lambda"] for r in rows] == ["0.0", "0.02"]
    assert all(r["status"] == "ok" for r in rows)
    with open(tmp_path / "out" / "ledger.csv", newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 2


def test_sweep_explicit_configs(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("CCMQD_THREADS", "1")
    cell = {
        "n_qubits": 1,
        "schedule": {"family": "haar_random", "length": 2, "n_ops": 3, "seed": 0},
        "l_b": 2,
        "k_b": 2,
        "loss": {"kind": "hqto"},
        "max_iters": 10,
        "seeds": [7],
    }
    doc = {"schema_version": 1, "configs": [cell], "output_dir": "out"}
    path = tmp_path / "one.sweep"
    path.write_text(json.dumps(doc))
    assert main(["sweep", str(path)]) == 0
    with open(tmp_path / "out" / "report.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert rows[0]["strategy"] == "hqto"


@pytest.mark.parametrize(
    "mutation, fragment",
    [
        ({"configs": []}, "configs"),
        ({"grid": {"bogus": [1]}}, "bogus"),
        ({"grid": {"strategy": ["bogus"]}}, "strategy"),
        ({"grid": {"qubits": []}}, "qubits"),
        ({"base": "remove", "grid": "remove"}, "configs"),
    ],
)
def test_sweep_config_errors(tmp_path, monkeypatch, capsys, mutation, fragment):
    monkeypatch.chdir(tmp_path)
    doc = _sweep_doc()
    for key, value in mutation.items():
        if value == "remove":
            doc.pop(key, None)
        else:
            doc[key] = value
    if "configs" in mutation:
        doc.pop("base", None)
        doc.pop("grid", None)
        doc["configs"] = mutation["configs"]
    path = tmp_path / "bad.sweep"
    path.write_text(json.dumps(doc))
    assert main(["sweep", str(path)]) == 1
    assert fragment in capsys.readouterr().err


def test_sweep_rejects_configs_plus_grid(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    doc = _sweep_doc()
    doc["configs"] = [dict(doc["base"])]
    path = tmp_path / "both.sweep"
    path.write_text(json.dumps(doc))
    assert main(["sweep", str(path)]) == 1
    assert "not both" in capsys.readouterr().err


def test_shipped_sweeps_resolve_and_parse():
    for name in ("table1", "table2", "table3", "table4", "table5"):
        path = resolve_sweep_path(name)
        assert path.endswith(f"{name}.sweep")
        assert Path(path).is_file()
        doc = json.loads(Path(path).read_text())
        cells = _parse_sweep(doc)
        assert cells
        for cfg in cells:
            assert cfg.n_qubits >= 1
    # a real path wins over fixture resolution
    assert resolve_sweep_path(__file__) == __file__


def _completed_run(tmp_path, monkeypatch, **overrides):
    monkeypatch.chdir(tmp_path)
    path, doc = _write_config(tmp_path, **overrides)
    code = main(["run", str(path)])
    base = Path(doc.get("output_dir", "ccmqd_runs"))
    return code, tmp_path / base / _run_dir(doc) / "result.json"


def test_export_bloch_roundtrip(tmp_path, monkeypatch):
    code, result = _completed_run(tmp_path, monkeypatch, max_iters=300, seeds=[7])
    assert code == 0
    assert main(["export-bloch", str(result), str(tmp_path / "b")]) == 0
    fwd = (tmp_path / "b_forward.csv").read_text().splitlines()
    bwd = (tmp_path / "b_backward.csv").read_text().splitlines()
    assert fwd[0] == "step,x,y,z,purity"
    assert bwd[0] == "step,x,y,z,purity"
    assert len(fwd) == 1 + 4  # header + L_f + 1 states
    assert len(bwd) == 1 + 4
    first = fwd[1].split(",")
    assert int(first[0]) == 0
    assert float(first[4]) == pytest.approx(1.0, abs=1e-12)

    # the reported reconstruction fidelity must be recomputable from the
    # exported Bloch vectors alone: F = (1 + a.b + sqrt((1-|a|^2)(1-|b|^2)))/2
    a = np.array([float(v) for v in fwd[1].split(",")[1:4]])
    b = np.array([float(v) for v in bwd[-1].split(",")[1:4]])
    gap_a = max(0.0, 1.0 - float(a @ a))
    gap_b = max(0.0, 1.0 - float(b @ b))
    f = 0.5 * (1.0 + float(a @ b) + np.sqrt(gap_a * gap_b))
    payload = json.loads(result.read_text())
    reported = payload["result"]["seeds"][0]["final_fidelity"]
    assert abs(f - reported) < 1e-9


def test_export_bloch_rejects_multiqubit(tmp_path, monkeypatch, capsys):
    code, result = _completed_run(
        tmp_path, monkeypatch, n_qubits=2, k_b=4, max_iters=10
    )
    assert code == 0
    assert main(["export-bloch", str(result), str(tmp_path / "b")]) == 1
    assert "1-qubit" in capsys.readouterr().err


def test_export_bloch_requires_stored_tracks(tmp_path, monkeypatch, capsys):
    code, result = _completed_run(
        tmp_path, monkeypatch, exports={"bloch": False}, max_iters=10
    )
    assert code == 0
    assert main(["export-bloch", str(result), str(tmp_path / "b")]) == 1
    assert "no trajectory data" in capsys.readouterr().err


def test_export_curves_matches_result(tmp_path, monkeypatch):
    code, result = _completed_run(tmp_path, monkeypatch, max_iters=40, seeds=[7, 8])
    assert code == 0
    out = tmp_path / "curves.csv"
    assert main(["export-curves", str(result), str(out)]) == 0
    with open(out, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    assert header == ["seed", "iter", "loss", "F_0", "F_1", "F_2", "F_3"]
    payload = json.loads(result.read_text())
    for seed_row in payload["result"]["seeds"]:
        seed_rows = [r for r in rows if int(r[0]) == seed_row["seed"]]
        assert [int(r[1]) for r in seed_rows] == list(range(1, len(seed_rows) + 1))
        assert float(seed_rows[-1][3]) == seed_row["final_fidelity"]
        assert len(seed_rows) == seed_row["iters"]


def test_export_curves_requires_stored_curves(tmp_path, monkeypatch, capsys):
    code, result = _completed_run(
        tmp_path, monkeypatch, exports={"curves": False}, max_iters=10
    )
    assert code == 0
    out = tmp_path / "curves.csv"
    assert main(["export-curves", str(result), str(out)]) == 1
    assert "no training curves" in capsys.readouterr().err
    assert not out.exists()


def test_export_rejects_non_result_file(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    path = tmp_path / "junk.json"
    path.write_text(json.dumps({"schema_version": 1}))
    assert main(["export-curves", str(path), str(tmp_path / "c.csv")]) == 1
    assert "not a result file" in capsys.readouterr().err


def test_corrupted_kraus_fixture_fails_completeness():
    with resources.files("ccmqd.fixtures").joinpath("corrupted_kraus.json").open() as fh:
        doc = json.load(fh)
    ch = channel_from_dict(doc["channel"])
    rep = verify_cptp(ch.kraus_ops())
    assert not rep.passed
    assert rep.defect == pytest.approx(np.sqrt(2.0), abs=1e-12)


def test_config_hash_is_stable_and_sensitive():
    cell = {
        k: v
        for k, v in BASE_CONFIG.items()
        if k not in ("schema_version", "output_dir", "exports")
    }
    cfg = config_from_dict(cell)
    again = config_from_dict(json.loads(json.dumps(cell)))
    assert config_hash(cfg) == config_hash(again)
    assert len(config_hash(cfg)) == 12
    bumped = dict(cell, max_iters=16)
    assert config_hash(config_from_dict(bumped)) != config_hash(cfg)
