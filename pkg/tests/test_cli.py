import json

import numpy as np
import pytest

from marginprune import cli
from marginprune.dataset import load_bundled, save_csv
from marginprune.ensemble import Ensemble


@pytest.fixture
def bc_csv(tmp_path):
    # a labelled CSV with string classes, like the raw file a user would pass
    d = load_bundled("BC")
    path = tmp_path / "bc.csv"
    save_csv(d, path, label_name="diagnosis")
    text = path.read_text().splitlines()
    out = [text[0]] + [line.rsplit(",", 1)[0] + ("," + ("M" if line.endswith(",1") else "B"))
                       for line in text[1:]]
    path.write_text("\n".join(out) + "\n")
    return path


def test_train_writes_manifest_and_trees(tmp_path, bc_csv):
    out = tmp_path / "ens"
    rc = cli.main(["train", "--data", str(bc_csv), "--label", "diagnosis", "--positive", "M",
                   "--kind", "adaboost", "--trees", "20", "--depth", "2", "--seed", "7",
                   "--out", str(out)])
    assert rc == 0
    assert len(list(out.glob("tree_*.json"))) == 20
    assert json.loads((out / "manifest.json").read_text())["T"] == 20


def test_missing_file_exit_code(tmp_path, capsys):
    rc = cli.main(["train", "--data", str(tmp_path / "none.csv"), "--label", "y", "--positive", "1"])
    assert rc == 2
    assert "MissingFile" in capsys.readouterr().err


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        cli.main(["train"])
    assert exc.value.code == 2


def test_rf_full_depth_uniform(tmp_path):
    out = tmp_path / "rf"
    assert cli.main(["train", "--data", "synth:200:5", "--kind", "rf", "--trees", "15",
                     "--depth", "full", "--out", str(out)]) == 0
    e = Ensemble.load(out)
    assert np.allclose(e.alpha, 1 / 15)


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
    assert cli.main(["train", "--data", "synth:100:0", "--trees", "3"]) == 0
    assert (tmp_path / "envout" / "ensemble" / "manifest.json").exists()


@pytest.fixture
def trained(tmp_path):
    out = tmp_path / "ens"
    cli.main(["train", "--data", "bundled:BC", "--trees", "50", "--depth", "2", "--out", str(out)])
    return out


def test_prune_methods(tmp_path, trained, capsys):
    rc = cli.main(["prune", "--ensemble", str(trained), "--method", "qmm",
                   "--upsilon-ladder", "0.5,0.25,0.05,0.01", "--out", str(tmp_path / "q")])
    assert rc == 0
    res = json.loads((tmp_path / "q" / "result.json").read_text())
    assert res["upsilon_used"] in (0.5, 0.25, 0.05, 0.01)
    summary = (tmp_path / "q" / "summary.txt").read_text()
    for key in ("survivors", "pruning_rate", "train_error", "test_error", "diversity"):
        assert key in summary

    assert cli.main(["prune", "--ensemble", str(trained), "--method", "kappa",
                     "--keep-fraction", "0.2", "--out", str(tmp_path / "k")]) == 0
    res = json.loads((tmp_path / "k" / "result.json").read_text())
    assert len(res["survivors"]) == 10

    assert cli.main(["prune", "--ensemble", str(trained), "--method", "qmm", "--upsilon", "emargin",
                     "--hyp-thresholds", "100", "--out", str(tmp_path / "e")]) == 0
    res = json.loads((tmp_path / "e" / "result.json").read_text())
    assert res["upsilon_used"] is not None


def test_prune_dimension_mismatch(tmp_path, trained):
    rc = cli.main(["prune", "--ensemble", str(trained), "--data", "synth:50:0"])
    assert rc == 2


def write_config(path, **extra):
    lines = {"data": "synth:150:5", "kinds": "adaboost", "checkpoints": "5, 10, 20",
             "depth": "1", "methods": "full, qmm", "seeds": "0"}
    lines.update(extra)
    path.write_text("# test sweep\n" + "\n".join(f"{k} = {v}" for k, v in lines.items()) + "\n")
    return path


def test_sweep_rows_and_files(tmp_path):
    cfg = write_config(tmp_path / "s.cfg", sweep_checkpoints="20")
    assert cli.main(["sweep", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "results.csv").read_text().splitlines()
    assert rows[0] == ",".join(cli.RESULT_HEADER)
    assert len(rows) == 7
    assert len(list((tmp_path / "o").glob("cmd_*.csv"))) == 6
    sweep = (tmp_path / "o" / "upsilon_sweep_adaboost_seed0_T20.csv").read_text().splitlines()
    assert len(sweep) == 101
    for line in rows[1:]:
        r = dict(zip(cli.RESULT_HEADER, line.split(",")))
        assert float(r["pruning_rate"]) == pytest.approx(1 - int(r["survivors"]) / int(r["T"]), abs=1e-6)


def test_sweep_is_deterministic(tmp_path):
    cfg = write_config(tmp_path / "s.cfg", seeds="0, 1", methods="full, qmm, drep, kappa")
    cli.main(["sweep", str(cfg), "--out", str(tmp_path / "a")])
    cli.main(["sweep", str(cfg), "--out", str(tmp_path / "b"), "--workers", "2"])
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_bad_config(tmp_path):
    cfg = write_config(tmp_path / "s.cfg", checkpoints="20, 10")
    assert cli.main(["sweep", str(cfg)]) == 2
    cfg = write_config(tmp_path / "t.cfg", colour="red")
    assert cli.main(["sweep", str(cfg)]) == 2
    assert cli.main(["sweep", str(tmp_path / "nothing.cfg")]) == 2


def test_sweep_survives_failing_cells(tmp_path, monkeypatch):
    real = cli.run_method

    def broken(method, *a, **kw):
        if method == "kappa":
            raise RuntimeError("boom")
        return real(method, *a, **kw)

    monkeypatch.setattr(cli, "run_method", broken)
    cfg = write_config(tmp_path / "s.cfg", methods="full, qmm, kappa")
    assert cli.main(["sweep", str(cfg), "--out", str(tmp_path / "o")]) == 1
    rows = (tmp_path / "o" / "results.csv").read_text().splitlines()[1:]
    assert len(rows) == 6
    assert {r.split(",")[3] for r in rows} == {"full", "qmm"}


def test_sweep_survives_failed_training(tmp_path, monkeypatch):
    real = cli.train_ensemble

    def broken(train, kind, *a):
        if kind == "rf":
            raise RuntimeError("no trees")
        return real(train, kind, *a)

    monkeypatch.setattr(cli, "train_ensemble", broken)
    cfg = write_config(tmp_path / "s.cfg", kinds="adaboost, rf")
    assert cli.main(["sweep", str(cfg), "--out", str(tmp_path / "o")]) == 1
    rows = (tmp_path / "o" / "results.csv").read_text().splitlines()[1:]
    assert len(rows) == 6 and all(r.startswith("adaboost") for r in rows)
