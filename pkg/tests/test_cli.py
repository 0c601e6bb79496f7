import json
import math

import numpy as np
import pytest

from gpmdl import cli
from gpmdl.nets import NonFiniteLossError

SMALL_BOUNDS = {
    "mdl_over_n": {"start": 0.0, "stop": 0.5, "num": 11},
    "gen_errors": {"start": 0.01, "stop": 0.9, "num": 12},
    "hc_eps": {"start": 0.0, "stop": 0.2, "num": 9},
}

TINY = {
    "version": 1,
    "data": {"n": 60, "C": 2, "D": 4, "views": ["Light", "Light"], "separation": 4.0},
    "train": {"epochs": 2, "batch_size": 16, "latent_dim": 2, "hidden": [4], "n_components": 2,
              "init_factor": 2, "samples_test": 2},
    "runs": [
        {"name": "base", "regularizer": "none"},
        {"name": "gpm", "regularizer": "gpm_mdl", "lams": [0.01, 0.1]},
    ],
    "seeds": [0, 1],
}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def bounds_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bounds")
    cfg = cli.validate_bounds_config(dict(SMALL_BOUNDS))
    summary = cli.cmd_bounds(cfg, out)
    return out, summary


def test_bounds_outputs(bounds_dir):
    out, summary = bounds_dir
    for name in ("bounds_curve", "residual", "hc"):
        assert (out / f"{name}.csv").is_file()
        assert (out / f"{name}.svg").read_text().startswith("<svg")
    curves = cli.read_table(out / "bounds_curve.csv")
    assert len(curves["mdl_over_n"]) == 11
    assert curves["thm1_bound"][0] == pytest.approx(math.sqrt(12 / 50000), rel=1e-12)
    assert summary["thm1_at_zero_mdl"] == pytest.approx(math.sqrt(12 / 50000))
    for e in ("0.05", "0.01"):
        x = summary["crossover"][e]
        col = np.array(curves[f"thm2_gen_bound_emp_{e}"])
        beyond = np.array(curves["mdl_over_n"]) > x
        assert np.all(col[beyond] < np.array(curves["thm1_bound"])[beyond])
    res = cli.read_table(out / "residual.csv")
    assert np.all(np.array(res["residual"]) < np.array(res["gen_error"]) / 5)
    assert json.loads((out / "bounds_summary.json").read_text()) == summary


def test_bounds_are_deterministic(bounds_dir, tmp_path):
    out, _ = bounds_dir
    cli.cmd_bounds(cli.validate_bounds_config(dict(SMALL_BOUNDS)), tmp_path)
    for name in ("bounds_curve.csv", "residual.csv", "hc.csv", "bounds_curve.svg"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_bounds_log_base_changes_gap_bound(tmp_path):
    cfg = cli.validate_bounds_config(dict(SMALL_BOUNDS))
    mixed = cli.cmd_bounds(cfg, tmp_path / "m", "mixed")
    nats = cli.cmd_bounds(cfg, tmp_path / "n", "nats")
    assert mixed["crossover"] != nats["crossover"]


def test_read_table_reports_line(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b\n1.0,2.0\n1.0,x\n")
    with pytest.raises(ValueError, match=":3: bad value"):
        cli.read_table(path)
    path.write_text("a,b\n1.0\n")
    with pytest.raises(ValueError, match=":2: expected 2 columns"):
        cli.read_table(path)


@pytest.mark.parametrize(
    "raw,where",
    [
        ({"version": 2}, "version"),
        ({"n": "many"}, "n: expected int"),
        ({"mdl_over_n": {"start": 0.0, "stop": 1.0}}, "mdl_over_n.num: required"),
        ({"mdl_over_n": {"start": 0.0, "stop": 1.0, "num": 0}}, "mdl_over_n.num"),
        ({"nn": 5}, "nn: unknown key"),
        ({"tv": "half"}, "tv"),
        ({"n": 5}, "n:"),
    ],
)
def test_bounds_config_errors(raw, where):
    with pytest.raises(cli.ConfigError) as err:
        cli.validate_bounds_config(raw)
    assert str(err.value).startswith(where)


@pytest.mark.parametrize(
    "patch,where",
    [
        ({"runs": [{"name": "a", "regularizer": "none", "lamz": [1]}]}, "runs[0].lamz: unknown key"),
        ({"runs": [{"name": "a", "regularizer": "dropout"}]}, "runs[0].regularizer"),
        ({"runs": []}, "runs"),
        ({"train": {"epochs": "ten"}}, "train.epochs: expected int"),
        ({"data": {"views": ["Bad"]}}, "data.views"),
        ({"seeds": ["a"]}, "seeds"),
    ],
)
def test_train_config_errors(tmp_path, patch, where, capsys):
    cfg = dict(TINY, **patch)
    rc = cli.main(["train", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert rc == cli.EXIT_CONFIG
    assert f"error: {where}" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == cli.EXIT_CONFIG


@pytest.fixture(scope="module")
def train_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("train")
    rc = cli.main(["train", "--config", write_cfg(tmp, TINY), "--out", str(tmp / "out")])
    assert rc == cli.EXIT_OK
    return tmp / "out"


def test_train_layout(train_dir):
    results = json.loads((train_dir / "results.json").read_text())
    assert len(results) == (1 + 2) * 2
    cell = train_dir / "runs" / "gpm" / "lam_0.1" / "seed_1"
    for name in ("metrics.csv", "model.json", "model.bin", "prior.json", "bound_report.json"):
        assert (cell / name).is_file(), name
    assert not (train_dir / "runs" / "base" / "lam_0" / "seed_0" / "prior.json").exists()
    metrics = cli.read_table(cell / "metrics.csv", {"epoch": int})
    assert metrics["epoch"] == [0, 1]
    rep = json.loads((cell / "bound_report.json").read_text())
    assert rep["ghost_acc"] == metrics["ghost_acc"][-1]
    assert set(rep["bounds"]) >= {"thm1_bound", "thm2_gen_bound"}


def test_train_is_seed_deterministic(train_dir, tmp_path):
    rc = cli.main(["train", "--config", write_cfg(tmp_path, TINY), "--out", str(tmp_path / "again"), "--seed", "1"])
    assert rc == cli.EXIT_OK
    a = train_dir / "runs" / "gpm" / "lam_0.01" / "seed_1" / "metrics.csv"
    b = tmp_path / "again" / "runs" / "gpm" / "lam_0.01" / "seed_1" / "metrics.csv"
    assert a.read_bytes() == b.read_bytes()
    assert not (tmp_path / "again" / "runs" / "gpm" / "lam_0.01" / "seed_0").exists()


def test_report(train_dir, capsys):
    assert cli.main(["report", str(train_dir)]) == cli.EXIT_OK
    text = capsys.readouterr().out
    assert "gpm" in text and "base" in text
    summary = json.loads((train_dir / "report.json").read_text())
    assert {row["n_seeds"] for row in summary["cells"]} == {2}
    assert summary["best"]["gpm"]["lam"] in (0.01, 0.1)


def test_report_single_seed_equals_raw():
    results = [{"run": "a", "regularizer": "vib", "lam": 0.1, "seed": 3, "train_acc": 0.9,
                "ghost_acc": 0.7, "mdl": 12.0}]
    row = cli.summarize(results)["cells"][0]
    assert row["ghost_acc_mean"] == 0.7 and row["ghost_acc_std"] == 0.0
    assert row["train_acc_mean"] == 0.9 and row["mdl_mean"] == 12.0


def test_report_errors(tmp_path):
    assert cli.main(["report", str(tmp_path / "missing")]) == cli.EXIT_CONFIG
    assert cli.main(["report", str(tmp_path)]) == cli.EXIT_CONFIG
    (tmp_path / "results.json").write_text("[]")
    assert cli.main(["report", str(tmp_path)]) == cli.EXIT_CONFIG


def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise NonFiniteLossError("loss is nan")

    monkeypatch.setattr(cli, "fit_model", boom)
    cfg = dict(TINY, seeds=[0], runs=[{"name": "v", "regularizer": "vib", "lams": [0.1]}])
    rc = cli.main(["train", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert rc == cli.EXIT_NUMERIC
    failure = json.loads((tmp_path / "o" / "runs" / "v" / "lam_0.1" / "seed_0" / "failure.json").read_text())
    assert "nan" in failure["error"]


def test_bounds_main_and_threads(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("GPMDL_THREADS", "1")
    assert cli._limit_threads() is not None
    rc = cli.main(["bounds", "--config", write_cfg(tmp_path, SMALL_BOUNDS), "--out", str(tmp_path / "b")])
    assert rc == cli.EXIT_OK
    assert "crossover" in json.loads(capsys.readouterr().out)
    monkeypatch.delenv("GPMDL_THREADS")
    assert cli._limit_threads() is None
