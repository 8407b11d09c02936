import json

import numpy as np
import pytest

from gpoose.cli import main, parse_rho
from gpoose.data import generate, load_csv, save_csv
from gpoose.errors import InputError, NumericalError


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def helix(tmp_path):
    pts = tmp_path / "pts.csv"
    assert run("generate", "--dataset", "toroidal_helix", "--n", 150, "--seed", 7,
               "--out", pts) == 0
    emb = tmp_path / "emb.csv"
    assert run("embed", "--input", pts, "--method", "dm", "--out", emb) == 0
    return pts, emb


def test_parse_rho():
    assert parse_rho("0.05:0.8:0.05") == pytest.approx(np.arange(1, 17) * 0.05)
    assert parse_rho("0.1:0.3:0.1") == [0.1, 0.2, 0.3]
    assert parse_rho("0.1,0.5") == [0.1, 0.5]
    for bad in ("0:0.5:0.1", "0.5:0.1:0.1", "x", "0.2:0.4:0"):
        with pytest.raises(InputError):
            parse_rho(bad)


def test_embed_shape_and_sidecar(tmp_path):
    out = tmp_path / "emb.csv"
    assert run("embed", "--dataset", "swiss_roll", "--n", 1000, "--seed", 7,
               "--method", "dm", "--dim", 2, "--out", out) == 0
    cloud = load_csv(out, header=True)
    assert cloud.coords.shape == (1000, 2)
    params = json.loads((tmp_path / "emb.csv.json").read_text())
    assert params["method"] == "dm" and params["eps_policy"] == "median-sq"


def test_embed_errors(tmp_path, capsys):
    out = tmp_path / "emb.csv"
    with pytest.raises(SystemExit) as info:
        run("embed", "--dataset", "swiss_roll", "--method", "lle", "--out", out)
    assert info.value.code == 2
    assert not out.exists()
    assert run("embed", "--dataset", "swiss_roll", "--method", "external",
               "--embedding", tmp_path / "missing.csv", "--out", out) == 2
    assert "missing.csv" in capsys.readouterr().err
    assert not out.exists()


def test_embed_external(tmp_path, helix):
    pts, emb = helix
    out = tmp_path / "copy.csv"
    assert run("embed", "--input", pts, "--method", "external", "--embedding", emb,
               "--out", out) == 0
    assert np.array_equal(load_csv(out, header=True).coords, load_csv(emb, header=True).coords)


def test_fixed_train_interpolates(tmp_path, helix):
    pts, emb = helix
    model = tmp_path / "model.json"
    assert run("train", "--points", pts, "--embedding", emb, "--no-loocv", "--tau", 0.5,
               "--noise", 0, "--out", model) == 0
    assert not (tmp_path / "model.json.hyperopt.json").exists()
    pred = tmp_path / "pred.csv"
    assert run("extend", "--model", model, "--test", pts, "--out", pred) == 0
    table = load_csv(pred, header=True).coords
    Y = load_csv(emb, header=True).coords
    assert np.max(np.abs(table[:, :2] - Y)) <= 1e-8
    assert np.all(table[:, 2:] <= 1e-8)
    assert pred.read_text().splitlines()[0] == "mean_0,mean_1,var_0,var_1"


def test_loocv_train_report_and_round_trip(tmp_path, helix):
    pts, emb = helix
    model = tmp_path / "model.json"
    assert run("train", "--points", pts, "--embedding", emb, "--n-starts", 2,
               "--out", model) == 0
    report = json.loads((tmp_path / "model.json.hyperopt.json").read_text())
    assert [r["dim"] for r in report] == [0, 1]
    assert all(r["restarts_used"] == 2 for r in report)
    test = tmp_path / "test.csv"
    save_csv(generate("toroidal_helix", 20, 99).coords, test)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("extend", "--model", model, "--test", test, "--out", a) == 0
    assert run("extend", "--model", model, "--test", test, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()


def test_train_mismatched_rows(tmp_path, helix, capsys):
    pts, _ = helix
    short = tmp_path / "short.csv"
    save_csv(np.zeros((10, 2)), short)
    assert run("train", "--points", pts, "--embedding", short, "--out",
               tmp_path / "m.json") == 2
    assert "rows" in capsys.readouterr().err


def test_extend_empty_and_corrupt(tmp_path, helix):
    pts, emb = helix
    model = tmp_path / "model.json"
    run("train", "--points", pts, "--embedding", emb, "--no-loocv", "--tau", 0.5,
        "--noise", 1e-3, "--out", model)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    out = tmp_path / "pred.csv"
    assert run("extend", "--model", model, "--test", empty, "--out", out) == 0
    assert out.read_text() == "mean_0,mean_1,var_0,var_1\n"
    broken = tmp_path / "broken.json"
    broken.write_text(model.read_text()[:100])
    assert run("extend", "--model", broken, "--test", pts, "--out", out) == 2


def test_numerical_failure_exit_code(tmp_path, helix, monkeypatch, capsys):
    import gpoose.cli

    def failing_train(*args, **kwargs):
        raise NumericalError("factorization failed (condition estimate 1e+17)")

    monkeypatch.setattr(gpoose.cli, "train", failing_train)
    pts, emb = helix
    assert run("train", "--points", pts, "--embedding", emb, "--out", tmp_path / "m.json") == 3
    assert "condition estimate" in capsys.readouterr().err
    assert not (tmp_path / "m.json").exists()


def test_benchmark_outputs_are_deterministic(tmp_path):
    args = ["benchmark", "--dataset", "swiss_roll", "--method", "dm",
            "--extenders", "gpr,nystrom", "--rho", "0.2:0.4:0.2", "--repeats", 2,
            "--n", 120, "--seed", 1]
    assert run(*args, "--out-prefix", tmp_path / "a") == 0
    assert run(*args, "--out-prefix", tmp_path / "b") == 0
    for suffix in ("_repeats.csv", "_aggregate.csv"):
        a = (tmp_path / ("a" + suffix)).read_bytes()
        assert a == (tmp_path / ("b" + suffix)).read_bytes()
    rows = (tmp_path / "a_repeats.csv").read_text().splitlines()
    assert rows[0] == "dataset,method,extender,rho,repeat,rmse"
    assert len(rows) == 1 + 2 * 2 * 2


def test_benchmark_rejects_bad_flags_before_work(tmp_path):
    base = ["benchmark", "--dataset", "swiss_roll", "--method", "dm",
            "--out-prefix", tmp_path / "x"]
    assert run(*base, "--rho", "0.5:1.5:0.5") == 2
    assert run(*base, "--extenders", "gpr,lle") == 2
    assert run(*base, "--repeats", 0) == 2
    assert not list(tmp_path.iterdir())


def test_heatmap_contrast_on_helix(tmp_path):
    pts, emb, model = tmp_path / "p.csv", tmp_path / "e.csv", tmp_path / "m.json"
    run("generate", "--dataset", "toroidal_helix", "--n", 300, "--out", pts)
    run("embed", "--input", pts, "--method", "isomap", "--out", emb)
    assert run("train", "--points", pts, "--embedding", emb, "--no-loocv", "--tau", 0.3,
               "--noise", 1e-4, "--out", model) == 0
    out = tmp_path / "hm.csv"
    assert run("heatmap", "--model", model, "--grid-res", 40, "--axes", "0,1", "--out", out) == 0
    grid = load_csv(out, header=True).coords
    assert grid.shape == (1600, 3) and np.all(grid[:, 2] <= 0)
    X = load_csv(pts, header=True).coords
    nodes = np.c_[grid[:, :2], np.full(len(grid), X[:, 2].mean())]
    dist = np.min(np.linalg.norm(nodes[:, None, :] - X[None, :, :], axis=2), axis=1)
    H = grid[:, 2].reshape(40, 40)
    corners = [H[0, 0], H[0, -1], H[-1, 0], H[-1, -1]]
    assert grid[dist <= 0.15, 2].mean() > np.mean(corners)
    assert run("heatmap", "--model", model, "--fix", "two=1", "--out", out) == 2


def test_anomaly_command(tmp_path):
    rng = np.random.default_rng(0)
    normal = generate("twin_peaks", 300, 0).coords
    anom = rng.uniform(-1, 1, (30, 3))
    anom[:, 2] = rng.choice([-1, 1], 30) * rng.uniform(2.0, 3.0, 30)
    data = tmp_path / "train.csv"
    save_csv(np.vstack([normal, anom]), data, labels=np.r_[np.zeros(300), np.ones(30)])
    thr, cls = tmp_path / "thr.json", tmp_path / "cls.csv"
    assert run("anomaly", "--input", data, "--out-threshold", thr, "--out-classes", cls) == 0
    doc = json.loads(thr.read_text())
    assert doc["holdout_accuracy"] == 1.0
    lines = cls.read_text().splitlines()
    assert lines[0] == "variance_total,prediction"
    preds = [line.split(",")[1] for line in lines[1:]]
    assert preds == ["normal"] * 300 + ["anomaly"] * 30
