import json

import numpy as np
import pytest

from coolrom import cli, datapipe, neural
from coolrom.neural import Mlp, ScalerParams
from test_datapipe import synthetic_dataset

CHANNEL = ["--area", "7.4", "--aspect-ratio", "3.7", "--wall-thickness", "1.14", "--roughness", "1.7",
           "--mass-flux", "10100", "--T-in", "290", "--q", "14"]


def manifest(out, sub):
    return json.loads((out / f"{sub}_manifest.json").read_text())


@pytest.fixture(scope="module")
def model_file(tmp_path_factory, small_model):
    path = tmp_path_factory.mktemp("model") / "model.json"
    neural.save_model(*small_model, path)
    return path


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "data.csv"
    datapipe.save_dataset(synthetic_dataset(200), path)
    return path


def test_generate_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert cli.main(["generate", "--n-channels", "3", "--seed", "7", "--out-dir", str(tmp_path / name)]) == 0
    a, b = manifest(tmp_path / "a", "generate"), manifest(tmp_path / "b", "generate")
    assert a["outputs"] == b["outputs"]
    assert (tmp_path / "a" / "dataset.csv").read_bytes() == (tmp_path / "b" / "dataset.csv").read_bytes()
    assert a["seed"] == 7 and a["config"]["seed"] == 7
    assert "generated" in capsys.readouterr().out


def test_rerun_from_manifest(tmp_path):
    out = tmp_path / "run"
    assert cli.main(["generate", "--n-channels", "2", "--seed", "1", "--out-dir", str(out)]) == 0
    first = manifest(out, "generate")
    assert cli.main(first["argv"]) == 0
    assert manifest(out, "generate")["outputs"] == first["outputs"]


def test_zero_channels_is_flag_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["generate", "--n-channels", "0", "--out-dir", str(tmp_path)])
    assert info.value.code == 2
    assert "n-channels" in capsys.readouterr().err


def test_missing_table_leaves_nothing(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["generate", "--n-channels", "2", "--table", str(tmp_path / "nope.csv"), "--out-dir", str(out)])
    assert code == 4
    assert "error [io]" in capsys.readouterr().err
    assert not out.exists() or not any(out.iterdir())


def test_malformed_table_is_validation_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("p,T\n1,2\n")
    out = tmp_path / "out"
    assert cli.main(["march", *CHANNEL, "--p-in", "80", "--table", str(bad), "--out-dir", str(out)]) == 2
    assert not out.exists() or not any(out.iterdir())


def test_march_output(tmp_path):
    assert cli.main(["march", *CHANNEL, "--p-in", "80", "--out-dir", str(tmp_path)]) == 0
    lines = (tmp_path / "march.csv").read_text().splitlines()
    assert lines[0] == "z[mm],p[Pa],h_tot[J/kg],h_stat[J/kg],T_b[K],rho[kg/m3],v[m/s],Re,f"
    assert len(lines) == 127


def test_march_bad_profile(tmp_path, capsys):
    args = [a for a in CHANNEL if a not in ("--q", "14")]
    assert cli.main(["march", *args, "--q-profile", "0:1,x", "--p-in", "80", "--out-dir", str(tmp_path)]) == 2
    assert "error [validation]" in capsys.readouterr().err


def test_predict_rows_and_timing(tmp_path, model_file, capsys):
    code = cli.main(["predict", *CHANNEL, "--p-out", "51", "--model", str(model_file), "--out-dir", str(tmp_path)])
    assert code == 0
    lines = (tmp_path / "predict.csv").read_text().splitlines()
    assert lines[0].endswith(",T_w[K]")
    assert len(lines) - 1 == 126
    assert "126 stations in" in capsys.readouterr().out
    assert manifest(tmp_path, "predict")["timings"]["predict_channel_s"] > 0


def perfect_model(ds, names=("q", "r", "d")):
    """Linear network reproducing the synthetic label exactly."""
    X = ds.features(names)
    mean, std = X.mean(axis=0), X.std(axis=0)
    coef = np.array([1e-5, -5.0, 100.0])
    model = Mlp((3, 1), [(coef * std)[None, :]], [np.array([300.0 + coef @ mean])])
    return model, ScalerParams(mean, std, names)


def test_eval_perfect_predictor(tmp_path, tiny_data, capsys):
    ds = datapipe.load_dataset(tiny_data)
    path = tmp_path / "perfect.json"
    neural.save_model(*perfect_model(ds), path)
    assert cli.main(["eval", "--model", str(path), "--data", str(tiny_data), "--out-dir", str(tmp_path)]) == 0
    assert "MAE 0.00 K" in capsys.readouterr().out
    assert json.loads((tmp_path / "eval.json").read_text())["mae"] < 1e-9


def test_train_zero_epochs(tmp_path, tiny_data, capsys):
    args = ["train", "--data", str(tiny_data), "--epochs", "0", "--neurons", "8", "--out-dir", str(tmp_path)]
    assert cli.main(args) == 0
    assert "warning" in capsys.readouterr().err
    model, scaler = neural.load_model(tmp_path / "model.json")
    assert model.layer_dims == (9, 8, 8, 8, 1)
    assert manifest(tmp_path, "train")["outputs"]["model.json"]


def test_train_deterministic(tmp_path, tiny_data):
    for name in ("a", "b"):
        args = ["train", "--data", str(tiny_data), "--epochs", "3", "--neurons", "8", "--batch-size", "32",
                "--features", "q,r,d", "--out-dir", str(tmp_path / name)]
        assert cli.main(args) == 0
    assert (tmp_path / "a" / "model.json").read_bytes() == (tmp_path / "b" / "model.json").read_bytes()


def test_train_divergence_exit_code(tmp_path, capsys):
    ds = synthetic_dataset(60)
    cols = dict(ds.columns)
    cols["T_w"] = cols["T_w"] * 1e200
    path = tmp_path / "huge.csv"
    datapipe.save_dataset(datapipe.Dataset(cols), path)
    args = ["train", "--data", str(path), "--epochs", "3", "--lr", "1000", "--neurons", "4",
            "--out-dir", str(tmp_path / "out")]
    assert cli.main(args) == 3
    assert "error [divergence]" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_search_workers(tmp_path, tiny_data):
    space = tmp_path / "space.json"
    space.write_text(json.dumps({"neurons_per_layer": [4, 8], "epochs": [2, 3], "n_hidden_layers": [1, 2],
                                 "minibatch_size": [32]}))
    outs = []
    for name, workers in (("a", "1"), ("b", "2")):
        args = ["search", "--data", str(tiny_data), "--n-trials", "3", "--workers", workers, "--space", str(space),
                "--features", "q,r,d", "--seed", "2", "--out-dir", str(tmp_path / name)]
        assert cli.main(args) == 0
        outs.append((tmp_path / name / "search.csv").read_text())
    assert outs[0] == outs[1]
    assert len(outs[0].splitlines()) == 4


def test_stats_and_heatmap(tmp_path, tiny_data, model_file):
    assert cli.main(["stats", "--data", str(tiny_data), "--out-dir", str(tmp_path)]) == 0
    stats = (tmp_path / "stats.csv").read_text().splitlines()
    assert stats[0] == "column,mean,std,p1,p25,p50,p75,p99"
    corr = (tmp_path / "correlation.csv").read_text().splitlines()
    assert len(corr) == len(corr[0].split(","))
    args = ["heatmap", "--model", str(model_file), "--x", "h_b", "--y", "p_b", "--x-range", "2e5,1e6",
            "--y-range", "6e6,1.2e7", "--resolution", "4", "--fixed-from", str(tiny_data), "--out-dir", str(tmp_path)]
    assert cli.main(args) == 0
    grid = (tmp_path / "heatmap.csv").read_text().splitlines()
    assert len(grid) == 5 and len(grid[0].split(",")) == 5


def test_heatmap_missing_fixed_value(tmp_path, model_file):
    args = ["heatmap", "--model", str(model_file), "--x", "h_b", "--y", "p_b", "--x-range", "2e5,1e6",
            "--y-range", "6e6,1.2e7", "--fixed", "q=1e7", "--out-dir", str(tmp_path)]
    assert cli.main(args) == 2


def test_one_manifest_per_run(tmp_path):
    assert cli.main(["march", *CHANNEL, "--p-in", "80", "--out-dir", str(tmp_path)]) == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["march.csv", "march_manifest.json"]
    m = manifest(tmp_path, "march")
    for key in ("subcommand", "config", "seed", "outputs", "tool_version", "timings", "argv"):
        assert key in m
