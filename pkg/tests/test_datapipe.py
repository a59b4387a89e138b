import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coolrom import datapipe as dp
from coolrom import neural
from coolrom.errors import ParseError, ValidationError
from oracles import pearson_two_pass


def synthetic_dataset(n=200, seed=0, label=True):
    """Random positive records; T_w is a smooth function of a few features."""
    rng = np.random.default_rng(seed)
    cols = {
        "z": rng.uniform(0, 250, n),
        "T_b": rng.uniform(120, 600, n),
        "h_b": rng.uniform(1e5, 2e6, n),
        "p_b": rng.uniform(5e6, 2e7, n),
        "v_b": rng.uniform(5, 200, n),
        "G": rng.uniform(3e3, 3.5e4, n),
        "q": rng.uniform(9e6, 8e7, n),
        "r": rng.uniform(0.2, 15, n),
        "A": rng.uniform(1, 10, n),
        "AR": rng.uniform(1, 9, n),
        "d": rng.uniform(0.8, 1.2, n),
    }
    if label:
        cols["T_w"] = 300 + 1e-5 * cols["q"] - 5 * cols["r"] + 100 * cols["d"]
    return dp.Dataset(cols, "external", np.arange(n) // 10)


def test_csv_round_trip(tmp_path):
    ds = synthetic_dataset()
    path = tmp_path / "d.csv"
    dp.save_dataset(ds, path)
    assert path.read_text().splitlines()[1].startswith("z[mm],T_b[K],h_b[J/kg]")
    back = dp.load_dataset(path)
    assert back.equals(ds)
    assert back.checksum() == ds.checksum()


def test_negative_area_names_row(tmp_path):
    ds = synthetic_dataset(5)
    lines = dp.dataset_to_csv(ds).splitlines()
    header = lines[1].split(",")
    cells = lines[4].split(",")
    cells[header.index("A[mm2]")] = "-1.0"
    lines[4] = ",".join(cells)
    path = tmp_path / "bad.csv"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError, match=r":5: invalid A"):
        dp.load_dataset(path)


def test_dataset_rejects_negative_area_in_memory():
    cols = dict(synthetic_dataset(4).columns)
    cols["A"] = cols["A"].copy()
    cols["A"][2] = -1.0
    with pytest.raises(ValidationError, match="row 3"):
        dp.Dataset(cols)


def test_inference_mode_allows_missing_label(tmp_path):
    path = tmp_path / "inf.csv"
    dp.save_dataset(synthetic_dataset(10, label=False), path)
    with pytest.raises(ValidationError):
        dp.load_dataset(path)
    assert not dp.load_dataset(path, mode="inference").has_labels


def test_bare_headers_and_bad_rows(tmp_path):
    ds = synthetic_dataset(3)
    text = dp.dataset_to_csv(ds).replace("[mm]", "", 1)
    path = tmp_path / "bare.csv"
    path.write_text(text)
    assert dp.load_dataset(path).equals(ds)
    path.write_text(text + "1,2\n")
    with pytest.raises(ParseError, match=":6:"):
        dp.load_dataset(path)
    path.write_text("")
    with pytest.raises(ParseError):
        dp.load_dataset(path)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 60), st.floats(0.05, 0.95))
def test_split_partition(seed, n, frac):
    ds = synthetic_dataset(n, seed=1)
    a, b = dp.split(ds, frac, seed)
    ids = np.concatenate([a.channel * 1000 + np.searchsorted(np.sort(ds["z"]), a["z"]),
                          b.channel * 1000 + np.searchsorted(np.sort(ds["z"]), b["z"])])
    assert len(a) + len(b) == n and len(a) >= 1 and len(b) >= 1
    assert len(np.unique(ids)) == n
    a2, b2 = dp.split(ds, frac, seed)
    assert a.equals(a2) and b.equals(b2)


def test_split_sizes():
    a, b = dp.split(synthetic_dataset(101), 0.9, 0)
    assert (len(a), len(b)) == (91, 10)
    with pytest.raises(ValidationError):
        dp.split(synthetic_dataset(1), 0.9, 0)


def test_correlation_matches_definition_small():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((5, 4))
    names = ["z", "T_b", "h_b", "p_b"]
    cols = dict(synthetic_dataset(5).columns)
    for i, n in enumerate(names):
        cols[n] = np.abs(X[:, i]) + 0.1
    R = dp.correlation_matrix(dp.Dataset(cols), names)
    np.testing.assert_allclose(R, pearson_two_pass(np.column_stack([cols[n] for n in names])), atol=1e-12)


def test_correlation_matches_definition_large():
    ds = synthetic_dataset(1000, seed=2)
    names = ["z", "T_b", "h_b", "p_b", "G", "q", "r", "T_w"]
    R = dp.correlation_matrix(ds, names)
    np.testing.assert_allclose(R, pearson_two_pass(np.column_stack([ds[n] for n in names])), atol=1e-12)
    assert np.all(np.diag(R) == 1.0)


def test_correlation_constant_column():
    ds = synthetic_dataset(20)
    cols = dict(ds.columns)
    cols["d"] = np.full(20, 1.0)
    with pytest.raises(ValidationError):
        dp.correlation_matrix(dp.Dataset(cols), ["d", "q"])


def test_stats_summary_percentiles():
    ds = synthetic_dataset(101)
    s = dp.stats_summary(ds)["z"]
    assert s["p50"] == pytest.approx(np.median(ds["z"]))
    assert s["std"] == pytest.approx(np.std(ds["z"]))
    assert s["p1"] <= s["p25"] <= s["p50"] <= s["p75"] <= s["p99"]


def test_kde_weights_favor_target_cluster():
    rng = np.random.default_rng(0)
    left = rng.normal(-3.0, 0.5, (200, 2))
    right = rng.normal(3.0, 0.5, (200, 2))
    train = np.vstack([left, right])
    target = rng.normal(3.0, 0.5, (100, 2))
    w = dp.kde_importance_weights(train, target)
    inside = np.linalg.norm(train - 3.0, axis=1) < 1.0
    assert inside.sum() > 100
    assert w[inside].min() > w[:200].max()
    assert w.mean() == pytest.approx(1.0)
    assert w.max() / w.min() <= 100.0 + 1e-9


def test_kde_degenerate_inputs():
    with pytest.raises(ValidationError, match="degenerate"):
        dp.kde_importance_weights(np.ones((1, 2)), np.random.default_rng(0).normal(size=(10, 2)))
    X = np.column_stack([np.arange(10.0), np.zeros(10)])
    with pytest.raises(ValidationError, match="degenerate"):
        dp.kde_importance_weights(X, X)


def test_error_metrics_hand_values():
    r = dp.error_metrics([10.0, 10.0], [10.0, 14.0])
    assert (r.mae, r.std) == (2.0, 2.0)
    assert r.mape == pytest.approx(0.2)
    w = dp.error_metrics([10.0, 10.0], [10.0, 14.0], weights=[3.0, 1.0])
    assert w.mae == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        dp.error_metrics([], [])


def test_evaluate_permutation_invariant(small_oracle, small_model):
    model, scaler = small_model
    ds = small_oracle.dataset
    perm = np.random.default_rng(0).permutation(len(ds))
    a = dp.evaluate(model, scaler, ds)
    b = dp.evaluate(model, scaler, ds.subset(perm))
    assert a.mae == pytest.approx(b.mae, rel=1e-12)
    assert a.std == pytest.approx(b.std, rel=1e-12)


def test_percentage_errors():
    a = synthetic_dataset(10)
    cols = dict(a.columns)
    cols["p_b"] = cols["p_b"] * 1.05
    out = dp.percentage_errors(a, dp.Dataset(cols), ["p_b", "h_b"])
    assert out["p_b"] == pytest.approx(0.05)
    assert out["h_b"] == 0.0


def test_heatmap_on_oracle_model(small_oracle, small_model):
    model, scaler = small_model
    ds = small_oracle.dataset
    fixed = {n: float(np.median(ds[n])) for n in scaler.feature_names}
    xs, ys, grid = dp.heatmap_grid(model, scaler, "h_b", "p_b", (2e5, 1.5e6), (5e6, 1.5e7), (7, 5), fixed)
    assert grid.shape == (5, 7)
    assert np.all(np.isfinite(grid))
    lines = dp.heatmap_csv(xs, ys, grid, "h_b", "p_b").splitlines()
    assert lines[0].split(",")[1:] == [repr(float(x)) for x in xs]
    assert [float(l.split(",")[0]) for l in lines[1:]] == list(ys)


def test_heatmap_degenerate_range(small_model):
    model, scaler = small_model
    fixed = {n: 1.0 for n in scaler.feature_names}
    with pytest.raises(ValidationError):
        dp.heatmap_grid(model, scaler, "h_b", "p_b", (1.0, 1.0), (0.0, 1.0), 5, fixed)


FAST = dp.SearchSpace(n_hidden_layers=(1, 2), neurons_per_layer=(4, 16), epochs=(3, 8),
                      minibatch_size=(32, 64), learning_rate=(1e-3, 3e-2))


def test_search_ranking_and_determinism():
    train, val = dp.split(synthetic_dataset(300), 0.8, 0)
    feats = ("q", "r", "d")
    a = dp.random_search(FAST, 10, train, val, seed=4, features=feats)
    b = dp.random_search(FAST, 10, train, val, seed=4, features=feats)
    maes = [r.val_mae for r in a]
    assert maes == sorted(maes)
    assert a[0].val_mae <= a[-1].val_mae
    assert dp.search_report_csv(a) == dp.search_report_csv(b)
    assert {r.index for r in a} == set(range(10))


def test_search_parallel_matches_serial():
    train, val = dp.split(synthetic_dataset(200), 0.8, 0)
    feats = ("q", "r", "d")
    serial = dp.random_search(FAST, 3, train, val, seed=1, features=feats)
    parallel = dp.random_search(FAST, 3, train, val, seed=1, features=feats, workers=2)
    assert dp.search_report_csv(serial) == dp.search_report_csv(parallel)


def test_search_survives_divergence():
    ds = synthetic_dataset(100)
    cols = dict(ds.columns)
    cols["T_w"] = cols["T_w"] * 1e200
    train, val = dp.split(dp.Dataset(cols), 0.8, 0)
    space = dp.SearchSpace(n_hidden_layers=(1, 1), neurons_per_layer=(4, 4), epochs=(2, 2),
                           minibatch_size=(16,), learning_rate=(1e2, 1e3))
    res = dp.random_search(space, 3, train, val, seed=0, features=("q", "r"))
    assert len(res) == 3
    assert all(r.status == "diverged" and r.val_mae == np.inf for r in res)
    assert "diverged" in dp.search_report_csv(res)


def test_sample_trials_spawned_streams():
    a = dp.sample_trials(FAST, 5, seed=9)
    b = dp.sample_trials(FAST, 8, seed=9)
    assert a == b[:5]
    assert all(hp.rng_seed == 9 for hp in a)


def test_weighted_training_runs():
    train, val = dp.split(synthetic_dataset(200), 0.8, 0)
    feats = ("q", "r", "d")
    w = dp.kde_importance_weights(train.features(feats), val.features(feats))
    hp = neural.HyperParams(n_hidden_layers=1, neurons_per_layer=8, alpha_l2=0.0, minibatch_size=32,
                            epochs=3, learning_rate=1e-2)
    model, scaler, rep = dp.train_model(train, val, hp, feats, w)
    assert rep.epochs_run == 3
