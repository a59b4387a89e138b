"""Station-wise datasets: CSV schema, splits, statistics, importance weights,
random hyperparameter search, evaluation metrics and heat-map sweeps."""

from __future__ import annotations

import csv
import hashlib
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats as sps

from coolrom import neural
from coolrom.errors import DivergenceError, ParseError, ValidationError
from coolrom.neural import HyperParams, Mlp, ScalerParams

# field name -> unit, in file order
SAMPLE_FIELDS = {
    "z": "mm",
    "T_b": "K",
    "h_b": "J/kg",
    "p_b": "Pa",
    "v_b": "m/s",
    "G": "kg/m2s",
    "q": "W/m2",
    "r": "um",
    "A": "mm2",
    "AR": "-",
    "d": "mm",
    "T_w": "K",
}
LABEL = "T_w"
# optional integer column, not a feature
CHANNEL = "channel"
DEFAULT_FEATURES = ("h_b", "p_b", "G", "q", "r", "A", "AR", "d", "z")
PROVENANCES = ("oracle", "external", "cfd-import")

# columns allowed to be zero (unheated stations, channel inlet)
_NON_NEGATIVE = {"z", "q"}


@dataclass
class Dataset:
    """Columnar station records. ``columns`` maps field name -> 1-D float array."""

    columns: dict[str, np.ndarray]
    provenance: str = "external"
    channel: np.ndarray | None = None

    def __post_init__(self):
        cols = {}
        for name in SAMPLE_FIELDS:
            if name in self.columns:
                cols[name] = np.asarray(self.columns[name], dtype=np.float64)
        unknown = set(self.columns) - set(SAMPLE_FIELDS)
        if unknown:
            raise ValidationError(f"unknown dataset columns {sorted(unknown)}")
        missing = [n for n in SAMPLE_FIELDS if n != LABEL and n not in cols]
        if missing:
            raise ValidationError(f"missing dataset columns {missing}")
        lengths = {len(c) for c in cols.values()}
        if len(lengths) != 1:
            raise ValidationError("dataset columns differ in length")
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"provenance must be one of {PROVENANCES}")
        if self.channel is not None:
            self.channel = np.asarray(self.channel, dtype=np.int64)
            if len(self.channel) != lengths.pop():
                raise ValidationError("channel column length differs")
        self.columns = cols
        _check_values(cols)

    def __len__(self) -> int:
        return len(next(iter(self.columns.values())))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def has_labels(self) -> bool:
        return LABEL in self.columns

    @property
    def labels(self) -> np.ndarray:
        if not self.has_labels:
            raise ValidationError("dataset has no T_w labels")
        return self.columns[LABEL]

    def features(self, names: Sequence[str] = DEFAULT_FEATURES) -> np.ndarray:
        bad = [n for n in names if n not in self.columns or n == LABEL]
        if bad:
            raise ValidationError(f"invalid feature names {bad}")
        return np.column_stack([self.columns[n] for n in names])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            {k: v[idx] for k, v in self.columns.items()},
            self.provenance,
            None if self.channel is None else self.channel[idx],
        )

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, col in self.columns.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(col, dtype="<f8").tobytes())
        if self.channel is not None:
            h.update(np.ascontiguousarray(self.channel, dtype="<i8").tobytes())
        return h.hexdigest()

    def equals(self, other: "Dataset") -> bool:
        if set(self.columns) != set(other.columns) or self.provenance != other.provenance:
            return False
        if (self.channel is None) != (other.channel is None):
            return False
        if self.channel is not None and not np.array_equal(self.channel, other.channel):
            return False
        return all(np.array_equal(self.columns[k], other.columns[k]) for k in self.columns)

    @staticmethod
    def concat(parts: Sequence["Dataset"]) -> "Dataset":
        if not parts:
            raise ValidationError("nothing to concatenate")
        cols = {k: np.concatenate([p.columns[k] for p in parts]) for k in parts[0].columns}
        channel = None
        if all(p.channel is not None for p in parts):
            channel = np.concatenate([p.channel for p in parts])
        return Dataset(cols, parts[0].provenance, channel)


def _check_values(cols: dict[str, np.ndarray]) -> None:
    for name, col in cols.items():
        bad = ~np.isfinite(col)
        if name in _NON_NEGATIVE:
            bad |= col < 0
        else:
            bad |= col <= 0
        if np.any(bad):
            row = int(np.argmax(bad))
            raise ValidationError(f"row {row + 1}: invalid {name} = {col[row]!r}")


def _header_name(cell: str) -> str:
    return cell.split("[", 1)[0].strip()


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(dataset_to_csv(ds))


def dataset_to_csv(ds: Dataset) -> str:
    names = list(ds.columns)
    header = [f"{n}[{SAMPLE_FIELDS[n]}]" for n in names]
    if ds.channel is not None:
        header.append(CHANNEL)
    buf = io.StringIO()
    buf.write(f"#provenance={ds.provenance}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for i in range(len(ds)):
        row = [repr(float(ds.columns[n][i])) for n in names]
        if ds.channel is not None:
            row.append(str(int(ds.channel[i])))
        writer.writerow(row)
    return buf.getvalue()


def load_dataset(path, mode: str = "train") -> Dataset:
    """Read a dataset CSV. ``mode='inference'`` allows the T_w column to be absent.

    Header cells may carry a unit suffix (``z[mm]``) or be bare field names.
    """
    path = Path(path)
    provenance = "external"
    rows = []
    header = None
    with path.open(newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                key, _, val = s[1:].partition("=")
                if key.strip() == "provenance":
                    provenance = val.strip()
                continue
            cells = next(csv.reader([s]))
            if header is None:
                header = [_header_name(c) for c in cells]
                header_line = lineno
                continue
            if len(cells) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric field") from None
    if header is None:
        raise ParseError(f"{path}: empty dataset file")
    unknown = [h for h in header if h not in SAMPLE_FIELDS and h != CHANNEL]
    if unknown:
        raise ParseError(f"{path}:{header_line}: unknown columns {unknown}")
    if mode != "inference" and LABEL not in header:
        raise ValidationError(f"{path}: T_w label column required outside inference mode")
    if not rows:
        raise ParseError(f"{path}: no data rows")
    data = np.array(rows)
    cols = {h: data[:, i] for i, h in enumerate(header) if h != CHANNEL}
    channel = data[:, header.index(CHANNEL)].astype(np.int64) if CHANNEL in header else None
    try:
        return Dataset(cols, provenance, channel)
    except ValidationError as exc:
        # report file line numbers rather than record indices
        msg = str(exc)
        if msg.startswith("row "):
            rec = int(msg.split()[1].rstrip(":"))
            msg = f"{path}:{header_line + rec}: " + msg.split(":", 1)[1].strip()
        raise ValidationError(msg) from None


# ---------------------------------------------------------------------------
# Split and statistics


def split(ds: Dataset, train_fraction: float = 0.9, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random disjoint split; the training part gets ``ceil(n * fraction)`` records."""
    if not 0 < train_fraction < 1:
        raise ValidationError("train_fraction must lie strictly between 0 and 1")
    n = len(ds)
    if n < 2:
        raise ValidationError("need at least two records to split")
    n_train = min(math.ceil(n * train_fraction), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    return ds.subset(np.sort(order[:n_train])), ds.subset(np.sort(order[n_train:]))


def correlation_matrix(ds: Dataset, columns: Sequence[str]) -> np.ndarray:
    """Pearson correlation between the named columns; exact 1 on the diagonal."""
    X = np.column_stack([ds[c] for c in columns])
    if len(X) < 2:
        raise ValidationError("correlation needs at least two rows")
    C = X - X.mean(axis=0)
    norms = np.sqrt(np.sum(C * C, axis=0))
    if np.any(norms == 0):
        bad = [c for c, s in zip(columns, norms) if s == 0]
        raise ValidationError(f"constant column(s) {bad}")
    R = (C.T @ C) / np.outer(norms, norms)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return np.clip(R, -1.0, 1.0)


PERCENTILES = (1, 25, 50, 75, 99)


def stats_summary(ds: Dataset) -> dict[str, dict[str, float]]:
    """Mean, population std and percentiles (linear interpolation) for every column."""
    if len(ds) == 0:
        raise ValidationError("empty dataset")
    out = {}
    for name, col in ds.columns.items():
        entry = {"mean": float(col.mean()), "std": float(col.std())}
        for q, v in zip(PERCENTILES, np.percentile(col, PERCENTILES)):
            entry[f"p{q}"] = float(v)
        out[name] = entry
    return out


# ---------------------------------------------------------------------------
# Importance weights


def kde_importance_weights(train_features, target_features, bandwidth=None, clip=(0.1, 10.0)) -> np.ndarray:
    """Density-ratio weights ``p_target(x) / p_train(x)`` at the training points.

    Both sets are standardized with the training statistics and each density is
    a Gaussian KDE (Scott's rule unless ``bandwidth`` is given). Ratios are
    clipped to ``clip`` and then scaled to mean 1.
    """
    Xtr = np.atleast_2d(np.asarray(train_features, dtype=np.float64))
    Xtg = np.atleast_2d(np.asarray(target_features, dtype=np.float64))
    if Xtr.shape[0] < 2 or Xtg.shape[0] < 2:
        raise ValidationError("degenerate bandwidth: KDE needs at least two samples per set")
    if Xtr.shape[1] != Xtg.shape[1]:
        raise ValidationError("train and target feature widths differ")
    mean, std = Xtr.mean(axis=0), Xtr.std(axis=0)
    if np.any(std == 0) or np.any(Xtg.std(axis=0) == 0):
        raise ValidationError("degenerate bandwidth: zero-variance feature direction")
    A = (Xtr - mean) / std
    B = (Xtg - mean) / std
    try:
        kde_train = sps.gaussian_kde(A.T, bw_method=bandwidth)
        kde_target = sps.gaussian_kde(B.T, bw_method=bandwidth)
    except np.linalg.LinAlgError as exc:
        raise ValidationError(f"degenerate bandwidth: {exc}") from None
    ratio = kde_target(A.T) / kde_train(A.T)
    w = np.clip(ratio, *clip)
    return w / w.mean()


# ---------------------------------------------------------------------------
# Training on datasets and evaluation


def train_model(train: Dataset, val: Dataset | None, hp: HyperParams,
                features: Sequence[str] = DEFAULT_FEATURES, weights=None, log=None):
    return neural.train(
        train.features(features),
        train.labels,
        None if val is None else val.features(features),
        None if val is None else val.labels,
        hp,
        features,
        sample_weights=weights,
        log=log,
    )


def predict_dataset(model: Mlp, scaler: ScalerParams, ds: Dataset) -> np.ndarray:
    return neural.predict(model, neural.transform(scaler, ds.features(scaler.feature_names)))


@dataclass(frozen=True)
class EvalResult:
    mae: float
    std: float
    mape: float
    n: int


def error_metrics(y, y_hat, weights=None) -> EvalResult:
    """MAE, population std of |error| and MAPE; optionally importance-weighted."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if len(y) == 0:
        raise ValidationError("cannot evaluate an empty dataset")
    err = np.abs(y - y_hat)
    rel = err / np.abs(y)
    w = None if weights is None else np.asarray(weights, dtype=np.float64)
    mae = float(np.average(err, weights=w))
    std = float(np.sqrt(np.average((err - mae) ** 2, weights=w)))
    return EvalResult(mae=mae, std=std, mape=float(np.average(rel, weights=w)), n=len(y))


def evaluate(model: Mlp, scaler: ScalerParams, ds: Dataset, weights=None) -> EvalResult:
    return error_metrics(ds.labels, predict_dataset(model, scaler, ds), weights)


def percentage_errors(reference: Dataset, predicted: Dataset, columns: Sequence[str]) -> dict[str, float]:
    """Mean absolute percentage error per column between two aligned datasets."""
    if len(reference) != len(predicted) or len(reference) == 0:
        raise ValidationError("datasets must be non-empty and aligned")
    return {c: float(np.mean(np.abs(reference[c] - predicted[c]) / np.abs(reference[c]))) for c in columns}


# ---------------------------------------------------------------------------
# Heat maps


def heatmap_grid(model, scaler, x_feature, y_feature, x_range, y_range, resolution, fixed: dict):
    """Predictions on a regular grid over two features, all others held at ``fixed``.

    Returns ``(x_values, y_values, grid)`` with ``grid[i, j]`` at ``(x_values[j], y_values[i])``.
    """
    names = scaler.feature_names
    if x_feature == y_feature:
        raise ValidationError("heat-map features must be distinct")
    for f in (x_feature, y_feature):
        if f not in names:
            raise ValidationError(f"{f} is not a model feature")
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    nx, ny = resolution
    if nx < 2 or ny < 2:
        raise ValidationError("resolution must be at least 2 per axis")
    if x_range[0] == x_range[1] or y_range[0] == y_range[1]:
        raise ValidationError("degenerate heat-map range")
    others = [n for n in names if n not in (x_feature, y_feature)]
    missing = [n for n in others if n not in fixed]
    if missing:
        raise ValidationError(f"no fixed value for {missing}")
    xs = np.linspace(x_range[0], x_range[1], nx)
    ys = np.linspace(y_range[0], y_range[1], ny)
    XX, YY = np.meshgrid(xs, ys)
    cols = {x_feature: XX.ravel(), y_feature: YY.ravel()}
    for n in others:
        cols[n] = np.full(XX.size, float(fixed[n]))
    X = np.column_stack([cols[n] for n in names])
    grid = neural.predict(model, neural.transform(scaler, X)).reshape(ny, nx)
    return xs, ys, grid


def heatmap_csv(xs, ys, grid, x_feature="x", y_feature="y") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"{y_feature}\\{x_feature}"] + [repr(float(x)) for x in xs])
    for y, row in zip(ys, grid):
        writer.writerow([repr(float(y))] + [repr(float(v)) for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Random search


@dataclass(frozen=True)
class SearchSpace:
    """Inclusive ranges. Integers are drawn uniformly, alpha and learning rate log-uniformly."""

    n_hidden_layers: tuple[int, int] = (1, 5)
    neurons_per_layer: tuple[int, int] = (16, 512)
    alpha_l2: tuple[float, float] = (1e-5, 1e-1)
    minibatch_size: tuple[int, ...] = (256, 512, 1024, 2048, 4096)
    epochs: tuple[int, int] = (20, 150)
    learning_rate: tuple[float, float] = (1e-4, 1e-2)

    def __post_init__(self):
        for name in ("n_hidden_layers", "neurons_per_layer", "alpha_l2", "epochs", "learning_rate"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValidationError(f"empty range for {name}")
        if not self.minibatch_size:
            raise ValidationError("no minibatch sizes to choose from")
        if self.learning_rate[0] <= 0 or self.alpha_l2[0] < 0:
            raise ValidationError("learning rate must be positive and alpha non-negative")

    def sample(self, rng: np.random.Generator, seed: int) -> HyperParams:
        return HyperParams(
            n_hidden_layers=int(rng.integers(self.n_hidden_layers[0], self.n_hidden_layers[1] + 1)),
            neurons_per_layer=int(rng.integers(self.neurons_per_layer[0], self.neurons_per_layer[1] + 1)),
            alpha_l2=_log_uniform(rng, *self.alpha_l2),
            minibatch_size=int(rng.choice(self.minibatch_size)),
            epochs=int(rng.integers(self.epochs[0], self.epochs[1] + 1)),
            learning_rate=_log_uniform(rng, *self.learning_rate),
            rng_seed=seed,
        )


def _log_uniform(rng, lo, hi) -> float:
    u = rng.random()
    if lo == hi:
        return float(lo)
    if lo == 0:
        # alpha range starting at zero: uniform instead
        return float(lo + u * (hi - lo))
    return float(math.exp(math.log(lo) + u * (math.log(hi) - math.log(lo))))


@dataclass
class TrialResult:
    index: int
    hp: HyperParams
    val_mae: float
    val_std: float
    status: str = "ok"
    message: str = ""
    seconds: float = 0.0


def sample_trials(space: SearchSpace, n_trials: int, seed: int) -> list[HyperParams]:
    """Hyperparameter draws for ``n_trials`` trials.

    Trial ``i`` draws from ``SeedSequence(seed).spawn(n)[i]``; every trial
    trains with ``rng_seed=seed`` so rankings compare configurations rather
    than initializations.
    """
    if n_trials < 1:
        raise ValidationError("n_trials must be >= 1")
    children = np.random.SeedSequence(seed).spawn(n_trials)
    return [space.sample(np.random.default_rng(c), seed) for c in children]


def _run_trial(args):
    import time

    index, hp, train, val, features = args
    t0 = time.perf_counter()
    try:
        model, scaler, _ = train_model(train, val, hp, features)
        res = evaluate(model, scaler, val)
        return TrialResult(index, hp, res.mae, res.std, seconds=time.perf_counter() - t0)
    except DivergenceError as exc:
        return TrialResult(index, hp, math.inf, math.inf, "diverged", str(exc), time.perf_counter() - t0)


def random_search(space: SearchSpace, n_trials: int, train: Dataset, val: Dataset, seed: int,
                  features: Sequence[str] = DEFAULT_FEATURES, workers: int = 1) -> list[TrialResult]:
    """Train one model per sampled configuration and rank by validation MAE.

    Diverged trials are kept (MAE = inf) and sort last. Ties break on trial index,
    so the ranking does not depend on the worker count.
    """
    hps = sample_trials(space, n_trials, seed)
    jobs = [(i, hp, train, val, tuple(features)) for i, hp in enumerate(hps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = [_run_trial(j) for j in jobs]
    return sorted(results, key=lambda r: (r.val_mae, r.index))


SEARCH_CSV_FIELDS = ["rank", "trial"] + [f for f in HyperParams.__dataclass_fields__] + [
    "val_mae[K]", "val_std[K]", "status"]


def search_report_csv(results: Sequence[TrialResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SEARCH_CSV_FIELDS)
    for rank, r in enumerate(results, start=1):
        writer.writerow([rank, r.index] + list(asdict(r.hp).values()) + [
            repr(r.val_mae), repr(r.val_std), r.status])
    return buf.getvalue()
