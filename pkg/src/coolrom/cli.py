"""Command-line entry point: ``coolrom <subcommand> [flags]``.

Every run writes its outputs and one ``<subcommand>_manifest.json`` into
``--out-dir``. Outputs are written to a temporary file and renamed into place,
so a failing run leaves nothing behind.

Exit codes: 0 success, 2 validation, 3 convergence/divergence, 4 I/O.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from coolrom import __version__, channel_rom, datapipe, fluidprops, neural, oracle
from coolrom.channel_rom import ChannelGeometry, HeatFluxProfile, MarchConfig
from coolrom.errors import CoolromError

EXIT_CODES = {"validation": 2, "convergence": 3, "divergence": 3, "io": 4}


# ---------------------------------------------------------------------------
# helpers


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _load_table(args):
    if args.table is None:
        return fluidprops.load_bundled_table(), str(fluidprops.BUNDLED_TABLE)
    return fluidprops.load_table(args.table, gas_constant=args.gas_constant), str(args.table)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


class Run:
    """Collects outputs of one subcommand and commits them with the manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.out_dir = Path(args.out_dir)
        self.outputs: dict[str, str] = {}
        self.texts: dict[Path, str] = {}
        self.extra: dict = {}
        self.t0 = time.perf_counter()
        self.timings: dict[str, float] = {}

    def add(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        self.texts[path] = text
        self.outputs[name] = sha256_text(text)
        return path

    def commit(self) -> None:
        for path, text in self.texts.items():
            write_atomic(path, text)
        self.timings["total_s"] = time.perf_counter() - self.t0
        config = {k: v for k, v in vars(self.args).items() if k != "func"}
        manifest = {
            "subcommand": self.args.command,
            "tool_version": __version__,
            "argv": self.argv,
            "config": _jsonable(config),
            "seed": getattr(self.args, "seed", None),
            "outputs": self.outputs,
            "timings": self.timings,
            **_jsonable(self.extra),
        }
        write_atomic(self.out_dir / f"{self.args.command}_manifest.json", json.dumps(manifest, indent=2) + "\n")


# ---------------------------------------------------------------------------
# channel flags


def _add_channel_flags(p):
    g = p.add_argument_group("channel")
    g.add_argument("--width", type=float, help="channel width b [mm]")
    g.add_argument("--height", type=float, help="channel height [mm]")
    g.add_argument("--area", type=float, help="cross-section [mm^2] (with --aspect-ratio instead of width/height)")
    g.add_argument("--aspect-ratio", type=float, help="height / width")
    g.add_argument("--wall-thickness", type=float, required=True, help="hot-gas wall thickness d [mm]")
    g.add_argument("--length", type=float, default=250.0, help="channel length [mm]")
    g.add_argument("--roughness", type=float, required=True, help="sand-grain roughness [um]")
    g.add_argument("--fin-thickness", type=float, default=1.0, help="[mm]")
    g.add_argument("--mdot", type=float, help="mass flow rate [kg/s]")
    g.add_argument("--mass-flux", type=float, help="G [kg/(m^2 s)] (alternative to --mdot)")
    g.add_argument("--T-in", dest="T_in", type=float, required=True, help="inlet temperature [K]")
    g.add_argument("--p-in", type=float, help="inlet pressure [bar]")
    g.add_argument("--p-out", type=float, help="outlet pressure [bar]")
    g.add_argument("--q", type=float, help="constant heat flux [MW/m^2]")
    g.add_argument("--q-profile", help="piecewise heat flux 'z0:q0,z1:q1,...' with z in mm and q in MW/m^2")
    g.add_argument("--dz", type=float, default=2.0, help="station spacing [mm]")


def _channel_from_args(args):
    from coolrom.errors import ValidationError

    if args.width is not None and args.height is not None:
        geom = ChannelGeometry(args.width, args.height, args.wall_thickness, args.length,
                               args.roughness, args.fin_thickness)
    elif args.area is not None and args.aspect_ratio is not None:
        geom = ChannelGeometry.from_area(args.area, args.aspect_ratio, args.wall_thickness, args.length,
                                         args.roughness, args.fin_thickness)
    else:
        raise ValidationError("give either --width/--height or --area/--aspect-ratio")
    if (args.mdot is None) == (args.mass_flux is None):
        raise ValidationError("give exactly one of --mdot and --mass-flux")
    mdot = args.mdot if args.mdot is not None else args.mass_flux * geom.area * 1e-6
    if (args.q is None) == (args.q_profile is None):
        raise ValidationError("give exactly one of --q and --q-profile")
    if args.q is not None:
        profile = HeatFluxProfile.constant(args.q * 1e6)
    else:
        try:
            pairs = [item.split(":") for item in args.q_profile.split(",")]
            profile = HeatFluxProfile(tuple(float(z) for z, _ in pairs), tuple(float(q) * 1e6 for _, q in pairs))
        except ValueError:
            raise ValidationError(f"cannot parse --q-profile {args.q_profile!r}") from None
    cfg = MarchConfig(
        mdot=mdot,
        T_in=args.T_in,
        heat_flux=profile,
        p_in=None if args.p_in is None else args.p_in * 1e5,
        p_out=None if args.p_out is None else args.p_out * 1e5,
        dz=args.dz,
    )
    return geom, cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args, run):
    table, table_src = _load_table(args)
    cfg = oracle.GeneratorConfig(
        n_channels=args.n_channels,
        rng_seed=args.seed,
        near_critical_fraction=args.near_critical_fraction,
        label_noise_std=args.label_noise,
        length_mm=args.length,
    )
    t0 = time.perf_counter()
    res = oracle.generate(table, cfg, index_offset=args.index_offset)
    run.timings["generate_s"] = time.perf_counter() - t0
    run.add(args.output, datapipe.dataset_to_csv(res.dataset))
    run.extra["table"] = table_src
    run.extra["oracle"] = res.manifest(cfg)
    print(f"generated {len(res.dataset)} samples from {len(res.cases)} channels "
          f"({len(res.skipped)} skipped) -> {run.out_dir / args.output}")


def cmd_stats(args, run):
    ds = datapipe.load_dataset(args.data, mode="inference")
    summary = datapipe.stats_summary(ds)
    keys = ["mean", "std"] + [f"p{q}" for q in datapipe.PERCENTILES]
    lines = ["column," + ",".join(keys)]
    for name, entry in summary.items():
        lines.append(name + "," + ",".join(repr(entry[k]) for k in keys))
    run.add("stats.csv", "\n".join(lines) + "\n")
    cols = list(args.columns.split(",")) if args.columns else [c for c in ds.columns if np.ptp(ds[c]) > 0]
    R = datapipe.correlation_matrix(ds, cols)
    corr = ["," + ",".join(cols)] + [c + "," + ",".join(repr(float(v)) for v in row) for c, row in zip(cols, R)]
    run.add("correlation.csv", "\n".join(corr) + "\n")
    print(f"{'column':>6} " + " ".join(f"{k:>12}" for k in keys))
    for name, entry in summary.items():
        print(f"{name:>6} " + " ".join(f"{entry[k]:12.5g}" for k in keys))


def _hyperparams(args):
    return neural.HyperParams(
        n_hidden_layers=args.hidden_layers,
        neurons_per_layer=args.neurons,
        alpha_l2=args.alpha,
        minibatch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.lr,
        rng_seed=args.seed,
    )


def _features(args):
    return tuple(args.features.split(",")) if args.features else datapipe.DEFAULT_FEATURES


def _train_val(args):
    data = datapipe.load_dataset(args.data)
    if args.val:
        return data, datapipe.load_dataset(args.val)
    return datapipe.split(data, args.train_fraction, args.seed)


def cmd_train(args, run):
    hp = _hyperparams(args)
    features = _features(args)
    train, val = _train_val(args)
    weights = None
    if args.importance_target:
        target = datapipe.load_dataset(args.importance_target, mode="inference")
        weights = datapipe.kde_importance_weights(train.features(features), target.features(features))
    if hp.epochs == 0:
        print("warning: --epochs 0, saving the untrained initial network", file=sys.stderr)

    def log(epoch, rep):
        if args.verbose:
            print(f"epoch {epoch:4d}  cost {rep.train_cost[-1]:.6g}  val MAE {rep.val_mae[-1]:.3f} K", file=sys.stderr)

    t0 = time.perf_counter()
    model, scaler, report = datapipe.train_model(train, val, hp, features, weights, log=log)
    run.timings["train_s"] = time.perf_counter() - t0
    run.add(args.model_name, neural.dumps_model(model, scaler))
    rows = [[i + 1, report.train_cost[i], report.val_mae[i], report.val_mae_std[i]] for i in range(report.epochs_run)]
    run.add("train_report.csv", _csv_text(["epoch", "train_cost", "val_mae[K]", "val_mae_std[K]"], rows))
    run.extra["hyperparams"] = asdict(hp)
    run.extra["weights_checksum"] = report.checksum
    run.extra["epoch_seconds"] = report.epoch_seconds
    res = datapipe.evaluate(model, scaler, val)
    print(f"trained {model.layer_dims} on {len(train)} samples; validation MAE {res.mae:.2f} K (std {res.std:.2f} K)")


def cmd_search(args, run):
    train, val = _train_val(args)
    space = datapipe.SearchSpace()
    if args.space:
        raw = json.loads(Path(args.space).read_text())
        space = datapipe.SearchSpace(**{k: tuple(v) for k, v in raw.items()})
    t0 = time.perf_counter()
    results = datapipe.random_search(space, args.n_trials, train, val, args.seed, _features(args), args.workers)
    run.timings["search_s"] = time.perf_counter() - t0
    run.add("search.csv", datapipe.search_report_csv(results))
    run.extra["space"] = asdict(space)
    run.extra["trial_seconds"] = {r.index: r.seconds for r in results}
    best = results[0]
    print(f"best of {len(results)} trials: #{best.index} val MAE {best.val_mae:.2f} K  {asdict(best.hp)}")


def cmd_eval(args, run):
    model, scaler = neural.load_model(args.model)
    ds = datapipe.load_dataset(args.data)
    weights = None
    if args.importance_target:
        target = datapipe.load_dataset(args.importance_target, mode="inference")
        weights = datapipe.kde_importance_weights(ds.features(scaler.feature_names),
                                                  target.features(scaler.feature_names))
    res = datapipe.evaluate(model, scaler, ds, weights)
    run.add("eval.json", json.dumps(asdict(res), indent=2) + "\n")
    print(f"MAE {res.mae:.2f} K  std {res.std:.2f} K  MAPE {100 * res.mape:.2f} %  (n={res.n})")


def cmd_march(args, run):
    table, table_src = _load_table(args)
    geom, cfg = _channel_from_args(args)
    t0 = time.perf_counter()
    states = channel_rom.march(table, geom, cfg)
    run.timings["march_s"] = time.perf_counter() - t0
    header, rows = channel_rom.march_rows(states)
    run.add(args.output or "march.csv", _csv_text(header, rows))
    run.extra["table"] = table_src
    out = states[-1]
    print(f"{len(states)} stations; outlet p {out.p_stat / 1e5:.3f} bar, T_b {out.T_b:.2f} K, "
          f"h_tot {out.h_tot / 1e3:.2f} kJ/kg")


def cmd_predict(args, run):
    table, table_src = _load_table(args)
    model, scaler = neural.load_model(args.model)
    geom, cfg = _channel_from_args(args)
    t0 = time.perf_counter()
    pairs = channel_rom.predict_channel(table, geom, cfg, model, scaler)
    elapsed = time.perf_counter() - t0
    run.timings["predict_channel_s"] = elapsed
    states = [s for s, _ in pairs]
    header, rows = channel_rom.march_rows(states, [t for _, t in pairs])
    run.add(args.output or "predict.csv", _csv_text(header, rows))
    run.extra["table"] = table_src
    t_max = max(t for _, t in pairs)
    print(f"channel 0: {len(pairs)} stations in {1e3 * elapsed:.1f} ms; max T_w {t_max:.1f} K")


def cmd_heatmap(args, run):
    model, scaler = neural.load_model(args.model)
    fixed = {}
    if args.fixed_from:
        ds = datapipe.load_dataset(args.fixed_from, mode="inference")
        fixed = {n: float(np.median(ds[n])) for n in scaler.feature_names}
    if args.fixed:
        from coolrom.errors import ValidationError

        for item in args.fixed.split(","):
            name, sep, val = item.partition("=")
            if not sep:
                raise ValidationError(f"--fixed expects name=value, got {item!r}")
            fixed[name.strip()] = float(val)
    xr = tuple(float(v) for v in args.x_range.split(","))
    yr = tuple(float(v) for v in args.y_range.split(","))
    xs, ys, grid = datapipe.heatmap_grid(model, scaler, args.x, args.y, xr, yr,
                                         (args.resolution, args.resolution), fixed)
    run.add(args.output or "heatmap.csv", datapipe.heatmap_csv(xs, ys, grid, args.x, args.y))
    run.extra["fixed"] = fixed
    print(f"{args.resolution}x{args.resolution} grid over ({args.x}, {args.y}); "
          f"T_w {grid.min():.1f}..{grid.max():.1f} K")


# ---------------------------------------------------------------------------
# parser


def _positive_int(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {val}")
    return val


def _non_negative_int(text):
    val = int(text)
    if val < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {val}")
    return val


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--table", type=Path, help="property-table CSV (default: bundled pseudo-methane)")
    common.add_argument("--gas-constant", type=float, help="specific gas constant [J/(kg K)] if the table lacks #R=")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")

    parser = argparse.ArgumentParser(prog="coolrom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="synthetic labeled channel data")
    p.add_argument("--n-channels", type=_positive_int, default=300)
    p.add_argument("--index-offset", type=_non_negative_int, default=0)
    p.add_argument("--near-critical-fraction", type=float, default=0.3)
    p.add_argument("--label-noise", type=float, default=0.0, help="Gaussian label noise std [K]")
    p.add_argument("--length", type=float, default=250.0, help="channel length [mm]")
    p.add_argument("--output", default="dataset.csv")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("stats", parents=[common], help="column statistics and correlation matrix")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--columns", help="comma-separated columns for the correlation matrix")
    p.set_defaults(func=cmd_stats)

    def add_training(p):
        p.add_argument("--data", type=Path, required=True, help="labeled dataset CSV")
        p.add_argument("--val", type=Path, help="validation CSV (default: random split of --data)")
        p.add_argument("--train-fraction", type=float, default=0.9)
        p.add_argument("--features", help="comma-separated feature names")

    p = sub.add_parser("train", parents=[common], help="train the wall-temperature network")
    add_training(p)
    p.add_argument("--hidden-layers", type=_positive_int, default=3)
    p.add_argument("--neurons", type=_positive_int, default=128)
    p.add_argument("--alpha", type=float, default=1e-4, help="L2 coefficient")
    p.add_argument("--batch-size", type=_positive_int, default=256)
    p.add_argument("--epochs", type=_non_negative_int, default=60)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--importance-target", type=Path, help="dataset whose input density the loss is weighted to")
    p.add_argument("--model-name", default="model.json")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", parents=[common], help="random hyperparameter search")
    add_training(p)
    p.add_argument("--n-trials", type=_positive_int, default=10)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--space", type=Path, help="JSON object of ranges overriding the default search space")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", parents=[common], help="MAE / std / MAPE of a model on a labeled dataset")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--importance-target", type=Path, help="weight errors toward this dataset's input density")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("march", parents=[common], help="march pressure and enthalpy along one channel")
    _add_channel_flags(p)
    p.add_argument("--output")
    p.set_defaults(func=cmd_march)

    p = sub.add_parser("predict", parents=[common], help="march a channel and predict wall temperatures")
    _add_channel_flags(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("heatmap", parents=[common], help="2-D sweep of two model inputs")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--x-range", required=True, help="min,max")
    p.add_argument("--y-range", required=True, help="min,max")
    p.add_argument("--resolution", type=int, default=50)
    p.add_argument("--fixed", help="name=value,... for the remaining inputs")
    p.add_argument("--fixed-from", type=Path, help="use column medians of this dataset for unset inputs")
    p.add_argument("--output")
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    run = Run(args, argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always", channel_rom.EnvelopeWarning)
            args.func(args, run)
        run.commit()
    except CoolromError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CODES[exc.category]
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
