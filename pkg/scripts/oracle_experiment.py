"""End-to-end desk-scale experiment on oracle data.

Generates training channels and an independent held-out set, trains a
network, and reports validation / held-out MAE with exact (oracle) and
marched (hybrid) bulk inputs. Results go to ``<out>/experiment.json``.

    python3 scripts/oracle_experiment.py --channels 300 --held-out 25 --out runs/exp
"""

import argparse
import json
import time
from dataclasses import asdict
from pathlib import Path

from coolrom import channel_rom as cr
from coolrom import datapipe, fluidprops, neural, oracle


def hybrid_dataset(table, held):
    parts = []
    for case in held.cases:
        cfg = case.march_config(2.0)
        states = cr.march(table, case.geometry, cfg)
        cols = cr.station_columns(states, case.geometry, cfg)
        cols["T_w"] = held.dataset.labels[held.dataset.channel == case.index]
        parts.append(datapipe.Dataset(cols))
    return datapipe.Dataset.concat(parts)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--channels", type=int, default=300)
    ap.add_argument("--held-out", type=int, default=25)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--hidden-layers", type=int, default=3)
    ap.add_argument("--neurons", type=int, default=128)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--batch-size", type=int, default=256)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--alpha", type=float, default=1e-4)
    ap.add_argument("--out", type=Path, default=Path("runs/experiment"))
    args = ap.parse_args()

    table = fluidprops.load_bundled_table()
    t0 = time.perf_counter()
    gen = oracle.generate(table, oracle.GeneratorConfig(n_channels=args.channels, rng_seed=args.seed))
    held = oracle.generate(table, oracle.GeneratorConfig(n_channels=args.held_out, rng_seed=args.seed),
                           index_offset=100_000)
    t_gen = time.perf_counter() - t0
    print(f"{len(gen.dataset)} training samples, {len(held.dataset)} held-out samples ({t_gen:.0f} s)")

    train, val = datapipe.split(gen.dataset, 0.9, seed=args.seed)
    hp = neural.HyperParams(n_hidden_layers=args.hidden_layers, neurons_per_layer=args.neurons,
                            alpha_l2=args.alpha, minibatch_size=args.batch_size, epochs=args.epochs,
                            learning_rate=args.lr, rng_seed=args.seed)

    def log(epoch, rep):
        if epoch % 10 == 0:
            print(f"  epoch {epoch:3d}  val MAE {rep.val_mae[-1]:.2f} K")

    model, scaler, report = datapipe.train_model(train, val, hp, log=log)
    y = gen.dataset.labels
    label_range = float(y.max() - y.min())
    val_res = datapipe.evaluate(model, scaler, val)
    exact = datapipe.evaluate(model, scaler, held.dataset)
    hybrid_ds = hybrid_dataset(table, held)
    hybrid = datapipe.evaluate(model, scaler, hybrid_ds)
    rom_mape = datapipe.percentage_errors(held.dataset, hybrid_ds, ["h_b", "p_b"])

    results = {
        "hyperparams": asdict(hp),
        "n_train_samples": len(train),
        "n_val_samples": len(val),
        "n_held_out_samples": len(held.dataset),
        "skipped_channels": len(gen.skipped) + len(held.skipped),
        "label_range_K": label_range,
        "val": asdict(val_res),
        "held_out_exact": asdict(exact),
        "held_out_hybrid": asdict(hybrid),
        "rom_mape": rom_mape,
        "seconds": time.perf_counter() - t0,
    }
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "experiment.json").write_text(json.dumps(results, indent=2) + "\n")
    neural.save_model(model, scaler, args.out / "model.json")
    print(f"val MAE {val_res.mae:.2f} K ({100 * val_res.mae / label_range:.2f} % of range)")
    print(f"held-out MAE {exact.mae:.2f} K exact inputs, {hybrid.mae:.2f} K marched inputs")
    print(f"ROM MAPE: h {100 * rom_mape['h_b']:.3f} %, p {100 * rom_mape['p_b']:.3f} %")


if __name__ == "__main__":
    main()
