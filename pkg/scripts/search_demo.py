"""Small random hyperparameter search on oracle data, printing the ranking.

    python3 scripts/search_demo.py --channels 40 --trials 8 --workers 2
"""

import argparse
from dataclasses import asdict

from coolrom import datapipe, fluidprops, oracle


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--channels", type=int, default=40)
    ap.add_argument("--trials", type=int, default=8)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    table = fluidprops.load_bundled_table()
    ds = oracle.generate(table, oracle.GeneratorConfig(n_channels=args.channels, rng_seed=args.seed)).dataset
    train, val = datapipe.split(ds, 0.9, seed=args.seed)
    # a reduced space so the demo finishes in a minute or two
    space = datapipe.SearchSpace(n_hidden_layers=(1, 3), neurons_per_layer=(16, 128), epochs=(10, 30),
                                 minibatch_size=(128, 256, 512))
    results = datapipe.random_search(space, args.trials, train, val, args.seed, workers=args.workers)
    for rank, r in enumerate(results, start=1):
        hp = asdict(r.hp)
        print(f"{rank:2d}. trial {r.index:2d}  MAE {r.val_mae:8.2f} K  layers {hp['n_hidden_layers']} "
              f"x {hp['neurons_per_layer']:3d}  alpha {hp['alpha_l2']:.1e}  lr {hp['learning_rate']:.1e}  "
              f"batch {hp['minibatch_size']}  epochs {hp['epochs']}  [{r.status}]")


if __name__ == "__main__":
    main()
