"""Held-out reconstruction and contraction terms across a sweep of the contraction weight."""

import argparse

import numpy as np

from tempembed import cae, experiment, synth
from tempembed.ingest import TileSeriesStore
from tempembed.spectral import plan_square_spectrogram


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 0.1, 0.5, 1.0, 2.0])
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--train", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = synth.archetype_scene(seed=args.seed)
    data = synth.simulate_counts(spec)
    store = TileSeriesStore(spec.time, {t: c for t, c in data.counts.items() if c.any()})
    plan = plan_square_spectrogram(spec.time.num_bins)
    _, X = experiment.spectrogram_dataset(store, plan)
    X = X[np.random.default_rng(args.seed).permutation(len(X))]
    train_x, held = X[:args.train], X[args.train:args.train + 200]
    arch = cae.CaeArchitecture("conv", plan.side, 32, (8, 16))
    print("lambda  held_rec  held_con")
    for lam in args.lambdas:
        res = cae.train(train_x, arch, cae.TrainConfig(lam=lam, epochs=args.epochs, seed=args.seed))
        rec, con = cae.loss_terms(res.params, held)
        print(f"{lam:6.2f}  {rec.mean():8.4f}  {con.mean():8.4f}")


if __name__ == "__main__":
    main()
