"""Render RGB stratification maps for the three-archetype scene and report color coherence."""

import argparse
import os

from tempembed import experiment, stratify, synth


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/stratification")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--cae-epochs", type=int, default=30)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    for seed in args.seeds:
        run = experiment.embed_scene(synth.archetype_scene(seed=seed), experiment.EmbedConfig(epochs=args.cae_epochs))
        proj = stratify.fit_projection(run.field)
        frames = run.field.frames()
        region = (frames[0].x, frames[0].y, frames[-1].x, frames[-1].y)
        path = os.path.join(args.out, f"archetypes_seed{seed}.png")
        stratify.render_map(stratify.colorize(run.field, proj), region, path, projection=proj)
        d = experiment.archetype_distances(run)
        print(f"seed {seed}: median RGB distance within {d['within']:.1f}, across {d['cross']:.1f}; "
              f"explained {sum(d['explained_ratio']):.3f} -> {path}")


if __name__ == "__main__":
    main()
