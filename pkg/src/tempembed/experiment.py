"""End-to-end compositions of the library used by the acceptance suite and scripts/.

Each function runs the same chain as the CLI (pings on disk, ingest,
spectrograms, autoencoder, embedding field) but keeps intermediates in memory.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import cae, ingest, landuse, stratify, synth
from .embedding_field import EmbeddingField, embed_store
from .spectral import normalize_matrix, plan_square_spectrogram, spectrogram_matrix


@dataclass(frozen=True)
class EmbedConfig:
    kind: str = "conv"
    d_r: int = 32
    widths: tuple = (8, 16)
    lam: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    train_samples: int = 400
    window: str = "hann"


@dataclass
class SceneRun:
    spec: synth.SceneSpec
    store: ingest.TileSeriesStore
    params: cae.CaeParams
    field: EmbeddingField
    history: cae.TrainHistory
    polygons: list
    seconds: dict = field(default_factory=dict)


def spectrogram_dataset(store, plan, window="hann", tiles=None) -> tuple[list, np.ndarray]:
    tiles = [t for t in (store.tiles() if tiles is None else tiles) if store.counts(t).any()]
    mats = [normalize_matrix(spectrogram_matrix(store.counts(t), plan, window))[0] for t in tiles]
    return tiles, np.stack(mats) if mats else np.zeros((0, plan.side, plan.side))


def ingest_scene(spec: synth.SceneSpec, workdir=None) -> tuple[ingest.TileSeriesStore, list]:
    """Write the scene's pings and labels to disk, then read them back through ingest."""
    with tempfile.TemporaryDirectory() as tmp:
        out = workdir or tmp
        files = synth.generate_scene(spec, out)
        store = ingest.aggregate(ingest.parse_traces(files.traces).records, spec.time)
        polygons = landuse.load_labels(files.labels)
    return store, polygons


def embed_scene(spec: synth.SceneSpec, config: EmbedConfig = EmbedConfig(), workdir=None) -> SceneRun:
    seconds = {}
    t0 = time.perf_counter()
    store, polygons = ingest_scene(spec, workdir)
    seconds["ingest"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    plan = plan_square_spectrogram(spec.time.num_bins)
    _, X = spectrogram_dataset(store, plan, config.window)
    if 0 < config.train_samples < len(X):
        pick = np.sort(np.random.default_rng([spec.seed, 11]).choice(len(X), config.train_samples, replace=False))
        X = X[pick]
    if config.kind == "linear":
        arch = cae.CaeArchitecture.linear(plan.side, config.d_r)
    else:
        arch = cae.CaeArchitecture(config.kind, plan.side, config.d_r, config.widths)
    tc = cae.TrainConfig(config.lam, config.learning_rate, config.batch_size, config.epochs, spec.seed)
    result = cae.train(X, arch, tc)
    seconds["train_cae"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    emb = embed_store(store, plan, result.params, config.window)
    seconds["embed"] = time.perf_counter() - t0
    return SceneRun(spec, store, result.params, emb, result.history, polygons, seconds)


def archetype_distances(run: SceneRun, max_tiles=1500, seed=0) -> dict:
    """Median RGB distance within and across archetypes after projection and coloring."""
    proj = stratify.fit_projection(run.field)
    colors = stratify.colorize(run.field, proj)
    region_of = synth.simulate_counts(run.spec).region_of
    kinds = [r.archetype.kind for r in run.spec.regions]
    tiles = [t for t in run.field.tiles() if t in region_of]
    if len(tiles) > max_tiles:
        pick = np.random.default_rng(seed).choice(len(tiles), max_tiles, replace=False)
        tiles = [tiles[i] for i in np.sort(pick)]
    rgb = np.array([colors[t] for t in tiles], dtype=np.float64)
    lab = np.array([kinds[region_of[t]] for t in tiles])
    d = np.sqrt(((rgb[:, None, :] - rgb[None, :, :]) ** 2).sum(axis=2))
    iu = np.triu_indices(len(tiles), 1)
    same = (lab[:, None] == lab[None, :])[iu]
    dist = d[iu]
    return {"within": float(np.median(dist[same])), "cross": float(np.median(dist[~same])),
            "explained_ratio": [float(v) for v in proj.explained_ratio], "tiles": len(tiles)}


def landuse_comparison(run: SceneRun, config: landuse.ClassifierConfig = landuse.ClassifierConfig()):
    return landuse.compare_baseline(run.store, run.field, run.polygons, config)

