"""Command-line driver for the ping -> store -> spectrogram -> embedding -> land-use pipeline.

Configuration is an INI file (one section per stage) overlaid with
``--set section.key=value`` flags. Paths in ``[paths]`` are relative to
``paths.workdir``. Logs go to stderr; every subcommand also writes a JSON run
record under ``<workdir>/logs/``.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, cae, embedding_field, ingest, landuse, spectral, stratify, synth
from .errors import ConfigError, DomainError, FormatError, NumericError, PipelineError
from .tile_geo import TileId

log = logging.getLogger("tempembed")

EXIT_USAGE, EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERIC, EXIT_IO = 1, 2, 3, 4, 5

DEFAULTS = {
    "pipeline": {"seed": "0", "threads": ""},
    "paths": {
        "workdir": "work",
        "traces": "traces.csv",
        "labels": "labels.geojson",
        "manifest": "manifest.txt",
        "store": "store.tsst",
        "dft": "dft.csv",
        "spectrograms": "spectrograms.spec",
        "params": "cae.caep",
        "cae_history": "cae_history.csv",
        "field": "field.temb",
        "projection": "projection.txt",
        "map": "stratification.png",
        "classifier_embedding": "classifier_embedding.pxcl",
        "classifier_count": "classifier_count.pxcl",
        "predictions_embedding": "predictions_embedding.pred",
        "predictions_count": "predictions_count.pred",
        "report": "pr_report.csv",
        "report_plot": "pr_curves.png",
        "report_summary": "aupr.txt",
    },
    "time": {"t_start": str(synth.COARSE_TIME.t_start), "delta_t": str(synth.COARSE_TIME.delta_t),
             "num_bins": str(synth.COARSE_TIME.num_bins)},
    "synth": {"scene": "landuse-equal", "frames_x": "2", "frames_y": "2", "slots": "3", "base": "0.4",
              "size_min": "8", "size_max": "12", "volume_ratio": "0.5"},
    "spectral": {"window_len": "", "stride": "", "window": "hann"},
    "cae": {"kind": "conv", "d_r": "32", "widths": "8,16", "activation": "tanh", "lambda": "0.5",
            "learning_rate": "0.001", "batch_size": "32", "epochs": "30", "optimizer": "adam",
            "train_samples": "400"},
    "classifier": {"context_radius": "2", "hidden": "32", "epochs": "60", "learning_rate": "0.005",
                   "batch_size": "256", "threshold": "0.5", "holdout_fraction": "0.5", "label_noise": "0.0"},
}


class Config:
    def __init__(self, parser: configparser.ConfigParser, path=None):
        self.cp = parser
        self.path = path

    @classmethod
    def load(cls, path=None, overrides=()):
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_dict(DEFAULTS)
        if path is not None:
            if not os.path.exists(path):
                raise ConfigError(f"config file {path} does not exist")
            try:
                cp.read(path)
            except configparser.Error as exc:
                raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
        for item in overrides:
            key, sep, value = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, name, value.strip())
        return cls(cp, path)

    def raw(self, section, key):
        return self.cp.get(section, key, fallback="").strip()

    def _typed(self, section, key, conv, what):
        value = self.raw(section, key)
        if value == "":
            raise ConfigError(f"missing config value {section}.{key}")
        try:
            return conv(value)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key} = {value!r} is not a valid {what}") from exc

    def int(self, section, key):
        return self._typed(section, key, int, "integer")

    def float(self, section, key):
        return self._typed(section, key, float, "number")

    def ints(self, section, key):
        value = self.raw(section, key)
        try:
            return tuple(int(v) for v in value.split(",") if v.strip())
        except ValueError as exc:
            raise ConfigError(f"{section}.{key} = {value!r} is not a comma-separated integer list") from exc

    def path_for(self, key):
        value = self.raw("paths", key)
        if not value:
            raise ConfigError(f"missing config value paths.{key}")
        workdir = self.raw("paths", "workdir") or "."
        return value if os.path.isabs(value) else os.path.join(workdir, value)

    def input_path(self, key):
        p = self.path_for(key)
        if not os.path.exists(p):
            raise ConfigError(f"input paths.{key} = {p} does not exist")
        return p

    def output_path(self, key):
        p = self.path_for(key)
        os.makedirs(os.path.dirname(p) or ".", exist_ok=True)
        return p

    def seed(self):
        return self.int("pipeline", "seed")

    def time_spec(self):
        try:
            return ingest.TimeSpec(self.int("time", "t_start"), self.int("time", "delta_t"), self.int("time", "num_bins"))
        except DomainError as exc:
            raise ConfigError(f"[time]: {exc}") from exc

    def section(self, name):
        return dict(self.cp.items(name)) if self.cp.has_section(name) else {}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects inputs/outputs of one subcommand and writes its run record."""

    def __init__(self, name, cfg: Config):
        self.name, self.cfg = name, cfg
        self.inputs, self.outputs = {}, {}
        self.started = time.time()

    def input(self, key):
        p = self.cfg.input_path(key)
        self.inputs[key] = p
        return p

    def output(self, key):
        p = self.cfg.output_path(key)
        self.outputs[key] = p
        return p

    def finish(self, sections=(), **extra):
        record = {
            "subcommand": self.name,
            "version": __version__,
            "seed": self.cfg.seed(),
            "config": {s: self.cfg.section(s) for s in sections},
            "inputs": {k: {"path": p, "sha256": _sha256(p)} for k, p in self.inputs.items()},
            "outputs": {k: {"path": p, "sha256": _sha256(p)} for k, p in self.outputs.items() if os.path.exists(p)},
            "seconds": round(time.time() - self.started, 3),
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            **extra,
        }
        logdir = os.path.join(self.cfg.raw("paths", "workdir") or ".", "logs")
        os.makedirs(logdir, exist_ok=True)
        with open(os.path.join(logdir, f"{self.name}.json"), "w") as fh:
            json.dump(record, fh, indent=1, default=str)
            fh.write("\n")
        log.info("%s finished in %.2fs", self.name, record["seconds"])


# -- subcommands ------------------------------------------------------------

def _scene(cfg):
    kind = cfg.raw("synth", "scene")
    kw = dict(frames_x=cfg.int("synth", "frames_x"), frames_y=cfg.int("synth", "frames_y"),
              slots=cfg.int("synth", "slots"), size=(cfg.int("synth", "size_min"), cfg.int("synth", "size_max")),
              time=cfg.time_spec(), seed=cfg.seed())
    base = cfg.float("synth", "base")
    if kind == "landuse-equal":
        return synth.landuse_scene(base=base, equal_volume=True, **kw)
    if kind == "landuse-volume":
        return synth.landuse_scene(base=base, equal_volume=False, volume_ratio=cfg.float("synth", "volume_ratio"), **kw)
    if kind == "archetypes":
        return synth.archetype_scene(base=base, **kw)
    raise ConfigError(f"synth.scene = {kind!r}; choose landuse-equal, landuse-volume or archetypes")


def cmd_synth(cfg, args):
    run = Run("synth", cfg)
    spec = _scene(cfg)
    out = {k: run.output(k) for k in ("traces", "labels", "manifest")}
    tmp_dir = os.path.dirname(out["traces"]) or "."
    files = synth.generate_scene(spec, tmp_dir, prefix=".synth")
    for key, produced in (("traces", files.traces), ("labels", files.labels), ("manifest", files.manifest)):
        os.replace(produced, out[key])
    run.finish(["synth", "time"], tiles=len(files.data.counts))


def cmd_ingest(cfg, args):
    run = Run("ingest", cfg)
    parsed = ingest.parse_traces(run.input("traces"))
    store = ingest.aggregate(parsed.records, cfg.time_spec())
    ingest.save_store(store, run.output("store"))
    s = store.stats
    run.finish(["time"], records=len(parsed.records), skipped=parsed.skipped, accepted=s.accepted,
               out_of_horizon=s.out_of_horizon, out_of_band=s.out_of_band, tiles=len(store))


def _plan(cfg, T):
    W, s = cfg.raw("spectral", "window_len"), cfg.raw("spectral", "stride")
    if W or s:
        plan = spectral.SpectrogramPlan(cfg.int("spectral", "window_len"), cfg.int("spectral", "stride"))
        plan.check(T)
        return plan
    return spectral.plan_square_spectrogram(T)


def _tile_filter(args):
    if not getattr(args, "tile", None):
        return None
    try:
        z, x, y = (int(v) for v in args.tile.split("/"))
        return TileId(z, x, y)
    except ValueError as exc:
        raise ConfigError(f"--tile {args.tile!r} is not zoom/x/y") from exc


def cmd_dft(cfg, args):
    run = Run("dft", cfg)
    store = ingest.load_store(run.input("store"))
    only = _tile_filter(args)
    T = store.spec.num_bins
    with open(run.output("dft"), "w") as fh:
        fh.write("zoom,x,y," + ",".join(f"k{k}" for k in range(T)) + "\n")
        fh.write("hertz,,," + ",".join(repr(spectral.harmonic(k, store.spec).hertz) for k in range(T)) + "\n")
        for tile in store.tiles():
            if only is not None and tile != only:
                continue
            amp = spectral.amplitude_spectrum(spectral.dft(store.counts(tile), store.spec))
            fh.write(f"{tile.zoom},{tile.x},{tile.y}," + ",".join(f"{a:.6g}" for a in amp) + "\n")
    run.finish(["time"])


def cmd_spectrogram(cfg, args):
    run = Run("spectrogram", cfg)
    store = ingest.load_store(run.input("store"))
    plan = _plan(cfg, store.spec.num_bins)
    window = cfg.raw("spectral", "window") or "hann"
    specs = []
    for tile in store.tiles():
        series = store.series(tile)
        if series.counts.any():
            specs.append(spectral.normalize_spectrogram(spectral.spectrogram(series, plan, window)))
    spectral.save_spectrograms(specs, run.output("spectrograms"))
    run.finish(["spectral"], window_len=plan.window_len, stride=plan.stride, side=plan.side, count=len(specs))


def _arch(cfg, side):
    kind = cfg.raw("cae", "kind")
    d_r = cfg.int("cae", "d_r")
    if kind == "linear":
        return cae.CaeArchitecture.linear(side, d_r)
    return cae.CaeArchitecture(kind, side, d_r, cfg.ints("cae", "widths"), cfg.raw("cae", "activation") or "tanh")


def cmd_train_cae(cfg, args):
    run = Run("train-cae", cfg)
    specs = spectral.load_spectrograms(run.input("spectrograms"))
    if not specs:
        raise DomainError("no spectrograms to train on")
    X = np.stack([s.matrix for s in specs])
    n = cfg.int("cae", "train_samples")
    if 0 < n < len(X):
        pick = np.sort(np.random.default_rng([cfg.seed(), 11]).choice(len(X), n, replace=False))
        X = X[pick]
    tc = cae.TrainConfig(cfg.float("cae", "lambda"), cfg.float("cae", "learning_rate"), cfg.int("cae", "batch_size"),
                         cfg.int("cae", "epochs"), cfg.seed(), cfg.raw("cae", "optimizer") or "adam")
    result = cae.train(X, _arch(cfg, X.shape[1]), tc)
    cae.save_params(result.params, run.output("params"))
    with open(run.output("cae_history"), "w") as fh:
        fh.write("epoch,total,rec,con\n")
        for i, (a, b, c) in enumerate(zip(result.history.total, result.history.rec, result.history.con), 1):
            fh.write(f"{i},{a!r},{b!r},{c!r}\n")
    run.finish(["cae"], samples=len(X), checksum=f"{result.params.checksum():016x}")


def cmd_embed(cfg, args):
    run = Run("embed", cfg)
    store = ingest.load_store(run.input("store"))
    params = cae.load_params(run.input("params"))
    plan = _plan(cfg, store.spec.num_bins)
    emb = embedding_field.embed_store(store, plan, params, cfg.raw("spectral", "window") or "hann")
    embedding_field.save_field(emb, run.output("field"))
    run.finish(["spectral"], entries=len(emb))


def cmd_project(cfg, args):
    run = Run("project", cfg)
    emb = embedding_field.load_field(run.input("field"))
    proj = stratify.fit_projection(emb)
    stratify.save_projection(proj, run.output("projection"))
    run.finish([], explained_ratio=[float(v) for v in proj.explained_ratio])


def cmd_render(cfg, args):
    run = Run("render", cfg)
    emb = embedding_field.load_field(run.input("field"))
    proj = stratify.load_projection(run.input("projection"))
    colors = stratify.colorize(emb, proj)
    frames = emb.frames()
    if not frames:
        raise DomainError("embedding field is empty; nothing to render")
    region = (min(f.x for f in frames), min(f.y for f in frames), max(f.x for f in frames), max(f.y for f in frames))
    stratify.render_map(colors, region, run.output("map"), projection=proj)
    run.outputs["map_sidecar"] = run.outputs["map"] + ".txt"
    run.finish([], region=region)


def _clf_config(cfg):
    return landuse.ClassifierConfig(
        context_radius=cfg.int("classifier", "context_radius"), hidden=cfg.ints("classifier", "hidden"),
        epochs=cfg.int("classifier", "epochs"), learning_rate=cfg.float("classifier", "learning_rate"),
        batch_size=cfg.int("classifier", "batch_size"), seed=cfg.seed(),
        threshold=cfg.float("classifier", "threshold"), holdout_fraction=cfg.float("classifier", "holdout_fraction"),
        label_noise=cfg.float("classifier", "label_noise"))


def _arms(run):
    store = ingest.load_store(run.input("store"))
    emb = embedding_field.load_field(run.input("field"))
    frames = emb.frames()
    if not frames:
        raise DomainError("embedding field is empty")
    arms = {"embedding": [embedding_field.assemble_tensor(emb, f) for f in frames],
            "count": embedding_field.count_tensors(store, frames)}
    return frames, arms


def cmd_train_classifier(cfg, args):
    run = Run("train-classifier", cfg)
    conf = _clf_config(cfg)
    frames, arms = _arms(run)
    polygons = landuse.load_labels(run.input("labels"))
    train_frames, _ = landuse.split_frames(frames, conf.holdout_fraction, conf.seed)
    labels = [landuse.rasterize_labels(polygons, f) for f in train_frames]
    if conf.label_noise:
        rng = np.random.default_rng([conf.seed, 7])
        labels = [landuse.flip_labels(lab, conf.label_noise, rng) for lab in labels]
    losses = {}
    for arm, tensors in arms.items():
        by_frame = {t.tile: t for t in tensors}
        clf = landuse.train_classifier([by_frame[f] for f in train_frames], labels, conf)
        landuse.save_classifier(clf.params, run.output(f"classifier_{arm}"))
        losses[arm] = clf.losses[-1] if clf.losses else None
    run.finish(["classifier"], train_frames=[str(f) for f in train_frames], final_loss=losses)


def cmd_predict(cfg, args):
    run = Run("predict", cfg)
    conf = _clf_config(cfg)
    frames, arms = _arms(run)
    for arm, tensors in arms.items():
        params = landuse.load_classifier(run.input(f"classifier_{arm}"))
        maps = [landuse.predict(t, params, conf.threshold) for t in tensors]
        landuse.save_predictions(maps, run.output(f"predictions_{arm}"))
    run.finish(["classifier"], frames=len(frames))


def cmd_evaluate(cfg, args):
    run = Run("evaluate", cfg)
    conf = _clf_config(cfg)
    preds = {arm: landuse.load_predictions(run.input(f"predictions_{arm}")) for arm in ("embedding", "count")}
    polygons = landuse.load_labels(run.input("labels"))
    frames = [m.tile for m in preds["embedding"]]
    if [m.tile for m in preds["count"]] != frames:
        raise FormatError("embedding and count predictions cover different frames")
    _, eval_frames = landuse.split_frames(frames, conf.holdout_fraction, conf.seed)
    keep = set(eval_frames)
    truths = [landuse.rasterize_labels(polygons, f) for f in eval_frames]
    tags = [landuse.frame_landscape(polygons, f) for f in eval_frames]
    curves = {}
    for arm, maps in preds.items():
        chosen = [m for m in maps if m.tile in keep]
        for (cls, tag), curve in landuse.evaluate(chosen, truths, tags).items():
            curves[(arm, cls, tag)] = curve
    landuse.write_pr_report(curves, run.output("report"))
    landuse.plot_pr_curves(curves, run.output("report_plot"))
    with open(run.output("report_summary"), "w") as fh:
        fh.write("arm,class,landscape,aupr\n")
        for (arm, cls, tag), c in sorted(curves.items()):
            fh.write(f"{arm},{cls},{tag},{c.aupr():.6f}\n")
    run.finish(["classifier"], eval_frames=[str(f) for f in eval_frames],
               aupr={f"{a}/{c}/{t}": v.aupr() for (a, c, t), v in sorted(curves.items())})


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic ping corpus, labels and manifest"),
    "ingest": (cmd_ingest, "aggregate a trace file into a per-tile series store"),
    "dft": (cmd_dft, "write per-tile DFT amplitude spectra as CSV"),
    "spectrogram": (cmd_spectrogram, "write normalized square spectrograms for every active tile"),
    "train-cae": (cmd_train_cae, "train the contractive autoencoder on spectrograms"),
    "embed": (cmd_embed, "encode every active tile into the embedding field"),
    "project": (cmd_project, "fit the 3-D projection of the embedding field"),
    "render": (cmd_render, "render the RGB stratification map"),
    "train-classifier": (cmd_train_classifier, "train embedding and count classifiers"),
    "predict": (cmd_predict, "predict class maps for every frame with both classifiers"),
    "evaluate": (cmd_evaluate, "area-overlap precision/recall report for both arms"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("-c", "--config", help="INI config file; sections match subcommand stages")
    common.add_argument("-s", "--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="override pipeline.seed")
    common.add_argument("--threads", type=int, help="cap worker threads (default: machine parallelism)")
    common.add_argument("--workdir", help="override paths.workdir")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    formats = (f"store TSST v{ingest.STORE_VERSION}, spectrograms SPEC v{spectral.SPEC_VERSION}, "
               f"params CAEP v{cae.PARAM_VERSION}, field TEMB v{embedding_field.FIELD_VERSION}, "
               f"classifier PXCL v{landuse.CLASSIFIER_VERSION}, predictions PRED v{landuse.PREDICTION_VERSION}")
    parser = _Parser(prog="tempembed", description=__doc__.split("\n")[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"tempembed {__version__} ({formats})")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, parents=[common], description=help_text)
        if name == "dft":
            p.add_argument("--tile", help="restrict output to one tile, as zoom/x/y")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        overrides = list(getattr(args, "set", []))
        for flag, key in (("seed", "pipeline.seed"), ("workdir", "paths.workdir"), ("threads", "pipeline.threads")):
            if hasattr(args, flag):
                overrides.append(f"{key}={getattr(args, flag)}")
        cfg = Config.load(getattr(args, "config", None), overrides)
        threads = cfg.raw("pipeline", "threads")
        if threads:
            import torch

            torch.set_num_threads(max(1, int(threads)))
        COMMANDS[args.command][0](cfg, args)
    except (ConfigError, DomainError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except FormatError as exc:
        log.error("%s", exc)
        return EXIT_FORMAT
    except NumericError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except PipelineError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
