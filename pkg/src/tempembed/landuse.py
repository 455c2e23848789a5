"""Residential/commercial pixel classification and area-overlap precision-recall.

The classifier sees, for every zoom-24 pixel, its own channel vector and the
mean of the active pixels in a (2r+1)x(2r+1) neighbourhood. It outputs a
two-way softmax; a pixel becomes background when its larger probability does
not exceed the confidence threshold, or when it had no activity.
"""

from __future__ import annotations

import json
import logging
import struct
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import shapely
import torch
import torch.nn.functional as F
from scipy.ndimage import uniform_filter

from . import _binio
from .embedding_field import EmbeddingField, Z16Tensor, assemble_tensor, count_tensors
from .errors import DomainError, FormatError, GeometryError, ProvenanceError
from .ingest import TileSeriesStore
from .tile_geo import FRAME_SIDE, FRAME_ZOOM, TileId, frame_pixel_centers

log = logging.getLogger(__name__)

CLASSES = ("residential", "commercial")
CODES = {"background": 0, "residential": 1, "commercial": 2}
LANDSCAPES = ("downtown", "urban", "suburb", "countryside")
THRESHOLDS = np.round(np.arange(51) * 0.02, 2)
CLASSIFIER_MAGIC = b"PXCL"
CLASSIFIER_VERSION = 1
PREDICTION_MAGIC = b"PRED"
PREDICTION_VERSION = 1


# -- labels -----------------------------------------------------------------

def _segments_cross(p1, p2, p3, p4):
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 0) - (v < 0)

    def on_segment(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    o1, o2, o3, o4 = orient(p1, p2, p3), orient(p1, p2, p4), orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_segment(p1, p2, p3)) or (o2 == 0 and on_segment(p1, p2, p4))
            or (o3 == 0 and on_segment(p3, p4, p1)) or (o4 == 0 and on_segment(p3, p4, p2)))


@dataclass(frozen=True)
class LabelPolygon:
    cls: str
    ring: tuple  # closed ((lat, lon), ...)
    landscape: str | None = None

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise GeometryError(f"unknown label class {self.cls!r}; expected one of {CLASSES}")
        if self.landscape is not None and self.landscape not in LANDSCAPES:
            raise GeometryError(f"unknown landscape {self.landscape!r}; expected one of {LANDSCAPES}")
        ring = tuple((float(a), float(b)) for a, b in self.ring)
        object.__setattr__(self, "ring", ring)
        validate_ring(ring)

    def shape(self):
        return shapely.Polygon([(lon, lat) for lat, lon in self.ring])


def validate_ring(ring) -> None:
    """Raise GeometryError naming the first offending vertex index."""
    if len(ring) < 4:
        raise GeometryError(f"ring has {len(ring)} vertices; a closed ring needs at least 4 (3 distinct + closure), "
                            f"vertex index {len(ring) - 1}")
    if ring[0] != ring[-1]:
        raise GeometryError(f"ring is not closed: vertex index {len(ring) - 1} differs from vertex 0")
    for i, (lat, lon) in enumerate(ring):
        if not (np.isfinite(lat) and np.isfinite(lon)):
            raise GeometryError(f"non-finite coordinate at vertex index {i}")
    for i in range(len(ring) - 1):
        if ring[i] == ring[i + 1]:
            raise GeometryError(f"repeated vertex at index {i + 1}")
    segs = [(ring[i], ring[i + 1]) for i in range(len(ring) - 1)]
    m = len(segs)
    for i in range(m):
        for j in range(i + 1, m):
            if j == i + 1 or (i == 0 and j == m - 1):
                continue
            if _segments_cross(*segs[i], *segs[j]):
                raise GeometryError(f"ring self-intersects: edge starting at vertex index {i} "
                                    f"crosses edge starting at vertex index {j}")
    if abs(shapely.Polygon([(b, a) for a, b in ring]).area) == 0:
        raise GeometryError("ring has zero area, vertex index 0")


def rectangle(cls, lat_min, lon_min, lat_max, lon_max, landscape=None) -> LabelPolygon:
    ring = ((lat_min, lon_min), (lat_min, lon_max), (lat_max, lon_max), (lat_max, lon_min), (lat_min, lon_min))
    return LabelPolygon(cls, ring, landscape)


def save_labels(polygons, path) -> None:
    feats = []
    for p in polygons:
        props = {"class": p.cls}
        if p.landscape is not None:
            props["landscape"] = p.landscape
        feats.append({"type": "Feature", "properties": props,
                      "geometry": {"type": "Polygon", "coordinates": [[[lon, lat] for lat, lon in p.ring]]}})
    with open(path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": feats}, fh, indent=1)
        fh.write("\n")


def load_labels(path) -> list[LabelPolygon]:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"labels file {path}: {exc}") from exc
    out = []
    for i, feat in enumerate(doc.get("features", [])):
        geom, props = feat.get("geometry") or {}, feat.get("properties") or {}
        if geom.get("type") != "Polygon":
            raise FormatError(f"labels file {path}: feature {i} is not a Polygon")
        ring = [(lat, lon) for lon, lat in geom["coordinates"][0]]
        out.append(LabelPolygon(props.get("class"), tuple(ring), props.get("landscape")))
    return out


def _inside(polygon, frame):
    lat, lon = frame_pixel_centers(frame)
    return shapely.contains_xy(polygon.shape(), lon, lat)


def rasterize_labels(polygons, z16: TileId) -> np.ndarray:
    """Per-pixel class code (0 background, 1 residential, 2 commercial).

    A pixel takes a polygon's class when its tile center lies inside the
    polygon; later polygons overwrite earlier ones.
    """
    if z16.zoom != FRAME_ZOOM:
        raise DomainError(f"expected a zoom-{FRAME_ZOOM} tile, got zoom {z16.zoom}")
    out = np.zeros((FRAME_SIDE, FRAME_SIDE), dtype=np.uint8)
    for poly in polygons:
        out[_inside(poly, z16)] = CODES[poly.cls]
    return out


def frame_landscape(polygons, z16: TileId, default="all") -> str:
    """Landscape tag covering the most pixels of the frame."""
    votes = Counter()
    for poly in polygons:
        if poly.landscape is not None:
            votes[poly.landscape] += int(_inside(poly, z16).sum())
    votes = {k: v for k, v in votes.items() if v}
    if not votes:
        return default
    return max(sorted(votes), key=lambda k: votes[k])


def flip_labels(labels: np.ndarray, fraction: float, rng) -> np.ndarray:
    """Swap residential and commercial on a random ``fraction`` of labeled pixels."""
    out = labels.copy()
    idx = np.flatnonzero(out.ravel() > 0)
    k = int(round(fraction * idx.size))
    if k:
        pick = rng.choice(idx, size=k, replace=False)
        flat = out.reshape(-1)
        flat[pick] = 3 - flat[pick]
    return out


# -- classifier -------------------------------------------------------------

@dataclass(frozen=True)
class ClassifierConfig:
    context_radius: int = 2
    hidden: tuple = (32,)
    epochs: int = 60
    learning_rate: float = 5e-3
    batch_size: int = 256
    seed: int = 0
    threshold: float = 0.5
    holdout_fraction: float = 0.5
    label_noise: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.context_radius < 0 or self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise DomainError("invalid classifier config: radius/epochs >= 0, batch >= 1, learning rate > 0")
        if not 0.0 <= self.threshold <= 1.0:
            raise DomainError(f"threshold {self.threshold} outside [0, 1]")
        if not 0.0 <= self.label_noise < 0.5:
            raise DomainError(f"label noise {self.label_noise} outside [0, 0.5)")


@dataclass(frozen=True, eq=False)
class PixelClassifierParams:
    in_channels: int
    context_radius: int
    hidden: tuple
    vector: np.ndarray
    params_checksum: int = 0

    @property
    def dims(self):
        return [2 * self.in_channels, *self.hidden, 2]

    @staticmethod
    def size_for(in_channels, hidden):
        dims = [2 * in_channels, *hidden, 2]
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        v = np.ascontiguousarray(self.vector, dtype=np.float64)
        if v.shape != (self.size_for(self.in_channels, self.hidden),):
            raise DomainError(f"classifier vector has shape {v.shape}, expected "
                              f"({self.size_for(self.in_channels, self.hidden)},)")
        object.__setattr__(self, "vector", v)


@dataclass
class TrainedClassifier:
    params: PixelClassifierParams
    losses: list[float] = field(default_factory=list)


def pixel_features(tensor: Z16Tensor, radius: int) -> np.ndarray:
    """(256, 256, 2C): own channels, then the mean over active pixels within ``radius``."""
    data = tensor.data.astype(np.float64)
    m = tensor.mask.astype(np.float64)
    if radius == 0:
        ctx = data * m[..., None]
    else:
        size = (2 * radius + 1, 2 * radius + 1, 1)
        num = uniform_filter(data * m[..., None], size=size, mode="constant")
        den = uniform_filter(m, size=size[:2], mode="constant")[..., None]
        ctx = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 0.0)
    return np.concatenate([data * m[..., None], ctx], axis=2)


def _layers(params, theta):
    dims, out, at = params.dims, [], 0
    for i in range(len(dims) - 1):
        nw = dims[i] * dims[i + 1]
        out.append((theta[at:at + nw].view(dims[i + 1], dims[i]), theta[at + nw:at + nw + dims[i + 1]]))
        at += nw + dims[i + 1]
    return out


def _logits(params, theta, feats):
    h = feats
    layers = _layers(params, theta)
    for i, (w, b) in enumerate(layers):
        h = F.linear(h, w, b)
        if i < len(layers) - 1:
            h = torch.tanh(h)
    return h


def init_classifier(in_channels, config: ClassifierConfig, params_checksum=0) -> PixelClassifierParams:
    rng = np.random.default_rng(config.seed)
    dims = [2 * in_channels, *config.hidden, 2]
    parts = []
    for i in range(len(dims) - 1):
        bound = 1.0 / np.sqrt(dims[i])
        parts.append(rng.uniform(-bound, bound, size=dims[i] * dims[i + 1]))
        parts.append(np.zeros(dims[i + 1]))
    return PixelClassifierParams(in_channels, config.context_radius, config.hidden, np.concatenate(parts),
                                 params_checksum)


def _check_tensors(tensors):
    if not tensors:
        raise DomainError("need at least one tensor")
    channels = {t.channels for t in tensors}
    if len(channels) != 1:
        raise DomainError(f"tensors disagree on channel count: {sorted(channels)}")
    sums = {t.params_checksum for t in tensors}
    if len(sums) != 1:
        raise ProvenanceError(f"tensors come from different embedding models: {sorted(f'{s:016x}' for s in sums)}")
    return channels.pop(), sums.pop()


def training_pixels(tensors, labels, radius):
    feats, targets = [], []
    for tensor, lab in zip(tensors, labels):
        if lab.shape != (FRAME_SIDE, FRAME_SIDE):
            raise DomainError(f"label mask has shape {lab.shape}")
        sel = tensor.mask & (lab > 0)
        feats.append(pixel_features(tensor, radius)[sel])
        targets.append(lab[sel].astype(np.int64) - 1)
    return np.concatenate(feats), np.concatenate(targets)


def train_classifier(tensors, labels, config: ClassifierConfig = ClassifierConfig()) -> TrainedClassifier:
    """Seeded mini-batch cross-entropy training over active labeled pixels."""
    channels, checksum = _check_tensors(tensors)
    if len(labels) != len(tensors):
        raise DomainError(f"{len(tensors)} tensors but {len(labels)} label masks")
    X, y = training_pixels(tensors, labels, config.context_radius)
    if X.shape[0] == 0:
        raise DomainError("no active labeled pixels to train on")
    if np.unique(y).size < 2:
        warnings.warn("training data contains a single class; the classifier is degenerate", RuntimeWarning)
    params = init_classifier(channels, config, checksum)
    result = TrainedClassifier(params)
    if config.epochs == 0:
        return result
    theta = torch.tensor(params.vector, dtype=torch.float64, requires_grad=True)
    opt = torch.optim.Adam([theta], lr=config.learning_rate)
    Xt, yt = torch.from_numpy(X), torch.from_numpy(y)
    rng = np.random.default_rng(config.seed)
    for epoch in range(config.epochs):
        order = torch.from_numpy(rng.permutation(X.shape[0]))
        total = 0.0
        for start in range(0, X.shape[0], config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = F.cross_entropy(_logits(params, theta, Xt[idx]), yt[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * idx.numel()
        result.losses.append(total / X.shape[0])
    vec = theta.detach().numpy().copy()
    result.params = PixelClassifierParams(channels, config.context_radius, config.hidden, vec, checksum)
    return result


@dataclass(eq=False)
class ClassMap:
    tile: TileId
    probs: np.ndarray  # (256, 256, 2): residential, commercial; zero where inactive
    mask: np.ndarray
    threshold: float = 0.5

    @property
    def confidence(self) -> np.ndarray:
        return self.probs.max(axis=2)

    @property
    def classes(self) -> np.ndarray:
        cls = (np.argmax(self.probs, axis=2) + 1).astype(np.uint8)
        cls[~self.mask | (self.confidence <= self.threshold)] = 0
        return cls


def predict_proba(tensor: Z16Tensor, params: PixelClassifierParams) -> np.ndarray:
    if tensor.channels != params.in_channels:
        raise DomainError(f"tensor has {tensor.channels} channels, classifier expects {params.in_channels}")
    if params.params_checksum != tensor.params_checksum:
        raise ProvenanceError(f"classifier trained on model {params.params_checksum:016x}, "
                              f"tensor from {tensor.params_checksum:016x}")
    feats = pixel_features(tensor, params.context_radius).reshape(-1, 2 * params.in_channels)
    with torch.no_grad():
        p = torch.softmax(_logits(params, torch.from_numpy(params.vector), torch.from_numpy(feats)), dim=1)
    probs = p.numpy().reshape(FRAME_SIDE, FRAME_SIDE, 2)
    probs[~tensor.mask] = 0.0
    return probs


def predict(tensor: Z16Tensor, params: PixelClassifierParams, threshold: float = 0.5) -> ClassMap:
    if not 0.0 <= threshold <= 1.0:
        raise DomainError(f"threshold {threshold} outside [0, 1]")
    return ClassMap(tensor.tile, predict_proba(tensor, params), tensor.mask.copy(), threshold)


# -- evaluation -------------------------------------------------------------

@dataclass(frozen=True)
class PrCurve:
    cls: str
    landscape: str
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray

    def aupr(self) -> float:
        """Step-wise area under the curve, walking thresholds from low to high."""
        if self.recall.size == 0:
            return 0.0
        r_next = np.append(self.recall[1:], 0.0)
        return float(np.sum((self.recall - r_next) * self.precision))


def pr_curve(predictions, truths, cls: str, landscape: str = "all", thresholds=THRESHOLDS) -> PrCurve:
    """Pixel-area precision and recall of ``cls`` over a threshold sweep.

    At threshold t a pixel counts as predicted ``cls`` when its probability
    for that class exceeds t. Thresholds where nothing is predicted have no
    defined precision and are left out.
    """
    if cls not in CLASSES:
        raise DomainError(f"unknown class {cls!r}")
    if len(predictions) != len(truths):
        raise DomainError(f"{len(predictions)} predictions but {len(truths)} truth masks")
    ci = CLASSES.index(cls)
    probs = np.concatenate([p.probs[..., ci].ravel() for p in predictions]) if predictions else np.zeros(0)
    truth = np.concatenate([np.asarray(t).ravel() == CODES[cls] for t in truths]) if truths else np.zeros(0, bool)
    n_truth = int(truth.sum())
    if n_truth == 0:
        raise DomainError(f"no ground-truth pixels of class {cls!r} in landscape {landscape!r}: recall undefined")
    rows = []
    for t in np.asarray(thresholds, dtype=np.float64):
        pred = probs > t
        npred = int(pred.sum())
        if npred == 0:
            continue
        tp = int((pred & truth).sum())
        rows.append((t, tp / npred, tp / n_truth, tp, npred - tp, n_truth - tp))
    cols = list(zip(*rows)) if rows else [[]] * 6
    return PrCurve(cls, landscape, np.array(cols[0], dtype=np.float64), np.array(cols[1], dtype=np.float64),
                   np.array(cols[2], dtype=np.float64), np.array(cols[3], dtype=np.int64),
                   np.array(cols[4], dtype=np.int64), np.array(cols[5], dtype=np.int64))


def split_frames(frames, holdout_fraction: float, seed: int):
    """Deterministic train/evaluation split of zoom-16 frames."""
    frames = sorted(frames)
    if len(frames) < 2:
        return frames, frames
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(frames))
    k = min(len(frames) - 1, max(1, int(round(holdout_fraction * len(frames)))))
    held = sorted(frames[i] for i in order[:k])
    train = sorted(frames[i] for i in order[k:])
    return train, held


def evaluate(predictions, truths, landscapes) -> dict[tuple[str, str], PrCurve]:
    """PR curves per (class, landscape), plus the pooled ``all`` landscape."""
    groups = {"all": list(range(len(predictions)))}
    for i, tag in enumerate(landscapes):
        if tag != "all":
            groups.setdefault(tag, []).append(i)
    out = {}
    for tag, idx in groups.items():
        for cls in CLASSES:
            try:
                out[(cls, tag)] = pr_curve([predictions[i] for i in idx], [truths[i] for i in idx], cls, tag)
            except DomainError:
                log.info("no %s pixels in landscape %s; curve skipped", cls, tag)
    return out


@dataclass
class BaselineReport:
    curves: dict  # (arm, class, landscape) -> PrCurve
    classifiers: dict  # arm -> TrainedClassifier
    train_frames: list
    eval_frames: list

    def aupr(self, arm, cls, landscape="all") -> float:
        return self.curves[(arm, cls, landscape)].aupr()

    def summary(self) -> dict:
        return {k: v.aupr() for k, v in sorted(self.curves.items())}


def _assert_fair(arms):
    names = list(arms)
    ref = arms[names[0]]
    for name in names[1:]:
        other = arms[name]
        if [t.tile for t in other] != [t.tile for t in ref]:
            raise DomainError(f"arms {names[0]} and {name} cover different frames")
        for a, b in zip(ref, other):
            if not np.array_equal(a.mask, b.mask):
                raise DomainError(f"arms {names[0]} and {name} disagree on active pixels in {a.tile}")


def run_arms(arms: dict, labels: dict, landscapes: dict, config: ClassifierConfig,
             train_frames, eval_frames) -> BaselineReport:
    """Train one classifier per arm with identical config, labels and split; evaluate each."""
    _assert_fair(arms)
    rng = np.random.default_rng([config.seed, 7])
    train_labels = [labels[f] for f in train_frames]
    if config.label_noise:
        train_labels = [flip_labels(lab, config.label_noise, rng) for lab in train_labels]
    curves, trained = {}, {}
    for arm, tensors in arms.items():
        by_frame = {t.tile: t for t in tensors}
        clf = train_classifier([by_frame[f] for f in train_frames], train_labels, config)
        trained[arm] = clf
        preds = [predict(by_frame[f], clf.params, config.threshold) for f in eval_frames]
        for (cls, tag), curve in evaluate(preds, [labels[f] for f in eval_frames],
                                          [landscapes[f] for f in eval_frames]).items():
            curves[(arm, cls, tag)] = curve
    return BaselineReport(curves, trained, list(train_frames), list(eval_frames))


def compare_baseline(store: TileSeriesStore, emb: EmbeddingField, polygons,
                     config: ClassifierConfig = ClassifierConfig()) -> BaselineReport:
    """Embedding channels against a single total-count channel, everything else held equal."""
    frames = emb.frames()
    if not frames:
        raise DomainError("embedding field is empty")
    emb_tensors = [assemble_tensor(emb, f) for f in frames]
    cnt_tensors = count_tensors(store, frames)
    labels = {f: rasterize_labels(polygons, f) for f in frames}
    landscapes = {f: frame_landscape(polygons, f) for f in frames}
    train_frames, eval_frames = split_frames(frames, config.holdout_fraction, config.seed)
    return run_arms({"embedding": emb_tensors, "count": cnt_tensors}, labels, landscapes, config,
                    train_frames, eval_frames)


# -- persistence ------------------------------------------------------------

def save_classifier(params: PixelClassifierParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CLASSIFIER_MAGIC)
        fh.write(struct.pack("<HIIQH", CLASSIFIER_VERSION, params.in_channels, params.context_radius,
                             params.params_checksum, len(params.hidden)))
        fh.write(struct.pack(f"<{len(params.hidden)}I", *params.hidden))
        fh.write(struct.pack("<Q", params.vector.size))
        fh.write(params.vector.astype("<f8").tobytes())


def load_classifier(path) -> PixelClassifierParams:
    with open(path, "rb") as fh:
        r = _binio.Reader(fh.read(), f"classifier file {path}")
    r.magic(CLASSIFIER_MAGIC)
    r.version(CLASSIFIER_VERSION)
    in_ch, radius, checksum, nh = r.unpack("<IIQH")
    hidden = r.unpack(f"<{nh}I")
    (size,) = r.unpack("<Q")
    vec = np.frombuffer(r.take(8 * size), dtype="<f8").copy()
    r.done()
    try:
        return PixelClassifierParams(in_ch, radius, tuple(hidden), vec, checksum)
    except DomainError as exc:
        raise FormatError(f"classifier file {path}: {exc}") from exc


def save_predictions(maps, path) -> None:
    """``PRED`` file: per frame the tile id, threshold and 256x256x2 f32 probabilities."""
    maps = list(maps)
    with open(path, "wb") as fh:
        fh.write(PREDICTION_MAGIC)
        fh.write(struct.pack("<HQ", PREDICTION_VERSION, len(maps)))
        for m in maps:
            fh.write(_binio.TILE.pack(m.tile.zoom, m.tile.x, m.tile.y))
            fh.write(struct.pack("<d", m.threshold))
            fh.write(np.packbits(m.mask.ravel()).tobytes())
            fh.write(np.ascontiguousarray(m.probs, dtype="<f4").tobytes())


def load_predictions(path) -> list[ClassMap]:
    with open(path, "rb") as fh:
        r = _binio.Reader(fh.read(), f"prediction file {path}")
    r.magic(PREDICTION_MAGIC)
    r.version(PREDICTION_VERSION)
    (count,) = r.unpack("<Q")
    n = FRAME_SIDE * FRAME_SIDE
    out = []
    for _ in range(count):
        zoom, x, y = r.unpack("<BII")
        (thr,) = r.unpack("<d")
        mask = np.unpackbits(np.frombuffer(r.take(n // 8), dtype=np.uint8))[:n].reshape(FRAME_SIDE, FRAME_SIDE)
        probs = np.frombuffer(r.take(4 * n * 2), dtype="<f4").reshape(FRAME_SIDE, FRAME_SIDE, 2)
        out.append(ClassMap(TileId(zoom, x, y), probs.astype(np.float64), mask.astype(bool), thr))
    r.done()
    return out


def write_pr_report(curves: dict, path) -> None:
    """CSV rows ``arm,class,landscape,threshold,precision,recall``; keys are (arm, class, landscape)."""
    with open(path, "w") as fh:
        fh.write("arm,class,landscape,threshold,precision,recall\n")
        for (arm, cls, tag) in sorted(curves):
            c = curves[(arm, cls, tag)]
            for t, p, r in zip(c.thresholds, c.precision, c.recall):
                fh.write(f"{arm},{cls},{tag},{t:.2f},{p:.6f},{r:.6f}\n")


def read_pr_report(path) -> dict:
    rows = {}
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != ["arm", "class", "landscape", "threshold", "precision", "recall"]:
            raise FormatError(f"PR report {path}: unexpected header {header}")
        for line in fh:
            arm, cls, tag, t, p, r = line.strip().split(",")
            rows.setdefault((arm, cls, tag), []).append((float(t), float(p), float(r)))
    return rows


def plot_pr_curves(curves: dict, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    tags = sorted({k[2] for k in curves})
    fig, axes = plt.subplots(1, len(tags), figsize=(4 * len(tags), 4), squeeze=False)
    for ax, tag in zip(axes[0], tags):
        for (arm, cls, t), c in sorted(curves.items()):
            if t != tag:
                continue
            ax.plot(c.recall, c.precision, "-" if arm == "embedding" else "--",
                    label=f"{arm}/{cls} AUPR={c.aupr():.2f}")
        ax.set_title(tag)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)
