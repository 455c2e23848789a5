"""Landscape stratification: linear 3-D projection of embeddings, RGB coding, raster maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .embedding_field import EmbeddingField
from .errors import DomainError
from .tile_geo import FRAME_SIDE, FRAME_ZOOM, TileId, parent_z16, pixel_index, tile_bounds

BACKGROUND = (64, 64, 64)


@dataclass(frozen=True)
class Projection3:
    method: str
    components: np.ndarray  # (3, d_r)
    mean: np.ndarray  # (d_r,)
    explained_variance: np.ndarray  # (3,)
    explained_ratio: np.ndarray  # (3,)

    def apply(self, vectors) -> np.ndarray:
        return (np.asarray(vectors, dtype=np.float64) - self.mean) @ self.components.T


def fit_projection(emb: EmbeddingField, tol: float = 1e-9) -> Projection3:
    """Principal axes of the centered embeddings, each signed so its largest loading is positive."""
    X = emb.matrix()
    if X.shape[0] < 4:
        raise DomainError(f"need at least 4 embeddings to fit a projection, got {X.shape[0]}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / X.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    rank = int(np.sum(evals > tol * max(evals[0], np.finfo(float).tiny)))
    if rank < 3:
        raise DomainError(f"embeddings span rank {rank}, a 3-D projection needs rank >= 3")
    comps = evecs[:, :3].T.copy()
    for i in range(3):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    total = evals.sum()
    return Projection3("pca", comps, mean, evals[:3].copy(), evals[:3] / total)


def colorize(emb: EmbeddingField, projection: Projection3) -> dict[TileId, tuple[int, int, int]]:
    """Min-max scale each projected axis over the field to 0..255."""
    tiles = emb.tiles()
    if not tiles:
        return {}
    if projection.components.shape[1] != emb.d_r:
        raise DomainError(f"projection expects d_r={projection.components.shape[1]}, field has {emb.d_r}")
    P = projection.apply(emb.matrix(tiles))
    lo, hi = P.min(axis=0), P.max(axis=0)
    span = hi - lo
    scaled = np.zeros_like(P)
    ok = span > 0
    scaled[:, ok] = (P[:, ok] - lo[ok]) / span[ok] * 255.0
    rgb = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    return {t: tuple(int(c) for c in row) for t, row in zip(tiles, rgb)}


@dataclass(frozen=True)
class RgbMap:
    pixels: np.ndarray  # (height, width, 3) uint8
    frames: tuple  # (x_min, y_min, x_max, y_max) zoom-16 range, inclusive

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]


def _frame_range(region):
    if isinstance(region, TileId):
        if region.zoom != FRAME_ZOOM:
            raise DomainError(f"render region must be a zoom-{FRAME_ZOOM} tile, got zoom {region.zoom}")
        return region.x, region.y, region.x, region.y
    x0, y0, x1, y1 = (int(v) for v in region)
    if x1 < x0 or y1 < y0:
        raise DomainError(f"empty frame range {region}")
    TileId(FRAME_ZOOM, x0, y0), TileId(FRAME_ZOOM, x1, y1)
    return x0, y0, x1, y1


def render_map(colors, region, path=None, background=BACKGROUND, projection: Projection3 | None = None) -> RgbMap:
    """One image pixel per zoom-24 tile over a zoom-16 tile or an inclusive range of them.

    When ``path`` is given the image is written as 8-bit RGB PNG with a
    ``.txt`` sidecar holding the geo-reference and projection.
    """
    x0, y0, x1, y1 = _frame_range(region)
    h, w = (y1 - y0 + 1) * FRAME_SIDE, (x1 - x0 + 1) * FRAME_SIDE
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = background
    for tile, rgb in colors.items():
        frame = parent_z16(tile)
        if not (x0 <= frame.x <= x1 and y0 <= frame.y <= y1):
            continue
        p = pixel_index(tile)
        img[(frame.y - y0) * FRAME_SIDE + p.row, (frame.x - x0) * FRAME_SIDE + p.col] = rgb
    out = RgbMap(img, (x0, y0, x1, y1))
    if path is not None:
        write_map(out, path, projection)
    return out


def write_map(rgb_map: RgbMap, path, projection: Projection3 | None = None) -> None:
    Image.fromarray(rgb_map.pixels, mode="RGB").save(path, format="PNG")
    x0, y0, x1, y1 = rgb_map.frames
    lat_min, lon_min, _, _ = tile_bounds(TileId(FRAME_ZOOM, x0, y1))
    _, _, lat_max, lon_max = tile_bounds(TileId(FRAME_ZOOM, x1, y0))
    lines = [
        f"z16_range = {x0} {y0} {x1} {y1}",
        f"size = {rgb_map.width} {rgb_map.height}",
        f"bounds = {lat_min!r} {lon_min!r} {lat_max!r} {lon_max!r}",
    ]
    if projection is not None:
        lines.append(f"method = {projection.method}")
        lines.append("mean = " + " ".join(repr(float(v)) for v in projection.mean))
        for i, row in enumerate(projection.components):
            lines.append(f"axis{i} = " + " ".join(repr(float(v)) for v in row))
        lines.append("explained_ratio = " + " ".join(repr(float(v)) for v in projection.explained_ratio))
    with open(f"{path}.txt", "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_map(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_projection(projection: Projection3, path) -> None:
    lines = [f"method = {projection.method}",
             "mean = " + " ".join(repr(float(v)) for v in projection.mean)]
    for i, row in enumerate(projection.components):
        lines.append(f"axis{i} = " + " ".join(repr(float(v)) for v in row))
    lines.append("explained_variance = " + " ".join(repr(float(v)) for v in projection.explained_variance))
    lines.append("explained_ratio = " + " ".join(repr(float(v)) for v in projection.explained_ratio))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_projection(path) -> Projection3:
    kv = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
    vec = lambda s: np.array([float(t) for t in s.split()])  # noqa: E731
    comps = np.stack([vec(kv[f"axis{i}"]) for i in range(3)])
    return Projection3(kv["method"], comps, vec(kv["mean"]), vec(kv["explained_variance"]), vec(kv["explained_ratio"]))
