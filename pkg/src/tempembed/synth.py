"""Synthetic GPS corpora whose tiles follow land-use-conditioned temporal archetypes.

Per-bin counts are Poisson with rate

    base * max(0, 1 + a_d * sin(2 pi h / 24 + phase) + a_w * sign * w)

where h is the hour of day at the bin midpoint, w is +1 on weekdays and -1 on
weekends (UTC), and sign is +1 for office-like and -1 for park-like
archetypes. An optional multiplicative Gamma(mean 1, sd ``noise``) factor per
bin makes residential series look uncoordinated.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
import shapely

from .errors import DomainError, GeometryError
from .ingest import TimeSpec
from .landuse import LabelPolygon, rectangle, save_labels, validate_ring
from .tile_geo import (FRAME_SIDE, FRAME_ZOOM, PIXEL_ZOOM, TileId, latlon_to_tile, tile_x_to_lon,
                       tile_y_to_lat)

KINDS = ("residential-random", "office-weekday", "park-weekend", "custom")
DEFAULT_TIME = TimeSpec(t_start=1_696_204_800, delta_t=3600, num_bins=336)  # Mon 2023-10-02 00:00 UTC, two weeks hourly
COARSE_TIME = TimeSpec(t_start=1_696_204_800, delta_t=17_280, num_bins=70)  # two weeks in 4.8 h bins
ORIGIN = (37.7749, -122.4194)

@dataclass(frozen=True)
class ArchetypeSpec:
    kind: str
    base: float  # pings per hour
    daily_amplitude: float = 0.0
    weekly_amplitude: float = 0.0
    phase: float = 0.0
    noise: float = 0.0
    weekly_sign: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown archetype {self.kind!r}; choose from {KINDS}")
        if min(self.base, self.daily_amplitude, self.weekly_amplitude, self.noise) < 0:
            raise DomainError("archetype intensities, amplitudes and noise must be non-negative")
        if self.weekly_sign not in (1, -1):
            raise DomainError(f"weekly_sign must be +1 or -1, got {self.weekly_sign}")

def _peak_phase(hour):
    return math.pi / 2 - 2 * math.pi * hour / 24

def residential(base=1.0, noise=0.6) -> ArchetypeSpec:
    return ArchetypeSpec("residential-random", base, noise=noise)

def office(base=1.0, noise=0.1) -> ArchetypeSpec:
    return ArchetypeSpec("office-weekday", base, 0.9, 0.6, _peak_phase(13), noise, 1)

def park(base=1.0, noise=0.1) -> ArchetypeSpec:
    return ArchetypeSpec("park-weekend", base, 0.5, 0.6, _peak_phase(15), noise, -1)

def rate_shape(arch: ArchetypeSpec, spec: TimeSpec) -> np.ndarray:
    """Dimensionless rate multiplier at each bin midpoint."""
    mid = spec.t_start + (np.arange(spec.num_bins) + 0.5) * spec.delta_t
    hours = (mid % 86400) / 3600.0
    dow = (np.floor(mid / 86400).astype(np.int64) + 3) % 7  # 1970-01-01 was a Thursday; Monday = 0
    w = np.where(dow < 5, 1.0, -1.0)
    shape = 1.0 + arch.daily_amplitude * np.sin(2 * np.pi * hours / 24 + arch.phase) \
        + arch.weekly_amplitude * arch.weekly_sign * w
    return np.clip(shape, 0.0, None)

def expected_counts(arch: ArchetypeSpec, spec: TimeSpec) -> np.ndarray:
    return arch.base * rate_shape(arch, spec) * spec.delta_t / 3600.0

def expected_total(arch: ArchetypeSpec, spec: TimeSpec) -> float:
    return float(expected_counts(arch, spec).sum())

def draw_counts(arch: ArchetypeSpec, spec: TimeSpec, rng) -> np.ndarray:
    lam = expected_counts(arch, spec)
    if arch.noise > 0:
        k = 1.0 / arch.noise ** 2
        lam = lam * rng.gamma(k, 1.0 / k, size=lam.shape)
    return rng.poisson(lam).astype(np.int64)

@dataclass(frozen=True)
class SceneRegion:
    ring: tuple  # closed ((lat, lon), ...)
    archetype: ArchetypeSpec
    label: str | None = None  # residential | commercial | None (unlabeled)
    landscape: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "ring", tuple((float(a), float(b)) for a, b in self.ring))
        validate_ring(self.ring)

@dataclass(frozen=True)
class SceneSpec:
    bounds: tuple  # (lat_min, lon_min, lat_max, lon_max)
    regions: tuple
    time: TimeSpec = DEFAULT_TIME
    seed: int = 0

    def __post_init__(self):
        lat_min, lon_min, lat_max, lon_max = self.bounds
        box = shapely.box(lon_min, lat_min, lon_max, lat_max).buffer(1e-12)
        for i, region in enumerate(self.regions):
            poly = shapely.Polygon([(lon, lat) for lat, lon in region.ring])
            if not box.covers(poly):
                raise GeometryError(f"region {i} lies outside the scene bounds")

    def polygons(self) -> list[LabelPolygon]:
        return [LabelPolygon(r.label, r.ring, r.landscape) for r in self.regions if r.label is not None]

@dataclass
class SceneData:
    counts: dict  # TileId -> counts
    region_of: dict  # TileId -> region index

def region_tiles(region: SceneRegion) -> list[TileId]:
    """Zoom-24 tiles whose centers lie inside the region polygon."""
    lats = [p[0] for p in region.ring]
    lons = [p[1] for p in region.ring]
    nw = latlon_to_tile(max(lats), min(lons), PIXEL_ZOOM)
    se = latlon_to_tile(min(lats), max(lons), PIXEL_ZOOM)
    xs = np.arange(nw.x, se.x + 1)
    ys = np.arange(nw.y, se.y + 1)
    lon = tile_x_to_lon(xs + 0.5, PIXEL_ZOOM)
    lat = tile_y_to_lat(ys + 0.5, PIXEL_ZOOM)
    lat_g, lon_g = np.meshgrid(lat, lon, indexing="ij")
    poly = shapely.Polygon([(b, a) for a, b in region.ring])
    inside = shapely.contains_xy(poly, lon_g, lat_g)
    rows, cols = np.nonzero(inside)
    return [TileId(PIXEL_ZOOM, int(xs[c]), int(ys[r])) for r, c in zip(rows, cols)]

def _tile_rng(seed, tile):
    return np.random.default_rng([seed, tile.x, tile.y])

def simulate_counts(spec: SceneSpec) -> SceneData:
    region_of = {}
    for i, region in enumerate(spec.regions):
        for tile in region_tiles(region):
            region_of[tile] = i  # later regions win, as in label rasterization
    counts = {}
    for tile in sorted(region_of):
        rng = _tile_rng(spec.seed, tile)
        counts[tile] = draw_counts(spec.regions[region_of[tile]].archetype, spec.time, rng)
    return SceneData(counts, region_of)

def ping_lines(tile: TileId, counts, time: TimeSpec, seed: int) -> list[str]:
    """Expand one tile's counts into ``user_id,lat,lon,timestamp`` lines jittered inside tile and bin."""
    total = int(counts.sum())
    if total == 0:
        return []
    rng = np.random.default_rng([seed, tile.x, tile.y, 1])
    bins = np.repeat(np.arange(len(counts)), counts)
    u = rng.uniform(0.05, 0.95, total)
    v = rng.uniform(0.05, 0.95, total)
    lon = tile_x_to_lon(tile.x + u, PIXEL_ZOOM)
    lat = tile_y_to_lat(tile.y + v, PIXEL_ZOOM)
    ts = time.t_start + bins * time.delta_t + rng.integers(0, time.delta_t, total)
    users = rng.integers(0, 1_000_000, total)
    return [f"u{uid:06d},{a:.9f},{b:.9f},{t}" for uid, a, b, t in zip(users, lat, lon, ts)]

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

@dataclass
class SceneFiles:
    traces: str
    labels: str
    manifest: str
    data: SceneData = field(repr=False, default=None)

def generate_scene(spec: SceneSpec, out_dir, prefix="scene") -> SceneFiles:
    """Write the ping stream, label polygons and a manifest; identical seeds give identical bytes."""
    os.makedirs(out_dir, exist_ok=True)
    data = simulate_counts(spec)
    traces = os.path.join(out_dir, f"{prefix}_traces.csv")
    labels = os.path.join(out_dir, f"{prefix}_labels.geojson")
    manifest = os.path.join(out_dir, f"{prefix}_manifest.txt")
    n_pings = 0
    with open(traces, "w", newline="\n") as fh:
        fh.write("user_id,lat,lon,timestamp\n")
        for tile, counts in data.counts.items():
            lines = ping_lines(tile, counts, spec.time, spec.seed)
            if lines:
                fh.write("\n".join(lines))
                fh.write("\n")
                n_pings += len(lines)
    save_labels(spec.polygons(), labels)
    write_manifest(spec, data, n_pings, {"traces": traces, "labels": labels}, manifest)
    return SceneFiles(traces, labels, manifest, data)

def write_manifest(spec, data, n_pings, files, path):
    t = spec.time
    lines = [
        f"seed = {spec.seed}",
        f"bounds = {' '.join(repr(float(b)) for b in spec.bounds)}",
        f"t_start = {t.t_start}",
        f"delta_t = {t.delta_t}",
        f"num_bins = {t.num_bins}",
        f"regions = {len(spec.regions)}",
        f"tiles = {len(data.counts)}",
        f"pings = {n_pings}",
    ]
    for i, r in enumerate(spec.regions):
        a = r.archetype
        n_tiles = sum(1 for v in data.region_of.values() if v == i)
        lines.append(f"region{i} = {a.kind} label={r.label} landscape={r.landscape} base={a.base!r} "
                     f"daily={a.daily_amplitude!r} weekly={a.weekly_amplitude!r} phase={a.phase!r} "
                     f"noise={a.noise!r} sign={a.weekly_sign} tiles={n_tiles} "
                     f"expected_total_per_tile={expected_total(a, t)!r}")
    for name, p in files.items():
        lines.append(f"sha256_{name} = {_sha256(p)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

def equal_volume_variant(spec: SceneSpec) -> SceneSpec:
    """Rescale base intensities so every archetype has the same expected per-tile total."""
    totals = [expected_total(r.archetype, spec.time) for r in spec.regions]
    if not totals:
        return spec
    target = float(np.mean(totals))
    if all(math.isclose(t, target, rel_tol=1e-12, abs_tol=0.0) or t == 0 for t in totals):
        return spec
    regions = tuple(
        replace(r, archetype=replace(r.archetype, base=r.archetype.base * target / t)) if t > 0 else r
        for r, t in zip(spec.regions, totals)
    )
    return replace(spec, regions=regions)

# -- preset scenes ----------------------------------------------------------

def origin_frame(lat=ORIGIN[0], lon=ORIGIN[1]) -> TileId:
    return latlon_to_tile(lat, lon, FRAME_ZOOM)

def _pixel_rect(frame, row0, col0, rows, cols):
    """(lat_min, lon_min, lat_max, lon_max) of a pixel block inside a frame."""
    x0 = frame.x * FRAME_SIDE + col0
    y0 = frame.y * FRAME_SIDE + row0
    lon_min = float(tile_x_to_lon(x0, PIXEL_ZOOM))
    lon_max = float(tile_x_to_lon(x0 + cols, PIXEL_ZOOM))
    lat_max = float(tile_y_to_lat(y0, PIXEL_ZOOM))
    lat_min = float(tile_y_to_lat(y0 + rows, PIXEL_ZOOM))
    return lat_min, lon_min, lat_max, lon_max

def _frames_bounds(frames):
    boxes = [_pixel_rect(f, 0, 0, FRAME_SIDE, FRAME_SIDE) for f in frames]
    return (min(b[0] for b in boxes), min(b[1] for b in boxes), max(b[2] for b in boxes), max(b[3] for b in boxes))

def block_scene(archetypes, labels=None, *, frames_x=2, frames_y=2, slots=3, size=(8, 12),
                landscapes=("suburb", "countryside"), time=COARSE_TIME, seed=0, origin=None) -> SceneSpec:
    """Frames tiled with rectangular blocks, each block drawn from one archetype.

    Every frame is cut into ``slots`` x ``slots`` cells holding one rectangle
    of random side in ``size``. Archetypes are dealt round-robin over a
    per-frame shuffle so each frame holds a balanced mix.
    """
    rng = np.random.default_rng([seed, 99])
    origin = origin or origin_frame()
    frames = [TileId(FRAME_ZOOM, origin.x + i, origin.y + j) for j in range(frames_y) for i in range(frames_x)]
    cell = FRAME_SIDE // slots
    regions = []
    for fi, frame in enumerate(frames):
        landscape = landscapes[fi % len(landscapes)] if landscapes else None
        n = slots * slots
        kinds = np.array([k % len(archetypes) for k in range(n)])
        rng.shuffle(kinds)
        for s in range(n):
            r, c = divmod(s, slots)
            h = int(rng.integers(size[0], size[1] + 1))
            w = int(rng.integers(size[0], size[1] + 1))
            row0 = r * cell + int(rng.integers(1, cell - h))
            col0 = c * cell + int(rng.integers(1, cell - w))
            lat_min, lon_min, lat_max, lon_max = _pixel_rect(frame, row0, col0, h, w)
            k = int(kinds[s])
            poly = rectangle("residential", lat_min, lon_min, lat_max, lon_max)
            label = labels[k] if labels else None
            regions.append(SceneRegion(poly.ring, archetypes[k], label, landscape if label else None))
    return SceneSpec(_frames_bounds(frames), tuple(regions), time, seed)

def archetype_scene(seed=0, base=1.0, **kw) -> SceneSpec:
    """Residential, office and park blocks, for stratification checks."""
    return block_scene([residential(base), office(base), park(base)], None, seed=seed, **kw)

def landuse_scene(seed=0, base=0.4, equal_volume=True, volume_ratio=0.5, **kw) -> SceneSpec:
    """Residential versus commercial (office) blocks.

    With ``equal_volume`` the classes share expected per-tile totals and
    differ only in cadence; otherwise residential runs at ``volume_ratio``
    times the office volume.
    """
    res = residential(base if equal_volume else base * volume_ratio)
    spec = block_scene([res, office(base)], ["residential", "commercial"], seed=seed, **kw)
    return equal_volume_variant(spec) if equal_volume else spec
