"""GPS ping parsing and per-tile activity aggregation."""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import _binio
from .errors import DomainError, FormatError
from .tile_geo import PIXEL_ZOOM, TileId, in_band, latlon_to_xy

log = logging.getLogger(__name__)

STORE_MAGIC = b"TSST"
STORE_VERSION = 1
MAX_MALFORMED_FRACTION = 0.5


@dataclass(frozen=True, slots=True)
class PingRecord:
    user_id: str
    lat: float
    lon: float
    timestamp: int


@dataclass(frozen=True)
class TimeSpec:
    t_start: int
    delta_t: int
    num_bins: int

    def __post_init__(self):
        if self.delta_t <= 0:
            raise DomainError(f"delta_t must be positive, got {self.delta_t}")
        if self.num_bins <= 0:
            raise DomainError(f"num_bins must be positive, got {self.num_bins}")

    @property
    def horizon(self) -> int:
        return self.delta_t * self.num_bins


@dataclass(frozen=True)
class TileSeries:
    tile: TileId
    counts: np.ndarray


@dataclass
class ParseResult:
    records: list[PingRecord]
    skipped: int


@dataclass
class AggregateStats:
    accepted: int = 0
    out_of_horizon: int = 0
    out_of_band: int = 0


@dataclass(eq=False)
class TileSeriesStore:
    """Sparse map from zoom-24 tiles to count vectors of length ``spec.num_bins``.

    Reading a tile that was never visited gives the all-zero series.
    """

    spec: TimeSpec
    entries: dict[TileId, np.ndarray] = field(default_factory=dict)
    stats: AggregateStats = field(default_factory=AggregateStats)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, tile):
        return tile in self.entries

    def __eq__(self, other):
        if not isinstance(other, TileSeriesStore):
            return NotImplemented
        if self.spec != other.spec or self.entries.keys() != other.entries.keys():
            return False
        return all(np.array_equal(v, other.entries[k]) for k, v in self.entries.items())

    def tiles(self):
        return sorted(self.entries)

    def counts(self, tile: TileId) -> np.ndarray:
        got = self.entries.get(tile)
        if got is None:
            return np.zeros(self.spec.num_bins, dtype=np.int64)
        return got

    def series(self, tile: TileId) -> TileSeries:
        return TileSeries(tile, self.counts(tile))

    def total(self) -> int:
        return int(sum(int(v.sum()) for v in self.entries.values()))

    def merge(self, other: "TileSeriesStore") -> "TileSeriesStore":
        """Element-wise sum of two partial stores over the same time spec."""
        if self.spec != other.spec:
            raise DomainError(f"cannot merge stores with different time specs: {self.spec} vs {other.spec}")
        out = {k: v.copy() for k, v in self.entries.items()}
        for k, v in other.entries.items():
            if k in out:
                out[k] = out[k] + v
            else:
                out[k] = v.copy()
        stats = AggregateStats(
            self.stats.accepted + other.stats.accepted,
            self.stats.out_of_horizon + other.stats.out_of_horizon,
            self.stats.out_of_band + other.stats.out_of_band,
        )
        return TileSeriesStore(self.spec, out, stats)


def _parse_line(line):
    parts = line.split(",")
    if len(parts) != 4:
        raise ValueError("expected 4 fields")
    user_id, lat, lon, ts = parts
    ts = ts.strip()
    if not user_id or not ts.lstrip("-").isdigit():
        raise ValueError("bad user id or timestamp")
    rec = PingRecord(user_id, float(lat), float(lon), int(ts))
    if rec.timestamp < 0 or not (np.isfinite(rec.lat) and np.isfinite(rec.lon)):
        raise ValueError("negative timestamp or non-finite coordinate")
    return rec


def parse_traces(stream) -> ParseResult:
    """Parse ``user_id,lat,lon,timestamp`` lines.

    ``stream`` may be a binary or text file object, raw bytes, or a path.
    Malformed lines are skipped and counted; if more than half of the data
    lines are malformed the whole stream is rejected.
    """
    if isinstance(stream, (bytes, bytearray)):
        data = bytes(stream)
    elif isinstance(stream, str) or hasattr(stream, "__fspath__"):
        with open(stream, "rb") as fh:
            data = fh.read()
    else:
        data = stream.read()
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"trace stream is not UTF-8: {exc}") from exc
    text = io.StringIO(data)

    records = []
    skipped = 0
    first = True
    for line in text:
        line = line.strip()
        if first:
            first = False
            if line.startswith("user_id"):
                continue
        if not line:
            continue
        try:
            records.append(_parse_line(line))
        except ValueError:
            skipped += 1
    total = len(records) + skipped
    if total and skipped / total > MAX_MALFORMED_FRACTION:
        raise FormatError(f"{skipped} of {total} trace lines are malformed")
    if skipped:
        log.info("skipped %d malformed trace lines", skipped)
    return ParseResult(records, skipped)


def bin_index(timestamp: int, spec: TimeSpec) -> int | None:
    offset = timestamp - spec.t_start
    if offset < 0:
        return None
    k = offset // spec.delta_t
    return int(k) if k < spec.num_bins else None


def aggregate_arrays(lat, lon, timestamp, spec: TimeSpec) -> TileSeriesStore:
    """Columnar form of :func:`aggregate`."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    timestamp = np.asarray(timestamp, dtype=np.int64)
    stats = AggregateStats()

    ok = in_band(lat, lon)
    stats.out_of_band = int((~ok).sum())
    offset = timestamp - spec.t_start
    bins = np.floor_divide(offset, spec.delta_t)
    in_horizon = (offset >= 0) & (bins < spec.num_bins)
    stats.out_of_horizon = int((ok & ~in_horizon).sum())
    keep = ok & in_horizon
    stats.accepted = int(keep.sum())

    entries = {}
    if stats.accepted:
        x, y = latlon_to_xy(lat[keep], lon[keep], PIXEL_ZOOM)
        bins = bins[keep]
        tiles, inverse = np.unique(np.stack([x, y]), axis=1, return_inverse=True)
        inverse = inverse.ravel()
        counts = np.zeros((tiles.shape[1], spec.num_bins), dtype=np.int64)
        np.add.at(counts, (inverse, bins), 1)
        for i in range(tiles.shape[1]):
            entries[TileId(PIXEL_ZOOM, int(tiles[0, i]), int(tiles[1, i]))] = counts[i]
    dropped = stats.out_of_band + stats.out_of_horizon
    if dropped:
        log.info("dropped %d pings (%d out of band, %d out of horizon)",
                 dropped, stats.out_of_band, stats.out_of_horizon)
    return TileSeriesStore(spec, dict(sorted(entries.items())), stats)


def aggregate(records: Iterable[PingRecord], spec: TimeSpec) -> TileSeriesStore:
    """Count in-horizon pings per (zoom-24 tile, time bin). One ping adds one count."""
    records = list(records)
    lat = np.fromiter((r.lat for r in records), dtype=np.float64, count=len(records))
    lon = np.fromiter((r.lon for r in records), dtype=np.float64, count=len(records))
    ts = np.fromiter((r.timestamp for r in records), dtype=np.int64, count=len(records))
    return aggregate_arrays(lat, lon, ts, spec)


def save_store(store: TileSeriesStore, path) -> None:
    spec = store.spec
    with open(path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<HqIIQ", STORE_VERSION, spec.t_start, spec.delta_t, spec.num_bins, len(store)))
        for tile in store.tiles():
            fh.write(_binio.TILE.pack(tile.zoom, tile.x, tile.y))
            fh.write(np.asarray(store.entries[tile], dtype="<u4").tobytes())


def load_store(path) -> TileSeriesStore:
    with open(path, "rb") as fh:
        r = _binio.Reader(fh.read(), f"store file {path}")
    r.magic(STORE_MAGIC)
    r.version(STORE_VERSION)
    t_start, delta_t, num_bins, count = r.unpack("<qIIQ")
    try:
        spec = TimeSpec(t_start, delta_t, num_bins)
    except DomainError as exc:
        raise FormatError(f"store file {path}: {exc}") from exc
    entries = {}
    for _ in range(count):
        zoom, x, y = r.unpack("<BII")
        counts = np.frombuffer(r.take(4 * num_bins), dtype="<u4").astype(np.int64)
        tile = TileId(zoom, x, y)
        if tile in entries:
            raise FormatError(f"store file {path}: duplicate tile {tile}")
        entries[tile] = counts
    r.done()
    return TileSeriesStore(spec, entries)
