"""Temporal-embedding fields and their zoom-16 image-like tensors."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import _binio
from .cae import CaeParams, encode
from .errors import DomainError, FormatError, ProvenanceError
from .ingest import TileSeriesStore
from .spectral import SpectrogramPlan, normalize_matrix, spectrogram_matrix
from .tile_geo import FRAME_SIDE, FRAME_ZOOM, PIXEL_ZOOM, TileId, parent_z16, pixel_index

FIELD_MAGIC = b"TEMB"
FIELD_VERSION = 1
_HEADER = struct.Struct("<HIQQ")
_ENTRY_HEAD = _binio.TILE.size


@dataclass(eq=False)
class EmbeddingField:
    d_r: int
    entries: dict[TileId, np.ndarray] = field(default_factory=dict)
    params_checksum: int = 0
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingField):
            return NotImplemented
        return (self.d_r == other.d_r and self.params_checksum == other.params_checksum
                and self.entries.keys() == other.entries.keys()
                and all(np.array_equal(v, other.entries[k]) for k, v in self.entries.items()))

    def tiles(self):
        return sorted(self.entries)

    def matrix(self, tiles=None) -> np.ndarray:
        tiles = self.tiles() if tiles is None else tiles
        if not tiles:
            return np.zeros((0, self.d_r))
        return np.stack([self.entries[t] for t in tiles]).astype(np.float64)

    def frames(self) -> list[TileId]:
        return sorted({parent_z16(t) for t in self.entries})

    def restrict(self, frame: TileId) -> "EmbeddingField":
        sub = {t: v for t, v in self.entries.items() if parent_z16(t) == frame}
        return EmbeddingField(self.d_r, sub, self.params_checksum, dict(self.provenance))

    def merge(self, other: "EmbeddingField") -> "EmbeddingField":
        if other.params_checksum != self.params_checksum:
            raise ProvenanceError(f"fields come from different models "
                                  f"({self.params_checksum:016x} vs {other.params_checksum:016x})")
        if other.d_r != self.d_r:
            raise DomainError(f"d_r mismatch: {self.d_r} vs {other.d_r}")
        return EmbeddingField(self.d_r, {**self.entries, **other.entries}, self.params_checksum, dict(self.provenance))


@dataclass(eq=False)
class Z16Tensor:
    tile: TileId
    data: np.ndarray  # (256, 256, C)
    mask: np.ndarray  # (256, 256) bool
    params_checksum: int = 0

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def _spectrogram_inputs(store, plan, window_fn):
    tiles, mats = [], []
    for tile in store.tiles():
        counts = store.counts(tile)
        if not counts.any():
            continue
        m, _, _ = normalize_matrix(spectrogram_matrix(counts, plan, window_fn))
        tiles.append(tile)
        mats.append(m)
    return tiles, mats


def embed_store(store: TileSeriesStore, plan: SpectrogramPlan, params: CaeParams,
                window_fn: str = "hann") -> EmbeddingField:
    """Spectrogram, normalize and encode every active tile; empty tiles are skipped.

    Tiles are encoded one at a time so the result is bitwise identical to the
    per-tile composition regardless of how many tiles the store holds.
    """
    if params.arch.side != plan.side:
        raise DomainError(f"encoder expects {params.arch.side}x{params.arch.side} inputs, plan produces {plan.side}x{plan.side}")
    plan.check(store.spec.num_bins)
    tiles, mats = _spectrogram_inputs(store, plan, window_fn)
    entries = {tile: encode(params, m).astype(np.float32) for tile, m in zip(tiles, mats)}
    provenance = {"time_spec": store.spec, "plan": plan, "window": window_fn}
    return EmbeddingField(params.arch.d_r, entries, params.checksum(), provenance)


def embed_tile(counts, plan, params, window_fn="hann") -> np.ndarray:
    m, _, _ = normalize_matrix(spectrogram_matrix(counts, plan, window_fn))
    return encode(params, m).astype(np.float32)


def assemble_tensor(emb: EmbeddingField, z16: TileId, fill=None) -> Z16Tensor:
    if z16.zoom != FRAME_ZOOM:
        raise DomainError(f"expected a zoom-{FRAME_ZOOM} tile, got zoom {z16.zoom}")
    data = np.zeros((FRAME_SIDE, FRAME_SIDE, emb.d_r), dtype=np.float32)
    if fill is not None:
        data[:] = np.asarray(fill, dtype=np.float32)
    mask = np.zeros((FRAME_SIDE, FRAME_SIDE), dtype=bool)
    for tile, vec in emb.entries.items():
        if parent_z16(tile) != z16:
            continue
        p = pixel_index(tile)
        data[p.row, p.col] = vec
        mask[p.row, p.col] = True
    return Z16Tensor(z16, data, mask, emb.params_checksum)


def disassemble_tensor(tensor: Z16Tensor) -> dict[TileId, np.ndarray]:
    rows, cols = np.nonzero(tensor.mask)
    base_x, base_y = tensor.tile.x * FRAME_SIDE, tensor.tile.y * FRAME_SIDE
    return {TileId(PIXEL_ZOOM, base_x + int(c), base_y + int(r)): tensor.data[r, c].copy()
            for r, c in zip(rows, cols)}


def count_tensors(store: TileSeriesStore, frames) -> list[Z16Tensor]:
    """Single-channel total-activity tensors, min-max scaled over all active tiles of the store."""
    totals = {t: float(store.counts(t).sum()) for t in store.tiles()}
    active = [v for v in totals.values() if v > 0]
    lo, hi = (min(active), max(active)) if active else (0.0, 0.0)
    span = hi - lo
    out = []
    for frame in frames:
        data = np.zeros((FRAME_SIDE, FRAME_SIDE, 1), dtype=np.float32)
        mask = np.zeros((FRAME_SIDE, FRAME_SIDE), dtype=bool)
        for tile, v in totals.items():
            if v <= 0 or parent_z16(tile) != frame:
                continue
            p = pixel_index(tile)
            data[p.row, p.col, 0] = (v - lo) / span if span > 0 else 0.0
            mask[p.row, p.col] = True
        out.append(Z16Tensor(frame, data, mask, 0))
    return out


def save_field(emb: EmbeddingField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(_HEADER.pack(FIELD_VERSION, emb.d_r, emb.params_checksum, len(emb)))
        for tile in emb.tiles():
            vec = np.asarray(emb.entries[tile], dtype="<f4")
            if vec.shape != (emb.d_r,):
                raise DomainError(f"embedding for {tile} has shape {vec.shape}, expected ({emb.d_r},)")
            fh.write(_binio.TILE.pack(tile.zoom, tile.x, tile.y))
            fh.write(vec.tobytes())


def field_file_size(d_r: int, count: int) -> int:
    return len(FIELD_MAGIC) + _HEADER.size + count * (_ENTRY_HEAD + 4 * d_r)


def load_field(path, expected_d_r: int | None = None, expected_checksum: int | None = None) -> EmbeddingField:
    with open(path, "rb") as fh:
        r = _binio.Reader(fh.read(), f"embedding file {path}")
    r.magic(FIELD_MAGIC)
    r.version(FIELD_VERSION)
    d_r, checksum, count = r.unpack("<IQQ")
    if expected_d_r is not None and d_r != expected_d_r:
        raise FormatError(f"embedding file {path} has d_r={d_r}, consumer expects {expected_d_r}")
    if expected_checksum is not None and checksum != expected_checksum:
        raise ProvenanceError(f"embedding file {path} was produced by model {checksum:016x}, "
                              f"expected {expected_checksum:016x}")
    entries = {}
    for _ in range(count):
        zoom, x, y = r.unpack("<BII")
        entries[TileId(zoom, x, y)] = np.frombuffer(r.take(4 * d_r), dtype="<f4").copy()
    r.done()
    return EmbeddingField(d_r, entries, checksum)


def export_tensor(tensor: Z16Tensor, path) -> None:
    """Raw little-endian f32 block (row-major H, W, C) plus a ``.hdr`` text sidecar."""
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    t = tensor.tile
    with open(f"{path}.hdr", "w") as fh:
        fh.write(f"shape = {FRAME_SIDE} {FRAME_SIDE} {tensor.channels}\n")
        fh.write(f"d_r = {tensor.channels}\n")
        fh.write(f"z16 = {t.zoom}/{t.x}/{t.y}\n")
        fh.write(f"params_checksum = {tensor.params_checksum:016x}\n")
        fh.write("dtype = float32 little-endian, row-major\n")
