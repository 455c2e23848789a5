"""Slippy-map (XYZ, row 0 at the north edge) tile arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

MAX_LAT = math.degrees(math.atan(math.sinh(math.pi)))  # 85.05112877980659
MAX_ZOOM = 24
PIXEL_ZOOM = 24
FRAME_ZOOM = 16
FRAME_SIDE = 1 << (PIXEL_ZOOM - FRAME_ZOOM)  # 256


@dataclass(frozen=True, order=True, slots=True)
class TileId:
    zoom: int
    x: int
    y: int

    def __post_init__(self):
        if not 0 <= self.zoom <= MAX_ZOOM:
            raise DomainError(f"zoom {self.zoom} outside [0, {MAX_ZOOM}]")
        n = 1 << self.zoom
        if not (0 <= self.x < n and 0 <= self.y < n):
            raise DomainError(f"tile ({self.x}, {self.y}) outside the {n}x{n} grid at zoom {self.zoom}")


@dataclass(frozen=True, slots=True)
class PixelIndex:
    row: int
    col: int

    def __post_init__(self):
        if not (0 <= self.row < FRAME_SIDE and 0 <= self.col < FRAME_SIDE):
            raise DomainError(f"pixel ({self.row}, {self.col}) outside a {FRAME_SIDE}x{FRAME_SIDE} frame")


def _check_zoom(zoom):
    if not 0 <= zoom <= MAX_ZOOM:
        raise DomainError(f"zoom {zoom} outside [0, {MAX_ZOOM}]")


def latlon_to_xy(lat, lon, zoom):
    """Vectorized tile column/row for arrays of coordinates.

    No validation here; callers filter out-of-band points first. Results are
    clamped into ``[0, 2**zoom)``.
    """
    n = float(1 << zoom)
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    x = np.floor((lon + 180.0) / 360.0 * n)
    y = np.floor((1.0 - np.arcsinh(np.tan(np.radians(lat))) / np.pi) / 2.0 * n)
    top = (1 << zoom) - 1
    x = np.clip(x, 0, top).astype(np.int64)
    y = np.clip(y, 0, top).astype(np.int64)
    return x, y


def in_band(lat, lon):
    """Boolean mask of coordinates inside the projection's validity band."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    return (np.abs(lat) <= MAX_LAT) & (lon >= -180.0) & (lon <= 180.0)


def latlon_to_tile(lat: float, lon: float, zoom: int) -> TileId:
    _check_zoom(zoom)
    if not (math.isfinite(lat) and abs(lat) <= MAX_LAT):
        raise DomainError(f"latitude {lat!r} outside the Web-Mercator band [-{MAX_LAT}, {MAX_LAT}]")
    if not (math.isfinite(lon) and -180.0 <= lon <= 180.0):
        raise DomainError(f"longitude {lon!r} outside [-180, 180]")
    # Same code path as the vectorized version so bulk aggregation agrees bit for bit.
    x, y = latlon_to_xy(np.array([lat]), np.array([lon]), zoom)
    return TileId(zoom, int(x[0]), int(y[0]))


def tile_x_to_lon(x, zoom):
    return np.asarray(x, dtype=np.float64) / float(1 << zoom) * 360.0 - 180.0


def tile_y_to_lat(y, zoom):
    n = float(1 << zoom)
    return np.degrees(np.arctan(np.sinh(np.pi * (1.0 - 2.0 * np.asarray(y, dtype=np.float64) / n))))


def tile_bounds(tile: TileId) -> tuple[float, float, float, float]:
    """(lat_min, lon_min, lat_max, lon_max) of a tile."""
    lon_min = float(tile_x_to_lon(tile.x, tile.zoom))
    lon_max = float(tile_x_to_lon(tile.x + 1, tile.zoom))
    lat_max = float(tile_y_to_lat(tile.y, tile.zoom))
    lat_min = float(tile_y_to_lat(tile.y + 1, tile.zoom))
    return lat_min, lon_min, lat_max, lon_max


def tile_center(tile: TileId) -> tuple[float, float]:
    """Center of the tile in projected space, returned as (lat, lon)."""
    lon = float(tile_x_to_lon(tile.x + 0.5, tile.zoom))
    lat = float(tile_y_to_lat(tile.y + 0.5, tile.zoom))
    return lat, lon


def _require_pixel_zoom(tile):
    if tile.zoom != PIXEL_ZOOM:
        raise DomainError(f"expected a zoom-{PIXEL_ZOOM} tile, got zoom {tile.zoom}")


def parent_z16(tile: TileId) -> TileId:
    _require_pixel_zoom(tile)
    shift = PIXEL_ZOOM - FRAME_ZOOM
    return TileId(FRAME_ZOOM, tile.x >> shift, tile.y >> shift)


def pixel_index(tile: TileId) -> PixelIndex:
    _require_pixel_zoom(tile)
    return PixelIndex(tile.y % FRAME_SIDE, tile.x % FRAME_SIDE)


def child_tile(frame: TileId, pixel: PixelIndex) -> TileId:
    """Inverse of (parent_z16, pixel_index)."""
    if frame.zoom != FRAME_ZOOM:
        raise DomainError(f"expected a zoom-{FRAME_ZOOM} tile, got zoom {frame.zoom}")
    return TileId(PIXEL_ZOOM, frame.x * FRAME_SIDE + pixel.col, frame.y * FRAME_SIDE + pixel.row)


def frame_pixel_centers(frame: TileId) -> tuple[np.ndarray, np.ndarray]:
    """Latitude and longitude of every zoom-24 pixel center, each shaped (256, 256)."""
    if frame.zoom != FRAME_ZOOM:
        raise DomainError(f"expected a zoom-{FRAME_ZOOM} tile, got zoom {frame.zoom}")
    offs = np.arange(FRAME_SIDE) + 0.5
    lon = tile_x_to_lon(frame.x * FRAME_SIDE + offs, PIXEL_ZOOM)
    lat = tile_y_to_lat(frame.y * FRAME_SIDE + offs, PIXEL_ZOOM)
    lat_grid, lon_grid = np.meshgrid(lat, lon, indexing="ij")
    return lat_grid, lon_grid
