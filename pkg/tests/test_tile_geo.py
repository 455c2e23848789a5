import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tempembed.errors import DomainError
from tempembed.tile_geo import (MAX_LAT, PixelIndex, TileId, child_tile, latlon_to_tile, parent_z16,
                                pixel_index, tile_bounds, tile_center)


def hand_tile(lat, lon, zoom):
    # Textbook form with ln(tan + sec), evaluated independently of the implementation.
    n = 2 ** zoom
    phi = math.radians(lat)
    x = int(math.floor((lon + 180.0) / 360.0 * n))
    y = int(math.floor((1.0 - math.log(math.tan(phi) + 1.0 / math.cos(phi)) / math.pi) / 2.0 * n))
    return x, y


def test_origin_maps_to_grid_center():
    assert latlon_to_tile(0.0, 0.0, 24) == TileId(24, 2 ** 23, 2 ** 23)


def test_west_edge():
    # The equator is the row boundary; the floor formula puts it in the southern row.
    assert latlon_to_tile(0.0, -180.0, 1) == TileId(1, 0, 1)
    assert latlon_to_tile(1e-9, -180.0, 1) == TileId(1, 0, 0)


def test_san_francisco_matches_hand_formula():
    x, y = hand_tile(37.7749, -122.4194, 16)
    assert (x, y) == (10482, 25331)
    assert latlon_to_tile(37.7749, -122.4194, 16) == TileId(16, x, y)


@pytest.mark.parametrize("lat", [85.06, -86.0, float("nan")])
def test_out_of_band_latitude_names_value(lat):
    with pytest.raises(DomainError, match="latitude"):
        latlon_to_tile(lat, 0.0, 10)


def test_tile_id_validation():
    with pytest.raises(DomainError):
        TileId(1, 2, 0)
    with pytest.raises(DomainError):
        TileId(25, 0, 0)
    with pytest.raises(DomainError):
        PixelIndex(256, 0)


def test_root_bounds():
    lat_min, lon_min, lat_max, lon_max = tile_bounds(TileId(0, 0, 0))
    assert lon_min == -180.0 and lon_max == 180.0
    assert lat_max == pytest.approx(MAX_LAT, abs=1e-12)
    assert lat_min == pytest.approx(-MAX_LAT, abs=1e-12)
    assert MAX_LAT == pytest.approx(85.0511287798, abs=1e-9)


def test_quadrant_bounds():
    lat_min, lon_min, lat_max, lon_max = tile_bounds(TileId(1, 0, 0))
    assert (lon_min, lon_max) == (-180.0, 0.0)
    assert lat_min == pytest.approx(0.0, abs=1e-12)
    assert lat_max == pytest.approx(MAX_LAT)


def test_roundtrip_random_tiles(rng):
    for _ in range(1000):
        z = int(rng.integers(0, 25))
        t = TileId(z, int(rng.integers(0, 2 ** z)), int(rng.integers(0, 2 ** z)))
        lat_min, lon_min, lat_max, lon_max = tile_bounds(t)
        assert latlon_to_tile((lat_min + lat_max) / 2, (lon_min + lon_max) / 2, z) == t
        assert latlon_to_tile(*tile_center(t), z) == t


@given(st.floats(-85.0, 85.0), st.floats(-179.9, 179.9), st.floats(1e-3, 0.5), st.integers(0, 24))
def test_monotonicity(lat, lon, step, zoom):
    a = latlon_to_tile(lat, lon, zoom)
    east = latlon_to_tile(lat, min(lon + step, 179.99), zoom)
    north = latlon_to_tile(min(lat + step, 85.05), lon, zoom)
    assert east.x >= a.x
    assert north.y <= a.y


@pytest.mark.parametrize("tile,parent", [
    (TileId(24, 0, 0), TileId(16, 0, 0)),
    (TileId(24, 255, 255), TileId(16, 0, 0)),
    (TileId(24, 256, 511), TileId(16, 1, 1)),
])
def test_parent(tile, parent):
    assert parent_z16(tile) == parent
    assert parent == TileId(16, tile.x // 256, tile.y // 256)


def test_pixel_index_examples():
    assert pixel_index(TileId(24, 0, 0)) == PixelIndex(0, 0)
    assert pixel_index(TileId(24, 257, 3)) == PixelIndex(3 % 256, 257 % 256) == PixelIndex(3, 1)


def test_wrong_zoom_rejected():
    with pytest.raises(DomainError):
        parent_z16(TileId(16, 0, 0))
    with pytest.raises(DomainError):
        pixel_index(TileId(23, 0, 0))


def test_children_of_one_block_are_distinct_and_reconstruct():
    frame = TileId(16, 10482, 25330)
    seen = set()
    for dy in range(256):
        for dx in range(256):
            t = TileId(24, frame.x * 256 + dx, frame.y * 256 + dy)
            p = pixel_index(t)
            assert parent_z16(t) == frame
            assert child_tile(frame, p) == t
            seen.add((p.row, p.col))
    assert len(seen) == 65536


@given(st.integers(0, 2 ** 24 - 1), st.integers(0, 2 ** 24 - 1))
def test_hierarchy_consistency(x, y):
    t = TileId(24, x, y)
    assert child_tile(parent_z16(t), pixel_index(t)) == t


def test_vectorized_and_scalar_agree(rng):
    from tempembed.tile_geo import latlon_to_xy

    lat = rng.uniform(-85, 85, 2000)
    lon = rng.uniform(-180, 180, 2000)
    xs, ys = latlon_to_xy(lat, lon, 24)
    for a, b, x, y in zip(lat, lon, xs, ys):
        assert latlon_to_tile(a, b, 24) == TileId(24, int(x), int(y))
    assert np.all(xs >= 0)
