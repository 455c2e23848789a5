import numpy as np
import pytest

from tempembed.errors import DomainError, GeometryError
from tempembed.ingest import aggregate, parse_traces
from tempembed.landuse import load_labels, rectangle
from tempembed.spectral import amplitude_spectrum, dft
from tempembed.synth import (COARSE_TIME, DEFAULT_TIME, ArchetypeSpec, SceneRegion, SceneSpec, _pixel_rect,
                             archetype_scene, draw_counts, equal_volume_variant, expected_total, generate_scene,
                             landuse_scene, office, origin_frame, park, rate_shape, residential, simulate_counts)

FRAME = origin_frame()


def region(archetype, row0, col0, rows, cols, label=None):
    box = _pixel_rect(FRAME, row0, col0, rows, cols)
    return SceneRegion(rectangle("residential", *box).ring, archetype, label)


def scene(*regions, time=DEFAULT_TIME, seed=0):
    return SceneSpec(_pixel_rect(FRAME, 0, 0, 256, 256), tuple(regions), time, seed)


def daily_ratio(counts_list, spec):
    k = spec.num_bins * spec.delta_t // 86400
    ratios = []
    for c in counts_list:
        a = amplitude_spectrum(dft(c))
        ratios.append(a[k] / np.median(a[1:spec.num_bins // 2 + 1]))
    return float(np.mean(ratios))


def test_frame_is_san_francisco():
    assert (FRAME.x, FRAME.y) == (10482, 25331)


def test_calendar_alignment():
    # DEFAULT_TIME starts on a Monday at midnight UTC: first 120 hours are weekdays
    shape = rate_shape(ArchetypeSpec("custom", 1.0, weekly_amplitude=0.5), DEFAULT_TIME)
    assert np.all(shape[:120] == 1.5) and np.all(shape[120:168] == 0.5) and np.all(shape[168:288] == 1.5)


def test_office_peak_hour():
    shape = rate_shape(ArchetypeSpec("custom", 1.0, daily_amplitude=0.9, phase=office().phase), DEFAULT_TIME)
    assert int(np.argmax(shape[:24])) in (12, 13)


def test_zero_base_gives_empty_pings(tmp_path):
    files = generate_scene(scene(region(office(0.0), 10, 10, 5, 5)), tmp_path)
    lines = open(files.traces).read().splitlines()
    assert lines == ["user_id,lat,lon,timestamp"]
    assert "pings = 0" in open(files.manifest).read()


def test_residential_has_no_daily_peak():
    data = simulate_counts(scene(region(residential(2.0), 0, 0, 10, 10)))
    assert daily_ratio(list(data.counts.values()), DEFAULT_TIME) < 2


def test_office_has_daily_peak():
    data = simulate_counts(scene(region(office(2.0), 0, 0, 10, 10)))
    assert daily_ratio(list(data.counts.values()), DEFAULT_TIME) > 5


def test_park_weekly_sign_inverse_to_office():
    p = rate_shape(park(), DEFAULT_TIME)
    o = rate_shape(office(), DEFAULT_TIME)
    weekend = slice(120, 168)
    assert p[weekend].mean() > p[:120].mean()
    assert o[weekend].mean() < o[:120].mean()


def test_equal_volume_unchanged_when_already_equal():
    s = scene(region(office(1.0), 0, 0, 5, 5), region(office(1.0), 20, 20, 5, 5))
    assert equal_volume_variant(s) is s


def test_equal_volume_two_to_one():
    half = expected_total(office(1.0), DEFAULT_TIME) / 2 / DEFAULT_TIME.num_bins
    s = scene(region(office(1.0), 0, 0, 20, 20), region(residential(half), 40, 40, 20, 20))
    totals = [expected_total(r.archetype, s.time) for r in s.regions]
    assert totals[0] == pytest.approx(2 * totals[1], rel=0.02)
    ev = equal_volume_variant(s)
    exp = [expected_total(r.archetype, ev.time) for r in ev.regions]
    assert exp[0] == pytest.approx(exp[1], rel=1e-12)
    assert [r.archetype.daily_amplitude for r in ev.regions] == [r.archetype.daily_amplitude for r in s.regions]
    data = simulate_counts(ev)
    means = []
    for i in range(2):
        tot = [c.sum() for t, c in data.counts.items() if data.region_of[t] == i]
        assert len(tot) >= 200
        means.append(np.mean(tot))
    assert abs(means[0] - means[1]) / np.mean(means) < 0.02


def test_equal_volume_idempotent():
    s = equal_volume_variant(scene(region(office(1.0), 0, 0, 5, 5), region(park(3.0), 20, 20, 5, 5)))
    assert equal_volume_variant(s) == s


@pytest.mark.parametrize("arch", [residential(2.0), office(2.0), park(2.0)])
def test_empirical_mean_matches_expectation(arch):
    data = simulate_counts(scene(region(arch, 0, 0, 15, 15)))
    tot = [c.sum() for c in data.counts.values()]
    assert len(tot) >= 200
    assert np.mean(tot) == pytest.approx(expected_total(arch, DEFAULT_TIME), rel=0.05)


def test_flat_expectation_formula():
    arch = ArchetypeSpec("custom", 2.5)
    assert expected_total(arch, DEFAULT_TIME) == pytest.approx(2.5 * DEFAULT_TIME.num_bins * DEFAULT_TIME.delta_t / 3600)


def test_byte_determinism(tmp_path):
    spec = landuse_scene(seed=3, frames_x=1, frames_y=1)
    a = generate_scene(spec, tmp_path / "a")
    b = generate_scene(spec, tmp_path / "b")
    for x, y in [(a.traces, b.traces), (a.labels, b.labels), (a.manifest, b.manifest)]:
        assert open(x, "rb").read() == open(y, "rb").read()
    c = generate_scene(landuse_scene(seed=4, frames_x=1, frames_y=1), tmp_path / "c")
    assert open(a.traces, "rb").read() != open(c.traces, "rb").read()


def test_ingest_reproduces_counts(tmp_path):
    spec = archetype_scene(seed=1, frames_x=1, frames_y=1, slots=2)
    files = generate_scene(spec, tmp_path)
    parsed = parse_traces(files.traces)
    assert parsed.skipped == 0
    store = aggregate(parsed.records, spec.time)
    expected = {t: c for t, c in files.data.counts.items() if c.any()}
    assert set(store.tiles()) == set(expected)
    for t, c in expected.items():
        assert np.array_equal(store.counts(t), c)


def test_labels_match_scene(tmp_path):
    spec = landuse_scene(seed=0, frames_x=1, frames_y=1)
    files = generate_scene(spec, tmp_path)
    polys = load_labels(files.labels)
    assert polys == spec.polygons()
    assert {p.cls for p in polys} == {"residential", "commercial"}


def test_landuse_scene_equal_volume():
    spec = landuse_scene(seed=0)
    totals = {r.label: expected_total(r.archetype, spec.time) for r in spec.regions}
    assert totals["residential"] == pytest.approx(totals["commercial"], rel=1e-12)
    unequal = landuse_scene(seed=0, equal_volume=False)
    totals = {r.label: expected_total(r.archetype, unequal.time) for r in unequal.regions}
    assert totals["residential"] < 0.6 * totals["commercial"]


def test_coarse_time_shape():
    assert COARSE_TIME.num_bins * COARSE_TIME.delta_t == 14 * 86400


def test_invalid_specs():
    with pytest.raises(DomainError):
        ArchetypeSpec("office-weekday", -1.0)
    with pytest.raises(DomainError):
        ArchetypeSpec("mall", 1.0)
    with pytest.raises(GeometryError):
        SceneRegion(((0, 0), (0, 1), (1, 1)), office())
    far = SceneRegion(rectangle("residential", 10, 10, 11, 11).ring, office())
    with pytest.raises(GeometryError, match="outside"):
        scene(far)


def test_draw_counts_seeded():
    a = draw_counts(office(3.0), DEFAULT_TIME, np.random.default_rng([1, 2, 3]))
    b = draw_counts(office(3.0), DEFAULT_TIME, np.random.default_rng([1, 2, 3]))
    assert np.array_equal(a, b) and a.dtype == np.int64
