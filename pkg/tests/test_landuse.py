import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tempembed.embedding_field import Z16Tensor
from tempembed.errors import DomainError, FormatError, GeometryError, ProvenanceError
from tempembed.landuse import (THRESHOLDS, ClassifierConfig, ClassMap, LabelPolygon, frame_landscape,
                               init_classifier, load_classifier, load_labels, load_predictions, pixel_features,
                               plot_pr_curves, pr_curve, predict, predict_proba, rasterize_labels, read_pr_report,
                               rectangle, run_arms, save_classifier, save_labels, save_predictions,
                               split_frames, train_classifier, write_pr_report)
from tempembed.tile_geo import TileId, frame_pixel_centers, tile_bounds

FRAME = TileId(16, 10482, 25331)
BX, BY = FRAME.x * 256, FRAME.y * 256


def pixel_box(r0, c0, r1, c1):
    """Lat/lon box spanning zoom-24 pixels rows r0..r1, cols c0..c1 of FRAME."""
    lat_min, _, _, _ = tile_bounds(TileId(24, BX, BY + r1))
    _, lon_min, _, _ = tile_bounds(TileId(24, BX + c0, BY))
    _, _, lat_max, _ = tile_bounds(TileId(24, BX, BY + r0))
    _, _, _, lon_max = tile_bounds(TileId(24, BX + c1, BY))
    return lat_min, lon_min, lat_max, lon_max


def make_tensor(data, mask=None, tile=FRAME, checksum=0):
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        data = data[..., None]
    mask = np.ones(data.shape[:2], bool) if mask is None else mask
    return Z16Tensor(tile, data, mask, checksum)


def class_map(probs_res, probs_com=None, mask=None):
    probs = np.zeros((256, 256, 2))
    flat = probs.reshape(-1, 2)
    flat[:len(probs_res), 0] = probs_res
    if probs_com is not None:
        flat[:len(probs_com), 1] = probs_com
    return ClassMap(FRAME, probs, np.ones((256, 256), bool) if mask is None else mask)


def truth_from(codes):
    t = np.zeros(256 * 256, np.uint8)
    t[:len(codes)] = codes
    return t.reshape(256, 256)


# -- labels ----------------------------------------------------------------

def test_rasterize_no_polygons():
    assert not rasterize_labels([], FRAME).any()


def test_rasterize_full_frame():
    lat_min, lon_min, lat_max, lon_max = tile_bounds(FRAME)
    out = rasterize_labels([rectangle("commercial", lat_min, lon_min, lat_max, lon_max)], FRAME)
    assert (out == 2).all()


def test_rasterize_ten_by_ten():
    box = pixel_box(0, 0, 9, 9)
    out = rasterize_labels([rectangle("residential", *box)], FRAME)
    lat, lon = frame_pixel_centers(FRAME)
    oracle = (lat > box[0]) & (lat < box[2]) & (lon > box[1]) & (lon < box[3])
    assert oracle.sum() == 100 and oracle[:10, :10].all()
    assert np.array_equal(out == 1, oracle)
    assert out.sum() == 100


def test_rasterize_overlap_later_wins():
    a = rectangle("residential", *pixel_box(0, 0, 9, 9))
    b = rectangle("commercial", *pixel_box(5, 5, 14, 14))
    out = rasterize_labels([a, b], FRAME)
    assert out[7, 7] == 2 and out[2, 2] == 1 and out[12, 12] == 2
    assert rasterize_labels([b, a], FRAME)[7, 7] == 1


def test_rasterize_wrong_zoom():
    with pytest.raises(DomainError):
        rasterize_labels([], TileId(17, 0, 0))


@pytest.mark.parametrize("ring, index", [
    (((0, 0), (0, 1), (1, 1)), "index 2"),
    (((0, 0), (0, 1), (1, 1), (1, 0)), "index 3"),
    (((0, 0), (0, 1), (0, 1), (1, 1), (0, 0)), "index 2"),
    (((0, 0), (1, 1), (0, 1), (1, 0), (0, 0)), "index 0"),
])
def test_invalid_rings_name_vertex(ring, index):
    with pytest.raises(GeometryError, match=index):
        LabelPolygon("residential", ring)


def test_bowtie_reports_crossing_edges():
    with pytest.raises(GeometryError, match="self-intersects"):
        LabelPolygon("commercial", ((0, 0), (1, 1), (0, 1), (1, 0), (0, 0)))


def test_unknown_class():
    with pytest.raises(GeometryError):
        rectangle("industrial", 0, 0, 1, 1)


def test_labels_roundtrip(tmp_path):
    polys = [rectangle("residential", *pixel_box(0, 0, 9, 9), landscape="suburb"),
             rectangle("commercial", 37.7, -122.5, 37.8, -122.4)]
    save_labels(polys, tmp_path / "l.geojson")
    assert load_labels(tmp_path / "l.geojson") == polys
    (tmp_path / "bad.geojson").write_text("{not json")
    with pytest.raises(FormatError):
        load_labels(tmp_path / "bad.geojson")


def test_frame_landscape_majority():
    polys = [rectangle("residential", *pixel_box(0, 0, 9, 9), landscape="suburb"),
             rectangle("commercial", *pixel_box(20, 20, 49, 49), landscape="downtown")]
    assert frame_landscape(polys, FRAME) == "downtown"
    assert frame_landscape([], FRAME) == "all"


# -- classifier ------------------------------------------------------------

def features_oracle(tensor, r, row, col):
    own = tensor.data[row, col].astype(np.float64) * tensor.mask[row, col]
    acc, n = np.zeros(tensor.channels), 0
    for i in range(row - r, row + r + 1):
        for j in range(col - r, col + r + 1):
            if 0 <= i < 256 and 0 <= j < 256 and tensor.mask[i, j]:
                acc += tensor.data[i, j]
                n += 1
    return np.concatenate([own, acc / n if n else acc])


def test_pixel_features_oracle(rng):
    t = make_tensor(rng.normal(size=(256, 256, 3)), rng.random((256, 256)) < 0.3)
    f = pixel_features(t, 2)
    for row, col in [(0, 0), (0, 255), (100, 37), (255, 128), (1, 254)]:
        np.testing.assert_allclose(f[row, col], features_oracle(t, 2, row, col), atol=1e-12)


def scalar_softmax_oracle(params, x):
    dims = params.dims
    h, at = list(x), 0
    v = params.vector
    for k in range(len(dims) - 1):
        n_in, n_out = dims[k], dims[k + 1]
        W = v[at:at + n_in * n_out]
        b = v[at + n_in * n_out:at + n_in * n_out + n_out]
        at += n_in * n_out + n_out
        out = [sum(W[o * n_in + i] * h[i] for i in range(n_in)) + b[o] for o in range(n_out)]
        h = [math.tanh(z) for z in out] if k < len(dims) - 2 else out
    m = max(h)
    e = [math.exp(z - m) for z in h]
    return [z / sum(e) for z in e]


def test_predict_matches_scalar_oracle(rng):
    cfg = ClassifierConfig(context_radius=1, hidden=(5,), seed=3)
    params = init_classifier(2, cfg)
    params.vector[-2:] = [0.3, -0.2]
    t = make_tensor(rng.normal(size=(256, 256, 2)), rng.random((256, 256)) < 0.5)
    cm = predict(t, params, 0.5)
    feats = pixel_features(t, 1)
    for row, col in zip(*np.nonzero(t.mask[:20, :20])):
        np.testing.assert_allclose(cm.probs[row, col], scalar_softmax_oracle(params, feats[row, col]), atol=1e-12)
        conf = max(cm.probs[row, col])
        expected = 0 if conf <= 0.5 else 1 + int(np.argmax(cm.probs[row, col]))
        assert cm.classes[row, col] == expected


def test_threshold_one_all_background(rng):
    params = init_classifier(1, ClassifierConfig(seed=1))
    cm = predict(make_tensor(rng.normal(size=(256, 256))), params, 1.0)
    assert not cm.classes.any()


def test_masked_pixels_are_background(rng):
    params = init_classifier(1, ClassifierConfig(seed=1))
    params.vector[-2:] = [50.0, -50.0]  # saturated residential everywhere it is active
    mask = np.zeros((256, 256), bool)
    mask[3, 4] = True
    cm = predict(make_tensor(rng.normal(size=(256, 256)), mask), params, 0.5)
    assert cm.classes[3, 4] == 1
    assert cm.classes.sum() == 1
    assert not cm.probs[~mask].any()


def test_predict_channel_and_provenance_errors(rng):
    params = init_classifier(2, ClassifierConfig())
    with pytest.raises(DomainError):
        predict(make_tensor(rng.normal(size=(256, 256))), params)
    with pytest.raises(ProvenanceError):
        predict_proba(make_tensor(rng.normal(size=(256, 256, 2)), checksum=9), params)


def separable_fixture(rng, n_active=3000):
    data = rng.normal(size=(256, 256, 2))
    mask = np.zeros(256 * 256, bool)
    mask[rng.choice(mask.size, n_active, replace=False)] = True
    mask = mask.reshape(256, 256)
    score = data[..., 0] + 0.5 * data[..., 1]
    data[..., 0] += np.sign(score) * 0.3  # margin
    score = data[..., 0] + 0.5 * data[..., 1]
    labels = np.where(score > 0, 2, 1).astype(np.uint8) * mask
    return make_tensor(data, mask), labels


def test_separable_training_accuracy(rng):
    t, labels = separable_fixture(rng)
    cfg = ClassifierConfig(context_radius=0, hidden=(8,), epochs=40, learning_rate=1e-2, batch_size=128, seed=0)
    clf = train_classifier([t], [labels], cfg)
    cm = predict(t, clf.params, 0.0)
    active = t.mask
    acc = np.mean(cm.classes[active] == labels[active])
    assert acc > 0.99
    assert clf.losses[-1] < clf.losses[0]


def test_zero_epochs_returns_init(rng):
    t, labels = separable_fixture(rng, 200)
    cfg = ClassifierConfig(epochs=0, seed=4)
    clf = train_classifier([t], [labels], cfg)
    assert np.array_equal(clf.params.vector, init_classifier(2, cfg).vector)
    assert clf.losses == []


def test_training_deterministic(rng):
    t, labels = separable_fixture(rng, 500)
    cfg = ClassifierConfig(epochs=3, seed=2)
    a = train_classifier([t], [labels], cfg)
    b = train_classifier([t], [labels], cfg)
    assert a.params.vector.tobytes() == b.params.vector.tobytes()


def test_single_class_warns(rng):
    t, labels = separable_fixture(rng, 200)
    with pytest.warns(RuntimeWarning, match="single class"):
        train_classifier([t], [np.where(labels > 0, 1, 0).astype(np.uint8)], ClassifierConfig(epochs=1))


def test_permuted_labels_give_prior_accuracy(rng):
    train_t, _ = separable_fixture(rng, 4000)
    test_t, _ = separable_fixture(rng, 4000)
    prior = 0.7

    def random_labels(t):
        return (np.where(rng.random((256, 256)) < prior, 1, 2) * t.mask).astype(np.uint8)

    train_lab, test_lab = random_labels(train_t), random_labels(test_t)
    clf = train_classifier([train_t], [train_lab], ClassifierConfig(context_radius=0, hidden=(8,), epochs=20, seed=0))
    cm = predict(test_t, clf.params, 0.0)
    acc = np.mean(cm.classes[test_t.mask] == test_lab[test_t.mask])
    assert abs(acc - prior) < 0.04


# -- PR evaluation ---------------------------------------------------------

def test_pr_perfect_predictions():
    codes = [1, 1, 2, 0, 2, 1]
    res = [1.0 if c == 1 else 0.0 for c in codes]
    com = [1.0 if c == 2 else 0.0 for c in codes]
    cm = class_map(res, com)
    for cls in ("residential", "commercial"):
        c = pr_curve([cm], [truth_from(codes)], cls)
        assert len(c.thresholds) == 50  # every threshold below 1.0 is achievable
        assert (c.precision == 1).all() and (c.recall == 1).all()
        assert c.aupr() == pytest.approx(1.0)


def test_pr_all_background():
    c = pr_curve([class_map([])], [truth_from([1, 1])], "residential")
    assert c.recall.size == 0 or (c.recall == 0).all()
    assert c.aupr() == 0.0


def test_pr_hand_fixture():
    cm = class_map([0.9, 0.8, 0.7, 0.2])
    c = pr_curve([cm], [truth_from([1, 1, 0, 1])], "residential")
    i = int(np.flatnonzero(np.isclose(c.thresholds, 0.5))[0])
    assert (c.tp[i], c.fp[i], c.fn[i]) == (2, 1, 1)
    assert c.precision[i] == pytest.approx(2 / 3) and c.recall[i] == pytest.approx(2 / 3)


def test_pr_no_truth_pixels():
    with pytest.raises(DomainError, match="commercial"):
        pr_curve([class_map([0.9])], [truth_from([1])], "commercial")


@settings(max_examples=40)
@given(st.lists(st.tuples(st.floats(0, 1), st.sampled_from([0, 1, 2])), min_size=1, max_size=60))
def test_pr_invariants(items):
    probs, codes = zip(*items)
    if 1 not in codes:
        codes = codes[:-1] + (1,)
    c = pr_curve([class_map(list(probs))], [truth_from(list(codes))], "residential")
    n_truth = sum(1 for k in codes if k == 1)
    assert np.all(np.diff(c.thresholds) > 0)
    assert np.all((c.precision >= 0) & (c.precision <= 1) & (c.recall >= 0) & (c.recall <= 1))
    assert np.all(np.diff(c.recall) <= 0)
    assert np.all(c.tp + c.fn == n_truth)
    assert set(np.round(c.thresholds, 2)) <= set(THRESHOLDS)
    assert 0.0 <= c.aupr() <= 1.0


def test_split_frames_deterministic():
    frames = [TileId(16, i, 0) for i in range(10)]
    a = split_frames(frames, 0.5, 3)
    assert a == split_frames(list(reversed(frames)), 0.5, 3)
    assert len(a[1]) == 5 and not set(a[0]) & set(a[1])


# -- paired arms -----------------------------------------------------------

def arms_fixture(rng, n_frames=4, n_active=1500, channels=2):
    frames = [TileId(16, FRAME.x + i, FRAME.y) for i in range(n_frames)]
    tensors, labels = [], {}
    for f in frames:
        mask = np.zeros(256 * 256, bool)
        mask[rng.choice(mask.size, n_active, replace=False)] = True
        mask = mask.reshape(256, 256)
        tensors.append(make_tensor(rng.normal(size=(256, 256, channels)), mask, tile=f))
        labels[f] = (np.where(rng.random((256, 256)) < 0.3, 2, 1) * mask).astype(np.uint8)
    return frames, tensors, labels


def test_identical_arms_identical_curves(rng):
    frames, tensors, labels = arms_fixture(rng, n_active=400)
    cfg = ClassifierConfig(epochs=3, seed=1)
    rep = run_arms({"a": tensors, "b": tensors}, labels, {f: "all" for f in frames}, cfg, frames[:2], frames[2:])
    for cls in ("residential", "commercial"):
        ca, cb = rep.curves[("a", cls, "all")], rep.curves[("b", cls, "all")]
        assert ca.precision.tobytes() == cb.precision.tobytes()
        assert ca.recall.tobytes() == cb.recall.tobytes()


def test_null_experiment_aupr_near_prior(rng):
    frames, tensors, labels = arms_fixture(rng)
    counts = [make_tensor(rng.random((256, 256)), t.mask, tile=t.tile) for t in tensors]
    cfg = ClassifierConfig(context_radius=0, hidden=(8,), epochs=10, seed=0)
    rep = run_arms({"embedding": tensors, "count": counts}, labels, {f: "all" for f in frames}, cfg,
                   frames[:2], frames[2:])
    for arm in ("embedding", "count"):
        assert rep.aupr(arm, "commercial") == pytest.approx(0.3, abs=0.05)
        assert rep.aupr(arm, "residential") == pytest.approx(0.7, abs=0.05)


def test_unfair_arms_rejected(rng):
    frames, tensors, labels = arms_fixture(rng, n_active=100)
    other = [make_tensor(t.data, ~t.mask, tile=t.tile) for t in tensors]
    with pytest.raises(DomainError):
        run_arms({"a": tensors, "b": other}, labels, {f: "all" for f in frames}, ClassifierConfig(epochs=1),
                 frames[:2], frames[2:])


# -- files -----------------------------------------------------------------

def test_classifier_roundtrip(tmp_path):
    p = init_classifier(3, ClassifierConfig(hidden=(4, 5), seed=2), params_checksum=77)
    save_classifier(p, tmp_path / "c.pxcl")
    q = load_classifier(tmp_path / "c.pxcl")
    assert (q.in_channels, q.context_radius, q.hidden, q.params_checksum) == (3, 2, (4, 5), 77)
    assert q.vector.tobytes() == p.vector.tobytes()


def test_predictions_roundtrip(tmp_path, rng):
    probs = rng.random((256, 256, 2)).astype(np.float32).astype(np.float64)
    mask = rng.random((256, 256)) < 0.5
    cm = ClassMap(FRAME, probs, mask, 0.4)
    save_predictions([cm], tmp_path / "p.pred")
    (back,) = load_predictions(tmp_path / "p.pred")
    assert back.tile == FRAME and back.threshold == 0.4
    assert np.array_equal(back.mask, mask) and np.array_equal(back.probs, probs)


def test_pr_report_roundtrip_and_plot(tmp_path):
    cm = class_map([0.9, 0.8, 0.7, 0.2], [0.1, 0.2, 0.3, 0.8])
    truth = truth_from([1, 1, 0, 2])
    curves = {("embedding", cls, "all"): pr_curve([cm], [truth], cls) for cls in ("residential", "commercial")}
    write_pr_report(curves, tmp_path / "r.csv")
    rows = read_pr_report(tmp_path / "r.csv")
    assert set(rows) == set(curves)
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "arm,class,landscape,threshold,precision,recall"
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        plot_pr_curves(curves, tmp_path / "r.png")
    assert (tmp_path / "r.png").stat().st_size > 0
