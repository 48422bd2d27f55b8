import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tagforge.estimation import (ESTIMATOR_VERSION, HISTOGRAM, THUMBNAIL, Estimator, EstimatorFileError,
                                 dumps_estimator, extract_features, fit, from_features, load_estimator,
                                 loads_estimator, predict, save_estimator)
from tagforge.scene_model import OptionKey

from oracles import histogram_loop, knn_predict_bruteforce, thumbnail_loop


def images(n, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.random((256, 128, 3)) for _ in range(n)]


def test_black_histogram():
    f = extract_features(np.zeros((256, 128, 3)), HISTOGRAM)
    assert f[0] == 1.0 and f[1:].sum() == 0.0 and len(f) == 32


def test_white_thumbnail():
    f = extract_features(np.ones((256, 128, 3)), THUMBNAIL)
    np.testing.assert_allclose(f, np.ones(128), atol=1e-12)


def test_half_split_thumbnail():
    img = np.zeros((256, 128, 3))
    img[:, 64:] = 1.0
    f = extract_features(img, THUMBNAIL).reshape(16, 8)
    np.testing.assert_allclose(f[:, :4], 0.0, atol=1e-12)
    np.testing.assert_allclose(f[:, 4:], 1.0, atol=1e-12)


@pytest.mark.parametrize("tag,oracle", [(HISTOGRAM, histogram_loop), (THUMBNAIL, thumbnail_loop)])
def test_features_match_loop_oracle(tag, oracle):
    img = images(1, 3)[0]
    np.testing.assert_allclose(extract_features(img, tag), oracle(img), atol=1e-12)


def test_histogram_sums_to_one():
    assert extract_features(images(1)[0], HISTOGRAM).sum() == pytest.approx(1.0)


def test_wrong_dims():
    with pytest.raises(ValueError, match="256x128"):
        extract_features(np.zeros((128, 64, 3)), HISTOGRAM)


def test_unknown_tag():
    with pytest.raises(ValueError):
        extract_features(np.zeros((256, 128, 3)), "hog")


def test_one_nn_returns_own_label():
    imgs = images(10)
    labels = np.linspace(0.5, 2.0, 10)
    est = fit("gamma", list(zip(imgs, labels)), k=1)
    for img, y in zip(imgs, labels):
        assert predict(est, img) == y


def test_k_larger_than_set():
    with pytest.raises(ValueError):
        fit("gamma", list(zip(images(3), [1.0, 1.1, 1.2])), k=5)


def test_empty_set():
    with pytest.raises(ValueError):
        fit("gamma", [])


def test_not_estimable():
    with pytest.raises(ValueError, match="option not estimable"):
        fit("background_ref", list(zip(images(2), [1.0, 1.0])), k=1)


def test_equidistant_pair_mean():
    feats = np.zeros((2, 32))
    feats[0, 0], feats[1, 1] = 1.0, 1.0
    est = from_features(OptionKey.gamma, HISTOGRAM, 2, feats, np.array([0.5, 1.5]))
    q = np.zeros(32)
    q[0] = q[1] = 0.5
    assert est.predict_features(q) == 1.0


def test_equidistant_labels_zero_one():
    est = from_features(OptionKey.camera_depression_deg, THUMBNAIL, 2,
                        np.stack([np.zeros(128), np.full(128, 2.0)]), np.array([0.0, 1.0]))
    assert est.predict_features(np.ones(128)) == 0.5


def test_prediction_clamped():
    est = from_features(OptionKey.gamma, HISTOGRAM, 1, np.zeros((1, 32)), np.array([2.5]))
    assert est.predict_features(np.zeros(32)) <= 2.5


def test_label_range_enforced():
    with pytest.raises(ValueError):
        from_features(OptionKey.gamma, HISTOGRAM, 1, np.zeros((1, 32)), np.array([3.0]))


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 60), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_matches_bruteforce_oracle(n, k, seed):
    rng = np.random.default_rng(seed)
    # coarse values make exact distance ties common
    feats = rng.integers(0, 3, size=(n, 32)).astype(float) / 4
    labels = rng.integers(5, 20, size=n) / 10
    est = from_features(OptionKey.gamma, HISTOGRAM, k, feats, labels)
    for _ in range(5):
        q = rng.integers(0, 3, size=32).astype(float) / 4
        expected = knn_predict_bruteforce(est.features.tolist(), est.labels.tolist(), q.tolist(), k, 0.4, 2.5)
        assert est.predict_features(q) == expected


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_insertion_order_invariance(seed):
    rng = np.random.default_rng(seed)
    feats = rng.integers(0, 2, size=(30, 32)).astype(float)
    labels = rng.integers(4, 25, size=30) / 10
    perm = rng.permutation(30)
    a = from_features(OptionKey.gamma, HISTOGRAM, 3, feats, labels)
    b = from_features(OptionKey.gamma, HISTOGRAM, 3, feats[perm], labels[perm])
    for q in rng.integers(0, 2, size=(10, 32)).astype(float):
        assert a.predict_features(q) == b.predict_features(q)


@pytest.fixture
def est():
    rng = np.random.default_rng(9)
    return from_features(OptionKey.camera_depression_deg, THUMBNAIL, 5, rng.random((40, 128)),
                         rng.uniform(0, 60, 40))


def test_save_load_bit_exact(est, tmp_path):
    path = tmp_path / "dep.est"
    save_estimator(est, path)
    back = load_estimator(path)
    assert back.option_key is est.option_key and back.tag == est.tag and back.k == est.k
    rng = np.random.default_rng(10)
    for q in rng.random((100, 128)):
        assert back.predict_features(q) == est.predict_features(q)


def test_truncated(est):
    data = dumps_estimator(est)
    for cut in (3, 12, len(data) // 2, len(data) - 1):
        with pytest.raises(EstimatorFileError):
            loads_estimator(data[:cut])


def test_wrong_version(est):
    data = bytearray(dumps_estimator(est))
    data[5] = ESTIMATOR_VERSION + 1
    with pytest.raises(EstimatorFileError, match="unsupported estimator version"):
        loads_estimator(bytes(data))


def test_corrupted_payload(est):
    data = bytearray(dumps_estimator(est))
    data[-20] ^= 0xFF
    with pytest.raises(EstimatorFileError, match="checksum"):
        loads_estimator(bytes(data))


def test_bad_magic():
    with pytest.raises(EstimatorFileError, match="magic"):
        loads_estimator(b"NOTANESTIMATOR")


def test_estimator_arrays_read_only(est):
    assert isinstance(est, Estimator)
    with pytest.raises(ValueError):
        est.labels[0] = 1.0
