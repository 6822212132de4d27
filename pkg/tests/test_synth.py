import numpy as np
import pytest

from ssdal.errors import ConfigError, DataError
from ssdal.synth import SynthConfig, emit_id_set, emit_labeled_set, emit_probe_gallery, generate_world


def world(**kw):
    base = dict(num_identities=30, num_attributes=12, feature_dim=8, mean_positive_attributes=4, seed=3)
    base.update(kw)
    return generate_world(SynthConfig(**base))


def test_zero_flip_rate_labels_equal_prototypes():
    w = world(attribute_flip_rate=0.0)
    for i in range(5):
        for c in range(2):
            np.testing.assert_array_equal(w.observed_labels(i, c), w.prototypes[i])


def test_labeled_set_shapes_and_counts():
    w = world(samples_per_identity_per_camera=3)
    s = emit_labeled_set(w, range(4))
    assert s.features.shape == (4 * 2 * 3, 8) and s.labels.shape == (24, 12)
    assert all((s.person_ids == i).sum() == 6 for i in range(4))


def test_id_set_disjoint_from_labeled_set():
    w = world()
    t = emit_labeled_set(w, range(0, 10))
    u = emit_id_set(w, range(10, 20))
    assert not set(t.person_ids.tolist()) & set(u.person_ids.tolist())


def test_deterministic():
    a = emit_id_set(world(), range(5))
    b = emit_id_set(world(), range(5))
    np.testing.assert_array_equal(a.features, b.features)
    c = emit_id_set(world(seed=4), range(5))
    assert not np.array_equal(a.features, c.features)


def test_features_differ_across_cameras():
    w = world(feature_noise_sigma=0.0, nuisance_scale=0.0, camera_offset_scale=1.0)
    assert not np.allclose(w.sample(0, 0, 0), w.sample(0, 1, 0))
    np.testing.assert_allclose(w.sample(0, 0, 0) - w.sample(0, 1, 0), w.camera_offsets[0] - w.camera_offsets[1])


def test_probe_gallery_overlap_and_distractors():
    w = world()
    pg = emit_probe_gallery(w, range(5), 0, (1,), distractor_ids=range(20, 23))
    assert set(pg.probe_ids.tolist()) == set(range(5))
    assert set(pg.probe_ids.tolist()) & set(pg.gallery_ids.tolist()) == set(range(5))
    assert pg.distractor_ids.tolist() == [20, 21, 22]
    assert np.all(pg.probe_cameras == 0) and np.all(pg.gallery_cameras == 1)
    with pytest.raises(ConfigError):
        emit_probe_gallery(w, range(5), 0, (0,))
    with pytest.raises(DataError):
        emit_probe_gallery(w, range(5), 0, (1,), distractor_ids=[3])


def test_mean_positive_attributes_within_three_sigma():
    K, mpa, n = 40, 10.0, 2000
    w = generate_world(SynthConfig(num_identities=n, num_attributes=K, mean_positive_attributes=mpa,
                                   attribute_flip_rate=0.0, feature_dim=4, seed=11))
    q = mpa / K
    sigma = np.sqrt(K * q * (1 - q) / n)
    assert abs(w.prototypes.sum(axis=1).mean() - mpa) < 3 * sigma


def test_flip_rate_matches_monte_carlo():
    w = generate_world(SynthConfig(num_identities=500, num_attributes=40, attribute_flip_rate=(0.1, 0.3),
                                   feature_dim=4, seed=2))
    n = 500 * 40
    for c, r in enumerate((0.1, 0.3)):
        assert abs(w.flips[:, c].mean() - r) < 3 * np.sqrt(r * (1 - r) / n)


@pytest.mark.parametrize("kw", [dict(num_identities=0), dict(attribute_flip_rate=0.5),
                                dict(attribute_flip_rate=(0.1, 0.1, 0.1)), dict(mean_positive_attributes=0.5),
                                dict(feature_noise_sigma=-1.0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        SynthConfig(**kw)


def test_subset_validation():
    w = world()
    with pytest.raises(DataError):
        emit_id_set(w, [])
    with pytest.raises(DataError):
        emit_id_set(w, [99])
