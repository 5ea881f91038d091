import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hsiband.nn.checkpoint import checkpoint_bytes
from hsiband.nn.cnn import CnnClassifier, cnn_forward
from hsiband.nn.train import TrainConfig
from hsiband.scan import (
    BandAccuracyProfile,
    ProfileStats,
    SplitSpec,
    pearson_corr,
    per_band_accuracy,
    profile_stats,
    select_dense_interval,
    select_top_bands,
    split_dataset,
    train_scan_cnn,
    write_profile_csv,
)
from hsiband.screen import BandInterval
from hsiband.segmentation import BoundingBox, SeedROI
from hsiband.synth import SynthSpec, generate_synthetic_dataset
from oracles import pearson_naive


def _rois(n_per_class, size=16, bands=3, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(2 * n_per_class):
        stack = rng.uniform(size=(size, size, bands)).astype(np.float32)
        out.append(SeedROI(stack, ("diploid", "haploid")[k % 2], k, BoundingBox(0, size - 1, 0, size - 1)))
    return out


def test_split_paper_sizes_and_determinism():
    rois = _rois(100, size=2, bands=1)
    train, test = split_dataset(rois, SplitSpec(60, 3))
    assert len(train) == 120 and len(test) == 80
    assert not set(train) & set(test)
    assert sum(rois[i].label == "haploid" for i in train) == 60
    assert (train, test) == split_dataset(rois, SplitSpec(60, 3))
    assert train != split_dataset(rois, SplitSpec(60, 4))[0]


def test_split_leaves_one_per_class():
    rois = _rois(5, size=2, bands=1)
    _, test = split_dataset(rois, SplitSpec(4, 0))
    assert sorted(rois[i].label for i in test) == ["diploid", "haploid"]
    with pytest.raises(ValueError):
        split_dataset(rois, SplitSpec(5, 0))


def test_constant_predictor_scores_half():
    rois = _rois(4)
    p = CnnClassifier(image_size=16).init_params(np.random.default_rng(0))
    p["fc3_W"][:] = 0
    p["fc3_b"][:] = [1.0, 0.0]
    prof = per_band_accuracy(p, rois, list(range(8)), [1, 2, 3])
    assert prof.accuracy == [0.5, 0.5, 0.5]


def test_per_band_accuracy_matches_per_sample_loop():
    rng = np.random.default_rng(1)
    for trial in range(100):
        rois = _rois(3, size=12, bands=4, seed=trial)
        model = CnnClassifier(image_size=12, kernel1=3, channels1=2, kernel2=3, channels2=2, fc1=4, fc2=3)
        p = model.init_params(rng)
        p["fc3_b"] += rng.normal(scale=0.05, size=2)
        ids = sorted(rng.choice(6, size=4, replace=False).tolist())
        bands = [1, 3, 4]
        prof = per_band_accuracy(p, rois, ids, bands)
        for b, acc in zip(bands, prof.accuracy):
            hits = sum(int(np.argmax(cnn_forward(rois[i].stack[:, :, b - 1], p)) == rois[i].target) for i in ids)
            assert abs(acc - hits / len(ids)) < 1e-10


def test_per_band_accuracy_permutation_invariant():
    rois = _rois(3)
    p = CnnClassifier(image_size=16).init_params(np.random.default_rng(2))
    a = per_band_accuracy(p, rois, [0, 1, 2, 3, 4, 5], [1, 2])
    b = per_band_accuracy(p, rois, [5, 3, 1, 0, 4, 2], [1, 2])
    assert a.accuracy == b.accuracy
    assert all(abs(v * 6 - round(v * 6)) < 1e-12 for v in a.accuracy)


def test_profile_stats_hand_values():
    s = profile_stats(BandAccuracyProfile([1, 2, 3, 4], [0.9, 0.9, 0.8, 1.0]), 0.9)
    assert s.mean == pytest.approx(0.9, abs=1e-12)
    assert s.max == 1.0
    assert s.std == pytest.approx(np.sqrt(0.02 / 3), abs=1e-12)
    assert s.count_ge_threshold == 3
    assert profile_stats(BandAccuracyProfile([7], [0.6])).std == 0.0


@given(st.floats(0, 1), st.integers(1, 20))
def test_profile_stats_constant(c, n):
    s = profile_stats(BandAccuracyProfile(list(range(1, n + 1)), [c] * n), 0.9)
    assert (s.mean, s.max, s.std) == (pytest.approx(c), c, pytest.approx(0.0, abs=1e-12))
    assert s.count_ge_threshold == (n if c >= 0.9 else 0)


def _stats(count, mean, mx):
    return ProfileStats(mean, mx, 0.0, count)


def test_select_dense_interval_paper_rows():
    # Table 2 rows for 51-100, 101-150 and 151-200 (std is not used by the rule)
    stats = {
        BandInterval(51, 100): ProfileStats(0.814, 0.90, 0.0419, 2),
        BandInterval(101, 150): ProfileStats(0.787, 0.86, 0.0409, 0),
        BandInterval(151, 200): ProfileStats(0.872, 0.95, 0.0514, 18),
    }
    assert select_dense_interval(stats) == BandInterval(151, 200)


def test_select_dense_interval_tie_breaks_and_order():
    a, b, c = BandInterval(1, 5), BandInterval(6, 10), BandInterval(11, 15)
    assert select_dense_interval({a: _stats(1, 0.5, 0.9)}) == a
    stats = {a: _stats(3, 0.8, 0.9), b: _stats(3, 0.85, 0.9), c: _stats(2, 0.99, 1.0)}
    assert select_dense_interval(stats) == b
    assert select_dense_interval(dict(reversed(list(stats.items())))) == b
    tie = {a: _stats(3, 0.8, 0.95), b: _stats(3, 0.8, 0.9)}
    assert select_dense_interval(tie) == a


def test_select_top_bands():
    prof = BandAccuracyProfile([164, 165, 166], [0.89, 0.91, 0.95])
    assert select_top_bands(prof, 0.90) == [165, 166]
    assert select_top_bands(prof, 0.99) == []
    assert select_top_bands(prof, 0.0) == [164, 165, 166]


def test_pearson_examples():
    v = [0.3, 0.1, 0.9, 0.5]
    assert pearson_corr(v, v) == pytest.approx(1.0)
    assert pearson_corr(v, [-x for x in v]) == pytest.approx(-1.0)
    assert pearson_corr([1, 2, 3], [1, 2, 4]) == pytest.approx(3 / (np.sqrt(2) * np.sqrt(42 / 9)), abs=1e-12)
    with pytest.raises(ValueError):
        pearson_corr([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson_corr([1], [2])


def test_pearson_matches_naive_and_is_affine_invariant():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(2, 30))
        a, b = rng.normal(size=n), rng.normal(size=n)
        r = pearson_corr(a, b)
        assert abs(r - pearson_naive(a.tolist(), b.tolist())) < 1e-10
        assert abs(pearson_corr(rng.uniform(0.1, 5) * a + rng.normal(), b) - r) < 1e-10


def test_train_scan_cnn_separable_and_deterministic():
    spec = SynthSpec(band_count=10, noise_std=(0.05, 0.05), signal_interval=2, seeds_per_class=6, image_size=16)
    rois, _ = generate_synthetic_dataset(spec)
    train, test = split_dataset(rois, SplitSpec(4, 0))
    cfg = TrainConfig(batch_size=16, iterations=150, rng_seed=2)
    a = train_scan_cnn(rois, BandInterval(6, 10), train, cfg)
    b = train_scan_cnn(rois, BandInterval(6, 10), train, cfg)
    assert a.train_accuracy >= 0.95
    assert checkpoint_bytes(a.params) == checkpoint_bytes(b.params)
    prof = per_band_accuracy(a.params, rois, test, list(range(6, 11)))
    assert min(prof.accuracy) >= 0.75
    with pytest.raises(ValueError):
        train_scan_cnn(rois, [], train, cfg)


def test_profile_csv(tmp_path):
    prof = BandAccuracyProfile([2, 3], [0.5, 1.0])
    write_profile_csv(prof, [900.0, 910.0, 920.0], tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines() == ["band,wavelength_nm,accuracy", "2,910.0,0.5", "3,920.0,1.0"]


def test_profile_validation():
    with pytest.raises(ValueError):
        BandAccuracyProfile([1, 2], [0.5])
    with pytest.raises(ValueError):
        BandAccuracyProfile([1], [1.5])
