import math

import numpy as np
import pytest

from hsiband.cube import HyperCube, calibrate
from hsiband.segmentation import (
    BoundingBox,
    SeedROI,
    binarize,
    estimate_background_threshold,
    extract_bounding_boxes,
    extract_rois,
    load_rois,
    resize_bilinear,
    resize_nearest,
    save_rois,
    segment_cube,
)
from hsiband.synth import SynthSpec, generate_raw_cube
from oracles import bilinear_pixel, flood_fill_boxes


def test_threshold_examples():
    img = np.full((20, 20), 0.9)
    img[:8, :] = img[-8:, :] = img[:, :8] = img[:, -8:] = 0.2
    assert estimate_background_threshold(img) == 0.2
    rng = np.random.default_rng(0)
    img = rng.uniform(0.1, 0.3, (20, 20))
    img[8:-8, 8:-8] = 5.0
    border = np.ones((20, 20), bool)
    border[8:-8, 8:-8] = False
    assert estimate_background_threshold(img) == img[border].max()


def test_threshold_percentile_matches_sort_and_index():
    rng = np.random.default_rng(1)
    for _ in range(50):
        img = rng.normal(size=(30, 25))
        vals = np.sort(np.concatenate([img[:8].ravel(), img[-8:].ravel(), img[8:-8, :8].ravel(), img[8:-8, -8:].ravel()]))
        assert estimate_background_threshold(img, 8, 0.99) == vals[math.ceil(0.99 * vals.size) - 1]


def test_threshold_needs_interior():
    with pytest.raises(ValueError):
        estimate_background_threshold(np.zeros((16, 16)), margin=8)


def test_binarize_is_strict_elementwise():
    rng = np.random.default_rng(2)
    img = rng.uniform(size=(9, 7))
    assert not binarize(img, 2.0).any()
    assert binarize(img, -1.0).all()
    t = 0.5
    expected = [[v > t for v in row] for row in img.tolist()]
    assert binarize(img, t).tolist() == expected


def test_boxes_examples():
    assert extract_bounding_boxes(np.zeros((10, 10), bool), min_area=1) == []
    mask = np.zeros((10, 10), bool)
    mask[2:5, 5:8] = True
    assert extract_bounding_boxes(mask, min_area=1) == [BoundingBox(2, 4, 5, 7)]
    mask[7:9, 0:2] = True
    assert [b.as_list() for b in extract_bounding_boxes(mask, min_area=1)] == [[2, 4, 5, 7], [7, 8, 0, 1]]


def test_boxes_match_flood_fill_and_diagonal_connectivity():
    mask = np.zeros((5, 5), bool)
    mask[0, 0] = mask[1, 1] = True
    assert len(extract_bounding_boxes(mask, min_area=1)) == 1
    rng = np.random.default_rng(3)
    for _ in range(100):
        mask = rng.uniform(size=(15, 18)) < 0.25
        min_area = int(rng.integers(1, 5))
        expected = sorted((box for area, box in flood_fill_boxes(mask) if area >= min_area), key=lambda b: (b[0], b[2]))
        got = [tuple(b.as_list()) for b in extract_bounding_boxes(mask, min_area)]
        assert got == expected


def test_resize_bilinear_matches_per_pixel_formula():
    rng = np.random.default_rng(4)
    img = rng.uniform(size=(4, 4))
    out = resize_bilinear(img, 2)
    for i in range(2):
        for j in range(2):
            assert out[i, j] == pytest.approx(bilinear_pixel(img, 2, i, j), abs=1e-12)
    for _ in range(30):
        h = int(rng.integers(2, 12))
        img = rng.uniform(size=(h, h, 3))
        size = int(rng.integers(1, 15))
        out = resize_bilinear(img, size)
        for i in range(size):
            for j in range(size):
                assert np.allclose(out[i, j], bilinear_pixel(img, size, i, j), atol=1e-12)


def test_resize_nearest_keeps_values():
    m = np.eye(4, dtype=bool)
    assert resize_nearest(m, 4).tolist() == m.tolist()
    assert resize_nearest(m, 2).dtype == bool


def test_extract_rois_constant_and_empty():
    data = np.full((10, 10, 2), 0.7, dtype=np.float32)
    cube = HyperCube(data, [1.0, 2.0])
    mask = np.zeros((10, 10), bool)
    mask[2:6, 2:6] = True
    rois = extract_rois(cube, [BoundingBox(2, 5, 2, 5), BoundingBox(7, 9, 7, 9)], mask, ["haploid", "diploid"], 8)
    assert np.all(rois[0].stack == np.float32(0.7))
    assert np.all(rois[1].stack == 0)
    assert rois[0].target == 1 and rois[1].target == 0
    assert [r.seed_id for r in rois] == [0, 1]


def test_extract_rois_label_count_mismatch():
    cube = HyperCube(np.zeros((4, 4, 1)), [1.0])
    with pytest.raises(ValueError):
        extract_rois(cube, [BoundingBox(0, 1, 0, 1)], np.ones((4, 4), bool), [], 4)


def test_unknown_label_rejected():
    with pytest.raises(ValueError):
        SeedROI(np.zeros((2, 2, 1)), "triploid", 0, BoundingBox(0, 1, 0, 1))


def test_segment_synthetic_scene_recovers_blobs():
    spec = SynthSpec(seeds_per_class=3, band_count=12, rng_seed=5)
    scene = generate_raw_cube(spec)
    reflectance = calibrate(scene.raw, scene.frames)
    rois, mask, boxes = segment_cube(reflectance, scene.labels, band=5, target_size=16)
    assert boxes == scene.boxes
    assert (mask & scene.mask).sum() >= 0.99 * scene.mask.sum()
    assert [r.label for r in rois] == scene.labels


def test_roi_persistence_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    rois = [
        SeedROI(rng.uniform(size=(4, 4, 3)).astype(np.float32), lab, k, BoundingBox(k, k + 3, 0, 3), "c")
        for k, lab in enumerate(["diploid", "haploid", "diploid"])
    ]
    save_rois(rois, np.array([1.0, 2.0, 3.0]), tmp_path)
    back, wl = load_rois(tmp_path)
    assert wl.tolist() == [1.0, 2.0, 3.0]
    for a, b in zip(rois, back):
        assert np.array_equal(a.stack, b.stack)
        assert (a.label, a.seed_id, a.source_box, a.cultivar) == (b.label, b.seed_id, b.source_box, b.cultivar)
