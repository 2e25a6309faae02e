import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from defrend import metrics, rng, scenegen
from defrend.errors import InvalidParameter, ShapeMismatch


def rand_img(h=16, w=16, seed=0, channels=3):
    return rng.generator(seed, 5).uniform(0, 1, (h, w, channels))


# ---------------------------------------------------------------------------
# PSNR


def test_psnr_identical_capped():
    img = rand_img()
    assert metrics.psnr(img, img) == 99.0


def test_psnr_uniform_difference_twenty_db():
    a = np.zeros((8, 8, 3))
    b = np.full((8, 8, 3), 0.1)  # MSE = 0.01
    assert abs(metrics.psnr(a, b) - 20.0) < 1e-9


def test_psnr_symmetric_and_shape_checked():
    a, b = rand_img(seed=1), rand_img(seed=2)
    assert metrics.psnr(a, b) == metrics.psnr(b, a)
    with pytest.raises(ShapeMismatch):
        metrics.psnr(a, b[:8])


# ---------------------------------------------------------------------------
# SSIM


def naive_ssim(a, b):
    """Windowed SSIM via explicit python loops (the reference oracle)."""
    k = metrics._gaussian_window()
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    h, w, c = a.shape
    vals = []
    for ch in range(c):
        per = []
        for i in range(h - 10):
            for j in range(w - 10):
                wa = a[i:i + 11, j:j + 11, ch]
                wb = b[i:i + 11, j:j + 11, ch]
                ma = (k * wa).sum()
                mb = (k * wb).sum()
                va = (k * wa * wa).sum() - ma * ma
                vb = (k * wb * wb).sum() - mb * mb
                cov = (k * wa * wb).sum() - ma * mb
                num = (2 * ma * mb + metrics.SSIM_C1) * (2 * cov + metrics.SSIM_C2)
                den = ((ma * ma + mb * mb + metrics.SSIM_C1)
                       * (va + vb + metrics.SSIM_C2))
                per.append(num / den)
        vals.append(np.mean(per))
    return float(np.mean(vals))


def test_ssim_identical_is_one():
    img = rand_img()
    assert abs(metrics.ssim(img, img) - 1.0) < 1e-12


def test_ssim_constant_images_equal_means():
    a = np.full((16, 16, 3), 0.4)
    assert abs(metrics.ssim(a, a.copy()) - 1.0) < 1e-12


def test_ssim_binary_vs_negative_is_low():
    g = rng.generator(3, 1)
    a = (g.uniform(0, 1, (32, 32, 3)) > 0.5).astype(np.float64)
    assert metrics.ssim(a, 1.0 - a) < 0.1


def test_ssim_matches_naive_double_loop():
    a, b = rand_img(seed=7), rand_img(seed=8)
    assert abs(metrics.ssim(a, b) - naive_ssim(a, b)) < 1e-9
    # also on structured (correlated) inputs
    c = np.clip(a + 0.1 * rand_img(seed=9), 0, 1)
    assert abs(metrics.ssim(a, c) - naive_ssim(a, c)) < 1e-9


def test_ssim_too_small_image_rejected():
    with pytest.raises(InvalidParameter):
        metrics.ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


# ---------------------------------------------------------------------------
# pose metrics


def unit_cube_vertices():
    return np.array([[x, y, z] for x in (0, 1) for y in (0, 1)
                     for z in (0, 1)], dtype=np.float64)


def test_add_zero_for_identical_poses():
    pts = unit_cube_vertices()
    p = scenegen.Pose.identity()
    assert metrics.add(pts, p, p) == 0.0


def test_add_pure_translation():
    pts = unit_cube_vertices()
    gt = scenegen.Pose.identity()
    pred = scenegen.Pose(np.eye(3), np.array([0.01, 0.0, 0.0]))
    assert abs(metrics.add(pts, gt, pred) - 0.010) < 1e-12


def test_add_rotation_matches_brute_force():
    pts = unit_cube_vertices()
    gt = scenegen.Pose.identity()
    pred = scenegen.Pose(scenegen.rot_z(np.pi / 2), np.zeros(3))
    expected = np.mean([np.linalg.norm(p - scenegen.rot_z(np.pi / 2) @ p)
                        for p in pts])
    assert abs(metrics.add(pts, gt, pred) - expected) < 1e-12


def test_add_invariant_under_common_rigid_transform():
    pts = unit_cube_vertices()
    g = rng.generator(6, 2)
    u = g.uniform(0, 1, 3)
    gt = scenegen.Pose(scenegen.random_rotation(*u), g.uniform(-1, 1, 3))
    pred = scenegen.Pose(scenegen.rot_z(0.3) @ gt.rotation,
                         gt.translation + np.array([0.02, -0.01, 0.005]))
    base = metrics.add(pts, gt, pred)
    extra = scenegen.Pose(scenegen.random_rotation(*g.uniform(0, 1, 3)),
                          g.uniform(-1, 1, 3))
    moved = metrics.add(pts, extra.compose(gt), extra.compose(pred))
    assert abs(base - moved) < 1e-9


# ---------------------------------------------------------------------------
# ADD-AUC


def test_add_auc_extremes():
    assert metrics.add_auc([0.0, 0.0, 0.0], diameter=0.2) == 1.0
    assert metrics.add_auc([0.11, 0.15], diameter=0.2) == 0.0  # all > 50%


def test_add_auc_single_sample_hand_case():
    # ADD = 12% of diameter: misses 5% and 10%, passes the other 8 of 10
    assert abs(metrics.add_auc([0.12], diameter=1.0) - 0.8) < 1e-12


def test_add_auc_requires_positive_diameter():
    with pytest.raises(InvalidParameter):
        metrics.add_auc([0.1], diameter=0.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.integers(0, 7),
       st.floats(0.001, 0.5))
def test_add_auc_monotone_in_each_value(values, idx, bump):
    idx = idx % len(values)
    worse = list(values)
    worse[idx] = worse[idx] + bump
    assert metrics.add_auc(worse, 1.0) <= metrics.add_auc(values, 1.0) + 1e-12


# ---------------------------------------------------------------------------
# IoU, correspondences, depth


def test_iou_cases():
    a = np.zeros((6, 6), bool)
    a[:3] = True
    assert metrics.iou(a, a) == 1.0
    assert metrics.iou(a, ~a) == 0.0
    b = np.zeros((6, 6), bool)
    b[:3, :] = True
    c = np.zeros((6, 6), bool)
    c[1:4, :] = True  # equal areas, half overlapping -> 12/24... adjust below
    assert abs(metrics.iou(b, c) - 12 / 24) < 1e-12
    half = np.zeros((4, 4), bool)
    half[:2] = True
    shifted = np.roll(half, 1, axis=0)
    assert abs(metrics.iou(half, shifted) - 1 / 3) < 1e-12
    assert metrics.iou(np.zeros((3, 3), bool), np.zeros((3, 3), bool)) == 1.0


def test_correspondence_error_cases():
    pts = rng.generator(2, 9).uniform(0, 100, (12, 3))
    assert metrics.correspondence_error(pts, pts) == 0.0
    offset = pts + np.array([3.0, 4.0, 0.0])  # 5 mm offsets
    assert abs(metrics.correspondence_error(pts, offset) - 5.0) < 1e-12
    other = rng.generator(3, 9).uniform(0, 100, (12, 3))
    brute = np.mean([np.linalg.norm(a - b) for a, b in zip(pts, other)])
    assert abs(metrics.correspondence_error(pts, other) - brute) < 1e-12
    with pytest.raises(ShapeMismatch):
        metrics.correspondence_error(pts, pts[:5])


def test_depth_metrics_cases():
    gt = rng.generator(4, 9).uniform(0.5, 3.0, (10, 10))
    mask = np.ones((10, 10), bool)
    assert metrics.depth_metrics(gt, gt, mask) == (0.0, 0.0, 1.0)

    abs_rel, rmse, d1 = metrics.depth_metrics(1.2 * gt, gt, mask)
    assert abs(abs_rel - 0.2) < 1e-12
    assert d1 == 1.0  # ratio 1.2 < 1.25
    assert abs(rmse - np.sqrt(np.mean((0.2 * gt) ** 2))) < 1e-12

    _, _, d1 = metrics.depth_metrics(1.3 * gt, gt, mask)
    assert d1 == 0.0  # ratio 1.3 > 1.25

    with pytest.raises(InvalidParameter):
        metrics.depth_metrics(gt, gt, np.zeros((10, 10), bool))


def test_metric_report_serialization():
    r = metrics.MetricReport(metrics={"psnr": 31.5, "ssim": 0.91}, count=4,
                             config={"note": "unit"})
    d = r.to_dict()
    assert d["count"] == 4 and d["metrics"]["psnr"] == 31.5
    assert r.csv_header() == "count,psnr,ssim"
    assert r.csv_row().startswith("4,")
