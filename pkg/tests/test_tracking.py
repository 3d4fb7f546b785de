import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from evio.tracking import (
    FAST_ARC,
    FAST_CIRCLE,
    FeatureTrack,
    TrackerConfig,
    detect,
    polarity_aware_track,
    reject_outliers,
    track_flow,
)


def config(**kw):
    return TrackerConfig(**kw)


# ---------------------------------------------------------------------------
# Brute-force FAST oracle


def oracle_fast_corners(img, threshold):
    """Per-pixel 9-of-16 segment test, straightforward loops."""
    h, w = img.shape
    out = []
    for v in range(3, h - 3):
        for u in range(3, w - 3):
            c = int(img[v, u])
            ring = [int(img[v + dv, u + du]) for du, dv in FAST_CIRCLE]
            for cmp in (lambda x: x > c + threshold, lambda x: x < c - threshold):
                flags = [cmp(x) for x in ring]
                flags = flags + flags
                run = 0
                hit = False
                for f in flags:
                    run = run + 1 if f else 0
                    if run >= FAST_ARC:
                        hit = True
                        break
                if hit:
                    out.append((u, v))
                    break
    return out


def quadrant_image(size=64, split=32):
    img = np.full((size, size), 128, dtype=np.uint8)
    img[split:, split:] = 230
    return img


def test_detect_uniform_surface_has_no_corners():
    img = np.full((64, 64), 128, dtype=np.uint8)
    assert len(detect(img, None, config())) == 0


def test_detect_single_junction_matches_oracle():
    img = quadrant_image()
    oracle = oracle_fast_corners(img, 12)
    assert len(oracle) >= 1
    ou = np.mean([p[0] for p in oracle])
    ov = np.mean([p[1] for p in oracle])
    assert abs(ou - 32) <= 1.5 and abs(ov - 32) <= 1.5
    found = detect(img, None, config())
    assert len(found) == 1
    assert abs(found[0][0] - 32) <= 1.0 and abs(found[0][1] - 32) <= 1.0
    # Everything detect returns must pass the oracle's segment test.
    assert (int(found[0][0]), int(found[0][1])) in oracle


def test_detect_suppresses_nearby_corner_keeps_stronger():
    img = np.full((64, 64), 128, dtype=np.uint8)
    img[30:, 30:] = 250           # strong junction at (30, 30)
    img[:20, :20] = 160           # weaker junction at (19, 19)
    cfg = config(min_distance=30.0, max_features=10)
    found = detect(img, None, cfg)
    assert len(found) == 1
    assert np.hypot(found[0][0] - 30, found[0][1] - 30) <= 2.0


def test_detect_respects_existing_and_cap():
    img = quadrant_image()
    near = np.array([[31.0, 31.0]])
    assert len(detect(img, near, config())) == 0
    far = np.array([[10.0, 10.0]])
    found = detect(img, far, config())
    assert len(found) == 1


def test_detect_pairwise_distance_property():
    rng = np.random.default_rng(0)
    img = (gaussian_filter(rng.standard_normal((96, 96)), 2.0) * 400 + 128)
    img = np.clip(img, 0, 255).astype(np.uint8)
    cfg = config(min_distance=9.0, max_features=40, corner_threshold=8)
    pts = detect(img, None, cfg)
    assert len(pts) > 3
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    d[np.diag_indices(len(pts))] = np.inf
    assert d.min() >= 9.0


# ---------------------------------------------------------------------------
# Lucas-Kanade


def textured_image(seed=0, size=96):
    rng = np.random.default_rng(seed)
    img = gaussian_filter(rng.standard_normal((size, size)), 2.5)
    img = (img - img.min()) / (img.max() - img.min()) * 220 + 10
    return img.astype(np.float32)


def central_grid(size=96, margin=25, step=15):
    lin = np.arange(margin, size - margin, step, dtype=float)
    uu, vv = np.meshgrid(lin, lin)
    return np.column_stack([uu.ravel(), vv.ravel()])


def test_track_flow_identity():
    img = textured_image()
    pts = central_grid()
    res = track_flow(img, img, pts, config())
    assert res.ok.all()
    assert np.allclose(res.points, pts, atol=1e-3)


@pytest.mark.parametrize("shift", [(3, -2), (-5, 4), (7, 7)])
def test_track_flow_recovers_integer_shift(shift):
    dx, dy = shift
    img = textured_image(seed=1)
    cur = np.roll(img, (dy, dx), axis=(0, 1))
    pts = central_grid()
    res = track_flow(img, cur, pts, config())
    assert res.ok.sum() >= 0.8 * len(pts)
    err = res.points[res.ok] - (pts[res.ok] + np.array([dx, dy]))
    assert np.abs(err).max() < 0.1


def test_track_flow_fails_on_textureless_patch():
    img = np.full((96, 96), 100, dtype=np.float32)
    res = track_flow(img, img, np.array([[48.0, 48.0]]), config())
    assert not res.ok[0]


def test_track_flow_empty_input():
    img = textured_image()
    res = track_flow(img, img, np.empty((0, 2)), config())
    assert len(res.points) == 0 and len(res.ok) == 0


def test_track_flow_dimension_mismatch():
    with pytest.raises(ValueError):
        track_flow(np.zeros((10, 10)), np.zeros((12, 12)), np.empty((0, 2)), config())


def test_tracked_points_inside_margin():
    img = textured_image(seed=2)
    cur = np.roll(img, (0, 6), axis=(0, 1))
    pts = central_grid()
    res = track_flow(img, cur, pts, config())
    margin = config().patch_half_width + 2
    inside = res.points[res.ok]
    assert (inside >= margin).all()
    assert (inside[:, 0] < img.shape[1] - margin).all()
    assert (inside[:, 1] < img.shape[0] - margin).all()


# ---------------------------------------------------------------------------
# Polarity-aware merging


def test_polarity_aware_prefers_weighted_when_tied():
    img = textured_image(seed=3)
    cur = np.roll(img, (1, 2), axis=(0, 1))
    pts = central_grid()
    res_w = track_flow(img, cur, pts, config())
    res = polarity_aware_track(img, 255 - img, cur, 255 - cur, pts, config())
    assert not res.merged
    assert np.array_equal(res.ok, res_w.ok)
    assert np.allclose(res.points, res_w.points)


def test_polarity_aware_recovers_from_polarity_flip():
    img = textured_image(seed=4)
    shifted = np.roll(img, (2, -3), axis=(0, 1))
    cur_w = 255.0 - shifted          # polarity flipped between the surfaces
    cur_i = 255.0 - cur_w
    pts = central_grid()
    weighted_only = track_flow(img, cur_w, pts, config())
    res = polarity_aware_track(img, 255 - img, cur_w, cur_i, pts, config())
    # The flipped surface defeats the weighted pass (rare accidental
    # convergences are possible; RANSAC handles those downstream).
    assert weighted_only.ok.sum() <= 0.2 * len(pts)
    assert res.merged
    assert res.ok.sum() >= 0.9 * len(pts)
    assert res.used_inverted.sum() >= 0.8 * len(pts)
    err = res.points[res.used_inverted] - (pts[res.used_inverted] + np.array([-3, 2]))
    assert np.abs(err).max() < 0.1


def test_polarity_aware_never_loses_weighted_successes():
    img = textured_image(seed=5)
    cur = np.roll(img, (4, 1), axis=(0, 1))
    pts = central_grid()
    res_w = track_flow(img, cur, pts, config())
    res = polarity_aware_track(img, 255 - img, cur, 255 - cur, pts, config())
    assert (res.ok | ~res_w.ok).all()  # ok >= weighted ok, elementwise
    assert res.ok.sum() >= res_w.ok.sum()


def test_polarity_aware_empty_input():
    img = textured_image(seed=6)
    res = polarity_aware_track(img, 255 - img, img, 255 - img,
                               np.empty((0, 2)), config())
    assert len(res.points) == 0


# ---------------------------------------------------------------------------
# RANSAC with a synthetic two-view oracle


def two_view_matches(n=60, seed=0):
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(-1.5, 1.5, n), rng.uniform(-1.0, 1.0, n),
                           rng.uniform(3.0, 8.0, n)])
    f, cx, cy = 150.0, 120.0, 90.0

    def proj(p):
        return np.column_stack([f * p[:, 0] / p[:, 2] + cx, f * p[:, 1] / p[:, 2] + cy])

    p1 = proj(pts)
    from evio.rotations import so3_exp

    r = so3_exp(np.array([0.03, -0.05, 0.02]))
    t = np.array([0.3, -0.1, 0.05])
    pts2 = pts @ r.T + t
    p2 = proj(pts2)
    return p1, p2


def test_ransac_keeps_exact_geometry():
    p1, p2 = two_view_matches()
    res = reject_outliers(p1, p2, config(), rng=np.random.default_rng(1))
    assert res.gated and not res.degenerate
    assert res.inliers.all()


def test_ransac_removes_planted_outliers():
    p1, p2 = two_view_matches(n=80, seed=2)
    rng = np.random.default_rng(3)
    n_out = 16  # 20%
    bad = rng.choice(len(p1), size=n_out, replace=False)
    p2_noisy = p2.copy()
    p2_noisy[bad] += rng.uniform(15.0, 60.0, size=(n_out, 2)) * rng.choice([-1, 1], (n_out, 2))
    res = reject_outliers(p1, p2_noisy, config(), rng=np.random.default_rng(4))
    assert res.gated
    assert not res.inliers[bad].any()
    true_in = np.setdiff1d(np.arange(len(p1)), bad)
    assert res.inliers[true_in].sum() >= 0.95 * len(true_in)


def test_ransac_below_minimum_passthrough():
    p1, p2 = two_view_matches(n=7, seed=5)
    res = reject_outliers(p1, p2, config())
    assert not res.gated
    assert res.inliers.all()


def test_ransac_degenerate_collinear():
    t = np.linspace(0, 1, 20)
    p1 = np.column_stack([100 + 50 * t, 80 + 30 * t])
    p2 = p1 + np.array([5.0, 2.0])
    res = reject_outliers(p1, p2, config())
    assert res.degenerate
    assert res.inliers.all()


def test_ransac_deterministic_under_seed():
    p1, p2 = two_view_matches(n=50, seed=6)
    p2[::7] += 25.0
    a = reject_outliers(p1, p2, config(), rng=np.random.default_rng(9))
    b = reject_outliers(p1, p2, config(), rng=np.random.default_rng(9))
    assert np.array_equal(a.inliers, b.inliers)


# ---------------------------------------------------------------------------
# FeatureTrack bookkeeping


def test_feature_track_monotone_timestamps():
    tr = FeatureTrack(id=1)
    tr.add(0.1, np.array([5.0, 6.0]))
    tr.add(0.2, np.array([5.5, 6.5]))
    assert len(tr) == 2
    assert np.allclose(tr.last_pixel, [5.5, 6.5])
    with pytest.raises(ValueError):
        tr.add(0.2, np.array([6.0, 7.0]))
