"""Corner detection and tracking on time surfaces.

Detection is a FAST segment test (9 contiguous of 16 on the radius-3 Bresenham
circle) with the score defined as the largest threshold that still passes,
grid suppression by minimum distance and a feature cap. Tracking is iterative
pyramidal Lucas-Kanade on intensity patches, vectorized over features.

Polarity-aware tracking runs the flow twice from the weighted previous
surface: once against the weighted current surface and once against the
polarity-inverted current surface. When the inverted pass tracks more
features, per-feature results are merged with precedence to the weighted
pass; an abrupt motion reversal flips event polarity between surfaces, which
the inverted pass absorbs.

Outlier rejection estimates a fundamental matrix with normalized 8-point
RANSAC and keeps matches under a symmetric epipolar distance threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# Radius-3 Bresenham circle, clockwise from 12 o'clock: (du, dv) offsets.
FAST_CIRCLE = np.array([
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
])
FAST_ARC = 9


class TrackStatus(Enum):
    ACTIVE = "active"
    LOST = "lost"
    MAXLEN = "maxlen"


@dataclass
class FeatureTrack:
    """One feature's sub-pixel observations across consecutive surfaces."""

    id: int
    observations: list[tuple[float, np.ndarray]] = field(default_factory=list)
    status: TrackStatus = TrackStatus.ACTIVE

    def add(self, t_j: float, pixel: np.ndarray):
        if self.observations and t_j <= self.observations[-1][0]:
            raise ValueError("observation timestamps must be strictly increasing")
        self.observations.append((t_j, np.asarray(pixel, dtype=float)))

    def __len__(self):
        return len(self.observations)

    @property
    def last_pixel(self) -> np.ndarray:
        return self.observations[-1][1]


@dataclass(frozen=True)
class TrackerConfig:
    corner_threshold: int = 12
    max_features: int = 60
    min_distance: float = 15.0
    pyramid_levels: int = 3
    patch_half_width: int = 10
    max_iterations: int = 30
    residual_cap: float = 20.0        # mean abs intensity error per patch pixel
    convergence_eps: float = 0.01     # px
    ransac_threshold: float = 1.0     # px
    ransac_confidence: float = 0.99

    def __post_init__(self):
        if min(self.corner_threshold, self.max_features, self.min_distance,
               self.pyramid_levels, self.patch_half_width, self.max_iterations,
               self.ransac_threshold) <= 0:
            raise ValueError("tracker parameters must be positive")
        if not (0.0 < self.ransac_confidence < 1.0):
            raise ValueError("ransac_confidence must be in (0, 1)")


# ---------------------------------------------------------------------------
# FAST detection


def _segment_test(img: np.ndarray, threshold: float) -> np.ndarray:
    """Boolean corner map for the 9-of-16 segment test (borders False)."""
    h, w = img.shape
    center = img.astype(np.int32)
    brighter = np.zeros((16, h, w), dtype=bool)
    darker = np.zeros((16, h, w), dtype=bool)
    for k, (du, dv) in enumerate(FAST_CIRCLE):
        shifted = np.full((h, w), -(10 ** 6), dtype=np.int32)
        ys = slice(max(0, -dv), min(h, h - dv))
        xs = slice(max(0, -du), min(w, w - du))
        ys_src = slice(max(0, dv), min(h, h + dv))
        xs_src = slice(max(0, du), min(w, w + du))
        shifted[ys, xs] = center[ys_src, xs_src]
        brighter[k] = shifted > center + threshold
        darker[k] = shifted < center - threshold
    corner = np.zeros((h, w), dtype=bool)
    for start in range(16):
        idx = [(start + i) % 16 for i in range(FAST_ARC)]
        corner |= np.logical_and.reduce(brighter[idx])
        corner |= np.logical_and.reduce(darker[idx])
    corner[:3, :] = corner[-3:, :] = False
    corner[:, :3] = corner[:, -3:] = False
    return corner


def fast_score(img: np.ndarray, us: np.ndarray, vs: np.ndarray,
               base_threshold: float) -> np.ndarray:
    """Largest threshold preserving the segment test, per corner pixel."""
    img_i = img.astype(np.int32)
    scores = np.full(len(us), int(base_threshold), dtype=np.int32)
    for i, (u, v) in enumerate(zip(us, vs)):
        ring = img_i[vs[i] + FAST_CIRCLE[:, 1], us[i] + FAST_CIRCLE[:, 0]]
        c = img_i[v, u]
        lo, hi = int(base_threshold), 255
        # Binary search over integer thresholds.
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if _ring_passes(ring, c, mid):
                lo = mid
            else:
                hi = mid - 1
        scores[i] = lo
    return scores


def _ring_passes(ring: np.ndarray, center: int, threshold: int) -> bool:
    for mask in (ring > center + threshold, ring < center - threshold):
        if not mask.any():
            continue
        doubled = np.concatenate([mask, mask])
        run = 0
        for m in doubled:
            run = run + 1 if m else 0
            if run >= FAST_ARC:
                return True
    return False


def detect(surface, existing: np.ndarray | None, config: TrackerConfig) -> np.ndarray:
    """New corners on a weighted surface, grid-suppressed against existing ones.

    Returns an (N, 2) float array of pixel positions sorted by score. The
    total of new plus existing features never exceeds ``max_features``.
    """
    img = surface.pixels if hasattr(surface, "pixels") else np.asarray(surface)
    corner = _segment_test(img, config.corner_threshold)
    vs, us = np.nonzero(corner)
    if len(us) == 0:
        return np.empty((0, 2))
    scores = fast_score(img, us, vs, config.corner_threshold)
    order = np.argsort(-scores, kind="stable")
    us, vs = us[order], vs[order]

    cell = max(int(config.min_distance), 1)
    h, w = img.shape
    occupied: dict[tuple[int, int], list[np.ndarray]] = {}

    def blocked(pt) -> bool:
        cu, cv = int(pt[0]) // cell, int(pt[1]) // cell
        for dv in (-1, 0, 1):
            for du in (-1, 0, 1):
                for q in occupied.get((cu + du, cv + dv), ()):
                    if np.hypot(q[0] - pt[0], q[1] - pt[1]) < config.min_distance:
                        return True
        return False

    def occupy(pt):
        occupied.setdefault((int(pt[0]) // cell, int(pt[1]) // cell), []).append(pt)

    n_existing = 0
    if existing is not None and len(existing):
        for pt in np.asarray(existing, dtype=float):
            occupy(pt)
        n_existing = len(existing)

    margin = config.patch_half_width + 1
    out = []
    for u, v in zip(us, vs):
        if n_existing + len(out) >= config.max_features:
            break
        if not (margin <= u < w - margin and margin <= v < h - margin):
            continue
        pt = np.array([float(u), float(v)])
        if blocked(pt):
            continue
        occupy(pt)
        out.append(pt)
    return np.asarray(out) if out else np.empty((0, 2))


# ---------------------------------------------------------------------------
# Pyramidal Lucas-Kanade


def _downsample(img: np.ndarray) -> np.ndarray:
    # 2x decimation after a small binomial blur.
    k = np.array([0.25, 0.5, 0.25])
    blurred = np.apply_along_axis(lambda r: np.convolve(r, k, mode="same"), 1, img)
    blurred = np.apply_along_axis(lambda c: np.convolve(c, k, mode="same"), 0, blurred)
    return blurred[::2, ::2]


def build_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [np.asarray(img, dtype=np.float32)]
    for _ in range(levels - 1):
        if min(pyr[-1].shape) < 16:
            break
        pyr.append(_downsample(pyr[-1]))
    return pyr


def _sample_patches(img: np.ndarray, pts: np.ndarray, half: int) -> np.ndarray:
    """Bilinear patches around pts -> (N, P*P); callers keep pts in bounds."""
    offs = np.arange(-half, half + 1, dtype=np.float32)
    gu = pts[:, 0:1] + offs[None, :]            # (N, P)
    gv = pts[:, 1:2] + offs[None, :]
    u0 = np.floor(gu).astype(np.int32)
    v0 = np.floor(gv).astype(np.int32)
    fu = (gu - u0)[:, None, :]                  # (N, 1, P)
    fv = (gv - v0)[:, :, None]                  # (N, P, 1)
    u0 = np.clip(u0, 0, img.shape[1] - 2)[:, None, :]
    v0 = np.clip(v0, 0, img.shape[0] - 2)[:, :, None]
    a = img[v0, u0]
    b = img[v0, u0 + 1]
    c = img[v0 + 1, u0]
    d = img[v0 + 1, u0 + 1]
    patch = (a * (1 - fu) * (1 - fv) + b * fu * (1 - fv)
             + c * (1 - fu) * fv + d * fu * fv)
    return patch.reshape(len(pts), -1)


@dataclass
class FlowResult:
    points: np.ndarray      # (N, 2) tracked positions
    ok: np.ndarray          # (N,) success flags
    residual: np.ndarray    # (N,) mean abs patch error (inf on failure)


def track_flow(prev, cur, points: np.ndarray, config: TrackerConfig) -> FlowResult:
    """Iterative pyramidal LK from prev to cur for each starting point.

    Success requires solver convergence within ``max_iterations``, an
    in-bounds final position and a patch residual below ``residual_cap``.
    Features on textureless patches fail with singular normal equations.
    """
    prev_img = prev.pixels if hasattr(prev, "pixels") else np.asarray(prev)
    cur_img = cur.pixels if hasattr(cur, "pixels") else np.asarray(cur)
    if prev_img.shape != cur_img.shape:
        raise ValueError("surfaces must share dimensions")
    n = len(points)
    if n == 0:
        return FlowResult(np.empty((0, 2)), np.empty(0, dtype=bool), np.empty(0))

    half = config.patch_half_width
    margin = half + 2
    h, w = prev_img.shape
    pyr_prev = build_pyramid(prev_img, config.pyramid_levels)
    pyr_cur = build_pyramid(cur_img, config.pyramid_levels)
    levels = len(pyr_prev)

    pts0 = np.asarray(points, dtype=np.float64)
    flow = np.zeros_like(pts0)
    ok = np.ones(n, dtype=bool)
    converged = np.zeros(n, dtype=bool)
    residual = np.full(n, np.inf)

    in_start = ((pts0[:, 0] >= margin) & (pts0[:, 0] < w - margin)
                & (pts0[:, 1] >= margin) & (pts0[:, 1] < h - margin))
    ok &= in_start

    for level in range(levels - 1, -1, -1):
        scale = 2.0 ** level
        img_p = pyr_prev[level]
        img_c = pyr_cur[level]
        hl, wl = img_p.shape
        base = pts0 / scale
        # Coarse levels just skip features too close to the border; only the
        # finest level is allowed to fail them.
        live = ok & ((base[:, 0] >= half + 1) & (base[:, 0] < wl - half - 1)
                     & (base[:, 1] >= half + 1) & (base[:, 1] < hl - half - 1))
        if level == 0:
            ok &= live
        if not live.any():
            continue
        idx = np.nonzero(live)[0]
        t_patch = _sample_patches(img_p, base[idx], half)
        gx = _sample_patches(img_p, base[idx] + [1.0, 0.0], half)
        gx -= _sample_patches(img_p, base[idx] - [1.0, 0.0], half)
        gx *= 0.5
        gy = _sample_patches(img_p, base[idx] + [0.0, 1.0], half)
        gy -= _sample_patches(img_p, base[idx] - [0.0, 1.0], half)
        gy *= 0.5
        # Normal equations are fixed per level (gradients from the template).
        a11 = np.sum(gx * gx, axis=1)
        a12 = np.sum(gx * gy, axis=1)
        a22 = np.sum(gy * gy, axis=1)
        det = a11 * a22 - a12 * a12
        solvable = det > 1e-6
        if level == 0:
            ok[idx[~solvable]] = False
        idx = idx[solvable]
        if len(idx) == 0:
            continue
        a11, a12, a22, det = a11[solvable], a12[solvable], a22[solvable], det[solvable]
        t_patch, gx, gy = t_patch[solvable], gx[solvable], gy[solvable]

        d = flow[idx] / scale
        active = np.ones(len(idx), dtype=bool)
        level_conv = np.zeros(len(idx), dtype=bool)
        for _ in range(config.max_iterations):
            if not active.any():
                break
            cur_pos = base[idx[active]] + d[active]
            inb = ((cur_pos[:, 0] >= half + 1) & (cur_pos[:, 0] < wl - half - 1)
                   & (cur_pos[:, 1] >= half + 1) & (cur_pos[:, 1] < hl - half - 1))
            lost = np.nonzero(active)[0][~inb]
            if level == 0:
                ok[idx[lost]] = False
            active[lost] = False
            sel = np.nonzero(active)[0]
            if len(sel) == 0:
                break
            c_patch = _sample_patches(img_c, base[idx[sel]] + d[sel], half)
            err = c_patch - t_patch[sel]
            b1 = np.sum(gx[sel] * err, axis=1)
            b2 = np.sum(gy[sel] * err, axis=1)
            du = -(a22[sel] * b1 - a12[sel] * b2) / det[sel]
            dv = -(-a12[sel] * b1 + a11[sel] * b2) / det[sel]
            d[sel, 0] += du
            d[sel, 1] += dv
            done = np.hypot(du, dv) < config.convergence_eps
            level_conv[sel[done]] = True
            active[sel[done]] = False
        flow[idx] = d * scale
        if level == 0:
            converged[idx] = level_conv
            sel = idx[level_conv]
            if len(sel):
                final = base[sel] + flow[sel]
                c_patch = _sample_patches(img_c, final, half)
                residual[sel] = np.mean(np.abs(c_patch - t_patch[level_conv]), axis=1)

    new_pts = pts0 + flow
    in_final = ((new_pts[:, 0] >= margin) & (new_pts[:, 0] < w - margin)
                & (new_pts[:, 1] >= margin) & (new_pts[:, 1] < h - margin))
    ok &= converged & in_final & (residual <= config.residual_cap)
    return FlowResult(points=new_pts, ok=ok, residual=residual)


# ---------------------------------------------------------------------------
# Polarity-aware tracking


@dataclass
class PolarityAwareResult:
    points: np.ndarray
    ok: np.ndarray
    used_inverted: np.ndarray  # per-feature: True when the inverted pass supplied it
    merged: bool               # True when the inverted pass won the count vote


def polarity_aware_track(prev_w, prev_i, cur_w, cur_i, points: np.ndarray,
                         config: TrackerConfig) -> PolarityAwareResult:
    """Track against both polarity renderings of the current surface.

    Templates come from the weighted previous surface (the reference
    representation). If the weighted pass succeeds on at least as many
    features as the inverted pass, it is used alone; otherwise the results
    merge with per-feature precedence to the weighted pass.

    ``prev_i`` is accepted for interface symmetry; the inverted pass tracks
    the weighted template into the inverted current surface, which is what
    absorbs a polarity flip between the two timestamps.
    """
    del prev_i
    res_w = track_flow(prev_w, cur_w, points, config)
    res_i = track_flow(prev_w, cur_i, points, config)
    n_w = int(res_w.ok.sum())
    n_i = int(res_i.ok.sum())
    if n_w >= n_i:
        return PolarityAwareResult(points=res_w.points, ok=res_w.ok,
                                   used_inverted=np.zeros(len(points), dtype=bool),
                                   merged=False)
    use_inv = ~res_w.ok & res_i.ok
    pts = res_w.points.copy()
    pts[use_inv] = res_i.points[use_inv]
    return PolarityAwareResult(points=pts, ok=res_w.ok | res_i.ok,
                               used_inverted=use_inv, merged=True)


# ---------------------------------------------------------------------------
# RANSAC fundamental-matrix outlier rejection


@dataclass
class RansacResult:
    inliers: np.ndarray   # boolean mask over matches
    gated: bool           # False when below the minimum sample (passthrough)
    degenerate: bool = False


def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = pts.mean(axis=0)
    centered = pts - mean
    scale = np.sqrt(2.0) / max(np.mean(np.linalg.norm(centered, axis=1)), 1e-12)
    t = np.array([[scale, 0.0, -scale * mean[0]],
                  [0.0, scale, -scale * mean[1]],
                  [0.0, 0.0, 1.0]])
    return (pts * scale - scale * mean), t


def _eight_point(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    n1, t1 = _normalize_points(p1)
    n2, t2 = _normalize_points(p2)
    x1, y1 = n1[:, 0], n1[:, 1]
    x2, y2 = n2[:, 0], n2[:, 1]
    a = np.column_stack([x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1,
                         np.ones(len(x1))])
    _, _, vt = np.linalg.svd(a)
    f = vt[-1].reshape(3, 3)
    u, s, vt = np.linalg.svd(f)
    s[2] = 0.0
    f = u @ np.diag(s) @ vt
    return t2.T @ f @ t1


def symmetric_epipolar_distance(f: np.ndarray, p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    ones = np.ones((len(p1), 1))
    x1 = np.hstack([p1, ones])
    x2 = np.hstack([p2, ones])
    fx1 = x1 @ f.T       # epipolar lines in image 2
    ftx2 = x2 @ f        # epipolar lines in image 1
    num = np.sum(x2 * fx1, axis=1) ** 2
    d = num * (1.0 / np.maximum(fx1[:, 0] ** 2 + fx1[:, 1] ** 2, 1e-12)
               + 1.0 / np.maximum(ftx2[:, 0] ** 2 + ftx2[:, 1] ** 2, 1e-12))
    return np.sqrt(d)


def reject_outliers(p1: np.ndarray, p2: np.ndarray, config: TrackerConfig,
                    rng: np.random.Generator | None = None,
                    max_iterations: int = 500) -> RansacResult:
    """Normalized 8-point fundamental RANSAC with an adaptive iteration count.

    Below 8 matches everything passes through ungated. A collinear
    configuration returns all matches flagged degenerate.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    n = len(p1)
    if n < 8:
        return RansacResult(inliers=np.ones(n, dtype=bool), gated=False)
    # Collinearity check on either view.
    for pts in (p1, p2):
        centered = pts - pts.mean(axis=0)
        if np.linalg.svd(centered, compute_uv=False)[1] < 1e-6 * max(1.0, np.linalg.norm(centered)):
            return RansacResult(inliers=np.ones(n, dtype=bool), gated=False, degenerate=True)
    rng = rng or np.random.default_rng(0)
    best_mask = np.zeros(n, dtype=bool)
    best_count = -1
    needed = max_iterations
    it = 0
    while it < min(needed, max_iterations):
        it += 1
        sample = rng.choice(n, size=8, replace=False)
        try:
            f = _eight_point(p1[sample], p2[sample])
        except np.linalg.LinAlgError:
            continue
        d = symmetric_epipolar_distance(f, p1, p2)
        mask = d < config.ransac_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            ratio = max(count / n, 1e-3)
            denom = np.log(max(1.0 - ratio**8, 1e-12))
            needed = int(np.ceil(np.log(1.0 - config.ransac_confidence) / denom))
    if best_count >= 8:
        # One refit on the consensus set.
        f = _eight_point(p1[best_mask], p2[best_mask])
        d = symmetric_epipolar_distance(f, p1, p2)
        refined = d < config.ransac_threshold
        if refined.sum() >= best_count:
            best_mask = refined
    return RansacResult(inliers=best_mask, gated=True)
