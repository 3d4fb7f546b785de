"""Synthetic event/IMU generator with analytic ground truth.

The world frame has z up and gravity [0, 0, -9.81]. The camera initially
looks along world +x at a textured plane x = depth; the IMU pose follows an
analytic trajectory (sums of sinusoids per axis, smoothly ramped in from
rest), so velocity, body rate and acceleration are exact.

Events come from a dense-time-grid render of per-pixel log intensity: an
event fires whenever the accumulated change since the pixel's last event
crosses the contrast threshold, its timestamp linearly interpolated inside
the grid step and its polarity the sign of the change. A refractory period
is enforced per pixel and the output stream is globally time sorted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .events import (
    Calibration,
    CameraImuExtrinsics,
    CameraIntrinsics,
    EventArray,
    write_dataset,
)
from .rotations import rot_to_quat, skew, so3_exp, so3_right_jacobian

GRAVITY = np.array([0.0, 0.0, -9.81])

# Base camera orientation: optical axis -> world +x, image right -> world -y,
# image down -> world -z.
R_WC0 = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])


@dataclass(frozen=True)
class Sinusoid:
    amplitude: float
    frequency_hz: float
    phase: float = 0.0

    def value(self, t):
        w = 2.0 * np.pi * self.frequency_hz
        return self.amplitude * np.sin(w * t + self.phase)

    def d1(self, t):
        w = 2.0 * np.pi * self.frequency_hz
        return self.amplitude * w * np.cos(w * t + self.phase)

    def d2(self, t):
        w = 2.0 * np.pi * self.frequency_hz
        return -self.amplitude * w * w * np.sin(w * t + self.phase)


@dataclass(frozen=True)
class TrajectorySpec:
    """Analytic IMU trajectory: per-axis sinusoid sums, ramped in from rest.

    translation[i] and rotation[i] hold the sinusoid terms for world axis i
    (rotation terms build a body-frame rotation vector). The motion is zero
    until ramp_start and fully developed after ramp_start + ramp_duration,
    with a C2 (smootherstep) envelope in between.
    """

    duration: float = 10.0
    translation: tuple[tuple[Sinusoid, ...], ...] = ((), (), ())
    rotation: tuple[tuple[Sinusoid, ...], ...] = ((), (), ())
    ramp_start: float = 0.8
    ramp_duration: float = 1.2

    def _envelope(self, t):
        x = np.clip((np.asarray(t, dtype=float) - self.ramp_start) / self.ramp_duration,
                    0.0, 1.0)
        e = x**3 * (10.0 - 15.0 * x + 6.0 * x**2)
        de = x**2 * (30.0 - 60.0 * x + 30.0 * x**2) / self.ramp_duration
        d2e = x * (60.0 - 180.0 * x + 120.0 * x**2) / self.ramp_duration**2
        return e, de, d2e

    def _axis(self, terms, t):
        v = np.zeros_like(np.asarray(t, dtype=float))
        d1 = np.zeros_like(v)
        d2 = np.zeros_like(v)
        for s in terms:
            v = v + s.value(t)
            d1 = d1 + s.d1(t)
            d2 = d2 + s.d2(t)
        return v, d1, d2

    def _signal(self, axes, t):
        """Enveloped 3-vector signal with first and second derivatives."""
        e, de, d2e = self._envelope(t)
        out = []
        for terms in axes:
            b, db, d2b = self._axis(terms, t)
            out.append((e * b, e * db + de * b, e * d2b + 2.0 * de * db + d2e * b))
        val = np.stack([o[0] for o in out], axis=-1)
        d1 = np.stack([o[1] for o in out], axis=-1)
        d2 = np.stack([o[2] for o in out], axis=-1)
        return val, d1, d2


def pose_at(spec: TrajectorySpec, t: float, r_wi0: np.ndarray | None = None):
    """Exact pose and derivatives at time t.

    Returns (R_wi, position, velocity, omega_body, acceleration): R_wi is the
    body->world rotation, omega_body the gyro-frame angular rate, and the
    acceleration is the world-frame second derivative of position.
    """
    if t < 0.0 or t > spec.duration:
        raise ValueError(f"t={t} outside [0, {spec.duration}]")
    r0 = R_WC0 if r_wi0 is None else r_wi0
    p, v, a = spec._signal(spec.translation, t)
    rvec, rdot, _ = spec._signal(spec.rotation, t)
    r_wi = r0 @ so3_exp(rvec)
    omega = so3_right_jacobian(rvec) @ rdot
    return r_wi, p, v, omega, a


@dataclass(frozen=True)
class SimConfig:
    contrast: float = 0.25
    refractory: float = 1e-3
    imu_rate_hz: float = 200.0
    grid_rate_hz: float = 1000.0
    seed: int = 0
    gyro_noise: float = 0.0        # rad/s/sqrt(Hz)
    accel_noise: float = 0.0       # m/s^2/sqrt(Hz)
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    accel_bias: tuple = (0.0, 0.0, 0.0)
    event_time_jitter: float = 0.0  # std, seconds
    threshold_mismatch: float = 0.0  # per-pixel contrast std (off by default)

    def __post_init__(self):
        if self.contrast <= 0:
            raise ValueError("contrast threshold must be > 0")
        if self.imu_rate_hz <= 0 or self.grid_rate_hz <= 0:
            raise ValueError("rates must be > 0")


class Scene:
    """Textured plane x = depth, log intensity sampled bilinearly."""

    def __init__(self, depth: float = 2.5, extent: float = 3.0,
                 texture: np.ndarray | None = None, seed: int = 0,
                 amplitude: float = 0.4, smoothness: float = 6.0,
                 resolution: int = 512):
        self.depth = depth
        self.extent = extent
        if texture is None:
            rng = np.random.default_rng(seed)
            noise = rng.standard_normal((resolution, resolution))
            log_tex = gaussian_filter(noise, smoothness) + 0.5 * gaussian_filter(noise, 2 * smoothness)
            log_tex = log_tex / log_tex.std() * amplitude  # amplitude in log-intensity units
            texture = np.exp(log_tex)
        if np.min(texture) <= 0.0:
            raise ValueError("scene intensities must be positive")
        self.texture = np.asarray(texture, dtype=float)

    def log_intensity(self, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Bilinear sample of log intensity at world-plane coordinates."""
        n = self.texture.shape[0]
        gx = (np.clip(y, -self.extent, self.extent) + self.extent) / (2 * self.extent) * (n - 1)
        gy = (np.clip(z, -self.extent, self.extent) + self.extent) / (2 * self.extent) * (n - 1)
        x0 = np.clip(np.floor(gx).astype(int), 0, n - 2)
        y0 = np.clip(np.floor(gy).astype(int), 0, n - 2)
        fx = gx - x0
        fy = gy - y0
        t = self.texture
        v = (t[y0, x0] * (1 - fx) * (1 - fy) + t[y0, x0 + 1] * fx * (1 - fy)
             + t[y0 + 1, x0] * (1 - fx) * fy + t[y0 + 1, x0 + 1] * fx * fy)
        return np.log(v)


def default_intrinsics(width: int = 128, height: int = 96, fov_deg: float = 65.0) -> CameraIntrinsics:
    f = width / (2.0 * np.tan(np.radians(fov_deg) / 2.0))
    return CameraIntrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                            width=width, height=height)


def default_extrinsics() -> CameraImuExtrinsics:
    return CameraImuExtrinsics(rotation=so3_exp(np.array([0.015, -0.01, 0.02])),
                               translation=np.array([0.01, -0.02, 0.015]))


def generate_imu(spec: TrajectorySpec, config: SimConfig,
                 r_wi0: np.ndarray | None = None) -> np.ndarray:
    """(N, 7) rows of t, gyro, accel: body rates and specific force plus
    optional white noise and constant biases."""
    dt = 1.0 / config.imu_rate_hz
    times = np.arange(0.0, spec.duration + dt / 2, dt)
    rng = np.random.default_rng(config.seed + 1)
    rows = np.empty((len(times), 7))
    for i, t in enumerate(times):
        r_wi, _, _, omega, acc = pose_at(spec, float(t), r_wi0)
        gyro = omega + np.asarray(config.gyro_bias)
        accel = r_wi.T @ (acc - GRAVITY) + np.asarray(config.accel_bias)
        if config.gyro_noise > 0:
            gyro = gyro + rng.normal(0.0, config.gyro_noise * np.sqrt(config.imu_rate_hz), 3)
        if config.accel_noise > 0:
            accel = accel + rng.normal(0.0, config.accel_noise * np.sqrt(config.imu_rate_hz), 3)
        rows[i] = [t, *gyro, *accel]
    return rows


def camera_pose(spec: TrajectorySpec, t: float, extrinsics: CameraImuExtrinsics,
                r_wi0: np.ndarray | None = None):
    """World-from-camera rotation and camera center at time t."""
    r_wi, p, *_ = pose_at(spec, t, r_wi0)
    r_wc = r_wi @ extrinsics.rotation.T
    center = p - r_wc @ extrinsics.translation
    return r_wc, center


def _render_log_intensity(scene: Scene, rays_c: np.ndarray, r_wc: np.ndarray,
                          center: np.ndarray) -> np.ndarray:
    d = r_wc @ rays_c  # (3, npx)
    s = (scene.depth - center[0]) / d[0]
    y = center[1] + s * d[1]
    z = center[2] + s * d[2]
    return scene.log_intensity(y, z)


def generate_events(scene: Scene, spec: TrajectorySpec, intrinsics: CameraIntrinsics,
                    config: SimConfig, extrinsics: CameraImuExtrinsics | None = None,
                    r_wi0: np.ndarray | None = None) -> EventArray:
    if extrinsics is None:
        extrinsics = CameraImuExtrinsics(rotation=np.eye(3), translation=np.zeros(3))
    w, h = intrinsics.width, intrinsics.height
    uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    rays = np.stack([(uu.ravel() - intrinsics.cx) / intrinsics.fx,
                     (vv.ravel() - intrinsics.cy) / intrinsics.fy,
                     np.ones(w * h)])
    rng = np.random.default_rng(config.seed + 2)
    contrast = np.full(w * h, config.contrast)
    if config.threshold_mismatch > 0:
        contrast = np.maximum(contrast + rng.normal(0.0, config.threshold_mismatch, w * h),
                              config.contrast * 0.2)

    h_step = 1.0 / config.grid_rate_hz
    n_steps = int(np.ceil(spec.duration / h_step))
    r_wc, center = camera_pose(spec, 0.0, extrinsics, r_wi0)
    prev = _render_log_intensity(scene, rays, r_wc, center)
    ref = prev.copy()

    ts_parts, px_parts, pol_parts = [], [], []
    for k in range(n_steps):
        t0 = k * h_step
        t1 = min((k + 1) * h_step, spec.duration)
        if t1 <= t0:
            break
        r_wc, center = camera_pose(spec, t1, extrinsics, r_wi0)
        cur = _render_log_intensity(scene, rays, r_wc, center)
        delta = cur - ref
        n_evt = np.floor(np.abs(delta) / contrast).astype(np.int64)
        hot = np.nonzero(n_evt)[0]
        if hot.size:
            reps = n_evt[hot]
            pix = np.repeat(hot, reps)
            total = int(reps.sum())
            ordinal = np.arange(total) - np.repeat(np.cumsum(reps) - reps, reps) + 1.0
            sign = np.sign(delta[hot])
            sign_e = np.repeat(sign, reps)
            levels = ref[pix] + sign_e * contrast[pix] * ordinal
            slope = cur[pix] - prev[pix]
            frac = np.clip((levels - prev[pix]) / np.where(np.abs(slope) < 1e-15, 1e-15, slope),
                           0.0, 1.0)
            ts_parts.append(t0 + frac * (t1 - t0))
            px_parts.append(pix)
            pol_parts.append(sign_e.astype(np.int64))
            ref[hot] += sign * contrast[hot] * reps
        prev = cur

    if not ts_parts:
        return EventArray(t=np.empty(0), u=np.empty(0, dtype=np.int64),
                          v=np.empty(0, dtype=np.int64), p=np.empty(0, dtype=np.int64))
    t = np.concatenate(ts_parts)
    pix = np.concatenate(px_parts)
    pol = np.concatenate(pol_parts)
    if config.event_time_jitter > 0:
        t = np.clip(t + rng.normal(0.0, config.event_time_jitter, t.shape), 0.0, spec.duration)
    order = np.argsort(t, kind="stable")
    t, pix, pol = t[order], pix[order], pol[order]
    if config.refractory > 0:
        keep = np.ones(len(t), dtype=bool)
        last = {}
        for i in range(len(t)):
            px = pix[i]
            prev_t = last.get(px)
            if prev_t is not None and t[i] - prev_t < config.refractory:
                keep[i] = False
            else:
                last[px] = t[i]
        t, pix, pol = t[keep], pix[keep], pol[keep]
    return EventArray(t=t, u=(pix % w).astype(np.int64), v=(pix // w).astype(np.int64), p=pol)


def generate_groundtruth(spec: TrajectorySpec, rate_hz: float = 200.0,
                         r_wi0: np.ndarray | None = None) -> np.ndarray:
    dt = 1.0 / rate_hz
    times = np.arange(0.0, spec.duration + dt / 2, dt)
    rows = np.empty((len(times), 8))
    for i, t in enumerate(times):
        r_wi, p, *_ = pose_at(spec, float(t), r_wi0)
        rows[i] = [t, *p, *rot_to_quat(r_wi)]
    return rows


# ---------------------------------------------------------------------------
# Presets


def preset_spec(name: str, duration: float = 10.0) -> TrajectorySpec:
    """Named trajectories: 'static', 'sinusoid' (6-DoF), 'reversal'."""
    if name == "static":
        return TrajectorySpec(duration=duration)
    if name == "sinusoid":
        return TrajectorySpec(
            duration=duration,
            translation=(
                (Sinusoid(0.22, 0.40),),
                (Sinusoid(0.28, 0.30), Sinusoid(0.06, 0.90)),
                (Sinusoid(0.18, 0.50),),
            ),
            rotation=(
                (Sinusoid(0.06, 0.35),),
                (Sinusoid(0.08, 0.45),),
                (Sinusoid(0.10, 0.25),),
            ),
        )
    if name == "reversal":
        # Near-triangle-wave sweep (odd harmonics of a triangle series) along
        # the camera's horizontal axis: velocity reverses sharply twice per
        # period, flipping event polarity.
        f0 = 0.25
        a0 = 0.55 * 8.0 / np.pi**2
        return TrajectorySpec(
            duration=duration,
            translation=(
                (),
                (Sinusoid(-a0, f0), Sinusoid(a0 / 9.0, 3 * f0), Sinusoid(-a0 / 25.0, 5 * f0)),
                (Sinusoid(0.05, 0.3),),
            ),
            rotation=((), (), ()),
        )
    raise ValueError(f"unknown preset {name!r}")


def simulate_dataset(out_dir: str, preset: str = "sinusoid", duration: float = 10.0,
                     config: SimConfig | None = None,
                     intrinsics: CameraIntrinsics | None = None,
                     extrinsics: CameraImuExtrinsics | None = None,
                     scene: Scene | None = None) -> str:
    """Run the simulator and write the standard dataset layout."""
    config = config or SimConfig()
    intrinsics = intrinsics or default_intrinsics()
    extrinsics = extrinsics or default_extrinsics()
    scene = scene or Scene(seed=config.seed)
    spec = preset_spec(preset, duration)
    events = generate_events(scene, spec, intrinsics, config, extrinsics)
    imu = generate_imu(spec, config)
    gt = generate_groundtruth(spec, rate_hz=config.imu_rate_hz)
    calib = Calibration(intrinsics=intrinsics, extrinsics=extrinsics)
    write_dataset(out_dir, events, imu, gt, calib)
    return out_dir


# ---------------------------------------------------------------------------
# Synthetic feature observations (filter test harness, bypasses the tracker)


@dataclass
class SyntheticTracks:
    """Pixel observations of known landmarks at known surface times."""

    times: np.ndarray                    # (T,)
    landmarks: np.ndarray                # (L, 3) world points
    pixels: np.ndarray                   # (T, L, 2), NaN when not visible
    visible: np.ndarray                  # (T, L) bool


def plane_landmarks(scene: Scene, grid: int = 6, margin: float = 0.75) -> np.ndarray:
    lin = np.linspace(-scene.extent * margin, scene.extent * margin, grid)
    yy, zz = np.meshgrid(lin, lin)
    pts = np.stack([np.full(yy.size, scene.depth), yy.ravel(), zz.ravel()], axis=1)
    return pts


def synthetic_tracks(spec: TrajectorySpec, times: np.ndarray, landmarks: np.ndarray,
                     intrinsics: CameraIntrinsics, extrinsics: CameraImuExtrinsics,
                     pixel_noise: float = 0.0, rng: np.random.Generator | None = None,
                     r_wi0: np.ndarray | None = None) -> SyntheticTracks:
    from .camera import project_points

    rng = rng or np.random.default_rng(0)
    T, L = len(times), len(landmarks)
    pixels = np.full((T, L, 2), np.nan)
    visible = np.zeros((T, L), dtype=bool)
    for i, t in enumerate(times):
        r_wi, p, *_ = pose_at(spec, float(t), r_wi0)
        p_c = (extrinsics.rotation @ (r_wi.T @ (landmarks - p).T)).T + extrinsics.translation
        ok = p_c[:, 2] > 0.1
        px, in_img = project_points(p_c, intrinsics)
        ok &= in_img
        if pixel_noise > 0:
            px = px + rng.normal(0.0, pixel_noise, px.shape)
        pixels[i, ok] = px[ok]
        visible[i] = ok
    return SyntheticTracks(times=np.asarray(times, dtype=float),
                           landmarks=np.asarray(landmarks, dtype=float),
                           pixels=pixels, visible=visible)
