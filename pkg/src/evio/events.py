"""Domain types and text-dataset IO for event/IMU/ground-truth streams.

Dataset layout (one directory):

- ``events.txt``      lines ``t u v p`` with t in decimal seconds and p in
  {0, 1} on disk; polarity is {-1, +1} in memory (0 maps to -1).
- ``imu.txt``         lines ``t gx gy gz ax ay az`` (rad/s, m/s^2, body frame).
- ``groundtruth.txt`` lines ``t px py pz qx qy qz qw``.
- ``calib.txt``       key-value lines (``fx``, ``fy``, ``cx``, ``cy``,
  ``width``, ``height``, ``distortion k1 k2 p1 p2``, ``q_CI qx qy qz qw``,
  ``p_CI x y z``). ``q_CI``/``p_CI`` transform IMU-frame points into the
  camera frame: ``p_cam = R(q_CI) @ p_imu + p_CI``.

Timestamps are 64-bit floating seconds. Writers emit shortest round-trip
float representations so write->load reproduces a stream exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .rotations import quat_normalize, quat_to_rot


class DatasetError(ValueError):
    """Malformed dataset content; carries file and line/index context."""


@dataclass(frozen=True)
class Event:
    """A single brightness-change measurement.

    t is seconds, (u, v) the pixel column/row, p the polarity in {-1, +1}.
    """

    t: float
    u: int
    v: int
    p: int

    def __post_init__(self):
        if self.p not in (-1, 1):
            raise ValueError(f"polarity must be -1 or +1, got {self.p}")
        if self.t < 0.0:
            raise ValueError(f"event timestamp must be >= 0, got {self.t}")
        if self.u < 0 or self.v < 0:
            raise ValueError(f"pixel coordinates must be non-negative, got ({self.u}, {self.v})")


@dataclass(frozen=True)
class ImuSample:
    """One gyroscope + accelerometer sample (body frame, gravity reaction included)."""

    t: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        gyro = np.asarray(self.gyro, dtype=float)
        accel = np.asarray(self.accel, dtype=float)
        if gyro.shape != (3,) or accel.shape != (3,):
            raise ValueError("gyro and accel must be 3-vectors")
        if not (np.isfinite(gyro).all() and np.isfinite(accel).all() and np.isfinite(self.t)):
            raise ValueError("IMU sample has non-finite components")
        object.__setattr__(self, "gyro", gyro)
        object.__setattr__(self, "accel", accel)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    distortion: np.ndarray = field(default_factory=lambda: np.zeros(4))  # k1 k2 p1 p2

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        object.__setattr__(self, "distortion", np.asarray(self.distortion, dtype=float).reshape(4))

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraImuExtrinsics:
    """Rigid transform taking IMU-frame points to the camera frame.

    p_cam = rotation @ p_imu + translation
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if r.shape == (4,):
            r = quat_to_rot(quat_normalize(r))
        if r.shape != (3, 3):
            raise ValueError("rotation must be a 3x3 matrix or quaternion [x,y,z,w]")
        if np.linalg.norm(r @ r.T - np.eye(3)) > 1e-6 or np.linalg.det(r) < 0.0:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)


@dataclass(frozen=True)
class GroundTruthPose:
    """World-frame pose sample; orientation is a body->world unit quaternion."""

    t: float
    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-3:
            raise ValueError(f"quaternion norm {n} too far from 1")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q / n)


@dataclass(frozen=True)
class Calibration:
    intrinsics: CameraIntrinsics
    extrinsics: CameraImuExtrinsics


@dataclass
class EventArray:
    """Column-oriented event storage used by the streaming pipeline."""

    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray  # {-1, +1}

    def __len__(self) -> int:
        return self.t.shape[0]

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(float(self.t[i]), int(self.u[i]), int(self.v[i]), int(self.p[i]))


def parse_event_line(line: str, width: int | None = None, height: int | None = None,
                     line_number: int | None = None) -> Event:
    """Parse one ``t u v p`` line; disk polarity {0,1} maps to {-1,+1}."""

    def fail(msg: str):
        where = f" (line {line_number})" if line_number is not None else ""
        raise DatasetError(f"{msg}{where}: {line.strip()!r}")

    parts = line.split()
    if len(parts) != 4:
        fail(f"expected 4 fields, got {len(parts)}")
    try:
        t = float(parts[0])
        u = int(parts[1])
        v = int(parts[2])
        p_raw = int(parts[3])
    except ValueError:
        fail("non-numeric token")
    if p_raw not in (0, 1):
        fail(f"polarity must be 0 or 1 on disk, got {p_raw}")
    if t < 0.0:
        fail("negative timestamp")
    if u < 0 or v < 0:
        fail("negative pixel coordinate")
    if width is not None and u >= width:
        fail(f"u={u} out of range for width {width}")
    if height is not None and v >= height:
        fail(f"v={v} out of range for height {height}")
    return Event(t=t, u=u, v=v, p=1 if p_raw == 1 else -1)


def _load_columns(path: str, ncols: int) -> np.ndarray:
    """Whitespace table -> (N, ncols) float array; strict on field counts."""
    rows = []
    with open(path, "r") as f:
        for i, line in enumerate(f, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != ncols:
                raise DatasetError(f"{os.path.basename(path)}: expected {ncols} fields, "
                                   f"got {len(parts)} (line {i})")
            try:
                rows.append([float(x) for x in parts])
            except ValueError:
                raise DatasetError(f"{os.path.basename(path)}: non-numeric token (line {i})")
    if not rows:
        return np.empty((0, ncols))
    return np.asarray(rows)


def _check_monotone(t: np.ndarray, name: str, strict: bool = False):
    if t.shape[0] < 2:
        return
    dt = np.diff(t)
    bad = np.nonzero(dt < 0 if not strict else dt <= 0)[0]
    if bad.size:
        k = int(bad[0]) + 1
        raise DatasetError(f"{name}: non-monotone timestamp at index {k} "
                           f"(t[{k}]={t[k]!r} after t[{k - 1}]={t[k - 1]!r})")


def load_event_array(path: str, width: int | None = None, height: int | None = None) -> EventArray:
    cols = _load_columns(path, 4)
    t = cols[:, 0]
    u = cols[:, 1].astype(np.int64)
    v = cols[:, 2].astype(np.int64)
    p_raw = cols[:, 3].astype(np.int64)
    bad = np.nonzero((p_raw != 0) & (p_raw != 1))[0]
    if bad.size:
        raise DatasetError(f"events: polarity not in {{0,1}} at index {int(bad[0])}")
    if (t < 0).any():
        raise DatasetError(f"events: negative timestamp at index {int(np.argmax(t < 0))}")
    if (u < 0).any() or (v < 0).any():
        raise DatasetError("events: negative pixel coordinate")
    if width is not None and (u >= width).any():
        raise DatasetError(f"events: u out of range for width {width} "
                           f"at index {int(np.argmax(u >= width))}")
    if height is not None and (v >= height).any():
        raise DatasetError(f"events: v out of range for height {height} "
                           f"at index {int(np.argmax(v >= height))}")
    _check_monotone(t, "events")
    return EventArray(t=t, u=u, v=v, p=(2 * p_raw - 1))


def load_imu_array(path: str) -> np.ndarray:
    """Returns (N, 7) array of t, gx, gy, gz, ax, ay, az."""
    cols = _load_columns(path, 7)
    if cols.size and not np.isfinite(cols).all():
        raise DatasetError("imu: non-finite component")
    _check_monotone(cols[:, 0] if cols.size else np.empty(0), "imu")
    return cols


def load_groundtruth_array(path: str) -> np.ndarray:
    """Returns (N, 8) array of t, px, py, pz, qx, qy, qz, qw."""
    cols = _load_columns(path, 8)
    _check_monotone(cols[:, 0] if cols.size else np.empty(0), "groundtruth")
    return cols


def load_calibration(path: str) -> Calibration:
    values: dict[str, list[float]] = {}
    with open(path, "r") as f:
        for i, line in enumerate(f, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            try:
                values[parts[0]] = [float(x) for x in parts[1:]]
            except ValueError:
                raise DatasetError(f"calib.txt: non-numeric value (line {i})")
    required = ["fx", "fy", "cx", "cy", "width", "height"]
    missing = [k for k in required if k not in values]
    if missing:
        raise DatasetError(f"calib.txt: missing keys {missing}")
    distortion = values.get("distortion", [0.0, 0.0, 0.0, 0.0])
    if len(distortion) != 4:
        raise DatasetError("calib.txt: distortion must have 4 values (k1 k2 p1 p2)")
    intr = CameraIntrinsics(
        fx=values["fx"][0], fy=values["fy"][0],
        cx=values["cx"][0], cy=values["cy"][0],
        width=int(values["width"][0]), height=int(values["height"][0]),
        distortion=np.asarray(distortion),
    )
    q = values.get("q_CI", [0.0, 0.0, 0.0, 1.0])
    p = values.get("p_CI", [0.0, 0.0, 0.0])
    if len(q) != 4 or len(p) != 3:
        raise DatasetError("calib.txt: q_CI must have 4 values and p_CI 3")
    extr = CameraImuExtrinsics(rotation=np.asarray(q), translation=np.asarray(p))
    return Calibration(intrinsics=intr, extrinsics=extr)


def load_streams(dataset_dir: str):
    """Load a dataset directory.

    Returns ``(events, imu, groundtruth, calibration)`` where the first three
    are iterators yielding :class:`Event`, :class:`ImuSample` and
    :class:`GroundTruthPose` in file order (validated nondecreasing).
    ``groundtruth.txt`` is optional; its iterator is empty when absent.
    """
    for name in ("events.txt", "imu.txt", "calib.txt"):
        if not os.path.exists(os.path.join(dataset_dir, name)):
            raise DatasetError(f"missing required file {name} in {dataset_dir}")
    calib = load_calibration(os.path.join(dataset_dir, "calib.txt"))
    events = load_event_array(os.path.join(dataset_dir, "events.txt"),
                              width=calib.intrinsics.width, height=calib.intrinsics.height)
    imu = load_imu_array(os.path.join(dataset_dir, "imu.txt"))
    gt_path = os.path.join(dataset_dir, "groundtruth.txt")
    gt = load_groundtruth_array(gt_path) if os.path.exists(gt_path) else np.empty((0, 8))

    def imu_iter() -> Iterator[ImuSample]:
        for row in imu:
            yield ImuSample(t=float(row[0]), gyro=row[1:4].copy(), accel=row[4:7].copy())

    def gt_iter() -> Iterator[GroundTruthPose]:
        for row in gt:
            yield GroundTruthPose(t=float(row[0]), position=row[1:4].copy(),
                                  orientation=row[4:8].copy())

    return iter(events), imu_iter(), gt_iter(), calib


def _fmt(x: float) -> str:
    return repr(float(x))


def write_events(path: str, events: EventArray):
    with open(path, "w") as f:
        for i in range(len(events)):
            p_disk = 1 if events.p[i] > 0 else 0
            f.write(f"{_fmt(events.t[i])} {int(events.u[i])} {int(events.v[i])} {p_disk}\n")


def write_imu(path: str, imu: np.ndarray):
    with open(path, "w") as f:
        for row in imu:
            f.write(" ".join(_fmt(x) for x in row) + "\n")


def write_groundtruth(path: str, gt: np.ndarray):
    with open(path, "w") as f:
        for row in gt:
            f.write(" ".join(_fmt(x) for x in row) + "\n")


def write_calibration(path: str, calib: Calibration):
    intr, extr = calib.intrinsics, calib.extrinsics
    from .rotations import rot_to_quat

    q = rot_to_quat(extr.rotation)
    with open(path, "w") as f:
        f.write(f"fx {_fmt(intr.fx)}\nfy {_fmt(intr.fy)}\n")
        f.write(f"cx {_fmt(intr.cx)}\ncy {_fmt(intr.cy)}\n")
        f.write(f"width {intr.width}\nheight {intr.height}\n")
        f.write("distortion " + " ".join(_fmt(x) for x in intr.distortion) + "\n")
        f.write("q_CI " + " ".join(_fmt(x) for x in q) + "\n")
        f.write("p_CI " + " ".join(_fmt(x) for x in extr.translation) + "\n")


def write_dataset(dataset_dir: str, events: EventArray, imu: np.ndarray,
                  gt: np.ndarray, calib: Calibration):
    os.makedirs(dataset_dir, exist_ok=True)
    write_events(os.path.join(dataset_dir, "events.txt"), events)
    write_imu(os.path.join(dataset_dir, "imu.txt"), imu)
    write_groundtruth(os.path.join(dataset_dir, "groundtruth.txt"), gt)
    write_calibration(os.path.join(dataset_dir, "calib.txt"), calib)
