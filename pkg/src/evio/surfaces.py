"""Event activity, decay kernels and time-surface rendering.

A time surface stores, per pixel, a decayed function of the most recent
event's timestamp. Two kernels are supported:

- exponential: ``exp(-(t - t_p) / eta)`` with a fixed time constant ``eta``;
- adaptive:    ``1 / (1 + r * alpha_p * (t - t_p))`` where ``alpha_p`` is the
  event activity at the event's timestamp, so the decay rate follows the
  dynamics of the stream.

The event activity is a recursively decayed event count: each ingested event
first decays the running value with the adaptive kernel, then adds one. A
surface at time ``t_j`` only uses "active" events, those with
``nu(e, t_j) = 1 / (1 + r * alpha(t_j) * (t_j - t_e)) >= w_th``; inverting
that threshold gives the start of the active window,

    t_init = t_j - (1 - w_th) / (r * alpha(t_j) * w_th).

Two segmentation strategies are provided: Data-Priority (event-driven resets,
surface timestamps fall out of the data) and Time-Priority (arbitrary
requested timestamps, ``alpha(t_j)`` approximated by the activity of the
event nearest to ``t_j``).

Pixel values: the raw kernel value is signed by polarity in ``weighted`` mode
(by its negation in ``inverted`` mode) and mapped affinely from [-1, 1] to
[0, 255] so that 0 maps to 128; ``unsigned`` mode maps [0, 1] to [0, 255].
Rounding is to nearest with ties away from zero.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .events import EventArray

POLARITY_MODES = ("unsigned", "weighted", "inverted")


@dataclass(frozen=True)
class KernelConfig:
    """Decay kernel and polarity handling for surface rendering."""

    kind: str = "adaptive"  # "adaptive" | "exponential"
    r: float = 0.1
    w_th: float = 0.01
    eta: float = 0.03
    polarity_mode: str = "weighted"

    def __post_init__(self):
        if self.kind not in ("adaptive", "exponential"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "exponential" and self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.kind == "adaptive":
            if self.r <= 0:
                raise ValueError("r must be > 0")
            if not (0.0 < self.w_th < 1.0):
                raise ValueError("w_th must be in (0, 1)")
        if self.polarity_mode not in POLARITY_MODES:
            raise ValueError(f"polarity_mode must be one of {POLARITY_MODES}")

    def with_mode(self, mode: str) -> "KernelConfig":
        return KernelConfig(kind=self.kind, r=self.r, w_th=self.w_th,
                            eta=self.eta, polarity_mode=mode)


def exponential_decay(t_p, t, eta: float):
    """exp(-(t - t_p) / eta); scalar or elementwise on arrays."""
    dt = np.asarray(t, dtype=float) - np.asarray(t_p, dtype=float)
    if eta <= 0:
        raise ValueError("eta must be > 0")
    if np.any(dt < 0):
        raise ValueError("decay evaluated before the event (t < t_p)")
    out = np.exp(-dt / eta)
    return float(out) if out.ndim == 0 else out


def adaptive_decay(alpha_p, t_p, t, r: float):
    """1 / (1 + r * alpha_p * (t - t_p)); scalar or elementwise on arrays."""
    dt = np.asarray(t, dtype=float) - np.asarray(t_p, dtype=float)
    alpha_p = np.asarray(alpha_p, dtype=float)
    if r <= 0:
        raise ValueError("r must be > 0")
    if np.any(dt < 0):
        raise ValueError("decay evaluated before the event (t < t_p)")
    if np.any(alpha_p < 0):
        raise ValueError("activity must be >= 0")
    out = 1.0 / (1.0 + r * alpha_p * dt)
    return float(out) if out.ndim == 0 else out


def activity_threshold_value(alpha_t, t_p, t, r: float):
    """Active-event test value nu(e_p, t).

    Same form as the adaptive kernel but evaluated with the activity at the
    surface time ``t`` rather than at the event time, which is what makes the
    active window invertible in closed form (see :func:`compute_t_init`).
    """
    return adaptive_decay(alpha_t, t_p, t, r)


def compute_t_init(t_j: float, alpha_tj: float, r: float, w_th: float,
                   stream_start: float) -> float:
    """Start of the active-event window for a surface at ``t_j``.

    Solves nu(e_init, t_j) = w_th for the event timestamp. With no prior
    activity the window is everything, and the result is clamped below at the
    stream start so early surfaces stay well defined.
    """
    if not (0.0 < w_th < 1.0):
        raise ValueError("w_th must be in (0, 1)")
    if r <= 0:
        raise ValueError("r must be > 0")
    if alpha_tj < 0:
        raise ValueError("activity must be >= 0")
    if alpha_tj == 0.0:
        return stream_start
    t_init = t_j - (1.0 - w_th) / (r * alpha_tj * w_th)
    return max(t_init, stream_start)


class ActivityTracker:
    """Recursive event-activity state alpha(t).

    Ingestion is strictly sequential (the recursion is order dependent). The
    tracker keeps a (timestamp, activity) history so that Time-Priority
    surfaces can look up the activity of the event nearest an arbitrary
    timestamp; ties resolve to the earlier event. ``trim`` drops history the
    pipeline no longer needs.
    """

    def __init__(self, r: float):
        if r <= 0:
            raise ValueError("r must be > 0")
        self.r = r
        self.alpha = 0.0
        self.t_last = -np.inf
        self._hist_t: list[float] = []
        self._hist_alpha: list[float] = []

    def ingest(self, t: float) -> float:
        """Decay-then-count update; returns the post-update activity."""
        if t < self.t_last:
            raise ValueError(f"out-of-order event: {t} < {self.t_last}")
        if np.isfinite(self.t_last):
            self.alpha = adaptive_decay(self.alpha, self.t_last, t, self.r) * self.alpha + 1.0
        else:
            self.alpha = 1.0
        self.t_last = t
        self._hist_t.append(t)
        self._hist_alpha.append(self.alpha)
        return self.alpha

    def ingest_chunk(self, ts: np.ndarray) -> np.ndarray:
        """Ingest a sorted timestamp chunk; returns per-event activities."""
        if len(ts) == 0:
            return np.empty(0)
        if ts[0] < self.t_last:
            raise ValueError(f"out-of-order event: {ts[0]} < {self.t_last}")
        alphas = _activity_scan(ts, self.alpha, self.t_last, self.r)
        self.alpha = float(alphas[-1])
        self.t_last = float(ts[-1])
        self._hist_t.extend(ts.tolist())
        self._hist_alpha.extend(alphas.tolist())
        return alphas

    def alpha_near(self, t: float) -> float:
        """Activity of the event closest to t (0.0 if nothing ingested)."""
        if not self._hist_t:
            return 0.0
        i = bisect.bisect_left(self._hist_t, t)
        if i == 0:
            return self._hist_alpha[0]
        if i == len(self._hist_t):
            return self._hist_alpha[-1]
        before, after = self._hist_t[i - 1], self._hist_t[i]
        # Tie goes to the earlier event.
        if t - before <= after - t:
            return self._hist_alpha[i - 1]
        return self._hist_alpha[i]

    def trim(self, before_t: float):
        """Drop history older than before_t, keeping at least the last entry."""
        i = min(bisect.bisect_left(self._hist_t, before_t), len(self._hist_t) - 1)
        if i > 0:
            del self._hist_t[:i]
            del self._hist_alpha[:i]


class LatestEventBuffer:
    """Per-pixel record of the most recent event and its activity."""

    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.t = np.full((height, width), -np.inf)
        self.p = np.zeros((height, width), dtype=np.int8)
        self.alpha = np.zeros((height, width))

    def record(self, u: int, v: int, t: float, p: int, alpha: float):
        if t < self.t[v, u]:
            raise ValueError("per-pixel timestamps must be nondecreasing")
        self.t[v, u] = t
        self.p[v, u] = p
        self.alpha[v, u] = alpha

    def record_chunk(self, us: np.ndarray, vs: np.ndarray, ts: np.ndarray,
                     ps: np.ndarray, alphas: np.ndarray):
        # Later rows win on duplicate pixels, matching sequential recording.
        self.t[vs, us] = ts
        self.p[vs, us] = ps
        self.alpha[vs, us] = alphas

    def copy(self) -> "LatestEventBuffer":
        out = LatestEventBuffer(self.width, self.height)
        out.t = self.t.copy()
        out.p = self.p.copy()
        out.alpha = self.alpha.copy()
        return out


@dataclass
class TimeSurface:
    """Rendered surface: 8-bit pixels plus the timestamp and kernel used."""

    t_j: float
    pixels: np.ndarray  # uint8, (height, width)
    kernel: KernelConfig

    @property
    def background(self) -> int:
        return 128 if self.kernel.polarity_mode in ("weighted", "inverted") else 0


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def render(buffer: LatestEventBuffer, t_j: float, t_init: float,
           config: KernelConfig) -> TimeSurface:
    """Render the latest active event of every pixel at time t_j.

    Pixels whose latest event falls outside [t_init, t_j] hold the value that
    raw 0 maps to (128 in signed modes, 0 in unsigned mode).
    """
    if t_init > t_j:
        raise ValueError("t_init must be <= t_j")
    active = (buffer.t >= t_init) & (buffer.t <= t_j)
    raw = np.zeros(buffer.t.shape)
    if np.any(active):
        dt = t_j - buffer.t[active]
        if config.kind == "exponential":
            tau = np.exp(-dt / config.eta)
        else:
            tau = 1.0 / (1.0 + config.r * buffer.alpha[active] * dt)
        if config.polarity_mode == "weighted":
            tau = tau * buffer.p[active]
        elif config.polarity_mode == "inverted":
            tau = tau * (-buffer.p[active])
        raw[active] = tau
    if config.polarity_mode == "unsigned":
        mapped = _round_half_away(raw * 255.0)
    else:
        mapped = _round_half_away((raw + 1.0) * 127.5)
    return TimeSurface(t_j=t_j, pixels=np.clip(mapped, 0, 255).astype(np.uint8),
                       kernel=config)


def time_priority_surface(buffer: LatestEventBuffer, tracker: ActivityTracker,
                          t_j: float, config: KernelConfig,
                          stream_start: float) -> TimeSurface:
    """Surface at an arbitrary timestamp (Time-Priority strategy).

    alpha(t_j) is approximated by the activity of the ingested event nearest
    to t_j, so t_j may fall before the tracker's last event.
    """
    if config.kind != "adaptive":
        raise ValueError("Time-Priority windowing requires the adaptive kernel")
    alpha_tj = tracker.alpha_near(t_j)
    t_init = compute_t_init(t_j, alpha_tj, config.r, config.w_th, stream_start)
    return render(buffer, t_j, t_init, config)


@dataclass
class SegmentationResult:
    surfaces: list[TimeSurface]
    trailing_events: int  # events accumulated after the last emitted surface


def data_priority_segment(events: EventArray, config: KernelConfig,
                          width: int, height: int) -> SegmentationResult:
    """Event-driven segmentation (Data-Priority strategy).

    The window opens at the first event; whenever the window-opening event
    goes inactive, nu(e_init, t_current) < w_th, a surface at the current
    event's timestamp is emitted and the window restarts there. Surface
    timestamps are data driven and not configurable.
    """
    if config.kind != "adaptive":
        raise ValueError("Data-Priority segmentation requires the adaptive kernel")
    tracker = ActivityTracker(config.r)
    buffer = LatestEventBuffer(width, height)
    surfaces: list[TimeSurface] = []
    t_init = None
    trailing = 0
    for i in range(len(events)):
        t = float(events.t[i])
        alpha = tracker.ingest(t)
        buffer.record(int(events.u[i]), int(events.v[i]), t, int(events.p[i]), alpha)
        if t_init is None:
            t_init = t
        trailing += 1
        nu = activity_threshold_value(alpha, t_init, t, config.r)
        if nu < config.w_th:
            surfaces.append(render(buffer, t, t_init, config))
            t_init = t
            trailing = 0
    return SegmentationResult(surfaces=surfaces, trailing_events=trailing)


class SurfaceStream:
    """Fixed-rate Time-Priority surface generator over an event array.

    Ingests events in chunks (the activity recursion itself stays strictly
    sequential) and renders weighted plus inverted surfaces at each requested
    timestamp. When a requested t_j falls between the last ingested event and
    the next one, the nearer event's activity is used.
    """

    def __init__(self, events: EventArray, config: KernelConfig,
                 width: int, height: int):
        self.events = events
        self.config = config
        self.width = width
        self.height = height
        self.tracker = ActivityTracker(config.r)
        self.buffer = LatestEventBuffer(width, height)
        self._cursor = 0
        self.stream_start = float(events.t[0]) if len(events) else 0.0

    def _ingest_until(self, t_j: float):
        t = self.events.t
        end = self._cursor + int(np.searchsorted(t[self._cursor:], t_j, side="right"))
        if end > self._cursor:
            chunk = slice(self._cursor, end)
            alphas = self.tracker.ingest_chunk(t[chunk])
            self.buffer.record_chunk(self.events.u[chunk], self.events.v[chunk],
                                     t[chunk], self.events.p[chunk], alphas)
            self._cursor = end

    def surface_pair(self, t_j: float) -> tuple[TimeSurface, TimeSurface]:
        """Weighted and inverted surfaces at t_j (events up to t_j ingested)."""
        self._ingest_until(t_j)
        alpha_tj = self.tracker.alpha_near(t_j)
        # The next (not yet ingested) event may be nearer to t_j.
        if self._cursor < len(self.events):
            t_next = float(self.events.t[self._cursor])
            t_prev = self.tracker.t_last
            if not np.isfinite(t_prev) or (t_next - t_j) < (t_j - t_prev):
                alpha_tj = float(_activity_scan(
                    np.array([t_next]), self.tracker.alpha, self.tracker.t_last,
                    self.config.r)[0])
        t_init = compute_t_init(t_j, alpha_tj, self.config.r, self.config.w_th,
                                self.stream_start)
        self.tracker.trim(t_init)
        w = render(self.buffer, t_j, t_init, self.config.with_mode("weighted"))
        i = render(self.buffer, t_j, t_init, self.config.with_mode("inverted"))
        return w, i


def _activity_scan(ts: np.ndarray, alpha0: float, t_last: float, r: float) -> np.ndarray:
    """Run the activity recursion over a sorted timestamp chunk."""
    out = np.empty(len(ts))
    alpha = alpha0
    prev = t_last
    for i, t in enumerate(ts):
        if np.isfinite(prev):
            alpha = alpha / (1.0 + r * alpha * (t - prev)) + 1.0
        else:
            alpha = 1.0
        prev = t
        out[i] = alpha
    return out


def write_pgm(path: str, pixels: np.ndarray):
    """8-bit binary PGM (P5)."""
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def surface_filename(t_j: float) -> str:
    """Dump name: timestamp in whole microseconds."""
    return f"{int(round(t_j * 1e6)):012d}.pgm"
