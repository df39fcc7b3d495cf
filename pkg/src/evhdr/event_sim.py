"""ESIM-style event generation from HDR frame sequences.

Each pixel keeps a reference log-luminance level.  Between two consecutive
frames the log signal is treated as linear in time, and an event is emitted
every time the signal crosses ``reference +/- C``.  Event timestamps are
obtained by linear interpolation inside the frame interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evhdr.errors import InvalidInputError

# ITU-R BT.709 luma weights for linear RGB.
LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])


@dataclass
class HDRFrameSequence:
    frames: np.ndarray  # (N, H, W, 3), linear radiance
    timestamps: np.ndarray  # (N,), seconds

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise InvalidInputError(f"frames must be (N, H, W, 3), got {self.frames.shape}")
        if len(self.timestamps) != len(self.frames):
            raise InvalidInputError("one timestamp per frame is required")
        if np.any(np.diff(self.timestamps) <= 0):
            raise InvalidInputError("timestamps must be strictly increasing")
        if np.any(self.frames < 0) or not np.all(np.isfinite(self.frames)):
            raise InvalidInputError("frames must be finite and nonnegative")

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def __len__(self):
        return len(self.frames)


@dataclass
class EventStream:
    """Columnar event storage, sorted by (t, y, x)."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    t_start: float
    t_end: float
    width: int
    height: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.uint16)
        self.y = np.asarray(self.y, dtype=np.uint16)
        self.t = np.asarray(self.t, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.int8)
        self.t_start = float(self.t_start)
        self.t_end = float(self.t_end)
        self.width = int(self.width)
        self.height = int(self.height)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise InvalidInputError("event columns have different lengths")

    @classmethod
    def empty(cls, t_start, t_end, width, height) -> EventStream:
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0),
                   t_start, t_end, width, height)

    def __len__(self):
        return len(self.t)

    def validate(self):
        if len(self) == 0:
            return
        if np.any(self.x >= self.width) or np.any(self.y >= self.height):
            raise InvalidInputError("event coordinates outside the sensor")
        if not np.all(np.isin(self.p, (-1, 1))):
            raise InvalidInputError("polarity must be +1 or -1")
        if self.t.min() < self.t_start or self.t.max() > self.t_end:
            raise InvalidInputError("event timestamps outside [t_start, t_end]")
        if np.any(np.diff(self.t) < 0):
            raise InvalidInputError("events are not sorted by time")

    def select(self, mask, t_start=None, t_end=None) -> EventStream:
        return EventStream(
            self.x[mask], self.y[mask], self.t[mask], self.p[mask],
            self.t_start if t_start is None else t_start,
            self.t_end if t_end is None else t_end,
            self.width, self.height,
        )

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            (self.t_start, self.t_end, self.width, self.height)
            == (other.t_start, other.t_end, other.width, other.height)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )


@dataclass
class SimulatorConfig:
    contrast_threshold: float = 0.5
    upsample_factor: int = 10
    log_eps: float = 1e-4

    def __post_init__(self):
        if self.contrast_threshold <= 0:
            raise InvalidInputError("contrast threshold must be positive")
        if int(self.upsample_factor) != self.upsample_factor or self.upsample_factor < 1:
            raise InvalidInputError("upsample_factor must be a positive integer")
        if self.log_eps <= 0:
            raise InvalidInputError("log_eps must be positive")


def luminance(frames: np.ndarray) -> np.ndarray:
    return np.asarray(frames, dtype=np.float64) @ LUMA_WEIGHTS


def interpolate_frames(seq: HDRFrameSequence, factor: int, log_eps: float = 1e-4) -> HDRFrameSequence:
    """Upsample a frame sequence in time by linear interpolation of log intensity.

    Interpolation is done per colour channel on ``log(I + log_eps)``; the
    original frames are copied through unchanged.
    """
    if len(seq) < 2:
        raise InvalidInputError("need at least two frames to interpolate")
    if int(factor) != factor or factor < 1:
        raise InvalidInputError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return HDRFrameSequence(seq.frames.copy(), seq.timestamps.copy())

    log_frames = np.log(seq.frames + log_eps)
    out_frames = [seq.frames[0]]
    out_times = [seq.timestamps[0]]
    for k in range(len(seq) - 1):
        t0, t1 = seq.timestamps[k], seq.timestamps[k + 1]
        for j in range(1, factor):
            a = j / factor
            mix = (1.0 - a) * log_frames[k] + a * log_frames[k + 1]
            out_frames.append(np.maximum(np.exp(mix) - log_eps, 0.0))
            out_times.append(t0 + a * (t1 - t0))
        out_frames.append(seq.frames[k + 1])
        out_times.append(t1)
    return HDRFrameSequence(np.stack(out_frames), np.array(out_times))


def _count_levels_below(base, value, step):
    """Largest integer n with ``base + n * step <= value``, robust to rounding."""
    n = np.floor((value - base) / step)
    # floor() of the quotient can be off by one when value sits on a level
    n = np.where(base + (n + 1) * step <= value, n + 1, n)
    n = np.where(base + n * step > value, n - 1, n)
    return n.astype(np.int64)


def events_from_log_signal(log_frames, timestamps, contrast_threshold: float) -> tuple:
    """Threshold-crossing simulation on per-pixel log signals.

    ``log_frames`` has shape (N, H, W); the signal is piecewise linear between
    samples.  Returns flat ``(x, y, t, p)`` arrays sorted by (t, y, x).

    The reference level of each pixel is tracked as ``L0 + m * C`` with an
    integer ``m`` so that levels are reproducible bit-for-bit.
    """
    log_frames = np.asarray(log_frames, dtype=np.float64)
    timestamps = np.asarray(timestamps, dtype=np.float64)
    C = float(contrast_threshold)
    base = log_frames[0]
    height, width = base.shape
    level = np.zeros(base.shape, dtype=np.int64)
    ys, xs = np.mgrid[0:height, 0:width]
    xs, ys = xs.ravel(), ys.ravel()

    chunks = []
    for k in range(len(log_frames) - 1):
        l0, l1 = log_frames[k], log_frames[k + 1]
        ta, tb = timestamps[k], timestamps[k + 1]
        slope = l1 - l0

        top = _count_levels_below(base, l1, C)
        n_pos = np.maximum(top - level, 0)
        # smallest n with base + n*C >= l1 for the falling branch
        bottom = -_count_levels_below(-base, -l1, C)
        n_neg = np.maximum(level - bottom, 0)

        for n_events, sign in ((n_pos, 1), (n_neg, -1)):
            flat = n_events.ravel()
            total = int(flat.sum())
            if total == 0:
                continue
            pix = np.repeat(np.arange(flat.size), flat)
            # 1..n for every pixel, in crossing order
            starts = np.cumsum(flat) - flat
            step_idx = np.arange(total) - np.repeat(starts, flat) + 1
            lvl = base.ravel()[pix] + (level.ravel()[pix] + sign * step_idx) * C
            frac = (lvl - l0.ravel()[pix]) / slope.ravel()[pix]
            t = ta + np.clip(frac, 0.0, 1.0) * (tb - ta)
            chunks.append((xs[pix], ys[pix], t, np.full(total, sign, dtype=np.int8)))

        level = level + n_pos - n_neg

    if not chunks:
        empty = np.zeros(0)
        return empty.astype(np.uint16), empty.astype(np.uint16), empty, empty.astype(np.int8)
    x = np.concatenate([c[0] for c in chunks])
    y = np.concatenate([c[1] for c in chunks])
    t = np.concatenate([c[2] for c in chunks])
    p = np.concatenate([c[3] for c in chunks])
    order = np.lexsort((x, y, t))
    return x[order].astype(np.uint16), y[order].astype(np.uint16), t[order], p[order]


def simulate_events(seq: HDRFrameSequence, cfg: SimulatorConfig | None = None) -> EventStream:
    """Generate a grayscale event stream from a (pre-upsampled) HDR sequence."""
    cfg = cfg or SimulatorConfig()
    if len(seq) < 2:
        raise InvalidInputError("need at least two frames to simulate events")
    log_lum = np.log(luminance(seq.frames) + cfg.log_eps)
    x, y, t, p = events_from_log_signal(log_lum, seq.timestamps, cfg.contrast_threshold)
    return EventStream(x, y, t, p, seq.timestamps[0], seq.timestamps[-1], seq.width, seq.height)


def simulate_sequence(seq: HDRFrameSequence, cfg: SimulatorConfig | None = None) -> EventStream:
    """Upsample ``seq`` by ``cfg.upsample_factor`` and simulate events on it."""
    cfg = cfg or SimulatorConfig()
    dense = interpolate_frames(seq, cfg.upsample_factor, cfg.log_eps)
    return simulate_events(dense, cfg)
