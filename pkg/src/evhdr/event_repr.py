"""Event partitioning, voxel grids and sliding-window sub-sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evhdr.errors import InvalidInputError
from evhdr.event_sim import EventStream


@dataclass
class VoxelGrid:
    values: np.ndarray  # (B, H, W)
    t_start: float
    t_end: float

    @property
    def bins(self) -> int:
        return self.values.shape[0]


@dataclass
class PartitionedEvents:
    parts: tuple  # (E1, E2, E3); E2 is the reference partition
    boundaries: tuple  # (t0, t1, t2, t3)

    def __iter__(self):
        return iter(self.parts)

    def __getitem__(self, i):
        return self.parts[i]

    def merged(self) -> EventStream:
        """The three partitions stitched back into a single stream over [t0, t3]."""
        first = self.parts[0]
        cat = lambda name: np.concatenate([getattr(e, name) for e in self.parts])
        return EventStream(cat("x"), cat("y"), cat("t"), cat("p"),
                           self.boundaries[0], self.boundaries[3], first.width, first.height)


@dataclass
class WindowSet:
    windows: list
    keyframe_indices: tuple
    starts: tuple = ()

    @property
    def intermediate_indices(self) -> tuple:
        return tuple(i for i in range(len(self.windows)) if i not in self.keyframe_indices)


def partition_stream(stream: EventStream, t0, t1, t2, t3) -> PartitionedEvents:
    """Split ``stream`` at the LDR timestamps; an event at ``t_k`` belongs to the later chunk."""
    if not (t0 < t1 < t2 < t3):
        raise InvalidInputError("partition boundaries must be strictly increasing")
    t = stream.t
    if len(t) and (t.min() < t0 or t.max() > t3):
        raise InvalidInputError("events outside [t0, t3]")
    masks = (t < t1, (t >= t1) & (t < t2), t >= t2)
    bounds = ((t0, t1), (t1, t2), (t2, t3))
    parts = tuple(stream.select(m, a, b) for m, (a, b) in zip(masks, bounds))
    return PartitionedEvents(parts, (float(t0), float(t1), float(t2), float(t3)))


def voxel_weights(t, bins: int, t_start: float, t_end: float):
    """Lower bin index and the (lower, upper) bilinear weights of each timestamp."""
    t = np.asarray(t, dtype=np.float64)
    t_norm = (bins - 1) * (t - t_start) / (t_end - t_start)
    lower = np.floor(t_norm).astype(np.int64)
    frac = t_norm - lower
    return lower, 1.0 - frac, frac


def voxelize(events: EventStream, bins: int, t_start: float, t_end: float,
             width: int | None = None, height: int | None = None) -> VoxelGrid:
    """Accumulate event polarities into ``bins`` temporal bins with linear weights."""
    if t_end <= t_start:
        raise InvalidInputError("t_end must be greater than t_start")
    if bins < 1:
        raise InvalidInputError("bins must be >= 1")
    width = events.width if width is None else width
    height = events.height if height is None else height
    grid = np.zeros((bins, height, width), dtype=np.float64)
    if len(events) == 0:
        return VoxelGrid(grid, t_start, t_end)
    if events.t.min() < t_start or events.t.max() > t_end:
        raise InvalidInputError("events outside [t_start, t_end]")

    x = events.x.astype(np.int64)
    y = events.y.astype(np.int64)
    p = events.p.astype(np.float64)
    lower, w_lo, w_hi = voxel_weights(events.t, bins, t_start, t_end)
    np.add.at(grid, (lower, y, x), p * w_lo)
    upper = lower + 1
    inside = upper < bins
    np.add.at(grid, (upper[inside], y[inside], x[inside]), (p * w_hi)[inside])
    return VoxelGrid(grid, t_start, t_end)


def normalize_voxels(grid: VoxelGrid) -> VoxelGrid:
    """Standardise the nonzero voxels to zero mean and unit (population) variance."""
    values = grid.values.copy()
    nz = values != 0
    if not nz.any():
        return VoxelGrid(values, grid.t_start, grid.t_end)
    occupied = values[nz]
    mean = occupied.mean()
    std = occupied.std()
    values[nz] = (occupied - mean) / std if std > 0 else occupied - mean
    return VoxelGrid(values, grid.t_start, grid.t_end)


def keyframe_grids(partitions: PartitionedEvents, bins: int) -> list:
    return [voxelize(e, bins, e.t_start, e.t_end) for e in partitions]


def sliding_windows(partitions: PartitionedEvents, bins: int, stride: int = 1) -> WindowSet:
    """Slide a ``bins``-wide window over a uniform 3*bins timeline spanning [t0, t3].

    The whole stream is re-voxelised on the uniform grid, so every window
    has the same temporal width.  Windows starting at 0, bins and 2*bins
    line up with the three partitions and are flagged as keyframes.
    """
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    t0, t3 = partitions.boundaries[0], partitions.boundaries[3]
    total = 3 * bins
    timeline = voxelize(partitions.merged(), total, t0, t3)
    dt = (t3 - t0) / (total - 1) if total > 1 else 0.0
    starts = list(range(0, total - bins + 1, stride))
    windows = [
        VoxelGrid(timeline.values[s:s + bins].copy(), t0 + s * dt, t0 + (s + bins - 1) * dt)
        for s in starts
    ]
    keyframes = tuple(i for i, s in enumerate(starts) if s in (0, bins, 2 * bins))
    return WindowSet(windows, keyframes, tuple(starts))
