"""Bracketed samples: synthesis from HDR sequences, persistence, and network-ready arrays."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from evhdr import io
from evhdr.errors import InvalidInputError
from evhdr.event_repr import (
    PartitionedEvents,
    keyframe_grids,
    normalize_voxels,
    partition_stream,
    sliding_windows,
)
from evhdr.event_sim import HDRFrameSequence, SimulatorConfig, simulate_sequence
from evhdr.ldr_sim import ExposureConfig, LDRImage, exposure_scale, linearize, synthesize_ldr


@dataclass
class BracketSample:
    ldrs: list  # three LDRImage, index 1 is the reference
    linears: list  # three LinearImage
    events: PartitionedEvents
    gt: np.ndarray  # (H, W, 3) linear HDR at the reference timestamp
    scene: str = ""
    timestamps: tuple = ()  # (t0, t1, t2, t3)
    hdr_scale: float = 1.0

    @property
    def exposure_times(self) -> tuple:
        return tuple(im.exposure_time for im in self.ldrs)


@dataclass
class BracketArrays:
    """Channel-first arrays consumed by the network."""

    ldr: np.ndarray  # (3, 3, H, W)
    linear: np.ndarray  # (3, 3, H, W)
    events: np.ndarray  # (3, B, H, W)
    windows: np.ndarray  # (n_windows, B, H, W)
    gt: np.ndarray  # (3, H, W)
    name: str = ""

    @property
    def size(self) -> tuple:
        return self.gt.shape[-2:]

    def spatial(self, fn) -> BracketArrays:
        """Apply the same spatial transform to every array (acts on the last two axes)."""
        return replace(self, ldr=fn(self.ldr), linear=fn(self.linear), events=fn(self.events),
                       windows=fn(self.windows), gt=fn(self.gt))


def to_arrays(sample: BracketSample, bins: int = 5, stride: int = 1) -> BracketArrays:
    ldr = np.stack([im.pixels.transpose(2, 0, 1) for im in sample.ldrs])
    linear = np.stack([im.pixels.transpose(2, 0, 1) for im in sample.linears])
    events = np.stack([normalize_voxels(g).values for g in keyframe_grids(sample.events, bins)])
    windows = np.stack([normalize_voxels(g).values
                        for g in sliding_windows(sample.events, bins, stride).windows])
    return BracketArrays(ldr.astype(np.float32), linear.astype(np.float32),
                         events.astype(np.float32), windows.astype(np.float32),
                         sample.gt.transpose(2, 0, 1).astype(np.float32), sample.scene)


def synthesize_samples(seq: HDRFrameSequence, exposure: ExposureConfig | None = None,
                       sim: SimulatorConfig | None = None, seed=0, step: int = 1,
                       name: str = "scene", add_noise: bool = True) -> list:
    """Cut a sequence into bracketed samples.

    Sample k uses frames k-1..k+2: frames k, k+1, k+2 become the short,
    medium (reference, also the ground truth) and long exposures, and the
    events cover [tau_{k-1}, tau_{k+2}].  Radiance is rescaled per sequence
    so the medium exposure saturates about 1% of values.
    """
    exposure = exposure or ExposureConfig()
    sim = sim or SimulatorConfig()
    if len(seq) < 4:
        raise InvalidInputError("need at least 4 frames to build one bracketed sample")
    scale = exposure_scale(seq.frames, exposure)
    scaled = HDRFrameSequence(seq.frames * scale, seq.timestamps)
    stream = simulate_sequence(scaled, sim)
    ts = seq.timestamps
    seeds = np.random.SeedSequence(seed).spawn(len(seq))

    samples = []
    for k in range(1, len(seq) - 2, step):
        t0, t1, t2, t3 = ts[k - 1], ts[k], ts[k + 1], ts[k + 2]
        window = stream.select((stream.t >= t0) & (stream.t <= t3), t0, t3)
        parts = partition_stream(window, t0, t1, t2, t3)
        frame_seeds = seeds[k].spawn(3)
        ldrs = [
            synthesize_ldr(scaled.frames[k + i], exposure.exposure_times[i], exposure,
                           seed=frame_seeds[i], add_noise=add_noise, is_reference=(i == 1))
            for i in range(3)
        ]
        linears = [linearize(im, exposure.gamma) for im in ldrs]
        samples.append(BracketSample(ldrs, linears, parts, scaled.frames[k + 1].copy(),
                                     f"{name}_{k:04d}", (t0, t1, t2, t3), scale))
    return samples


# -- persistence -----------------------------------------------------------

def save_sample(sample: BracketSample, directory, exposure: ExposureConfig) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, im in enumerate(sample.ldrs, 1):
        io.write_png(d / f"ldr_{i}.png", im.pixels)
    io.write_pfm(d / "gt.pfm", sample.gt)
    io.write_events(d / "events.evt", sample.events.merged())
    meta = {
        "scene": sample.scene,
        "timestamps": list(sample.timestamps),
        "exposure_times": list(sample.exposure_times),
        "gain": exposure.gain,
        "gamma": exposure.gamma,
        "hdr_scale": sample.hdr_scale,
    }
    io.write_json(d / "meta.json", meta)
    return {
        "name": sample.scene,
        "ldr": [f"{d.name}/ldr_{i}.png" for i in (1, 2, 3)],
        "gt": f"{d.name}/gt.pfm",
        "events": f"{d.name}/events.evt",
        "meta": f"{d.name}/meta.json",
        "timestamps": list(sample.timestamps),
        "exposure_times": list(sample.exposure_times),
        "hdr_scale": sample.hdr_scale,
    }


def load_sample_files(ldr_paths, events_path, meta: dict, gt_path=None) -> BracketSample:
    """Rebuild a sample from its files; without ``gt_path`` the ground truth is zeros."""
    times = meta["exposure_times"]
    gamma = meta.get("gamma", 2.2)
    ldrs = [LDRImage(io.read_png(p), float(T), i == 1) for i, (p, T) in enumerate(zip(ldr_paths, times))]
    linears = [linearize(im, gamma) for im in ldrs]
    stream = io.read_events(events_path)
    t0, t1, t2, t3 = meta["timestamps"]
    parts = partition_stream(stream, t0, t1, t2, t3)
    gt = io.read_pfm(gt_path).astype(np.float64) if gt_path else np.zeros_like(ldrs[0].pixels)
    if gt.shape != ldrs[0].pixels.shape:
        raise InvalidInputError(f"ground truth {gt.shape} does not match LDR {ldrs[0].pixels.shape}")
    return BracketSample(ldrs, linears, parts, gt, meta.get("scene", ""), (t0, t1, t2, t3),
                         meta.get("hdr_scale", 1.0))


def save_dataset(samples, directory, exposure: ExposureConfig, extra: dict | None = None) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    entries = [save_sample(s, root / f"sample_{i:04d}", exposure) for i, s in enumerate(samples)]
    manifest = {"samples": entries, **(extra or {})}
    path = root / "manifest.json"
    io.write_json(path, manifest)
    return path


def load_dataset(manifest_path) -> list:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    root = manifest_path.parent
    manifest = io.read_json(manifest_path)
    samples = []
    for entry in manifest["samples"]:
        missing = [p for p in [*entry["ldr"], entry["gt"], entry["events"]] if not (root / p).exists()]
        if missing:
            raise FileNotFoundError(f"manifest references missing files: {missing}")
        ts = entry["timestamps"]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvalidInputError(f"{entry['name']}: timestamps must be ascending")
        meta = io.read_json(root / entry["meta"]) if "meta" in entry else {}
        meta = {**meta, "timestamps": ts, "exposure_times": entry["exposure_times"],
                "scene": entry["name"], "hdr_scale": entry.get("hdr_scale", 1.0)}
        samples.append(load_sample_files([root / p for p in entry["ldr"]], root / entry["events"],
                                         meta, root / entry["gt"]))
    return samples
