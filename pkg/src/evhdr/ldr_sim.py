"""Bracketed LDR synthesis: pixel measurement model, sensor noise, linearisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from evhdr.errors import InvalidInputError


@dataclass
class ExposureConfig:
    """Sensor and exposure parameters for LDR synthesis.

    Exposure times are relative to the reference (medium) exposure; the HDR
    scene is rescaled per sequence so the absolute unit never matters.
    ``full_well`` converts the photon term of the noise model from
    saturation-normalised units to photo-electron counts.
    """

    exposure_times: tuple = (0.25, 1.0, 4.0)
    gain: float = 1.0
    offset: float = 0.0
    saturation: float = 1.0
    read_noise: float = 0.01
    adc_noise: float = 0.005
    bit_depth: int = 8
    gamma: float = 2.2
    full_well: float = 1000.0

    def __post_init__(self):
        self.exposure_times = tuple(float(t) for t in self.exposure_times)
        if len(self.exposure_times) != 3:
            raise InvalidInputError("exactly three exposure times are required")
        t1, t2, t3 = self.exposure_times
        if not (0 < t1 < t2 < t3):
            raise InvalidInputError("exposure times must be positive and ascending")
        if self.gain <= 0 or self.saturation <= 0 or self.gamma <= 0:
            raise InvalidInputError("gain, saturation and gamma must be positive")
        if self.offset < 0 or self.read_noise < 0 or self.adc_noise < 0:
            raise InvalidInputError("offset and noise levels must be nonnegative")
        if int(self.bit_depth) != self.bit_depth or self.bit_depth < 1:
            raise InvalidInputError("bit_depth must be a positive integer")
        if self.full_well <= 0:
            raise InvalidInputError("full_well must be positive")


@dataclass
class LDRImage:
    pixels: np.ndarray  # (H, W, 3) in [0, 1]
    exposure_time: float
    is_reference: bool = False


@dataclass
class LinearImage:
    pixels: np.ndarray  # (H, W, 3) >= 0
    exposure_time: float


def noise_variance(phi, gain, read_noise, adc_noise):
    """Variance of the zero-mean sensor noise: photon + read + ADC terms."""
    if gain <= 0:
        raise InvalidInputError("gain must be positive")
    phi = np.asarray(phi, dtype=np.float64)
    return phi / gain**2 + read_noise**2 / gain**2 + adc_noise**2


def quantize(x, bit_depth: int):
    levels = 2**int(bit_depth) - 1
    return np.round(x * levels) / levels


def synthesize_ldr(hdr, exposure_time: float, cfg: ExposureConfig | None = None,
                   seed=None, add_noise: bool = True, is_reference: bool = False) -> LDRImage:
    """Simulate one LDR capture of an HDR scene.

    ``hdr`` stands in for the scene brightness.  The sensor value is
    ``min(hdr * T / g + I0 + n, I_max)``, clipped at zero, normalised by
    ``I_max``, gamma-encoded and quantised.
    """
    cfg = cfg or ExposureConfig()
    if exposure_time <= 0:
        raise InvalidInputError("exposure time must be positive")
    hdr = np.asarray(hdr, dtype=np.float64)
    if np.any(hdr < 0):
        raise InvalidInputError("HDR radiance must be nonnegative")

    signal = hdr * exposure_time / cfg.gain + cfg.offset
    if add_noise:
        rng = np.random.default_rng(seed)
        # photon term counted in electrons, converted back to signal units
        var = noise_variance(hdr * exposure_time / cfg.full_well, cfg.gain,
                             cfg.read_noise, cfg.adc_noise)
        signal = signal + rng.standard_normal(hdr.shape) * np.sqrt(var)
    measured = np.clip(signal, 0.0, cfg.saturation) / cfg.saturation
    encoded = quantize(measured ** (1.0 / cfg.gamma), cfg.bit_depth)
    return LDRImage(encoded, float(exposure_time), is_reference)


def linearize(image: LDRImage, gamma: float = 2.2) -> LinearImage:
    pixels = np.asarray(image.pixels, dtype=np.float64)
    return LinearImage(pixels**gamma / image.exposure_time, image.exposure_time)


def bracket(hdr, cfg: ExposureConfig | None = None, seed=None, add_noise: bool = True):
    """Three LDR exposures of the same HDR frame; index 1 is the reference."""
    cfg = cfg or ExposureConfig()
    seeds = np.random.SeedSequence(seed).spawn(3)
    return [
        synthesize_ldr(hdr, T, cfg, seed=s, add_noise=add_noise, is_reference=(i == 1))
        for i, (T, s) in enumerate(zip(cfg.exposure_times, seeds))
    ]


def exposure_scale(hdr_frames, cfg: ExposureConfig | None = None, saturated_fraction: float = 0.01) -> float:
    """Radiance scale at which the medium exposure saturates ``saturated_fraction`` of values."""
    cfg = cfg or ExposureConfig()
    q = float(np.quantile(np.asarray(hdr_frames), 1.0 - saturated_fraction))
    if q <= 0:
        return 1.0
    return cfg.saturation * cfg.gain / (cfg.exposure_times[1] * q)
