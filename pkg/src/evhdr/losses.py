"""mu-law tonemapping, reconstruction / distillation losses and PSNR metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from evhdr.errors import InvalidInputError

MU = 5000.0
PSNR_CAP = 99.0


def _is_tensor(x):
    return isinstance(x, torch.Tensor)


def tonemap(h, mu: float = MU):
    """log(1 + mu*H) / log(1 + mu); works on tensors (differentiable) and arrays."""
    if _is_tensor(h):
        if bool((h < 0).any()):
            raise InvalidInputError("tonemap input must be nonnegative")
        return torch.log1p(mu * h) / math.log1p(mu)
    h = np.asarray(h, dtype=np.float64)
    if np.any(h < 0):
        raise InvalidInputError("tonemap input must be nonnegative")
    return np.log1p(mu * h) / np.log1p(mu)


def inverse_tonemap(t, mu: float = MU):
    if _is_tensor(t):
        return torch.expm1(t * math.log1p(mu)) / mu
    return np.expm1(np.asarray(t, dtype=np.float64) * np.log1p(mu)) / mu


def hdr_loss(pred, target, mu: float = MU):
    """Mean absolute difference between the tonemapped images."""
    if pred.shape != target.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = tonemap(pred, mu) - tonemap(target, mu)
    return diff.abs().mean() if _is_tensor(diff) else float(np.abs(diff).mean())


def distill_loss(event_pyramids, image_pyramids):
    """Multi-scale feature distillation loss.

    Sums, over timestamps and pyramid levels, the mean squared difference
    between event-derived features and the image features.  The image
    features are detached, so no gradient reaches the image branch.
    """
    if len(event_pyramids) != len(image_pyramids):
        raise InvalidInputError("event and image pyramids differ in count")
    total = 0.0
    for pyr_e, pyr_l in zip(event_pyramids, image_pyramids):
        if len(pyr_e) != len(pyr_l):
            raise InvalidInputError("pyramids differ in depth")
        for f_e, f_l in zip(pyr_e, pyr_l):
            if f_e.shape != f_l.shape:
                raise InvalidInputError(f"feature shape mismatch: {tuple(f_e.shape)} vs {tuple(f_l.shape)}")
            total = total + ((f_e - f_l.detach()) ** 2).mean()
    return total


def total_loss(l_hdr, l_distill=None):
    return l_hdr if l_distill is None else l_hdr + l_distill


@dataclass
class LossReport:
    l_hdr: float
    l_distill: float
    l_total: float


def psnr(pred, gt, domain: str = "linear", mu: float = MU) -> float:
    """PSNR in dB, with both images scaled by the max of ``gt`` (peak 1)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if domain not in ("linear", "mu"):
        raise InvalidInputError(f"unknown PSNR domain {domain!r}")
    peak = gt.max()
    scale = 1.0 / peak if peak > 0 else 1.0
    pred, gt = pred * scale, gt * scale
    if domain == "mu":
        pred, gt = tonemap(np.maximum(pred, 0.0), mu), tonemap(gt, mu)
    return psnr_from_mse(float(np.mean((pred - gt) ** 2)))


def psnr_from_mse(mse: float, peak: float = 1.0) -> float:
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak**2 / mse))


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)  # dicts: sample, psnr_l, psnr_mu

    def add(self, sample: str, pred, gt):
        self.rows.append({
            "sample": sample,
            "psnr_l": psnr(pred, gt, "linear"),
            "psnr_mu": psnr(pred, gt, "mu"),
        })

    @property
    def psnr_l(self) -> float:
        return float(np.mean([r["psnr_l"] for r in self.rows])) if self.rows else float("nan")

    @property
    def psnr_mu(self) -> float:
        return float(np.mean([r["psnr_mu"] for r in self.rows])) if self.rows else float("nan")

    def to_dict(self) -> dict:
        return {"psnr_l": self.psnr_l, "psnr_mu": self.psnr_mu, "samples": list(self.rows)}

    @classmethod
    def from_dict(cls, d) -> MetricReport:
        return cls(rows=list(d["samples"]))
