"""Cropping, augmentation, the optimisation loop, evaluation and the ablation runner."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from evhdr import io
from evhdr.data import BracketArrays
from evhdr.errors import InvalidInputError, TrainingError
from evhdr.losses import MetricReport, distill_loss, hdr_loss, total_loss
from evhdr.network.model import ABLATIONS, AblationConfig, HDRNet, ModelConfig, NetworkInput, count_parameters

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    crop: int = 64
    batch: int = 2
    lr: float = 1e-4
    epochs: int = 2000
    steps: int | None = 500  # overrides ``epochs`` when set
    lr_decay_every: int = 500  # epochs
    lr_decay_factor: float = 0.1
    seed: int = 0
    augment: bool = True
    checkpoint_every: int = 100  # epochs
    keep_checkpoints: int = 3
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self):
        if self.crop % 4:
            raise InvalidInputError("crop must be divisible by 4")
        if self.batch < 1:
            raise InvalidInputError("batch must be >= 1")
        if isinstance(self.ablation, dict):
            self.ablation = AblationConfig(**self.ablation)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_every)

    def to_dict(self) -> dict:
        return asdict(self)


DESK = TrainConfig()
PAPER = TrainConfig(crop=256, batch=16, lr=1e-4, epochs=2000, steps=None)


# -- geometric sampling -----------------------------------------------------

def crop_offsets(size, crop: int, rng) -> tuple:
    h, w = size
    if crop > h or crop > w:
        raise InvalidInputError(f"crop {crop} larger than sample {h}x{w}")
    return int(rng.integers(0, h - crop + 1)), int(rng.integers(0, w - crop + 1))


def sample_crop(sample: BracketArrays, crop: int, seed=None) -> BracketArrays:
    """Cut the same ``crop`` x ``crop`` window out of every image and voxel grid."""
    y, x = crop_offsets(sample.size, crop, np.random.default_rng(seed))
    return sample.spatial(lambda a: a[..., y:y + crop, x:x + crop])


def apply_transform(a, hflip: bool, vflip: bool, rot: int):
    if hflip:
        a = a[..., ::-1]
    if vflip:
        a = a[..., ::-1, :]
    if rot:
        a = np.rot90(a, rot, axes=(-2, -1))
    return np.ascontiguousarray(a)


def draw_transform(rng, allow_rotation=True) -> tuple:
    hflip, vflip = bool(rng.integers(2)), bool(rng.integers(2))
    rot = int(rng.integers(4)) if allow_rotation else 0
    return hflip, vflip, rot


def augment(sample: BracketArrays, seed=None, transform=None) -> BracketArrays:
    """Random flips and 90-degree rotations, identical for every array in the sample."""
    h, w = sample.size
    if transform is None:
        transform = draw_transform(np.random.default_rng(seed), allow_rotation=True)
    if transform[2] % 2 and h != w:
        raise InvalidInputError("90-degree rotations need square samples")
    return sample.spatial(lambda a: apply_transform(a, *transform))


def collate(samples) -> tuple[NetworkInput, torch.Tensor]:
    stack = lambda name: torch.from_numpy(np.stack([getattr(s, name) for s in samples]))
    return NetworkInput(stack("ldr"), stack("linear"), stack("events"), stack("windows")), stack("gt")


# -- model/checkpoint helpers ----------------------------------------------

def build_model(model_cfg: ModelConfig, seed: int = 0) -> HDRNet:
    torch.manual_seed(seed)
    return HDRNet(model_cfg)


def save_model(path, model: HDRNet, step: int = 0, epoch: int = 0):
    state = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    io.save_checkpoint(path, state, {"step": step, "epoch": epoch,
                                     "model_config": model.config.to_dict()})


def load_model(path, expected_ablation: AblationConfig | None = None) -> HDRNet:
    state, manifest = io.load_checkpoint(path)
    cfg = ModelConfig.from_dict(manifest["model_config"])
    if expected_ablation is not None and cfg.ablation != expected_ablation:
        raise InvalidInputError(
            f"checkpoint was trained with {cfg.ablation}, expected {expected_ablation}")
    model = HDRNet(cfg)
    model.load_state_dict({k: torch.from_numpy(v) for k, v in state.items()})
    return model


# -- training ------------------------------------------------------------------

@dataclass
class TrainResult:
    model: HDRNet
    curve: list  # dicts: step, epoch, l_hdr, l_distill, l_total, lr
    data_order: list
    checkpoint: Path | None = None


def compute_losses(model: HDRNet, inp: NetworkInput, gt: torch.Tensor):
    pred, pairs = model(inp)
    l_hdr = hdr_loss(pred, gt)
    l_dist = distill_loss(*pairs) if pairs is not None else None
    return pred, l_hdr, l_dist, total_loss(l_hdr, l_dist)


def _diagnose(model: HDRNet, l_hdr, l_dist) -> str:
    parts = []
    if not math.isfinite(l_hdr.item()):
        parts.append("HDR reconstruction branch (fusion output)")
    if l_dist is not None and not math.isfinite(l_dist.item()):
        parts.append("event-to-image distillation branch (distill_E)")
    bad = [g for g, params in model.param_groups().items()
           if any(not torch.isfinite(p).all() for p in params.values())]
    if bad:
        parts.append("non-finite parameters in " + ", ".join(bad))
    return "; ".join(parts) or "unknown branch"


def write_curve_csv(path, curve):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["step", "l_hdr", "l_distill", "l_total", "lr"],
                                extrasaction="ignore")
        writer.writeheader()
        writer.writerows(curve)


def train(dataset, cfg: TrainConfig | None = None, model_cfg: ModelConfig | None = None,
          out_dir=None, model: HDRNet | None = None, progress=None) -> TrainResult:
    """Adam on the tonemapped L1 + distillation loss with a stepped learning rate.

    ``dataset`` is a list of :class:`BracketArrays`.  Data order, crops and
    augmentations come from a generator seeded by ``cfg.seed`` that is
    independent of the model, so different ablations see identical batches.
    """
    cfg = cfg or TrainConfig()
    if not dataset:
        raise InvalidInputError("cannot train on an empty dataset")
    if model is None:
        model_cfg = model_cfg or ModelConfig(ablation=cfg.ablation)
        model = build_model(model_cfg, cfg.seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = math.ceil(len(dataset) / cfg.batch)
    total_steps = cfg.steps if cfg.steps is not None else cfg.epochs * steps_per_epoch
    curve, order, saved = [], [], []

    model.train()
    step = epoch = 0
    while step < total_steps:
        lr = cfg.lr_at(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        perm = rng.permutation(len(dataset))
        for start in range(0, len(perm), cfg.batch):
            if step >= total_steps:
                break
            idx = perm[start:start + cfg.batch]
            batch = []
            for i in idx:
                s = sample_crop(dataset[i], cfg.crop, rng.integers(2**32))
                if cfg.augment:
                    s = augment(s, transform=draw_transform(rng, s.size[0] == s.size[1]))
                batch.append(s)
            inp, gt = collate(batch)
            order.append([int(i) for i in idx])

            _, l_hdr, l_dist, l_total = compute_losses(model, inp, gt)
            if not torch.isfinite(l_total):
                raise TrainingError(f"non-finite loss at step {step}: {_diagnose(model, l_hdr, l_dist)}")
            opt.zero_grad()
            l_total.backward()
            opt.step()

            row = {"step": step, "epoch": epoch, "l_hdr": l_hdr.item(),
                   "l_distill": l_dist.item() if l_dist is not None else 0.0,
                   "l_total": l_total.item(), "lr": lr}
            curve.append(row)
            if progress is not None:
                progress(row)
            step += 1
        epoch += 1
        if out_dir is not None and epoch % cfg.checkpoint_every == 0:
            path = out_dir / f"checkpoint_e{epoch:05d}.ckpt"
            save_model(path, model, step, epoch)
            saved.append(path)
            while len(saved) > cfg.keep_checkpoints:
                saved.pop(0).unlink(missing_ok=True)

    final = None
    if out_dir is not None:
        final = out_dir / "model.ckpt"
        save_model(final, model, step, epoch)
        write_curve_csv(out_dir / "loss.csv", curve)
    model.eval()
    return TrainResult(model, curve, order, final)


# -- evaluation ----------------------------------------------------------------

def pad_to_multiple(sample: BracketArrays, multiple: int = 4) -> tuple[BracketArrays, tuple]:
    h, w = sample.size
    ph, pw = (-h) % multiple, (-w) % multiple
    if not (ph or pw):
        return sample, (h, w)

    def pad(a):
        t = torch.from_numpy(np.ascontiguousarray(a))
        lead = t.shape[:-2]
        t = F.pad(t.reshape(1, -1, h, w), (0, pw, 0, ph), mode="reflect")
        return t.reshape(*lead, h + ph, w + pw).numpy()

    return sample.spatial(pad), (h, w)


@torch.no_grad()
def predict(model: HDRNet, sample: BracketArrays) -> np.ndarray:
    """Full-resolution HDR prediction, (H, W, 3)."""
    model.eval()
    padded, (h, w) = pad_to_multiple(sample)
    inp, _ = collate([padded])
    pred, _ = model(inp)
    return pred[0, :, :h, :w].permute(1, 2, 0).numpy()


def evaluate(model, dataset, expected_ablation: AblationConfig | None = None) -> MetricReport:
    """Per-sample and mean PSNR-L / PSNR-mu at full resolution (no crop, no augmentation)."""
    if not isinstance(model, HDRNet):
        model = load_model(model, expected_ablation)
    elif expected_ablation is not None and model.config.ablation != expected_ablation:
        raise InvalidInputError("model ablation does not match the requested configuration")
    report = MetricReport()
    for i, sample in enumerate(dataset):
        pred = predict(model, sample)
        report.add(sample.name or f"sample_{i:04d}", pred, sample.gt.transpose(1, 2, 0))
    return report


# -- ablation --------------------------------------------------------------

@dataclass
class AblationRow:
    label: str
    ablation: AblationConfig
    n_params: int
    report: MetricReport
    curve: list
    data_order: list


def run_ablation(dataset, base_cfg: TrainConfig | None = None, model_cfg: ModelConfig | None = None,
                 out_dir=None, eval_dataset=None) -> list:
    """Train and evaluate the four ablation configurations under one seed and budget."""
    base_cfg = base_cfg or TrainConfig()
    model_cfg = model_cfg or ModelConfig()
    eval_dataset = dataset if eval_dataset is None else eval_dataset
    out_dir = Path(out_dir) if out_dir is not None else None
    rows = []
    for label, ablation in ABLATIONS.items():
        cfg = replace(base_cfg, ablation=ablation)
        mcfg = replace(model_cfg, ablation=ablation)
        run_dir = out_dir / _slug(label) if out_dir is not None else None
        log.info("ablation %s", label)
        result = train(dataset, cfg, mcfg, out_dir=run_dir)
        report = evaluate(result.model, eval_dataset)
        rows.append(AblationRow(label, ablation, count_parameters(result.model), report,
                                result.curve, result.data_order))
    if out_dir is not None:
        write_ablation_table(out_dir / "ablation.csv", rows)
    return rows


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in label.lower()).strip("_")


def write_ablation_table(path, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "params", "psnr_l", "psnr_mu", "final_loss"])
        for r in rows:
            writer.writerow([r.label, r.n_params, f"{r.report.psnr_l:.4f}", f"{r.report.psnr_mu:.4f}",
                             f"{r.curve[-1]['l_total']:.6f}" if r.curve else ""])
