"""The multi-branch HDR network and its ablation variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

from evhdr.errors import InvalidInputError
from evhdr.network.modules import FusionNet, PCDAlign, PyramidEncoder, SpatialAttention, lrelu

PARAM_GROUPS = ("encoder_I", "attention", "encoder_L", "pcd_L",
                "encoder_E", "pcd_E", "distill_E", "fusion")


@dataclass(frozen=True)
class AblationConfig:
    use_event_alignment: bool = True
    use_event_subsampling: bool = True
    use_distillation: bool = True

    def __post_init__(self):
        if self.use_distillation and not self.use_event_subsampling:
            raise InvalidInputError("distillation requires event sub-sampling")

    @property
    def label(self) -> str:
        return ABLATION_LABELS.get(
            (self.use_event_alignment, self.use_event_subsampling, self.use_distillation),
            "custom")


ABLATIONS = {
    "Images-only": AblationConfig(False, False, False),
    "+ Event alignment": AblationConfig(True, False, False),
    "+ Event sub-sampling": AblationConfig(True, True, False),
    "+ Event-to-image distill.": AblationConfig(True, True, True),
}
ABLATION_LABELS = {
    (c.use_event_alignment, c.use_event_subsampling, c.use_distillation): name
    for name, c in ABLATIONS.items()
}


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 64
    groups: int = 8
    bins: int = 5
    stride: int = 1
    ablation: AblationConfig = field(default_factory=AblationConfig)

    @property
    def window_starts(self) -> tuple:
        return tuple(range(0, 2 * self.bins + 1, self.stride))

    @property
    def keyframe_windows(self) -> tuple:
        return tuple(i for i, s in enumerate(self.window_starts) if s in (0, self.bins, 2 * self.bins))

    @property
    def intermediate_windows(self) -> tuple:
        kf = self.keyframe_windows
        return tuple(i for i in range(len(self.window_starts)) if i not in kf)

    @property
    def n_branches(self) -> int:
        n = 6
        if self.ablation.use_event_alignment:
            n += 3
        if self.ablation.use_event_subsampling:
            n += len(self.intermediate_windows)
        return n

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> ModelConfig:
        d = dict(d)
        d["ablation"] = AblationConfig(**d.get("ablation", {}))
        return cls(**d)


@dataclass
class NetworkInput:
    """Batched tensors; frame axis order is (short, medium/reference, long)."""

    ldr: torch.Tensor  # (N, 3, 3, H, W) in [0, 1]
    linear: torch.Tensor  # (N, 3, 3, H, W)
    events: torch.Tensor  # (N, 3, B, H, W) normalised keyframe voxel grids
    windows: torch.Tensor  # (N, n_windows, B, H, W) normalised sliding windows

    def to(self, dtype=None, device=None) -> NetworkInput:
        return NetworkInput(*(t.to(dtype=dtype, device=device)
                              for t in (self.ldr, self.linear, self.events, self.windows)))

    @property
    def batch(self) -> int:
        return self.ldr.shape[0]


class LDRFeatures(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(3, channels, 3, 1, 1)

    def forward(self, x):
        return lrelu(self.conv(x))


def _frames(x, idx):
    """Flatten a selection of the frame axis into the batch axis."""
    sel = x[:, list(idx)]
    return sel.reshape(-1, *sel.shape[2:])


def _split(t, n_frames):
    return t.reshape(-1, n_frames, *t.shape[1:])


def _pyr_frames(pyr, n_frames):
    return [_split(level, n_frames) for level in pyr]


def _pyr_select(pyr, idx):
    return [level[:, list(idx)].reshape(-1, *level.shape[2:]) for level in pyr]


def _pyr_repeat(pyr, idx, times):
    out = []
    for level in pyr:
        sel = level[:, idx:idx + 1].expand(-1, times, *level.shape[2:])
        out.append(sel.reshape(-1, *level.shape[2:]))
    return out


class HDRNet(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config = config or ModelConfig()
        c, ab = config.channels, config.ablation
        if c % config.groups:
            raise InvalidInputError("channels must be divisible by offset groups")
        if ab.use_distillation and config.bins % config.stride:
            raise InvalidInputError("distillation needs a window aligned with the reference partition")
        self.encoder_I = LDRFeatures(c)
        self.attention = SpatialAttention(c)
        self.encoder_L = PyramidEncoder(3, c)
        self.pcd_L = PCDAlign(c, config.groups)
        if ab.use_event_alignment or ab.use_event_subsampling:
            self.encoder_E = PyramidEncoder(config.bins, c)
            self.pcd_E = PCDAlign(c, config.groups)
        if ab.use_distillation:
            self.distill_E = nn.ModuleDict({
                "encoder": PyramidEncoder(config.bins, c),
                "align": PCDAlign(c, config.groups),
            })
        self.fusion = FusionNet(config.n_branches, c)

    def param_groups(self) -> dict:
        groups = {name: {} for name in PARAM_GROUPS}
        for name, p in self.named_parameters():
            head, _, rest = name.partition(".")
            groups[head][rest] = p
        return groups

    def distill(self, window_grids):
        """Pseudo-image feature pyramid of (N, B, H, W) event windows."""
        if window_grids.shape[1] != self.config.bins:
            raise InvalidInputError(
                f"expected {self.config.bins} bins, got {window_grids.shape[1]}")
        return self.distill_E["encoder"](window_grids)

    def _check(self, inp: NetworkInput):
        b = self.config.bins
        size = inp.ldr.shape[-2:]
        for name in ("ldr", "linear", "events", "windows"):
            t = getattr(inp, name)
            if t.shape[-2:] != size:
                raise InvalidInputError(f"{name} has spatial size {tuple(t.shape[-2:])}, expected {tuple(size)}")
        if inp.ldr.shape[1:3] != (3, 3) or inp.linear.shape[1:3] != (3, 3):
            raise InvalidInputError("expected three RGB frames")
        if self.config.ablation.use_event_alignment and inp.events.shape[1:3] != (3, b):
            raise InvalidInputError(f"expected 3 keyframe grids of {b} bins")
        if self.config.ablation.use_event_subsampling and \
                inp.windows.shape[1:3] != (len(self.config.window_starts), b):
            raise InvalidInputError(f"expected {len(self.config.window_starts)} windows of {b} bins")

    def forward(self, inp: NetworkInput):
        """Returns ``(hdr, distill_pairs)``.

        ``hdr`` is (N, 3, H, W).  ``distill_pairs`` is ``None`` unless
        distillation is enabled, in which case it is ``(event_pyramids,
        image_pyramids)``: three pyramids each, one per keyframe.
        """
        self._check(inp)
        cfg = self.config
        ab = cfg.ablation
        n = inp.batch

        # 1) LDR attention
        f_I = _split(self.encoder_I(_frames(inp.ldr, range(3))), 3)
        f_I1, f_I2, f_I3 = f_I[:, 0], f_I[:, 1], f_I[:, 2]
        att = self.attention(torch.cat([f_I1, f_I3]), torch.cat([f_I2, f_I2]))
        att1, att3 = att[:n], att[n:]

        # 2) linear-image alignment
        pyr_L = _pyr_frames(self.encoder_L(_frames(inp.linear, range(3))), 3)
        al_L = self.pcd_L(_pyr_select(pyr_L, (0, 2)), _pyr_repeat(pyr_L, 1, 2))[0]
        al_L = _split(al_L, 2)
        f_L_ref = pyr_L[0][:, 1]
        branches = [att1, f_I2, att3, al_L[:, 0], f_L_ref, al_L[:, 1]]

        # 3) keyframe event alignment
        pyr_E = None
        if ab.use_event_alignment or ab.use_event_subsampling:
            pyr_E = _pyr_frames(self.encoder_E(_frames(inp.events, range(3))), 3)
        if ab.use_event_alignment:
            al_E = _split(self.pcd_E(_pyr_select(pyr_E, (0, 2)), _pyr_repeat(pyr_E, 1, 2))[0], 2)
            branches += [al_E[:, 0], pyr_E[0][:, 1], al_E[:, 1]]

        # 4) intermediate windows, with or without distillation
        distill_pairs = None
        if ab.use_event_subsampling:
            inter = cfg.intermediate_windows
            k = len(inter)
            if ab.use_distillation:
                n_win = len(cfg.window_starts)
                pyr_D = _pyr_frames(self.distill(_frames(inp.windows, range(n_win))), n_win)
                ref_idx = cfg.window_starts.index(cfg.bins)
                aligned = self.distill_E["align"](_pyr_select(pyr_D, inter),
                                                  _pyr_repeat(pyr_D, ref_idx, k))[0]
                event_pyrs = [[lvl[:, i] for lvl in pyr_D] for i in cfg.keyframe_windows]
                image_pyrs = [[lvl[:, cfg.window_starts[i] // cfg.bins] for lvl in pyr_L]
                              for i in cfg.keyframe_windows]
                distill_pairs = (event_pyrs, image_pyrs)
            else:
                pyr_W = self.encoder_E(_frames(inp.windows, inter))
                aligned = self.pcd_E(pyr_W, _pyr_repeat(pyr_E, 1, k))[0]
            aligned = _split(aligned, k)
            branches += [aligned[:, j] for j in range(k)]

        return self.fusion(branches, f_L_ref), distill_pairs


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
