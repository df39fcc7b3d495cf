"""Building blocks: pyramid encoders, spatial attention, PCD alignment, DRDB fusion."""

import torch
import torch.nn as nn
import torch.nn.functional as F

from evhdr.errors import InvalidInputError
from evhdr.network.deform import DeformConv2d


def lrelu(x):
    return F.leaky_relu(x, 0.1)


class ResidualBlock(nn.Module):
    """conv-ReLU-conv with an identity skip."""

    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class PyramidEncoder(nn.Module):
    """Three-level feature pyramid at full, half and quarter resolution."""

    def __init__(self, in_channels, channels=64):
        super().__init__()
        self.in_channels = in_channels
        self.head = nn.Conv2d(in_channels, channels, 1)
        self.res = ResidualBlock(channels)
        self.conv_l1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.down_l1 = nn.Conv2d(channels, channels, 3, 2, 1)
        self.conv_l2 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.down_l2 = nn.Conv2d(channels, channels, 3, 2, 1)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise InvalidInputError(f"encoder expects {self.in_channels} channels, got {x.shape[1]}")
        if x.shape[-2] % 4 or x.shape[-1] % 4:
            raise InvalidInputError(f"spatial size {tuple(x.shape[-2:])} is not a multiple of 4")
        f0 = self.res(lrelu(self.head(x)))
        f1 = lrelu(self.down_l1(lrelu(self.conv_l1(f0))))
        f2 = lrelu(self.down_l2(lrelu(self.conv_l2(f1))))
        return [f0, f1, f2]


class SpatialAttention(nn.Module):
    def __init__(self, channels=64):
        super().__init__()
        self.conv1 = nn.Conv2d(2 * channels, 2 * channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(2 * channels, channels, 3, 1, 1)

    def attention_map(self, f, f_ref):
        if f.shape != f_ref.shape:
            raise InvalidInputError(f"shape mismatch: {tuple(f.shape)} vs {tuple(f_ref.shape)}")
        return torch.sigmoid(self.conv2(lrelu(self.conv1(torch.cat([f, f_ref], 1)))))

    def forward(self, f, f_ref):
        return f * self.attention_map(f, f_ref)


def upsample2(x):
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


class PCDAlign(nn.Module):
    """Coarse-to-fine deformable alignment of a feature pyramid to a reference pyramid.

    At each level offsets are predicted from the concatenated features (and the
    upsampled, doubled offsets of the coarser level), then used to deform the
    input features.  The final offset layer is zero-initialised, so an
    untrained module performs plain convolutions.
    """

    levels = 3

    def __init__(self, channels=64, groups=8):
        super().__init__()
        self.groups = groups
        n_off = 2 * groups * 9
        self.offset_conv1 = nn.ModuleList()
        self.offset_conv2 = nn.ModuleList()
        self.offset_out = nn.ModuleList()
        self.dcn = nn.ModuleList()
        self.feat_fuse = nn.ModuleList()
        for level in range(self.levels):
            coarsest = level == self.levels - 1
            extra = 0 if coarsest else n_off
            self.offset_conv1.append(nn.Conv2d(2 * channels + extra, channels, 3, 1, 1))
            self.offset_conv2.append(nn.Conv2d(channels, channels, 3, 1, 1))
            self.offset_out.append(nn.Conv2d(channels, n_off, 3, 1, 1))
            self.dcn.append(DeformConv2d(channels, channels, 3, groups=groups))
            self.feat_fuse.append(None if coarsest else nn.Conv2d(2 * channels, channels, 3, 1, 1))
        for conv in self.offset_out:
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)

    def forward(self, pyr, pyr_ref):
        if len(pyr) != self.levels or len(pyr_ref) != self.levels:
            raise InvalidInputError("PCD alignment expects 3-level pyramids")
        for a, b in zip(pyr, pyr_ref):
            if a.shape != b.shape:
                raise InvalidInputError(f"pyramid shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
        aligned = [None] * self.levels
        up_offsets = up_feat = None
        for level in reversed(range(self.levels)):
            x = torch.cat([pyr[level], pyr_ref[level]], 1)
            if up_offsets is not None:
                x = torch.cat([x, up_offsets], 1)
            h = lrelu(self.offset_conv2[level](lrelu(self.offset_conv1[level](x))))
            offsets = self.offset_out[level](h)
            if up_offsets is not None:
                offsets = offsets + up_offsets
            feat = self.dcn[level](pyr[level], offsets)
            if up_feat is not None:
                feat = self.feat_fuse[level](torch.cat([feat, up_feat], 1))
            if level > 0:
                feat = lrelu(feat)
                up_offsets = upsample2(offsets) * 2
                up_feat = upsample2(feat)
            aligned[level] = feat
        return aligned


class DRDB(nn.Module):
    """Dilated residual block: 3x3 dilated conv (d=2), 1x1 conv, local skip."""

    def __init__(self, channels=64):
        super().__init__()
        self.dilated = nn.Conv2d(channels, channels, 3, 1, padding=2, dilation=2)
        self.squeeze = nn.Conv2d(2 * channels, channels, 1)

    def forward(self, x):
        dense = torch.cat([x, F.relu(self.dilated(x))], 1)
        return x + self.squeeze(dense)


class FusionNet(nn.Module):
    """Merges the branch features and reconstructs a nonnegative linear HDR image."""

    def __init__(self, n_branches, channels=64, n_blocks=3):
        super().__init__()
        self.n_branches = n_branches
        self.fuse = nn.Conv2d(n_branches * channels, channels, 3, 1, 1)
        self.blocks = nn.ModuleList(DRDB(channels) for _ in range(n_blocks))
        self.gff = nn.Conv2d(n_blocks * channels, channels, 1)
        self.tail1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.tail2 = nn.Conv2d(channels, 3, 3, 1, 1)

    def forward(self, branch_features, f_ref):
        if len(branch_features) != self.n_branches:
            raise InvalidInputError(
                f"fusion expects {self.n_branches} branches, got {len(branch_features)}")
        size = f_ref.shape[-2:]
        if any(f.shape[-2:] != size for f in branch_features):
            raise InvalidInputError("branch features differ in spatial size")
        x = lrelu(self.fuse(torch.cat(branch_features, 1)))
        outs = []
        for block in self.blocks:
            x = block(x)
            outs.append(x)
        x = self.gff(torch.cat(outs, 1)) + f_ref
        return F.relu(self.tail2(lrelu(self.tail1(x))))
