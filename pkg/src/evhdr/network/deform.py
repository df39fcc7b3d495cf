"""Deformable convolution (no modulation masks) built on bilinear grid sampling."""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from evhdr.errors import InvalidInputError


def deform_conv2d(x, offsets, weight, bias=None, dilation=1, groups=1):
    """Stride-1, 'same'-padded deformable convolution.

    ``offsets`` has shape (N, 2*G*K, H, W) with K = kh*kw taps and G offset
    groups; for group g and tap k the channels ``2*(g*K + k)`` and
    ``2*(g*K + k) + 1`` hold the (dy, dx) displacement in pixels.  Samples
    are bilinear with zeros outside the image, so zero offsets reduce to an
    ordinary zero-padded convolution.
    """
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    K = kh * kw
    if c_in != c:
        raise InvalidInputError(f"weight expects {c_in} channels, input has {c}")
    if c % groups:
        raise InvalidInputError("channels must be divisible by the offset groups")
    if offsets.shape != (n, 2 * groups * K, h, w):
        raise InvalidInputError(
            f"offsets must be {(n, 2 * groups * K, h, w)}, got {tuple(offsets.shape)}")

    ky, kx = torch.meshgrid(
        torch.arange(kh, dtype=x.dtype, device=x.device),
        torch.arange(kw, dtype=x.dtype, device=x.device), indexing="ij")
    ky = (ky.reshape(K) - (kh - 1) / 2) * dilation
    kx = (kx.reshape(K) - (kw - 1) / 2) * dilation
    gy, gx = torch.meshgrid(
        torch.arange(h, dtype=x.dtype, device=x.device),
        torch.arange(w, dtype=x.dtype, device=x.device), indexing="ij")

    off = offsets.reshape(n * groups, K, 2, h, w)
    py = gy + ky.view(1, K, 1, 1) + off[:, :, 0]
    px = gx + kx.view(1, K, 1, 1) + off[:, :, 1]
    # Pixel centres -> normalised coordinates for align_corners=False.  On a
    # power-of-two canvas the round trip is exact, so integer positions hit
    # pixels exactly; the zero margin behaves like the zero padding outside.
    H, W = 1 << (h - 1).bit_length(), 1 << (w - 1).bit_length()
    grid = torch.stack(((2 * px + 1) / W - 1, (2 * py + 1) / H - 1), dim=-1)
    grid = grid.reshape(n * groups, K * h, w, 2)
    canvas = F.pad(x, (0, W - w, 0, H - h)) if (H, W) != (h, w) else x

    sampled = F.grid_sample(canvas.reshape(n * groups, c // groups, H, W), grid,
                            mode="bilinear", padding_mode="zeros", align_corners=False)
    cols = sampled.reshape(n, c, K, h * w)
    out = torch.einsum("nckp,ock->nop", cols, weight.reshape(c_out, c, K))
    out = out.reshape(n, c_out, h, w)
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


class DeformConv2d(nn.Module):
    def __init__(self, in_channels, out_channels, kernel_size=3, groups=8, dilation=1):
        super().__init__()
        self.groups = groups
        self.dilation = dilation
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))

    @property
    def offset_channels(self):
        return 2 * self.groups * self.weight.shape[2] * self.weight.shape[3]

    def forward(self, x, offsets):
        return deform_conv2d(x, offsets, self.weight, self.bias, self.dilation, self.groups)
