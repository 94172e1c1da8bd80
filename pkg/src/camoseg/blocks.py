"""Shared conv blocks: conv-relu-bn units, channel/spatial attention, RCAB, ASPP, resampling."""

import torch
import torch.nn as nn
import torch.nn.functional as F


class ConvReluBN(nn.Module):
    """3x3 conv -> ReLU -> BatchNorm (activation before normalization, by design)."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.relu = nn.ReLU(inplace=True)
        self.bn = nn.BatchNorm2d(out_ch)

    def forward(self, x):
        return self.bn(self.relu(self.conv(x)))


class ChannelAttention(nn.Module):
    """Channel gate from avg+max pooled descriptors through a shared bottleneck MLP."""

    def __init__(self, channels, reduction=16):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, channels, 1),
        )

    def gate(self, x):
        avg = self.mlp(F.adaptive_avg_pool2d(x, 1))
        mx = self.mlp(F.adaptive_max_pool2d(x, 1))
        return torch.sigmoid(avg + mx)

    def forward(self, x):
        return x * self.gate(x)


class SpatialAttention(nn.Module):
    """Spatial gate from channel-wise mean/max maps through a 7x7 conv."""

    def __init__(self, kernel_size=7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def gate(self, x):
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.max(dim=1, keepdim=True).values], dim=1)
        return torch.sigmoid(self.conv(pooled))

    def forward(self, x):
        return x * self.gate(x)


class RCAB(nn.Module):
    """Residual block whose conv body is rescaled by a channel gate before the skip add."""

    def __init__(self, channels, reduction=16):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
        )
        self.attention = ChannelAttention(channels, reduction)

    def forward(self, x):
        return x + self.attention(self.body(x))


class ASPP(nn.Module):
    """Parallel dilated 3x3 branches plus a global-context branch, fused by a 1x1 conv."""

    def __init__(self, in_ch, out_ch, dilations=(1, 2, 4)):
        super().__init__()
        self.branches = nn.ModuleList(
            nn.Sequential(nn.Conv2d(in_ch, out_ch, 3, padding=d, dilation=d),
                          nn.ReLU(inplace=True))
            for d in dilations
        )
        self.global_branch = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(in_ch, out_ch, 1),
            nn.ReLU(inplace=True),
        )
        self.fuse = nn.Sequential(
            nn.Conv2d(out_ch * (len(dilations) + 1), out_ch, 1),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        h, w = x.shape[-2:]
        feats = [b(x) for b in self.branches]
        feats.append(self.global_branch(x).expand(-1, -1, h, w))
        return self.fuse(torch.cat(feats, dim=1))


def sigmoid_map(x):
    return torch.sigmoid(x)


def reverse_map(x):
    """Flip a probability-like map: q -> 1 - q."""
    return 1.0 - x


def resample(x, scale=None, size=None):
    """Bilinear resize (align_corners=False). Rejects scales that land off the pixel grid."""
    if (scale is None) == (size is None):
        raise ValueError("pass exactly one of scale / size")
    if size is None:
        h, w = x.shape[-2:]
        th, tw = h * scale, w * scale
        if abs(th - round(th)) > 1e-9 or abs(tw - round(tw)) > 1e-9:
            raise ValueError(f"scale {scale} gives non-integral size {th}x{tw} from {h}x{w}")
        size = (int(round(th)), int(round(tw)))
    if x.shape[-2:] == tuple(size):
        return x
    return F.interpolate(x, size=tuple(size), mode="bilinear", align_corners=False)
