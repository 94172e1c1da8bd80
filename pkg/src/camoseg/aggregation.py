"""Feature aggregation: per-level multi-kernel fusion and top-down context propagation."""

from typing import NamedTuple

import torch
import torch.nn as nn

from .blocks import ChannelAttention, ConvReluBN, SpatialAttention, resample


class ScaleFusionOut(NamedTuple):
    f3: torch.Tensor
    f5: torch.Tensor
    f35: torch.Tensor
    fused: torch.Tensor


class ScaleFusion(nn.Module):
    """Fuses 3x3 / 5x5 / cross-kernel views of one encoder level into a fixed-width feature.

    The input is channel-reduced once; the reduced feature also provides the residual path.
    """

    def __init__(self, in_ch, width=64):
        super().__init__()
        self.reduce = nn.Conv2d(in_ch, width, 1)
        self.conv3a = nn.Conv2d(width, width, 3, padding=1)
        self.conv5a = nn.Conv2d(width, width, 5, padding=2)
        self.conv3b = nn.Conv2d(2 * width, width, 3, padding=1)
        self.conv5b = nn.Conv2d(2 * width, width, 5, padding=2)
        self.fuse = ConvReluBN(3 * width, width)

    def forward(self, x):
        r = self.reduce(x)
        f3 = self.conv3a(r)
        f5 = self.conv5a(r)
        both = torch.cat([f3, f5], dim=1)
        f35 = self.conv3b(both) * self.conv5b(both)
        fused = r + self.fuse(torch.cat([f3, f5, f35], dim=1))
        return ScaleFusionOut(f3=f3, f5=f5, f35=f35, fused=fused)


class TopDownStep(nn.Module):
    """Refines a level with upsampled context from the level above (conv then channel/spatial gates)."""

    def __init__(self, width=64):
        super().__init__()
        self.mix = nn.Conv2d(2 * width, width, 3, padding=1)
        self.channel_att = ChannelAttention(width)
        self.spatial_att = SpatialAttention()

    def forward(self, above, local):
        up = resample(above, size=local.shape[-2:])
        mixed = self.mix(torch.cat([up, local], dim=1))
        return self.spatial_att(self.channel_att(mixed))


class PyramidFusion(nn.Module):
    """Aggregates encoder levels 1..4 into same-width features carrying cross-level context.

    The deepest level passes through untouched (its local and combined features are the
    same tensor); lower levels blend their local feature with top-down context.
    """

    def __init__(self, in_channels, width=64):
        super().__init__()
        if len(in_channels) != 4:
            raise ValueError(f"expected 4 encoder levels, got {len(in_channels)}")
        self.width = width
        self.local = nn.ModuleList(ScaleFusion(c, width) for c in in_channels)
        self.top_down = nn.ModuleList(TopDownStep(width) for _ in range(3))
        self.combine = nn.ModuleList(nn.Conv2d(2 * width, width, 1) for _ in range(3))

    def fuse_levels(self, feats):
        if len(feats) != 4:
            raise ValueError(f"expected 4 feature maps, got {len(feats)}")
        return [m(f).fused for m, f in zip(self.local, feats)]

    def propagate(self, locals_):
        ctx = [None] * 4
        ctx[3] = locals_[3]
        for k in (2, 1, 0):
            ctx[k] = self.top_down[k](ctx[k + 1], locals_[k])
        return ctx

    def integrate(self, locals_, ctx):
        out = [None] * 4
        out[3] = locals_[3]
        for k in (0, 1, 2):
            out[k] = self.combine[k](torch.cat([locals_[k], ctx[k]], dim=1))
        return out

    def forward(self, feats):
        locals_ = self.fuse_levels(feats)
        ctx = self.propagate(locals_)
        return self.integrate(locals_, ctx)
