"""Camouflage generator: residual U-Net predicting an additive perturbation of the image."""

import torch
import torch.nn as nn

from .blocks import resample
from .encoder import DimensionError, ResidualBlock


class CamoGenerator(nn.Module):
    """Synthesizes a harder-to-detect version of the input, x_g = clamp(x + delta(x), 0, 1).

    Three stride-2 encoder stages with skip connections, bilinear-upsampling decoder,
    and a zero-initialized output head, so a fresh generator is exactly the identity.
    Input sizes must be divisible by 8.
    """

    def __init__(self, widths=(32, 64, 128), in_ch=3):
        super().__init__()
        w0, w1, w2 = widths
        self.enc0 = nn.Sequential(nn.Conv2d(in_ch, w0, 3, stride=2, padding=1, bias=False),
                                  nn.BatchNorm2d(w0), nn.ReLU(inplace=True),
                                  ResidualBlock(w0, w0))
        self.enc1 = nn.Sequential(nn.Conv2d(w0, w1, 3, stride=2, padding=1, bias=False),
                                  nn.BatchNorm2d(w1), nn.ReLU(inplace=True),
                                  ResidualBlock(w1, w1))
        self.enc2 = nn.Sequential(nn.Conv2d(w1, w2, 3, stride=2, padding=1, bias=False),
                                  nn.BatchNorm2d(w2), nn.ReLU(inplace=True),
                                  ResidualBlock(w2, w2))
        self.mid = ResidualBlock(w2, w2)
        self.dec1 = ResidualBlock(w2 + w1, w1)
        self.dec0 = ResidualBlock(w1 + w0, w0)
        self.out = ResidualBlock(w0, w0)
        self.head = nn.Conv2d(w0, in_ch, 3, padding=1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def perturbation(self, x):
        h, w = x.shape[-2:]
        if h % 8 or w % 8:
            raise DimensionError(f"input size {h}x{w} must be divisible by 8")
        e0 = self.enc0(x)
        e1 = self.enc1(e0)
        e2 = self.mid(self.enc2(e1))
        d1 = self.dec1(torch.cat([resample(e2, size=e1.shape[-2:]), e1], dim=1))
        d0 = self.dec0(torch.cat([resample(d1, size=e0.shape[-2:]), e0], dim=1))
        return self.head(self.out(resample(d0, size=(h, w))))

    def forward(self, x):
        return (x + self.perturbation(x)).clamp(0.0, 1.0)
