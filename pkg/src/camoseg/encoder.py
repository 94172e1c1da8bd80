"""Backbone feature extractors producing the five-level pyramid (strides 2..32)."""

import torch.nn as nn

DESK_CHANNELS = (16, 32, 64, 96, 128)
RESNET50_CHANNELS = (64, 256, 512, 1024, 2048)


class DimensionError(ValueError):
    """Input spatial size incompatible with the pyramid stride."""


class ResidualBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or in_ch != out_ch:
            self.skip = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        out = self.bn2(self.conv2(self.relu(self.bn1(self.conv1(x)))))
        return self.relu(out + self.skip(x))


class ResidualEncoder(nn.Module):
    """Small residual pyramid: five stages, each halving resolution."""

    def __init__(self, channels=DESK_CHANNELS, in_ch=3):
        super().__init__()
        self.channels = tuple(channels)
        c0 = self.channels[0]
        self.stem = nn.Sequential(
            nn.Conv2d(in_ch, c0, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(c0),
            nn.ReLU(inplace=True),
            ResidualBlock(c0, c0),
        )
        stages = []
        for prev, cur in zip(self.channels[:-1], self.channels[1:]):
            stages.append(nn.Sequential(ResidualBlock(prev, cur, stride=2),
                                        ResidualBlock(cur, cur)))
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise DimensionError(f"input size {h}x{w} must be divisible by 32")
        feats = [self.stem(x)]
        for stage in self.stages:
            feats.append(stage(feats[-1]))
        return feats


class ResNet50Encoder(nn.Module):
    """torchvision ResNet-50 sliced into the five pyramid stages."""

    channels = RESNET50_CHANNELS

    def __init__(self, pretrained=False):
        super().__init__()
        from torchvision.models import resnet50  # heavyweight optional backbone

        net = resnet50(weights="IMAGENET1K_V1" if pretrained else None)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu)
        self.pool = net.maxpool
        self.layer1, self.layer2 = net.layer1, net.layer2
        self.layer3, self.layer4 = net.layer3, net.layer4

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise DimensionError(f"input size {h}x{w} must be divisible by 32")
        f0 = self.stem(x)
        f1 = self.layer1(self.pool(f0))
        f2 = self.layer2(f1)
        f3 = self.layer3(f2)
        f4 = self.layer4(f3)
        return [f0, f1, f2, f3, f4]


def build_encoder(kind="desk", channels=None, pretrained=False):
    if kind == "desk":
        return ResidualEncoder(channels or DESK_CHANNELS)
    if kind == "resnet50":
        return ResNet50Encoder(pretrained=pretrained)
    raise ValueError(f"unknown encoder kind '{kind}'")
