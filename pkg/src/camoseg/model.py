"""Full detector: encoder pyramid, coarse localization head, fusion, edge-guided decoding."""

from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn

from .aggregation import PyramidFusion
from .blocks import ASPP, resample
from .decoder import BACKGROUND_MODES, GATE_ORDERS, EdgeGuidedDecoder
from .encoder import build_encoder


@dataclass
class ModelConfig:
    encoder: str = "desk"
    encoder_channels: tuple | None = None  # None -> the encoder kind's default plan
    width: int = 64
    aspp_dilations: tuple = (1, 2, 4)
    background_mask: str = "complement"
    gate_order: str = "resample_first"
    pretrained_backbone: bool = False

    def validate(self):
        if self.encoder not in ("desk", "resnet50"):
            raise ValueError(f"unknown encoder '{self.encoder}'")
        if self.width < 1:
            raise ValueError("width must be positive")
        if self.background_mask not in BACKGROUND_MODES:
            raise ValueError(f"background_mask must be one of {BACKGROUND_MODES}")
        if self.gate_order not in GATE_ORDERS:
            raise ValueError(f"gate_order must be one of {GATE_ORDERS}")
        return self

    def to_dict(self):
        d = asdict(self)
        if d["encoder_channels"] is not None:
            d["encoder_channels"] = list(d["encoder_channels"])
        d["aspp_dilations"] = list(d["aspp_dilations"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("encoder_channels") is not None:
            d["encoder_channels"] = tuple(d["encoder_channels"])
        if d.get("aspp_dilations") is not None:
            d["aspp_dilations"] = tuple(d["aspp_dilations"])
        return cls(**d).validate()


@dataclass
class DetectorOutput:
    seg_logits: list            # 5 maps, finest (stride 4) first; last is the coarse map
    edge_logits: list           # 4 maps, finest first
    fused: list                 # fused pyramid features, level 1 (index 0) .. level 4
    final_logits: torch.Tensor  # (B, 1, H, W) at input resolution

    @property
    def final_prob(self):
        return torch.sigmoid(self.final_logits)


class CoarseHead(nn.Module):
    """Context head on the deepest encoder level: ASPP feature plus a 1-channel map."""

    def __init__(self, in_ch, width, dilations=(1, 2, 4)):
        super().__init__()
        self.aspp = ASPP(in_ch, width, dilations)
        self.head = nn.Conv2d(width, 1, 3, padding=1)

    def forward(self, x):
        feat = self.aspp(x)
        return feat, self.head(feat)


class CamoDetector(nn.Module):
    def __init__(self, cfg=None):
        super().__init__()
        self.cfg = (cfg or ModelConfig()).validate()
        self.encoder = build_encoder(self.cfg.encoder, self.cfg.encoder_channels,
                                     self.cfg.pretrained_backbone)
        chans = self.encoder.channels
        self.fusion = PyramidFusion(chans[1:], self.cfg.width)
        self.coarse = CoarseHead(chans[-1], self.cfg.width, self.cfg.aspp_dilations)
        self.decoder = EdgeGuidedDecoder(self.cfg.width, self.cfg.background_mask,
                                         self.cfg.gate_order)

    def forward(self, x):
        feats = self.encoder(x)
        fused = self.fusion(feats[1:])
        coarse_feat, coarse_logits = self.coarse(feats[-1])
        seg, edge = self.decoder(fused, coarse_feat, coarse_logits)
        final = resample(seg[0], size=x.shape[-2:])
        return DetectorOutput(seg_logits=seg, edge_logits=edge, fused=fused,
                              final_logits=final)
