"""Edge-guided decoder: per level, reconstruct an edge feature, then segment with
foreground/background branches modulated by edge-conditioned scale/shift maps."""

from typing import NamedTuple

import torch
import torch.nn as nn

from .blocks import RCAB, ConvReluBN, resample

BACKGROUND_MODES = ("complement", "sigmoid_reversed")
GATE_ORDERS = ("resample_first", "sigmoid_first")


class EdgeBlock(nn.Module):
    """Edge feature from the fused feature (gated by the previous edge map) and the
    previous segmentation feature."""

    def __init__(self, width, prev_seg_ch):
        super().__init__()
        self.fuse = ConvReluBN(width + prev_seg_ch, width)
        self.head = nn.Conv2d(width, 1, 3, padding=1)

    def forward(self, fused, edge_gate, prev_seg_feat):
        feat = self.fuse(torch.cat([fused * edge_gate + fused, prev_seg_feat], dim=1))
        return feat, self.head(feat)


class EdgeScaleShift(nn.Module):
    """Per-pixel scale and shift maps predicted from an edge feature.

    Heads are zero-initialized (scale bias 1, shift bias 0) so the modulation starts
    as the identity no matter what feature is fed in.
    """

    def __init__(self, width):
        super().__init__()
        self.scale = nn.Sequential(ConvReluBN(width, width), nn.Conv2d(width, width, 3, padding=1))
        self.shift = nn.Sequential(ConvReluBN(width, width), nn.Conv2d(width, width, 3, padding=1))
        nn.init.zeros_(self.scale[1].weight)
        nn.init.ones_(self.scale[1].bias)
        nn.init.zeros_(self.shift[1].weight)
        nn.init.zeros_(self.shift[1].bias)

    def forward(self, edge_feat):
        return self.scale(edge_feat), self.shift(edge_feat)


class SplitCalibration(nn.Module):
    """Two-branch refinement: foreground branch gated by the previous prediction,
    background branch by its reverse, each rescaled/shifted by edge-conditioned maps."""

    def __init__(self, width):
        super().__init__()
        self.fg_refine = RCAB(width)
        self.bg_refine = RCAB(width)
        self.fg_norm = EdgeScaleShift(width)
        self.bg_norm = EdgeScaleShift(width)
        self.head = nn.Conv2d(2 * width, 1, 3, padding=1)

    def forward(self, fused, fg_gate, bg_gate, prev_edge_feat):
        fg_scale, fg_shift = self.fg_norm(prev_edge_feat)
        bg_scale, bg_shift = self.bg_norm(prev_edge_feat)
        fg = fg_scale * self.fg_refine(fused * fg_gate + fused) + fg_shift
        bg = bg_scale * self.bg_refine(fused * bg_gate + fused) + bg_shift
        feat = torch.cat([fg, bg], dim=1)
        return feat, self.head(feat)


class LevelState(NamedTuple):
    edge_feat: torch.Tensor    # (B, W, h, w)
    edge_logits: torch.Tensor  # (B, 1, h, w)
    seg_feat: torch.Tensor     # (B, W or 2W, h, w)
    seg_logits: torch.Tensor   # (B, 1, h, w)


class DecoderLevel(nn.Module):
    def __init__(self, width, prev_seg_ch):
        super().__init__()
        self.edge = EdgeBlock(width, prev_seg_ch)
        self.calib = SplitCalibration(width)


class DecoderOutputs(NamedTuple):
    seg_logits: list   # five maps, finest first; the last is the coarse head's
    edge_logits: list  # four maps, finest first


class EdgeGuidedDecoder(nn.Module):
    """Runs four decoder levels deep-to-shallow over the fused pyramid.

    The deepest level starts from the coarse segmentation (feature + logits) and an
    all-zero edge state at the same resolution; every shallower level upsamples the
    previous state by 2x.
    """

    def __init__(self, width=64, background_mask="complement", gate_order="resample_first"):
        super().__init__()
        if background_mask not in BACKGROUND_MODES:
            raise ValueError(f"background_mask must be one of {BACKGROUND_MODES}")
        if gate_order not in GATE_ORDERS:
            raise ValueError(f"gate_order must be one of {GATE_ORDERS}")
        self.width = width
        self.background_mask = background_mask
        self.gate_order = gate_order
        # index 3 is the deepest level (fed by the width-channel coarse feature);
        # shallower levels receive the previous level's two-branch (2*width) feature
        self.levels = nn.ModuleList(
            DecoderLevel(width, prev_seg_ch=width if k == 3 else 2 * width)
            for k in (3, 2, 1, 0)
        )

    def _gates(self, state, size):
        if self.gate_order == "resample_first":
            seg_l = resample(state.seg_logits, size=size)
            edge_gate = torch.sigmoid(resample(state.edge_logits, size=size))
            fg_gate = torch.sigmoid(seg_l)
            if self.background_mask == "complement":
                bg_gate = 1.0 - fg_gate
            else:
                bg_gate = torch.sigmoid(1.0 - seg_l)
        else:
            edge_gate = resample(torch.sigmoid(state.edge_logits), size=size)
            fg_gate = resample(torch.sigmoid(state.seg_logits), size=size)
            if self.background_mask == "complement":
                bg_gate = 1.0 - fg_gate
            else:
                bg_gate = resample(torch.sigmoid(1.0 - state.seg_logits), size=size)
        return edge_gate, fg_gate, bg_gate

    def forward(self, fused, coarse_feat, coarse_logits):
        if len(fused) != 4:
            raise ValueError(f"expected 4 fused levels, got {len(fused)}")
        b, _, h, w = fused[3].shape
        zeros_feat = fused[3].new_zeros(b, self.width, h, w)
        zeros_logits = fused[3].new_zeros(b, 1, h, w)
        state = LevelState(zeros_feat, zeros_logits, coarse_feat, coarse_logits)

        seg_logits, edge_logits = [], []
        for level, fl in zip(self.levels, reversed(fused)):
            size = fl.shape[-2:]
            edge_gate, fg_gate, bg_gate = self._gates(state, size)
            prev_seg_feat = resample(state.seg_feat, size=size)
            prev_edge_feat = resample(state.edge_feat, size=size)
            fe, pe = level.edge(fl, edge_gate, prev_seg_feat)
            fs, ps = level.calib(fl, fg_gate, bg_gate, prev_edge_feat)
            state = LevelState(fe, pe, fs, ps)
            seg_logits.append(ps)
            edge_logits.append(pe)

        seg_logits.reverse()
        edge_logits.reverse()
        seg_logits.append(coarse_logits)
        return DecoderOutputs(seg_logits=seg_logits, edge_logits=edge_logits)
