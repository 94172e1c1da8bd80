"""Training objectives for the detector and the camouflage generator."""

from dataclasses import dataclass, asdict

import torch
import torch.nn.functional as F

from .data import compute_image_prototypes

_EPS = 1e-6


def _scalar(x):
    return float(x.detach()) if torch.is_tensor(x) else float(x)


def pool_window(height, reference=352, base=31):
    """Neighborhood size for the border-weighting average pool, scaled from the 352-px reference."""
    w = round(base * height / reference)
    if w % 2 == 0:
        w += 1
    return max(1, w)


def _border_weights(target, window=None):
    if window is None:
        window = pool_window(target.shape[-2])
    local = F.avg_pool2d(target, kernel_size=window, stride=1, padding=window // 2)
    return 1.0 + 5.0 * (local - target).abs()


def weighted_bce(logits, target, window=None):
    """BCE with per-pixel weights emphasizing region borders, normalized per sample."""
    weit = _border_weights(target, window)
    bce = F.binary_cross_entropy_with_logits(logits, target, reduction="none")
    per_sample = (weit * bce).sum(dim=(2, 3)) / weit.sum(dim=(2, 3))
    return per_sample.mean()


def weighted_iou(logits, target, window=None):
    """Soft IoU loss with the same border weighting, +1 smoothing on both sides."""
    weit = _border_weights(target, window)
    pred = torch.sigmoid(logits)
    inter = (weit * pred * target).sum(dim=(2, 3))
    union = (weit * (pred + target - pred * target)).sum(dim=(2, 3))
    per_sample = 1.0 - (inter + 1.0) / (union + 1.0)
    return per_sample.mean()


def structure_loss(logits, target, window=None):
    return weighted_bce(logits, target, window) + weighted_iou(logits, target, window)


def dice_loss(logits, target):
    pred = torch.sigmoid(logits)
    num = 2.0 * (pred * target).sum(dim=(1, 2, 3)) + 1.0
    den = pred.sum(dim=(1, 2, 3)) + target.sum(dim=(1, 2, 3)) + 1.0
    return (1.0 - num / den).mean()


def _match(target, like):
    if target.shape[-2:] == like.shape[-2:]:
        return target
    return F.interpolate(target, size=like.shape[-2:], mode="area")


def segmentation_loss(seg_logits, mask, window=None):
    """Deep supervision over all maps (finest first), halving the weight per level.

    Targets are area-averaged to each map's resolution; soft values are kept. With
    window=None the border-pool size is derived from each map's own height.
    """
    total = 0.0
    for k, logits in enumerate(seg_logits):
        total = total + structure_loss(logits, _match(mask, logits), window) / 2**k
    return total


def edge_loss(edge_logits, edge_weight):
    """Dice against the soft edge map at each level, same 1/2^k level weighting."""
    total = 0.0
    for k, logits in enumerate(edge_logits):
        total = total + dice_loss(logits, _match(edge_weight, logits)) / 2**k
    return total


def consistency_prototypes(feat, mask_down, eps=_EPS):
    """Per-sample foreground/background mean vectors of the channel-normalized features,
    detached: (B, C) each."""
    f = F.normalize(feat, p=2, dim=1, eps=1e-12)
    w_fg = mask_down
    w_bg = 1.0 - mask_down
    m_fg = w_fg.sum(dim=(1, 2, 3)).clamp_min(eps).unsqueeze(1)
    m_bg = w_bg.sum(dim=(1, 2, 3)).clamp_min(eps).unsqueeze(1)
    proto_fg = ((f * w_fg).sum(dim=(2, 3)) / m_fg).detach()
    proto_bg = ((f * w_bg).sum(dim=(2, 3)) / m_bg).detach()
    return proto_fg, proto_bg


def feature_consistency_loss(feat, mask_down, prototypes=None, eps=_EPS):
    """Pulls foreground feature vectors toward their own prototype and away from the
    background prototype.

    Features are L2-normalized over channels; prototypes are per-sample mask-weighted
    means, detached (recomputed here unless supplied). Both distance terms are averaged
    with the (soft) foreground mask as weights, so the loss is negative whenever
    foreground pixels sit closer to their own prototype than to the background one.
    Samples whose foreground or background mass vanishes contribute zero; their count
    is returned alongside the loss.
    """
    f = F.normalize(feat, p=2, dim=1, eps=1e-12)
    w_fg = mask_down
    m_fg = w_fg.sum(dim=(1, 2, 3))
    m_bg = (1.0 - mask_down).sum(dim=(1, 2, 3))
    valid = (m_fg > eps) & (m_bg > eps)

    proto_fg, proto_bg = prototypes if prototypes is not None \
        else consistency_prototypes(feat, mask_down, eps)
    d_fg = ((f - proto_fg[:, :, None, None]) ** 2).sum(dim=1, keepdim=True)
    d_bg = ((f - proto_bg[:, :, None, None]) ** 2).sum(dim=1, keepdim=True)
    per_sample = ((w_fg * d_fg).sum(dim=(1, 2, 3))
                  - (w_fg * d_bg).sum(dim=(1, 2, 3))) / m_fg.clamp_min(eps)

    loss = torch.where(valid, per_sample, per_sample.new_zeros(())).sum() / per_sample.numel()
    return loss, int((~valid).sum().item())


@dataclass
class DetectorLosses:
    total: float
    seg: float
    edge: float
    consistency: float
    beta: float
    skipped: int

    def to_dict(self):
        return asdict(self)


@dataclass
class GeneratorLosses:
    total: float
    adversarial: float
    fidelity: float
    concealment: float
    lam: float

    def to_dict(self):
        return asdict(self)


def detector_objective(output, gt, beta=0.1, window=None, mode="full"):
    """Detector training loss.

    mode="full": deep-supervised segmentation + edge reconstruction + beta-weighted
    feature consistency on the deepest fused level. mode="plain": border-weighted
    BCE+IoU on the final map only.
    """
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if mode == "plain":
        seg = structure_loss(output.final_logits, gt.mask, window)
        report = DetectorLosses(total=_scalar(seg), seg=_scalar(seg), edge=0.0,
                                consistency=0.0, beta=beta, skipped=0)
        return seg, report
    if mode != "full":
        raise ValueError(f"unknown detector loss mode '{mode}'")
    seg = segmentation_loss(output.seg_logits, gt.mask, window)
    edge = edge_loss(output.edge_logits, gt.edge_weight)
    consistency, skipped = feature_consistency_loss(output.fused[3], gt.mask_down)
    total = seg + edge + beta * consistency
    report = DetectorLosses(total=_scalar(total), seg=_scalar(seg), edge=_scalar(edge),
                            consistency=_scalar(consistency), beta=beta, skipped=skipped)
    return total, report


def fidelity_loss(x_synth, x_real, mask):
    """Mean squared background deviation of the synthesized image, over all elements."""
    diff = (1.0 - mask) * (x_synth - x_real)
    return (diff**2).mean()


def concealment_loss(x_synth, gt, eps=_EPS):
    """Pulls synthesized foreground / edge-band pixels toward their mean colors.

    Prototypes are computed from the detached synthesized image, so the loss only
    smooths (reduces spread), never chases a moving mean.
    """
    protos = compute_image_prototypes(x_synth.detach(), gt)
    d_obj = ((x_synth - protos.object_proto[:, :, None, None]) ** 2).sum(dim=1, keepdim=True)
    d_edge = ((x_synth - protos.edge_proto[:, :, None, None]) ** 2).sum(dim=1, keepdim=True)
    m_fg = gt.mask.sum(dim=(1, 2, 3)).clamp_min(eps)
    m_edge = gt.edge_weight.sum(dim=(1, 2, 3)).clamp_min(eps)
    term_obj = (gt.mask * d_obj).sum(dim=(1, 2, 3)) / m_fg
    term_edge = (gt.edge_weight * d_edge).sum(dim=(1, 2, 3)) / m_edge
    return (term_obj + term_edge).mean()


def adversarial_loss(output, gt, window=None, multi_map=False):
    """Pushes the detector's prediction on the synthesized image toward an empty mask."""
    if multi_map:
        return segmentation_loss(output.seg_logits, gt.zero_mask, window)
    zeros = torch.zeros_like(output.final_logits)
    return structure_loss(output.final_logits, zeros, window)


def generator_objective(output, x_synth, x_real, gt, lam=0.1, window=None, multi_map=False):
    """Generator training loss: fool the detector, keep the background, smooth the object."""
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    adv = adversarial_loss(output, gt, window, multi_map)
    fid = fidelity_loss(x_synth, x_real, gt.mask)
    conceal = concealment_loss(x_synth, gt)
    total = adv + fid + lam * conceal
    report = GeneratorLosses(total=_scalar(total), adversarial=_scalar(adv),
                             fidelity=_scalar(fid), concealment=_scalar(conceal), lam=lam)
    return total, report
