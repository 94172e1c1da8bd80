"""Dataset handling: image/mask loading, derived ground truth, synthetic camouflage data."""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy import ndimage


class DatasetError(Exception):
    """Raised for malformed dataset layouts or mismatched image/mask pairs."""


class DegenerateMaskError(ValueError):
    """Raised when an operation needs foreground pixels and the mask has none."""


# 4-neighborhood cross for boundary extraction
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

MASK_THRESHOLD = 128  # 8-bit masks: >= 128 is foreground
DOWN_FACTOR = 32      # mask downsampling factor to the coarsest feature grid


@dataclass(frozen=True)
class Sample:
    """One image with its mask and derived edge weight map."""

    id: str
    image: torch.Tensor        # (3, H, W) float32 in [0, 1]
    mask: torch.Tensor         # (1, H, W) float32 in {0, 1}
    edge_weight: torch.Tensor  # (1, H, W) float32 in [0, 1]

    def __post_init__(self):
        if self.image.shape[-2:] != self.mask.shape[-2:]:
            raise DatasetError(
                f"sample '{self.id}': image {tuple(self.image.shape[-2:])} vs "
                f"mask {tuple(self.mask.shape[-2:])}"
            )


@dataclass
class GroundTruthBundle:
    """Batched supervision targets derived from binary masks."""

    mask: torch.Tensor         # (B, 1, H, W) in {0, 1}
    edge_weight: torch.Tensor  # (B, 1, H, W) in [0, 1]
    mask_down: torch.Tensor    # (B, 1, H/32, W/32), soft values from area averaging
    zero_mask: torch.Tensor    # (B, 1, H, W), all zeros

    @classmethod
    def from_masks(cls, mask, edge_weight):
        return cls(
            mask=mask,
            edge_weight=edge_weight,
            mask_down=downsample_mask(mask),
            zero_mask=torch.zeros_like(mask),
        )


class Batch(NamedTuple):
    image: torch.Tensor  # (B, 3, H, W)
    gt: GroundTruthBundle
    ids: tuple


@dataclass
class ImagePrototypes:
    """Per-sample mean colors over the object and its boundary band, shape (B, 3)."""

    object_proto: torch.Tensor
    edge_proto: torch.Tensor


def edge_filter_params(height):
    """Gaussian kernel size / sigma for the edge weight map, scaled from the 352-px reference."""
    k = max(5, round(11 * height / 352))
    if k % 2 == 0:
        k += 1
    sigma = max(1.0, 3.0 * height / 352)
    return k, sigma


def _gaussian_kernel(kernel_size, sigma):
    half = kernel_size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def derive_edge_weight(mask, kernel_size=None, sigma=None):
    """Soft edge weight map: the object boundary blurred by a Gaussian, rescaled to peak at 1.

    The boundary is the set of foreground pixels removed by a 4-neighborhood erosion
    (image border counts as background, so a full-ones mask keeps its border ring).
    An all-background mask yields an all-zero map.
    """
    squeeze = mask.dim() == 3
    m = mask[0] if squeeze else mask
    if kernel_size is None or sigma is None:
        auto_k, auto_s = edge_filter_params(m.shape[-2])
        kernel_size = auto_k if kernel_size is None else kernel_size
        sigma = auto_s if sigma is None else sigma
    if kernel_size % 2 == 0 or kernel_size < 1:
        raise ValueError(f"kernel_size must be odd and positive, got {kernel_size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")

    binary = m.detach().cpu().numpy() > 0.5
    eroded = ndimage.binary_erosion(binary, structure=_CROSS, border_value=0)
    boundary = binary & ~eroded
    if not boundary.any():
        out = np.zeros_like(binary, dtype=np.float32)
    else:
        blurred = ndimage.convolve(
            boundary.astype(np.float64), _gaussian_kernel(kernel_size, sigma),
            mode="constant", cval=0.0,
        )
        out = (blurred / blurred.max()).astype(np.float32)
    t = torch.from_numpy(out)
    return t.unsqueeze(0) if squeeze else t


def downsample_mask(mask, factor=DOWN_FACTOR):
    """Area-average a mask down by `factor`; soft values are kept, nothing is re-binarized."""
    squeeze = mask.dim() == 3
    m = mask.unsqueeze(0) if squeeze else mask
    h, w = m.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"mask size {h}x{w} not divisible by {factor}")
    out = F.avg_pool2d(m, kernel_size=factor)
    return out.squeeze(0) if squeeze else out


def _load_image(path):
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def _load_mask(path):
    arr = np.asarray(Image.open(path).convert("L"))
    return torch.from_numpy((arr >= MASK_THRESHOLD).astype(np.float32)).unsqueeze(0)


def make_sample(image, mask, sample_id, kernel_size=None, sigma=None):
    edge = derive_edge_weight(mask, kernel_size, sigma)
    return Sample(id=sample_id, image=image, mask=mask, edge_weight=edge)


def load_dataset(root, split=None):
    """Load `root[/split]/{images,masks}/<id>.png` pairs, sorted by id.

    Every image needs a same-stem mask of identical size; anything else raises DatasetError.
    """
    base = Path(root)
    if split is not None:
        base = base / split
    img_dir, mask_dir = base / "images", base / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise DatasetError(f"expected {base}/images and {base}/masks directories")

    samples = []
    for img_path in sorted(img_dir.iterdir(), key=lambda p: p.stem):
        if not img_path.is_file():
            continue
        matches = sorted(mask_dir.glob(img_path.stem + ".*"))
        if not matches:
            raise DatasetError(f"no mask found for image '{img_path.stem}'")
        image = _load_image(img_path)
        mask = _load_mask(matches[0])
        samples.append(make_sample(image, mask, img_path.stem))
    if not samples:
        raise DatasetError(f"no image/mask pairs under {base}")
    return samples


def collate(samples):
    image = torch.stack([s.image for s in samples])
    mask = torch.stack([s.mask for s in samples])
    edge = torch.stack([s.edge_weight for s in samples])
    return Batch(image=image, gt=GroundTruthBundle.from_masks(mask, edge),
                 ids=tuple(s.id for s in samples))


def compute_image_prototypes(image, gt):
    """Mask-weighted and edge-weighted mean colors of `image`, one (3,) vector each per sample."""
    if image.dim() == 3:
        image = image.unsqueeze(0)
    mask = gt.mask if isinstance(gt, GroundTruthBundle) else gt
    if mask.dim() == 3:
        mask = mask.unsqueeze(0)
    edge = gt.edge_weight if isinstance(gt, GroundTruthBundle) else derive_edge_weight(mask[:, 0]).unsqueeze(1)

    fg_mass = mask.sum(dim=(2, 3))
    if (fg_mass <= 0).any():
        raise DegenerateMaskError("prototype undefined for a mask with no foreground")
    edge_mass = edge.sum(dim=(2, 3))
    object_proto = (image * mask).sum(dim=(2, 3)) / fg_mass
    edge_proto = (image * edge).sum(dim=(2, 3)) / edge_mass.clamp_min(1e-12)
    return ImagePrototypes(object_proto=object_proto, edge_proto=edge_proto)


# ---------------------------------------------------------------------------
# synthetic data


def _value_noise(rng, size, octaves=4, base_cells=4):
    """Multi-octave bilinear value noise in [0, 1]."""
    acc = np.zeros((size, size))
    amp, total = 1.0, 0.0
    coords = None
    for o in range(octaves):
        cells = base_cells << o
        grid = rng.random((cells + 1, cells + 1))
        pos = np.linspace(0.0, cells, size, endpoint=False)
        i = pos.astype(np.int64)
        f = pos - i
        g00 = grid[np.ix_(i, i)]
        g01 = grid[np.ix_(i, i + 1)]
        g10 = grid[np.ix_(i + 1, i)]
        g11 = grid[np.ix_(i + 1, i + 1)]
        fy, fx = f[:, None], f[None, :]
        up = (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
              + g10 * fy * (1 - fx) + g11 * fy * fx)
        acc += amp * up
        total += amp
        amp *= 0.5
    acc /= total
    lo, hi = acc.min(), acc.max()
    return (acc - lo) / (hi - lo + 1e-12)


def _blob_mask(rng, size, min_cover=0.05, max_cover=0.40):
    """Random smooth blob covering 5-40% of the frame (rejection-sampled)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(200):
        cy = rng.uniform(0.35, 0.65) * size
        cx = rng.uniform(0.35, 0.65) * size
        r0 = rng.uniform(0.14, 0.30) * size
        harmonics = np.arange(2, 6)
        amps = rng.uniform(0.0, 0.3, harmonics.size) / (harmonics - 1)
        phases = rng.uniform(0.0, 2 * np.pi, harmonics.size)
        theta = np.arctan2(yy - cy, xx - cx)
        radius = r0 * (1.0 + sum(a * np.cos(k * theta + p)
                                 for a, k, p in zip(amps, harmonics, phases)))
        mask = np.hypot(yy - cy, xx - cx) <= radius
        if min_cover <= mask.mean() <= max_cover:
            return mask
    raise RuntimeError("blob rejection sampling failed")  # pragma: no cover


def _synth_one(rng, size, contrast, sample_id):
    mask = _blob_mask(rng, size)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    base = _value_noise(rng, size)
    chans = [0.75 * base + 0.25 * _value_noise(rng, size, octaves=3) for _ in range(3)]
    img = 0.25 + 0.5 * np.stack(chans)                 # background texture in [0.25, 0.75]
    img = img + sign * contrast * mask[None]           # mean-shift the object region
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    image_t = torch.from_numpy(img)
    mask_t = torch.from_numpy(mask.astype(np.float32)).unsqueeze(0)
    return make_sample(image_t, mask_t, sample_id)


def synth_dataset(n, size, seed, contrast=0.25):
    """Deterministic synthetic camouflage set: textured background, mean-shifted blob object."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    if not (0.0 < contrast <= 0.5):
        raise ValueError(f"contrast must be in (0, 0.5], got {contrast}")
    rng = np.random.default_rng(seed)
    width = max(4, int(math.log10(max(n - 1, 1))) + 1)
    return [_synth_one(rng, size, contrast, f"synth{seed:03d}_{i:0{width}d}")
            for i in range(n)]


def export_dataset(samples, root):
    """Write `root/{images,masks}/<id>.png` plus a manifest.json listing the ids."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    ids = []
    for s in samples:
        img = (s.image.permute(1, 2, 0).numpy() * 255.0).round().astype(np.uint8)
        Image.fromarray(img).save(root / "images" / f"{s.id}.png")
        m = (s.mask[0].numpy() * 255.0).round().astype(np.uint8)
        Image.fromarray(m, mode="L").save(root / "masks" / f"{s.id}.png")
        ids.append(s.id)
    manifest = {"ids": ids, "count": len(ids)}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return root
