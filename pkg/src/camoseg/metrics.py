"""Evaluation metrics for saliency-style binary segmentation.

All four metrics take a continuous prediction in [0, 1] and a binary ground truth of
the same shape, and return a python float. Conventions for degenerate ground truths
(all background / all foreground) are pinned here and mirrored by the test oracles.
"""

from dataclasses import dataclass, field

import numpy as np

EPS = 1e-8


def _as_arrays(pred, gt):
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    if p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("prediction values must lie in [0, 1]")
    g = (g > 0.5).astype(np.float64)
    return p, g


def mae(pred, gt):
    p, g = _as_arrays(pred, gt)
    return float(np.abs(p - g).mean())


def f_measure(pred, gt, beta2=0.3):
    """Adaptive-threshold F-measure: binarize at min(2*mean(pred), 1).

    The threshold comparison is `>=`, except when the threshold is 0 (an all-zero
    prediction), where `>` is used so an empty prediction scores 0 rather than 1.
    Zero precision+recall also scores 0.
    """
    p, g = _as_arrays(pred, gt)
    tau = min(2.0 * p.mean(), 1.0)
    binary = (p > tau) if tau == 0.0 else (p >= tau)
    tp = float((binary * g).sum())
    n_pred = float(binary.sum())
    n_gt = float(g.sum())
    if tp == 0.0 or n_pred == 0.0 or n_gt == 0.0:
        return 0.0
    precision = tp / n_pred
    recall = tp / n_gt
    return float((1.0 + beta2) * precision * recall / (beta2 * precision + recall))


def e_measure(pred, gt):
    """Enhanced-alignment measure on the continuous prediction (single-formula form)."""
    p, g = _as_arrays(pred, gt)
    if g.sum() == 0:
        return float((1.0 - p).mean())
    if g.sum() == g.size:
        return float(p.mean())
    phi_p = p - p.mean()
    phi_g = g - g.mean()
    align = 2.0 * phi_p * phi_g / (phi_p**2 + phi_g**2 + EPS)
    enhanced = (align + 1.0) ** 2 / 4.0
    return float(enhanced.mean())


def _object_score(x):
    # x: prediction values over one region, already oriented so 1 is ideal
    if x.size == 0:
        return 0.0
    mean = x.mean()
    sigma = x.std()  # population std; stays defined for single-pixel regions
    return 2.0 * mean / (mean**2 + 1.0 + 2.0 * sigma + EPS)


def _ssim_like(x, y):
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cov = ((x - mx) * (y - my)).mean()
    alpha = 4.0 * mx * my * cov
    beta = (mx**2 + my**2) * (vx + vy)
    if alpha != 0.0:
        return alpha / (beta + EPS)
    if beta == 0.0:
        return 1.0
    return 0.0


def _region_score(p, g):
    h, w = g.shape
    ys, xs = np.nonzero(g)
    cy = min(max(int(round(ys.mean())), 1), h - 1)
    cx = min(max(int(round(xs.mean())), 1), w - 1)
    total = float(h * w)
    score = 0.0
    for sl in (np.s_[:cy, :cx], np.s_[:cy, cx:], np.s_[cy:, :cx], np.s_[cy:, cx:]):
        pq, gq = p[sl], g[sl]
        score += (pq.size / total) * _ssim_like(pq, gq)
    return score


def s_measure(pred, gt, alpha=0.5):
    """Structure measure: object-level similarity blended with quadrant region similarity."""
    p, g = _as_arrays(pred, gt)
    if g.sum() == 0:
        return float((1.0 - p).mean())
    if g.sum() == g.size:
        return float(p.mean())
    mu = g.mean()
    s_object = mu * _object_score(p[g == 1]) + (1.0 - mu) * _object_score(1.0 - p[g == 0])
    s_region = _region_score(p, g)
    score = alpha * s_object + (1.0 - alpha) * s_region
    return float(min(1.0, max(0.0, score)))


@dataclass
class MetricReport:
    mae: float
    f_measure: float
    e_measure: float
    s_measure: float
    count: int
    per_image: list = field(default_factory=list)

    def to_dict(self):
        return {"mae": self.mae, "f_measure": self.f_measure,
                "e_measure": self.e_measure, "s_measure": self.s_measure,
                "count": self.count}


def evaluate_pairs(pairs, ids=None):
    """Average all four metrics over (pred, gt) pairs; per-image rows are kept."""
    rows = []
    for i, (pred, gt) in enumerate(pairs):
        rows.append({
            "id": ids[i] if ids is not None else str(i),
            "mae": mae(pred, gt),
            "f_measure": f_measure(pred, gt),
            "e_measure": e_measure(pred, gt),
            "s_measure": s_measure(pred, gt),
        })
    if not rows:
        raise ValueError("no prediction/gt pairs to evaluate")
    return MetricReport(
        mae=float(np.mean([r["mae"] for r in rows])),
        f_measure=float(np.mean([r["f_measure"] for r in rows])),
        e_measure=float(np.mean([r["e_measure"] for r in rows])),
        s_measure=float(np.mean([r["s_measure"] for r in rows])),
        count=len(rows),
        per_image=rows,
    )
