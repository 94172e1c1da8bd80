"""Shared test utilities: finite-difference gradient checking and naive metric oracles.

The oracles are deliberately written as plain python loops over pixels so they share
no code path with the library implementations they verify.
"""

import math

import numpy as np
import torch


def fd_gradcheck(fn, inputs, eps=1e-6, tol=1e-3, seed=0, max_checks=None):
    """Compare autograd gradients of fn w.r.t. each input against central differences.

    Everything runs in float64. Non-scalar outputs are projected onto a fixed random
    direction. The reported error is max|ag - fd| / max(1e-8, max|fd|) over all checked
    coordinates; with max_checks set, a seeded subset of coordinates is checked.
    """
    inputs = [t.detach().double().clone().requires_grad_(True) for t in inputs]
    out = fn(*inputs)
    if out.numel() > 1:
        g = torch.Generator().manual_seed(seed)
        proj = torch.randn(out.shape, generator=g, dtype=torch.float64)
        scalar = (out * proj).sum()
    else:
        proj = None
        scalar = out.sum()
    auto = torch.autograd.grad(scalar, inputs, allow_unused=True)

    rng = np.random.default_rng(seed)
    auto_vals, fd_vals = [], []
    with torch.no_grad():
        for tensor, grad in zip(inputs, auto):
            flat = tensor.view(-1)
            n = flat.numel()
            if max_checks is not None and n > max_checks:
                coords = sorted(rng.choice(n, size=max_checks, replace=False).tolist())
            else:
                coords = range(n)
            for i in coords:
                orig = flat[i].item()
                flat[i] = orig + eps
                out_plus = fn(*inputs)
                flat[i] = orig - eps
                out_minus = fn(*inputs)
                flat[i] = orig
                if proj is not None:
                    fd = float(((out_plus - out_minus) * proj).sum()) / (2 * eps)
                else:
                    fd = float((out_plus - out_minus).sum()) / (2 * eps)
                fd_vals.append(fd)
                auto_vals.append(0.0 if grad is None else float(grad.view(-1)[i]))
    fd_arr = np.asarray(fd_vals)
    auto_arr = np.asarray(auto_vals)
    rel = np.abs(auto_arr - fd_arr).max() / max(1e-8, np.abs(fd_arr).max())
    return rel


def assert_fd_gradients(fn, inputs, tol=1e-3, **kw):
    rel = fd_gradcheck(fn, inputs, tol=tol, **kw)
    assert rel < tol, f"finite-difference gradient mismatch: rel error {rel:.3e} >= {tol}"
    return rel


# ---------------------------------------------------------------------------
# metric oracles (independent loop-based implementations)

ORACLE_EPS = 1e-8


def oracle_mae(pred, gt):
    total = 0.0
    h, w = pred.shape
    for i in range(h):
        for j in range(w):
            total += abs(pred[i][j] - (1.0 if gt[i][j] > 0.5 else 0.0))
    return total / (h * w)


def oracle_f_measure(pred, gt, beta2=0.3):
    h, w = pred.shape
    mean = sum(pred[i][j] for i in range(h) for j in range(w)) / (h * w)
    tau = min(2.0 * mean, 1.0)
    tp = fp = fn = 0
    for i in range(h):
        for j in range(w):
            b = (pred[i][j] > tau) if tau == 0.0 else (pred[i][j] >= tau)
            g = gt[i][j] > 0.5
            if b and g:
                tp += 1
            elif b and not g:
                fp += 1
            elif g:
                fn += 1
    if tp == 0 or tp + fp == 0 or tp + fn == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return (1 + beta2) * precision * recall / (beta2 * precision + recall)


def oracle_e_measure(pred, gt):
    h, w = pred.shape
    n = h * w
    gsum = sum(1.0 if gt[i][j] > 0.5 else 0.0 for i in range(h) for j in range(w))
    if gsum == 0:
        return sum(1.0 - pred[i][j] for i in range(h) for j in range(w)) / n
    if gsum == n:
        return sum(pred[i][j] for i in range(h) for j in range(w)) / n
    pmean = sum(pred[i][j] for i in range(h) for j in range(w)) / n
    gmean = gsum / n
    total = 0.0
    for i in range(h):
        for j in range(w):
            fp = pred[i][j] - pmean
            fg = (1.0 if gt[i][j] > 0.5 else 0.0) - gmean
            xi = 2.0 * fp * fg / (fp * fp + fg * fg + ORACLE_EPS)
            total += (xi + 1.0) ** 2 / 4.0
    return total / n


def _oracle_stats(values):
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return mean, var


def _oracle_object(values):
    if not values:
        return 0.0
    mean, var = _oracle_stats(values)
    return 2.0 * mean / (mean * mean + 1.0 + 2.0 * math.sqrt(var) + ORACLE_EPS)


def _oracle_ssim(ps, gs):
    mx, vx = _oracle_stats(ps)
    my, vy = _oracle_stats(gs)
    n = len(ps)
    cov = sum((p - mx) * (g - my) for p, g in zip(ps, gs)) / n
    alpha = 4.0 * mx * my * cov
    beta = (mx * mx + my * my) * (vx + vy)
    if alpha != 0.0:
        return alpha / (beta + ORACLE_EPS)
    if beta == 0.0:
        return 1.0
    return 0.0


def oracle_s_measure(pred, gt, alpha=0.5):
    h, w = pred.shape
    fg = [(i, j) for i in range(h) for j in range(w) if gt[i][j] > 0.5]
    if not fg:
        return sum(1.0 - pred[i][j] for i in range(h) for j in range(w)) / (h * w)
    if len(fg) == h * w:
        return sum(pred[i][j] for i in range(h) for j in range(w)) / (h * w)

    mu = len(fg) / (h * w)
    fg_vals = [pred[i][j] for (i, j) in fg]
    bg_vals = [1.0 - pred[i][j] for i in range(h) for j in range(w) if gt[i][j] <= 0.5]
    s_obj = mu * _oracle_object(fg_vals) + (1 - mu) * _oracle_object(bg_vals)

    cy = int(round(sum(i for i, _ in fg) / len(fg)))
    cx = int(round(sum(j for _, j in fg) / len(fg)))
    cy = min(max(cy, 1), h - 1)
    cx = min(max(cx, 1), w - 1)
    s_reg = 0.0
    for rows, cols in (((0, cy), (0, cx)), ((0, cy), (cx, w)),
                       ((cy, h), (0, cx)), ((cy, h), (cx, w))):
        ps = [pred[i][j] for i in range(*rows) for j in range(*cols)]
        gs = [1.0 if gt[i][j] > 0.5 else 0.0 for i in range(*rows) for j in range(*cols)]
        s_reg += (len(ps) / (h * w)) * _oracle_ssim(ps, gs)

    score = alpha * s_obj + (1 - alpha) * s_reg
    return min(1.0, max(0.0, score))
