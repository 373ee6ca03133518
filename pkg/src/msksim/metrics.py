"""Masked activation/pose metrics and the training-loss formulas built from them.

Every function takes ``(pred, gt, mask)`` arrays of shape (T, C) (1-D input
is treated as a single channel). ``mask`` marks the valid set; adjacent
pairs are the entries valid in both frame t and frame t-1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ACTIVE_THRESHOLD = 0.10
PEAK_FRACTION = 0.05


class MetricError(ValueError):
    """Raised when a metric is undefined on the selected entries."""


@dataclass(frozen=True)
class EvalMask:
    valid: np.ndarray

    @classmethod
    def full(cls, shape):
        return cls(np.ones(shape, dtype=bool))

    @property
    def pairs(self) -> np.ndarray:
        """(T, C) booleans, True where (t, c) and (t-1, c) are both valid; row 0 is False."""
        v = np.asarray(self.valid, dtype=bool)
        out = np.zeros_like(v)
        out[1:] = v[1:] & v[:-1]
        return out


def _prep(pred, gt, mask):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.ndim == 1:
        pred, gt = pred[:, None], gt[:, None]
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if mask is None:
        valid = np.ones(pred.shape, dtype=bool)
    else:
        valid = np.asarray(mask.valid if isinstance(mask, EvalMask) else mask, dtype=bool)
        if valid.ndim == 1:
            valid = valid[:, None]
        valid = np.broadcast_to(valid, pred.shape)
    return pred, gt, EvalMask(valid)


def _selected(pred, gt, mask):
    pred, gt, m = _prep(pred, gt, mask)
    sel = m.valid
    if not sel.any():
        raise MetricError("empty valid set")
    return pred[sel], gt[sel]


def _std(x):
    return float(np.sqrt(np.mean((x - x.mean()) ** 2)))


def rmse(pred, gt, mask=None) -> float:
    p, g = _selected(pred, gt, mask)
    return math.sqrt(float(np.mean((p - g) ** 2)))


def mae(pred, gt, mask=None) -> float:
    p, g = _selected(pred, gt, mask)
    return float(np.mean(np.abs(p - g)))


def nrmse(pred, gt, mask=None) -> float:
    p, g = _selected(pred, gt, mask)
    s = _std(g)
    if s == 0:
        raise MetricError("ground truth has zero standard deviation over the valid set")
    return math.sqrt(float(np.mean((p - g) ** 2))) / s


def pcc(pred, gt, mask=None) -> float:
    """Pearson correlation over the flattened valid entries."""
    p, g = _selected(pred, gt, mask)
    if p.size < 2:
        raise MetricError("PCC needs at least 2 valid entries")
    dp, dg = p - p.mean(), g - g.mean()
    den = math.sqrt(float(dp @ dp) * float(dg @ dg))
    if den == 0:
        raise MetricError("PCC undefined for constant input")
    return float(np.clip((dp @ dg) / den, -1.0, 1.0))


def diff_l1(pred, gt, mask=None) -> float:
    pred, gt, m = _prep(pred, gt, mask)
    pairs = m.pairs
    if not pairs.any():
        raise MetricError("no adjacent valid frame pairs")
    dp = pred[1:] - pred[:-1]
    dg = gt[1:] - gt[:-1]
    return float(np.mean(np.abs(dp - dg)[pairs[1:]]))


def active_mae(pred, gt, mask=None, threshold: float = ACTIVE_THRESHOLD) -> float:
    """MAE restricted to valid entries whose ground truth exceeds ``threshold``."""
    pred, gt, m = _prep(pred, gt, mask)
    sel = m.valid & (gt > threshold)
    if not sel.any():
        raise MetricError(f"no valid entry with ground truth > {threshold}")
    return float(np.mean(np.abs(pred[sel] - gt[sel])))


def pose_loss(pred_q, gt_q, mask=None) -> float:
    return rmse(pred_q, gt_q, mask) + diff_l1(pred_q, gt_q, mask)


def muscle_loss(pred_a, gt_a, mask=None) -> float:
    return rmse(pred_a, gt_a, mask) + diff_l1(pred_a, gt_a, mask) + (1.0 - pcc(pred_a, gt_a, mask))


def amplitude_losses(pred_a, gt_a, mask=None, activity_threshold: float = ACTIVE_THRESHOLD,
                     peak_fraction: float = PEAK_FRACTION):
    """``(active_amp, peak_amp, std_match)`` amplitude calibration terms.

    The peak term averages the absolute error over the ``ceil(peak_fraction *
    |valid|)`` valid entries with the largest ground truth.
    """
    active = active_mae(pred_a, gt_a, mask, activity_threshold)
    p, g = _selected(pred_a, gt_a, mask)
    k = max(1, math.ceil(peak_fraction * g.size - 1e-12))
    top = np.argsort(-g, kind="stable")[:k]
    peak = float(np.mean(np.abs(p[top] - g[top])))
    std_match = abs(_std(p) - _std(g))
    return active, peak, std_match


SUITE = ("RMSE", "MAE", "nRMSE", "DiffL1", "PCC", "ActiveMAE@0.10")


def metric_suite(pred, gt, mask=None) -> dict:
    """All reported metrics; undefined ones come back as NaN."""
    funcs = {
        "RMSE": rmse, "MAE": mae, "nRMSE": nrmse, "DiffL1": diff_l1, "PCC": pcc,
        "ActiveMAE@0.10": active_mae,
    }
    out = {}
    for name in SUITE:
        try:
            out[name] = funcs[name](pred, gt, mask)
        except MetricError:
            out[name] = float("nan")
    return out
