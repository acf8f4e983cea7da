"""Flow and trajectory error metrics.

All reductions run over the pixels selected by the mask (everything when the
mask is None) in fixed array order, so repeated calls are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bezier import BezierField, FlowMap


def _values_and_mask(pred, gt, mask):
    pv = pred.values if isinstance(pred, FlowMap) else np.asarray(pred, dtype=np.float64)
    gv = gt.values if isinstance(gt, FlowMap) else np.asarray(gt, dtype=np.float64)
    if pv.shape != gv.shape:
        raise ValueError(f"prediction shape {pv.shape} does not match ground truth {gv.shape}")
    combined = np.ones(pv.shape[:2], dtype=bool)
    for part in (
        mask,
        pred.valid if isinstance(pred, FlowMap) else None,
        gt.valid if isinstance(gt, FlowMap) else None,
    ):
        if part is not None:
            part = np.asarray(part, dtype=bool)
            if part.shape != combined.shape:
                raise ValueError(f"mask shape {part.shape} does not match flow {combined.shape}")
            combined &= part
    if not combined.any():
        raise ValueError("empty mask: no pixels to evaluate")
    return pv, gv, combined


def epe(pred, gt, mask=None) -> float:
    """Mean endpoint error: average L2 distance between flow vectors."""
    pv, gv, m = _values_and_mask(pred, gt, mask)
    diff = pv[m] - gv[m]
    return float(np.mean(np.sqrt(np.sum(diff * diff, axis=-1))))


def angular_error(pred, gt, mask=None) -> float:
    """Mean space-time angular error in degrees.

    Flow vectors are lifted to (u, v, 1) so a zero ground-truth vector still
    defines a direction; the angle between the lifted vectors is averaged.
    """
    pv, gv, m = _values_and_mask(pred, gt, mask)
    up, vp = pv[m, 0], pv[m, 1]
    ug, vg = gv[m, 0], gv[m, 1]
    num = up * ug + vp * vg + 1.0
    den = np.sqrt(up * up + vp * vp + 1.0) * np.sqrt(ug * ug + vg * vg + 1.0)
    cos = np.clip(num / den, -1.0, 1.0)
    return float(np.degrees(np.mean(np.arccos(cos))))


def n_pixel_error(pred, gt, threshold: float, mask=None) -> float:
    """Percentage of pixels whose endpoint error exceeds ``threshold``."""
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    pv, gv, m = _values_and_mask(pred, gt, mask)
    diff = pv[m] - gv[m]
    err = np.sqrt(np.sum(diff * diff, axis=-1))
    return float(100.0 * np.count_nonzero(err > threshold) / err.size)


def _predictions_for(gt_maps: Sequence[FlowMap], pred) -> list[np.ndarray]:
    if isinstance(pred, BezierField):
        return [pred.evaluate(g.tau).values for g in gt_maps]
    preds = list(pred)
    if len(preds) != len(gt_maps):
        raise ValueError(
            f"got {len(preds)} prediction maps for {len(gt_maps)} ground-truth times"
        )
    for p, g in zip(preds, gt_maps):
        if isinstance(p, FlowMap) and abs(p.tau - g.tau) > 1e-9:
            raise ValueError(f"prediction tau {p.tau} does not match ground truth {g.tau}")
    return [p.values if isinstance(p, FlowMap) else np.asarray(p) for p in preds]


def tepe_tae(pred, gt_maps: Sequence[FlowMap], mask=None) -> tuple[float, float]:
    """Trajectory endpoint and angular errors, averaged over ground-truth times.

    ``pred`` is either a :class:`BezierField` (sampled at each ground-truth
    tau) or a sequence of flow maps aligned with ``gt_maps``.
    """
    if not gt_maps:
        raise ValueError("need at least one ground-truth flow map")
    preds = _predictions_for(gt_maps, pred)
    epes = []
    aes = []
    for pv, g in zip(preds, gt_maps):
        epes.append(epe(pv, g, mask))
        aes.append(angular_error(pv, g, mask))
    return float(np.mean(epes)), float(np.mean(aes))


def trajectory_loss(
    iterates: Sequence[BezierField],
    gt_maps: Sequence[FlowMap],
    decay: float = 0.8,
    mask=None,
) -> float:
    """Decayed mean-L1 supervision loss over estimator iterates.

    Later iterates count more: iterate ``i`` of ``N`` is weighted
    ``decay^(N - i)`` (the final one gets weight 1). Per iterate the loss is
    the mean over ground-truth times of the masked mean L1 displacement
    difference.
    """
    if not iterates:
        raise ValueError("need at least one field iterate")
    if not gt_maps:
        raise ValueError("need at least one ground-truth flow map")
    if not 0.0 < decay <= 1.0:
        raise ValueError(f"decay must lie in (0, 1], got {decay}")
    n_iter = len(iterates)
    total = 0.0
    for i, fld in enumerate(iterates, start=1):
        per_tau = 0.0
        for g in gt_maps:
            pv, gv, m = _values_and_mask(fld.evaluate(g.tau), g, mask)
            per_tau += float(np.mean(np.abs(pv[m] - gv[m]).sum(axis=-1)))
        total += decay ** (n_iter - i) * per_tau
    return total / len(gt_maps)


@dataclass
class MetricReport:
    """Flat summary of one evaluation run."""

    tepe: float
    tae: float
    per_tau: dict[float, dict[str, float]] = field(default_factory=dict)
    pixels: int = 0

    def to_text(self) -> str:
        lines = [f"tepe = {self.tepe:.6f}", f"tae = {self.tae:.6f}", f"pixels = {self.pixels}"]
        for tau in sorted(self.per_tau):
            row = self.per_tau[tau]
            parts = " ".join(f"{k}={v:.6f}" for k, v in sorted(row.items()))
            lines.append(f"tau {tau:.4f}: {parts}")
        return "\n".join(lines) + "\n"


def compute_report(pred, gt_maps: Sequence[FlowMap], mask=None) -> MetricReport:
    """Per-tau EPE/AE/NPE table plus trajectory averages."""
    preds = _predictions_for(gt_maps, pred)
    per_tau = {}
    count = 0
    for pv, g in zip(preds, gt_maps):
        _, _, m = _values_and_mask(pv, g, mask)
        count = int(m.sum())
        per_tau[float(g.tau)] = {
            "epe": epe(pv, g, mask),
            "ae": angular_error(pv, g, mask),
            "npe1": n_pixel_error(pv, g, 1.0, mask),
            "npe2": n_pixel_error(pv, g, 2.0, mask),
            "npe3": n_pixel_error(pv, g, 3.0, mask),
        }
    tepe, tae = tepe_tae(pred, gt_maps, mask)
    return MetricReport(tepe=tepe, tae=tae, per_tau=per_tau, pixels=count)
