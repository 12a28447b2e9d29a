"""Instance-level evaluation: IoU matrix, optimal matching, accuracy(tau).

Predictions and ground truth are matched one-to-one (a prediction cannot
serve two ground-truth instances) by maximizing the number of pairs with
IoU >= tau, ties broken toward the largest total matched IoU; accuracy is
TP / (TP + FN + FP). The IoU matrix is built sparsely from a joint label
histogram in one pass over the volume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .volumes import LabelVolume


@dataclass
class IouMatrix:
    """Sparse IoU entries keyed by (gt_id, pred_id); zero-intersection pairs
    are omitted. Sizes are voxel counts per instance."""

    gt_ids: np.ndarray
    pred_ids: np.ndarray
    entries: dict
    gt_sizes: dict
    pred_sizes: dict

    @property
    def n_gt(self) -> int:
        return len(self.gt_ids)

    @property
    def n_pred(self) -> int:
        return len(self.pred_ids)


@dataclass
class TauReport:
    """Matching outcome at a single IoU threshold."""

    tau: float
    tp: int
    fp: int
    fn: int
    accuracy: float
    matched_pairs: list  # (gt_id, pred_id, iou)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "accuracy": self.accuracy,
            "matched_pairs": [[int(g), int(p), float(v)] for g, p, v in self.matched_pairs],
        }


@dataclass
class MatchReport:
    """Per-threshold matching reports over a shared IoU matrix."""

    taus: tuple
    per_tau: dict  # tau -> TauReport

    def accuracy(self, tau: float) -> float:
        return self.per_tau[tau].accuracy

    def to_dict(self) -> dict:
        return {
            "taus": list(self.taus),
            "reports": {str(t): r.to_dict() for t, r in self.per_tau.items()},
        }

    def csv_rows(self) -> list[str]:
        """Accuracy table in threshold-per-column layout."""
        header = "metric," + ",".join(f"{t:g}" for t in self.taus)
        acc = "accuracy," + ",".join(f"{self.per_tau[t].accuracy:.3f}" for t in self.taus)
        return [header, acc]


def iou_matrix(gt: LabelVolume, pred: LabelVolume) -> IouMatrix:
    """Joint-histogram IoU of every overlapping (gt, pred) instance pair."""
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: {gt.shape} vs {pred.shape}")
    g = gt.data.ravel().astype(np.int64)
    p = pred.data.ravel().astype(np.int64)
    sel = (g > 0) | (p > 0)
    g, p = g[sel], p[sel]
    gt_ids, gi = np.unique(g, return_inverse=True)
    pred_ids, pi = np.unique(p, return_inverse=True)
    codes = gi.astype(np.int64) * len(pred_ids) + pi
    pair_codes, pair_counts = np.unique(codes, return_counts=True)
    pair_g = gt_ids[pair_codes // len(pred_ids)]
    pair_p = pred_ids[pair_codes % len(pred_ids)]

    gt_sizes = {int(i): 0 for i in gt_ids if i > 0}
    pred_sizes = {int(i): 0 for i in pred_ids if i > 0}
    for gg, pp, c in zip(pair_g, pair_p, pair_counts):
        if gg > 0:
            gt_sizes[int(gg)] += int(c)
        if pp > 0:
            pred_sizes[int(pp)] += int(c)

    entries = {}
    for gg, pp, c in zip(pair_g, pair_p, pair_counts):
        if gg > 0 and pp > 0:
            union = gt_sizes[int(gg)] + pred_sizes[int(pp)] - int(c)
            entries[(int(gg), int(pp))] = int(c) / union
    return IouMatrix(
        gt_ids=np.asarray(sorted(gt_sizes), dtype=np.int64),
        pred_ids=np.asarray(sorted(pred_sizes), dtype=np.int64),
        entries=entries,
        gt_sizes=gt_sizes,
        pred_sizes=pred_sizes,
    )


def hungarian_match(ious: IouMatrix, tau: float) -> TauReport:
    """Optimal one-to-one matching restricted to pairs with IoU >= tau.

    Solved as a rectangular assignment over admissible pairs with profit
    B + iou (B large enough that match count dominates total IoU), so the
    result maximizes TP first and total matched IoU second.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must be in (0,1], got {tau}")
    admissible = {k: v for k, v in ious.entries.items() if v >= tau}
    n_gt, n_pred = ious.n_gt, ious.n_pred
    matched = []
    if admissible:
        rows = sorted({g for g, _ in admissible})
        cols = sorted({p for _, p in admissible})
        ri = {g: i for i, g in enumerate(rows)}
        ci = {p: j for j, p in enumerate(cols)}
        bonus = len(rows) + len(cols) + 10.0
        profit = np.zeros((len(rows), len(cols)))
        for (g, p), v in admissible.items():
            profit[ri[g], ci[p]] = bonus + v
        rr, cc = linear_sum_assignment(profit, maximize=True)
        for r, c in zip(rr, cc):
            if profit[r, c] > 0:
                g, p = rows[r], cols[c]
                matched.append((g, p, admissible[(g, p)]))
    matched.sort()
    tp = len(matched)
    fp = n_pred - tp
    fn = n_gt - tp
    denom = tp + fp + fn
    return TauReport(tau, tp, fp, fn, tp / denom if denom else 1.0, matched)


def accuracy_curve(gt: LabelVolume, pred: LabelVolume, taus) -> MatchReport:
    """Matching reports for several thresholds from one shared IoU matrix."""
    taus = tuple(float(t) for t in taus)
    if not taus:
        raise ValueError("need at least one tau")
    for t in taus:
        if not 0.0 < t <= 1.0:
            raise ValueError(f"tau must be in (0,1], got {t}")
    ious = iou_matrix(gt, pred)
    return MatchReport(taus, {t: hungarian_match(ious, t) for t in taus})
