"""Evaluation: point-wise semantic IoU and instance-level average precision.

Semantic IoU ignores points whose ground truth carries the -1 sentinel.
Instance AP uses greedy score-ordered matching against unmatched ground
truth of the same class, evaluated over a sweep of IoU thresholds and
averaged (detection-style, all-point PR interpolation).
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError


@dataclass
class InstanceRecord:
    class_id: int
    indices: np.ndarray
    score: float = 1.0

    def __post_init__(self):
        self.indices = np.unique(np.asarray(self.indices, dtype=np.int64))
        if len(self.indices) == 0:
            raise InputError("instance with empty point set")


DEFAULT_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.951, 0.05), 2))


@dataclass
class EvalReport:
    classes: list
    per_class_iou: dict = field(default_factory=dict)
    miou: float = float("nan")
    evaluated_classes: list = field(default_factory=list)
    per_class_ap: dict = field(default_factory=dict)
    mean_ap: float = float("nan")
    thresholds: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)   # class -> {tau: {tp, fp, fn}}
    per_instance_iou: float = None

    def to_json(self) -> dict:
        def _clean(x):
            return None if x is None or (isinstance(x, float) and np.isnan(x)) else float(x)

        return {
            "classes": list(self.classes),
            "semantic": {
                "per_class_iou": {str(k): _clean(v) for k, v in self.per_class_iou.items()},
                "miou": _clean(self.miou),
                "evaluated_classes": [int(c) for c in self.evaluated_classes],
            },
            "instance": {
                "per_class_ap": {str(k): _clean(v) for k, v in self.per_class_ap.items()},
                "map": _clean(self.mean_ap),
                "thresholds": [float(t) for t in self.thresholds],
                "counts": {
                    str(c): {f"{t:.2f}": dict(v) for t, v in taus.items()}
                    for c, taus in self.counts.items()
                },
            },
            "label_quality": {"per_instance_iou": _clean(self.per_instance_iou)},
        }

    def to_table(self) -> str:
        rows = [f"{'class':<14}{'AP':>10}{'IoU':>10}"]
        for i, name in enumerate(self.classes):
            ap = self.per_class_ap.get(i)
            iou_v = self.per_class_iou.get(i)
            rows.append(
                f"{name:<14}"
                f"{'' if ap is None else format(100 * ap, '.2f'):>10}"
                f"{'' if iou_v is None else format(100 * iou_v, '.3f'):>10}"
            )
        mean_ap = "" if np.isnan(self.mean_ap) else format(100 * self.mean_ap, ".2f")
        miou = "" if np.isnan(self.miou) else format(100 * self.miou, ".3f")
        rows.append(f"{'mean':<14}{mean_ap:>10}{miou:>10}")
        return "\n".join(rows)

    def save(self, json_path, table_path=None) -> None:
        Path(json_path).write_text(json.dumps(self.to_json(), indent=2))
        if table_path is not None:
            Path(table_path).write_text(self.to_table() + "\n")


def semantic_miou(pred, gt, num_classes: int):
    """Per-class point IoU and its mean; gt == -1 points are ignored.

    Classes absent from both prediction and ground truth (among the scored
    points) are excluded from the mean. Returns (per_class, miou, evaluated)
    where miou is NaN when nothing was evaluable.
    """
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise InputError(f"length mismatch: pred {pred.shape} vs gt {gt.shape}")
    scored = gt != -1
    pred_s, gt_s = pred[scored], gt[scored]
    per_class, evaluated = {}, []
    for c in range(num_classes):
        tp = int(np.sum((pred_s == c) & (gt_s == c)))
        fp = int(np.sum((pred_s == c) & (gt_s != c)))
        fn = int(np.sum((pred_s != c) & (gt_s == c)))
        if tp + fp + fn == 0:
            per_class[c] = None
            continue
        per_class[c] = tp / (tp + fp + fn)
        evaluated.append(c)
    miou = (
        float(np.mean([per_class[c] for c in evaluated])) if evaluated else float("nan")
    )
    return per_class, miou, evaluated


def _set_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = len(np.intersect1d(a, b, assume_unique=True))
    union = len(a) + len(b) - inter
    return inter / union if union else 0.0


def _ap_from_matches(tp_flags, n_gt: int) -> float:
    """All-point-interpolated area under the PR curve."""
    if n_gt == 0:
        return float("nan")
    if len(tp_flags) == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~np.asarray(tp_flags, dtype=bool))
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # monotone non-increasing envelope from the right
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    area = 0.0
    for r, p in zip(recall, env):
        area += (r - prev_r) * p
        prev_r = r
    return float(area)


def instance_ap(predictions, ground_truth, thresholds=DEFAULT_THRESHOLDS, ignore_indices=None):
    """Average precision per class over a sweep of IoU thresholds.

    Predictions sort by descending score (ties keep input order) and match
    greedily: each takes the unmatched same-class GT instance with the
    highest point IoU, counting as TP when that IoU reaches the threshold.
    Points listed in ``ignore_indices`` are removed from predicted sets
    before matching. Classes with no GT instances are not evaluated.

    Returns (per_class_ap, mean_ap, counts) with counts[class][tau] holding
    tp/fp/fn.
    """
    thresholds = [float(t) for t in thresholds]
    if any(not (0.0 < t <= 1.0) for t in thresholds):
        raise InputError("thresholds must lie in (0, 1]")
    ignore = (
        np.unique(np.asarray(ignore_indices, dtype=np.int64))
        if ignore_indices is not None and len(ignore_indices)
        else None
    )

    def _effective(inst):
        if ignore is None:
            return inst.indices
        return np.setdiff1d(inst.indices, ignore, assume_unique=True)

    classes = sorted({g.class_id for g in ground_truth})
    per_class_ap, counts = {}, {}
    for c in classes:
        gts = [g for g in ground_truth if g.class_id == c]
        preds = [p for p in predictions if p.class_id == c]
        order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
        pred_sets = [_effective(preds[i]) for i in order]
        gt_sets = [g.indices for g in gts]

        ap_per_tau = []
        counts[c] = {}
        for tau in thresholds:
            matched = [False] * len(gt_sets)
            tp_flags = []
            for pset in pred_sets:
                best_iou, best_j = 0.0, -1
                for j, gset in enumerate(gt_sets):
                    if matched[j]:
                        continue
                    v = _set_iou(pset, gset)
                    if v > best_iou:
                        best_iou, best_j = v, j
                if best_j >= 0 and best_iou >= tau:
                    matched[best_j] = True
                    tp_flags.append(True)
                else:
                    tp_flags.append(False)
            tp = sum(tp_flags)
            counts[c][tau] = {
                "tp": tp,
                "fp": len(tp_flags) - tp,
                "fn": len(gt_sets) - tp,
            }
            ap_per_tau.append(_ap_from_matches(tp_flags, len(gt_sets)))
        per_class_ap[c] = float(np.mean(ap_per_tau))
    mean_ap = (
        float(np.mean([per_class_ap[c] for c in classes])) if classes else float("nan")
    )
    return per_class_ap, mean_ap, counts


def instances_from_labels(class_ids, instance_ids, scores=None):
    """Group per-point labels into InstanceRecord objects (ids >= 0 only)."""
    class_ids = np.asarray(class_ids)
    instance_ids = np.asarray(instance_ids)
    out = []
    for inst in np.unique(instance_ids):
        if inst < 0:
            continue
        member = np.nonzero(instance_ids == inst)[0]
        cls = int(class_ids[member[0]])
        if cls < 0:
            continue
        score = 1.0 if scores is None else float(np.mean(scores[member]))
        out.append(InstanceRecord(class_id=cls, indices=member, score=score))
    return out


def label_quality(pseudo_class, pseudo_inst, gt_class, gt_inst, num_classes: int):
    """Semantic IoU of pseudo labels vs GT plus mean per-instance IoU.

    Each pseudo instance is scored against the GT instance sharing its id
    when one exists, otherwise against its best-overlapping GT instance.
    """
    per_class, miou, evaluated = semantic_miou(pseudo_class, gt_class, num_classes)
    gt_sets = {}
    gt_inst = np.asarray(gt_inst)
    for inst in np.unique(gt_inst):
        if inst >= 0:
            gt_sets[int(inst)] = np.nonzero(gt_inst == inst)[0]

    pseudo_inst = np.asarray(pseudo_inst)
    per_instance = []
    for inst in np.unique(pseudo_inst):
        if inst < 0:
            continue
        member = np.nonzero(pseudo_inst == inst)[0]
        if int(inst) in gt_sets:
            per_instance.append(_set_iou(member, gt_sets[int(inst)]))
        elif gt_sets:
            per_instance.append(max(_set_iou(member, g) for g in gt_sets.values()))
    mean_inst = float(np.mean(per_instance)) if per_instance else None
    return per_class, miou, evaluated, mean_inst


def evaluate(
    pred_labels,
    gt_labels,
    class_names,
    thresholds=DEFAULT_THRESHOLDS,
) -> EvalReport:
    """Full report: semantic IoU, instance AP, and label-quality summary.

    ``pred_labels`` / ``gt_labels`` are parallel lists of PseudoLabelSet,
    one per frame; instance ids are namespaced per frame before matching.
    """
    num_classes = len(class_names)
    pred_cat, gt_cat = [], []
    pred_inst_cat, gt_inst_cat = [], []
    pred_instances, gt_instances = [], []
    ignore_all = []
    offset = 0
    for k, (pl, gl) in enumerate(zip(pred_labels, gt_labels)):
        n = len(gl.class_ids)
        if len(pl.class_ids) != n:
            raise InputError("prediction/GT frame lengths differ")
        pred_cat.append(pl.class_ids)
        gt_cat.append(gl.class_ids)
        # namespace per-frame instance ids so frames never collide
        base = np.int64(k) * np.int64(1_000_000)
        pred_inst_cat.append(
            np.where(pl.instance_ids >= 0, pl.instance_ids.astype(np.int64) + base, -1)
        )
        gt_inst_cat.append(
            np.where(gl.instance_ids >= 0, gl.instance_ids.astype(np.int64) + base, -1)
        )
        for rec in instances_from_labels(pl.class_ids, pl.instance_ids, pl.confidence):
            pred_instances.append(
                InstanceRecord(rec.class_id, rec.indices + offset, rec.score)
            )
        for rec in instances_from_labels(gl.class_ids, gl.instance_ids):
            gt_instances.append(
                InstanceRecord(rec.class_id, rec.indices + offset, rec.score)
            )
        ignore_all.append(np.nonzero(gl.class_ids == -1)[0] + offset)
        offset += n

    pred_flat = np.concatenate(pred_cat) if pred_cat else np.empty(0, dtype=np.int64)
    gt_flat = np.concatenate(gt_cat) if gt_cat else np.empty(0, dtype=np.int64)
    per_class, miou, evaluated, mean_inst = label_quality(
        pred_flat,
        np.concatenate(pred_inst_cat) if pred_inst_cat else [],
        gt_flat,
        np.concatenate(gt_inst_cat) if gt_inst_cat else [],
        num_classes,
    )
    per_class_ap, mean_ap, counts = instance_ap(
        pred_instances,
        gt_instances,
        thresholds,
        ignore_indices=np.concatenate(ignore_all) if ignore_all else None,
    )
    return EvalReport(
        classes=list(class_names),
        per_class_iou=per_class,
        miou=miou,
        evaluated_classes=evaluated,
        per_class_ap=per_class_ap,
        mean_ap=mean_ap,
        thresholds=list(thresholds),
        counts=counts,
        per_instance_iou=mean_inst,
    )
