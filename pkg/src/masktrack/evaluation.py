"""YouTube-VIS style evaluation: spatio-temporal track IoU, COCO-style
101-point AP over IoU thresholds 0.50:0.05:0.95, and AR@1 / AR@10."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .maskcore import RleMask, area, intersection_area

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
MAX_DETS = (1, 10, 100)


class EvalError(ValueError):
    pass


@dataclass
class ApReport:
    mAP: float
    AP50: float
    AP75: float
    AR1: float
    AR10: float
    per_class: dict[int, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        d["per_class"] = {str(k): v for k, v in sorted(self.per_class.items())}
        return d

    def table(self, names: Optional[Mapping[int, str]] = None) -> str:
        head = f"{'mAP':>7} {'AP50':>7} {'AP75':>7} {'AR1':>7} {'AR10':>7}"
        row = " ".join(f"{100 * v:7.1f}" for v in (self.mAP, self.AP50, self.AP75, self.AR1, self.AR10))
        lines = [head, row]
        if self.per_class:
            lines.append("")
            lines.append(f"{'class':<16} {'AP':>7}")
            for c, v in sorted(self.per_class.items()):
                label = names.get(c, str(c)) if names else str(c)
                lines.append(f"{label:<16} {100 * v:7.1f}")
        return "\n".join(lines)


def _seq(masks) -> dict[int, RleMask]:
    """Normalise per-frame masks (list with None holes, or frame dict)."""
    if isinstance(masks, Mapping):
        items = masks.items()
    else:
        items = enumerate(masks)
    out = {}
    for t, m in items:
        if m is None:
            continue
        if isinstance(m, Mapping):
            m = RleMask.from_json(m)
        out[int(t)] = m
    return out


def track_iou(pred, gt) -> float:
    """sum_t |p_t & g_t| / sum_t |p_t | g_t|; absent masks count as empty."""
    p = _seq(getattr(pred, "masks", pred))
    g = _seq(getattr(gt, "masks", gt))
    inter = 0
    union = 0
    for t in set(p) | set(g):
        a, b = p.get(t), g.get(t)
        if a is not None and b is not None:
            i = intersection_area(a, b)
            inter += i
            union += area(a) + area(b) - i
        elif a is not None:
            union += area(a)
        else:
            union += area(b)
    return inter / union if union else 0.0


def _idkey(x):
    return (0, x, "") if isinstance(x, (int, np.integer)) else (1, 0, str(x))


def _load_gt(gt: Mapping):
    cats = {int(c["id"]) for c in gt.get("categories", [])}
    tracks = []
    seen = set()
    for a in gt["annotations"]:
        key = (a["video_id"], a["id"])
        if key in seen:
            raise EvalError(f"duplicate ground-truth track {a['id']} in video {a['video_id']}")
        seen.add(key)
        cat = int(a["category_id"])
        if cats and cat not in cats:
            raise EvalError(f"ground truth uses unknown category {cat}")
        tracks.append({"video_id": a["video_id"], "id": a["id"], "category_id": cat,
                       "masks": _seq(a["segmentations"])})
    return cats or {t["category_id"] for t in tracks}, tracks


def _load_pred(preds: Sequence[Mapping], cats):
    out = []
    seen = set()
    for k, p in enumerate(preds):
        pid = p.get("id", k)
        key = (p["video_id"], pid)
        if key in seen:
            raise EvalError(f"duplicate prediction id {pid} in video {p['video_id']}")
        seen.add(key)
        cat = int(p["category_id"])
        if cat not in cats:
            raise EvalError(f"prediction uses unknown category {cat}")
        out.append({"video_id": p["video_id"], "id": pid, "category_id": cat, "score": float(p["score"]),
                    "masks": _seq(p["segmentations"])})
    return out


def _match(dts, gts, ious, thr):
    """Greedy, score-ordered: each prediction takes the unmatched ground truth
    with the highest IoU >= thr (first in order on ties)."""
    gt_taken = [False] * len(gts)
    dt_tp = []
    for d in range(len(dts)):
        best, best_iou = -1, -1.0
        for g in range(len(gts)):
            if gt_taken[g] or ious[d, g] < thr:
                continue
            if ious[d, g] > best_iou:
                best, best_iou = g, ious[d, g]
        if best >= 0:
            gt_taken[best] = True
        dt_tp.append(best >= 0)
    return dt_tp


def _ap101(tp: np.ndarray, n_gt: int) -> float:
    if n_gt == 0:
        return float("nan")
    if tp.size == 0:
        return 0.0
    tps = np.cumsum(tp)
    fps = np.cumsum(~tp)
    recall = tps / n_gt
    precision = tps / (tps + fps)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(q.mean())


def evaluate(predictions: Sequence[Mapping], gt: Mapping) -> ApReport:
    """Evaluate YouTube-VIS style result records against an annotation dict
    ({"videos", "categories", "annotations"})."""
    cats, gts = _load_gt(gt)
    dts = _load_pred(predictions, cats)

    by_vc_gt = defaultdict(list)
    for g in gts:
        by_vc_gt[(g["video_id"], g["category_id"])].append(g)
    by_vc_dt = defaultdict(list)
    for d in dts:
        by_vc_dt[(d["video_id"], d["category_id"])].append(d)
    for v in by_vc_dt.values():
        v.sort(key=lambda d: (-d["score"], _idkey(d["id"])))
    for v in by_vc_gt.values():
        v.sort(key=lambda g: _idkey(g["id"]))

    per_class_ap = {}
    ap_at = defaultdict(dict)  # class -> thr -> AP
    recall_at = {k: defaultdict(dict) for k in MAX_DETS}
    for c in sorted(cats):
        keys = sorted({k for k in by_vc_gt if k[1] == c} | {k for k in by_vc_dt if k[1] == c},
                      key=lambda k: _idkey(k[0]))
        n_gt = sum(len(by_vc_gt.get(k, [])) for k in keys)
        if n_gt == 0:
            continue
        cache = {}
        for k in keys:
            dl, gl = by_vc_dt.get(k, []), by_vc_gt.get(k, [])
            cache[k] = np.array([[track_iou(d["masks"], g["masks"]) for g in gl] for d in dl]).reshape(len(dl), len(gl))
        for thr in IOU_THRESHOLDS:
            for max_det in MAX_DETS:
                scores, flags, matched = [], [], 0
                for k in keys:
                    dl = by_vc_dt.get(k, [])[:max_det]
                    gl = by_vc_gt.get(k, [])
                    tp = _match(dl, gl, cache[k][:len(dl)], thr)
                    matched += sum(tp)
                    for d, f in zip(dl, tp):
                        scores.append((-d["score"], _idkey(k[0]), _idkey(d["id"])))
                        flags.append(f)
                recall_at[max_det][c][thr] = matched / n_gt
                if max_det == MAX_DETS[-1]:
                    order = sorted(range(len(scores)), key=lambda i: scores[i])
                    ap_at[c][thr] = _ap101(np.array([flags[i] for i in order], dtype=bool), n_gt)
        per_class_ap[c] = float(np.mean([ap_at[c][t] for t in IOU_THRESHOLDS]))

    if not per_class_ap:
        return ApReport(0.0, 0.0, 0.0, 0.0, 0.0, {})
    classes = sorted(per_class_ap)

    def mean_over(vals):
        return float(np.mean(vals))

    return ApReport(
        mAP=mean_over([per_class_ap[c] for c in classes]),
        AP50=mean_over([ap_at[c][0.5] for c in classes]),
        AP75=mean_over([ap_at[c][0.75] for c in classes]),
        AR1=mean_over([recall_at[1][c][t] for c in classes for t in IOU_THRESHOLDS]),
        AR10=mean_over([recall_at[10][c][t] for c in classes for t in IOU_THRESHOLDS]),
        per_class=per_class_ap,
    )


def gt_annotation(videos, categories: Mapping[int, str]) -> dict:
    """Annotation dict for synthetic videos (the GT file format)."""
    vids, anns = [], []
    for v in videos:
        cfg = v.config
        vids.append({"id": cfg.video_id, "length": cfg.n_frames, "height": cfg.height, "width": cfg.width})
        for g in v.gt:
            anns.append({
                "id": g.track_id,
                "video_id": cfg.video_id,
                "category_id": g.category,
                "segmentations": [g.masks[t].to_json() if t in g.masks else None for t in range(cfg.n_frames)],
            })
    return {
        "videos": vids,
        "categories": [{"id": k, "name": n} for k, n in sorted(categories.items())],
        "annotations": anns,
    }
