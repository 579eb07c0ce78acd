"""Mask-pair training data: degrade ground-truth masks two ways, label the pair
by which copy has higher IoU with the truth, and pack crops into tensors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from ..maskcore import crop_resize, dilate, erode, mask_iou, translate, union_bbox
from ..synth import perturb_boundary

KINDS = ("identity", "dilate", "erode", "holes", "jitter", "shift", "blob_add", "blob_remove")
CROP_EXPAND = 0.1


@dataclass
class PerturbConfig:
    kinds: tuple[str, ...] = KINDS
    strength: tuple[float, float] = (0.1, 0.5)
    margin: float = 0.02
    min_area: int = 16

    def __post_init__(self):
        bad = set(self.kinds) - set(KINDS)
        if bad:
            raise ValueError(f"unknown degradation kinds {sorted(bad)}")


@dataclass
class PairSample:
    image: np.ndarray
    mask_a: np.ndarray
    mask_b: np.ndarray
    gt_mask: np.ndarray
    label: int  # 1 when mask_a is the better one
    iou_a: float
    iou_b: float
    kinds: tuple[str, str] = ("", "")


@dataclass
class PairStats:
    kept: int = 0
    discarded: int = 0
    reasons: dict = field(default_factory=dict)


def _ellipse(shape, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    return ((yy + 0.5 - cy) / max(ry, 0.5)) ** 2 + ((xx + 0.5 - cx) / max(rx, 0.5)) ** 2 <= 1.0


def _boundary_point(mask, rng):
    edge = mask & ~ndimage.binary_erosion(mask, border_value=0)
    ys, xs = np.nonzero(edge)
    k = int(rng.integers(len(ys)))
    return ys[k], xs[k]


def degrade_mask(mask: np.ndarray, kind: str, strength: float, rng: np.random.Generator) -> np.ndarray:
    """One synthetic mask error of the given kind; ``strength`` is in (0, 1]."""
    mask = np.asarray(mask, dtype=bool)
    radius = math.sqrt(mask.sum() / math.pi)
    k = max(1, int(round(strength * radius * 0.6)))
    if kind == "identity":
        return mask.copy()
    if kind == "dilate":
        return dilate(mask, k)
    if kind == "erode":
        out = erode(mask, k)
        return out if out.any() else mask.copy()
    if kind == "holes":
        out = mask.copy()
        ys, xs = np.nonzero(mask)
        for _ in range(int(rng.integers(1, 4))):
            i = int(rng.integers(len(ys)))
            r = strength * radius * rng.uniform(0.4, 0.8)
            out &= ~_ellipse(mask.shape, ys[i] + 0.5, xs[i] + 0.5, r, r)
        return out if out.any() else mask.copy()
    if kind == "jitter":
        return perturb_boundary(mask, strength * 0.5, rng)
    if kind == "shift":
        ang = rng.uniform(0, 2 * np.pi)
        d = max(1.0, strength * radius * 0.6)
        return translate(mask, int(round(d * np.sin(ang))), int(round(d * np.cos(ang))))
    if kind in ("blob_add", "blob_remove"):
        cy, cx = _boundary_point(mask, rng)
        r = strength * radius * rng.uniform(0.5, 1.0)
        blob = _ellipse(mask.shape, cy + 0.5, cx + 0.5, r, r * rng.uniform(0.6, 1.4))
        out = (mask | blob) if kind == "blob_add" else (mask & ~blob)
        return out if out.any() else mask.copy()
    raise ValueError(f"unknown degradation kind {kind!r}")


def generate_pairs(
    gt_masks: Iterable[tuple[np.ndarray, np.ndarray]],
    config: Optional[PerturbConfig] = None,
    seed: int = 0,
    stats: Optional[PairStats] = None,
) -> list[PairSample]:
    """Two independent degradations per ground-truth mask, labelled by IoU.

    Pairs whose IoU gap is below ``config.margin`` are discarded (counted in
    ``stats`` when given).
    """
    config = config or PerturbConfig()
    rng = np.random.default_rng(seed)
    stats = stats if stats is not None else PairStats()
    out = []
    for image, gt in gt_masks:
        gt = np.asarray(gt, dtype=bool)
        kinds = [config.kinds[int(rng.integers(len(config.kinds)))] for _ in range(2)]
        strengths = rng.uniform(*config.strength, size=2)
        sub = np.random.default_rng(rng.integers(2**63))
        if gt.sum() < config.min_area:
            stats.discarded += 1
            stats.reasons["small"] = stats.reasons.get("small", 0) + 1
            continue
        a = degrade_mask(gt, kinds[0], strengths[0], sub)
        b = degrade_mask(gt, kinds[1], strengths[1], sub)
        if not a.any() or not b.any():
            stats.discarded += 1
            stats.reasons["empty"] = stats.reasons.get("empty", 0) + 1
            continue
        ia, ib = mask_iou(a, gt), mask_iou(b, gt)
        if abs(ia - ib) < config.margin:
            stats.discarded += 1
            stats.reasons["ambiguous"] = stats.reasons.get("ambiguous", 0) + 1
            continue
        out.append(PairSample(image, a, b, gt, int(ia > ib), ia, ib, tuple(kinds)))
        stats.kept += 1
    return out


def pair_input(image: np.ndarray, mask_a: np.ndarray, mask_b: np.ndarray, size: int) -> np.ndarray:
    """(8, size, size) selector input cropped around both candidates."""
    box = union_bbox([mask_a, mask_b], expand=CROP_EXPAND)
    return crop_resize(image, mask_a, mask_b, box, size)


@dataclass
class PairTensors:
    """Compact crop storage: quantised RGB plus two binary mask planes."""

    rgb: np.ndarray  # (N, 3, S, S) uint8
    masks: np.ndarray  # (N, 2, S, S) bool
    labels: np.ndarray  # (N,) float64, 1 = first mask better

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def size(self) -> int:
        return self.rgb.shape[-1]

    def batch(self, idx, swap=None, dtype=np.float32):
        """Float inputs and labels for ``idx``; ``swap`` flips the mask order per sample."""
        idx = np.asarray(idx)
        rgb = self.rgb[idx].astype(dtype) / 255.0
        m = self.masks[idx].astype(dtype)
        a, b = m[:, 0:1], m[:, 1:2]
        y = self.labels[idx].copy()
        if swap is not None:
            swap = np.asarray(swap, dtype=bool)
            s = swap[:, None, None, None]
            a, b = np.where(s, b, a), np.where(s, a, b)
            y = np.where(swap, 1.0 - y, y)
        return np.concatenate([rgb, a, rgb, b], axis=1), y

    def subset(self, idx) -> "PairTensors":
        idx = np.asarray(idx, dtype=np.intp)
        return PairTensors(self.rgb[idx], self.masks[idx], self.labels[idx])

    def save(self, path) -> None:
        np.savez_compressed(path, rgb=self.rgb, masks=self.masks, labels=self.labels)

    @classmethod
    def load(cls, path) -> "PairTensors":
        with np.load(path) as d:
            return cls(d["rgb"], d["masks"], d["labels"])


def to_tensors(pairs: Sequence[PairSample], size: int) -> PairTensors:
    n = len(pairs)
    rgb = np.zeros((n, 3, size, size), dtype=np.uint8)
    masks = np.zeros((n, 2, size, size), dtype=bool)
    labels = np.zeros(n)
    for i, p in enumerate(pairs):
        x = pair_input(p.image, p.mask_a, p.mask_b, size)
        rgb[i] = np.clip(np.round(x[:3] * 255), 0, 255).astype(np.uint8)
        masks[i, 0] = x[3] > 0.5
        masks[i, 1] = x[7] > 0.5
        labels[i] = p.label
    return PairTensors(rgb, masks, labels)


def gt_from_videos(videos, min_area: int = 16) -> list[tuple[np.ndarray, np.ndarray]]:
    """(frame image, visible mask) for every ground-truth object instance."""
    from ..maskcore import rle_decode

    out = []
    for v in videos:
        for g in v.gt:
            for t in sorted(g.masks):
                if g.masks[t].area >= min_area:
                    out.append((v.images[t], rle_decode(g.masks[t])))
    return out
