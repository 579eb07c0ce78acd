"""Online tracker: associate per-frame segmentation proposals with propagated
track masks, keep the better mask of each matched pair, admit new objects that
do not overlap an existing object of the same class, and propagate."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Protocol, Sequence

import numpy as np

from .assign import associate
from .maskcore import RleMask, area, as_dense, intersection_area, mask_iou, rle_decode, rle_encode, translate

log = logging.getLogger(__name__)


class SequenceError(RuntimeError):
    pass


@dataclass
class InstanceProposal:
    category: int
    score: float
    mask: RleMask
    frame: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    def to_json(self) -> dict:
        return {
            "frame": self.frame,
            "category_id": self.category,
            "score": self.score,
            "segmentation": self.mask.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "InstanceProposal":
        seg = d["segmentation"]
        mask = seg if isinstance(seg, RleMask) else RleMask.from_json(seg)
        return cls(int(d["category_id"]), float(d["score"]), mask, int(d["frame"]))


@dataclass
class Track:
    track_id: int
    category: int
    score: float
    birth: int
    masks: dict[int, RleMask] = field(default_factory=dict)
    sources: dict[int, str] = field(default_factory=dict)
    n_scores: int = 1
    empty_streak: int = 0

    @property
    def frames(self) -> list[int]:
        return sorted(self.masks)

    def add_score(self, s: float) -> None:
        self.n_scores += 1
        self.score += (s - self.score) / self.n_scores

    def to_result(self, video_id, n_frames: int) -> dict:
        segs = []
        for t in range(n_frames):
            m = self.masks.get(t)
            segs.append(m.to_json() if m is not None and m.area > 0 else None)
        return {
            "video_id": video_id,
            "id": self.track_id,
            "category_id": self.category,
            "score": self.score,
            "segmentations": segs,
        }

    @classmethod
    def from_result(cls, d: dict) -> "Track":
        masks = {t: RleMask.from_json(s) for t, s in enumerate(d["segmentations"]) if s is not None}
        birth = min(masks) if masks else 0
        return cls(int(d.get("id", 0)), int(d["category_id"]), float(d["score"]), birth, masks,
                   {t: "result" for t in masks})


@dataclass
class PipelineConfig:
    score_threshold: float = 0.5
    iou_floor: float = 0.1
    max_objects: int = 15
    overlap_tolerance: float = 0.0  # allowed same-class overlap, fraction of candidate area
    patience: Optional[int] = None  # retire after this many consecutive empty masks; None = never
    selector: str = "msn"

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError("score_threshold must lie in [0, 1]")
        if not 0.0 <= self.iou_floor < 1.0:
            raise ValueError("iou_floor must lie in [0, 1)")
        if self.max_objects < 0:
            raise ValueError("max_objects must be non-negative")
        if not 0.0 <= self.overlap_tolerance <= 1.0:
            raise ValueError("overlap_tolerance must lie in [0, 1]")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 or None")
        if self.selector not in SELECTOR_NAMES:
            raise ValueError(f"selector must be one of {SELECTOR_NAMES}")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class TrackerState:
    tracks: list[Track]
    next_id: int
    cursor: int
    config: PipelineConfig
    direction: int = 1
    retired: list[Track] = field(default_factory=list)

    def all_tracks(self) -> list[Track]:
        return sorted(self.tracks + self.retired, key=lambda tr: tr.track_id)


# -- selectors ------------------------------------------------------------------------
# A selector gets (image, segmentation mask, propagated mask, frame) as dense
# masks and returns True to keep the segmentation mask.

SELECTOR_NAMES = ("msn", "heuristic", "oracle", "segmentation", "propagation")


class Selector(Protocol):
    def __call__(self, image: np.ndarray, seg: np.ndarray, prop: np.ndarray, frame: int) -> bool: ...


class MsnSelector:
    def __init__(self, model):
        self.model = model

    def __call__(self, image, seg, prop, frame):
        from .msn.select import select

        return select(self.model, image, seg, prop).winner == "A"


class HeuristicSelector:
    def __call__(self, image, seg, prop, frame):
        from .msn.select import heuristic_select

        return heuristic_select(image, seg, prop) == "A"


class OracleSelector:
    """Keeps whichever candidate has the higher best-IoU against any
    ground-truth mask of the frame; ties keep the segmentation mask."""

    def __init__(self, gt_masks: Mapping[int, Sequence[np.ndarray]]):
        self.gt_masks = gt_masks

    def _best(self, m, frame):
        return max((mask_iou(m, g) for g in self.gt_masks.get(frame, ())), default=0.0)

    def __call__(self, image, seg, prop, frame):
        return self._best(seg, frame) >= self._best(prop, frame)


def take_segmentation(image, seg, prop, frame):
    return True


def take_propagation(image, seg, prop, frame):
    return False


def make_selector(name: str, model=None, gt_masks=None) -> Selector:
    if name == "msn":
        if model is None:
            raise ValueError("selector 'msn' needs a trained model")
        return MsnSelector(model)
    if name == "heuristic":
        return HeuristicSelector()
    if name == "oracle":
        if gt_masks is None:
            raise ValueError("selector 'oracle' needs ground-truth masks")
        return OracleSelector(gt_masks)
    if name == "segmentation":
        return take_segmentation
    if name == "propagation":
        return take_propagation
    raise ValueError(f"unknown selector {name!r}")


# -- propagators ----------------------------------------------------------------------
# A propagator maps (prev image, cur image, {track id: prev mask}, prev frame,
# cur frame) to {track id: predicted mask} on the same canvas.

class Propagator(Protocol):
    def __call__(self, prev_image, cur_image, prev_masks: Mapping[int, np.ndarray], prev_frame: int,
                 cur_frame: int) -> dict[int, np.ndarray]: ...


def _estimate_shift(prev_image, cur_image, mask, radius, context):
    from scipy import ndimage

    h, w = mask.shape
    support = ndimage.binary_dilation(mask, iterations=context) if context else mask
    ys, xs = np.nonzero(support)
    ref = prev_image[ys, xs].reshape(len(ys), -1)
    best, best_shift = -np.inf, (0, 0)
    shifts = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    shifts.sort(key=lambda s: (abs(s[0]) + abs(s[1]), s))
    min_valid = max(4, len(ys) // 4)
    for dy, dx in shifts:
        ty, tx = ys + dy, xs + dx
        ok = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
        if ok.sum() < min_valid:
            continue
        a = ref[ok].ravel()
        b = cur_image[ty[ok], tx[ok]].reshape(int(ok.sum()), -1).ravel()
        a = a - a.mean()
        b = b - b.mean()
        denom = np.sqrt((a * a).sum() * (b * b).sum())
        corr = float((a * b).sum() / denom) if denom > 1e-12 else 0.0
        if corr > best:
            best, best_shift = corr, (dy, dx)
    return best, best_shift


def shift_propagate(prev_image, cur_image, prev_masks: Mapping[int, np.ndarray], radius: int = 16,
                    min_corr: float = 0.5, context: int = 2) -> dict[int, np.ndarray]:
    """Translate each mask by the integer shift (within ``radius``) that best
    correlates the previous frame's pixels around the mask with the current
    frame. A best correlation under ``min_corr`` means the object is lost and
    yields an empty mask."""
    prev_image = np.asarray(prev_image, dtype=np.float64)
    cur_image = np.asarray(cur_image, dtype=np.float64)
    if prev_image.shape != cur_image.shape:
        raise ValueError("frames must share one canvas")
    out = {}
    for tid, m in prev_masks.items():
        m = as_dense(m)
        if not m.any():
            out[tid] = np.zeros_like(m)
            continue
        corr, (dy, dx) = _estimate_shift(prev_image, cur_image, m, radius, context)
        out[tid] = translate(m, dy, dx) if corr >= min_corr else np.zeros_like(m)
    return out


class ShiftPropagator:
    def __init__(self, radius: int = 16, min_corr: float = 0.5):
        self.radius = radius
        self.min_corr = min_corr

    def __call__(self, prev_image, cur_image, prev_masks, prev_frame, cur_frame):
        return shift_propagate(prev_image, cur_image, prev_masks, self.radius, self.min_corr)


@dataclass
class PropagationNoise:
    kind: str = "jitter"  # erode | dilate | jitter
    level: float = 0.0


def warp_mask(mask: np.ndarray, src_pose, dst_pose) -> np.ndarray:
    """Move a mask from one (cy, cx, scale) pose to another (nearest neighbour)."""
    (cy0, cx0, s0), (cy1, cx1, s1) = src_pose, dst_pose
    if s0 == s1:
        return translate(mask, cy1 - cy0, cx1 - cx0)
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w]
    r = s0 / s1
    sy = np.floor(cy0 + 0.5 + r * (yy + 0.5 - cy1 - 0.5)).astype(np.int64)
    sx = np.floor(cx0 + 0.5 + r * (xx + 0.5 - cx1 - 0.5)).astype(np.int64)
    ok = (sy >= 0) & (sy < h) & (sx >= 0) & (sx < w)
    out = np.zeros_like(mask, dtype=bool)
    out[ok] = mask[sy[ok], sx[ok]]
    return out


class OraclePropagator:
    """Propagation from known object motion, optionally degraded.

    Each track is tied to the ground-truth object it overlaps most in the
    previous frame; its mask is moved with that object's true motion, clipped
    away from pixels visible as other objects, then degraded.
    A zero-noise oracle therefore reproduces the next ground-truth mask when
    the previous mask was exact.
    """

    def __init__(self, gt_masks: Mapping[int, Mapping[int, np.ndarray]],
                 motion: Mapping[int, Mapping[int, tuple]], noise: Optional[PropagationNoise] = None,
                 seed: int = 0):
        self.gt_masks = gt_masks  # frame -> {gt id: dense mask}
        self.motion = motion  # gt id -> frame -> (cy, cx, scale)
        self.noise = noise or PropagationNoise()
        self.seed = seed

    def __call__(self, prev_image, cur_image, prev_masks, prev_frame, cur_frame):
        from .synth import degrade_track_mask

        prev_gt = self.gt_masks.get(prev_frame, {})
        cur_gt = self.gt_masks.get(cur_frame, {})
        out = {}
        for tid, m in prev_masks.items():
            m = as_dense(m)
            if not m.any() or not prev_gt:
                out[tid] = np.zeros_like(m)
                continue
            gid = max(sorted(prev_gt), key=lambda g: intersection_area(m, prev_gt[g]))
            if intersection_area(m, prev_gt[gid]) == 0 or gid not in cur_gt:
                out[tid] = np.zeros_like(m)
                continue
            moved = warp_mask(m, self.motion[gid][prev_frame], self.motion[gid][cur_frame])
            for other, g in cur_gt.items():
                if other != gid:
                    moved &= ~g
            rng = np.random.default_rng([self.seed, cur_frame, prev_frame, tid])
            out[tid] = degrade_track_mask(moved, self.noise.kind, self.noise.level, rng)
        return out


def oracle_propagate(video, noise: Optional[PropagationNoise] = None, seed: int = 0) -> OraclePropagator:
    """Propagator for a synthetic video whose true motion is known."""
    gt = {t: video.gt_masks_at(t) for t in range(video.config.n_frames)}
    return OraclePropagator(gt, video.motion, noise, seed)


# -- tracking -------------------------------------------------------------------------

def _admissible(mask: np.ndarray, category: int, existing: Sequence[tuple[int, np.ndarray]], tol: float) -> bool:
    limit = tol * area(mask)
    return all(c != category or intersection_area(mask, m) <= limit for c, m in existing)


def _ranked(proposals: Sequence[InstanceProposal], threshold: float):
    keep = [(i, p) for i, p in enumerate(proposals) if p.score >= threshold]
    keep.sort(key=lambda ip: (-ip[1].score, ip[0]))
    return keep


def init_tracks(proposals: Sequence[InstanceProposal], config: Optional[PipelineConfig] = None,
                frame: Optional[int] = None, direction: int = 1) -> TrackerState:
    """Seed tracks from one frame's proposals, best score first."""
    config = config or PipelineConfig()
    frames = {p.frame for p in proposals}
    if len(frames) > 1:
        raise ValueError(f"proposals span several frames: {sorted(frames)}")
    if frame is None:
        frame = frames.pop() if frames else 0
    state = TrackerState([], 1, frame, config, direction)
    existing = []
    for _, p in _ranked(proposals, config.score_threshold):
        if len(state.tracks) >= config.max_objects:
            break
        m = rle_decode(p.mask)
        if not m.any() or not _admissible(m, p.category, existing, config.overlap_tolerance):
            continue
        state.tracks.append(Track(state.next_id, p.category, p.score, frame, {frame: p.mask}, {frame: "detected"}))
        existing.append((p.category, m))
        state.next_id += 1
    return state


def step(state: TrackerState, frame: int, prev_image, image, proposals: Sequence[InstanceProposal],
         propagator: Propagator, selector: Selector) -> TrackerState:
    """Advance the tracker by one frame (mutates and returns ``state``)."""
    expected = state.cursor + state.direction
    if frame != expected:
        raise SequenceError(f"expected frame {expected}, got {frame}")
    cfg = state.config
    prev = state.cursor
    active = state.tracks
    prev_masks = {tr.track_id: rle_decode(tr.masks[prev]) for tr in active}
    predicted = propagator(prev_image, image, prev_masks, prev, frame) if active else {}
    pred = [as_dense(predicted[tr.track_id]) for tr in active]

    cands = _ranked(proposals, cfg.score_threshold)
    seg = [rle_decode(p.mask) for _, p in cands]
    assoc = associate(seg, pred, cfg.iou_floor)

    current = {}
    for i, j, _ in assoc.matches:
        tr = active[j]
        p = cands[i][1]
        keep_seg = bool(selector(image, seg[i], pred[j], frame))
        chosen = seg[i] if keep_seg else pred[j]
        tr.masks[frame] = p.mask if keep_seg else rle_encode(pred[j])
        tr.sources[frame] = "detected" if keep_seg else "propagated"
        tr.add_score(p.score)
        tr.empty_streak = 0
        current[tr.track_id] = chosen

    retire = []
    for j in assoc.unmatched_prop:
        tr = active[j]
        tr.masks[frame] = rle_encode(pred[j])
        tr.sources[frame] = "propagated"
        current[tr.track_id] = pred[j]
        tr.empty_streak = 0 if pred[j].any() else tr.empty_streak + 1
        if cfg.patience is not None and tr.empty_streak >= cfg.patience:
            retire.append(tr)
    for tr in retire:
        active.remove(tr)
        state.retired.append(tr)
        del current[tr.track_id]

    existing = [(tr.category, current[tr.track_id]) for tr in active]
    for i in sorted(assoc.unmatched_seg):  # already score-ranked
        if len(active) >= cfg.max_objects:
            break
        p = cands[i][1]
        m = seg[i]
        if not m.any() or not _admissible(m, p.category, existing, cfg.overlap_tolerance):
            continue
        tr = Track(state.next_id, p.category, p.score, frame, {frame: p.mask}, {frame: "detected"})
        state.next_id += 1
        active.append(tr)
        existing.append((p.category, m))
    state.cursor = frame
    return state


def run(images: Sequence[np.ndarray], proposals: Mapping[int, Sequence[InstanceProposal]], direction: str,
        config: Optional[PipelineConfig] = None, propagator: Optional[Propagator] = None,
        selector: Optional[Selector] = None) -> list[Track]:
    """Track a whole video in one temporal direction ("forward"/"backward").

    Tracks always use the original frame indices.
    """
    config = config or PipelineConfig()
    propagator = propagator or ShiftPropagator()
    selector = selector or take_segmentation
    n = len(images)
    if n == 0:
        return []
    bad = [t for t in proposals if not 0 <= t < n]
    if bad:
        raise SequenceError(f"proposals reference frames outside the video: {sorted(bad)[:5]}")
    if direction in ("forward", "fwd"):
        order, sign = list(range(n)), 1
    elif direction in ("backward", "bwd"):
        order, sign = list(range(n - 1, -1, -1)), -1
    else:
        raise ValueError(f"direction must be forward or backward, got {direction!r}")
    for t in order:
        if images[t] is None:
            raise SequenceError(f"missing frame {t}")
    first = order[0]
    state = init_tracks(list(proposals.get(first, ())), config, frame=first, direction=sign)
    for prev, t in zip(order, order[1:]):
        step(state, t, images[prev], images[t], list(proposals.get(t, ())), propagator, selector)
    return state.all_tracks()
