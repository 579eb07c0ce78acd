"""Combine forward-pass and backward-pass tracks, and link rider-type objects
to the person they travel with."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .assign import hungarian
from .maskcore import RleMask, mask_iou, rle_decode, tight_bbox
from .pipeline import Track

RIDER_CLASSES = ("boat", "motorbike", "skateboard", "snowboard", "surfboard", "tennis racket")
PERSON = "person"


@dataclass
class MergeGraph:
    votes: dict[tuple[int, int], int] = field(default_factory=dict)  # (fwd idx, bwd idx) -> frames

    def to_json(self) -> list[dict]:
        return [{"fwd": f, "bwd": b, "votes": v} for (f, b), v in sorted(self.votes.items())]


@dataclass
class RiderLink:
    rider_id: int
    person_id: int
    frames: list[int]


def _nonempty(tr: Track, t: int) -> Optional[RleMask]:
    m = tr.masks.get(t)
    return m if m is not None and m.area > 0 else None


def associate_passes(fwd: Sequence[Track], bwd: Sequence[Track], merge_iou: float = 0.5) -> MergeGraph:
    """Per frame, Hungarian-match forward masks to backward masks on IoU;
    every matched pair above ``merge_iou`` adds one vote to its edge."""
    graph = MergeGraph()
    frames = sorted({t for tr in list(fwd) + list(bwd) for t in tr.masks})
    for t in frames:
        fi = [(i, m) for i, tr in enumerate(fwd) if (m := _nonempty(tr, t)) is not None]
        bi = [(j, m) for j, tr in enumerate(bwd) if (m := _nonempty(tr, t)) is not None]
        if not fi or not bi:
            continue
        ious = np.array([[mask_iou(a, b) for _, b in bi] for _, a in fi])
        for r, c in hungarian(ious, maximize=True).pairs:
            if ious[r, c] > merge_iou:
                key = (fi[r][0], bi[c][0])
                graph.votes[key] = graph.votes.get(key, 0) + 1
    return graph


def resolve(graph: MergeGraph, fwd: Sequence[Track], bwd: Sequence[Track]) -> list[tuple[int, int]]:
    """One-to-one forward/backward pairs: most votes first, then earliest birth."""
    edges = sorted(
        graph.votes.items(),
        key=lambda kv: (-kv[1], min(fwd[kv[0][0]].birth, bwd[kv[0][1]].birth), kv[0]),
    )
    used_f, used_b, out = set(), set(), []
    for (f, b), v in edges:
        if v < 1 or f in used_f or b in used_b:
            continue
        used_f.add(f)
        used_b.add(b)
        out.append((f, b))
    return out


def merge_tracks(graph: MergeGraph, fwd: Sequence[Track], bwd: Sequence[Track], selector=None,
                 images: Optional[Sequence[np.ndarray]] = None) -> list[Track]:
    """Union each resolved forward/backward pair into one track.

    Where both members have a non-empty mask the selector decides (True keeps
    the forward mask); without a selector or images the forward mask is kept.
    Unpaired tracks pass through unchanged. Output ids are 1..n in order of
    (birth frame, forward before backward, input position).
    """
    pairs = resolve(graph, fwd, bwd)
    paired_f = {f for f, _ in pairs}
    paired_b = {b for _, b in pairs}
    merged = []
    for f, b in pairs:
        a, c = fwd[f], bwd[b]
        masks, sources = {}, {}
        for t in sorted(set(a.masks) | set(c.masks)):
            ma, mc = _nonempty(a, t), _nonempty(c, t)
            if ma is not None and mc is not None:
                keep_fwd = True
                if selector is not None and images is not None:
                    keep_fwd = bool(selector(images[t], rle_decode(ma), rle_decode(mc), t))
                masks[t], sources[t] = (ma, "forward") if keep_fwd else (mc, "backward")
            elif ma is not None:
                masks[t], sources[t] = ma, "forward"
            elif mc is not None:
                masks[t], sources[t] = mc, "backward"
            else:
                masks[t] = a.masks.get(t) or c.masks[t]
                sources[t] = "forward" if t in a.masks else "backward"
        lead = a if a.score >= c.score else c
        merged.append(((min(a.birth, c.birth), 0, f), Track(
            0, lead.category, max(a.score, c.score), min(masks), masks, sources, a.n_scores + c.n_scores)))
    for i, tr in enumerate(fwd):
        if i not in paired_f:
            merged.append(((tr.birth, 0, i), _copy(tr)))
    for j, tr in enumerate(bwd):
        if j not in paired_b:
            merged.append(((tr.birth, 1, j), _copy(tr)))
    merged.sort(key=lambda kv: kv[0])
    out = []
    for k, (_, tr) in enumerate(merged, start=1):
        tr.track_id = k
        out.append(tr)
    return out


def _copy(tr: Track) -> Track:
    return Track(tr.track_id, tr.category, tr.score, tr.birth, dict(tr.masks), dict(tr.sources), tr.n_scores,
                 tr.empty_streak)


def merge_report(graph: MergeGraph, fwd, bwd) -> dict:
    pairs = resolve(graph, fwd, bwd)
    return {
        "edges": graph.to_json(),
        "pairs": [{"fwd": f, "bwd": b, "fwd_id": fwd[f].track_id, "bwd_id": bwd[b].track_id,
                   "votes": graph.votes[(f, b)]} for f, b in pairs],
        "n_fwd": len(fwd),
        "n_bwd": len(bwd),
    }


# -- human-object association -------------------------------------------------------

def _boxes(tr: Track) -> dict[int, tuple]:
    out = {}
    for t, m in tr.masks.items():
        if m.area > 0:
            out[t] = tight_bbox(rle_decode(m))
    return out


def _box_overlap(a, b) -> bool:
    return min(a.x1, b.x1) > max(a.x0, b.x0) and min(a.y1, b.y1) > max(a.y0, b.y0)


def human_object_link(tracks: Sequence[Track], categories: Mapping[int, str]) -> tuple[list[Track], list[RiderLink]]:
    """Link each rider-class track to the person whose box it overlaps on the
    most frames, then fuse same-class fragments of one person with disjoint
    frame ranges into a single identity. Nothing is deleted or relabelled.
    """
    names = {int(k): v for k, v in categories.items()}
    persons = [tr for tr in tracks if names.get(tr.category) == PERSON]
    riders = [tr for tr in tracks if names.get(tr.category) in RIDER_CLASSES]
    if not persons or not riders:
        return [_copy(tr) for tr in tracks], []
    person_boxes = {p.track_id: _boxes(p) for p in persons}
    links = []
    link_of = {}
    for r in riders:
        rb = _boxes(r)
        best, best_frames = None, []
        for p in persons:
            pb = person_boxes[p.track_id]
            frames = [t for t in sorted(rb) if t in pb and _box_overlap(rb[t], pb[t])]
            if len(frames) > len(best_frames):
                best, best_frames = p.track_id, frames
        if best is not None:
            links.append(RiderLink(r.track_id, best, best_frames))
            link_of[r.track_id] = best

    groups = defaultdict(list)
    for r in riders:
        if r.track_id in link_of:
            groups[(r.category, link_of[r.track_id])].append(r)
    absorbed = {}
    for members in groups.values():
        members.sort(key=lambda tr: (tr.birth, tr.track_id))
        heads = []
        for tr in members:
            span = (min(tr.masks), max(tr.masks))
            for h in heads:
                if all(span[1] < s0 or span[0] > s1 for s0, s1 in h["spans"]):
                    h["parts"].append(tr)
                    h["spans"].append(span)
                    absorbed[tr.track_id] = h["parts"][0].track_id
                    break
            else:
                heads.append({"parts": [tr], "spans": [span]})

    out = []
    by_id = {tr.track_id: tr for tr in tracks}
    for tr in tracks:
        if tr.track_id in absorbed:
            continue
        parts = [tr] + [by_id[k] for k, head in absorbed.items() if head == tr.track_id]
        if len(parts) == 1:
            out.append(_copy(tr))
            continue
        parts.sort(key=lambda x: x.birth)
        masks, sources = {}, {}
        for p in parts:
            masks.update(p.masks)
            sources.update(p.sources)
        h, w = next(iter(masks.values())).shape
        for t in range(min(masks), max(masks) + 1):
            if t not in masks:  # keep coverage contiguous across the gap
                masks[t] = RleMask.empty(h, w)
                sources[t] = "gap"
        n = sum(p.n_scores for p in parts)
        score = sum(p.score * p.n_scores for p in parts) / n
        out.append(Track(tr.track_id, tr.category, score, min(masks), dict(sorted(masks.items())), sources, n))
    return out, links
