"""On-disk formats: datasets (frames + GT + motion), proposal streams, result
files. JSON is written with sorted keys and no whitespace variation so equal
content gives equal bytes."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .maskcore import RleMask
from .pipeline import InstanceProposal, Track
from .synth import CATEGORIES, GtTrack


def write_json(path, obj, indent=None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=indent, separators=(",", ":") if indent is None else None)
    Path(path).write_text(text + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def save_png(path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG", optimize=False)


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


@dataclass
class VideoData:
    video_id: int
    images: list[np.ndarray]
    gt: list[GtTrack]
    motion: dict[int, dict[int, tuple]]
    height: int
    width: int

    @property
    def n_frames(self) -> int:
        return len(self.images)

    def gt_masks_at(self, t: int) -> dict[int, np.ndarray]:
        from .maskcore import rle_decode

        return {g.track_id: rle_decode(g.masks[t]) for g in self.gt if t in g.masks}

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def config(self) -> "_Cfg":  # duck-types SyntheticVideo
        return _Cfg(self.video_id, self.n_frames, self.height, self.width)


@dataclass(frozen=True)
class _Cfg:
    video_id: int
    n_frames: int
    height: int
    width: int


def save_dataset(videos, out_dir, categories: Mapping[int, str] = CATEGORIES) -> None:
    from .evaluation import gt_annotation

    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    write_json(out / "scenes.json", [v.config.to_json() for v in videos])
    write_json(out / "gt.json", gt_annotation(videos, categories))
    motion = {
        str(v.config.video_id): {str(g): {str(t): list(p) for t, p in m.items()} for g, m in v.motion.items()}
        for v in videos
    }
    write_json(out / "motion.json", motion)
    for v in videos:
        vdir = out / "frames" / str(v.config.video_id)
        vdir.mkdir(parents=True, exist_ok=True)
        for t, img in enumerate(v.images):
            save_png(vdir / f"{t:04d}.png", img)


def load_gt_tracks(gt: Mapping) -> dict[int, list[GtTrack]]:
    out: dict[int, list[GtTrack]] = {}
    for a in gt["annotations"]:
        masks = {t: RleMask.from_json(s) for t, s in enumerate(a["segmentations"]) if s is not None}
        out.setdefault(a["video_id"], []).append(GtTrack(a["video_id"], a["id"], a["category_id"], masks))
    return out


def load_dataset(data_dir) -> list[VideoData]:
    d = Path(data_dir)
    gt = read_json(d / "gt.json")
    motion = read_json(d / "motion.json") if (d / "motion.json").exists() else {}
    tracks = load_gt_tracks(gt)
    videos = []
    for v in gt["videos"]:
        vid = v["id"]
        vdir = d / "frames" / str(vid)
        images = [load_png(vdir / f"{t:04d}.png") for t in range(v["length"])]
        mot = {
            int(g): {int(t): tuple(p) for t, p in m.items()}
            for g, m in motion.get(str(vid), {}).items()
        }
        videos.append(VideoData(vid, images, tracks.get(vid, []), mot, v["height"], v["width"]))
    return videos


def categories_of(gt: Mapping) -> dict[int, str]:
    return {int(c["id"]): c["name"] for c in gt.get("categories", [])}


# -- proposal streams -------------------------------------------------------------

def write_proposals(path, streams: Mapping[int, Mapping[int, Sequence]]) -> None:
    """``streams``: video id -> frame -> proposal records or InstanceProposals."""
    videos = []
    for vid in sorted(streams):
        recs = []
        for t in sorted(streams[vid]):
            for p in streams[vid][t]:
                if isinstance(p, InstanceProposal):
                    recs.append(p.to_json())
                else:
                    seg = p["segmentation"]
                    recs.append({**p, "segmentation": seg.to_json() if isinstance(seg, RleMask) else seg})
        videos.append({"video_id": vid, "proposals": recs})
    write_json(path, {"videos": videos})


def read_proposals(path) -> dict[int, dict[int, list[InstanceProposal]]]:
    obj = read_json(path)
    out: dict[int, dict[int, list[InstanceProposal]]] = {}
    for v in obj["videos"]:
        frames: dict[int, list[InstanceProposal]] = {}
        for rec in v["proposals"]:
            p = InstanceProposal.from_json(rec)
            frames.setdefault(p.frame, []).append(p)
        out[v["video_id"]] = frames
    return out


# -- result files -------------------------------------------------------------------

def tracks_to_results(per_video: Mapping[int, Sequence[Track]], lengths: Mapping[int, int]) -> list[dict]:
    out = []
    for vid in sorted(per_video):
        for tr in per_video[vid]:
            out.append(tr.to_result(vid, lengths[vid]))
    return out


def results_to_tracks(results: Sequence[Mapping]) -> dict[int, list[Track]]:
    out: dict[int, list[Track]] = {}
    for r in results:
        out.setdefault(r["video_id"], []).append(Track.from_result(r))
    return out


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
