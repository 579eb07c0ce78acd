"""Deterministic synthetic videos of moving textured shapes, plus noise
injectors that turn ground truth into degraded per-frame proposal streams."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .maskcore import RleMask, erode_to_fraction, mask_iou, rle_decode, rle_encode

# Category table used by the synthetic scenes; includes person and the six
# classes that get linked to people during post-processing.
CATEGORIES = {
    1: "person",
    2: "car",
    3: "dog",
    4: "boat",
    5: "motorbike",
    6: "skateboard",
    7: "snowboard",
    8: "surfboard",
    9: "tennis racket",
}

SHAPES = ("rectangle", "ellipse", "polygon")


@dataclass
class ObjectSpec:
    shape: str
    category: int
    depth: int
    size: tuple[float, float]  # (height, width) in pixels at scale 1
    start: tuple[float, float]  # centre (y, x) at the entry frame
    velocity: tuple[float, float] = (0.0, 0.0)  # pixels per frame (dy, dx)
    scale_rate: float = 0.0  # scale = 1 + scale_rate * (t - entry)
    entry: int = 0
    exit: Optional[int] = None  # exclusive; None = until the end
    texture_seed: int = 0
    color: Optional[tuple[float, float, float]] = None
    sides: int = 5  # polygon only
    texture: str = "noise"  # "noise" or "flat"


@dataclass
class SceneConfig:
    height: int = 64
    width: int = 64
    n_frames: int = 10
    objects: list[ObjectSpec] = field(default_factory=list)
    background_seed: int = 0
    seed: int = 0
    video_id: int = 1

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SceneConfig":
        obj = dict(obj)
        objs = []
        for o in obj.pop("objects", []):
            o = dict(o)
            for k in ("size", "start", "velocity", "color"):
                if o.get(k) is not None:
                    o[k] = tuple(o[k])
            objs.append(ObjectSpec(**o))
        return cls(objects=objs, **obj)


@dataclass
class GtTrack:
    video_id: int
    track_id: int
    category: int
    masks: dict[int, RleMask]  # frame -> mask; absent frames = not visible

    def mask_at(self, t: int, shape) -> RleMask:
        return self.masks.get(t) or RleMask.empty(*shape)


@dataclass
class SyntheticVideo:
    config: SceneConfig
    images: list[np.ndarray]  # (H, W, 3) float64 in [0, 1]
    gt: list[GtTrack]
    # per object: frame -> integer centre (y, x) and scale; absent when not present
    motion: dict[int, dict[int, tuple[int, int, float]]]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.config.height, self.config.width)

    def gt_masks_at(self, t: int) -> dict[int, np.ndarray]:
        return {g.track_id: rle_decode(g.masks[t]) for g in self.gt if t in g.masks}


@dataclass
class NoiseConfig:
    p_miss: float = 0.0
    p_spurious: float = 0.0
    p_classflip: float = 0.0
    boundary: float = 0.0
    score_base: float = 0.9
    score_sigma: float = 0.0
    miss_frames: tuple[int, ...] = ()  # frames where every detection is dropped
    spurious_score: tuple[float, float] = (0.2, 0.6)

    def __post_init__(self):
        for name in ("p_miss", "p_classflip", "boundary"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.p_spurious < 0:
            raise ValueError("p_spurious must be non-negative")
        self.miss_frames = tuple(int(f) for f in self.miss_frames)
        self.spurious_score = tuple(self.spurious_score)


# -- textures and rasterisation ---------------------------------------------------

def value_noise(shape, cell: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth noise in [0, 1]: a coarse random lattice, bilinearly upsampled."""
    h, w = shape
    gh, gw = h // cell + 2, w // cell + 2
    grid = rng.random((gh, gw))
    return ndimage.zoom(grid, (h / (gh - 1) * 1.0001, w / (gw - 1) * 1.0001), order=1)[:h, :w]


def _texture(seed: int, size: int, color, flat: bool) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if color is None:
        color = rng.uniform(0.15, 0.95, size=3)
    color = np.asarray(color, dtype=np.float64)
    if flat:
        return np.broadcast_to(color, (size, size, 3)).copy()
    n1 = value_noise((size, size), 4, rng)
    n2 = value_noise((size, size), 2, rng)
    tex = color[None, None, :] * (0.65 + 0.5 * n1[..., None]) + 0.15 * (n2[..., None] - 0.5)
    return np.clip(tex, 0.0, 1.0)


def _shape_mask(spec: ObjectSpec, cy: int, cx: int, scale: float, shape) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    dy = yy + 0.5 - (cy + 0.5)
    dx = xx + 0.5 - (cx + 0.5)
    hh = spec.size[0] * scale / 2.0
    hw = spec.size[1] * scale / 2.0
    if spec.shape == "rectangle":
        return (dy >= -hh) & (dy < hh) & (dx >= -hw) & (dx < hw)  # half-open: exact integer sizes
    if spec.shape == "ellipse":
        return (dy / hh) ** 2 + (dx / hw) ** 2 <= 1.0
    if spec.shape == "polygon":
        ang = 2 * np.pi * np.arange(spec.sides) / spec.sides + 0.3
        vy, vx = hh * np.sin(ang), hw * np.cos(ang)
        inside = np.zeros(shape, dtype=bool)
        j = spec.sides - 1
        for i in range(spec.sides):  # even-odd ray casting
            cond = (vy[i] > dy) != (vy[j] > dy)
            with np.errstate(divide="ignore", invalid="ignore"):
                xcross = (vx[j] - vx[i]) * (dy - vy[i]) / (vy[j] - vy[i]) + vx[i]
            inside ^= cond & (dx < xcross)
            j = i
        return inside
    raise ValueError(f"unknown shape {spec.shape!r}")


def _pose(spec: ObjectSpec, t: int):
    k = t - spec.entry
    cy = int(math.floor(spec.start[0] + spec.velocity[0] * k + 0.5))
    cx = int(math.floor(spec.start[1] + spec.velocity[1] * k + 0.5))
    return cy, cx, 1.0 + spec.scale_rate * k


def generate(scene: SceneConfig) -> SyntheticVideo:
    """Render frames; nearer objects (smaller depth) overwrite deeper ones."""
    h, w = scene.height, scene.width
    depths = [o.depth for o in scene.objects]
    if len(set(depths)) != len(depths):
        raise ValueError("object depths must be unique")
    for o in scene.objects:
        if o.size[0] > h or o.size[1] > w:
            raise ValueError(f"object of size {o.size} does not fit a {h}x{w} canvas")
        if o.shape not in SHAPES:
            raise ValueError(f"unknown shape {o.shape!r}")
        end = scene.n_frames if o.exit is None else o.exit
        if not 0 <= o.entry < end <= scene.n_frames:
            raise ValueError(f"bad entry/exit {o.entry}/{o.exit} for {scene.n_frames} frames")

    bg = _texture(scene.background_seed, max(h, w), None, flat=False)[:h, :w]
    bg = 0.35 + 0.3 * (bg - 0.5)  # muted so objects stand out
    tex_size = 2 * max(h, w) + 1
    textures = [_texture(o.texture_seed, tex_size, o.color, o.texture == "flat") for o in scene.objects]
    order = sorted(range(len(scene.objects)), key=lambda i: -scene.objects[i].depth)

    images = []
    visible: dict[int, dict[int, RleMask]] = {i: {} for i in range(len(scene.objects))}
    motion: dict[int, dict[int, tuple[int, int, float]]] = {i: {} for i in range(len(scene.objects))}
    yy, xx = np.mgrid[0:h, 0:w]
    for t in range(scene.n_frames):
        img = bg.copy()
        owner = np.full((h, w), -1, dtype=np.int64)
        for i in order:  # far to near
            o = scene.objects[i]
            end = scene.n_frames if o.exit is None else o.exit
            if not o.entry <= t < end:
                continue
            cy, cx, s = _pose(o, t)
            motion[i][t] = (cy, cx, s)
            m = _shape_mask(o, cy, cx, s, (h, w))
            ty = np.clip(yy - cy + tex_size // 2, 0, tex_size - 1)
            tx = np.clip(xx - cx + tex_size // 2, 0, tex_size - 1)
            img[m] = textures[i][ty[m], tx[m]]
            owner[m] = i
        for i in range(len(scene.objects)):
            m = owner == i
            if m.any():
                visible[i][t] = rle_encode(m)
        images.append(img)

    gt = [
        GtTrack(scene.video_id, i + 1, scene.objects[i].category, visible[i])
        for i in range(len(scene.objects))
        if visible[i]
    ]
    return SyntheticVideo(scene, images, gt, {i + 1: motion[i] for i in range(len(scene.objects))})


# -- degradations -----------------------------------------------------------------

def perturb_boundary(mask: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """Move the mask boundary by a smooth random displacement field.

    The displacement amplitude is ``level`` times the object's equivalent
    radius, so the damage scales with object size.
    """
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if level <= 0 or n == 0:
        return mask.copy()
    inside = ndimage.distance_transform_edt(np.pad(mask, 1))[1:-1, 1:-1]
    outside = ndimage.distance_transform_edt(~mask)
    signed = outside - inside  # > 0 outside the object
    radius = math.sqrt(n / math.pi)
    cell = max(2, int(round(radius / 1.5)))
    field_ = 2.0 * value_noise(mask.shape, cell, rng) - 1.0
    return signed - level * radius * field_ * 1.5 < 0


def degrade_track_mask(mask: np.ndarray, kind: str, level: float, rng: np.random.Generator) -> np.ndarray:
    """Single-kind degradation used by propagation noise: erode/dilate/jitter."""
    if level <= 0:
        return np.asarray(mask, dtype=bool).copy()
    if kind == "erode":
        return erode_to_fraction(mask, 1.0 - level)
    if kind == "dilate":
        n = int(np.sum(mask))
        target = n * (1.0 + level)
        out = np.asarray(mask, dtype=bool)
        for _ in range(max(mask.shape)):
            if out.sum() >= target:
                break
            out = ndimage.binary_dilation(out)
        return out
    if kind == "jitter":
        return perturb_boundary(mask, level, rng)
    raise ValueError(f"unknown degradation kind {kind!r}")


def _spurious_blob(shape, rng):
    h, w = shape
    ry, rx = rng.uniform(2, max(3, h / 6)), rng.uniform(2, max(3, w / 6))
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy + 0.5 - cy) / ry) ** 2 + ((xx + 0.5 - cx) / rx) ** 2 <= 1.0


def degrade(
    video: SyntheticVideo, noise: NoiseConfig, seed: int, categories: Sequence[int] = tuple(CATEGORIES)
) -> dict[int, list[dict]]:
    """Turn ground truth into a noisy proposal stream, frame -> proposals.

    Each proposal is ``{"frame", "category_id", "score", "segmentation"}``
    with an RLE segmentation, i.e. the proposal-file record shape.
    """
    rng = np.random.default_rng([seed, video.config.video_id])
    shape = video.shape
    cats = list(categories)
    out: dict[int, list[dict]] = {}
    for t in range(video.config.n_frames):
        props = []
        gts = [(g, rle_decode(g.masks[t])) for g in video.gt if t in g.masks]
        # draws happen in a fixed order whether or not they are used
        for g, m in gts:
            u_miss, u_flip = rng.random(2)
            field_rng = np.random.default_rng(rng.integers(2**63))
            eps = rng.normal(0.0, 1.0)
            flip_pick = rng.integers(len(cats))
            if t in noise.miss_frames or u_miss < noise.p_miss:
                continue
            pm = perturb_boundary(m, noise.boundary, field_rng)
            if not pm.any():
                continue
            cat = g.category
            if u_flip < noise.p_classflip:
                others = [c for c in cats if c != g.category]
                cat = others[flip_pick % len(others)]
            score = float(np.clip(noise.score_base * mask_iou(pm, m) + noise.score_sigma * eps, 0.0, 1.0))
            props.append({"frame": t, "category_id": int(cat), "score": score, "segmentation": rle_encode(pm)})
        n_spur = int(rng.poisson(noise.p_spurious)) if noise.p_spurious > 0 else 0
        for _ in range(n_spur):
            cat = int(cats[rng.integers(len(cats))])
            lo, hi = noise.spurious_score
            score = float(rng.uniform(lo, hi))
            for _try in range(20):
                blob = _spurious_blob(shape, rng)
                ok = blob.any() and all(
                    g.category != cat or np.sum(blob & m) <= 0.5 * np.sum(m) for g, m in gts
                )
                if ok:
                    props.append({"frame": t, "category_id": cat, "score": score, "segmentation": rle_encode(blob)})
                    break
        out[t] = props
    return out


# -- presets ------------------------------------------------------------------------

def late10_scene(seed: int = 0, n_frames: int = 30) -> SceneConfig:
    """One textured object visible throughout, moving slowly to the right."""
    return SceneConfig(
        height=64,
        width=64,
        n_frames=n_frames,
        objects=[
            ObjectSpec("ellipse", 3, 0, (16, 20), (30, 14), (0.0, 1.0), texture_seed=seed + 11, color=(0.85, 0.3, 0.2)),
        ],
        background_seed=seed + 1,
        seed=seed,
        video_id=1,
    )


def late10_noise() -> NoiseConfig:
    return NoiseConfig(miss_frames=tuple(range(10)))


def random_scene(
    rng: np.random.Generator, video_id: int, n_frames: int = 12, size: int = 64, max_objects: int = 3
) -> SceneConfig:
    """Random scene with 1..max_objects objects that stay mostly on canvas."""
    n_obj = int(rng.integers(1, max_objects + 1))
    cats = list(CATEGORIES)
    objs = []
    for d in range(n_obj):
        oh, ow = rng.uniform(size / 6, size / 3, size=2)
        cy, cx = rng.uniform(size / 4, 3 * size / 4, size=2)
        vy, vx = rng.integers(-2, 3, size=2)
        objs.append(
            ObjectSpec(
                shape=SHAPES[int(rng.integers(3))],
                category=int(cats[rng.integers(len(cats))]),
                depth=d,
                size=(float(oh), float(ow)),
                start=(float(cy), float(cx)),
                velocity=(float(vy), float(vx)),
                texture_seed=int(rng.integers(2**31)),
                sides=int(rng.integers(3, 8)),
            )
        )
    return SceneConfig(size, size, n_frames, objs, int(rng.integers(2**31)), int(rng.integers(2**31)), video_id)


def benchmark_scenes(seed: int, n_videos: int = 8, n_frames: int = 12, size: int = 64) -> list[SceneConfig]:
    rng = np.random.default_rng([seed, 7])
    return [random_scene(rng, vid + 1, n_frames, size) for vid in range(n_videos)]


def bench_noise() -> NoiseConfig:
    return NoiseConfig(p_miss=0.1, boundary=0.3, score_sigma=0.05)
