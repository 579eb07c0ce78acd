"""Binary masks: COCO-style uncompressed RLE codec and geometric kernels.

Dense masks are plain 2-D boolean numpy arrays (row-major, ``mask[y, x]``).
RLE counts follow the COCO convention: column-major scan, first run is zeros.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np
from scipy import ndimage


class MaskError(ValueError):
    pass


class DimensionError(MaskError):
    pass


class EmptyMaskError(MaskError):
    pass


@dataclass(frozen=True)
class RleMask:
    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def area(self) -> int:
        return int(sum(self.counts[1::2]))

    def to_json(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        if isinstance(obj.get("counts"), str):
            raise MaskError("compressed RLE strings are not supported")
        h, w = obj["size"]
        rle = cls(int(h), int(w), tuple(obj["counts"]))
        validate_rle(rle)
        return rle

    @classmethod
    def empty(cls, height: int, width: int) -> "RleMask":
        return cls(height, width, (height * width,))


class BBox(NamedTuple):
    """Pixel box; x0/y0 inclusive, x1/y1 exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


AnyMask = Union[np.ndarray, RleMask]


def validate_rle(rle: RleMask) -> None:
    if rle.height < 1 or rle.width < 1:
        raise MaskError(f"bad canvas {rle.height}x{rle.width}")
    if any(c < 0 for c in rle.counts):
        raise MaskError("negative run length")
    if sum(rle.counts) != rle.height * rle.width:
        raise MaskError(
            f"run lengths sum to {sum(rle.counts)}, expected {rle.height * rle.width}"
        )
    if any(c == 0 for c in rle.counts[1:]):
        raise MaskError("zero-length run after the leading zero run")


def rle_encode(mask: np.ndarray) -> RleMask:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or mask.size == 0:
        raise DimensionError(f"expected a non-empty 2-D mask, got shape {mask.shape}")
    h, w = mask.shape
    flat = mask.ravel(order="F").astype(np.int8)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return RleMask(h, w, tuple(counts))


def rle_decode(rle: RleMask) -> np.ndarray:
    validate_rle(rle)
    counts = np.asarray(rle.counts, dtype=np.int64)
    values = np.arange(len(counts)) % 2 == 1
    flat = np.repeat(values, counts)
    return flat.reshape((rle.width, rle.height)).T.copy()


def as_dense(m: AnyMask) -> np.ndarray:
    if isinstance(m, RleMask):
        return rle_decode(m)
    return np.asarray(m, dtype=bool)


def _shape(m: AnyMask) -> tuple[int, int]:
    return m.shape if isinstance(m, RleMask) else tuple(np.shape(m))


def _check_same_canvas(a: AnyMask, b: AnyMask) -> None:
    if _shape(a) != _shape(b):
        raise DimensionError(f"canvas mismatch: {_shape(a)} vs {_shape(b)}")


def _one_runs(rle: RleMask) -> tuple[np.ndarray, np.ndarray]:
    ends = np.cumsum(np.asarray(rle.counts, dtype=np.int64))
    starts = ends - np.asarray(rle.counts, dtype=np.int64)
    return starts[1::2], ends[1::2]


def _rle_intersection(a: RleMask, b: RleMask) -> int:
    sa, ea = _one_runs(a)
    sb, eb = _one_runs(b)
    if sa.size == 0 or sb.size == 0:
        return 0
    cum = np.concatenate(([0], np.cumsum(eb - sb)))

    def covered(x):
        # number of b-pixels strictly before flat index x
        j = np.searchsorted(eb, x, side="right")
        partial = np.zeros_like(x)
        inside = j < sb.size
        jj = j[inside]
        partial[inside] = np.clip(x[inside] - sb[jj], 0, None)
        return cum[j] + partial

    return int(np.sum(covered(ea) - covered(sa)))


def area(m: AnyMask) -> int:
    if isinstance(m, RleMask):
        return m.area
    return int(np.count_nonzero(m))


def intersection_area(a: AnyMask, b: AnyMask) -> int:
    _check_same_canvas(a, b)
    if isinstance(a, RleMask) and isinstance(b, RleMask):
        return _rle_intersection(a, b)
    return int(np.count_nonzero(as_dense(a) & as_dense(b)))


def mask_iou(a: AnyMask, b: AnyMask) -> float:
    """Pixel IoU with exact integer counts; two empty masks give 0."""
    inter = intersection_area(a, b)
    union = area(a) + area(b) - inter
    if union == 0:
        return 0.0
    return inter / union


def intersects(a: AnyMask, b: AnyMask) -> bool:
    return intersection_area(a, b) > 0


def tight_bbox(mask: AnyMask) -> BBox:
    mask = as_dense(mask)
    ys = np.flatnonzero(mask.any(axis=1))
    xs = np.flatnonzero(mask.any(axis=0))
    if ys.size == 0:
        raise EmptyMaskError("tight_bbox of an empty mask")
    return BBox(int(xs[0]), int(ys[0]), int(xs[-1]) + 1, int(ys[-1]) + 1)


def union_bbox(masks: Sequence[AnyMask], expand: float = 0.0) -> BBox:
    """Tight box around several masks, grown by ``expand`` of its size per side."""
    boxes = []
    for m in masks:
        try:
            boxes.append(tight_bbox(m))
        except EmptyMaskError:
            continue
    if not boxes:
        raise EmptyMaskError("all masks are empty")
    h, w = _shape(masks[0])
    x0 = min(b.x0 for b in boxes)
    y0 = min(b.y0 for b in boxes)
    x1 = max(b.x1 for b in boxes)
    y1 = max(b.y1 for b in boxes)
    dx = int(round(expand * (x1 - x0)))
    dy = int(round(expand * (y1 - y0)))
    return BBox(max(0, x0 - dx), max(0, y0 - dy), min(w, x1 + dx), min(h, y1 + dy))


def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    # pixel-center sampling: out pixel i looks at floor((i + 0.5) * n_in / n_out)
    idx = np.floor((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64)
    return np.minimum(idx, n_in - 1)


def _bilinear_weights(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def resize_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    mask = np.asarray(mask)
    iy = _nearest_index(mask.shape[0], out_h)
    ix = _nearest_index(mask.shape[1], out_w)
    return mask[iy[:, None], ix[None, :]]


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an (H, W, C) or (H, W) array with edge clamping."""
    img = np.asarray(img, dtype=np.float64)
    y0, y1, fy = _bilinear_weights(img.shape[0], out_h)
    x0, x1, fx = _bilinear_weights(img.shape[1], out_w)
    if img.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def crop_resize(
    img: np.ndarray, m1: AnyMask, m2: AnyMask, box: BBox, out_size: int
) -> np.ndarray:
    """Build the 8-channel selector input: [RGB, mask1, RGB, mask2], shape (8, S, S)."""
    img = np.asarray(img, dtype=np.float64)
    m1, m2 = as_dense(m1), as_dense(m2)
    h, w = img.shape[:2]
    if m1.shape != (h, w) or m2.shape != (h, w):
        raise DimensionError("image and masks must share one canvas")
    if box.x1 <= box.x0 or box.y1 <= box.y0:
        raise MaskError(f"degenerate crop box {box}")
    if box.x0 < 0 or box.y0 < 0 or box.x1 > w or box.y1 > h:
        raise MaskError(f"crop box {box} outside {h}x{w} canvas")
    sl = (slice(box.y0, box.y1), slice(box.x0, box.x1))
    rgb = resize_bilinear(img[sl], out_size, out_size).transpose(2, 0, 1)
    a = resize_nearest(m1[sl], out_size, out_size)[None].astype(np.float64)
    b = resize_nearest(m2[sl], out_size, out_size)[None].astype(np.float64)
    return np.concatenate([rgb, a, rgb, b], axis=0)


# -- morphology helpers shared by the synthetic generators ----------------------

def erode(mask: np.ndarray, k: int = 1) -> np.ndarray:
    if k <= 0:
        return np.asarray(mask, dtype=bool).copy()
    return ndimage.binary_erosion(mask, iterations=k, border_value=0)


def dilate(mask: np.ndarray, k: int = 1) -> np.ndarray:
    if k <= 0:
        return np.asarray(mask, dtype=bool).copy()
    return ndimage.binary_dilation(mask, iterations=k)


def erode_to_fraction(mask: np.ndarray, keep: float) -> np.ndarray:
    """Peel the boundary until at most ``keep`` of the area remains.

    Uses the Euclidean distance to the background so peeling is isotropic; the
    last shell is partially removed, deepest pixels kept first.
    """
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    target = int(np.floor(keep * n))
    if target >= n:
        return mask.copy()
    if target <= 0:
        return np.zeros_like(mask)
    depth = ndimage.distance_transform_edt(np.pad(mask, 1))[1:-1, 1:-1]
    flat = depth.ravel()
    order = np.lexsort((np.arange(flat.size), -flat))
    out = np.zeros(flat.size, dtype=bool)
    out[order[:target]] = True
    return out.reshape(mask.shape) & mask


def translate(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Integer shift with clipping at the canvas border."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    out = np.zeros_like(mask)
    if abs(dy) >= h or abs(dx) >= w:
        return out
    ys = slice(max(0, dy), min(h, h + dy))
    xs = slice(max(0, dx), min(w, w + dx))
    ys_src = slice(max(0, -dy), min(h, h - dy))
    xs_src = slice(max(0, -dx), min(w, w - dx))
    out[ys, xs] = mask[ys_src, xs_src]
    return out


def contour(mask: np.ndarray) -> np.ndarray:
    """Inner boundary pixels (4-connectivity)."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, border_value=0)
