"""Choosing the better of two candidate masks: the learned selector with
order-symmetrised inference, and a hand-crafted contour baseline."""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from ..maskcore import EmptyMaskError, as_dense, contour
from .data import pair_input
from .net import MsnModel, forward


class Selection(NamedTuple):
    winner: str  # "A" or "B"
    confidence: float  # belief that A is the better mask


def select(model: MsnModel, image, mask_a, mask_b) -> Selection:
    """Run both input orders and average: p = 1/2 (P(A>B) + 1 - P(B>A))."""
    a, b = as_dense(mask_a), as_dense(mask_b)
    if not a.any() or not b.any():
        raise EmptyMaskError("selection needs two non-empty masks")
    size = model.arch.input_size
    x_ab = pair_input(image, a, b, size)
    x_ba = np.concatenate([x_ab[4:], x_ab[:4]], axis=0)
    probs = forward(model, np.stack([x_ab, x_ba])).probability
    p = 0.5 + 0.5 * (float(probs[0]) - float(probs[1]))
    return Selection("A" if p >= 0.5 else "B", p)


SMOOTH_WEIGHT = 0.25


def _gradient_magnitude(image) -> np.ndarray:
    gray = np.asarray(image, dtype=np.float64)
    if gray.ndim == 3:
        gray = gray.mean(axis=2)
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    return np.hypot(gx, gy) / 8.0


def heuristic_score(image, mask) -> float:
    """Contour edge strength minus a roughness penalty.

    Edge strength is the mean Sobel magnitude on the inner contour. Roughness
    is contour length over 4*sqrt(area), which is about 1 for a square and
    grows for ragged outlines.
    """
    m = as_dense(mask)
    n = int(m.sum())
    if n == 0:
        return -math.inf
    edge = contour(m)
    alignment = float(_gradient_magnitude(image)[edge].mean())
    roughness = edge.sum() / (4.0 * math.sqrt(n))
    return alignment - SMOOTH_WEIGHT * roughness


def heuristic_select(image, mask_a, mask_b) -> str:
    sa = heuristic_score(image, mask_a)
    sb = heuristic_score(image, mask_b)
    return "A" if sa >= sb else "B"
