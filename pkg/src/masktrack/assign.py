"""Optimal rectangular assignment (Hungarian / shortest augmenting path) and
IoU-based association of segmentation and propagation mask sets."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .maskcore import AnyMask, mask_iou

# Reduced costs within this (relative) tolerance count as tight when looking
# for alternative optimal matchings during tie-breaking.
_TIGHT_RTOL = 1e-9


@dataclass
class Assignment:
    pairs: list[tuple[int, int]]
    unmatched_rows: list[int]
    unmatched_cols: list[int]
    total: float = 0.0


@dataclass
class Association:
    matches: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_seg: list[int] = field(default_factory=list)
    unmatched_prop: list[int] = field(default_factory=list)


def _solve_square(cost: np.ndarray):
    """Shortest augmenting path Hungarian on an n x n matrix.

    Returns (col_of_row, u, v) with dual potentials u (rows) and v (cols) such
    that cost[i, j] - u[i] - v[j] >= 0 with equality on the matching.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of_col = np.full(n + 1, -1, dtype=np.int64)  # column n is the virtual root
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        row_of_col[n] = i
        j0 = n
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            free = ~used[:n]
            cur = cost[i0] - u[i0] - v[:n]
            better = free & (cur < minv[:n])
            minv[:n][better] = cur[better]
            way[:n][better] = j0
            cand = np.where(free, minv[:n], np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            used_idx = np.flatnonzero(used)
            u[row_of_col[used_idx]] += delta
            v[used_idx] -= delta
            minv[:n][free] -= delta
            j0 = j1
            if row_of_col[j0] == -1:
                break
        while j0 != n:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[row_of_col[:n]] = np.arange(n)
    return col_of_row, u[:n], v[:n]


def _lexicographic_refine(cost, col_of_row, u, v):
    """Among optimal perfect matchings pick the lexicographically smallest.

    Works on the equality subgraph of the optimal duals: for each row in
    order, try its smaller tight columns and keep the first one for which the
    displaced rows (all later than this one) can be re-routed along tight
    edges without raising the exactly summed total.
    """
    n = cost.shape[0]
    scale = max(1.0, float(np.max(np.abs(cost))))
    tight = np.abs(cost - u[:, None] - v[None, :]) <= _TIGHT_RTOL * scale
    row_of_col = np.empty(n, dtype=np.int64)
    row_of_col[col_of_row] = np.arange(n)

    for i in range(n):
        for c in np.flatnonzero(tight[i]):
            if c >= col_of_row[i]:
                break
            if row_of_col[c] < i:
                continue
            path = _alternating_path(tight, col_of_row, row_of_col, row_of_col[c], col_of_row[i], i, c)
            if path is None:
                continue
            moves = {i: int(c)}
            for k, r in enumerate(path):
                moves[r] = int(col_of_row[path[k + 1]]) if k + 1 < len(path) else int(col_of_row[i])
            delta = math.fsum(cost[r, cc] for r, cc in moves.items()) - math.fsum(
                cost[r, col_of_row[r]] for r in moves
            )
            if delta > 0:
                continue
            for r, cc in moves.items():
                col_of_row[r] = cc
                row_of_col[cc] = r
            break
    return col_of_row


def _alternating_path(tight, col_of_row, row_of_col, start_row, target_col, fixed_upto, banned_col):
    """Rows r1..rk (all > fixed_upto) such that r_k can take target_col and
    each r_j can take the column held by r_{j+1}; None if no such path."""
    parent = {int(start_row): None}
    queue = deque([int(start_row)])
    while queue:
        r = queue.popleft()
        for c in np.flatnonzero(tight[r]):
            if c == col_of_row[r] or c == banned_col:
                continue
            if c == target_col:
                rows = []
                x = r
                while x is not None:
                    rows.append(x)
                    x = parent[x]
                return rows[::-1]
            owner = int(row_of_col[c])
            if owner <= fixed_upto or owner in parent:
                continue
            parent[owner] = r
            queue.append(owner)
    return None


def hungarian(cost, maximize: bool = False) -> Assignment:
    """Optimal assignment of cardinality min(rows, cols).

    Rectangular inputs are padded with zero-cost virtual rows/columns placed
    after the real ones; equal-cost optima resolve to the lexicographically
    smallest list of (row, col) pairs.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    rows, cols = cost.shape
    if rows == 0 or cols == 0:
        return Assignment([], list(range(rows)), list(range(cols)), 0.0)
    work = -cost if maximize else cost
    n = max(rows, cols)
    square = np.zeros((n, n))
    square[:rows, :cols] = work
    col_of_row, u, v = _solve_square(square)
    col_of_row = _lexicographic_refine(square, col_of_row, u, v)

    pairs = [(r, int(col_of_row[r])) for r in range(rows) if col_of_row[r] < cols]
    matched_cols = {c for _, c in pairs}
    matched_rows = {r for r, _ in pairs}
    total = math.fsum(cost[r, c] for r, c in pairs)
    return Assignment(
        pairs,
        [r for r in range(rows) if r not in matched_rows],
        [c for c in range(cols) if c not in matched_cols],
        total,
    )


def _mask_of(x) -> AnyMask:
    return getattr(x, "mask", x)


def iou_matrix(a: Sequence, b: Sequence) -> np.ndarray:
    out = np.zeros((len(a), len(b)))
    for i, x in enumerate(a):
        mx = _mask_of(x)
        for j, y in enumerate(b):
            out[i, j] = mask_iou(mx, _mask_of(y))
    return out


def associate(seg: Sequence, prop: Sequence, iou_floor: float = 0.1) -> Association:
    """Match segmentation masks to propagated masks by maximum total IoU.

    Accepts masks or objects with a ``.mask`` attribute. Matched pairs whose
    IoU is not strictly above ``iou_floor`` are returned as unmatched.
    """
    if not 0.0 <= iou_floor < 1.0:
        raise ValueError(f"iou_floor must lie in [0, 1), got {iou_floor}")
    ious = iou_matrix(seg, prop)
    res = hungarian(ious, maximize=True)
    out = Association()
    used_s, used_p = set(), set()
    for i, j in res.pairs:
        if ious[i, j] > iou_floor:
            out.matches.append((i, j, float(ious[i, j])))
            used_s.add(i)
            used_p.add(j)
    out.unmatched_seg = [i for i in range(len(seg)) if i not in used_s]
    out.unmatched_prop = [j for j in range(len(prop)) if j not in used_p]
    return out
