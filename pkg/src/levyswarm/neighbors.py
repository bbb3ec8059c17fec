"""Uniform cell-list pair search for points in a rectangle."""

from __future__ import annotations

import numpy as np

# half stencil: each unordered pair of adjacent cells visited once
_HALF_STENCIL = ((0, 0), (1, 0), (-1, 1), (0, 1), (1, 1))


def minimum_image(d: np.ndarray, box, periodic: bool) -> np.ndarray:
    if periodic:
        box = np.asarray(box, dtype=float)
        d = d - box * np.round(d / box)
    return d


def pairs_within(pos: np.ndarray, radius: float, box, periodic: bool, cell_size: float | None = None):
    """All pairs ``i < j`` closer than ``radius``.

    Returns ``(i, j, d)`` with ``d = pos[i] - pos[j]`` (minimum image when
    periodic), sorted lexicographically by ``(i, j)``. Cell edge is
    ``max(radius, cell_size)`` stretched to tile the box exactly.
    """
    pos = np.asarray(pos, dtype=float)
    n = len(pos)
    empty = (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty((0, 2)))
    if n < 2 or radius <= 0.0:
        return empty
    lx, ly = float(box[0]), float(box[1])
    cs = max(radius, cell_size or 0.0)
    ncx, ncy = max(1, int(lx // cs)), max(1, int(ly // cs))

    cx = np.clip((pos[:, 0] * (ncx / lx)).astype(np.int64), 0, ncx - 1)
    cy = np.clip((pos[:, 1] * (ncy / ly)).astype(np.int64), 0, ncy - 1)
    cell = cx * ncy + cy
    order = np.argsort(cell, kind="stable")
    counts = np.bincount(cell, minlength=ncx * ncy)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))

    ii, jj = [], []
    for ox, oy in _HALF_STENCIL:
        nx_, ny_ = cx + ox, cy + oy
        if periodic:
            nx_ %= ncx
            ny_ %= ncy
            agents = np.arange(n)
        else:
            ok = (nx_ >= 0) & (nx_ < ncx) & (ny_ >= 0) & (ny_ < ncy)
            agents = np.nonzero(ok)[0]
            nx_, ny_ = nx_[agents], ny_[agents]
        ncell = nx_ * ncy + ny_
        cnt = counts[ncell]
        total = int(cnt.sum())
        if total == 0:
            continue
        first = np.cumsum(cnt) - cnt
        offs = np.arange(total) - np.repeat(first, cnt)
        ii.append(np.repeat(agents, cnt))
        jj.append(order[np.repeat(starts[ncell], cnt) + offs])
    if not ii:
        return empty

    i = np.concatenate(ii)
    j = np.concatenate(jj)
    keep = i != j
    lo = np.minimum(i[keep], j[keep])
    hi = np.maximum(i[keep], j[keep])
    key = np.unique(lo * n + hi)
    lo, hi = np.divmod(key, n)
    d = minimum_image(pos[lo] - pos[hi], (lx, ly), periodic)
    close = np.einsum("ij,ij->i", d, d) < radius * radius
    return lo[close], hi[close], d[close]


def pairs_brute_force(pos: np.ndarray, radius: float, box, periodic: bool):
    """O(N^2) reference for :func:`pairs_within`."""
    pos = np.asarray(pos, dtype=float)
    i, j = np.triu_indices(len(pos), k=1)
    d = minimum_image(pos[i] - pos[j], box, periodic)
    close = np.einsum("ij,ij->i", d, d) < radius * radius
    return i[close], j[close], d[close]
