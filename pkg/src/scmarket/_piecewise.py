"""Exact solves for sums of clipped linear responses.

A clipped response is ``clip((m - a) / b, lo, hi)`` with ``b < 0``; it is
nonincreasing in ``m`` and linear between its two breakpoints
``a + b * hi`` and ``a + b * lo``.
"""

from __future__ import annotations

import numpy as np

from .model import InfeasibleError


def clipped_response(m, a, b, lo, hi):
    return np.clip((m - a) / b, lo, hi)


def breakpoints(a, b, lo, hi) -> np.ndarray:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.concatenate([a + b * np.asarray(hi, float), a + b * np.asarray(lo, float)])


def invert_clipped_sum(target, a, b, lo, hi, w=None) -> float:
    """Smallest ``m`` with ``sum(w * clipped_response(m)) == target``.

    Raises :class:`InfeasibleError` when ``target`` is outside the attainable
    range ``[sum(w * lo), sum(w * hi)]``.
    """
    a, b, lo, hi = (np.asarray(v, float) for v in (a, b, lo, hi))
    w = np.ones_like(a) if w is None else np.asarray(w, float)
    top, bottom = float(w @ hi), float(w @ lo)
    slack = 1e-10 * max(1.0, abs(top), abs(bottom))
    if target > top + slack or target < bottom - slack:
        raise InfeasibleError(f"target {target} outside attainable range [{bottom}, {top}]")
    if a.size == 0:
        return 0.0
    target = min(max(target, bottom), top)
    bps = np.unique(breakpoints(a, b, lo, hi))

    def total(m):
        return float(w @ clipped_response(m, a, b, lo, hi))

    values = np.array([total(m) for m in bps])
    # values are nonincreasing along bps
    k = int(np.searchsorted(-values, -target, side="left"))
    if k == 0:
        return float(bps[0])
    if k >= len(bps):
        return float(bps[-1])
    m0, m1 = bps[k - 1], bps[k]
    v0, v1 = values[k - 1], values[k]
    if v0 == v1:
        return float(m0)
    m = m0 + (target - v0) * (m1 - m0) / (v1 - v0)
    # far-away breakpoints (huge bounds) cost digits in the interpolation; resolve
    # the linear piece directly from the channels that are active on it
    mid = 0.5 * (m0 + m1)
    r = clipped_response(mid, a, b, lo, hi)
    active = (r > lo) & (r < hi)
    if active.any():
        fixed = float(w[~active] @ r[~active])
        slope = float(np.sum(w[active] / b[active]))
        m = (target - fixed + float(np.sum(w[active] * a[active] / b[active]))) / slope
        m = min(max(m, m0), m1)
    return float(m)


def linear_roots(fn, points) -> list[float]:
    """Roots of a continuous function that is linear between sorted ``points``.

    Constant beyond the outermost points is assumed. Zero plateaus report their
    left end.
    """
    pts = np.unique(np.asarray(points, float))
    if pts.size == 0:
        return []
    vals = [fn(p) for p in pts]
    roots: list[float] = []
    for k, (p, v) in enumerate(zip(pts, vals)):
        if v == 0.0:
            if k == 0 or vals[k - 1] != 0.0:
                roots.append(float(p))
            continue
        if k > 0 and vals[k - 1] != 0.0 and (vals[k - 1] < 0) != (v < 0):
            p0, v0 = pts[k - 1], vals[k - 1]
            roots.append(float(p0 - v0 * (p - p0) / (v - v0)))
    return roots
