"""Regulator allocations under utilitarian, Rawlsian and egalitarian objectives.

The regulator picks customer demands inside their boxes. Each SC then covers
its effective demand ``T_i`` with the clamped equal-marginal-cost split across
its channels, so every allocation is described by the demands alone. For a
fixed ``T_i`` the best demand vector is a water-filling solution, and both
customer utility and SC cost are piecewise quadratic in ``T_i``. The solvers
below exploit that: they evaluate each quadratic piece exactly and bisect on
payoff levels, with no random search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._piecewise import breakpoints, clipped_response, invert_clipped_sum
from .model import InfeasibleError, MarketError, MarketScenario, MarketState, StateLayout

WELFARE_TYPES = ("utilitarian", "egalitarian", "rawlsian")


@dataclass(frozen=True)
class WelfareOptions:
    """Solver knobs.

    ``tolerance`` is the relative bisection tolerance on payoff levels.
    ``grid_points`` sets how finely the egalitarian solver scans ties between
    equally good customer levels. ``seed`` is recorded for reproducibility;
    the solvers themselves are deterministic.
    """

    tolerance: float = 1e-10
    grid_points: int = 65
    seed: int = 0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")


@dataclass(frozen=True)
class WelfareReport:
    allocations: dict[str, MarketState]
    utilitarian_sw: dict[str, float]
    sw_ratio: dict[str, float]
    sc_cost_ratios: dict[str, np.ndarray]
    customer_utility_ratios: dict[str, np.ndarray]
    sc_costs: dict[str, np.ndarray] = field(default_factory=dict)
    customer_utilities: dict[str, np.ndarray] = field(default_factory=dict)


# -- piecewise-quadratic helpers -------------------------------------------

def _segments(breaks, lo: float, hi: float) -> np.ndarray:
    b = np.asarray(breaks, dtype=float)
    inner = b[(b > lo) & (b < hi)]
    return np.unique(np.concatenate([[lo, hi], inner]))


def _fit(fn, t0, t1):
    f0, fm, f1 = fn(t0), fn(0.5 * (t0 + t1)), fn(t1)
    c2 = 2.0 * (f1 - 2.0 * fm + f0)
    c1 = f1 - f0 - c2
    return f0, c1, c2


def _pw_argmax(fn: Callable[[float], float], breaks, lo: float, hi: float) -> tuple[float, float]:
    """Exact maximiser of a continuous function that is quadratic between ``breaks``."""
    best_t, best_v = lo, fn(lo)
    pts = _segments(breaks, lo, hi)
    for t0, t1 in zip(pts[:-1], pts[1:]):
        cands = [t1]
        _, c1, c2 = _fit(fn, t0, t1)
        if c2 < 0:
            u = -c1 / (2.0 * c2)
            if 0.0 < u < 1.0:
                cands.append(t0 + u * (t1 - t0))
        for t in cands:
            v = fn(t)
            if v > best_v:
                best_t, best_v = float(t), v
    return best_t, best_v


def _pw_window(fn, breaks, lo: float, hi: float, fmin: float, fmax: float) -> list[tuple[float, float]]:
    """Sub-intervals of ``[lo, hi]`` on which ``fmin <= fn <= fmax``."""

    def inside(t):
        v = fn(t)
        return fmin <= v <= fmax

    if hi <= lo:
        return [(lo, lo)] if inside(lo) else []
    pieces = []
    pts = _segments(breaks, lo, hi)
    for t0, t1 in zip(pts[:-1], pts[1:]):
        f0, c1, c2 = _fit(fn, t0, t1)
        cuts = [0.0, 1.0]
        for level in (fmin, fmax):
            if not math.isfinite(level):
                continue
            for r in np.roots([c2, c1, f0 - level]) if (c2 or c1) else []:
                if abs(r.imag) < 1e-12 and 0.0 < r.real < 1.0:
                    cuts.append(float(r.real))
        cuts = sorted(set(cuts))
        for u0, u1 in zip(cuts[:-1], cuts[1:]):
            a, b = t0 + u0 * (t1 - t0), t0 + u1 * (t1 - t0)
            if inside(0.5 * (a + b)):
                pieces.append((a, b))
    for t in pts:
        if inside(t) and not any(a <= t <= b for a, b in pieces):
            pieces.append((float(t), float(t)))
    pieces.sort()
    merged: list[tuple[float, float]] = []
    for a, b in pieces:
        if merged and a <= merged[-1][1] + 1e-12 * max(1.0, abs(a)):
            merged[-1] = (merged[-1][0], max(b, merged[-1][1]))
        else:
            merged.append((a, b))
    return merged


def _bisect(pred: Callable[[float], bool], lo: float, hi: float, tol: float) -> float:
    """Largest ``t`` in ``[lo, hi]`` with ``pred(t)`` true, assuming ``pred(lo)`` and monotonicity."""
    for _ in range(200):
        if hi - lo <= tol * max(1.0, abs(lo), abs(hi)):
            break
        mid = 0.5 * (lo + hi)
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo


# -- one SC with its customers -----------------------------------------------

class _ScProblem:
    """Supply split, water-filled demand and payoffs for a single SC."""

    def __init__(self, layout: StateLayout, k: int):
        s = layout.supply_sc == k
        self.sa, self.sb = layout.supply_alpha[s], layout.supply_beta[s]
        self.slo, self.shi = layout.supply_lo[s], layout.supply_hi[s]
        self.supply_index = np.flatnonzero(s)
        d = layout.demand_sc == k
        self.demand_index = np.flatnonzero(d)
        self.da, self.db = layout.demand_alpha[d], layout.demand_beta[d]
        self.dlo, self.dhi = layout.demand_lo[d], layout.demand_hi[d]
        self.eff = layout.demand_eff[d]
        self.t_lo, self.t_hi = float(self.slo.sum()), float(self.shi.sum())
        self.supply_breaks = self._sum_values(breakpoints(self.sa, self.sb, self.slo, self.shi), self.sa, self.sb, self.slo, self.shi)

    @staticmethod
    def _sum_values(ms, a, b, lo, hi, w=None):
        w = np.ones_like(a) if w is None else w
        return np.array([float(w @ clipped_response(m, a, b, lo, hi)) for m in ms])

    # supply side
    def price(self, total: float) -> float:
        return invert_clipped_sum(total, self.sa, self.sb, self.slo, self.shi)

    def split(self, total: float) -> np.ndarray:
        if self.sa.size == 0:
            return np.zeros(0)
        return clipped_response(self.price(total), self.sa, self.sb, self.slo, self.shi)

    def cost(self, total: float) -> float:
        q = self.split(total)
        return float(np.sum(self.sa * q + 0.5 * self.sb * q * q))

    # demand side
    def fill(self, total: float, lo, hi) -> np.ndarray:
        if self.da.size == 0:
            return np.zeros(0)
        a, b = self.da / self.eff, self.db / self.eff
        m = invert_clipped_sum(total, a, b, lo, hi, w=self.eff)
        return clipped_response(m, a, b, lo, hi)

    def demand_breaks(self, lo, hi) -> np.ndarray:
        if self.da.size == 0:
            return np.zeros(0)
        a, b = self.da / self.eff, self.db / self.eff
        return self._sum_values(breakpoints(a, b, lo, hi), a, b, lo, hi, self.eff)

    def utilities(self, d) -> np.ndarray:
        return self.da * d + 0.5 * self.db * d * d

    def total_range(self, lo, hi) -> tuple[float, float]:
        return max(self.t_lo, float(self.eff @ lo)), min(self.t_hi, float(self.eff @ hi))

    def best_total(self, lo, hi, intervals=None) -> float:
        """Total effective demand maximising SW with demands in ``[lo, hi]`` and total in ``intervals``."""
        a, b = self.total_range(lo, hi)
        slack = 1e-9 * max(1.0, abs(a), abs(b))
        if a > b + slack:
            raise InfeasibleError("demand range and supply range do not overlap")
        if a > b:
            a = b = 0.5 * (a + b)
        if intervals is None:
            intervals = [(a, b)]
        brk = np.concatenate([self.supply_breaks, self.demand_breaks(lo, hi)])

        def sw(t):
            return float(self.utilities(self.fill(t, lo, hi)).sum()) - self.cost(t)

        best = None
        for i0, i1 in intervals:
            i0, i1 = max(i0, a), min(i1, b)
            if i0 > i1:
                continue
            t, v = _pw_argmax(sw, brk, i0, i1)
            if best is None or v > best[1]:
                best = (t, v)
        if best is None:
            raise InfeasibleError("no admissible total for this SC")
        return best[0]

    def cost_argmin(self, a: float, b: float) -> float:
        t, _ = _pw_argmax(lambda x: -self.cost(x), self.supply_breaks, a, b)
        return t

    def cost_extremes(self, a: float, b: float) -> tuple[float, float]:
        _, cmax = _pw_argmax(self.cost, self.supply_breaks, a, b)
        _, neg = _pw_argmax(lambda t: -self.cost(t), self.supply_breaks, a, b)
        return -neg, cmax


def _problems(scenario: MarketScenario) -> list[_ScProblem]:
    layout = scenario.layout
    return [_ScProblem(layout, k) for k in range(layout.n_sc)]


def _assemble(scenario: MarketScenario, probs, totals, demand_boxes) -> MarketState:
    layout = scenario.layout
    x = np.zeros(layout.size)
    rho = np.zeros(layout.n_sc)
    for k, (p, t, (lo, hi)) in enumerate(zip(probs, totals, demand_boxes)):
        x[p.supply_index] = p.split(t)
        x[layout.n_supply + p.demand_index] = p.fill(t, lo, hi)
        # the SC's common marginal cost serves as its price
        rho[k] = p.price(t) if p.sa.size else 0.0
    x[layout.price_slice] = rho
    return MarketState.from_vector(layout, x)


def _payoffs(scenario: MarketScenario, state: MarketState) -> tuple[np.ndarray, np.ndarray]:
    """Per-SC total cost and per-customer gross utility."""
    layout = scenario.layout
    q, d, _ = layout.split(state.to_vector(layout))
    costs = np.bincount(layout.supply_sc, weights=layout.supply_alpha * q + 0.5 * layout.supply_beta * q * q, minlength=layout.n_sc)
    utils = layout.demand_alpha * d + 0.5 * layout.demand_beta * d * d
    return costs, utils


def stakeholder_payoffs(scenario: MarketScenario, state: MarketState) -> tuple[np.ndarray, np.ndarray]:
    """SC payoffs (negative total cost) and customer payoffs (gross utility)."""
    costs, utils = _payoffs(scenario, state)
    return -costs, utils


def _spread(v: np.ndarray) -> float:
    return float(v.max() - v.min()) if v.size else 0.0


# -- allocations --------------------------------------------------------------

def bounded_utilitarian(scenario: MarketScenario, options: Optional[WelfareOptions] = None) -> MarketState:
    """Maximise total utility minus total cost over the box-feasible allocations."""
    probs = _problems(scenario)
    boxes = [(p.dlo, p.dhi) for p in probs]
    totals = [p.best_total(lo, hi) for p, (lo, hi) in zip(probs, boxes)]
    return _assemble(scenario, probs, totals, boxes)


def _superlevel(alpha, beta, lo, hi, level):
    """Box part of ``{d : alpha d + beta d^2 / 2 >= level}`` per customer, or None if empty."""
    disc = alpha * alpha + 2.0 * beta * level
    if np.any(disc < 0):
        return None
    root = np.sqrt(disc)
    r1, r2 = (-alpha + root) / beta, (-alpha - root) / beta
    a, b = np.maximum(lo, np.minimum(r1, r2)), np.minimum(hi, np.maximum(r1, r2))
    # a level sitting exactly on a box edge can invert the interval by rounding
    if np.any(a > b + 1e-9 * np.maximum(1.0, np.abs(b))):
        return None
    return np.minimum(a, b), b


def _increasing_inverse(alpha, beta, level):
    """Smallest ``d`` with utility ``level`` (capped at the utility peak)."""
    disc = np.maximum(alpha * alpha + 2.0 * beta * level, 0.0)
    return (-alpha + np.sqrt(disc)) / beta


def rawlsian_allocation(scenario: MarketScenario, options: Optional[WelfareOptions] = None) -> MarketState:
    """Maximise the smallest stakeholder payoff, then total welfare among the maximisers."""
    options = options or WelfareOptions()
    probs = _problems(scenario)
    base = bounded_utilitarian(scenario, options)
    sc_pay, cu_pay = stakeholder_payoffs(scenario, base)
    floor = float(np.concatenate([sc_pay, cu_pay]).min())

    def sc_state(p: _ScProblem, t: float):
        box = _superlevel(p.da, p.db, p.dlo, p.dhi, t) if p.da.size else (p.dlo, p.dhi)
        if box is None:
            return None
        a, b = p.total_range(*box)
        if a > b:
            return None
        return box, a, b

    def feasible(t: float) -> bool:
        for p in probs:
            st = sc_state(p, t)
            if st is None:
                return False
            _, a, b = st
            cmin, _ = p.cost_extremes(a, b)
            if -cmin < t:
                return False
        return True

    ceilings = [float(np.max(p.da**2 / (-2.0 * p.db))) for p in probs if p.da.size]
    for p in probs:
        cmin, _ = p.cost_extremes(p.t_lo, p.t_hi)
        ceilings.append(-cmin)
    ceiling = max(min(ceilings), floor)
    level = _bisect(feasible, floor, ceiling, options.tolerance)

    totals, boxes = [], []
    for p in probs:
        box, a, b = sc_state(p, level)
        allowed = _pw_window(p.cost, p.supply_breaks, a, b, -math.inf, -level)
        if not allowed:
            t = p.cost_argmin(a, b)
            allowed = [(t, t)]
        totals.append(p.best_total(box[0], box[1], allowed))
        boxes.append(box)
    return _assemble(scenario, probs, totals, boxes)


def egalitarian_allocation(scenario: MarketScenario, options: Optional[WelfareOptions] = None) -> MarketState:
    """Minimise the customer payoff spread, then the SC payoff spread, then maximise welfare.

    Requires each customer's utility to be increasing on its box.
    """
    options = options or WelfareOptions()
    probs = _problems(scenario)
    for p in probs:
        if p.da.size and np.any(p.dhi > -p.da / p.db * (1 + 1e-12)):
            raise MarketError("egalitarian allocation needs utilities increasing on each customer's box")
    base = bounded_utilitarian(scenario, options)
    _, cu_pay = stakeholder_payoffs(scenario, base)
    customers = [p for p in probs if p.da.size]
    if not customers:
        return base
    u_lo = np.concatenate([p.utilities(p.dlo) for p in customers])
    u_hi = np.concatenate([p.utilities(p.dhi) for p in customers])
    tol = options.tolerance

    def boxes_at(p: _ScProblem, s: float, w: float):
        lo = np.clip(_increasing_inverse(p.da, p.db, s), p.dlo, p.dhi)
        hi = np.clip(_increasing_inverse(p.da, p.db, s + w), p.dlo, p.dhi)
        return lo, hi

    def s_interval(w: float):
        s_lo, s_hi = float(u_lo.max() - w), float(u_hi.min())
        if s_lo > s_hi:
            return None
        for p in customers:
            # the committed minimum grows with s, the reachable maximum too
            if float(p.eff @ boxes_at(p, s_lo, w)[0]) > p.t_hi:
                return None
            if float(p.eff @ boxes_at(p, s_hi, w)[1]) < p.t_lo:
                return None
            s_hi = _bisect(lambda s: float(p.eff @ boxes_at(p, s, w)[0]) <= p.t_hi, s_lo, s_hi, tol)
            s_lo = -_bisect(lambda s: float(p.eff @ boxes_at(p, -s, w)[1]) >= p.t_lo, -s_hi, -s_lo, tol)
            if s_lo > s_hi:
                return None
        return s_lo, s_hi

    w_util = _spread(cu_pay)
    if s_interval(0.0) is not None:
        width = 0.0
    else:
        width = -_bisect(lambda w: s_interval(-w) is not None, -w_util, 0.0, tol)
    width += tol * max(1.0, w_util)
    interval = s_interval(width)
    if interval is None:
        return base
    s_lo, s_hi = interval

    def sc_ranges(s: float):
        out = []
        for p in probs:
            lo, hi = boxes_at(p, s, width) if p.da.size else (p.dlo, p.dhi)
            a, b = p.total_range(lo, hi)
            b = max(a, b)
            out.append((lo, hi, a, b) + p.cost_extremes(a, b))
        return out

    best = None
    for s in np.linspace(s_lo, s_hi, options.grid_points) if s_hi > s_lo else [s_lo]:
        ranges = sc_ranges(float(s))
        cmin = max(r[4] for r in ranges)
        cmax = min(r[5] for r in ranges)
        need = max(0.0, cmin - cmax)
        if best is None or need < best[0] - tol * max(1.0, abs(need)):
            best = (need, float(s), ranges, cmin, cmax)
    need, s, ranges, cmin, cmax = best
    eps = tol * max(1.0, abs(cmin), abs(cmax))
    r_lo, r_hi = cmin - need, max(cmax, cmin - need)

    candidates = []
    for r in np.linspace(r_lo, r_hi, options.grid_points) if r_hi > r_lo else [r_lo]:
        totals, boxes, ok = [], [], True
        for p, (lo, hi, a, b, _, _) in zip(probs, ranges):
            allowed = _pw_window(p.cost, p.supply_breaks, a, b, r - eps, r + need + eps)
            if not allowed:
                ok = False
                break
            totals.append(p.best_total(lo, hi, allowed))
            boxes.append((lo, hi))
        if ok:
            state = _assemble(scenario, probs, totals, boxes)
            candidates.append((_sw(scenario, state), state))
    if not candidates:
        return base
    # keep the first best so ties resolve deterministically
    top = max(c[0] for c in candidates)
    return next(st for v, st in candidates if v == top)


def _sw(scenario: MarketScenario, state: MarketState) -> float:
    costs, utils = _payoffs(scenario, state)
    return float(utils.sum() - costs.sum())


def allocation_ratios(values) -> np.ndarray:
    """Each payoff divided by the largest one in its class."""
    v = np.asarray(values, dtype=float)
    if v.size == 0 or not np.abs(v).max() > 0:
        raise ValueError("allocation_ratios needs a nonzero payoff")
    return v / v.max()


def compare(scenario: MarketScenario, options: Optional[WelfareOptions] = None) -> WelfareReport:
    options = options or WelfareOptions()
    solvers = {
        "utilitarian": bounded_utilitarian,
        "egalitarian": egalitarian_allocation,
        "rawlsian": rawlsian_allocation,
    }
    allocations = {name: fn(scenario, options) for name, fn in solvers.items()}
    sw = {name: _sw(scenario, st) for name, st in allocations.items()}
    ref = sw["utilitarian"]
    ratio = {name: (v / ref if ref != 0 else math.nan) for name, v in sw.items()}
    costs, utils, cr, ur = {}, {}, {}, {}
    for name, st in allocations.items():
        c, u = _payoffs(scenario, st)
        costs[name], utils[name] = c, u
        cr[name] = allocation_ratios(c) if c.size and np.abs(c).max() > 0 else np.zeros_like(c)
        ur[name] = allocation_ratios(u) if u.size and np.abs(u).max() > 0 else np.zeros_like(u)
    return WelfareReport(
        allocations=allocations,
        utilitarian_sw=sw,
        sw_ratio=ratio,
        sc_cost_ratios=cr,
        customer_utility_ratios=ur,
        sc_costs=costs,
        customer_utilities=utils,
    )
