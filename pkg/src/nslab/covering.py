"""Vitali covers of flagged times and Hausdorff premeasure trends.

Each bad time t carries the scale p at which its criterion fired; the
candidate interval is I_p(t) = [t - lambda_p^-2, t].  A greedy Vitali
selection keeps a disjoint subfamily whose 5-dilations cover every
candidate, and the premeasure at exponent d is sum (5 lambda_{p_i}^-2)^d.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .criterion import CriterionParams, CriterionReport, ShellNormSeries, _Cumulative, _check_cover
from .littlewood_paley import dyadic

log = logging.getLogger(__name__)

DILATION = 5


class CoverError(AssertionError):
    """A Vitali postcondition failed."""


@dataclass
class DyadicCover:
    floor: int
    intervals: list                      # (t_i, p_i) pairs
    dilation: int = DILATION

    def bounds(self, dilated: bool = False) -> list:
        out = []
        for t, p in self.intervals:
            a, b = t - dyadic(p) ** -2, t
            if dilated:
                c, h = 0.5 * (a + b), 0.5 * self.dilation * (b - a)
                a, b = c - h, c + h
            out.append((a, b))
        return out

    def covers(self, t: float, tol: float = 1e-12) -> bool:
        return any(a - tol <= t <= b + tol for a, b in self.bounds(dilated=True))

    def __len__(self):
        return len(self.intervals)


def _interval(t, p):
    return t - dyadic(p) ** -2, t


def vitali_cover(bad_points, floor: int) -> DyadicCover:
    """Greedy Vitali selection: longest first, leftmost on ties, closed-interval disjointness."""
    pts = [(float(t), int(p)) for t, p in bad_points]
    for t, p in pts:
        if p < floor:
            raise ValueError(f"bad point at t={t} carries p={p} below the floor {floor}")
    order = sorted(set(pts), key=lambda tp: (tp[1], _interval(*tp)[0]))
    kept = []
    for t, p in order:
        a, b = _interval(t, p)
        if all(b < ka or a > kb for ka, kb in (_interval(*k) for k in kept)):
            kept.append((t, p))
    cover = DyadicCover(floor, kept)
    dil = cover.bounds(dilated=True)
    tol = 1e-12
    for t, p in pts:
        a, b = _interval(t, p)
        if not any(da - tol <= a and b <= db + tol for da, db in dil):
            raise CoverError(f"I_{p}({t}) escapes every dilated kept interval")
    return cover


def premeasure_sum(cover: DyadicCover, d: float) -> float:
    """sum over the cover of (5 lambda_{p_i}^-2)^d."""
    if not d > 0:
        raise ValueError(f"premeasure exponent must be positive, got {d}")
    return float(sum((cover.dilation * dyadic(p) ** -2) ** d for _, p in cover.intervals))


def dimension_exponent(r, s, alpha, convention: str = "lemma"):
    """(r/2)(3/s + 2/r - alpha - 1) ("lemma") or twice that ("theorem"), clamped at 0."""
    if convention not in ("lemma", "theorem"):
        raise ValueError(f"unknown convention {convention!r}")
    if not r > 2 or not s > 3 or alpha < 0:
        raise ValueError(f"need r > 2, s > 3, alpha >= 0; got r={r}, s={s}, alpha={alpha}")
    exact = all(isinstance(v, (int, Fraction)) for v in (r, s, alpha))
    if exact:
        r, s, alpha = Fraction(r), Fraction(s), Fraction(alpha)
        d = r * (3 / s + 2 / r - alpha - 1)
        d = d / 2 if convention == "lemma" else d
    else:
        r, s, alpha = float(r), float(s), float(alpha)
        d = r * (3.0 / s + 2.0 / r - alpha - 1.0)
        d = d / 2.0 if convention == "lemma" else d
    if d <= 0:
        log.warning("dimension exponent %s <= 0 clamped to 0", d)
        return Fraction(0) if exact else 0.0
    return d


def selected_scales(report: CriterionReport, floor: int) -> list:
    """(t0, p) for every bad t0, p the smallest flagged scale >= floor."""
    flagged = {}
    for row in report.rows:
        if row.flag and row.p >= floor:
            flagged[row.t0] = min(flagged.get(row.t0, row.p), row.p)
    return [(float(t), flagged[float(t)]) for t in report.bad_times if float(t) in flagged]


def resolvable_floors(report: CriterionReport) -> list:
    """Scanned floors whose interval length is at least the t0 grid spacing."""
    t0 = np.asarray(report.t0_grid, dtype=float)
    spacing = float(np.min(np.diff(t0))) if len(t0) > 1 else math.inf
    scales = sorted({row.p for row in report.rows})
    return [p for p in scales if dyadic(p) ** -2 >= spacing * (1 - 1e-12)]


@dataclass
class PremeasureReport:
    floors: list
    d_grid: list
    sums: np.ndarray                    # (d, floor)
    counts: list                        # cover size per floor
    slopes: np.ndarray                  # per d: least-squares slope of log2 sum against floor
    bracket: tuple                      # (d_low, d_high) around the sign change
    notes: list = field(default_factory=list)

    @property
    def estimate(self) -> float:
        return 0.5 * (self.bracket[0] + self.bracket[1])


def premeasure_trend(report: CriterionReport, d_grid, floors=None, slope_tol: float = 1e-9) -> PremeasureReport:
    """Premeasure sums over increasing floors and the dimension bracket they imply.

    A d whose sums grow with the floor lies below the dimension of the bad
    set; one whose sums stay bounded lies above it.
    """
    d_grid = [float(d) for d in d_grid]
    if not d_grid or min(d_grid) <= 0:
        raise ValueError("d grid must be non-empty and positive")
    d_grid = sorted(d_grid)
    floors = resolvable_floors(report) if floors is None else list(floors)
    covers = [vitali_cover(selected_scales(report, p), p) for p in floors]
    sums = np.array([[premeasure_sum(c, d) for c in covers] for d in d_grid]).reshape(len(d_grid), len(floors))
    notes = []
    slopes = np.zeros(len(d_grid))
    if len(floors) >= 2 and np.all(sums > 0):
        x = np.asarray(floors, dtype=float)
        for i in range(len(d_grid)):
            slopes[i] = np.polyfit(x, np.log2(sums[i]), 1)[0]
        growing = [d for d, k in zip(d_grid, slopes) if k > slope_tol]
        bounded = [d for d, k in zip(d_grid, slopes) if k <= slope_tol]
        lo = max(growing) if growing else 0.0
        hi = min((d for d in bounded if d > lo), default=math.inf)
        bracket = (lo, hi)
    else:
        bracket = (0.0, 0.0)
        notes.append("empty cover at some floor; bad set too small to resolve")
    return PremeasureReport(floors, d_grid, sums, [len(c) for c in covers], slopes, bracket, notes)


def parse_d_grid(spec: str) -> list:
    """'a:b:step' -> [a, a+step, ..., b] (b included up to rounding)."""
    try:
        a, b, h = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ValueError(f"d grid must look like a:b:step, got {spec!r}") from None
    if h <= 0 or b < a:
        raise ValueError(f"bad d grid {spec!r}")
    count = int(math.floor((b - a) / h + 1e-9)) + 1
    return [round(a + i * h, 12) for i in range(count)]


@dataclass
class JensenCheck:
    K: float
    ratios: np.ndarray


def jensen_check(series: ShellNormSeries, params: CriterionParams, t0_grid) -> JensenCheck:
    """Fit K in int sum_{q>=p-2} ||u_q||^r <= K lambda_p^{-r alpha} int sup_{q>=p-2} lambda_q^{r alpha} ||u_q||^r."""
    r, alpha = float(params.r), float(params.alpha)
    t0s = np.asarray(t0_grid, dtype=float)
    ratios = []
    for p in params.scales:
        cols = [j for j, q in enumerate(series.shells) if q >= p - 2]
        if not cols:
            continue
        block = series.norms[:, cols] ** r
        weights = np.array([dyadic(series.shells[j]) ** (r * alpha) for j in cols])
        lhs_cum = _Cumulative(series.times, block.sum(axis=1))
        rhs_cum = _Cumulative(series.times, (block * weights).max(axis=1))
        starts = t0s - dyadic(p) ** -2
        for a, t0 in zip(starts, t0s):
            _check_cover(series, p, t0, a, 2)
        lhs = lhs_cum(t0s) - lhs_cum(starts)
        rhs = dyadic(p) ** (-r * alpha) * (rhs_cum(t0s) - rhs_cum(starts))
        ok = rhs > 0
        ratios.extend((lhs[ok] / rhs[ok]).tolist())
    ratios = np.asarray(ratios)
    return JensenCheck(float(ratios.max()) if ratios.size else 0.0, ratios)
