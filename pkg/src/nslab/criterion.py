"""Dyadic-interval criterion quantities evaluated on block-norm time series.

For exponents (r, s) the scaled integral at scale p and time t0 is

    Lambda_p(t0) = lambda_p^{r(3/s + 2/r - 1)} int_{t0 - lambda_p^-2}^{t0} sum_{q >= p-2} ||u_q||_s^r dt.

A time is flagged bad when the largest ``tail`` scanned scales include one
with Lambda_p(t0) >= delta^r; this finite stand-in for the limsup is the
only thing available from finite data.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .littlewood_paley import Q_MIN, dyadic

log = logging.getLogger(__name__)

MIN_SAMPLES = 8


class CoverageError(ValueError):
    """The series does not cover the requested dyadic interval well enough."""


@dataclass
class ShellNormSeries:
    times: np.ndarray
    shells: list
    norms: np.ndarray   # (time, shell)
    s: float
    source: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.norms = np.asarray(self.norms, dtype=float)
        self.shells = [int(q) for q in self.shells]
        if self.norms.shape != (len(self.times), len(self.shells)):
            raise ValueError(f"norms shape {self.norms.shape} does not match "
                             f"{len(self.times)} times x {len(self.shells)} shells")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("sample times must be strictly increasing")
        if np.any(self.norms < 0):
            raise ValueError("shell norms must be nonnegative")

    def column(self, q: int) -> np.ndarray:
        return self.norms[:, self.shells.index(q)]

    def tail_signal(self, p: int, r: float) -> np.ndarray:
        """sum_{q >= p-2} ||u_q||_s^r at every sample."""
        cols = [j for j, q in enumerate(self.shells) if q >= p - 2]
        if not cols:
            return np.zeros(len(self.times))
        return np.sum(self.norms[:, cols] ** r, axis=1)


@dataclass
class CriterionParams:
    r: float
    s: float
    alpha: float = 0.0
    delta: float = 0.1
    p_range: tuple = (2, 6)
    tail: int = 3

    def __post_init__(self):
        if not self.r > 2:
            raise ValueError(f"need r > 2, got {self.r}")
        if not self.s > 3:
            raise ValueError(f"need s > 3, got {self.s}")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        lo, hi = self.p_range
        if hi < lo:
            raise ValueError("empty p_range")
        if self.tail < 1:
            raise ValueError("tail must be >= 1")

    @property
    def scales(self) -> list:
        return list(range(self.p_range[0], self.p_range[1] + 1))

    @property
    def tail_scales(self) -> list:
        return self.scales[-self.tail:]

    @property
    def threshold(self) -> float:
        return float(self.delta) ** float(self.r)


def scaling_exponent(r, s):
    """r (3/s + 2/r - 1); exact when r and s are ints or Fractions."""
    if all(isinstance(v, (int, Fraction)) for v in (r, s)):
        r, s = Fraction(r), Fraction(s)
        return r * (3 / s + 2 / r - 1)
    r, s = float(r), float(s)
    return r * (3.0 / s + 2.0 / r - 1.0)


def dyadic_interval(p: int, t0: float, start: float | None = None) -> tuple:
    """I_p(t0) = [t0 - lambda_p^-2, t0]; rejects intervals reaching before ``start``."""
    a = t0 - dyadic(p) ** -2
    if start is not None and a < start - 1e-12 * max(1.0, abs(start)):
        raise CoverageError(f"I_{p}({t0}) = [{a}, {t0}] starts before the data at {start}")
    return a, t0


class _Cumulative:
    """Trapezoid antiderivative of a sampled signal with linear interpolation between samples."""

    def __init__(self, times: np.ndarray, values: np.ndarray):
        self.t = times
        self.v = values
        inc = 0.5 * np.diff(times) * (values[1:] + values[:-1])
        self.c = np.concatenate([[0.0], np.cumsum(inc)])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        t, v, c = self.t, self.v, self.c
        j = np.clip(np.searchsorted(t, x, side="right") - 1, 0, len(t) - 2)
        h = x - t[j]
        vx = v[j] + (v[j + 1] - v[j]) * h / (t[j + 1] - t[j])
        return c[j] + 0.5 * h * (v[j] + vx)


def _eps(series: ShellNormSeries) -> float:
    span = series.times[-1] - series.times[0] if len(series.times) > 1 else 1.0
    return 1e-9 * max(span, 1e-300)


def _count_in(series, a, b):
    eps = _eps(series)
    t = series.times
    return np.searchsorted(t, b + eps, side="right") - np.searchsorted(t, a - eps, side="left")


def _check_cover(series, p, t0, a, min_samples):
    eps = _eps(series)
    if a < series.times[0] - eps or t0 > series.times[-1] + eps:
        raise CoverageError(f"I_{p}({t0!r}) = [{a!r}, {t0!r}] leaves the data range "
                            f"[{series.times[0]!r}, {series.times[-1]!r}]")
    count = int(_count_in(series, a, t0))
    if count < min_samples:
        spacing = dyadic(p) ** -2 / (min_samples - 1)
        raise CoverageError(f"only {count} samples in I_{p}({t0!r}); need {min_samples}, "
                            f"i.e. sample spacing <= {spacing:.3g}")


def criterion_integral(series: ShellNormSeries, params: CriterionParams, p: int, t0: float,
                       min_samples: int = MIN_SAMPLES) -> float:
    """Lambda_p(t0) by the trapezoid rule on the stored samples."""
    if not math.isclose(float(series.s), float(params.s), rel_tol=1e-12):
        raise ValueError(f"series exponent {series.s} differs from params.s = {params.s}")
    a, b = dyadic_interval(p, t0)
    _check_cover(series, p, t0, a, min_samples)
    r = float(params.r)
    cum = _Cumulative(series.times, series.tail_signal(p, r))
    integral = float(cum(b) - cum(a))
    return dyadic(p) ** float(scaling_exponent(float(r), float(params.s))) * max(integral, 0.0)


@dataclass
class CriterionRow:
    t0: float
    p: int
    lambda_p: float
    interval: tuple
    integral: float
    flag: bool   # Lambda_p(t0) >= delta^r


@dataclass
class CriterionReport:
    params: CriterionParams
    rows: list
    t0_grid: np.ndarray
    proxy: np.ndarray          # max over the tail scales, per t0
    bad: np.ndarray            # bool per t0
    notes: list = field(default_factory=list)

    @property
    def bad_times(self) -> list:
        return [float(t) for t, b in zip(self.t0_grid, self.bad) if b]

    @property
    def summary(self) -> float:
        return float(self.proxy.max()) if self.proxy.size else 0.0

    def integrals(self) -> dict:
        return {(row.t0, row.p): row.integral for row in self.rows}


def default_t0_grid(series: ShellNormSeries, params: CriterionParams) -> np.ndarray:
    """Stored sample times at least lambda_{p_min}^-2 after the series start."""
    start = series.times[0] + dyadic(params.p_range[0]) ** -2
    return series.times[series.times >= start - _eps(series)]


def detect_bad_points(series: ShellNormSeries, params: CriterionParams, t0_grid=None,
                      min_samples: int = MIN_SAMPLES) -> CriterionReport:
    if not math.isclose(float(series.s), float(params.s), rel_tol=1e-12):
        raise ValueError(f"series exponent {series.s} differs from params.s = {params.s}")
    t0s = default_t0_grid(series, params) if t0_grid is None else np.asarray(t0_grid, dtype=float)
    if not len(t0s):
        raise CoverageError(f"series spans {series.times[-1] - series.times[0]!r}, shorter than "
                            f"lambda_{params.p_range[0]}^-2 = {dyadic(params.p_range[0]) ** -2!r}")
    r = float(params.r)
    expo = float(scaling_exponent(r, float(params.s)))
    thr = params.threshold
    values = np.zeros((len(t0s), len(params.scales)))
    for j, p in enumerate(params.scales):
        length = dyadic(p) ** -2
        starts = t0s - length
        for a, t0 in zip(starts, t0s):
            _check_cover(series, p, t0, a, min_samples)
        cum = _Cumulative(series.times, series.tail_signal(p, r))
        values[:, j] = dyadic(p) ** expo * np.maximum(cum(t0s) - cum(starts), 0.0)
    rows = []
    for i, t0 in enumerate(t0s):
        for j, p in enumerate(params.scales):
            rows.append(CriterionRow(float(t0), p, dyadic(p), dyadic_interval(p, float(t0)),
                                     float(values[i, j]), bool(values[i, j] >= thr)))
    k = len(params.tail_scales)
    proxy = values[:, -k:].max(axis=1) if len(t0s) else np.zeros(0)
    report = CriterionReport(params, rows, t0s, proxy, proxy >= thr)
    report.notes.append(f"limsup replaced by max over the {k} largest scanned scales")
    return report


def critical_quantity(series: ShellNormSeries, params: CriterionParams, t0: float,
                      q_range=None) -> dict:
    """q -> lambda_q^{3/s - 1} sup_{I_q(t0)} ||u_q||_s over the stored samples."""
    qs = [q for q in series.shells if q >= 0] if q_range is None else list(q_range)
    inv_s = 0.0 if math.isinf(float(params.s)) else 1.0 / float(params.s)
    eps = _eps(series)
    out = {}
    for q in qs:
        a, b = dyadic_interval(q, t0)
        if a < series.times[0] - eps or b > series.times[-1] + eps:
            raise CoverageError(f"I_{q}({t0}) leaves the data range")
        sel = (series.times >= a - eps) & (series.times <= b + eps)
        if not np.any(sel):
            raise CoverageError(f"no samples inside I_{q}({t0})")
        out[q] = dyadic(q) ** (3.0 * inv_s - 1.0) * float(series.column(q)[sel].max())
    return out


def envelope_source(q: int, p: int, params: CriterionParams, delta: float | None = None) -> float:
    """delta^r lambda_q^{3/s-1} lambda_p^{r(1-3/s)}, the forcing level of the envelope."""
    r, s = float(params.r), float(params.s)
    a = 3.0 / s
    delta = float(params.delta) if delta is None else float(delta)
    return delta ** r * dyadic(q) ** (a - 1.0) * dyadic(p) ** (r * (1.0 - a))


def gronwall_envelope(initial: float, q: int, p: int, params: CriterionParams, c: float,
                      C: float, elapsed, delta: float | None = None):
    """Bound on ||u_q(t)||_s^{r-1} after ``elapsed = t - tau_p``, from ||u_q(tau_p)||_s = initial.

    Returned in (r-1)-th power units; see :func:`envelope_norm`.
    """
    elapsed = np.asarray(elapsed, dtype=float)
    if np.any(elapsed < 0):
        raise ValueError("envelope needs t >= tau_p")
    r = float(params.r)
    decay = np.exp(-c * dyadic(q) ** 2 * elapsed)
    source = envelope_source(q, p, params, delta)
    out = initial ** (r - 1.0) * decay + C * (1.0 - decay) * source
    return float(out) if out.ndim == 0 else out


def envelope_norm(value, r: float):
    return np.asarray(value) ** (1.0 / (float(r) - 1.0))


def envelope_check(series: ShellNormSeries, params: CriterionParams, q: int, p: int,
                   tau: float, c: float, C: float, delta: float | None = None) -> float:
    """max over samples t >= tau of ||u_q(t)||^{r-1} / envelope(t); <= 1 means the envelope holds."""
    eps = _eps(series)
    sel = series.times >= tau - eps
    t = series.times[sel]
    vals = series.column(q)[sel]
    if not len(t):
        raise CoverageError(f"no samples after tau = {tau}")
    init = float(np.interp(tau, series.times, series.column(q)))
    env = gronwall_envelope(init, q, p, params, c, C, t - tau, delta)
    r = float(params.r)
    traj = vals ** (r - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(env > 0, traj / env, np.where(traj > 0, np.inf, 0.0))
    return float(ratio.max())


# --- the constant chain for delta --------------------------------------------------

def envelope_sum_constant(r: float, s: float, p: int = 0, rtol: float = 1e-15,
                          max_terms: int = 100000) -> float:
    """M with sum_{q>=p-2} (lambda_q^{3/s-1} lambda_p^{r(1-3/s)})^{r/(r-1)} = M lambda_p^{r(1-3/s)}.

    The sum is evaluated term by term until the tail is negligible; its
    value does not depend on p.
    """
    r, s = float(r), float(s)
    a = 3.0 / s - 1.0
    b = r * (1.0 - 3.0 / s)
    g = r / (r - 1.0)
    total = 0.0
    for q in range(p - 2, p - 2 + max_terms):
        term = (dyadic(q) ** a * dyadic(p) ** b) ** g
        total += term
        if term <= rtol * total:
            break
    return total / dyadic(p) ** b


def envelope_sum_closed_form(r: float, s: float) -> float:
    r, s = float(r), float(s)
    e = (3.0 / s - 1.0) * r / (r - 1.0)
    return 2.0 ** (-2.0 * e) / (1.0 - 2.0 ** e)


def admissible_delta(r: float, s: float, C: float) -> dict:
    """delta <= 1/(64 M C) with M from the geometric sum and C a fitted constant."""
    M = envelope_sum_constant(r, s)
    return {"M": M, "C": C, "delta_admissible": 1.0 / (64.0 * M * C) if C > 0 else math.inf}


# --- synthetic signals ---------------------------------------------------------------

def cantor_focal_times(level: int, offset: float = 0.0) -> np.ndarray:
    """Right endpoints of the 2^level intervals of the keep-outer-quarters Cantor set on [0, 1].

    The limit set has dimension log 2 / log 4 = 1/2 at the dyadic time scales 4^-p.
    """
    lefts = np.array([0.0])
    length = 1.0
    for _ in range(level):
        length /= 4.0
        lefts = np.concatenate([lefts, lefts + 3.0 * length])
        lefts.sort()
    return offset + lefts + length


def self_similar_series(focal_times, r: float, s: float, delta: float, dt: float,
                        t_end: float, q_max: int = 12, gain: float = 1.0,
                        t_start: float = 0.0) -> ShellNormSeries:
    """Block norms that cascade into ever smaller scales as t approaches each focal time.

    Before a focal time T the active block is q(t) = floor(-log2(T - t) / 2), so
    lambda_{q(t)}^-2 ~ T - t, and its norm is gain * delta * lambda_q^{1-3/s},
    the size that keeps Lambda_p(T) above delta^r at every scale.
    """
    s = float(s)
    count = int(round((t_end - t_start) / dt)) + 1
    times = t_start + dt * np.arange(count)
    shells = list(range(Q_MIN, q_max + 1))
    active = np.zeros((count, len(shells)), dtype=bool)
    for T in np.atleast_1d(focal_times):
        gap = T - times
        live = gap > 0
        q = np.full(count, -10**6)
        q[live] = np.floor(-0.5 * np.log2(gap[live])).astype(int)
        ok = live & (q >= Q_MIN) & (q <= q_max)
        active[np.nonzero(ok)[0], q[ok] - Q_MIN] = True
    amp = np.array([gain * delta * dyadic(q) ** (1.0 - 3.0 / s) for q in shells])
    return ShellNormSeries(times, shells, active * amp[None, :], s, source="self-similar")
