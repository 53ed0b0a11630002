"""Per-shell L^s balance: paraproduct flux terms and the shell inequality check.

For a block ``q`` and exponent ``s >= 2`` the pairing weight is
``w = u_q |u_q|^(s-2)``.  The advection term is split into low-high,
high-low and resonant interactions

    I1: sum_{|p-q|<=2} P Delta_q (u_{<=p-2} . grad u_p)
    I2: sum_{|p-q|<=2} P Delta_q (u_p . grad u_{<=p-2})
    I3: sum_{p>=q-2}   P Delta_q (ut_p . grad u_p),   ut_p = u_{p-1} + u_p + u_{p+1}

each paired with ``w``.  Products are formed on a 3/2-padded grid, so for
fields with clean Nyquist planes they are exact trigonometric products.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .littlewood_paley import Q_MIN, ShellCutoffFamily, build_cutoffs, dyadic
from .spectral import (
    TWO_PI, Grid, PhysicalField, SpectralField, irfft3, rfft3, lebesgue_norm,
    leray_project_coeffs,
)


class ResolutionError(ValueError):
    """Stored samples are too sparse in time for the requested shells."""


# --- padded products ------------------------------------------------------------

def _pad_index(n: int, m: int):
    src = np.r_[0:n // 2, n // 2 + 1:n]
    signed = np.where(src < n // 2, src, src - n)
    return src, signed % m


def pad(coeffs: np.ndarray, n: int) -> np.ndarray:
    """Embed half-spectrum coefficients of an n-grid into the 3n/2 grid (Nyquist dropped)."""
    m = 3 * n // 2
    src, dst = _pad_index(n, m)
    out = np.zeros(coeffs.shape[:-3] + (m, m, m // 2 + 1), dtype=complex)
    lead = coeffs.shape[:-3]
    sl = tuple(slice(None) for _ in lead)
    out[sl + np.ix_(dst, dst, np.arange(n // 2))] = coeffs[sl + np.ix_(src, src, np.arange(n // 2))]
    return out


def unpad(coeffs: np.ndarray, n: int) -> np.ndarray:
    m = 3 * n // 2
    src, dst = _pad_index(n, m)
    out = np.zeros(coeffs.shape[:-3] + (n, n, n // 2 + 1), dtype=complex)
    sl = tuple(slice(None) for _ in coeffs.shape[:-3])
    out[sl + np.ix_(src, src, np.arange(n // 2))] = coeffs[sl + np.ix_(dst, dst, np.arange(n // 2))]
    return out


class _ProductCache:
    """Padded physical velocities and gradients of multiplier-filtered copies of one field."""

    def __init__(self, u: SpectralField, cutoffs: ShellCutoffFamily):
        self.u = u
        self.cutoffs = cutoffs
        self.n = u.grid.n
        self.m = 3 * self.n // 2
        kvec = np.fft.fftfreq(self.m, 1.0 / self.m)
        k3 = np.fft.rfftfreq(self.m, 1.0 / self.m)
        self.kpad = np.stack(np.meshgrid(kvec, kvec, k3, indexing="ij"))
        self._vel = {}
        self._grad = {}

    def _filtered(self, key):
        kind, p = key
        c = self.cutoffs
        if kind == "all":
            return self.u.coeffs
        if kind == "shell":
            if p < Q_MIN or p > c.q_max:
                return None
            return self.u.coeffs * c.multiplier(p)
        if kind == "low":
            return self.u.coeffs * c.low_multiplier(p) if p > 0 else None
        if kind == "tilde":
            return self.u.coeffs * c.tilde_multiplier(p)
        raise KeyError(kind)

    def velocity(self, key):
        if key not in self._vel:
            f = self._filtered(key)
            self._vel[key] = None if f is None else irfft3(pad(f, self.n), self.m)
        return self._vel[key]

    def gradient(self, key):
        """d_j u_i on the padded grid, shape (3 j, 3 i, m, m, m)."""
        if key not in self._grad:
            f = self._filtered(key)
            if f is None:
                self._grad[key] = None
            else:
                fp = pad(f, self.n)
                self._grad[key] = irfft3(1j * self.kpad[:, None] * fp[None], self.m)
        return self._grad[key]

    def advect(self, pairs) -> np.ndarray:
        """Spectrum (n-grid) of sum over pairs (a, b) of a . grad b."""
        acc = np.zeros((3,) + (self.m,) * 3)
        for a_key, b_key in pairs:
            a = self.velocity(a_key)
            gb = self.gradient(b_key)
            if a is None or gb is None:
                continue
            acc += np.einsum("jxyz,jixyz->ixyz", a, gb)
        return unpad(rfft3(acc), self.n)


def _pair(grid: Grid, a: np.ndarray, b: np.ndarray) -> float:
    return TWO_PI ** 3 * float(np.sum(grid.weights * np.real(np.sum(a * np.conj(b), axis=0))))


def shell_weight(u: SpectralField, q: int, s: float, cutoffs: ShellCutoffFamily):
    """(u_q physical, spectrum of u_q |u_q|^(s-2) on the n-grid)."""
    uq = irfft3(u.coeffs * cutoffs.multiplier(q), u.grid.n)
    if s == 2:
        w = uq
    else:
        mag = np.sqrt(np.sum(uq ** 2, axis=0))
        w = uq * mag ** (s - 2.0)
    return uq, rfft3(w)


def _test_function(u, q, s, cutoffs):
    """P Delta_q w, the dual side of every flux pairing."""
    _, what = shell_weight(u, q, s, cutoffs)
    return leray_project_coeffs(what * cutoffs.multiplier(q), u.grid)


@dataclass
class FluxDecomposition:
    q: int
    s: float
    signed: tuple  # (I1, I2, I3) signed integrals
    unsplit: float

    @property
    def magnitudes(self) -> tuple:
        return tuple(abs(v) for v in self.signed)

    @property
    def residual(self) -> float:
        return abs(sum(self.signed) - self.unsplit)


def flux_decomposition(u: SpectralField, q: int, s_values, cutoffs: ShellCutoffFamily | None = None,
                       cache: _ProductCache | None = None) -> list:
    """Signed I1, I2, I3 and the unsplit flux for each exponent in ``s_values``."""
    cutoffs = cutoffs or build_cutoffs(u.grid)
    cache = cache or _ProductCache(u, cutoffs)
    near = range(q - 2, q + 3)
    terms = [
        cache.advect([(("low", p), ("shell", p)) for p in near]),
        cache.advect([(("shell", p), ("low", p)) for p in near]),
        cache.advect([(("tilde", p), ("shell", p)) for p in range(max(q - 2, Q_MIN), cutoffs.q_max + 1)]),
    ]
    full = cache.advect([(("all", 0), ("all", 0))])
    out = []
    for s in s_values:
        if s < 2:
            raise ValueError(f"flux terms need s >= 2, got {s}")
        test = _test_function(u, q, s, cutoffs)
        signed = tuple(_pair(u.grid, t, test) for t in terms)
        out.append(FluxDecomposition(q, s, signed, _pair(u.grid, full, test)))
    return out


def nonlinear_flux_terms(u: SpectralField, q: int, s: float,
                         cutoffs: ShellCutoffFamily | None = None) -> tuple:
    """(|I1|, |I2|, |I3|) for block ``q`` at exponent ``s``."""
    return flux_decomposition(u, q, [s], cutoffs)[0].magnitudes


def unsplit_flux(u: SpectralField, q: int, s: float, cutoffs: ShellCutoffFamily | None = None) -> float:
    """Signed int P Delta_q(u . grad u) . u_q |u_q|^(s-2)."""
    cutoffs = cutoffs or build_cutoffs(u.grid)
    cache = _ProductCache(u, cutoffs)
    full = cache.advect([(("all", 0), ("all", 0))])
    return _pair(u.grid, full, _test_function(u, q, s, cutoffs))


def shell_energy_transfers(u: SpectralField, cutoffs: ShellCutoffFamily | None = None) -> dict:
    """q -> (P Delta_q(u . grad u), u); these sum to (u . grad u, u) = 0."""
    cutoffs = cutoffs or build_cutoffs(u.grid)
    full = _ProductCache(u, cutoffs).advect([(("all", 0), ("all", 0))])
    proj = leray_project_coeffs(full, u.grid)
    return {q: _pair(u.grid, proj * cutoffs.multiplier(q), u.coeffs) for q in cutoffs.shells}


def dissipation_ratio(u: SpectralField, q: int, s: float, cutoffs: ShellCutoffFamily | None = None) -> float:
    """(-Lap u_q, u_q |u_q|^(s-2)) / (lambda_q^2 ||u_q||_s^s); nan for an empty block."""
    cutoffs = cutoffs or build_cutoffs(u.grid)
    uq, what = shell_weight(u, q, s, cutoffs)
    norm = lebesgue_norm(PhysicalField(u.grid, uq), s)
    if norm == 0.0:
        return math.nan
    lap = u.grid.k2 * u.coeffs * cutoffs.multiplier(q)
    return _pair(u.grid, lap, what) / (dyadic(q) ** 2 * norm ** s)


# --- the shell inequality ----------------------------------------------------------

def _inv(s: float) -> float:
    return 0.0 if math.isinf(s) else 1.0 / s


def rhs_bound(norms: dict, q: int, s: float) -> tuple:
    """(rhs_low, rhs_high) of the per-shell inequality from block norms ``norms[p]``.

    Shell ranges are clipped to the blocks present in ``norms``, which must be
    contiguous from -1.
    """
    if not norms:
        raise ValueError("no shell norms supplied")
    top = max(norms)
    missing = [p for p in range(Q_MIN, top + 1) if p not in norms]
    if missing:
        raise ValueError(f"missing shell norms for q = {missing}")
    a = 3.0 * _inv(s)
    low = sum(dyadic(p) ** a * norms[p] for p in range(Q_MIN, min(q, top) + 1))
    near = sum(dyadic(p) * norms[p] for p in range(max(q - 2, Q_MIN), min(q + 2, top) + 1))
    high = dyadic(q) ** (a + 1.0) * sum(norms[p] ** 2 for p in range(max(q - 2, Q_MIN), top + 1))
    return low * near, high


def term_bounds(norms: dict, q: int, s: float) -> tuple:
    """Right sides of the three term estimates, each including ||u_q||_s^(s-1)."""
    a = 3.0 * _inv(s)
    top = max(norms)
    tail = norms[q] ** (s - 1.0) if not math.isinf(s) else math.nan
    low = sum(dyadic(p) ** a * norms[p] for p in range(Q_MIN, min(q, top) + 1))
    low1 = sum(dyadic(p) ** (a + 1.0) * norms[p] for p in range(Q_MIN, min(q, top) + 1))
    near = range(max(q - 2, Q_MIN), min(q + 2, top) + 1)
    b1 = low * sum(dyadic(p) * norms[p] for p in near) * tail
    b2 = sum(norms[p] for p in near) * low1 * tail
    b3 = dyadic(q) ** (1.0 + a) * sum(norms[p] ** 2 for p in range(max(q - 3, Q_MIN), top + 1)) * tail
    return b1, b2, b3


@dataclass
class ShellSamples:
    """Per-time block data gathered from a trajectory at one exponent."""

    s: float
    shells: list
    times: np.ndarray
    norms: np.ndarray                 # (time, shell)
    dissipation: np.ndarray           # (time, shell), nan where the block is empty
    flux: np.ndarray | None = None    # (time, shell, 3) magnitudes |I1|, |I2|, |I3|
    grid_n: int = 0

    def norm_map(self, i: int) -> dict:
        return {q: float(v) for q, v in zip(self.shells, self.norms[i])}


def shell_samples(trajectory, s: float, q_range=None, flux_terms: bool = False) -> ShellSamples:
    """Collect block norms, dissipation ratios and optionally flux terms from (t, u) pairs."""
    times, norms, diss, flux = [], [], [], []
    shells = None
    grid_n = 0
    for t, u in trajectory:
        grid_n = u.grid.n
        cutoffs = build_cutoffs(u.grid)
        if shells is None:
            shells = list(cutoffs.shells)
            qs = shells if q_range is None else [q for q in q_range if q in shells]
        row_n = np.zeros(len(shells))
        row_d = np.full(len(shells), math.nan)
        row_f = np.zeros((len(shells), 3))
        cache = _ProductCache(u, cutoffs) if flux_terms else None
        for j, q in enumerate(shells):
            uq, what = shell_weight(u, q, s if s != math.inf else 2.0, cutoffs)
            nrm = lebesgue_norm(PhysicalField(u.grid, uq), s)
            row_n[j] = nrm
            if q not in qs or nrm == 0.0 or q == Q_MIN:
                continue
            if not math.isinf(s):
                lap = u.grid.k2 * u.coeffs * cutoffs.multiplier(q)
                row_d[j] = _pair(u.grid, lap, what) / (dyadic(q) ** 2 * nrm ** s)
            if flux_terms and not math.isinf(s):
                row_f[j] = flux_decomposition(u, q, [s], cutoffs, cache)[0].magnitudes
        times.append(t)
        norms.append(row_n)
        diss.append(row_d)
        flux.append(row_f)
    return ShellSamples(
        s=s, shells=shells or [], times=np.asarray(times, dtype=float),
        norms=np.asarray(norms).reshape(len(times), -1),
        dissipation=np.asarray(diss).reshape(len(times), -1),
        flux=np.asarray(flux).reshape(len(times), -1, 3) if flux_terms else None,
        grid_n=grid_n,
    )


@dataclass
class ShellInequalityRecord:
    t: float
    q: int
    s: float
    lhs_diff: float
    lhs_visc: float
    rhs_low: float
    rhs_high: float
    i1: float = math.nan
    i2: float = math.nan
    i3: float = math.nan


@dataclass
class FittedConstants:
    """Fitted constants; ``None`` when the data never constrain them."""

    c_visc: float | None = None
    c_rhs: float | None = None
    c_i1: float | None = None
    c_i2: float | None = None
    c_i3: float | None = None


@dataclass
class ShellInequalityReport:
    constants: FittedConstants
    records: list
    violations: list = field(default_factory=list)
    ratios: np.ndarray | None = None

    @property
    def passed(self) -> bool:
        return not self.violations


def required_spacing(q_max: int) -> float:
    return 0.1 / dyadic(q_max) ** 2


def _midpoint(a, b):
    return np.sqrt(a * b)


def verify_shell_inequality(samples: ShellSamples, q_range, c_visc: float | None = None,
                            c_rhs: float | None = None, rel_floor: float = 1e-10) -> ShellInequalityReport:
    """Check d/dt||u_q||_s + c lambda_q^2 ||u_q||_s <= C (rhs_low + rhs_high) at sample midpoints.

    ``c_visc`` defaults to the smallest measured dissipation ratio over the
    checked blocks and ``c_rhs`` to the smallest constant making every record
    pass.  Blocks whose norm is below ``rel_floor`` times the largest block
    norm at that time carry only round-off and are skipped.
    """
    q_range = [q for q in q_range if q in samples.shells]
    times = samples.times
    if len(times) < 2 or not q_range:
        return ShellInequalityReport(FittedConstants(), [])
    spacing = float(np.max(np.diff(times)))
    limit = required_spacing(max(q_range))
    if spacing > limit * (1 + 1e-9):
        raise ResolutionError(
            f"sample spacing {spacing:.3g} too coarse for shell {max(q_range)}; "
            f"need stride * dt <= {limit:.3g}")
    s = samples.s
    col = {q: j for j, q in enumerate(samples.shells)}
    cols = [col[q] for q in q_range]

    if c_visc is None:
        d = samples.dissipation[:, cols]
        finite = d[np.isfinite(d)]
        c_visc_fit = float(finite.min()) if finite.size else None
    else:
        c_visc_fit = c_visc
    c_use = c_visc_fit if c_visc_fit is not None else 0.0

    records, checked, ratios, rhs_zero = [], [], [], []
    scale = samples.norms.max(axis=1)
    for i in range(len(times) - 1):
        h = times[i + 1] - times[i]
        n0, n1 = samples.norms[i], samples.norms[i + 1]
        mid = _midpoint(n0, n1)
        mid_map = {q: float(v) for q, v in zip(samples.shells, mid)}
        tm = 0.5 * (times[i] + times[i + 1])
        floor = rel_floor * max(scale[i], scale[i + 1])
        for q in q_range:
            j = col[q]
            a, b = n0[j], n1[j]
            if a > 0 and b > 0:
                diff = mid[j] * (math.log(b) - math.log(a)) / h
            else:
                diff = (b - a) / h
            lo, hi = rhs_bound(mid_map, q, s)
            rec = ShellInequalityRecord(tm, q, s, diff, dyadic(q) ** 2 * mid[j], lo, hi)
            if samples.flux is not None:
                rec.i1, rec.i2, rec.i3 = 0.5 * (samples.flux[i, j] + samples.flux[i + 1, j])
            records.append(rec)
            if max(a, b) <= floor:
                continue
            lhs = diff + c_use * rec.lhs_visc
            rhs = lo + hi
            if rhs > 0:
                ratios.append(lhs / rhs)
                checked.append(rec)
            elif lhs > 0:
                rhs_zero.append(rec)

    ratios = np.asarray(ratios)
    if c_rhs is None:
        c_rhs_fit = max(float(ratios.max()), 0.0) if ratios.size else None
    else:
        c_rhs_fit = c_rhs
    violations = list(rhs_zero)
    if c_rhs is not None and ratios.size:
        violations += [r for r, x in zip(checked, ratios) if x > c_rhs]

    consts = FittedConstants(c_visc_fit, c_rhs_fit)
    if samples.flux is not None:
        fits = [[], [], []]
        for i in range(len(times)):
            nm = samples.norm_map(i)
            for q in q_range:
                if nm[q] <= rel_floor * scale[i]:
                    continue
                bounds = term_bounds(nm, q, s)
                for k in range(3):
                    if bounds[k] > 0:
                        fits[k].append(samples.flux[i, col[q], k] / bounds[k])
        consts.c_i1, consts.c_i2, consts.c_i3 = (max(f) if f else None for f in fits)
    return ShellInequalityReport(consts, records, violations, ratios)
