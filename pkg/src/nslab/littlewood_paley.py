"""Dyadic Littlewood-Paley blocks, Besov norms and Bernstein ratios.

The low-frequency profile ``chi`` equals 1 on [0, 3/4], vanishes on [1, inf)
and is glued by the standard smooth step built from exp(-1/t).  Shell
multipliers are ``phi_q(xi) = phi(xi / 2^q)`` with ``phi(xi) = chi(xi/2) -
chi(xi)``; block ``q = -1`` uses ``chi`` itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import Grid, SpectralField, lebesgue_norm, irfft3, PhysicalField

Q_MIN = -1


def dyadic(q: int) -> float:
    """lambda_q = 2^q, which also gives lambda_{-1} = 1/2."""
    return 2.0 ** q


def _h(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, monotone in between."""
    a = _h(t)
    b = _h(1.0 - np.asarray(t, dtype=float))
    return a / (a + b)


def chi(xi):
    xi = np.asarray(xi, dtype=float)
    out = np.where(xi <= 0.75, 1.0, 0.0)
    mid = (xi > 0.75) & (xi < 1.0)
    if np.any(mid):
        out = np.where(mid, smooth_step(4.0 * (1.0 - xi)), out)
    return out if out.ndim else float(out)


def phi(xi):
    xi = np.asarray(xi, dtype=float)
    return chi(xi / 2.0) - chi(xi)


@dataclass(frozen=True, eq=False)
class ShellCutoffFamily:
    """Multipliers of every non-empty dyadic block on one grid."""

    grid: Grid
    _cache: dict = field(default_factory=dict, repr=False)

    q_min = Q_MIN

    @property
    def q_max(self) -> int:
        # largest q whose support (3 lambda_q / 4, 2 lambda_q) meets the grid
        return int(math.floor(math.log2(4.0 * self.grid.kmax / 3.0 * (1 - 1e-12))))

    @property
    def q_complete(self) -> int:
        """Largest q whose whole annulus fits inside the Nyquist ball, 2 lambda_q <= n/2."""
        return int(math.floor(math.log2(self.grid.n / 4.0)))

    @property
    def shells(self) -> range:
        return range(Q_MIN, self.q_max + 1)

    chi = staticmethod(chi)
    phi = staticmethod(phi)

    def multiplier(self, q: int) -> np.ndarray:
        if q < Q_MIN or q > self.q_max:
            raise ValueError(f"shell {q} outside [{Q_MIN}, {self.q_max}] on n={self.grid.n}")
        key = ("shell", q)
        if key not in self._cache:
            kmag = self.grid.kmag
            m = chi(kmag) if q == Q_MIN else phi(kmag / dyadic(q))
            self._cache[key] = m
        return self._cache[key]

    def low_multiplier(self, p: int) -> np.ndarray:
        """Multiplier of u_{<=p-2} = sum of blocks -1..p-2 (zero when p <= 0)."""
        key = ("low", p)
        if key not in self._cache:
            if p <= 0:
                m = np.zeros(self.grid.half_shape)
            else:
                m = chi(self.grid.kmag / dyadic(p - 1))
            self._cache[key] = m
        return self._cache[key]

    def tilde_multiplier(self, p: int) -> np.ndarray:
        """Multiplier of u_{p-1} + u_p + u_{p+1}, blocks outside the grid dropped."""
        key = ("tilde", p)
        if key not in self._cache:
            m = np.zeros(self.grid.half_shape)
            for j in (p - 1, p, p + 1):
                if Q_MIN <= j <= self.q_max:
                    m = m + self.multiplier(j)
            self._cache[key] = m
        return self._cache[key]


def build_cutoffs(grid: Grid) -> ShellCutoffFamily:
    return ShellCutoffFamily(grid)


@dataclass(frozen=True, eq=False)
class ShellField:
    q: int
    field: SpectralField


def shell_project(f: SpectralField, q: int, cutoffs: ShellCutoffFamily) -> ShellField:
    return ShellField(q, f.with_coeffs(f.coeffs * cutoffs.multiplier(q)))


def shell_physical(f: SpectralField, q: int, cutoffs: ShellCutoffFamily) -> PhysicalField:
    return PhysicalField(f.grid, irfft3(f.coeffs * cutoffs.multiplier(q), f.grid.n))


def shell_norm_table(f: SpectralField, s_values, cutoffs: ShellCutoffFamily) -> np.ndarray:
    """Array of shape (len(s_values), number of shells) with ||u_q||_s."""
    s_values = list(s_values)
    out = np.zeros((len(s_values), len(cutoffs.shells)))
    for j, q in enumerate(cutoffs.shells):
        m = cutoffs.multiplier(q)
        if not np.any(m * np.any(f.coeffs != 0, axis=0)):
            continue
        phys = shell_physical(f, q, cutoffs)
        for i, s in enumerate(s_values):
            out[i, j] = lebesgue_norm(phys, s)
    return out


def shell_norms(f: SpectralField, s: float, cutoffs: ShellCutoffFamily) -> dict:
    """Map q -> ||u_q||_s for every block on the grid."""
    row = shell_norm_table(f, [s], cutoffs)[0]
    return {q: float(v) for q, v in zip(cutoffs.shells, row)}


def besov_norm(f: SpectralField, alpha: float, s: float, q_besov: float,
               cutoffs: ShellCutoffFamily) -> float:
    """|| lambda_q^alpha ||u_q||_s ||_{l^q_besov} over all blocks."""
    norms = shell_norms(f, s, cutoffs)
    weighted = np.array([dyadic(q) ** alpha * v for q, v in norms.items()])
    if math.isinf(q_besov):
        return float(weighted.max())
    return float(np.sum(weighted ** q_besov) ** (1.0 / q_besov))


def bernstein_ratio(f: ShellField, a: float, b: float) -> float:
    """||u_q||_b / (lambda_q^{3(1/a - 1/b)} ||u_q||_a) for a block field, a <= b."""
    if not 1.0 <= a <= b:
        raise ValueError(f"need 1 <= a <= b, got a={a}, b={b}")
    phys = PhysicalField(f.field.grid, irfft3(f.field.coeffs, f.field.grid.n))
    na = lebesgue_norm(phys, a)
    if na == 0.0:
        raise ValueError("Bernstein ratio undefined for a zero shell field")
    if a == b:
        return 1.0
    nb = lebesgue_norm(phys, b)
    inv_b = 0.0 if math.isinf(b) else 1.0 / b
    return nb / (dyadic(f.q) ** (3.0 * (1.0 / a - inv_b)) * na)


def localized_shell_field(grid: Grid, q: int, cutoffs: ShellCutoffFamily,
                          rng: np.random.Generator, packets: int = 1) -> ShellField:
    """Block ``q`` of a few randomly placed, randomly polarized point sources.

    Such concentrated fields are the ones that saturate Bernstein's inequality.
    """
    from .spectral import leray_project_coeffs

    k = grid.k
    coeffs = np.zeros((3,) + grid.half_shape, dtype=complex)
    for _ in range(packets):
        x0 = rng.uniform(0.0, 2 * math.pi, size=3)
        pol = rng.standard_normal(3)
        weight = rng.uniform(0.5, 1.5)
        phase = np.exp(-1j * np.tensordot(x0, k, axes=1))
        coeffs += weight * pol[:, None, None, None] * phase[None]
    coeffs *= grid.nyquist_mask
    coeffs = leray_project_coeffs(coeffs, grid) * cutoffs.multiplier(q)
    return ShellField(q, SpectralField(grid, coeffs))
