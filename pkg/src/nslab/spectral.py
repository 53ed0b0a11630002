"""Periodic-box spectral substrate.

Fields live on the torus [0, 2pi)^3 sampled at ``n`` points per axis.  The
transform convention is

    f(x) = sum_k fhat(k) exp(i k.x),    fhat(k) = n^-3 sum_x f(x) exp(-i k.x)

so Fourier coefficients do not depend on the grid size.  Real fields are
stored as the half spectrum produced by ``rfftn`` (last axis k3 >= 0); the
full n^3 layout is available through :meth:`SpectralField.full`.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * math.pi
AXES = (-3, -2, -1)


def fft_workers() -> int:
    """Worker count for FFTs, capped by the ``NSLAB_THREADS`` variable."""
    env = os.environ.get("NSLAB_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def rfft3(values: np.ndarray) -> np.ndarray:
    return sfft.rfftn(values, axes=AXES, norm="forward", workers=fft_workers())


def irfft3(coeffs: np.ndarray, n: int) -> np.ndarray:
    return sfft.irfftn(coeffs, s=(n, n, n), axes=AXES, norm="forward",
                       workers=fft_workers())


@dataclass(frozen=True)
class Grid:
    """Cubic periodic grid of side 2pi with ``n`` points per axis."""

    n: int
    nu: float = 1.0

    def __post_init__(self):
        n = self.n
        if n < 16 or n & (n - 1):
            raise ValueError(f"n must be a power of two >= 16, got {n}")
        if not self.nu > 0:
            raise ValueError(f"viscosity must be positive, got {self.nu}")

    @property
    def domain_length(self) -> float:
        return TWO_PI

    @property
    def dx(self) -> float:
        return TWO_PI / self.n

    @property
    def cell_volume(self) -> float:
        return self.dx ** 3

    @property
    def half_shape(self) -> tuple:
        return (self.n, self.n, self.n // 2 + 1)

    @cached_property
    def k(self) -> np.ndarray:
        """Integer wavenumbers on the half-spectrum layout, shape (3, n, n, n//2+1)."""
        n = self.n
        k12 = np.fft.fftfreq(n, 1.0 / n)
        k3 = np.fft.rfftfreq(n, 1.0 / n)
        return np.stack(np.meshgrid(k12, k12, k3, indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.k ** 2, axis=0)

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each half-spectrum entry in the full spectrum."""
        w = np.full(self.half_shape, 2.0)
        w[..., 0] = 1.0
        w[..., -1] = 1.0
        return w

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3 rule: keep modes with every |k_i| <= n/3."""
        return np.all(np.abs(self.k) <= self.n / 3.0, axis=0)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True away from the Nyquist planes |k_i| = n/2."""
        return np.all(np.abs(self.k) < self.n / 2.0, axis=0)

    @cached_property
    def kmax(self) -> float:
        return float(self.kmag.max())

    def coordinates(self) -> np.ndarray:
        x = np.arange(self.n) * self.dx
        return np.stack(np.meshgrid(x, x, x, indexing="ij"))


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real 3-vector field held as half-spectrum Fourier coefficients."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        expected = (3,) + self.grid.half_shape
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient array has shape {self.coeffs.shape}, expected {expected}")

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralField":
        return cls(grid, np.zeros((3,) + grid.half_shape, dtype=complex))

    @classmethod
    def from_full(cls, grid: Grid, full: np.ndarray, atol: float = 1e-12) -> "SpectralField":
        """Build from the full n^3 layout, checking Hermitian symmetry."""
        n = grid.n
        full = np.asarray(full, dtype=complex)
        if full.shape != (3, n, n, n):
            raise ValueError(f"full layout must have shape (3, {n}, {n}, {n})")
        neg = (-np.arange(n)) % n
        mirrored = np.conj(full[:, neg][:, :, neg][:, :, :, neg])
        scale = max(np.abs(full).max(), 1.0)
        if np.abs(full - mirrored).max() > atol * scale:
            raise ValueError("coefficients are not Hermitian symmetric")
        return cls(grid, full[..., : n // 2 + 1].copy())

    def full(self) -> np.ndarray:
        """Coefficients on the full n^3 FFT layout (fftfreq order on each axis)."""
        n = self.grid.n
        out = np.empty((3, n, n, n), dtype=complex)
        h = n // 2 + 1
        out[..., :h] = self.coeffs
        neg = (-np.arange(n)) % n
        upper = np.arange(h, n)
        out[..., h:] = np.conj(self.coeffs[:, neg][:, :, neg][:, :, :, neg[upper]])
        return out

    def coeff(self, k) -> np.ndarray:
        """Coefficient vector at integer wavenumber ``k`` (any sign)."""
        n = self.grid.n
        k1, k2, k3 = (int(c) for c in k)
        if k3 < 0:
            return np.conj(self.coeffs[:, (-k1) % n, (-k2) % n, -k3])
        return self.coeffs[:, k1 % n, k2 % n, k3].copy()

    def with_coeffs(self, coeffs: np.ndarray) -> "SpectralField":
        return SpectralField(self.grid, coeffs)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class PhysicalField:
    grid: Grid
    values: np.ndarray


def to_physical(f: SpectralField) -> PhysicalField:
    return PhysicalField(f.grid, irfft3(f.coeffs, f.grid.n))


def to_spectral(p: PhysicalField) -> SpectralField:
    return SpectralField(p.grid, rfft3(p.values))


def leray_project_coeffs(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    k = grid.k
    k2 = grid.k2
    safe = np.where(k2 == 0, 1.0, k2)
    kdotu = np.sum(k * coeffs, axis=0) / safe
    out = coeffs - k * kdotu
    out[:, 0, 0, 0] = 0.0
    return out


def leray_project(f: SpectralField) -> SpectralField:
    """Orthogonal projection onto divergence-free, zero-mean fields."""
    return SpectralField(f.grid, leray_project_coeffs(f.coeffs, f.grid))


def inner_product(f: SpectralField, g: SpectralField) -> float:
    """L^2 inner product (f, g) over the torus, via Parseval."""
    w = f.grid.weights
    return TWO_PI ** 3 * float(np.sum(w * np.real(f.coeffs * np.conj(g.coeffs))))


def l2_norm(f: SpectralField) -> float:
    return math.sqrt(max(inner_product(f, f), 0.0))


def lebesgue_norm(f: PhysicalField, s: float) -> float:
    """L^s norm with the Euclidean vector norm pointwise; ``s = inf`` is the grid max."""
    s = float(s)
    if not s >= 1.0:
        raise ValueError(f"Lebesgue exponent must be >= 1, got {s}")
    mag = np.sqrt(np.sum(f.values ** 2, axis=0))
    if math.isinf(s):
        return float(mag.max())
    peak = float(mag.max())
    if peak == 0.0:
        return 0.0
    # scaling by the peak keeps |f|^s away from under/overflow
    total = float(np.sum((mag / peak) ** s))
    return peak * (f.grid.cell_volume * total) ** (1.0 / s)


def gradient_norm_l2(f: SpectralField) -> float:
    """||grad f||_2 from the spectrum: ((2pi)^3 sum |k|^2 |fhat|^2)^(1/2)."""
    g = f.grid
    total = np.sum(g.weights * g.k2 * np.sum(np.abs(f.coeffs) ** 2, axis=0))
    return math.sqrt(TWO_PI ** 3 * float(total))


def gradient_coeffs(f: SpectralField) -> np.ndarray:
    """Spectral gradient, shape (3 derivative, 3 component, ...): d_j f_i."""
    return 1j * f.grid.k[:, None] * f.coeffs[None]


def divergence_residual(f: SpectralField) -> float:
    """max_k |k . fhat(k)| relative to the largest coefficient magnitude."""
    scale = float(np.abs(f.coeffs).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(np.sum(f.grid.k * f.coeffs, axis=0)).max()) / scale


def random_field(grid: Grid, rng: np.random.Generator, divfree: bool = True,
                 kmax: float | None = None) -> SpectralField:
    """Random zero-mean field with clean Nyquist planes (Hermitian by construction).

    Coefficients are white up to ``kmax`` (default: the full band below Nyquist).
    """
    values = rng.standard_normal((3,) + (grid.n,) * 3)
    coeffs = rfft3(values) * grid.nyquist_mask
    if kmax is not None:
        coeffs = coeffs * (grid.kmag <= kmax)
    coeffs[:, 0, 0, 0] = 0.0
    if divfree:
        coeffs = leray_project_coeffs(coeffs, grid)
    return SpectralField(grid, coeffs)


def single_mode(grid: Grid, k, amplitude) -> SpectralField:
    """Real field with coefficients ``amplitude`` at ``k`` and its conjugate at ``-k``."""
    full = np.zeros((3,) + (grid.n,) * 3, dtype=complex)
    n = grid.n
    a = np.asarray(amplitude, dtype=complex)
    k1, k2, k3 = (int(c) for c in k)
    full[:, k1 % n, k2 % n, k3 % n] += a
    full[:, (-k1) % n, (-k2) % n, (-k3) % n] += np.conj(a)
    return SpectralField.from_full(grid, full)
