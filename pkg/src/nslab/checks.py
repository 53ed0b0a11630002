"""Property suites shared by the ``verify`` subcommand and the test-suite."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .littlewood_paley import bernstein_ratio, build_cutoffs, localized_shell_field
from .paraproduct import flux_decomposition, shell_samples, verify_shell_inequality
from .solver import EnergyLedger
from .spectral import Grid, SpectralField, l2_norm, random_field

BERNSTEIN_PAIRS = ((2.0, 10.0 / 3.0), (2.0, math.inf), (10.0 / 3.0, 6.0))


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float
    detail: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        text = f"{verdict} {self.name}: max error {self.max_error:.3e}"
        return f"{text} ({self.detail})" if self.detail else text


def partition_of_unity(n: int = 32, trials: int = 100, seed: int = 0, tol: float = 1e-12) -> CheckResult:
    """||f - sum_q u_q||_2 / ||f||_2 over random fields."""
    grid = Grid(n)
    cutoffs = build_cutoffs(grid)
    total = sum(cutoffs.multiplier(q) for q in cutoffs.shells)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        f = random_field(grid, rng, divfree=False)
        rec = SpectralField(grid, sum(f.coeffs * cutoffs.multiplier(q) for q in cutoffs.shells))
        worst = max(worst, l2_norm(f - rec) / l2_norm(f))
    mult_err = float(np.abs(total - 1.0).max())
    return CheckResult("partition-of-unity", worst < tol, worst,
                       f"{trials} fields, n={n}, max |sum phi_q - 1| = {mult_err:.1e}")


def bernstein_spread(n: int = 32, trials: int = 10, seed: int = 0, pairs=BERNSTEIN_PAIRS) -> dict:
    """Per pair (a, b): ratios over complete shells and trials, and max/min spread."""
    grid = Grid(n)
    cutoffs = build_cutoffs(grid)
    rng = np.random.default_rng(seed)
    shells = range(0, cutoffs.q_complete + 1)
    fields = [localized_shell_field(grid, q, cutoffs, rng) for _ in range(trials) for q in shells]
    out = {}
    for a, b in pairs:
        ratios = np.array([bernstein_ratio(f, a, b) for f in fields])
        out[(a, b)] = (ratios, float(ratios.max() / ratios.min()))
    return out


def bernstein(n: int = 32, trials: int = 10, seed: int = 0, factor: float = 5.0) -> CheckResult:
    spreads = bernstein_spread(n, trials, seed)
    worst = max(sp for _, sp in spreads.values())
    detail = ", ".join(f"({a:g},{b:g}) spread {sp:.2f}" for (a, b), (_, sp) in spreads.items())
    return CheckResult("bernstein", worst < factor, worst, detail)


def energy(ledger: EnergyLedger, rel_tol: float = 1e-4) -> CheckResult:
    """E(t) + D(t) - D(t0) <= E(t0) (1 + rel_tol) over every stored pair."""
    e0 = max(ledger.energy[0], 1e-300) if ledger.energy else 1.0
    viol = ledger.max_violation() / e0
    return CheckResult("energy", viol <= rel_tol, max(viol, 0.0),
                       f"{len(ledger.times)} samples, worst relative excess {viol:.3e}")


def decomposition_exactness(n: int = 32, trials: int = 20, s_values=(2.0, 10.0 / 3.0, 4.0),
                            seed: int = 0, tol: float = 1e-8) -> CheckResult:
    """|I1 + I2 + I3 - unsplit| / |unsplit| on random divergence-free fields."""
    grid = Grid(n)
    cutoffs = build_cutoffs(grid)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        u = random_field(grid, rng)
        q = int(rng.integers(0, cutoffs.q_max + 1))
        for dec in flux_decomposition(u, q, s_values, cutoffs):
            scale = max(abs(dec.unsplit), 1e-300)
            worst = max(worst, dec.residual / scale)
    return CheckResult("decomposition-exactness", worst < tol, worst,
                       f"{trials} fields, s in {list(s_values)}")


def shell_inequality(trajectory, s: float, q_range=None, flux_terms: bool = False):
    """Fit constants on a trajectory and check every (t, q) record against them."""
    samples = shell_samples(trajectory, s, q_range, flux_terms)
    if q_range is None:
        # blocks whose whole annulus lies below Nyquist
        complete = int(math.floor(math.log2(samples.grid_n / 4.0)))
        q_range = [q for q in samples.shells if 0 <= q <= complete]
    report = verify_shell_inequality(samples, q_range)
    c = report.constants
    ok = report.passed and c.c_visc is not None and c.c_visc > 0 and c.c_rhs is not None
    worst = float(report.ratios.max()) if report.ratios is not None and report.ratios.size else 0.0
    detail = f"c_visc={c.c_visc}, c_rhs={c.c_rhs}, {len(report.records)} records"
    return CheckResult("shell-inequality", ok, worst, detail), report
