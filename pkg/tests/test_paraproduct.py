import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nslab.littlewood_paley import build_cutoffs, dyadic, localized_shell_field
from nslab.paraproduct import (
    ResolutionError, dissipation_ratio, flux_decomposition, nonlinear_flux_terms, pad, rhs_bound,
    shell_energy_transfers, shell_samples, unpad, unsplit_flux, verify_shell_inequality,
)
from nslab.solver import SolverConfig, trajectory
from nslab.spectral import Grid, SpectralField, l2_norm, leray_project, random_field, to_physical

G = Grid(32)
CUT = build_cutoffs(G)


def ring_field(rng, radius=4.0):
    """Random divergence-free field supported on |k| = radius."""
    f = random_field(G, rng)
    return leray_project(f.with_coeffs(f.coeffs * (G.kmag == radius)))


def test_pad_round_trip(rng):
    f = random_field(G, rng)
    assert np.array_equal(unpad(pad(f.coeffs, 32), 32), f.coeffs)


def test_zero_field_has_zero_terms():
    assert nonlinear_flux_terms(SpectralField.zeros(G), 2, 10 / 3, CUT) == (0.0, 0.0, 0.0)


@given(st.integers(0, 2**32 - 1), st.integers(0, 5))
def test_decomposition_is_exact(seed, q):
    u = random_field(G, np.random.default_rng(seed))
    for dec in flux_decomposition(u, q, [2.0, 10 / 3, 4.0], CUT):
        assert dec.residual <= 1e-8 * abs(dec.unsplit)
        assert abs(dec.unsplit) <= sum(dec.magnitudes) * (1 + 1e-12)


def test_unsplit_flux_matches_decomposition(rng):
    u = random_field(G, rng)
    dec = flux_decomposition(u, 3, [10 / 3], CUT)[0]
    assert unsplit_flux(u, 3, 10 / 3, CUT) == pytest.approx(dec.unsplit, rel=1e-12)


def test_rejects_small_exponent(rng):
    with pytest.raises(ValueError):
        nonlinear_flux_terms(random_field(G, rng), 2, 1.5, CUT)


def test_single_ring_has_only_resonant_term(rng):
    u = ring_field(rng)
    i1, i2, i3 = nonlinear_flux_terms(u, 2, 2.0, CUT)
    assert i1 == 0.0 and i2 == 0.0
    assert i3 > 0
    m = l2_norm(u)
    fitted = i3 / (dyadic(2) ** 2.5 * m ** 3)
    assert 0 < fitted < 10


def test_energy_neutral_under_shell_sum(rng):
    u = random_field(G, rng)
    transfers = shell_energy_transfers(u, CUT)
    grad_inf = max(np.abs(to_physical(SpectralField(G, 1j * G.k[j] * u.coeffs)).values).max()
                   for j in range(3))
    assert abs(sum(transfers.values())) < 1e-8 * l2_norm(u) ** 2 * grad_inf


def test_dissipation_ratio_bounds(rng):
    vals = []
    for q in range(0, CUT.q_complete + 1):
        for _ in range(3):
            u = localized_shell_field(G, q, CUT, rng).field
            for s in (2.0, 10 / 3, 4.0):
                vals.append(dissipation_ratio(u, q, s, CUT))
    assert 0 < min(vals) <= max(vals) < 4
    assert math.isnan(dissipation_ratio(SpectralField.zeros(G), 2, 2.0, CUT))


def test_rhs_single_shell():
    m = 1.7
    norms = {q: 0.0 for q in range(-1, 6)}
    norms[2] = m
    lo, hi = rhs_bound(norms, 2, 10 / 3)
    assert lo == pytest.approx(4 ** 1.9 * m ** 2, rel=1e-14)
    assert hi == pytest.approx(4 ** 1.9 * m ** 2, rel=1e-14)
    assert rhs_bound({q: 0.0 for q in range(-1, 6)}, 2, 10 / 3) == (0.0, 0.0)


def test_rhs_geometric_tail():
    norms = {-1: 0.0}
    norms.update({p: dyadic(p) ** -1 for p in range(0, 9)})
    _, hi = rhs_bound(norms, 4, math.inf)
    closed = dyadic(4) * 4.0 ** -2 * (1 - 4.0 ** -7) / (1 - 0.25)
    assert hi == pytest.approx(closed, rel=1e-14)


def test_rhs_rejects_missing_shells():
    with pytest.raises(ValueError, match="missing"):
        rhs_bound({-1: 1.0, 0: 1.0, 2: 1.0}, 2, 4.0)
    with pytest.raises(ValueError):
        rhs_bound({}, 2, 4.0)


def stokes_samples(s):
    cfg = SolverConfig(n=32, dt=1e-3, t_end=0.02, mode="stokes", ic_name="single_mode")
    return shell_samples(trajectory(cfg), s, [0, 1, 2, 3])


@pytest.mark.parametrize("s", [2.0, 10 / 3])
def test_stokes_single_mode_inequality(s):
    smp = stokes_samples(s)
    rep = verify_shell_inequality(smp, [0, 1, 2, 3])
    assert rep.constants.c_visc == pytest.approx(1.0, rel=1e-12)
    assert rep.passed
    active = [r for r in rep.records if r.q == 2]
    for r in active:
        norm = r.lhs_visc / 16.0
        assert r.lhs_diff == pytest.approx(-16.0 * norm, rel=1e-9)


def test_zero_trajectory_is_vacuous():
    zero = SpectralField.zeros(G)
    smp = shell_samples([(0.0, zero), (1e-4, zero), (2e-4, zero)], 10 / 3, [0, 1, 2])
    rep = verify_shell_inequality(smp, [0, 1, 2])
    assert rep.passed
    assert rep.constants.c_visc is None and rep.constants.c_rhs is None


def test_coarse_sampling_rejected():
    cfg = SolverConfig(n=32, dt=1e-2, t_end=0.02, mode="stokes", ic_name="single_mode")
    smp = shell_samples(trajectory(cfg), 2.0, [0, 1, 2, 3])
    with pytest.raises(ResolutionError, match="stride"):
        verify_shell_inequality(smp, [0, 1, 2, 3])


def test_external_constants_report_violations():
    cfg = SolverConfig(n=32, dt=1e-3, t_end=0.01, ic_name="random_divfree", ic_amplitude=3.0)
    smp = shell_samples(trajectory(cfg), 10 / 3, [0, 1, 2, 3], flux_terms=True)
    fitted = verify_shell_inequality(smp, [0, 1, 2, 3])
    assert fitted.passed
    c = fitted.constants
    assert all(v is not None and v > 0 for v in (c.c_visc, c.c_rhs, c.c_i1, c.c_i2, c.c_i3))
    strict = verify_shell_inequality(smp, [0, 1, 2, 3], c_rhs=0.5 * c.c_rhs)
    assert strict.violations
