import math

import numpy as np
import pytest

from nslab.solver import (
    BlowUpError, CFLError, EnergyLedger, Solver, SolverConfig, initial_condition,
    random_divfree, single_mode_ic, step, taylor_green, trajectory,
)
from nslab.spectral import TWO_PI, Grid, SpectralField, divergence_residual, l2_norm, to_physical


def final_state(cfg, ledger=None):
    *_, (t, u) = trajectory(cfg, ledger)
    return t, u


def test_zero_field_is_fixed_point():
    u = SpectralField.zeros(Grid(16))
    assert np.abs(step(u, 1e-3).coeffs).max() == 0


def test_stokes_single_mode_decay():
    cfg = SolverConfig(n=32, dt=1e-3, t_end=0.1, mode="stokes", ic_name="single_mode")
    u0 = initial_condition(cfg)
    ledger = EnergyLedger()
    t, u = final_state(cfg, ledger)
    assert t == pytest.approx(0.1)
    exact = u0 * math.exp(-16 * 0.1)
    assert l2_norm(u - exact) / l2_norm(exact) < 1e-8
    # linear dynamics: the ledger is an identity
    e = np.array(ledger.energy) + np.array(ledger.dissipation)
    assert np.abs(e - ledger.energy[0]).max() / ledger.energy[0] < 1e-6


def test_single_mode_values():
    u = single_mode_ic(Grid(32))
    x = Grid(32).coordinates()
    assert np.abs(to_physical(u).values[0] - np.sin(4 * x[2])).max() < 1e-14


def test_taylor_green_is_exact():
    grid = Grid(32)
    u0 = taylor_green(grid)
    x = grid.coordinates()
    vals = to_physical(u0).values
    assert np.abs(vals[0] - np.sin(x[0]) * np.cos(x[1])).max() < 1e-14
    solver = Solver(SolverConfig(n=32, dt=1e-3, t_end=0.1))
    assert abs(solver.advective_flux(u0)) < 1e-10
    assert np.abs(solver.nonlinear(u0.coeffs)).max() < 1e-13
    t, u = final_state(SolverConfig(n=32, dt=1e-3, t_end=0.1))
    assert l2_norm(u) / l2_norm(u0) == pytest.approx(math.exp(-2 * 0.1), rel=1e-6)


def test_energy_decreases_monotonically_for_taylor_green():
    ledger = EnergyLedger()
    final_state(SolverConfig(n=16, dt=1e-2, t_end=0.2), ledger)
    assert np.all(np.diff(ledger.energy) < 0)


def test_divergence_free_each_step():
    cfg = SolverConfig(n=16, nu=0.05, dt=5e-3, t_end=0.05, ic_name="random_divfree", ic_amplitude=2.0)
    for _, u in trajectory(cfg):
        assert divergence_residual(u) < 1e-10


def test_nonlinear_term_energy_neutral():
    grid = Grid(32)
    u = random_divfree(grid, seed=5, kc=4.0, amplitude=2.0)
    u = u.with_coeffs(u.coeffs * grid.dealias_mask)
    solver = Solver(SolverConfig(n=32))
    flux = solver.advective_flux(u)
    grad_inf = max(np.abs(to_physical(SpectralField(grid, 1j * grid.k[j] * u.coeffs)).values).max()
                   for j in range(3))
    assert abs(flux) < 1e-10 * l2_norm(u) ** 2 * grad_inf


def test_time_order_on_nonlinear_run():
    def final(dt):
        cfg = SolverConfig(n=16, nu=0.05, dt=dt, t_end=0.2, ic_name="random_divfree",
                           ic_seed=3, ic_kc=2.0, ic_amplitude=2.0)
        return final_state(cfg)[1]
    ref = final(0.2 / 256)
    errs = [l2_norm(final(dt) - ref) for dt in (0.2 / 8, 0.2 / 16, 0.2 / 32)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 3.5


def test_energy_inequality_and_half_step_agreement():
    cfg = SolverConfig(n=32, dt=2e-3, t_end=0.05, ic_name="random_divfree", ic_seed=1,
                       ic_kc=3.0, ic_amplitude=3.0)
    half = SolverConfig(**{**cfg.__dict__, "dt": 1e-3})
    la, lb = EnergyLedger(), EnergyLedger()
    ua = final_state(cfg, la)[1]
    ub = final_state(half, lb)[1]
    assert la.holds(1e-4 * la.energy[0])
    assert lb.holds(1e-4 * lb.energy[0])
    assert l2_norm(ua - ub) / l2_norm(ub) < 1e-6


def test_random_divfree_is_grid_independent():
    a = random_divfree(Grid(32), seed=9, kc=2.0)
    b = random_divfree(Grid(64), seed=9, kc=2.0)
    for k in [(1, 0, 0), (2, -3, 1), (-4, 2, 5)]:
        assert np.allclose(a.coeff(k), b.coeff(k), rtol=1e-12, atol=1e-15)
    assert l2_norm(a) == pytest.approx(TWO_PI ** 1.5, rel=1e-12)


def test_initial_condition_is_deterministic():
    cfg = SolverConfig(n=16, ic_name="random_divfree", ic_seed=4)
    assert np.array_equal(initial_condition(cfg).coeffs, initial_condition(cfg).coeffs)


def test_cfl_violation_aborts():
    cfg = SolverConfig(n=32, dt=0.05, t_end=0.1)
    with pytest.raises(CFLError, match="CFL"):
        final_state(cfg)


def test_nan_reports_blow_up():
    grid = Grid(16)
    c = np.zeros((3,) + grid.half_shape, dtype=complex)
    c[0, 1, 0, 0] = np.nan
    solver = Solver(SolverConfig(n=16, dt=1e-3, t_end=1e-3, mode="stokes"))
    with pytest.raises(BlowUpError, match="blow-up or instability detected") as info:
        list(solver.iterate(SpectralField(grid, c)))
    assert info.value.last_valid_time == 0.0


@pytest.mark.parametrize("bad", [dict(mode="euler"), dict(dt=0.0), dict(t_end=-1.0), dict(snapshot_stride=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SolverConfig(**bad)


def test_stride_and_final_snapshot():
    cfg = SolverConfig(n=16, dt=1e-2, t_end=0.05, snapshot_stride=2)
    times = [t for t, _ in trajectory(cfg)]
    assert times == pytest.approx([0.0, 0.02, 0.04, 0.05])


def test_zero_duration_returns_initial_state():
    cfg = SolverConfig(n=16, t_end=0.0)
    out = list(trajectory(cfg))
    assert len(out) == 1
    u0 = initial_condition(cfg)
    assert np.abs(out[0][1].coeffs - u0.coeffs).max() < 1e-15 * np.abs(u0.coeffs).max()


def test_abc_forcing_runs():
    cfg = SolverConfig(n=16, dt=1e-2, t_end=0.05, forcing_name="abc")
    t, u = final_state(cfg)
    assert np.all(np.isfinite(u.coeffs))
    with pytest.raises(ValueError):
        list(trajectory(SolverConfig(n=16, forcing_name="wind")))
