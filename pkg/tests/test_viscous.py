import numpy as np
import pytest

from hjc import (
    BlowUpError,
    ConfigurationError,
    GrowthModel,
    QuadraticProblem,
    ViscousConfig,
    concentration_diagnostics,
    simulate_viscous,
    solve_constrained,
    solve_quadratic_system,
)
from hjc.viscous import simulate_sweep, subgrid_argmax, sweep_configs, trapezoid_weights

BOX = [(-3.0, 4.0)]


def test_cfl_violation_rejected():
    with pytest.raises(ConfigurationError, match="CFL"):
        ViscousConfig(0.1, BOX, 0.01, dt=1e-3)


def test_default_dt_respects_cfl():
    cfg = ViscousConfig(0.05, BOX, 0.01)
    assert cfg.dt == pytest.approx(0.9 * 0.01 ** 2 / (2 * 0.05))


def test_dimension_limit():
    with pytest.raises(ConfigurationError):
        ViscousConfig(0.1, [(-1, 1)] * 3, 0.1)


def test_trapezoid_mass_of_gaussian():
    axes = [np.linspace(-5, 5, 1001)]
    w = trapezoid_weights(axes)
    g = np.exp(-axes[0] ** 2 / 0.02)
    manual = 0.01 * (g.sum() - 0.5 * (g[0] + g[-1]))
    assert float((w * g).sum()) == pytest.approx(manual, rel=1e-14)


def test_subgrid_argmax_recovers_parabola_vertex():
    a = np.linspace(0, 1, 11)
    assert subgrid_argmax(-(a - 0.437) ** 2, [a])[0] == pytest.approx(0.437)


@pytest.fixture(scope="module")
def canonical_pair():
    p = QuadraticProblem(1.0, 2.0, 1.0, 1.0)
    return p, p.model(), p.initial_data(), solve_quadratic_system(p, 1.0, 0.01)


def test_initial_mass_is_I0(canonical_pair):
    _, model, data, _ = canonical_pair
    run = simulate_viscous(model, data, ViscousConfig(0.1, BOX, 0.02), 0.01)
    assert run.I_eps[0] == pytest.approx(1.0, rel=1e-13)


def test_density_stays_positive(canonical_pair):
    _, model, data, _ = canonical_pair
    run = simulate_viscous(model, data, ViscousConfig(0.05, BOX, 0.02), 0.5)
    # log n finite everywhere means n > 0 even where exp underflows
    assert np.all(np.isfinite(run.final_u))
    assert np.all((run.I_eps > 0) & (run.I_eps < model.I_max + 0.5))


def test_stationary_argmax_within_one_cell():
    p = QuadraticProblem(1.0, 2.0, 0.0, 1.0)
    h = 0.01
    with pytest.warns(RuntimeWarning, match="boundary"):
        run = simulate_viscous(p.model(), p.initial_data(), ViscousConfig(0.05, BOX, h), 1.0)
    assert np.abs(run.argmax).max() <= h
    ref = solve_quadratic_system(p, 1.0, 0.01)
    diag = concentration_diagnostics(run, ref)
    np.testing.assert_allclose(diag.rho, 1.0)


def test_stationary_deviation_shrinks_with_eps():
    p = QuadraticProblem(1.0, 2.0, 0.0, 1.0)
    dev = []
    for eps in (0.1, 0.05):
        with pytest.warns(RuntimeWarning):
            run = simulate_viscous(p.model(), p.initial_data(), ViscousConfig(eps, BOX, 0.02), 1.0)
        dev.append(abs(run.I_eps[-1] - 1.0))
    assert dev[1] < dev[0]


def test_hopf_cole_agrees_with_density(canonical_pair):
    _, model, data, _ = canonical_pair
    runs = [simulate_viscous(model, data, ViscousConfig(0.1, BOX, 0.02, dt=1e-3, form=f), 1.0)
            for f in ("density", "hopf_cole")]
    gap = np.abs(runs[0].final_u - runs[1].final_u)
    core = np.abs(runs[0].axes[0] - 0.4) < 1.5
    # both schemes are first order in time; this bounds their combined error
    assert gap[core].max() < 5e-3
    assert abs(runs[0].I_eps[-1] - runs[1].I_eps[-1]) < 1e-3


def test_errors_shrink_with_eps(canonical_pair):
    _, model, data, ref = canonical_pair
    cfgs = sweep_configs([0.1, 0.05], BOX, 0.01)
    assert cfgs[0].dt == cfgs[1].dt
    runs = simulate_sweep(model, data, cfgs, 1.0, threads=2)
    finals = [concentration_diagnostics(r, ref).final() for r in runs]
    assert finals[1]["I_error"] < finals[0]["I_error"]
    assert finals[1]["argmax_error"] < finals[0]["argmax_error"]


def test_reference_interchangeable(canonical_pair):
    _, model, data, ref = canonical_pair
    run = simulate_viscous(model, data, ViscousConfig(0.1, BOX, 0.02), 1.0)
    general = solve_constrained(model, data, 1.0)
    a = concentration_diagnostics(run, ref)
    b = concentration_diagnostics(run, general)
    np.testing.assert_allclose(a.I_error, b.I_error, atol=1e-7)
    np.testing.assert_allclose(a.argmax_error, b.argmax_error, atol=1e-7)


def test_two_dimensional_grid_and_weight():
    p = QuadraticProblem(np.eye(2), np.diag([2.0, 8.0]), [2.0, 8.0], 1.0)
    psi = lambda X: 1.0 + 0.1 * X[:, 0] ** 2
    cfg = ViscousConfig(0.2, [(-3.0, 4.0), (-2.0, 3.0)], 0.1, psi=psi)
    with pytest.warns(RuntimeWarning):
        run = simulate_viscous(p.model(), p.initial_data(), cfg, 0.2)
    assert run.I_eps[0] == pytest.approx(1.0)
    assert run.argmax.shape == (run.t.size, 2)


def test_blow_up_detected():
    model = GrowthModel.quadratic(2.0, 1.0, 1.0, I_max=0.3)
    data = QuadraticProblem(1.0, 2.0, 1.0, 1.0).initial_data()
    with pytest.raises(BlowUpError):
        simulate_viscous(model, data, ViscousConfig(0.1, BOX, 0.05), 0.1)


def test_reference_horizon_checked(canonical_pair):
    _, model, data, ref = canonical_pair
    run = simulate_viscous(model, data, ViscousConfig(0.1, BOX, 0.05), 1.5)
    with pytest.raises(ConfigurationError):
        concentration_diagnostics(run, ref)
