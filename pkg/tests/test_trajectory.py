import numpy as np
import pytest

from hjc import (
    ConfigurationError,
    DomainError,
    TimeDependentRate,
    ValueFunction,
    gamma_differential,
    hessian_at,
    hessian_closed_form,
    solve_euler_lagrange,
    solve_quadratic_system,
    value_by_direct_maximization,
    value_from_trajectory,
)
from hjc.trajectory import empirical_third_derivative, hessian_bounds


@pytest.fixture(scope="module")
def oracle(canon_problem):
    return solve_quadratic_system(canon_problem, 5.0, 0.01)


@pytest.fixture(scope="module")
def rate(canon, oracle):
    model, _ = canon
    return TimeDependentRate(model, oracle.t, oracle.I, oracle.I_slope)


def _exact_path(s, t, x):
    a = (x - 0.5 + 0.25 * np.exp(-2 * t)) * np.exp(-2 * t)
    return 0.5 + a * np.exp(2 * s) - 0.25 * np.exp(-2 * s)


@pytest.mark.parametrize("t,x", [(0.3, 0.0), (1.0, 1.0), (4.0, -0.7)])
def test_euler_lagrange_matches_exponential_path(rate, canon, t, x):
    traj = solve_euler_lagrange(rate, canon[1], t, x)
    np.testing.assert_allclose(traj.points[:, 0], _exact_path(traj.t_grid, t, x), atol=1e-10)
    assert traj.points[-1, 0] == x


def test_value_is_exact_quadratic_profile(rate, canon, oracle):
    vf = ValueFunction(rate, canon[1])
    for t in (0.5, 1.0, 3.0):
        xb = float(oracle.xbar_at(t)[0])
        for x in (-1.0, 0.2, 1.5):
            assert vf.value(t, x) == pytest.approx(-0.5 * (x - xb) ** 2, abs=1e-8)


def test_gradient_matches_central_differences(rate, canon):
    vf = ValueFunction(rate, canon[1])
    h = 1e-4
    for t, x in [(0.7, 0.3), (2.0, -0.5)]:
        fd = (vf.value(t, x + h) - vf.value(t, x - h)) / (2 * h)
        assert float(vf.gradient(t, x)[0]) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_hessian_two_dimensional_matches_closed_form(two_d, problem_2d):
    model, data = two_d
    r = TimeDependentRate.constant(model, 1.0)
    for t in (0.2, 1.0, 2.5):
        H = hessian_at(r, data, t, [0.3, -0.1])
        np.testing.assert_allclose(H, hessian_closed_form(problem_2d, t), atol=1e-9)


def test_hessian_at_time_zero_is_initial_hessian(rate, canon):
    assert hessian_at(rate, canon[1], 0.0, 0.4) == pytest.approx(np.array([[-1.0]]))


def test_hessian_within_bounds(rate, canon):
    model, data = canon
    lo, hi = hessian_bounds(model, data)
    vf = ValueFunction(rate, data)
    for t, x in [(0.1, 0.0), (1.0, 2.0), (4.5, -1.0)]:
        lam = np.linalg.eigvalsh(vf.hessian(t, x))
        assert lo - 1e-6 <= lam.min() and lam.max() <= hi + 1e-6


def test_direct_maximization_converges_quadratically(rate, canon):
    data = canon[1]
    exact = value_from_trajectory(solve_euler_lagrange(rate, data, 1.0, 1.0), rate, data)
    errs = [abs(value_by_direct_maximization(rate, data, 1.0, 1.0, n_nodes=n) - exact)
            for n in (64, 128, 256)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)


@pytest.mark.parametrize("d", [1, 2])
def test_gamma_matches_path_sensitivity(d, canon_problem, problem_2d):
    prob = canon_problem if d == 1 else problem_2d
    model, data = prob.model(), prob.initial_data()
    r = TimeDependentRate.constant(model, prob.I0)
    t, x, h = 1.5, np.full(d, 0.2), 1e-5
    base = solve_euler_lagrange(r, data, t, x)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        plus = solve_euler_lagrange(r, data, t, x + e).points
        minus = solve_euler_lagrange(r, data, t, x - e).points
        sens = (plus - minus) / (2 * h)
        for k in (0, 20, 40, 64):
            G = gamma_differential(prob, base.t_grid[k], t)
            np.testing.assert_allclose(sens[k], G[:, j], atol=1e-5)


def test_rate_outside_its_horizon_is_rejected(canon):
    model, data = canon
    r = TimeDependentRate(model, [0.0, 1.0], [1.0, 1.1])
    with pytest.raises(DomainError):
        solve_euler_lagrange(r, data, 2.0, 0.0)


def test_rate_grid_validation(canon):
    model, _ = canon
    with pytest.raises(ConfigurationError):
        TimeDependentRate(model, [0.0, 0.0], [1.0, 1.0])
    with pytest.raises(DomainError):
        TimeDependentRate(model, [0.0, 1.0], [1.0, 3.0])


def test_rate_interpolation_modes(canon):
    model, _ = canon
    lin = TimeDependentRate(model, [0.0, 1.0], [1.0, 1.2])
    herm = TimeDependentRate(model, [0.0, 1.0], [1.0, 1.2], [0.0, 0.0])
    assert lin.I_at(0.5) == pytest.approx(1.1)
    assert herm.I_at(0.5) == pytest.approx(1.1)
    assert herm.I_at(0.25) == pytest.approx(1.0 + 0.2 * (3 * 0.25 ** 2 - 2 * 0.25 ** 3))


def test_third_derivative_vanishes_for_quadratic(rate, canon):
    vf = ValueFunction(rate, canon[1])
    assert empirical_third_derivative(vf, 1.0, [[0.0], [1.0]], h=1e-2) < 1e-5
