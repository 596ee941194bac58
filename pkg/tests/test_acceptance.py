"""Acceptance criteria, each checked at its stated tolerance.

Every test records one PASS/FAIL line, listed under "acceptance criteria" in
the pytest terminal summary.
"""
import time

import numpy as np
import pytest

from hjc import (
    QuadraticProblem,
    SolverOptions,
    TimeDependentRate,
    ValueFunction,
    gamma_differential,
    residuals,
    solve_constrained,
    solve_euler_lagrange,
    solve_quadratic_system,
    validate_assumptions,
    value_by_direct_maximization,
    value_from_trajectory,
)
from hjc.constrained import RestartState, choose_interval_length, default_sample_points, fixed_point_iterate
from hjc.trajectory import hessian_bounds
from hjc.viscous import concentration_diagnostics, simulate_sweep, sweep_configs

from conftest import BOX_2D, CANONICAL_BOX, I_exact, canonical, instance_2d, record, xbar_exact


@pytest.fixture(scope="module")
def canon_T5():
    model, data = canonical()
    return solve_constrained(model, data, 5.0)


@pytest.fixture(scope="module")
def stationary_T5():
    model, data = canonical(b=0.0)
    return solve_constrained(model, data, 5.0)


@pytest.fixture(scope="module")
def two_d_T2():
    model, data = instance_2d()
    return solve_constrained(model, data, 2.0)


def test_criterion_01_quadratic_asymptotics():
    model, data = canonical()
    start = time.perf_counter()
    sol = solve_constrained(model, data, 8.0)
    x8 = float(sol.xbar[-1, 0])
    hess = float(sol.hessian(8.0, sol.xbar[-1])[0, 0])
    elapsed = time.perf_counter() - start
    errs = (abs(x8 - 0.5), abs(sol.I[-1] - 1.25), abs(hess + 1.0))
    ok = max(errs) <= 1e-3 and elapsed <= 60
    record(1, "quadratic asymptotics at T=8", ok,
           f"|xbar-0.5|={errs[0]:.2e} |I-1.25|={errs[1]:.2e} |D2u+1|={errs[2]:.2e} "
           f"runtime={elapsed:.1f}s (tol 1e-3, 60s)")
    assert ok


def test_criterion_02_closed_form_transient():
    model, data = canonical()
    sol = solve_constrained(model, data, 5.0, SolverOptions(delta=0.05, n_nodes=64))
    grid = np.linspace(0.0, 5.0, 2001)
    ex = max(np.abs(sol.xbar[:, 0] - xbar_exact(sol.t)).max(),
             np.abs(sol.xbar_at(grid)[:, 0] - xbar_exact(grid)).max())
    eI = max(np.abs(sol.I - I_exact(sol.t)).max(), np.abs(sol.I_at(grid) - I_exact(grid)).max())
    ok = ex <= 1e-4 and eI <= 1e-4
    record(2, "closed-form transient on [0,5], delta=0.05, 64 nodes", ok,
           f"sup|xbar err|={ex:.2e} sup|I err|={eI:.2e} (tol 1e-4)")
    assert ok


def test_criterion_03_stationary(stationary_T5):
    sol = stationary_T5
    dx = float(np.abs(sol.xbar).max())
    dI = float(np.abs(sol.I - 1.0).max())
    rep = residuals(sol, sample_points=default_sample_points(sol))
    ok = dx <= 1e-8 and dI <= 1e-8 and rep.worst <= 1e-8
    record(3, "stationary instance b=0 on [0,5]", ok,
           f"sup|xbar|={dx:.1e} sup|I-I0|={dI:.1e} worst residual={rep.worst:.1e} (tol 1e-8)")
    assert ok


def test_criterion_04_equivalence_identities(canon_T5):
    sol = canon_T5
    rep = residuals(sol, sample_points=default_sample_points(sol, n_times=6, n_space=15))
    vals = rep.to_dict()
    worst = max(vals["res_R"], vals["res_grad"], vals["res_u_at_xbar"], vals["res_max_positive_u"])
    ok = worst <= 1e-6
    record(4, "equivalence identities on canonical instance", ok,
           f"|R|={vals['res_R']:.1e} |grad u|={vals['res_grad']:.1e} "
           f"|u(xbar)|={vals['res_u_at_xbar']:.1e} max u+={vals['res_max_positive_u']:.1e} (tol 1e-6)")
    assert ok


def test_criterion_05_monotone_I(canon_T5, stationary_T5, two_d_T2):
    cases = {
        "canonical": (canonical(), CANONICAL_BOX, canon_T5),
        "b=0": (canonical(b=0.0), CANONICAL_BOX, stationary_T5),
        "2d": (instance_2d(), BOX_2D, two_d_T2),
    }
    details, ok = [], True
    for name, ((model, data), box, sol) in cases.items():
        valid = validate_assumptions(model, data, box).passed
        defect = float(max(0.0, -np.diff(sol.I).min()))
        ok &= valid and defect <= 1e-8
        details.append(f"{name}: validated={valid} defect={defect:.1e}")
    record(5, "I nondecreasing on validated instances", ok, "; ".join(details) + " (tol 1e-8)")
    assert ok


def test_criterion_06_dpp_and_euler_lagrange(canon_T5):
    sol = canon_T5
    model, data = sol.model, sol.data
    rate = sol.rate
    vf = ValueFunction(rate, data)
    rng = np.random.default_rng(2024)
    lo, hi = hessian_bounds(model, data)
    worst_dpp = worst_grad = 0.0
    bounds_ok = True
    for _ in range(20):
        t = float(rng.uniform(0.05, 5.0))
        x = float(rng.uniform(*CANONICAL_BOX[0]))
        traj = solve_euler_lagrange(rate, data, t, x)
        v_el = value_from_trajectory(traj, rate, data)
        v_dp = value_by_direct_maximization(rate, data, t, x, n_nodes=1024)
        worst_dpp = max(worst_dpp, abs(v_el - v_dp))
        h = 1e-4
        fd = (vf.value(t, x + h) - vf.value(t, x - h)) / (2 * h)
        g = float(-0.5 * traj.velocities[-1, 0])
        worst_grad = max(worst_grad, abs(g - fd) / max(abs(fd), 1e-3))
        lam = np.linalg.eigvalsh(vf.hessian(t, x))
        bounds_ok &= bool(lo - 1e-6 <= lam.min() and lam.max() <= hi + 1e-6)
    ok = worst_dpp <= 1e-4 and worst_grad <= 1e-4 and bounds_ok
    record(6, "DPP / E-L agreement at 20 random points", ok,
           f"max|value diff|={worst_dpp:.1e} (tol 1e-4) grad rel err={worst_grad:.1e} (tol 1e-4) "
           f"Hessian band ok={bounds_ok}")
    assert ok


def test_criterion_07_concavity(canon_T5, two_d_T2):
    details, ok = [], True
    rng = np.random.default_rng(7)
    for name, sol, box in (("canonical", canon_T5, CANONICAL_BOX), ("2d", two_d_T2, BOX_2D)):
        K, L = sol.model.constants, sol.data.constants
        lam = min(L.L1_bar, np.sqrt(K.K1_bar) / 2)
        box = np.asarray(box)
        worst = np.inf
        for _ in range(500):
            sigma = rng.uniform()
            x, y = rng.uniform(box[:, 0], box[:, 1]), rng.uniform(box[:, 0], box[:, 1])
            t = float(rng.uniform(0.0, sol.t[-1]))
            lhs = sol.value(t, sigma * x + (1 - sigma) * y)
            rhs = (sigma * sol.value(t, x) + (1 - sigma) * sol.value(t, y)
                   + lam * sigma * (1 - sigma) * float(np.sum((x - y) ** 2)))
            worst = min(worst, lhs - rhs)
        ok &= worst >= -1e-8
        details.append(f"{name}: lambda={lam:g} min slack={worst:.1e}")
    record(7, "strong concavity of u on 500 random triples", ok, "; ".join(details) + " (tol 1e-8)")
    assert ok


def test_criterion_08_contraction():
    model, data = canonical()
    delta = choose_interval_length(model, data, 5.0)
    traces = {dl: fixed_point_iterate(model, data, RestartState.initial(data), dl)[1]
              for dl in (delta, delta / 2)}
    r_full, r_half = max(traces[delta].ratios), max(traces[delta / 2].ratios)
    decreasing = all(np.all(np.diff(tr.distances) < 0) for tr in traces.values())
    ok = decreasing and r_full < 1 and r_half < r_full
    record(8, "fixed-point contraction", ok,
           f"default delta={delta:.4f}: max ratio={r_full:.3f}; delta/2: max ratio={r_half:.3f}")
    assert ok


def test_criterion_09_oracle_cross_validation(canon_T5, two_d_T2):
    details, ok = [], True
    cases = (("d=1", QuadraticProblem(1.0, 2.0, 1.0, 1.0), canon_T5),
             ("d=2", QuadraticProblem(np.eye(2), np.diag([2.0, 8.0]), [2.0, 8.0], 1.0), two_d_T2))
    for name, prob, sol in cases:
        orc = solve_quadratic_system(prob, float(sol.t[-1]), 0.001)
        dx = float(np.abs(sol.xbar - orc.xbar_at(sol.t)).max())
        dI = float(np.abs(sol.I - orc.I_at(sol.t)).max())
        rate = TimeDependentRate.constant(prob.model(), prob.I0)
        d, t, h = prob.dim, 1.5, 1e-5
        x = np.full(d, 0.2)
        base = solve_euler_lagrange(rate, prob.initial_data(), t, x)
        dG = 0.0
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            sens = (solve_euler_lagrange(rate, prob.initial_data(), t, x + e).points
                    - solve_euler_lagrange(rate, prob.initial_data(), t, x - e).points) / (2 * h)
            for k in range(0, base.t_grid.size, 8):
                G = gamma_differential(prob, base.t_grid[k], t)
                dG = max(dG, float(np.abs(sens[k] - G[:, j]).max()))
        ok &= dx <= 1e-5 and dI <= 1e-5 and dG <= 1e-5
        details.append(f"{name}: |dxbar|={dx:.1e} |dI|={dI:.1e} |dGamma|={dG:.1e}")
    record(9, "general solver vs quadratic oracle", ok, "; ".join(details) + " (tol 1e-5)")
    assert ok


def test_criterion_10_viscous_concentration():
    prob = QuadraticProblem(1.0, 2.0, 1.0, 1.0)
    model, data = prob.model(), prob.initial_data()
    start = time.perf_counter()
    ref = solve_constrained(model, data, 1.0)
    runs = simulate_sweep(model, data, sweep_configs([0.1, 0.05], [(-3.0, 4.0)], 0.01), 1.0)
    elapsed = time.perf_counter() - start
    f = [concentration_diagnostics(r, ref).final() for r in runs]
    ok = (f[1]["I_error"] < f[0]["I_error"] and f[1]["argmax_error"] < f[0]["argmax_error"]
          and elapsed <= 300)
    record(10, "viscous concentration, eps 0.1 -> 0.05", ok,
           f"|I_eps-I|: {f[0]['I_error']:.3e} -> {f[1]['I_error']:.3e}; "
           f"|argmax-xbar|: {f[0]['argmax_error']:.2e} -> {f[1]['argmax_error']:.2e}; "
           f"runtime={elapsed:.1f}s")
    assert ok
