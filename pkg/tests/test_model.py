import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjc import (
    AdmissibilityError,
    ConfigurationError,
    DomainError,
    GrowthModel,
    InitialConstants,
    InitialData,
    eval_growth,
    solve_I_from_x,
    validate_assumptions,
)
from hjc.model import recenter_initial

from conftest import CANONICAL_BOX, BOX_2D


def test_eval_growth_at_origin(canon):
    model, _ = canon
    ev = eval_growth(model, 0.0, 1.0)
    assert ev.value == 0.0
    assert ev.grad_x.tolist() == [1.0]
    assert ev.hess_x.tolist() == [[-2.0]]
    assert ev.dR_dI == -1.0


def test_eval_growth_asymptotic_pair_annihilates(canon):
    model, _ = canon
    assert eval_growth(model, 0.5, 1.25).value == pytest.approx(0.0, abs=1e-15)


def test_eval_growth_two_dimensional():
    model = GrowthModel.quadratic(np.diag([1.0, 4.0]), [0.0, 0.0], 2.0)
    ev = eval_growth(model, [1.0, 1.0], 2.0)
    assert ev.value == pytest.approx(-2.5)
    np.testing.assert_allclose(ev.grad_x, [-1.0, -4.0])
    np.testing.assert_allclose(ev.hess_x, -np.diag([1.0, 4.0]))


@pytest.mark.parametrize("I", [-0.1, 1.3])
def test_eval_growth_rejects_I_outside_range(canon, I):
    model, _ = canon
    with pytest.raises(DomainError):
        eval_growth(model, 0.0, I)


def test_canonical_instance_passes_every_check(canon):
    report = validate_assumptions(*canon, CANONICAL_BOX)
    assert report.passed, str(report)


def test_two_dimensional_instance_passes(two_d):
    report = validate_assumptions(*two_d, BOX_2D)
    assert report.passed, str(report)


def test_equality_case_passes_with_zero_margin(canon):
    check = validate_assumptions(*canon, CANONICAL_BOX)["asrD2"]
    assert check.passed and check.margin == pytest.approx(0.0, abs=1e-14)


def test_inconsistent_curvature_fails_with_margin(canon):
    model, _ = canon
    data = InitialData.quadratic(1.0, 1.0, constants=InitialConstants(
        L0_under=2.0, L0_bar=2.0, L1_bar=0.6))
    report = validate_assumptions(model, data, CANONICAL_BOX)
    check = report["asuD2"]
    assert not check.passed
    assert check.margin == pytest.approx(-0.2)
    assert "asuD2" in [c.name for c in report.failures]
    assert not report.passed


def test_compatibility_check(canon):
    assert validate_assumptions(*canon, CANONICAL_BOX)["as:u0-I0"].passed
    model, _ = canon
    off = InitialData.quadratic(1.0, 1.1, constants=InitialConstants(L0_under=2.0, L0_bar=2.0))
    assert not validate_assumptions(model, off, CANONICAL_BOX)["as:u0-I0"].passed


def test_report_serializes(canon):
    d = validate_assumptions(*canon, CANONICAL_BOX).to_dict()
    assert d["passed"] is True
    assert {c["name"] for c in d["checks"]} >= {"asr", "asrD2", "asu", "asuD2", "as:u0-I0"}


def test_solve_I_quadratic(canon):
    model, _ = canon
    assert solve_I_from_x(model, 0.25) == pytest.approx(1.1875)
    assert solve_I_from_x(model, 0.5) == pytest.approx(1.25)


def test_solve_I_rejects_inadmissible_trait(canon):
    model, _ = canon
    with pytest.raises(AdmissibilityError):
        solve_I_from_x(model, 5.0)


def _custom_like_canonical():
    return GrowthModel.custom(
        value=lambda x, I: -x[:, 0] ** 2 + x[:, 0] + 1.0 - I,
        grad_x=lambda x, I: (1.0 - 2.0 * x),
        hess_x=lambda x, I: np.full((x.shape[0], 1, 1), -2.0),
        dR_dI=lambda x, I: -np.ones(x.shape[0]),
        dim=1, I_max=1.25, origin=[0.5])


def test_custom_family_matches_quadratic(canon):
    model, _ = canon
    custom = _custom_like_canonical()
    for x in (-0.3, 0.1, 0.5, 1.2):
        assert solve_I_from_x(custom, x) == pytest.approx(solve_I_from_x(model, x), abs=1e-13)
    x, I = np.array([[0.3]]), 1.1
    np.testing.assert_allclose(custom.d2_Ix(x, I), model.d2_Ix(x, I), atol=1e-6)
    np.testing.assert_allclose(custom.d3_x(x, I), model.d3_x(x, I), atol=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.6, 1.6))
def test_solve_I_is_a_root(x):
    model = _custom_like_canonical()
    try:
        I = solve_I_from_x(model, x)
    except AdmissibilityError:
        assert model.value(np.array([x]), 0.0) <= 0 or model.value(np.array([x]), 1.25) > 0
        return
    assert 0.0 <= I <= model.I_max
    assert abs(float(model.value(np.array([x]), I))) < 1e-12


def test_recenter_moves_peak_to_zero():
    data = InitialData.custom(
        lambda x: -0.5 * (x[:, 0] - 0.2) ** 2 + 0.3,
        lambda x: -(x - 0.2),
        lambda x: -np.ones((x.shape[0], 1, 1)),
        I0=1.0, xbar0=[0.0])
    fixed = recenter_initial(data)
    assert fixed.xbar0 == pytest.approx([0.2])
    assert float(fixed.u0(fixed.xbar0)) == pytest.approx(0.0, abs=1e-14)


def test_non_spd_matrix_rejected():
    with pytest.raises(ConfigurationError):
        GrowthModel.quadratic(-1.0, 0.0, 1.0)
