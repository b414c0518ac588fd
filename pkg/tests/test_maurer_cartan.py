import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from folideform.dgla import DefiningCouple, NotInZ, bracket, delta, project_Z
from folideform.forms import (AffineMap, FlatTorusDomain, TrigForm, TrigVectorField, cos_mode, dx, evaluate,
                              sin_mode, wedge)
from folideform.hodge import harmonic_part
from folideform.maurer_cartan import (GaugeElement, delta_on_Z1, formal_mc_extend, gauge_action,
                                      gauge_infinitesimal, mc_residual, tangent_cone_test_product)
from helpers import product_couple, random_form, random_integrable_couple

T3 = FlatTorusDomain(3)
seeds = st.integers(0, 2**32 - 1)


def _s_function(rng, bw=2):
    coef = np.zeros((1,) + (2 * bw + 1,) * 3, dtype=complex)
    coef[0, :, bw, bw] = rng.standard_normal(2 * bw + 1) + 1j * rng.standard_normal(2 * bw + 1)
    return TrigForm(T3, 0, coef, bw, check=False).real_part()


def obstructed_beta():
    return wedge(sin_mode(T3, (1, 0, 0)), dx(T3, 1)) + wedge(cos_mode(T3, (1, 0, 0)), dx(T3, 2))


def unobstructed_beta():
    return wedge(sin_mode(T3, (1, 0, 0)), dx(T3, 1) + 3.0 * dx(T3, 2))


@given(seeds, st.floats(-10, 10))
def test_product_forms_solve_mc(seed, t):
    rng = np.random.default_rng(seed)
    a = _s_function(rng)
    cvec = rng.standard_normal(2)
    beta = wedge(a, dx(T3, 1) * float(cvec[0]) + dx(T3, 2) * float(cvec[1]))
    _, norm = mc_residual(beta * t, product_couple(T3))
    assert norm <= 1e-10 * max(1.0, abs(t)) ** 2


def test_mc_residual_rejects_forms_outside_Z():
    with pytest.raises(NotInZ):
        mc_residual(dx(T3, 0), product_couple(T3))


def test_bracket_of_obstructed_beta_by_hand():
    beta = obstructed_beta()
    # L_{d/ds} beta = 2 pi (cos dx_1 - sin dx_2), {beta, beta} = 2 L beta ^ beta = 4 pi dx_1 ^ dx_2
    bb = bracket(beta, beta, TrigVectorField.coordinate(T3, 0))
    assert (bb - TrigForm.constant(T3, 4 * math.pi, (1, 2))).max_abs() < 1e-12


def test_obstruction_at_order_two_with_harmonic_witness():
    series = formal_mc_extend(obstructed_beta(), 3, product_couple(T3))
    assert series.obstruction is not None and series.obstruction["order"] == 2
    w = harmonic_part(series.obstruction["witness"])
    assert abs(abs(w.coefficient((0, 0, 0), (1, 2))) - 2 * math.pi) < 1e-9
    assert len(series.coefficients) == 1


def test_unobstructed_series_is_a_line():
    beta = unobstructed_beta()
    series = formal_mc_extend(beta, 4, product_couple(T3))
    assert series.obstruction is None
    assert len(series.coefficients) == 4
    assert all(a.is_zero(1e-14) for a in series.coefficients[1:])


@given(seeds)
def test_formal_extension_solves_each_order(seed):
    rng = np.random.default_rng(seed)
    c = random_integrable_couple(T3, rng, bw=0)
    # delta-closed first-order terms: delta of functions
    beta = delta(random_form(T3, 0, 1, rng, real=True, scale=0.3), c)
    series = formal_mc_extend(beta, 3, c)
    assert series.obstruction is None
    a = series.coefficients
    for k in range(2, 4):
        rhs = sum((bracket(a[i - 1], a[k - i - 1], c.X) for i in range(1, k)), TrigForm.zero(T3, 2)) * (-0.5)
        assert (delta(a[k - 1], c) - rhs).max_abs() < 1e-9


def test_formal_extend_rejects_non_closed_beta():
    with pytest.raises(ValueError):
        formal_mc_extend(wedge(cos_mode(T3, (0, 1, 0)), dx(T3, 2)), 2, product_couple(T3))


def test_tangent_cone_verdicts():
    basis = [dx(T3, 1), dx(T3, 2)]
    yes = tangent_cone_test_product(unobstructed_beta(), basis)
    assert yes.in_cone
    assert np.allclose(yes.factorization["c"], np.array([1.0, 3.0]) / math.sqrt(10))
    no = tangent_cone_test_product(obstructed_beta(), basis)
    assert not no.in_cone
    assert abs(no.wronskians[0]["norm"] - 2 * math.pi) < 1e-9


def test_tangent_cone_needs_product_couple():
    c = random_integrable_couple(T3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        tangent_cone_test_product(unobstructed_beta(), [dx(T3, 1), dx(T3, 2)], c)


def test_delta_on_Z1_matches_direct():
    c = random_integrable_couple(T3, np.random.default_rng(2), bw=1)
    a = project_Z(random_form(T3, 1, 2, np.random.default_rng(3)), c)
    op = delta_on_Z1(c, a.bw)
    assert (op.apply(a) - delta(a, c)).max_abs() < 1e-9


def test_translation_gauge_is_exact_shift():
    c = product_couple(T3)
    beta = unobstructed_beta() * 0.1
    v = np.array([0.1, 0.3, -0.2])
    out, res = gauge_action(GaugeElement.from_affine(AffineMap.translation(v)), beta, c)
    pts = np.random.default_rng(0).random((5, 3))
    vals = evaluate(out, pts)
    shifted = np.sin(2 * np.pi * (pts[:, 0] + 0.1))
    assert np.allclose(vals[0], 0, atol=1e-12)
    assert np.allclose(vals[1], 0.1 * shifted, atol=1e-12)
    assert np.allclose(vals[2], 0.3 * shifted, atol=1e-12)
    assert res == 0


def test_gauge_preserves_mc_set_and_matches_infinitesimal_action():
    c = product_couple(T3)
    beta = unobstructed_beta() * 0.2
    Y = TrigVectorField([sin_mode(T3, (0, 1, 0), 0.05), TrigForm.zero(T3, 0), TrigForm.zero(T3, 0)])
    t = 1e-3
    out, res = gauge_action(GaugeElement.flow(Y, -t), beta, c)
    _, norm = mc_residual(project_Z(out, c), c)
    assert norm < 1e-8
    # one-sided difference at a = 0 approaches -delta(i_Y gamma) to first order in t
    zero = TrigForm.zero(T3, 1)
    out0, _ = gauge_action(GaugeElement.flow(Y, -t), zero, c)
    expected = gauge_infinitesimal(zero, Y, c)
    assert (out0 * (1.0 / t) - expected).max_abs() < 1e-2 * expected.max_abs()


def test_gauge_action_rejects_bad_couple_input():
    D = FlatTorusDomain(2)
    c = DefiningCouple(dx(D, 0), TrigVectorField.coordinate(D, 0))
    with pytest.raises(NotInZ):
        gauge_action(GaugeElement.from_affine(AffineMap.identity(2)), dx(D, 0), c)
