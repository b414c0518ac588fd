import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from folideform.dgla import (DefiningCouple, LeafComplexStructure, NotIntegrable, NotInZ, b_form, bracket,
                             c_class, d_b, delta, exp_series, frobenius_checks, in_Z, project_Z, psi_couple,
                             psi_transform, require_integrable, theta_couple, theta_transform)
from folideform.forms import (FlatTorusDomain, TrigForm, TrigVectorField, cos_mode, dx, ext_d, interior,
                              sin_mode, wedge)
from helpers import contact_couple, product_couple, random_field, random_form, random_integrable_couple

T3 = FlatTorusDomain(3)
seeds = st.integers(0, 2**32 - 1)
degrees = st.integers(0, 2)


def _close(a, b, tol=1e-10):
    scale = max(1.0, a.max_abs(), b.max_abs())
    return (a - b).max_abs() <= tol * scale


@given(seeds, degrees, degrees)
def test_bracket_graded_antisymmetry(seed, p, q):
    rng = np.random.default_rng(seed)
    X = random_field(T3, 1, rng)
    a, b = random_form(T3, p, 1, rng), random_form(T3, q, 1, rng)
    assert _close(bracket(a, b, X), -((-1) ** (p * q)) * bracket(b, a, X))


@given(seeds, degrees, degrees, degrees)
def test_bracket_graded_jacobi(seed, p, q, r):
    rng = np.random.default_rng(seed)
    X = random_field(T3, 1, rng)
    a, b, c = (random_form(T3, k, 1, rng) for k in (p, q, r))
    total = ((-1) ** (p * r)) * bracket(a, bracket(b, c, X), X) \
        + ((-1) ** (q * p)) * bracket(b, bracket(c, a, X), X) \
        + ((-1) ** (r * q)) * bracket(c, bracket(a, b, X), X)
    assert total.max_abs() <= 1e-10 * max(1.0, bracket(a, bracket(b, c, X), X).max_abs())


@given(seeds, degrees, degrees)
def test_d_is_a_derivation_of_the_bracket(seed, p, q):
    rng = np.random.default_rng(seed)
    X = random_field(T3, 1, rng)
    a, b = random_form(T3, p, 1, rng), random_form(T3, q, 1, rng)
    if p + q >= 3:
        return
    lhs = ext_d(bracket(a, b, X))
    rhs = bracket(ext_d(a), b, X) + (-1) ** p * bracket(a, ext_d(b), X)
    assert _close(lhs, rhs)


def test_frobenius_contact_form_values():
    rep = frobenius_checks(contact_couple(T3))
    coeff = rep.forms["dgamma_wedge_gamma"].coefficient((0, 0, 0), (0, 1, 2))
    # hand computation: d(cos z dx + sin z dy) ^ gamma = -2 pi dx^dy^dz
    assert abs(coeff - (-2 * math.pi)) < 1e-10
    assert rep.forms["dgamma_wedge_gamma"].bw == 0
    assert not rep.integrable and rep.consistent
    assert all(v > 1 for v in rep.residuals.values())
    with pytest.raises(NotIntegrable):
        require_integrable(contact_couple(T3))


@given(seeds)
def test_frobenius_conditions_agree_on_integrable_couples(seed):
    c = random_integrable_couple(T3, np.random.default_rng(seed))
    rep = frobenius_checks(c)
    assert rep.integrable and rep.consistent
    assert max(rep.residuals.values()) < 1e-12


@given(seeds)
def test_delta_squared_and_leibniz_on_Z(seed):
    rng = np.random.default_rng(seed)
    c = random_integrable_couple(T3, rng)
    a = project_Z(random_form(T3, 1, 1, rng), c)
    b = project_Z(random_form(T3, 1, 1, rng), c)
    f = random_form(T3, 0, 1, rng)
    assert delta(delta(f, c), c).max_abs() < 1e-9
    assert delta(delta(a, c), c).max_abs() < 1e-9
    # Z* is closed under delta and the bracket
    assert in_Z(delta(a, c), c, 1e-10) and in_Z(bracket(a, b, c.X), c, 1e-10)
    lhs = delta(bracket(f, a, c.X), c)
    rhs = bracket(delta(f, c), a, c.X) + bracket(f, delta(a, c), c.X)
    assert _close(lhs, rhs, 1e-9)


def test_delta_squared_fails_for_contact_form():
    c = contact_couple(T3)
    f = cos_mode(T3, (1, 0, 0))
    assert delta(delta(f, c), c).max_abs() > 1.0


@given(seeds)
def test_b_is_leafwise_closed_and_delta_on_functions(seed):
    rng = np.random.default_rng(seed)
    c = random_integrable_couple(T3, rng)
    b = b_form(c)
    assert in_Z(b, c, 1e-12)
    assert d_b(b, c).max_abs() < 1e-10
    f = random_form(T3, 0, 1, rng)
    assert _close(delta(f, c), d_b(f, c) + wedge(f, b))


def test_d_b_rejects_forms_outside_Z():
    c = product_couple(T3)
    with pytest.raises(NotInZ):
        d_b(dx(T3, 0), c)


def test_defining_couple_requires_unit_pairing():
    with pytest.raises(ValueError):
        DefiningCouple(dx(T3, 0), TrigVectorField.coordinate(T3, 1))


def test_exp_series_matches_pointwise_exponential():
    lam = sin_mode(T3, (1, 0, 0), 0.4)
    e, bound = exp_series(lam)
    pts = np.random.default_rng(0).random((10, 3))
    from folideform.forms import evaluate
    assert np.allclose(evaluate(e, pts)[0], np.exp(0.4 * np.sin(2 * np.pi * pts[:, 0])), atol=1e-14)
    assert bound <= 1e-16


@settings(max_examples=3)
@given(seeds)
def test_psi_intertwines_delta(seed):
    rng = np.random.default_rng(seed)
    c = random_integrable_couple(T3, rng)
    # exponent in (s, x_1) only, to keep e^lam at moderate bandwidth
    lam = random_form(FlatTorusDomain(2), 0, 1, rng, real=True, scale=0.1)
    coef = np.zeros((1, 3, 3, 3), dtype=complex)
    coef[0, :, :, 1] = lam.padded(1)[0]
    lam = TrigForm(T3, 0, coef, 1, real=True)
    new, trunc = psi_couple(c, lam)
    assert trunc < 1e-12
    assert abs(interior(new.X, new.gamma).coefficient((0, 0, 0), ()) - 1) < 1e-12
    assert frobenius_checks(new).integrable
    a = project_Z(random_form(T3, 1, 1, rng), c)
    pa, _ = psi_transform(a, lam, c)
    pda, _ = psi_transform(delta(a, c), lam, c)
    assert _close(delta(pa, new), pda, 1e-9)
    # the bracket is preserved up to the conformal factor
    b = project_Z(random_form(T3, 1, 1, rng), c)
    pb, _ = psi_transform(b, lam, c)
    pbr, _ = psi_transform(bracket(a, b, c.X), lam, c)
    assert _close(bracket(pa, pb, new.X), pbr, 1e-9)


@given(seeds)
def test_theta_intertwines_delta(seed):
    rng = np.random.default_rng(seed)
    c = product_couple(T3)
    V = TrigVectorField([TrigForm.zero(T3, 0), random_form(T3, 0, 1, rng, real=True, scale=0.2),
                         random_form(T3, 0, 1, rng, real=True, scale=0.2)])
    new = theta_couple(c, V)
    a = project_Z(random_form(T3, 1, 1, rng), c)
    ta = theta_transform(a, V, c)
    assert in_Z(ta, new, 1e-10)
    assert _close(delta(ta, new), theta_transform(delta(a, c), V, c), 1e-9)


def test_c_class_vanishes_for_product_and_closed_rescaling():
    assert c_class(product_couple(T3)).vanishes
    D = FlatTorusDomain(2)
    c = product_couple(D)
    lam = cos_mode(D, (0, 1), 0.3)
    scaled, _ = psi_couple(c, lam)
    res = c_class(scaled, B=3)
    assert res.vanishes and res.condition_iii_residual < 1e-12
    # the witness undoes the rescaling: d(e^w gamma') = 0
    w = res.witness
    new, _ = psi_couple(scaled, w)
    assert ext_d(new.gamma).max_abs() < 1e-10


def test_c_class_obstructed_for_twisted_couple():
    # gamma = ds + sin(2 pi s)/(2 pi) dx_1 has b = cos(2 pi s) dx_1, not leafwise exact
    c = DefiningCouple(dx(T3, 0) + wedge(sin_mode(T3, (1, 0, 0), 1 / (2 * math.pi)), dx(T3, 1)),
                       TrigVectorField.coordinate(T3, 0))
    b = b_form(c)
    assert abs(b.coefficient((1, 0, 0), (1,)) - 0.5) < 1e-12
    res = c_class(c, B=3)
    # b restricts to dx_1 on the compact leaf s = 0, so no truncation can remove it
    assert not res.vanishes and res.residual > 0.1


def test_leaf_complex_structure_on_product():
    D = FlatTorusDomain(3)
    c = product_couple(D)
    Jl = LeafComplexStructure(c, np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert Jl.transverse_axis == 0 and Jl.leaf_axes == [1, 2]
    a = project_Z(random_form(D, 1, 1, np.random.default_rng(0)), c)
    assert (Jl.apply(Jl.apply(a)) + a).max_abs() < 1e-12
    assert (Jl.apply_inverse(Jl.apply(a)) - a).max_abs() < 1e-12
    with pytest.raises(ValueError):
        LeafComplexStructure(c, np.eye(2))
