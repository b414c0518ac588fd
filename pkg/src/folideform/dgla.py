"""The differential graded Lie algebra of a codimension-one distribution.

A defining couple (gamma, X) with gamma(X) = 1 induces the bracket
{a, b} = L_X a ^ b - a ^ L_X b and the differential delta = d + {gamma, .}.
The subalgebra Z* = ker(i_X) carries the deformation theory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .forms import (ComplexStructure, DegreeError, DomainError, TrigForm, TrigVectorField,
                    divide_pointwise, ext_d, interior, l2_norm, lie_derivative, wedge)
from .spectral import assemble_linear, lstsq_min_norm

EXACT_TOL = 1e-10
SAMPLED_TOL = 1e-6


class NotIntegrable(ValueError):
    """Raised when an operation requiring an integrable couple gets one that is not."""


class NotInZ(ValueError):
    """Raised when a form is required to satisfy i_X a = 0 and does not."""


class DefiningCouple:
    """A 1-form gamma and a vector field X with gamma(X) = 1."""

    def __init__(self, gamma: TrigForm, X: TrigVectorField, tol: float = 1e-12):
        if gamma.degree != 1:
            raise DegreeError("gamma must be a 1-form")
        if X.domain != gamma.domain:
            raise DomainError("gamma and X on different domains")
        pairing = interior(X, gamma) - 1.0
        err = pairing.max_abs()
        if err > tol:
            raise ValueError(f"gamma(X) differs from 1 by {err:.3e}")
        self.gamma = gamma
        self.X = X
        self.domain = gamma.domain
        self.pairing_error = err

    def is_constant(self) -> bool:
        return self.gamma.is_constant() and self.X.is_constant()

    def coefficient_bandwidth(self, tol: float = 1e-14) -> int:
        """Bandwidth of gamma and X after discarding coefficients below tol."""
        parts = [self.gamma] + list(self.X.components)
        return max(p.chop(tol).bw for p in parts)

    def to_json(self) -> dict:
        return {"gamma": self.gamma.to_json(), "X": self.X.to_json()}

    @classmethod
    def from_json(cls, obj, domain):
        return cls(TrigForm.from_json(obj["gamma"], domain), TrigVectorField.from_json(obj["X"], domain))


def _overflow(a: TrigForm, b: TrigForm):
    n = a.domain.dim
    if a.degree + b.degree > n:
        return TrigForm.zero(a.domain, a.degree + b.degree)
    return None


def bracket(a: TrigForm, b: TrigForm, X: TrigVectorField) -> TrigForm:
    """{a, b} = L_X a ^ b - a ^ L_X b."""
    zero = _overflow(a, b)
    if zero is not None:
        return zero
    return wedge(lie_derivative(X, a), b) - wedge(a, lie_derivative(X, b))


def delta(a: TrigForm, c: DefiningCouple) -> TrigForm:
    """delta a = d a + {gamma, a}."""
    if a.degree >= a.domain.dim:
        return TrigForm.zero(a.domain, a.degree + 1)
    return ext_d(a) + bracket(c.gamma, a, c.X)


def in_Z(a: TrigForm, c: DefiningCouple, tol: float = 1e-12) -> bool:
    if a.degree == 0:
        return True
    return interior(c.X, a).max_abs() <= tol


def project_Z(a: TrigForm, c: DefiningCouple) -> TrigForm:
    """The component of a annihilated by i_X: a - gamma ^ i_X a."""
    if a.degree == 0:
        return a
    return a - wedge(c.gamma, interior(c.X, a))


def d_b(a: TrigForm, c: DefiningCouple) -> TrigForm:
    """Leafwise differential d a - gamma ^ i_X d a on Z*."""
    if not in_Z(a, c):
        raise NotInZ("d_b needs a form annihilated by i_X")
    if a.degree >= a.domain.dim:
        return TrigForm.zero(a.domain, a.degree + 1)
    da = ext_d(a)
    return da - wedge(c.gamma, interior(c.X, da))


def b_form(c: DefiningCouple) -> TrigForm:
    """The leafwise 1-form i_X d gamma."""
    if c.domain.dim < 2:
        return TrigForm.zero(c.domain, 1)
    return interior(c.X, ext_d(c.gamma))


@dataclass
class FrobeniusReport:
    integrable: bool
    consistent: bool
    residuals: dict
    forms: dict
    tol: float

    def to_json(self) -> dict:
        return {
            "integrable": self.integrable,
            "consistent": self.consistent,
            "tol": self.tol,
            "residuals": dict(self.residuals),
            "forms": {k: v.to_json() for k, v in self.forms.items()},
        }


def frobenius_checks(c: DefiningCouple, tol: float = EXACT_TOL) -> FrobeniusReport:
    """Three equivalent integrability tests: dg^g, dg + i_X dg ^ g, dg + {g,g}/2."""
    g = c.gamma
    dg = ext_d(g)
    forms = {}
    if c.domain.dim >= 3:
        forms["dgamma_wedge_gamma"] = wedge(dg, g)
    else:
        forms["dgamma_wedge_gamma"] = TrigForm.zero(c.domain, 3)
    if c.domain.dim >= 2:
        b = interior(c.X, dg)
        forms["dgamma_plus_b_wedge_gamma"] = dg + wedge(b, g)
        forms["dgamma_plus_half_bracket"] = dg + 0.5 * bracket(g, g, c.X)
    else:
        forms["dgamma_plus_b_wedge_gamma"] = TrigForm.zero(c.domain, 2)
        forms["dgamma_plus_half_bracket"] = TrigForm.zero(c.domain, 2)
    residuals = {k: l2_norm(v) for k, v in forms.items()}
    flags = [r <= tol for r in residuals.values()]
    return FrobeniusReport(all(flags), all(flags) or not any(flags), residuals, forms, tol)


def require_integrable(c: DefiningCouple, tol: float = EXACT_TOL) -> None:
    rep = frobenius_checks(c, tol)
    if not rep.integrable:
        worst = max(rep.residuals.values())
        raise NotIntegrable(f"defining couple is not integrable (Frobenius residual {worst:.3e})")


# exponentials and couple transformations -------------------------------------

def exp_series(lam: TrigForm, tol: float = 1e-16, max_terms: int = 200) -> tuple[TrigForm, float]:
    """Truncated Taylor series of exp(lam) and a bound on the neglected tail."""
    if lam.degree != 0:
        raise DegreeError("exp_series needs a function")
    if lam.is_constant():
        value = np.exp(lam.coefficient((0,) * lam.domain.dim, ()))
        return TrigForm.constant(lam.domain, float(value.real) if lam.real else complex(value)), 0.0
    L1 = float(np.abs(lam.coef).sum())
    total = TrigForm.constant(lam.domain, 1.0)
    term = total
    bound = math.inf
    # dropping tiny coefficients keeps the bandwidth bounded; the loss is added to the bound
    eps = tol * 1e-3
    chopped = 0.0
    for k in range(1, max_terms):
        term = wedge(term, lam) * (1.0 / k)
        kept = term.chop(eps)
        chopped += float(np.abs(term.coef).sum()) - float(np.abs(kept.coef).sum())
        term = kept
        total = total + term
        bound = L1 ** (k + 1) / math.factorial(k + 1) * math.exp(L1)
        if bound <= tol:
            break
    return total, bound + chopped * math.exp(L1)


def psi_couple(c: DefiningCouple, lam: TrigForm, tol: float = 1e-16) -> tuple[DefiningCouple, float]:
    """The couple (e^lam gamma, e^-lam X)."""
    ep, r1 = exp_series(lam, tol)
    em, r2 = exp_series(-lam, tol)
    new = DefiningCouple(wedge(ep, c.gamma), c.X.scale(em), tol=max(1e-12, 10 * (r1 + r2)))
    return new, r1 + r2


def psi_transform(a: TrigForm, lam: TrigForm, c: DefiningCouple, tol: float = 1e-16) -> tuple[TrigForm, float]:
    """a -> e^lam a with the series truncation bound (scaled by the l1 size of a)."""
    if not in_Z(a, c):
        raise NotInZ("psi_transform needs a form in Z*")
    ep, r = exp_series(lam, tol)
    return wedge(ep, a), r * float(np.abs(a.coef).sum())


def _require_tangent(V: TrigVectorField, c: DefiningCouple, tol: float = 1e-12) -> None:
    err = interior(V, c.gamma).max_abs()
    if err > tol:
        raise ValueError(f"V is not tangent to ker(gamma): |gamma(V)| = {err:.3e}")


def theta_couple(c: DefiningCouple, V: TrigVectorField) -> DefiningCouple:
    _require_tangent(V, c)
    return DefiningCouple(c.gamma, c.X + V)


def theta_transform(a: TrigForm, V: TrigVectorField, c: DefiningCouple) -> TrigForm:
    """a -> a + (-1)^deg(a) i_V a ^ gamma."""
    _require_tangent(V, c)
    if not in_Z(a, c):
        raise NotInZ("theta_transform needs a form in Z*")
    if a.degree == 0:
        return a
    sign = -1.0 if a.degree % 2 else 1.0
    if a.degree + 1 > a.domain.dim:
        return a
    return a + sign * wedge(interior(V, a), c.gamma)


def f_v_transform(a: TrigForm, V: TrigVectorField, c: DefiningCouple, grid_res: int | None = None,
                  cap_bandwidth: int | None = None, threshold: float = 1e-8) -> tuple[TrigForm, float]:
    """(1 + i_V a)^-1 (a - (i_V a) gamma), valid for the couple (gamma, X + V)."""
    _require_tangent(V, c)
    if a.degree != 1 or not in_Z(a, c):
        raise NotInZ("f_v_transform needs a 1-form in Z*")
    iva = interior(V, a)
    if iva.is_zero(1e-15):
        return a, 0.0
    num = a - wedge(iva, c.gamma)
    return divide_pointwise(num, iva + 1.0, grid_res, cap_bandwidth, threshold)


# leafwise cohomology class of b ------------------------------------------------

@dataclass
class CClass:
    vanishes: bool
    witness: TrigForm | None
    residual: float
    obstruction: TrigForm
    bandwidth: int
    condition_iii_residual: float | None = None

    def to_json(self) -> dict:
        return {
            "vanishes": self.vanishes,
            "residual": self.residual,
            "bandwidth": self.bandwidth,
            "witness": None if self.witness is None else self.witness.to_json(),
            "obstruction": self.obstruction.to_json(),
            "condition_iii_residual": self.condition_iii_residual,
        }


def d_b_operator(c: DefiningCouple, degree: int, B: int, target_bandwidth: int | None = None):
    """Assembled leafwise differential on Z^degree truncated at B."""
    w = c.coefficient_bandwidth() * 2
    return assemble_linear(lambda f: _d_b_unchecked(f, c), c.domain, degree, B, growth=w,
                           target_bandwidth=target_bandwidth, name="d_b")


def _d_b_unchecked(a: TrigForm, c: DefiningCouple) -> TrigForm:
    da = ext_d(a)
    return da - wedge(c.gamma, interior(c.X, da))


def c_class(c: DefiningCouple, B: int | None = None, tol: float = EXACT_TOL) -> CClass:
    """Solve d_b lam = b in the truncated space, or report the obstruction."""
    require_integrable(c, tol)
    b = b_form(c)
    b = b.chop(1e-14 * max(1.0, b.max_abs()))
    B = max(b.bw, 1) if B is None else int(B)
    op = d_b_operator(c, 0, B)
    lam, res = lstsq_min_norm(op, b)
    lam = lam.real_part() if b.real else lam
    res = b - d_b(lam, c)
    rnorm = l2_norm(res)
    if rnorm > tol:
        return CClass(False, None, rnorm, res, B)
    # condition iii: d(e^lam gamma) is killed by e^-lam X
    new, trunc = psi_couple(c, lam)
    check = interior(new.X, ext_d(new.gamma))
    return CClass(True, lam, rnorm, res, B, condition_iii_residual=l2_norm(check) + trunc)


# complex structure along the leaves -------------------------------------------

class LeafComplexStructure:
    """Endomorphism Jh of TL acting as J on ker(gamma) and killing X.

    Leaf vectors are identified with their components along ``leaf_axes``;
    the remaining (transverse) axis must carry a constant nonzero gamma
    coefficient.
    """

    def __init__(self, c: DefiningCouple, J, transverse_axis: int | None = None):
        n = c.domain.dim
        Jl = np.asarray(J.matrix if isinstance(J, ComplexStructure) else J, dtype=float)
        if Jl.shape != (n - 1, n - 1):
            raise ValueError(f"leaf complex structure must be {(n - 1)}x{(n - 1)}")
        if np.abs(Jl @ Jl + np.eye(n - 1)).max() > 1e-12:
            raise ValueError("leaf J^2 != -I")
        g = [self._component(c.gamma, i) for i in range(n)]
        if transverse_axis is None:
            cands = [i for i in range(n) if g[i].is_constant() and abs(g[i].coefficient((0,) * n, ())) > 0]
            if not cands:
                raise ValueError("no axis with constant nonzero gamma coefficient")
            transverse_axis = cands[0]
        t = int(transverse_axis)
        gt = g[t]
        if not gt.is_constant() or gt.coefficient((0,) * n, ()) == 0:
            raise ValueError("gamma coefficient along the transverse axis must be a nonzero constant")
        gt_val = gt.coefficient((0,) * n, ())
        leaf = [i for i in range(n) if i != t]
        X = c.X.components
        zero = TrigForm.zero(c.domain, 0)
        one = TrigForm.constant(c.domain, 1.0)
        # P: TL -> leaf coordinates, V -> leaf part of V - gamma(V) X
        P = [[(one if leaf[a] == j else zero) - wedge(X[leaf[a]], g[j]) for j in range(n)]
             for a in range(n - 1)]
        # E: leaf coordinates -> ker(gamma)
        E = [[zero] * (n - 1) for _ in range(n)]
        for a, i in enumerate(leaf):
            E[i][a] = one
            E[t][a] = g[i] * (-1.0 / gt_val)
        JP = [[sum((P[b][j] * float(Jl[a, b]) for b in range(n - 1) if Jl[a, b] != 0), zero)
               for j in range(n)] for a in range(n - 1)]
        self.matrix = [[sum((wedge(E[i][a], JP[a][j]) for a in range(n - 1)), zero) for j in range(n)]
                       for i in range(n)]
        self.couple = c
        self.domain = c.domain
        self.leaf_axes = leaf
        self.transverse_axis = t
        self.leaf_J = Jl
        self._jdx = [self._j_dx(i) for i in range(n)]

    @staticmethod
    def _component(a: TrigForm, i: int) -> TrigForm:
        s = a.index_sets.index((i,))
        return TrigForm(a.domain, 0, a.coef[s:s + 1], a.bw, real=a.real, check=False)

    def _j_dx(self, i: int) -> TrigForm:
        n = self.domain.dim
        out = TrigForm.zero(self.domain, 1)
        for j in range(n):
            m = self.matrix[i][j]
            if not m.is_zero():
                out = out - wedge(m, TrigForm.constant(self.domain, 1.0, (j,)))
        return out

    def apply(self, a: TrigForm) -> TrigForm:
        """Algebra extension of (J alpha)(V) = -alpha(Jh V)."""
        if a.degree == 0:
            return a
        out = TrigForm.zero(self.domain, a.degree)
        for s, I in enumerate(a.index_sets):
            if not a.coef[s].any():
                continue
            coeff = TrigForm(a.domain, 0, a.coef[s:s + 1], a.bw, check=False)
            piece = coeff
            for i in I:
                piece = wedge(piece, self._jdx[i])
            out = out + piece
        return out.with_real_flag(a.real) if a.real else out

    def apply_inverse(self, a: TrigForm) -> TrigForm:
        """Inverse on Z*: J^-1 = (-1)^deg J."""
        out = self.apply(a)
        return -out if a.degree % 2 else out


def d_bc(p: TrigForm, c: DefiningCouple, leafJ: LeafComplexStructure) -> TrigForm:
    """Leafwise d^c on functions: -J d_b p."""
    if p.degree != 0:
        raise DegreeError("d_bc is used on functions")
    return -leafJ.apply(d_b(p, c))


def delta_c(p: TrigForm, c: DefiningCouple, leafJ: LeafComplexStructure, tol: float = EXACT_TOL) -> TrigForm:
    """delta^c = J^-1 delta J on ker(gamma), extended by zero on X."""
    if p.degree >= 2:
        raise DegreeError("delta_c is implemented on degrees 0 and 1 only")
    require_integrable(c, tol)
    if not in_Z(p, c):
        raise NotInZ("delta_c needs a form in Z*")
    return project_Z(leafJ.apply_inverse(delta(leafJ.apply(p), c)), c)
