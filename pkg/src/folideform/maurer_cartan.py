"""Maurer-Cartan residuals, gauge actions and formal deformations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dgla import (EXACT_TOL, DefiningCouple, NotInZ, bracket, delta, in_Z, project_Z,
                   require_integrable)
from .forms import (AffineMap, DisplacementMap, SampledMap, TrigForm, TrigVectorField,
                    default_grid, divide_pointwise, evaluate, ext_d, grid_points, interior,
                    l2_norm, pullback_graph, wedge)
from .spectral import assemble_linear, lstsq_min_norm

OBSTRUCTION_TOL = 1e-8


def mc_residual(a: TrigForm, c: DefiningCouple, tol: float = EXACT_TOL) -> tuple[TrigForm, float]:
    """delta a + {a, a}/2 and its L2 norm."""
    if a.degree != 1 or not in_Z(a, c, max(tol, 1e-12)):
        raise NotInZ("mc_residual needs a 1-form annihilated by i_X")
    require_integrable(c, tol)
    res = delta(a, c) + 0.5 * bracket(a, a, c.X)
    return res, l2_norm(res)


def gauge_infinitesimal(a: TrigForm, Y: TrigVectorField, c: DefiningCouple) -> TrigForm:
    """a - delta(i_Y gamma)."""
    if not in_Z(a, c):
        raise NotInZ("gauge_infinitesimal needs a form in Z*")
    return a - delta(interior(Y, c.gamma), c)


# gauge elements ----------------------------------------------------------------

@dataclass(frozen=True)
class GaugeElement:
    """A diffeomorphism near the identity: an affine map, a displacement map or a flow."""

    kind: str
    affine: AffineMap | None = None
    displacement: DisplacementMap | None = None
    field: TrigVectorField | None = None
    time: float = 0.0
    steps: int = 32

    @classmethod
    def from_affine(cls, phi: AffineMap):
        return cls("affine", affine=phi)

    @classmethod
    def from_displacement(cls, phi: DisplacementMap):
        return cls("displacement", displacement=phi)

    @classmethod
    def flow(cls, Y: TrigVectorField, t: float, steps: int | None = None):
        if not math.isfinite(t):
            raise ValueError("flow time must be finite")
        return cls("flow", field=Y, time=float(t), steps=32 if steps is None else int(steps))

    def realize(self, grid_res: int):
        if self.kind == "affine":
            return self.affine
        if self.kind == "displacement":
            return self.displacement
        return flow_map(self.field, self.time, grid_res, self.steps)


def flow_map(Y: TrigVectorField, t: float, grid_res: int, steps: int = 32) -> SampledMap:
    """Time-t flow of Y from every grid point, with Jacobians, by classical RK4."""
    n = Y.domain.dim
    x = grid_points(n, grid_res)
    P = x.shape[0]
    jac = np.broadcast_to(np.eye(n), (P, n, n)).copy()
    grads = [ext_d(comp) for comp in Y.components]

    def rhs(pts, J):
        v = np.stack([evaluate(comp, pts)[0].real for comp in Y.components], axis=1)
        DY = np.stack([evaluate(g, pts).real.T for g in grads], axis=1)  # (P, n, n)
        return v, DY @ J

    h = t / steps
    for _ in range(steps):
        k1, l1 = rhs(x, jac)
        k2, l2 = rhs(x + 0.5 * h * k1, jac + 0.5 * h * l1)
        k3, l3 = rhs(x + 0.5 * h * k2, jac + 0.5 * h * l2)
        k4, l4 = rhs(x + h * k3, jac + h * l3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        jac = jac + h / 6.0 * (l1 + 2 * l2 + 2 * l3 + l4)
    bound = abs(t) * max(float(np.abs(c.coef).sum()) for c in Y.components)
    return SampledMap(grid_res, x, jac, Y.bandwidth(), bound)


def gauge_action(phi: GaugeElement, a: TrigForm, c: DefiningCouple, grid_res: int | None = None,
                 cap: int | None = None, threshold: float = 1e-8) -> tuple[TrigForm, float]:
    """(Phi^*(gamma + a)(X))^-1 Phi^*(gamma + a) - gamma, with the sampling residual."""
    if a.degree != 1 or not in_Z(a, c):
        raise NotInZ("gauge_action needs a 1-form in Z*")
    base = c.gamma + a
    if grid_res is None:
        bw = max(base.bw, c.X.bandwidth(), 1)
        if phi.kind == "flow":
            bw += phi.field.bandwidth() * 2
        grid_res = default_grid(bw)
    realized = phi.realize(grid_res)
    pulled, r1 = pullback_graph(base, realized, grid_res=grid_res if phi.kind != "affine" else None, cap=cap)
    den = interior(c.X, pulled)
    if den.is_constant():
        value = den.coefficient((0,) * a.domain.dim, ())
        if abs(value) <= threshold:
            raise ValueError("gauge element outside the admissible neighbourhood")
        return pulled * (1.0 / value) - c.gamma, r1
    quotient, r2 = divide_pointwise(pulled, den, grid_res=grid_res, cap_bandwidth=cap, threshold=threshold)
    out = quotient - c.gamma
    return out, r1 + r2


@dataclass
class GaugeDerivativeReport:
    steps: list
    errors: list
    orders: list
    expected: TrigForm
    min_order: float

    def to_json(self) -> dict:
        return {
            "t_steps": self.steps,
            "errors": self.errors,
            "observed_orders": self.orders,
            "min_order": self.min_order,
            "expected": self.expected.to_json(),
        }


def gauge_derivative_check(Y: TrigVectorField, c: DefiningCouple, t_steps=(1e-2, 5e-3, 2.5e-3),
                           grid_res: int | None = None, cap: int | None = None) -> GaugeDerivativeReport:
    """Central differences of t -> chi((Phi_t^Y)^-1)(0) against -delta(i_Y gamma).

    The inverse flow is used, following the computation that establishes the
    derivative formula; (Phi_t^Y)^-1 is the flow of Y for time -t.
    """
    require_integrable(c)
    expected = -delta(interior(Y, c.gamma), c)
    zero = TrigForm.zero(c.domain, 1)
    if grid_res is None:
        grid_res = default_grid(max(c.gamma.bw, c.X.bandwidth(), 1) + 2 * Y.bandwidth() + 1)
    cap = (grid_res - 1) // 2 if cap is None else cap
    errors = []
    for t in t_steps:
        fwd, _ = gauge_action(GaugeElement.flow(Y, -t), zero, c, grid_res, cap)
        bwd, _ = gauge_action(GaugeElement.flow(Y, t), zero, c, grid_res, cap)
        fd = (fwd - bwd) * (1.0 / (2 * t))
        errors.append(l2_norm(fd - expected))
    orders = [math.log(errors[i] / errors[i + 1]) / math.log(t_steps[i] / t_steps[i + 1])
              if errors[i + 1] > 0 and errors[i] > 0 else math.inf for i in range(len(errors) - 1)]
    return GaugeDerivativeReport(list(t_steps), errors, orders, expected, min(orders) if orders else math.inf)


# formal Maurer-Cartan series -----------------------------------------------------

@dataclass
class FormalMCSeries:
    coefficients: list
    order: int
    residual_per_order: list
    obstruction: dict | None = None
    bandwidths: list = field(default_factory=list)

    def to_json(self) -> dict:
        obs = None
        if self.obstruction is not None:
            obs = {"order": self.obstruction["order"], "norm": self.obstruction["norm"],
                   "witness": self.obstruction["witness"].to_json()}
        return {
            "order": self.order,
            "solved_orders": len(self.coefficients),
            "residual_per_order": self.residual_per_order,
            "bandwidths": self.bandwidths,
            "coefficients": [a.to_json() for a in self.coefficients],
            "obstruction": obs,
        }


def delta_on_Z1(c: DefiningCouple, B: int):
    """Assembled phi -> delta(project_Z(phi)) on 1-forms truncated at B."""
    w = c.coefficient_bandwidth()
    growth = 4 * w
    return assemble_linear(lambda f: delta(project_Z(f, c), c), c.domain, 1, B, growth=growth,
                           name="delta|Z1")


def formal_mc_extend(beta: TrigForm, K: int, c: DefiningCouple, tol: float = EXACT_TOL,
                     obstruction_tol: float = OBSTRUCTION_TOL) -> FormalMCSeries:
    """Solve delta a_k = -1/2 sum_{i+j=k} {a_i, a_j} order by order (minimum-norm)."""
    if beta.degree != 1 or not in_Z(beta, c):
        raise NotInZ("formal_mc_extend needs a 1-form in Z*")
    require_integrable(c, tol)
    first = delta(beta, c)
    r1 = l2_norm(first)
    if r1 > tol:
        raise ValueError(f"first-order term is not delta-closed (residual {r1:.3e})")
    coeffs = [beta]
    residuals = [r1]
    bands = [beta.bw]
    for k in range(2, K + 1):
        rhs = TrigForm.zero(c.domain, 2)
        for i in range(1, k):
            rhs = rhs + bracket(coeffs[i - 1], coeffs[k - i - 1], c.X)
        rhs = rhs * (-0.5)
        if rhs.is_zero(1e-15):
            coeffs.append(TrigForm.zero(c.domain, 1))
            residuals.append(0.0)
            bands.append(0)
            continue
        B = max(rhs.bw, 1)
        op = delta_on_Z1(c, B)
        phi, leftover = lstsq_min_norm(op, rhs)
        ak = project_Z(phi, c)
        if beta.real:
            ak = ak.real_part()
        ak = ak.chop(1e-15 * max(1.0, ak.max_abs()))
        witness = rhs - delta(ak, c)
        wnorm = l2_norm(witness)
        if wnorm > obstruction_tol:
            return FormalMCSeries(coeffs, K, residuals,
                                  {"order": k, "witness": witness, "norm": wnorm}, bands)
        coeffs.append(ak)
        residuals.append(wnorm)
        bands.append(ak.bw)
    return FormalMCSeries(coeffs, K, residuals, None, bands)


# tangent cone on products S^1 x T^p ------------------------------------------------

@dataclass
class ConeVerdict:
    in_cone: bool
    wronskians: list
    factorization: dict | None
    reduced: list

    def to_json(self) -> dict:
        fac = None
        if self.factorization is not None:
            fac = {"a": self.factorization["a"].to_json(), "c": self.factorization["c"]}
        return {"in_cone": self.in_cone, "wronskians": self.wronskians, "factorization": fac}


def _is_product_couple(c: DefiningCouple) -> bool:
    n = c.domain.dim
    ds = TrigForm.constant(c.domain, 1.0, (0,))
    dX = TrigVectorField.coordinate(c.domain, 0)
    same_g = (c.gamma - ds).is_zero(1e-14)
    same_x = all((a - b).is_zero(1e-14) for a, b in zip(c.X.components, dX.components))
    return n >= 2 and same_g and same_x


def tangent_cone_test_product(beta: TrigForm, basis, c: DefiningCouple | None = None,
                              tol: float = 1e-10) -> ConeVerdict:
    """Wronskian test on S^1 x T^p with gamma = ds, X = d/ds (axis 0 is s)."""
    D = beta.domain
    n = D.dim
    if c is None:
        c = DefiningCouple(TrigForm.constant(D, 1.0, (0,)), TrigVectorField.coordinate(D, 0))
    if not _is_product_couple(c):
        raise ValueError("tangent cone test needs the product couple gamma = ds, X = d/ds")
    if beta.degree != 1 or not in_Z(beta, c):
        raise NotInZ("beta must be a 1-form without ds component")
    p = n - 1
    basis = list(basis)
    T = np.zeros((p, len(basis)))
    for j, tau in enumerate(basis):
        if tau.degree != 1 or not tau.is_constant() or abs(tau.coefficient((0,) * n, (0,))) > 0:
            raise ValueError("basis forms must be constant leaf 1-forms")
        for i in range(p):
            T[i, j] = tau.coefficient((0,) * n, (i + 1,)).real
    if np.linalg.matrix_rank(T) < len(basis):
        raise ValueError("basis forms are linearly dependent")
    # leaf-average of beta: coefficients depending on s only
    s_only = beta.coef[(slice(1, None), slice(None)) + (beta.bw,) * (n - 1)]  # (p, 2bw+1)
    coeff_b = np.linalg.lstsq(T, s_only, rcond=None)[0]  # (len(basis), 2bw+1)
    reduced = []
    for j in range(len(basis)):
        coef = np.zeros((1,) + (2 * beta.bw + 1,) * n, dtype=complex)
        coef[(0, slice(None)) + (beta.bw,) * (n - 1)] = coeff_b[j]
        reduced.append(TrigForm(D, 0, coef, beta.bw, real=beta.real, check=False))
    X = c.X
    wr = []
    ok = True
    for j in range(len(basis)):
        for k in range(j + 1, len(basis)):
            dj = interior(X, ext_d(reduced[j]))
            dk = interior(X, ext_d(reduced[k]))
            w = wedge(dj, reduced[k]) - wedge(dk, reduced[j])
            norm = l2_norm(w)
            wr.append({"j": j, "k": k, "norm": norm})
            ok = ok and norm <= tol
    fac = None
    if ok:
        M = coeff_b
        if np.abs(M).max(initial=0.0) > tol:
            u, sv, vh = np.linalg.svd(M)
            cvec = u[:, 0]
            phase = cvec[np.argmax(np.abs(cvec) > 1e-12)]
            cvec = cvec * (abs(phase) / phase)
            cvec = cvec.real
            a = sum((r * float(cj) for r, cj in zip(reduced, cvec)), TrigForm.zero(D, 0))
            fac = {"a": a.real_part() if beta.real else a, "c": [float(v) for v in cvec]}
    return ConeVerdict(ok, wr, fac, reduced)
