"""Levi-flat hypersurfaces in flat complex tori and their deformations.

The ambient is C^m / Z^2m with coordinates (x_1, y_1, ..., x_m, y_m), a
constant metric and a constant compatible complex structure. The hypersurface
is L = {x_i = 0} for a coordinate axis i, cut out by r = c x_i; graph
deformations L_a = {r = a o pi} move points along the constant field
Z = grad r / |grad r|^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dgla import (EXACT_TOL, DefiningCouple, LeafComplexStructure, b_form, d_b, d_bc, delta,
                   delta_c, frobenius_checks, project_Z, psi_couple, require_integrable)
from .forms import (ComplexStructure, DisplacementMap, FlatTorusDomain, NearZeroDenominator, TrigForm,
                    TrigVectorField, apply_J_algebra, ext_d, hodge_star, index_sets, integrate_top,
                    l2_norm, project, sample, sup_norm_sq, wedge)
from .hodge import (LeafSpec, OperatorContext, assemble, b_f_functional, extend_from_leaf,
                    harmonic_b_F, hodge_decompose, laplace_spectrum, leaf_of_couple_check, p_c,
                    restrict_to_leaf)
from .maurer_cartan import GaugeElement, mc_residual
from .spectral import assemble_linear, form_to_vector, frequencies, vector_to_form

LEVI_TOL = 1e-8


# ambient and defining functions ---------------------------------------------------

class ComplexTorusAmbient:
    """A flat complex torus of complex dimension m with constant J and Kahler form."""

    def __init__(self, m: int, metric=None, J=None, orientation: int = 1):
        if m < 1:
            raise ValueError("complex dimension must be positive")
        self.m = int(m)
        self.domain = FlatTorusDomain(2 * m, metric, orientation)
        self.J = ComplexStructure.standard(self.domain) if J is None else ComplexStructure(self.domain, J)
        self.omega = self.J.kahler_form()
        top = self.omega
        for _ in range(self.m - 1):
            top = wedge(top, self.omega)
        if (integrate_top(top) * self.domain.orientation).real <= 0:
            raise ValueError("omega^m is not positive")

    def to_json(self) -> dict:
        return {"m": self.m, "domain": self.domain.to_json(), "J": self.J.matrix.tolist()}


@dataclass(frozen=True)
class DefiningFunction:
    """r = exp(-log_factor) * scale * x_axis near L = {x_axis = 0}.

    ``log_factor`` is a function on L (intrinsic coordinates), extended
    constantly along the normal axis.
    """

    ambient: ComplexTorusAmbient
    axis: int
    scale: float = 1.0
    log_factor: TrigForm | None = None

    def __post_init__(self):
        n = self.ambient.domain.dim
        if not 0 <= self.axis < n:
            raise ValueError("axis out of range")
        if not math.isfinite(self.scale) or self.scale == 0:
            raise ValueError("dr vanishes: scale must be nonzero")
        if self.log_factor is not None and self.log_factor.domain != self.L_domain:
            raise ValueError("log factor must live on L")

    @property
    def L_axes(self) -> list:
        return [j for j in range(self.ambient.domain.dim) if j != self.axis]

    @property
    def L_domain(self) -> FlatTorusDomain:
        G = self.ambient.domain.metric
        ax = self.L_axes
        return FlatTorusDomain(len(ax), G[np.ix_(ax, ax)], self.ambient.domain.orientation)

    @property
    def covector(self) -> np.ndarray:
        v = np.zeros(self.ambient.domain.dim)
        v[self.axis] = self.scale
        return v

    @property
    def Z(self) -> np.ndarray:
        """grad r / |grad r|^2 for the linear part."""
        Ginv = self.ambient.domain.inv_metric
        i = self.axis
        return Ginv[:, i] / (self.scale * Ginv[i, i])

    def is_linear(self) -> bool:
        return self.log_factor is None or self.log_factor.is_zero()

    def to_json(self) -> dict:
        return {"axis": self.axis, "scale": self.scale,
                "log_factor": None if self.log_factor is None else self.log_factor.to_json()}


def _drop(v: np.ndarray, i: int) -> np.ndarray:
    return np.delete(v, i, axis=-1)


def _insert(v: np.ndarray, i: int) -> np.ndarray:
    return np.insert(v, i, 0.0, axis=-1)


def _linear_couple_vectors(r: DefiningFunction):
    J = r.ambient.J.matrix
    gamma_amb = J.T @ r.covector            # coefficients of -J dr
    X_amb = J @ r.Z
    if abs(X_amb[r.axis]) > 1e-12:
        raise AssertionError("JZ is not tangent to L")
    g, X = _drop(gamma_amb, r.axis), _drop(X_amb, r.axis)
    pairing = float(g @ X)
    X = X * np.sign(pairing)
    return g, X, gamma_amb, X_amb * np.sign(pairing)


def levi_couple(r: DefiningFunction) -> DefiningCouple:
    """(gamma, X) on L: gamma = j^* d^c r, X = +-JZ with gamma(X) = 1."""
    g, X, _, _ = _linear_couple_vectors(r)
    D = r.L_domain
    gamma = TrigForm.from_terms(D, 1, {((0,) * D.dim, (j,)): g[j] for j in range(D.dim) if g[j] != 0},
                                real=True)
    c = DefiningCouple(gamma, TrigVectorField.constant(D, X / float(g @ X)))
    if not r.is_linear():
        c, _ = psi_couple(c, -r.log_factor)
    return c


def leaf_structure(r: DefiningFunction, c: DefiningCouple | None = None) -> LeafComplexStructure:
    """The complex structure of the Levi leaves, in leaf coordinates."""
    if c is None:
        c = levi_couple(r)
    g, _, _, _ = _linear_couple_vectors(r)
    t = int(np.argmax(np.abs(g)))
    leaf = [a for a in range(len(g)) if a != t]
    J = r.ambient.J.matrix
    Jl = np.zeros((len(leaf), len(leaf)))
    for col, a in enumerate(leaf):
        v = np.zeros(len(g))
        v[a] = 1.0
        v[t] = -g[a] / g[t]
        w = J @ _insert(v, r.axis)
        if abs(w[r.axis]) > 1e-12:
            raise AssertionError("ker(gamma) is not J-invariant")
        wl = _drop(w, r.axis)
        Jl[:, col] = [wl[b] for b in leaf]
    if r.is_linear():
        return LeafComplexStructure(c, Jl, transverse_axis=t)
    return LeafComplexStructure(levi_couple(DefiningFunction(r.ambient, r.axis, r.scale)), Jl,
                                transverse_axis=t)


def leaf_spec(r: DefiningFunction, transverse_value: float = 0.0) -> LeafSpec:
    """The Levi leaf {x_t = value} inside L, with its induced complex structure."""
    ls = leaf_structure(r)
    return LeafSpec(r.L_domain, tuple(ls.leaf_axes), (transverse_value,), J=ls.leaf_J)


# graphs --------------------------------------------------------------------

@dataclass(frozen=True)
class GraphFunction:
    """A small function a on L defining L_a = {r = a o pi}."""

    a: TrigForm
    radius: float = 0.25
    sup_bounds: tuple = field(init=False)

    def __post_init__(self):
        if self.a.degree != 0:
            raise ValueError("graph function must be a function")
        lo, hi = sup_norm_sq(self.a)
        object.__setattr__(self, "sup_bounds", (math.sqrt(lo), math.sqrt(hi)))
        if self.sup_bounds[1] >= self.radius:
            raise ValueError(f"sup|a| <= {self.sup_bounds[1]:.3e} is not below the radius {self.radius}")


def _extend_normal(f: TrigForm, axis: int, domain: FlatTorusDomain) -> TrigForm:
    """A function on L viewed on the ambient torus, constant along ``axis``."""
    coef = np.expand_dims(f.coef, axis + 1)
    pad = [(0, 0)] * coef.ndim
    pad[axis + 1] = (f.bw, f.bw)
    coef = np.pad(coef, pad)
    return TrigForm(domain, f.degree, coef, f.bw, real=f.real, check=False)


@dataclass(frozen=True)
class GraphMap:
    """Phi_a(z) = z + a(pi(z)) Z with pi the projection onto L along Z."""

    r: DefiningFunction
    a: GraphFunction

    def _project(self, pts: np.ndarray) -> np.ndarray:
        """pi(z) in L coordinates."""
        Z = self.r.Z
        base = pts - (pts[:, self.r.axis] * self.r.scale)[:, None] * Z[None, :]
        return _drop(base, self.r.axis)

    def _a_at(self, pts: np.ndarray) -> np.ndarray:
        from .forms import evaluate
        return evaluate(self.a.a, self._project(pts) % 1.0)[0].real

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return pts + self._a_at(pts)[:, None] * self.r.Z[None, :]

    def inverse(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return pts - self._a_at(pts)[:, None] * self.r.Z[None, :]

    def jacobian(self, pts: np.ndarray) -> np.ndarray:
        """I + Z (d(a o pi))^T at ambient points."""
        from .forms import evaluate
        pts = np.atleast_2d(pts)
        da = evaluate(ext_d(self.a.a), self._project(pts) % 1.0).real.T
        grad = _pi_gradient(_insert(da, self.r.axis), self.r)
        return np.eye(len(self.r.Z))[None] + self.r.Z[None, :, None] * grad[:, None, :]

    def gauge_element(self) -> GaugeElement:
        """The map as a displacement on the ambient torus (needs pi to drop the normal axis)."""
        Z = self.r.Z
        e = np.zeros_like(Z)
        e[self.r.axis] = 1.0
        if np.abs(self.r.scale * Z - e).max() > 1e-14:
            raise ValueError("pi is not a coordinate projection for this metric")
        dom = self.r.ambient.domain
        a_amb = _extend_normal(self.a.a, self.r.axis, dom)
        comps = [a_amb * float(Z[j]) for j in range(dom.dim)]
        return GaugeElement.from_displacement(DisplacementMap(TrigVectorField(comps)))


def graph_map(a: GraphFunction, r: DefiningFunction) -> GraphMap:
    if not r.is_linear():
        raise ValueError("graph maps are implemented for linear defining functions")
    return GraphMap(r, a)


def _pi_gradient(D: np.ndarray, r: DefiningFunction) -> np.ndarray:
    """Gradient of (a o pi) from the embedded L-gradient D: D - (D.Z) c e_i."""
    out = D.copy()
    out[..., r.axis] -= (D @ r.Z) * r.scale
    return out


def _graph_fields(a: TrigForm, grid_res: int, r: DefiningFunction):
    """a, its embedded gradient and the gradient of a o pi on the grid of L."""
    n1 = a.domain.dim
    av = sample(a, grid_res)[0].real.reshape(-1)
    dv = sample(ext_d(a), grid_res).real.reshape(n1, -1).T if a.bw > 0 else np.zeros((grid_res ** n1, n1))
    D = _insert(dv, r.axis)
    return av, D, _pi_gradient(D, r)


@dataclass
class AlphaResult:
    alpha: TrigForm
    tail: float
    z_defect: float
    kernel_defect: float
    grid_res: int
    cap: int

    def to_json(self) -> dict:
        return {"alpha": self.alpha.to_json(), "projection_tail": self.tail, "z_defect": self.z_defect,
                "kernel_defect": self.kernel_defect, "grid_res": self.grid_res, "cap": self.cap}


def alpha_of_graph(a: GraphFunction, r: DefiningFunction, grid_res: int | None = None,
                   cap: int | None = None, threshold: float = 1e-8) -> AlphaResult:
    """The deformation 1-form of L_a: normalized j^* d^c_{J_a} r minus gamma."""
    if not r.is_linear():
        raise ValueError("alpha_of_graph is implemented for linear defining functions")
    g, X, _, _ = _linear_couple_vectors(r)
    X = X / float(g @ X)
    f = a.a
    if cap is None:
        cap = 3 * f.bw + 2 if f.bw else 0
    if grid_res is None:
        grid_res = max(4 * cap + 1, 2 * f.bw + 1, 3)
    n = r.ambient.domain.dim
    J = r.ambient.J.matrix
    Z = r.Z
    _, _, Dt = _graph_fields(f, grid_res, r)
    DPhi = np.eye(n)[None] + Z[None, :, None] * Dt[:, None, :]
    Ja = np.linalg.solve(DPhi, J[None] @ DPhi)
    eta = r.scale * Ja[:, r.axis, :]                       # (d^c_{J_a} r)(V) = dr(J_a V)
    etaL = _drop(eta, r.axis)
    den = etaL @ X
    m = int(np.argmin(np.abs(den)))
    if abs(den[m]) <= threshold:
        raise NearZeroDenominator(f"d^c r(X) nearly vanishes (|.| = {abs(den[m]):.3e}); deformation too large")
    vals = etaL / den[:, None] - g[None, :]
    z_defect = float(np.abs(vals @ X).max())
    # pointwise check: ker(gamma + alpha) is carried by Phi_a into TL_a cap J TL_a
    cov = (etaL / den[:, None])[:, None, :]
    _, _, vh = np.linalg.svd(cov)
    V = np.swapaxes(vh[:, 1:, :], 1, 2)                     # (P, n-1, n-2)
    Vamb = np.insert(V, r.axis, 0.0, axis=1)
    drA = r.covector[None, :] - Dt                          # d(r - a o pi)
    JV = J[None] @ (DPhi @ Vamb)
    kernel_defect = float(np.abs(np.einsum("pk,pkj->pj", drA, JV)).max(initial=0.0))
    D = r.L_domain
    coefs = vals.T.reshape((n - 1,) + (grid_res,) * (n - 1))
    coef, tail = project(coefs.astype(complex), cap)
    alpha = TrigForm(D, 1, coef, cap, real=True, check=False).real_part().chop(1e-15)
    return AlphaResult(alpha, tail, z_defect, kernel_defect, grid_res, cap)


def graph_theta(a: GraphFunction, r: DefiningFunction) -> TrigForm:
    """psi^* d^c(r - a o pi) on L with psi = Phi_a restricted to L, an exact trig form."""
    f = a.a
    D = r.L_domain
    n = r.ambient.domain.dim
    J = r.ambient.J.matrix
    Z = r.Z
    da = [TrigForm(D, 0, ext_d(f).coef[j:j + 1], max(f.bw, 0), check=False) if f.bw else TrigForm.zero(D, 0)
          for j in range(n - 1)]
    Damb = da[:r.axis] + [TrigForm.zero(D, 0)] + da[r.axis:]
    DZ = sum((Damb[k] * float(Z[k]) for k in range(n) if Z[k] != 0), TrigForm.zero(D, 0))
    one = TrigForm.constant(D, 1.0)
    u = []
    for k in range(n):
        uk = -Damb[k]
        if k == r.axis:
            uk = uk + one * r.scale + DZ * r.scale
        u.append(uk)
    JE = np.delete(J, r.axis, axis=1)                        # J applied to the L axes
    JZ = J @ Z
    uJZ = sum((u[k] * float(JZ[k]) for k in range(n) if JZ[k] != 0), TrigForm.zero(D, 0))
    comps = []
    for j in range(n - 1):
        cj = sum((u[k] * float(JE[k, j]) for k in range(n) if JE[k, j] != 0), TrigForm.zero(D, 0))
        comps.append(cj + wedge(uJZ, da[j]))
    out = TrigForm.zero(D, 1)
    for j, cj in enumerate(comps):
        out = out + wedge(cj, TrigForm.constant(D, 1.0, (j,)))
    return out


@dataclass
class LeviVerdict:
    levi_flat: bool
    mc_norm: float
    geometric_residual: float
    algebraic: bool
    geometric: bool
    agree: bool
    alpha: AlphaResult
    tol: float

    def to_json(self) -> dict:
        return {"levi_flat": self.levi_flat, "mc_residual_norm": self.mc_norm,
                "geometric_residual": self.geometric_residual, "algebraic_verdict": self.algebraic,
                "geometric_verdict": self.geometric, "verdicts_agree": self.agree, "tol": self.tol,
                "alpha": self.alpha.to_json()}


def levi_flat_check(a: GraphFunction, r: DefiningFunction, tol: float = LEVI_TOL,
                    grid_res: int | None = None) -> LeviVerdict:
    """Maurer-Cartan residual of alpha_a against the Frobenius residual of the Levi distribution."""
    c = levi_couple(r)
    res = alpha_of_graph(a, r, grid_res=grid_res)
    alpha = project_Z(res.alpha, c)
    _, norm = mc_residual(alpha, c)
    theta = graph_theta(a, r)
    tdt = wedge(theta, ext_d(theta)) if theta.domain.dim >= 3 else TrigForm.zero(theta.domain, 2)
    geo = math.sqrt(sup_norm_sq(tdt)[0]) if not tdt.is_zero() else 0.0
    alg_ok = norm <= tol
    geo_ok = geo <= tol
    return LeviVerdict(alg_ok and geo_ok, norm, geo, alg_ok, geo_ok, alg_ok == geo_ok, res, tol)


# deformation derivative --------------------------------------------------------------

@dataclass
class DerivativeReport:
    mode: str
    t_steps: list
    errors: list
    orders: list
    errors_negated: list
    orders_negated: list
    levi_flat: list
    target: TrigForm
    degenerate: bool

    @property
    def ratios(self) -> list:
        return _ratios(self.errors)

    @property
    def ratios_negated(self) -> list:
        return _ratios(self.errors_negated)

    @property
    def matched_sign(self) -> int | None:
        """+1 or -1 for the sign of delta^c p that the differences converge to."""
        if self.degenerate:
            return None
        return 1 if self.errors[-1] <= self.errors_negated[-1] else -1

    def to_json(self) -> dict:
        return {"mode": self.mode, "t_steps": self.t_steps, "errors": self.errors, "ratios": self.ratios,
                "observed_orders": self.orders, "errors_negated": self.errors_negated,
                "ratios_negated": self.ratios_negated, "observed_orders_negated": self.orders_negated,
                "matched_sign": self.matched_sign, "levi_flat": self.levi_flat,
                "degenerate": self.degenerate, "target": self.target.to_json()}


def _ratios(errors: list) -> list:
    return [errors[i] / errors[i + 1] if errors[i + 1] > 0 else None for i in range(len(errors) - 1)]


def _orders(errors: list, t_steps) -> list:
    out = []
    for i in range(len(errors) - 1):
        if errors[i + 1] > 0 and errors[i] > 0:
            out.append(math.log(errors[i] / errors[i + 1]) / math.log(t_steps[i] / t_steps[i + 1]))
        else:
            out.append(None)
    return out


def deformation_derivative_check(p: TrigForm, r: DefiningFunction, t_steps=(1e-2, 5e-3, 2.5e-3),
                                 mode: str = "levi", tol: float = LEVI_TOL,
                                 grid_res: int | None = None) -> DerivativeReport:
    """Central differences of t -> alpha_{tp} compared with delta^c p and with -delta^c p.

    mode "levi" requires every graph t p to be Levi-flat; mode "formal" runs
    the comparison regardless. With the J convention used here the
    differences converge to -delta^c p; both comparisons are reported.
    """
    if mode not in ("levi", "formal"):
        raise ValueError("mode must be 'levi' or 'formal'")
    c = levi_couple(r)
    target = delta_c(p, c, leaf_structure(r, c))
    errors, errors_neg, flat = [], [], []
    for t in t_steps:
        plus, minus = GraphFunction(p * t), GraphFunction(p * (-t))
        if mode == "levi":
            for g in (plus, minus):
                v = levi_flat_check(g, r, tol, grid_res)
                flat.append(v.levi_flat)
                if not v.levi_flat:
                    raise ValueError(f"graph at t={t} is not Levi-flat; use mode='formal'")
        ap = alpha_of_graph(plus, r, grid_res=grid_res).alpha
        am = alpha_of_graph(minus, r, grid_res=grid_res).alpha
        fd = (ap - am) * (1.0 / (2 * t))
        errors.append(l2_norm(fd - target))
        errors_neg.append(l2_norm(fd + target))
    degenerate = max(errors) <= 1e-13 and max(errors_neg) <= 1e-13
    return DerivativeReport(mode, list(t_steps), errors, _orders(errors, t_steps), errors_neg,
                            _orders(errors_neg, t_steps), flat, target, degenerate)


# infinitesimal equations ----------------------------------------------------------------

def eq_p_residual(p: TrigForm, c: DefiningCouple, leafJ: LeafComplexStructure,
                  tol: float = EXACT_TOL) -> tuple[TrigForm, TrigForm]:
    """(delta delta^c p, its expansion in d_b, d_b^c and b)."""
    require_integrable(c, tol)
    r1 = delta(delta_c(p, c, leafJ, tol), c)
    b = project_Z(b_form(c), c)
    Jb = leafJ.apply(b)
    dbp = d_b(p, c)
    dcp = d_bc(p, c, leafJ)
    dc_term = d_b(project_Z(Jb, c), c)                        # J d_b^c b = d_b J b
    rA = (d_b(project_Z(dcp, c), c) - wedge(dbp, Jb) - wedge(dcp, b)
          - wedge(p, dc_term) - wedge(p, wedge(b, Jb)))
    return r1, rA


def _pi11(w: TrigForm, J: ComplexStructure) -> TrigForm:
    return 0.5 * (w + apply_J_algebra(w, J))


@dataclass
class KahlerResidual:
    real: TrigForm
    complex: TrigForm
    real_norm: float
    complex_norm: float
    repackaging_error: float
    b_F: TrigForm

    def to_json(self) -> dict:
        return {"real_norm": self.real_norm, "complex_norm": self.complex_norm,
                "repackaging_error": self.repackaging_error, "b_F": self.b_F.to_json(),
                "real": self.real.to_json(), "complex": self.complex.to_json()}


def kahler_leaf_residual(p: TrigForm, F: LeafSpec, c: DefiningCouple | None = None,
                         b_F: TrigForm | None = None) -> KahlerResidual:
    """The leaf equation for p in real form and in (1,1) form with theta = (b_F - i J b_F)/2.

    p lives on the ambient of F (restricted here) or already on F. Either the
    couple or b_F must be given.
    """
    if b_F is None:
        if c is None:
            raise ValueError("need a couple or b_F")
        b_F = harmonic_b_F(c, F)
    q = restrict_to_leaf(p, F) if p.domain == F.ambient else p
    J = F.complex_structure
    Jb = apply_J_algebra(b_F, J)
    dq = ext_d(q)
    dcq = -apply_J_algebra(dq, J)
    R = ext_d(dcq) - wedge(dq, Jb) - wedge(dcq, b_F) - wedge(q, wedge(b_F, Jb))
    dbar = 0.5 * (dq + 1j * apply_J_algebra(dq, J))
    dd = 0.5 * (dq - 1j * apply_J_algebra(dq, J))
    theta = 0.5 * (b_F - 1j * Jb)
    theta_bar = 0.5 * (b_F + 1j * Jb)
    C = (_pi11(ext_d(dbar), J) + wedge(dd, theta_bar) - wedge(dbar, theta)
         - wedge(q, wedge(theta_bar, theta)))
    err = l2_norm(R - 2j * C)
    return KahlerResidual(R, C, l2_norm(R), l2_norm(C), err, b_F)


# rescaling ---------------------------------------------------------------------

@dataclass
class Rescaling:
    log_factor: TrigForm
    couple: DefiningCouple
    identity_residual: float
    truncation: float
    defining_function: DefiningFunction | None = None

    def to_json(self) -> dict:
        return {"log_factor": self.log_factor.to_json(), "identity_residual": self.identity_residual,
                "truncation_bound": self.truncation}


def leaf_log_factor(c: DefiningCouple, F: LeafSpec) -> TrigForm:
    """lambda on F with b_F = b|_F + d lambda, from the Hodge splitting of b|_F."""
    if leaf_of_couple_check(c, F) > 1e-10:
        raise ValueError("F is not a leaf of the couple")
    split = hodge_decompose(restrict_to_leaf(b_form(c), F))
    return (-split.exact_potential).chop(1e-15)


def rescale_defining_function(r: DefiningFunction | DefiningCouple, F: LeafSpec,
                              lam: TrigForm | None = None) -> Rescaling:
    """rho = exp(-lambda) r with lambda extended constantly off F; then i_X d gamma|_F = b_F."""
    if isinstance(r, DefiningFunction):
        c = levi_couple(r)
    else:
        c = r
    if lam is None:
        lam = leaf_log_factor(c, F)
    lam_amb = extend_from_leaf(lam, F)
    new, trunc = psi_couple(c, -lam_amb)
    b_F = harmonic_b_F(c, F)
    got = restrict_to_leaf(b_form(new), F)
    out = Rescaling(lam, new, l2_norm(got - b_F), trunc)
    if isinstance(r, DefiningFunction):
        base = r.log_factor if r.log_factor is not None else TrigForm.zero(r.L_domain, 0)
        out.defining_function = DefiningFunction(r.ambient, r.axis, r.scale, base + lam_amb)
    return out


@dataclass
class LeafwiseKernel:
    dimension: int
    expected: int
    leaf_constant: bool
    residual: float
    bandwidth: int
    threshold: float
    gap: dict

    @property
    def exact(self) -> bool:
        return self.leaf_constant and self.dimension == self.expected

    def to_json(self) -> dict:
        return {"dimension": self.dimension, "expected_leaf_constant_modes": self.expected,
                "kernel_is_leaf_constant": self.leaf_constant, "exact": self.exact,
                "leaf_mode_residual": self.residual, "bandwidth": self.bandwidth,
                "threshold": self.threshold, "spectral_gap": self.gap}


def leafwise_kernel(r: DefiningFunction, B: int = 4, threshold: float = 1e-9) -> LeafwiseKernel:
    """Kernel of p -> d_b d_b^c p on functions truncated at B.

    The kernel is compared with the functions that are constant along the
    leaves, i.e. the modes with zero frequency in every leaf direction.
    """
    c = levi_couple(r)
    if not c.is_constant():
        raise ValueError("leafwise kernel test needs a constant couple")
    leafJ = leaf_structure(r, c)
    op = assemble_linear(lambda p: d_b(d_bc(p, c, leafJ), c), c.domain, 0, B, name="d_b d_b^c")
    sv = np.linalg.svd(op.blocks, compute_uv=False)[:, 0] if op.blocks.shape[1] else np.zeros(len(op.blocks))
    ks = frequencies(c.domain.dim, B)
    in_kernel = sv <= threshold
    leaf_axes = list(leafJ.leaf_axes)
    leaf_zero = np.all(ks[:, leaf_axes] == 0, axis=1)
    below = sv[in_kernel]
    above = sv[~in_kernel]
    gap = {"largest_below": float(below.max()) if below.size else None,
           "smallest_above": float(above.min()) if above.size else None}
    residual = float(sv[leaf_zero].max()) if leaf_zero.any() else 0.0
    return LeafwiseKernel(int(in_kernel.sum()), int(leaf_zero.sum()), bool(np.array_equal(in_kernel, leaf_zero)),
                          residual, B, threshold, gap)


# leaf uniqueness and rigidity ---------------------------------------------------------

@dataclass
class UniquenessReport:
    sigma_min: float
    beta_sup_sq: tuple
    lambda_1: float
    hypothesis: bool
    kernel_trivial: bool
    verdict: str
    identities: dict
    bandwidth: int

    def to_json(self) -> dict:
        return {"sigma_min": self.sigma_min, "beta_sup_sq": list(self.beta_sup_sq), "lambda_1": self.lambda_1,
                "hypothesis_beta_sq_below_lambda_1": self.hypothesis, "kernel_trivial": self.kernel_trivial,
                "verdict": self.verdict, "identities": self.identities, "bandwidth": self.bandwidth}


def _random_form(domain, degree, bw, rng, real=False):
    nsets = len(index_sets(domain.dim, degree))
    shape = (nsets,) + (2 * bw + 1,) * domain.dim
    coef = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    f = TrigForm(domain, degree, coef, bw, check=False)
    return f.real_part() if real else f


def _adjoint_matrix(M: np.ndarray, domain, src_deg: int, tgt_deg: int, B: int, TB: int) -> np.ndarray:
    """L2 adjoint of a coefficient matrix: W_s^-1 M^H W_t."""
    F_s, F_t = (2 * B + 1) ** domain.dim, (2 * TB + 1) ** domain.dim
    vol = math.sqrt(float(np.linalg.det(domain.metric)))
    Ws = np.kron(domain.gram(src_deg) * vol, np.eye(F_s))
    Wt = np.kron(domain.gram(tgt_deg) * vol, np.eye(F_t))
    return np.linalg.solve(Ws, M.conj().T @ Wt)


def uniqueness_kernel_test(F: LeafSpec, beta: TrigForm, B: int = 6, samples: int = 100,
                           seed: int = 0, sigma_tol: float = 1e-8) -> UniquenessReport:
    """Smallest singular value of P P^c on the B_F subspace, with the supporting identities."""
    D = F.domain
    if beta.domain != D or beta.degree != 1:
        raise ValueError("beta must be a 1-form on the leaf")
    if beta.is_zero(1e-14):
        raise ValueError("beta must be nonzero")
    if not beta.is_constant():
        raise ValueError("beta must be harmonic (constant on a flat leaf)")
    J = F.complex_structure
    op = assemble("PPᶜ", 0, B, OperatorContext(leaf=F, beta=beta))
    weight = b_f_functional(F, beta)
    w0 = weight.coefficient((0,) * D.dim, tuple(range(D.dim)))
    kz = ((2 * B + 1) ** D.dim) // 2                        # index of k = 0
    svals = []
    for f, blk in enumerate(op.blocks):
        if f == kz and abs(w0) > 1e-14:
            continue                                          # the constraint removes the constant mode
        svals.append(np.linalg.svd(blk, compute_uv=False).min())
    sigma = float(min(svals)) if svals else 0.0
    lo, hi = sup_norm_sq(beta)
    spec = laplace_spectrum(F, 2, "B_F", b_F=beta)
    lam1 = spec.lambda_1
    hyp = hi < lam1
    kernel_trivial = sigma > sigma_tol
    if hyp:
        verdict = "kernel trivial" if kernel_trivial else "hypothesis holds but kernel detected"
    else:
        verdict = "hypothesis fails; no conclusion"
    ident = _uniqueness_identities(F, beta, J, samples, seed, B)
    ident["step4_kernel_elements"] = _step4(op, F, beta, kz, w0, sigma_tol)
    return UniquenessReport(sigma, (lo, hi), lam1, bool(hyp), bool(kernel_trivial), verdict, ident, B)


def _step4(op, F, beta, kz, w0, sigma_tol) -> dict:
    """|df| = |f beta| on kernel elements (vacuous when the kernel is trivial)."""
    worst, count = 0.0, 0
    D = F.domain
    F_ = len(op.blocks)
    for f, blk in enumerate(op.blocks):
        if f == kz and abs(w0) > 1e-14:
            continue
        _, sv, vh = np.linalg.svd(blk)
        for j in np.flatnonzero(sv <= sigma_tol):
            v = np.zeros(F_, dtype=complex)
            v[f] = vh[j].conj()[0]
            g = vector_to_form(v, D, 0, op.bandwidth)
            worst = max(worst, abs(l2_norm(ext_d(g)) - l2_norm(g * beta)))
            count += 1
    return {"kernel_elements": count, "max_defect": worst}


def _uniqueness_identities(F: LeafSpec, beta: TrigForm, J: ComplexStructure, samples: int, seed: int,
                           B: int) -> dict:
    rng = np.random.default_rng(seed)
    D = F.domain
    omega = J.kahler_form()
    Jbeta = apply_J_algebra(beta, J)
    bw = 2
    step1 = adjA = adjB = sharp = 0.0
    # matrices of A f = f beta and B f = f J beta from functions to 1-forms
    A_op = assemble_functional(lambda f: wedge(f, beta), D, 0, bw)
    B_op = assemble_functional(lambda f: wedge(f, Jbeta), D, 0, bw)
    Pc_op = assemble_functional(lambda f: p_c(f, beta, J), D, 0, bw)
    A_adj = _adjoint_matrix(A_op, D, 0, 1, bw, bw)
    B_adj = _adjoint_matrix(B_op, D, 0, 1, bw, bw)
    Pc_adj = _adjoint_matrix(Pc_op, D, 0, 1, bw, bw)
    for _ in range(samples):
        f = _random_form(D, 0, bw, rng)
        psi = _random_form(D, 1, bw, rng)
        pcf = p_c(f, beta, J)
        # Step 1 pointwise: <omega, beta ^ P^c f> = <J beta, P^c f>
        lhs = _pointwise_inner(omega, wedge(beta, pcf))
        rhs = _pointwise_inner(Jbeta, pcf)
        step1 = max(step1, (lhs - rhs).max_abs())
        pv = form_to_vector(psi, bw)
        a_formula = hodge_star(wedge(beta, hodge_star(psi)))
        b_formula = hodge_star(wedge(Jbeta, hodge_star(psi)))
        adjA = max(adjA, (a_formula - vector_to_form(A_adj @ pv, D, 0, bw)).max_abs())
        adjB = max(adjB, (b_formula - vector_to_form(B_adj @ pv, D, 0, bw)).max_abs())
        # (P^c)# = -* P^c * equals (P^c)* + 2 B*
        sharp_psi = -hodge_star(p_c(hodge_star(psi), beta, J))
        expect = vector_to_form(Pc_adj @ pv, D, 0, bw) + 2 * b_formula
        sharp = max(sharp, (sharp_psi - expect).max_abs())
    return {"samples": samples, "step1": float(step1), "adjoint_A": float(adjA), "adjoint_B": float(adjB),
            "p_c_sharp": float(sharp)}


def assemble_functional(func, domain, degree, B) -> np.ndarray:
    """Dense matrix of a frequency-preserving operator on forms truncated at B."""
    from .spectral import assemble_linear
    return assemble_linear(func, domain, degree, B).dense()


def _pointwise_inner(a: TrigForm, b: TrigForm) -> TrigForm:
    """The function <a, b> = sum a_I conj(b_J) g^{IJ}."""
    D = a.domain
    gram = D.gram(a.degree)
    bc = b.conj()
    out = TrigForm.zero(D, 0)
    for i in range(a.coef.shape[0]):
        ai = TrigForm(D, 0, a.coef[i:i + 1], a.bw, check=False)
        for j in range(bc.coef.shape[0]):
            if gram[i, j] != 0:
                bj = TrigForm(D, 0, bc.coef[j:j + 1], bc.bw, check=False)
                out = out + wedge(ai, bj) * float(gram[i, j])
    return out


@dataclass
class LeafMargin:
    transverse_value: float
    is_leaf: bool
    branch: str
    b_sup_sq: tuple | None = None
    lambda_F: float | None = None
    margin: float | None = None
    passed: bool | None = None

    def to_json(self) -> dict:
        return {"transverse_value": self.transverse_value, "is_leaf": self.is_leaf, "branch": self.branch,
                "b_sup_sq": None if self.b_sup_sq is None else list(self.b_sup_sq),
                "lambda_F": self.lambda_F, "margin": self.margin, "passed": self.passed}


@dataclass
class RigidityCertificate:
    certified: bool
    status: str
    leaves: list
    min_margin: float | None

    def to_json(self) -> dict:
        return {"certified": self.certified, "status": self.status, "min_margin": self.min_margin,
                "leaves": [lf.to_json() for lf in self.leaves]}


def rigidity_certificate(c: DefiningCouple, leaf_axes, J_leaf, transverse_axis: int | None = None,
                         samples: int = 17, values=None, tol: float = 1e-10) -> RigidityCertificate:
    """Sufficient rigidity test over sampled coordinate leaves {x_t = value}.

    A leaf passes through the parallelizable branch when b_F = 0, otherwise
    when sup|b_F|^2 < lambda_F. Failing leaves make the result inconclusive,
    not a proof of non-rigidity.
    """
    require_integrable(c)
    n = c.domain.dim
    leaf_axes = tuple(sorted(int(i) for i in leaf_axes))
    trans = [i for i in range(n) if i not in leaf_axes]
    if transverse_axis is not None and [int(transverse_axis)] != trans:
        raise ValueError("transverse axis must complement the leaf axes")
    if len(trans) != 1:
        raise ValueError("leaves must have codimension one in L")
    if values is None:
        values = [j / samples for j in range(samples)]
    leaves = []
    for v in values:
        F = LeafSpec(c.domain, leaf_axes, (float(v),), J=J_leaf)
        if leaf_of_couple_check(c, F) > tol:
            leaves.append(LeafMargin(float(v), False, "not a leaf"))
            continue
        bF = harmonic_b_F(c, F)
        if bF.is_zero(tol):
            leaves.append(LeafMargin(float(v), True, "parallelizable leaf", (0.0, 0.0), None, None, True))
            continue
        lo, hi = sup_norm_sq(bF)
        lam = laplace_spectrum(F, 2, "B_F", b_F=bF).lambda_1
        leaves.append(LeafMargin(float(v), True, "spectral", (lo, hi), lam, lam - hi, hi < lam))
    real = [lf for lf in leaves if lf.is_leaf]
    if not real:
        return RigidityCertificate(False, "no compact leaf sampled", leaves, None)
    ok = all(lf.passed for lf in real)
    margins = [lf.margin for lf in real if lf.margin is not None]
    if ok and all(lf.branch == "parallelizable leaf" for lf in real):
        status = "strongly infinitesimally rigid (parallelizable leaves)"
    elif ok:
        status = "infinitesimally rigid (spectral criterion)"
    else:
        status = "inconclusive"
    return RigidityCertificate(ok, status, leaves, min(margins) if margins else None)


def gamma_wedge_omega(r: DefiningFunction, tol: float = EXACT_TOL) -> complex:
    """Integral over L of gamma ^ omega restricted to L."""
    c = levi_couple(r)
    if ext_d(c.gamma).max_abs() > tol:
        raise ValueError("gamma is not closed")
    omega = r.ambient.omega
    F = LeafSpec(r.ambient.domain, tuple(r.L_axes), (0.0,))
    om_L = restrict_to_leaf(omega, F)
    om_L = TrigForm(c.domain, 2, om_L.coef, om_L.bw, check=False)
    return integrate_top(wedge(c.gamma, om_L))


def frobenius_of_couple(r: DefiningFunction):
    return frobenius_checks(levi_couple(r))


__all__ = [
    "ComplexTorusAmbient", "DefiningFunction", "GraphFunction", "GraphMap", "AlphaResult", "LeviVerdict",
    "DerivativeReport", "KahlerResidual", "LeafwiseKernel", "leafwise_kernel", "Rescaling", "UniquenessReport", "RigidityCertificate",
    "levi_couple", "leaf_structure", "leaf_spec", "graph_map", "alpha_of_graph", "graph_theta",
    "levi_flat_check", "deformation_derivative_check", "eq_p_residual", "kahler_leaf_residual",
    "leaf_log_factor", "rescale_defining_function", "uniqueness_kernel_test", "rigidity_certificate",
    "gamma_wedge_omega", "frobenius_of_couple",
]
