"""Assembled operators, cohomology dimensions, Hodge splitting and leaf spectra."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .dgla import DefiningCouple, LeafComplexStructure, b_form, delta, delta_c
from .forms import (ComplexStructure, DegreeError, FlatTorusDomain, TrigForm, apply_J_algebra,
                    ext_d, hodge_star, index_sets, integrate_top, interior, l2_norm, wedge)
from .spectral import (SpectralOperator, assemble_linear, block_null_basis, block_ranks,
                       frequencies)

RANK_THRESHOLD = 1e-9
TWO_PI = 2.0 * math.pi


class EmptyConstraint(ValueError):
    """Raised when a constraint leaves no room in the requested space."""


class NotExact(ValueError):
    """Raised when a pair of operators does not compose to zero."""


# leaves ---------------------------------------------------------------------

@dataclass(frozen=True)
class LeafSpec:
    """A coordinate subtorus F of an ambient torus, with its induced geometry.

    ``transverse_values`` fixes the coordinates not in ``leaf_axes``. ``J`` is
    the induced complex structure on F (a matrix on the leaf axes) or None for
    leaves that carry no complex structure.
    """

    ambient: FlatTorusDomain
    leaf_axes: tuple
    transverse_values: tuple
    J: tuple | None = None

    def __post_init__(self):
        n = self.ambient.dim
        axes = tuple(int(i) for i in self.leaf_axes)
        if len(set(axes)) != len(axes) or any(not 0 <= i < n for i in axes) or not axes:
            raise ValueError("leaf axes must be distinct ambient axes")
        object.__setattr__(self, "leaf_axes", tuple(sorted(axes)))
        if len(self.transverse_values) != n - len(axes):
            raise ValueError("one transverse value per transverse axis is required")
        object.__setattr__(self, "transverse_values", tuple(float(v) for v in self.transverse_values))
        G = self.metric
        if np.linalg.eigvalsh(G).min() <= 0:
            raise ValueError("induced metric is not positive definite")
        if self.J is not None:
            J = np.asarray(self.J, dtype=float)
            object.__setattr__(self, "J", tuple(map(tuple, J)))

    @property
    def transverse_axes(self) -> tuple:
        return tuple(i for i in range(self.ambient.dim) if i not in self.leaf_axes)

    @property
    def metric(self) -> np.ndarray:
        ax = list(self.leaf_axes)
        return self.ambient.metric[np.ix_(ax, ax)]

    @property
    def domain(self) -> FlatTorusDomain:
        return FlatTorusDomain(len(self.leaf_axes), self.metric, self.ambient.orientation)

    @property
    def complex_structure(self) -> ComplexStructure:
        if self.J is None:
            raise ValueError("leaf carries no complex structure")
        return ComplexStructure(self.domain, np.array(self.J))

    def to_json(self) -> dict:
        return {"leaf_axes": list(self.leaf_axes), "transverse_values": list(self.transverse_values),
                "J": None if self.J is None else [list(r) for r in self.J]}


def restrict_to_leaf(a: TrigForm, F: LeafSpec) -> TrigForm:
    """Pull a back to F: freeze the transverse coordinates, keep the leaf index sets."""
    if a.domain != F.ambient:
        raise ValueError("form lives on a different torus")
    n = a.domain.dim
    side = 2 * a.bw + 1
    k = np.arange(-a.bw, a.bw + 1)
    coef = a.coef
    # contract transverse axes from the last one so axis numbers stay valid
    for ax, val in sorted(zip(F.transverse_axes, F.transverse_values), reverse=True):
        phase = np.exp(1j * TWO_PI * k * val)
        coef = np.tensordot(coef, phase, axes=([1 + ax], [0]))
    leaf = F.leaf_axes
    pos = {I: s for s, I in enumerate(index_sets(n, a.degree))}
    local_sets = index_sets(len(leaf), a.degree)
    out = np.zeros((len(local_sets),) + (side,) * len(leaf), dtype=complex)
    for t, I in enumerate(local_sets):
        out[t] = coef[pos[tuple(leaf[i] for i in I)]]
    return TrigForm(F.domain, a.degree, out, a.bw, real=a.real, check=False)


def leaf_of_couple_check(c: DefiningCouple, F: LeafSpec) -> float:
    """Size of gamma pulled back to F; zero when F is tangent to ker(gamma)."""
    return restrict_to_leaf(c.gamma, F).max_abs()


def extend_from_leaf(f: TrigForm, F: LeafSpec) -> TrigForm:
    """A leaf form viewed on the ambient torus, constant in the transverse directions."""
    n = F.ambient.dim
    leaf = F.leaf_axes
    side = 2 * f.bw + 1
    pos = {I: s for s, I in enumerate(index_sets(n, f.degree))}
    coef = np.zeros((len(pos),) + (side,) * n, dtype=complex)
    for t, I in enumerate(index_sets(len(leaf), f.degree)):
        target = [pos[tuple(leaf[i] for i in I)]] + [slice(None)] * n
        for ax in F.transverse_axes:
            target[1 + ax] = f.bw
        coef[tuple(target)] = f.coef[t]
    return TrigForm(F.ambient, f.degree, coef, f.bw, real=f.real, check=False)


# operators ------------------------------------------------------------------

@dataclass
class OperatorContext:
    """Inputs an operator may need: a couple, a leaf, a leaf 1-form beta."""

    couple: DefiningCouple | None = None
    leaf: LeafSpec | None = None
    beta: TrigForm | None = None
    leaf_J: LeafComplexStructure | None = None
    domain: FlatTorusDomain | None = None


def codifferential(a: TrigForm) -> TrigForm:
    """Formal L2 adjoint of d for the constant metric."""
    n, p = a.domain.dim, a.degree
    if p == 0:
        return TrigForm.zero(a.domain, 0)
    sign = (-1) ** (n * (p + 1) + 1)
    return sign * hodge_star(ext_d(hodge_star(a)))


def laplacian(a: TrigForm) -> TrigForm:
    """Hodge Laplacian d d* + d* d (nonnegative)."""
    n = a.domain.dim
    out = TrigForm.zero(a.domain, a.degree)
    if a.degree > 0:
        out = out + ext_d(codifferential(a))
    if a.degree < n:
        out = out + codifferential(ext_d(a))
    return out


def p_c(f: TrigForm, beta: TrigForm, J: ComplexStructure) -> TrigForm:
    """P^c = J^-1 (d + beta ^ .) J on forms of any degree."""
    if f.degree >= f.domain.dim:
        return TrigForm.zero(f.domain, f.degree + 1)
    Jf = apply_J_algebra(f, J)
    return apply_J_algebra(ext_d(Jf) + wedge(beta, Jf), J, inverse=True)


def pp_c(f: TrigForm, beta: TrigForm, J: ComplexStructure) -> TrigForm:
    """P P^c f with P = d + beta ^ ."""
    g = p_c(f, beta, J)
    return ext_d(g) + wedge(beta, g)


def _dims_for(opname: str, ctx: OperatorContext) -> FlatTorusDomain:
    if opname in ("δ", "delta", "d_b", "δᶜ", "delta_c"):
        if ctx.couple is None:
            raise ValueError(f"operator {opname} needs a defining couple")
        return ctx.couple.domain
    if opname in ("PPᶜ", "PPc"):
        if ctx.leaf is None or ctx.beta is None:
            raise ValueError("PPᶜ needs a leaf and a leaf 1-form beta")
        return ctx.leaf.domain
    if ctx.leaf is not None:
        return ctx.leaf.domain
    if ctx.domain is not None:
        return ctx.domain
    if ctx.couple is not None:
        return ctx.couple.domain
    raise ValueError(f"operator {opname} needs a domain")


def assemble(opname: str, degree: int, B: int, context: OperatorContext | None = None,
             target_bandwidth: int | None = None) -> SpectralOperator:
    """Assemble one of d, δ, d_b, δᶜ, Δ, PPᶜ on forms of the given degree truncated at B."""
    ctx = context or OperatorContext()
    domain = _dims_for(opname, ctx)
    growth = 0
    if opname in ("d",):
        func = ext_d
    elif opname in ("Δ", "laplacian"):
        func = laplacian
    elif opname in ("δ", "delta"):
        c = ctx.couple
        growth = 2 * c.coefficient_bandwidth()
        func = lambda a: delta(a, c)  # noqa: E731
    elif opname == "d_b":
        c = ctx.couple
        growth = 2 * c.coefficient_bandwidth()

        def func(a):
            da = ext_d(a)
            return da - wedge(c.gamma, interior(c.X, da))
    elif opname in ("δᶜ", "delta_c"):
        c = ctx.couple
        if ctx.leaf_J is None:
            raise ValueError("δᶜ needs a leaf complex structure")
        if degree != 0:
            raise DegreeError("δᶜ is assembled on functions")
        growth = 4 * c.coefficient_bandwidth()
        func = lambda a: delta_c(a, c, ctx.leaf_J)  # noqa: E731
    elif opname in ("PPᶜ", "PPc"):
        if degree != 0:
            raise DegreeError("PPᶜ is assembled on functions")
        J = ctx.leaf.complex_structure
        beta = ctx.beta
        growth = 2 * beta.bw
        func = lambda f: pp_c(f, beta, J)  # noqa: E731
    else:
        raise ValueError(f"unknown operator {opname!r}")
    if degree < 0 or degree > domain.dim:
        raise DegreeError(f"degree {degree} outside 0..{domain.dim}")
    return assemble_linear(func, domain, degree, B, growth=growth, target_bandwidth=target_bandwidth,
                           name=opname)


# subspaces and cohomology --------------------------------------------------------

@dataclass
class Subspace:
    """A subspace of a truncated form space: per-frequency bases or one dense basis."""

    blocks: list | None = None
    dense: np.ndarray | None = None

    def dim(self) -> int:
        if self.blocks is not None:
            return int(sum(b.shape[1] for b in self.blocks))
        return int(self.dense.shape[1])


def z_subspace(c: DefiningCouple, degree: int, B: int, threshold: float = RANK_THRESHOLD) -> Subspace:
    """Forms of the given degree killed by i_X, truncated at B."""
    n = c.domain.dim
    nsets = len(index_sets(n, degree))
    F = (2 * B + 1) ** n
    if degree == 0:
        return Subspace(blocks=[np.eye(1, dtype=complex)] * F)
    op = assemble_linear(lambda a: interior(c.X, a), c.domain, degree, B,
                         growth=c.coefficient_bandwidth(), name="i_X")
    if op.blocks is not None:
        return Subspace(blocks=block_null_basis(op.blocks, threshold))
    M = op.dense()
    _, sv, vh = np.linalg.svd(M)
    rank = int((sv > threshold).sum())
    basis = vh[rank:].conj().T
    if basis.shape[0] != nsets * F:
        raise AssertionError("unexpected basis size")
    return Subspace(dense=basis)


@dataclass
class CohomologyDims:
    kernel: int
    image: int
    betti: int
    bandwidth: int
    threshold: float
    per_frequency: list | None = None
    spectral_gap: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"bandwidth": self.bandwidth, "threshold": self.threshold, "kernel": self.kernel,
               "image": self.image, "betti": self.betti, "spectral_gap": self.spectral_gap}
        if self.per_frequency is not None:
            out["per_frequency"] = [{"k": list(k), "kernel": a, "image": b, "betti": a - b}
                                    for k, a, b in self.per_frequency]
        return out

    def betti_by_frequency(self) -> dict:
        if self.per_frequency is None:
            raise ValueError("operators were not frequency diagonal")
        return {tuple(k): a - b for k, a, b in self.per_frequency}


def _restricted_blocks(op: SpectralOperator, sub: Subspace | None):
    if sub is None:
        return list(op.blocks)
    return [blk @ basis for blk, basis in zip(op.blocks, sub.blocks)]


def _gap(svs: list, threshold: float) -> dict:
    vals = np.concatenate([np.ravel(s) for s in svs]) if svs else np.zeros(0)
    below = vals[vals <= threshold]
    above = vals[vals > threshold]
    return {"largest_below": float(below.max()) if below.size else None,
            "smallest_above": float(above.min()) if above.size else None}


def cohomology_dims(op_in: SpectralOperator | None, op_out: SpectralOperator, threshold: float = RANK_THRESHOLD,
                    sub_in: Subspace | None = None, sub_mid: Subspace | None = None,
                    exact_tol: float = 1e-9) -> CohomologyDims:
    """ker(op_out) / im(op_in) dimensions, optionally restricted to subspaces.

    ``op_in=None`` stands for the zero map (degree 0).

    ``sub_in`` restricts the source of op_in and ``sub_mid`` the middle space
    (source of op_out). op_in must map ``sub_in`` into ``sub_mid``.
    """
    if op_in is None:
        op_in = _zero_into(op_out)
    if op_in.target_degree != op_out.source_degree:
        raise ValueError("operators do not form a complex")
    diag = (op_in.blocks is not None and op_out.blocks is not None
            and (sub_in is None or sub_in.blocks is not None)
            and (sub_mid is None or sub_mid.blocks is not None)
            and op_in.bandwidth == op_out.bandwidth)
    B = op_out.bandwidth
    if diag:
        A = _restricted_blocks(op_in, sub_in)
        C = _restricted_blocks(op_out, sub_mid)
        M = _restricted_blocks(op_out, None)
        worst = max((float(np.abs(m @ a).max(initial=0.0)) for m, a in zip(M, A)), default=0.0)
        if worst > exact_tol:
            raise NotExact(f"op_out o op_in = {worst:.3e} exceeds {exact_tol}")
        ks = frequencies(op_out.domain.dim, B)
        per, svs = [], []
        tot_k = tot_i = 0
        for f, (a, cc) in enumerate(zip(A, C)):
            mid_dim = cc.shape[1]
            ra, sa = block_ranks(a[None], threshold) if a.size else (np.array([0]), np.zeros((1, 0)))
            rc, sc = block_ranks(cc[None], threshold) if cc.size else (np.array([0]), np.zeros((1, 0)))
            ker = mid_dim - int(rc[0])
            im = int(ra[0])
            per.append((tuple(int(x) for x in ks[f]), ker, im))
            tot_k += ker
            tot_i += im
            svs += [sa, sc]
        return CohomologyDims(tot_k, tot_i, tot_k - tot_i, B, threshold, per, _gap(svs, threshold))
    if op_in.target_bandwidth != op_out.bandwidth:
        raise ValueError("op_in target bandwidth must equal op_out bandwidth")
    Ad = op_in.dense()
    Cd = op_out.dense()
    prod = Cd @ Ad
    if sub_in is not None:
        prod = prod @ _dense_basis(sub_in)
    if np.abs(prod).max(initial=0.0) > exact_tol:
        raise NotExact(f"op_out o op_in = {np.abs(prod).max():.3e} exceeds {exact_tol}")
    if sub_in is not None:
        Ad = Ad @ _dense_basis(sub_in)
    mid_dim = Cd.shape[1]
    if sub_mid is not None:
        Bm = _dense_basis(sub_mid)
        Cd = Cd @ Bm
        mid_dim = Bm.shape[1]
    sa = np.linalg.svd(Ad, compute_uv=False) if Ad.size else np.zeros(0)
    sc = np.linalg.svd(Cd, compute_uv=False) if Cd.size else np.zeros(0)
    ker = mid_dim - int((sc > threshold).sum())
    im = int((sa > threshold).sum())
    return CohomologyDims(ker, im, ker - im, B, threshold, None, _gap([sa, sc], threshold))


def _zero_into(op: SpectralOperator) -> SpectralOperator:
    """The zero map from a one-dimensional space at every frequency into the source of op."""
    F = (2 * op.bandwidth + 1) ** op.domain.dim
    rows = op.source_sets * F
    blocks = np.zeros((F, op.source_sets, 1), dtype=complex) if op.blocks is not None else None
    return SpectralOperator(op.domain, max(op.source_degree - 1, 0), op.source_degree, op.bandwidth,
                            op.bandwidth, "none", sparse.csr_matrix((rows, F), dtype=complex), blocks,
                            name="0")


def _dense_basis(sub: Subspace) -> np.ndarray:
    if sub.dense is not None:
        return sub.dense
    # per-frequency bases -> one block matrix in (index set major, frequency) layout
    F = len(sub.blocks)
    nsets = sub.blocks[0].shape[0]
    cols = []
    for f, b in enumerate(sub.blocks):
        for j in range(b.shape[1]):
            v = np.zeros(nsets * F, dtype=complex)
            v[np.arange(nsets) * F + f] = b[:, j]
            cols.append(v)
    return np.stack(cols, axis=1) if cols else np.zeros((nsets * F, 0), dtype=complex)


def restricted_operator_norm(op: SpectralOperator, sub: Subspace | None = None) -> float:
    if op.blocks is not None and (sub is None or sub.blocks is not None):
        blocks = _restricted_blocks(op, sub)
        return max((float(np.linalg.norm(b, 2)) for b in blocks if b.size), default=0.0)
    M = op.dense()
    if sub is not None:
        M = M @ _dense_basis(sub)
    return float(np.linalg.norm(M, 2)) if M.size else 0.0


# harmonic parts -------------------------------------------------------------

def harmonic_part(a: TrigForm) -> TrigForm:
    """Zero-frequency part: the harmonic projection for a constant metric."""
    return a.mean()


def harmonic_b_F(c: DefiningCouple, F: LeafSpec, tol: float = 1e-10) -> TrigForm:
    """Leaf-harmonic representative of the class of b restricted to F."""
    g = leaf_of_couple_check(c, F)
    if g > tol:
        raise ValueError(f"F is not a leaf: gamma restricts to a form of size {g:.3e}")
    b = restrict_to_leaf(b_form(c), F)
    return harmonic_part(b).chop(1e-15)


def inverse_laplacian(a: TrigForm) -> TrigForm:
    """Solve Laplacian u = a - harmonic(a) on the flat torus, u without harmonic part."""
    n = a.domain.dim
    if a.bw == 0:
        return TrigForm.zero(a.domain, a.degree)
    Ginv = a.domain.inv_metric
    k = np.stack(np.meshgrid(*([np.arange(-a.bw, a.bw + 1)] * n), indexing="ij"), axis=-1)
    lam = (4 * math.pi ** 2) * np.einsum("...i,ij,...j->...", k, Ginv, k)
    coef = np.zeros_like(a.coef)
    nz = lam > 0
    coef[:, nz] = a.coef[:, nz] / lam[nz]
    return TrigForm(a.domain, a.degree, coef, a.bw, real=a.real)


@dataclass
class HodgeSplit:
    harmonic: TrigForm
    exact: TrigForm
    coexact: TrigForm
    residual: float
    exact_potential: TrigForm

    def to_json(self) -> dict:
        return {"harmonic": self.harmonic.to_json(), "exact": self.exact.to_json(),
                "coexact": self.coexact.to_json(), "exact_potential": self.exact_potential.to_json(),
                "residual": self.residual}


def hodge_decompose(a: TrigForm, F: LeafSpec | None = None) -> HodgeSplit:
    """a = harmonic + d(potential) + coexact on a flat torus (optionally after restriction to F)."""
    if F is not None and a.domain != F.domain:
        a = restrict_to_leaf(a, F)
    h = harmonic_part(a)
    rest = a - h
    if a.degree > 0:
        pot = inverse_laplacian(codifferential(rest))
        exact = ext_d(pot)
    else:
        pot = TrigForm.zero(a.domain, max(a.degree - 1, 0))
        exact = TrigForm.zero(a.domain, a.degree)
    if a.degree < a.domain.dim:
        coexact = codifferential(inverse_laplacian(ext_d(rest)))
    else:
        coexact = TrigForm.zero(a.domain, a.degree)
    res = l2_norm(a - h - exact - coexact)
    return HodgeSplit(h, exact, coexact, res, pot)


# spectra --------------------------------------------------------------------

def _constraint_weight(F: LeafSpec, b_F: TrigForm) -> TrigForm:
    """The top-form coefficient of b_F ^ J b_F ^ omega^(q-1) on F."""
    J = F.complex_structure
    d = F.domain.dim
    w = wedge(b_F, apply_J_algebra(b_F, J))
    omega = J.kahler_form()
    for _ in range(d // 2 - 1):
        w = wedge(w, omega)
    return w


def b_f_functional(F: LeafSpec, b_F: TrigForm):
    """The functional f -> integral over F of f b_F ^ J b_F ^ omega^(q-1), as a top form."""
    return _constraint_weight(F, b_F)


@dataclass
class Spectrum:
    eigenvalues: list
    frequencies: list
    lambda_1: float | None
    constraint: str
    bandwidth: int

    def to_json(self) -> dict:
        return {"constraint": self.constraint, "bandwidth": self.bandwidth, "lambda_1": self.lambda_1,
                "eigenvalues": self.eigenvalues,
                "frequencies": [list(k) if k is not None else None for k in self.frequencies]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frequency", "eigenvalue"])
        for k, lam in zip(self.frequencies, self.eigenvalues):
            w.writerow([" ".join(map(str, k)) if k is not None else "mixed", repr(lam)])
        return buf.getvalue()


def laplace_spectrum(F: LeafSpec | FlatTorusDomain, count: int, constraint: str = "all",
                     b_F: TrigForm | None = None, threshold: float = RANK_THRESHOLD) -> Spectrum:
    """Smallest eigenvalues of the function Laplacian on a flat torus under a linear constraint.

    constraint is "all", "zero_mean" or "B_F" (orthogonality to the weight of
    ``b_F``; needs a leaf with a complex structure).
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    domain = F.domain if isinstance(F, LeafSpec) else F
    n = domain.dim
    Ginv = domain.inv_metric
    weight = None
    if constraint == "zero_mean":
        weight = TrigForm.constant(domain, 1.0)
    elif constraint == "B_F":
        if b_F is None or not isinstance(F, LeafSpec):
            raise ValueError("B_F constraint needs a leaf and b_F")
        top = _constraint_weight(F, b_F)
        weight = TrigForm(domain, 0, top.coef, top.bw, check=False)
    elif constraint != "all":
        raise ValueError(f"unknown constraint {constraint!r}")
    lam_max_G = float(np.linalg.eigvalsh(domain.metric).max())
    B = max(1, 0 if weight is None else weight.bw)
    while True:
        ks = frequencies(n, B)
        lam = (4 * math.pi ** 2) * np.einsum("fi,ij,fj->f", ks, Ginv, ks)
        free = np.ones(len(ks), dtype=bool)
        mixed = []
        if weight is not None and not weight.is_zero(1e-14):
            wv = weight.padded(B)[0].reshape(-1) if weight.bw <= B else None
            support = np.abs(wv) > 1e-14
            free &= ~support
            S = np.flatnonzero(support)
            # Rayleigh-Ritz of diag(lam_S) on the orthogonal complement of w_S
            wS = wv[S] / np.linalg.norm(wv[S])
            Q = np.linalg.svd(wS.conj()[None, :])[2][1:].conj().T
            if Q.shape[1]:
                mixed = list(np.linalg.eigvalsh(Q.conj().T @ np.diag(lam[S]) @ Q))
        vals = list(zip(lam[free], [tuple(int(x) for x in k) for k in ks[free]])) + [(m, None) for m in mixed]
        vals.sort(key=lambda t: (t[0], t[1] is None, t[1] or ()))
        bound = 4 * math.pi ** 2 * (B + 1) ** 2 / lam_max_G
        if len(vals) >= count and vals[count - 1][0] < bound:
            break
        B += 1
    vals = vals[:count]
    if not vals:
        raise EmptyConstraint("constraint subspace is empty")
    eig = [float(v) for v, _ in vals]
    lam1 = next((v for v in eig if v > threshold), None)
    return Spectrum(eig, [k for _, k in vals], lam1, constraint, B)


def integrate_against(f: TrigForm, top: TrigForm) -> complex:
    """Integral of f times a top form."""
    return integrate_top(wedge(f, top))


__all__ = [
    "LeafSpec", "OperatorContext", "SpectralOperator", "Subspace", "CohomologyDims", "HodgeSplit",
    "Spectrum", "assemble", "cohomology_dims", "z_subspace", "harmonic_b_F", "harmonic_part",
    "hodge_decompose", "laplace_spectrum", "restrict_to_leaf", "extend_from_leaf", "codifferential",
    "laplacian", "p_c", "pp_c", "restricted_operator_norm", "b_f_functional", "integrate_against",
    "inverse_laplacian", "EmptyConstraint", "NotExact",
]
