"""Trigonometric differential forms on flat tori.

A form of degree p on T^n = R^n/Z^n is stored as a dense coefficient box
``coef[s, k_1 + B, ..., k_n + B]`` where ``s`` enumerates the increasing index
sets of size p (lexicographic order) and B is the sup-norm bandwidth. All
exterior-calculus operations act exactly on these coefficients; only the
sampling helpers (division, pullback by non-affine maps) leave the exact path.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

TWO_PI = 2.0 * math.pi
DIRECT_CONV_LIMIT = 5000


@lru_cache(maxsize=None)
def index_sets(n: int, p: int) -> tuple[tuple[int, ...], ...]:
    """Increasing index sets of size p in range(n), lexicographic."""
    if p < 0 or p > n:
        return ()
    return tuple(itertools.combinations(range(n), p))


@lru_cache(maxsize=None)
def _set_position(n: int, p: int) -> dict:
    return {I: s for s, I in enumerate(index_sets(n, p))}


def _perm_sign(seq) -> int:
    """Sign of the permutation sorting a sequence of distinct integers."""
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@lru_cache(maxsize=None)
def _wedge_table(n: int, p: int, q: int):
    """List of (s_a, s_b, s_out, sign) for dx_I ^ dx_J = sign dx_K."""
    pos = _set_position(n, p + q)
    table = []
    for sa, I in enumerate(index_sets(n, p)):
        for sb, J in enumerate(index_sets(n, q)):
            if set(I) & set(J):
                continue
            K = tuple(sorted(I + J))
            table.append((sa, sb, pos[K], _perm_sign(I + J)))
    return tuple(table)


class DomainError(ValueError):
    """Raised when forms on different tori are combined."""


class DegreeError(ValueError):
    """Raised when an operation receives a form of unsupported degree."""


class FlatTorusDomain:
    """The torus R^n/Z^n with a constant SPD metric and an orientation sign."""

    def __init__(self, dim: int, metric=None, orientation: int = 1):
        if int(dim) != dim or dim < 1:
            raise ValueError(f"dim must be a positive integer, got {dim}")
        self.dim = int(dim)
        G = np.eye(self.dim) if metric is None else np.array(metric, dtype=float)
        if G.shape != (self.dim, self.dim):
            raise ValueError(f"metric must be {self.dim}x{self.dim}, got {G.shape}")
        if not np.array_equal(G, G.T):
            raise ValueError("metric must be symmetric")
        eig = np.linalg.eigvalsh(G)
        if eig.min() <= 0:
            raise ValueError(f"metric must be positive definite, eigenvalues {eig}")
        if orientation not in (1, -1):
            raise ValueError("orientation must be +1 or -1")
        self.metric = G
        self.metric.setflags(write=False)
        self.orientation = int(orientation)
        self.inv_metric = np.linalg.inv(G)
        self.sqrt_det = math.sqrt(np.linalg.det(G))
        self._gram = {}

    def __eq__(self, other):
        return (
            isinstance(other, FlatTorusDomain)
            and self.dim == other.dim
            and self.orientation == other.orientation
            and np.array_equal(self.metric, other.metric)
        )

    def __hash__(self):
        return hash((self.dim, self.orientation, self.metric.tobytes()))

    def __repr__(self):
        return f"FlatTorusDomain(dim={self.dim}, orientation={self.orientation})"

    def gram(self, p: int) -> np.ndarray:
        """Pointwise inner products <dx_I, dx_J> = det(G^{-1}[I, J])."""
        if p not in self._gram:
            sets = index_sets(self.dim, p)
            M = np.empty((len(sets), len(sets)))
            for a, I in enumerate(sets):
                for b, J in enumerate(sets):
                    M[a, b] = np.linalg.det(self.inv_metric[np.ix_(I, J)]) if p else 1.0
            self._gram[p] = M
        return self._gram[p]

    def star_matrix(self, p: int) -> np.ndarray:
        """Matrix S with star(dx_I) = sum_K S[K, I] dx_K."""
        n = self.dim
        src = index_sets(n, p)
        pos_out = _set_position(n, n - p)
        S = np.zeros((len(index_sets(n, n - p)), len(src)))
        gram = self.gram(p)
        scale = self.orientation * self.sqrt_det
        for a, Ip in enumerate(src):
            comp = tuple(i for i in range(n) if i not in Ip)
            eps = _perm_sign(Ip + comp)
            for b in range(len(src)):
                S[pos_out[comp], b] = scale * eps * gram[a, b]
        return S

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "metric": [float(v) for v in self.metric.ravel()],
            "orientation": self.orientation,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FlatTorusDomain":
        n = int(obj["dim"])
        metric = obj.get("metric")
        G = None if metric is None else np.array(metric, dtype=float).reshape(n, n)
        return cls(n, G, int(obj.get("orientation", 1)))


def _box_shape(n: int, bw: int) -> tuple[int, ...]:
    return (2 * bw + 1,) * n


def _freq_grids(n: int, bw: int) -> list[np.ndarray]:
    """Broadcastable integer frequency arrays, one per axis."""
    k = np.arange(-bw, bw + 1)
    out = []
    for j in range(n):
        shape = [1] * n
        shape[j] = 2 * bw + 1
        out.append(k.reshape(shape))
    return out


def _pad(coef: np.ndarray, bw: int, new_bw: int) -> np.ndarray:
    if new_bw == bw:
        return coef
    d = new_bw - bw
    width = [(0, 0)] + [(d, d)] * (coef.ndim - 1)
    return np.pad(coef, width)


def _support_box(a: np.ndarray) -> tuple[slice, ...]:
    nz = np.argwhere(a != 0)
    lo = nz.min(axis=0)
    hi = nz.max(axis=0) + 1
    return tuple(slice(int(l), int(h)) for l, h in zip(lo, hi))


def _conv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Full linear convolution, computed on the nonzero bounding boxes."""
    if a.size == 1:
        return a.reshape(()) * b
    if b.size == 1:
        return b.reshape(()) * a
    out = np.zeros(tuple(x + y - 1 for x, y in zip(a.shape, b.shape)), dtype=complex)
    if not a.any() or not b.any():
        return out
    sa, sb = _support_box(a), _support_box(b)
    ca, cb = a[sa], b[sb]
    if ca.size == 1 or cb.size == 1:
        piece = ca * cb
    else:
        method = "direct" if ca.size * cb.size <= DIRECT_CONV_LIMIT else "fft"
        piece = signal.convolve(ca, cb, mode="full", method=method)
    region = tuple(slice(x.start + y.start, x.start + y.start + p)
                   for x, y, p in zip(sa, sb, piece.shape))
    out[region] = piece
    return out


class TrigForm:
    """A trigonometric-polynomial differential form.

    Represents sum_{k, I} c_{k,I} exp(2 pi i <k, x>) dx_I with I increasing.
    Instances are immutable; arithmetic returns new forms.
    """

    __slots__ = ("domain", "degree", "bw", "coef", "real")

    def __init__(self, domain: FlatTorusDomain, degree: int, coef=None, bw: int = 0,
                 real: bool = False, check: bool = True):
        n = domain.dim
        if degree < 0:
            raise DegreeError(f"negative degree {degree}")
        nsets = len(index_sets(n, degree))
        if coef is None:
            coef = np.zeros((nsets,) + _box_shape(n, 0), dtype=complex)
            bw = 0
        coef = np.asarray(coef, dtype=complex)
        if coef.shape != (nsets,) + _box_shape(n, bw):
            raise ValueError(f"coefficient shape {coef.shape} does not match degree/bandwidth")
        self.domain = domain
        self.degree = degree
        self.coef, self.bw = _trim(coef, bw)
        self.coef.setflags(write=False)
        self.real = bool(real)
        if check and self.real and not self.is_conjugate_symmetric(1e-9):
            raise ValueError("form flagged real violates c(-k) = conj(c(k))")

    # construction -------------------------------------------------------
    @classmethod
    def zero(cls, domain, degree):
        return cls(domain, degree, real=True)

    @classmethod
    def from_terms(cls, domain, degree, terms, real=None):
        """Build from {(k, I): c}; I may be unsorted (sign applied)."""
        n = domain.dim
        items = list(terms.items()) if isinstance(terms, dict) else list(terms)
        bw = max([max((abs(int(v)) for v in k), default=0) for (k, _), _ in items] or [0])
        coef = np.zeros((len(index_sets(n, degree)),) + _box_shape(n, bw), dtype=complex)
        pos = _set_position(n, degree)
        for (k, I), c in items:
            I = tuple(int(i) for i in I)
            k = tuple(int(v) for v in k)
            if len(k) != n or len(I) != degree:
                raise ValueError(f"bad term key {(k, I)}")
            if len(set(I)) != len(I) or any(i < 0 or i >= n for i in I):
                raise ValueError(f"bad index set {I}")
            sign = _perm_sign(I)
            coef[(pos[tuple(sorted(I))],) + tuple(v + bw for v in k)] += sign * c
        if real is None:
            form = cls(domain, degree, coef, bw, real=False)
            return form.with_real_flag(form.is_conjugate_symmetric(0.0))
        return cls(domain, degree, coef, bw, real=real)

    @classmethod
    def constant(cls, domain, value, index_set=()):
        """The constant form value * dx_I (a function when I is empty)."""
        k = (0,) * domain.dim
        real = complex(value).imag == 0
        return cls.from_terms(domain, len(index_set), {(k, tuple(index_set)): value}, real=real)

    def with_real_flag(self, real: bool) -> "TrigForm":
        return TrigForm(self.domain, self.degree, self.coef, self.bw, real=real)

    # inspection ---------------------------------------------------------
    @property
    def index_sets(self):
        return index_sets(self.domain.dim, self.degree)

    @property
    def terms(self) -> dict:
        """Nonzero coefficients keyed by (k, I)."""
        out = {}
        sets = self.index_sets
        nz = np.argwhere(self.coef != 0)
        for row in nz:
            s = int(row[0])
            k = tuple(int(v) - self.bw for v in row[1:])
            out[(k, sets[s])] = complex(self.coef[tuple(row)])
        return out

    def coefficient(self, k, I) -> complex:
        I = tuple(I)
        if any(abs(v) > self.bw for v in k) or I not in _set_position(self.domain.dim, self.degree):
            return 0j
        s = _set_position(self.domain.dim, self.degree)[I]
        return complex(self.coef[(s,) + tuple(v + self.bw for v in k)])

    def bandwidth(self) -> int:
        return self.bw

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.coef.size == 0 or float(np.abs(self.coef).max()) <= tol

    def max_abs(self) -> float:
        return float(np.abs(self.coef).max()) if self.coef.size else 0.0

    def is_conjugate_symmetric(self, tol: float = 0.0) -> bool:
        flipped = self.coef[(slice(None),) + (slice(None, None, -1),) * self.domain.dim]
        return float(np.abs(self.coef - flipped.conj()).max(initial=0.0)) <= tol

    def is_constant(self) -> bool:
        return self.bw == 0

    def padded(self, bw: int) -> np.ndarray:
        """Coefficient box padded (or cropped) to bandwidth bw."""
        if bw >= self.bw:
            return _pad(self.coef, self.bw, bw)
        d = self.bw - bw
        sl = (slice(None),) + (slice(d, d + 2 * bw + 1),) * self.domain.dim
        return self.coef[sl]

    def truncate(self, bw: int) -> "TrigForm":
        return TrigForm(self.domain, self.degree, self.padded(bw), bw, real=self.real, check=False)

    def chop(self, tol: float) -> "TrigForm":
        """Drop coefficients of modulus <= tol."""
        coef = np.where(np.abs(self.coef) <= tol, 0, self.coef)
        return TrigForm(self.domain, self.degree, coef, self.bw, real=self.real, check=False)

    def mean(self) -> "TrigForm":
        """The zero-frequency part."""
        return self.truncate(0)

    def conj(self) -> "TrigForm":
        flipped = self.coef[(slice(None),) + (slice(None, None, -1),) * self.domain.dim]
        return TrigForm(self.domain, self.degree, flipped.conj(), self.bw, real=self.real, check=False)

    def real_part(self) -> "TrigForm":
        return ((self + self.conj()) * 0.5).with_real_flag(True)

    # arithmetic ---------------------------------------------------------
    def _check_compatible(self, other):
        if not isinstance(other, TrigForm):
            raise TypeError(f"expected TrigForm, got {type(other).__name__}")
        if other.domain != self.domain:
            raise DomainError("forms live on different domains")

    def __add__(self, other):
        if isinstance(other, (int, float, complex)) and self.degree == 0:
            other = TrigForm.constant(self.domain, other)
        self._check_compatible(other)
        if other.degree != self.degree:
            raise DegreeError(f"cannot add degree {self.degree} and {other.degree}")
        bw = max(self.bw, other.bw)
        coef = self.padded(bw) + other.padded(bw)
        return TrigForm(self.domain, self.degree, coef, bw, real=self.real and other.real, check=False)

    __radd__ = __add__

    def __neg__(self):
        return TrigForm(self.domain, self.degree, -self.coef, self.bw, real=self.real, check=False)

    def __sub__(self, other):
        if isinstance(other, (int, float, complex)):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, TrigForm):
            return wedge(self, other)
        if isinstance(other, (int, float, complex, np.number)):
            real = self.real and complex(other).imag == 0
            return TrigForm(self.domain, self.degree, self.coef * other, self.bw, real=real, check=False)
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return self.__mul__(other)
        return NotImplemented

    def __truediv__(self, other):
        if isinstance(other, (int, float, complex, np.number)):
            return self * (1.0 / other)
        return NotImplemented

    def __repr__(self):
        return f"TrigForm(degree={self.degree}, bw={self.bw}, nterms={int(np.count_nonzero(self.coef))})"

    # serialization ------------------------------------------------------
    def to_json(self) -> dict:
        terms = []
        for (k, I), c in sorted(self.terms.items()):
            terms.append({"k": list(k), "I": list(I), "re": c.real, "im": c.imag})
        return {"degree": self.degree, "terms": terms}

    @classmethod
    def from_json(cls, obj: dict, domain: FlatTorusDomain) -> "TrigForm":
        terms = {}
        for t in obj.get("terms", []):
            key = (tuple(t["k"]), tuple(t["I"]))
            terms[key] = terms.get(key, 0) + complex(float(t.get("re", 0.0)), float(t.get("im", 0.0)))
        return cls.from_terms(domain, int(obj["degree"]), terms)


def _trim(coef: np.ndarray, bw: int) -> tuple[np.ndarray, int]:
    """Shrink the box while its outer shell is identically zero."""
    n = coef.ndim - 1
    if not coef.any():
        return np.zeros((coef.shape[0],) + (1,) * n, dtype=complex), 0
    absc = np.abs(coef).reshape(coef.shape[0], -1).max(axis=0).reshape(coef.shape[1:])
    idx = np.argwhere(absc > 0) - bw
    need = int(np.abs(idx).max())
    if need < bw:
        d = bw - need
        coef = coef[(slice(None),) + (slice(d, d + 2 * need + 1),) * n]
    return np.ascontiguousarray(coef), need


# basic constructors ---------------------------------------------------------

def exp_mode(domain, k, c=1.0, index_set=()) -> TrigForm:
    """c exp(2 pi i <k, x>) dx_I."""
    return TrigForm.from_terms(domain, len(index_set), {(tuple(k), tuple(index_set)): c}, real=False)


def cos_mode(domain, k, amp=1.0, index_set=()) -> TrigForm:
    """amp cos(2 pi <k, x>) dx_I."""
    k = tuple(k)
    if not any(k):
        return TrigForm.constant(domain, amp, index_set)
    mk = tuple(-v for v in k)
    return TrigForm.from_terms(domain, len(index_set),
                               {(k, tuple(index_set)): amp / 2, (mk, tuple(index_set)): amp / 2}, real=True)


def sin_mode(domain, k, amp=1.0, index_set=()) -> TrigForm:
    """amp sin(2 pi <k, x>) dx_I."""
    k = tuple(k)
    if not any(k):
        return TrigForm.zero(domain, len(index_set))
    mk = tuple(-v for v in k)
    return TrigForm.from_terms(domain, len(index_set),
                               {(k, tuple(index_set)): -0.5j * amp, (mk, tuple(index_set)): 0.5j * amp},
                               real=True)


def dx(domain, i: int) -> TrigForm:
    return TrigForm.constant(domain, 1.0, (i,))


def one_form(domain, coeffs) -> TrigForm:
    """Sum_i coeffs[i] dx_i; entries may be scalars or 0-forms."""
    out = TrigForm.zero(domain, 1)
    for i, c in enumerate(coeffs):
        if isinstance(c, TrigForm):
            out = out + c * dx(domain, i)
        elif c != 0:
            out = out + TrigForm.constant(domain, c, (i,))
    return out


def volume_coordinate(domain) -> TrigForm:
    """dx_1 ^ ... ^ dx_n."""
    return TrigForm.constant(domain, 1.0, tuple(range(domain.dim)))


# vector fields --------------------------------------------------------------

class TrigVectorField:
    """A vector field sum_j X^j d/dx_j with trigonometric components."""

    __slots__ = ("domain", "components")

    def __init__(self, components):
        components = tuple(components)
        if not components:
            raise ValueError("vector field needs components")
        domain = components[0].domain
        if len(components) != domain.dim:
            raise ValueError(f"expected {domain.dim} components, got {len(components)}")
        for c in components:
            if c.domain != domain:
                raise DomainError("components on different domains")
            if c.degree != 0:
                raise DegreeError("vector field components must be functions")
        self.domain = domain
        self.components = components

    @classmethod
    def constant(cls, domain, vec):
        return cls(TrigForm.constant(domain, float(v) if complex(v).imag == 0 else v) for v in vec)

    @classmethod
    def coordinate(cls, domain, i, scale=1.0):
        vec = [0.0] * domain.dim
        vec[i] = scale
        return cls.constant(domain, vec)

    @classmethod
    def zero(cls, domain):
        return cls.constant(domain, [0.0] * domain.dim)

    def bandwidth(self) -> int:
        return max(c.bw for c in self.components)

    def is_constant(self) -> bool:
        return self.bandwidth() == 0

    def constant_vector(self) -> np.ndarray:
        if not self.is_constant():
            raise ValueError("vector field is not constant")
        return np.array([c.coefficient((0,) * self.domain.dim, ()) for c in self.components])

    def __add__(self, other):
        return TrigVectorField(a + b for a, b in zip(self.components, other.components))

    def __sub__(self, other):
        return TrigVectorField(a - b for a, b in zip(self.components, other.components))

    def __neg__(self):
        return TrigVectorField(-a for a in self.components)

    def scale(self, f) -> "TrigVectorField":
        """Multiply by a scalar or a function."""
        if isinstance(f, TrigForm):
            return TrigVectorField(wedge(f, c) for c in self.components)
        return TrigVectorField(c * f for c in self.components)

    def to_json(self) -> list:
        return [c.to_json() for c in self.components]

    @classmethod
    def from_json(cls, obj, domain):
        return cls(TrigForm.from_json(c, domain) for c in obj)


# exterior calculus ----------------------------------------------------------

def wedge(a: TrigForm, b: TrigForm) -> TrigForm:
    """Exterior product, exact frequency convolution."""
    a._check_compatible(b)
    n = a.domain.dim
    p, q = a.degree, b.degree
    if p + q > n:
        raise DegreeError(f"wedge degree {p}+{q} exceeds dimension {n}")
    bw = a.bw + b.bw
    out = np.zeros((len(index_sets(n, p + q)),) + _box_shape(n, bw), dtype=complex)
    if a.coef.any() and b.coef.any():
        active_a = [s for s in range(a.coef.shape[0]) if a.coef[s].any()]
        active_b = {s for s in range(b.coef.shape[0]) if b.coef[s].any()}
        active_a = set(active_a)
        for sa, sb, so, sign in _wedge_table(n, p, q):
            if sa in active_a and sb in active_b:
                c = _conv(a.coef[sa], b.coef[sb])
                out[so] += c if sign > 0 else -c
    return TrigForm(a.domain, p + q, out, bw, real=a.real and b.real, check=False)


def ext_d(a: TrigForm) -> TrigForm:
    """Exterior derivative."""
    n = a.domain.dim
    p = a.degree
    if p >= n:
        return TrigForm.zero(a.domain, p + 1) if p == n else a
    ks = _freq_grids(n, a.bw)
    pos = _set_position(n, p + 1)
    out = np.zeros((len(index_sets(n, p + 1)),) + _box_shape(n, a.bw), dtype=complex)
    for s, I in enumerate(index_sets(n, p)):
        if not a.coef[s].any():
            continue
        for j in range(n):
            if j in I:
                continue
            K = tuple(sorted((j,) + I))
            sign = (-1) ** sum(1 for i in I if i < j)
            out[pos[K]] += sign * (1j * TWO_PI) * ks[j] * a.coef[s]
    return TrigForm(a.domain, p + 1, out, a.bw, real=a.real, check=False)


def interior(X: TrigVectorField, a: TrigForm) -> TrigForm:
    """Contraction of a form with a vector field (anti-derivation)."""
    if X.domain != a.domain:
        raise DomainError("vector field and form on different domains")
    if a.degree == 0:
        raise DegreeError("interior product of a 0-form is undefined here")
    n = a.domain.dim
    p = a.degree
    bw = a.bw + X.bandwidth()
    pos = _set_position(n, p - 1)
    out = np.zeros((len(index_sets(n, p - 1)),) + _box_shape(n, bw), dtype=complex)
    for s, I in enumerate(index_sets(n, p)):
        if not a.coef[s].any():
            continue
        for m, j in enumerate(I):
            comp = X.components[j]
            if not comp.coef.any():
                continue
            c = _pad(_conv(comp.coef[0], a.coef[s])[None], comp.bw + a.bw, bw)[0]
            rest = I[:m] + I[m + 1:]
            out[pos[rest]] += c if m % 2 == 0 else -c
    real = a.real and all(c.real for c in X.components)
    return TrigForm(a.domain, p - 1, out, bw, real=real, check=False)


def lie_derivative(X: TrigVectorField, a: TrigForm) -> TrigForm:
    """L_X a = i_X d a + d i_X a (with L_X f = i_X df on functions)."""
    if a.degree == a.domain.dim:
        return ext_d(interior(X, a))
    da = ext_d(a)
    if a.degree == 0:
        return interior(X, da)
    return interior(X, da) + ext_d(interior(X, a))


def hodge_star(a: TrigForm) -> TrigForm:
    n = a.domain.dim
    S = a.domain.star_matrix(a.degree)
    coef = np.tensordot(S, a.coef, axes=(1, 0))
    return TrigForm(a.domain, n - a.degree, coef, a.bw, real=a.real, check=False)


def l2_inner(a: TrigForm, b: TrigForm) -> complex:
    """Integral of a ^ *conj(b), computed by Parseval."""
    a._check_compatible(b)
    if a.degree != b.degree:
        raise DegreeError("l2_inner needs equal degrees")
    if a.coef.shape[0] == 0:
        return 0j
    bw = max(a.bw, b.bw)
    ca = a.padded(bw).reshape(a.coef.shape[0], -1)
    cb = b.padded(bw).reshape(b.coef.shape[0], -1)
    gram = a.domain.gram(a.degree)
    val = np.einsum("ik,ij,jk->", ca, gram, cb.conj())
    return complex(val * a.domain.sqrt_det)


def l2_norm(a: TrigForm) -> float:
    return math.sqrt(max(l2_inner(a, a).real, 0.0))


def integrate_top(a: TrigForm) -> complex:
    """Integral of a top-degree form over the oriented torus."""
    n = a.domain.dim
    if a.degree != n:
        raise DegreeError(f"integrate_top needs degree {n}, got {a.degree}")
    return a.domain.orientation * a.coefficient((0,) * n, tuple(range(n)))


# sampling -------------------------------------------------------------------

def default_grid(bw: int) -> int:
    return 4 * bw + 1


def sample(a: TrigForm, grid_res: int) -> np.ndarray:
    """Values of each coefficient on the uniform grid, shape (nsets, N, ..., N)."""
    n = a.domain.dim
    N = int(grid_res)
    if N < 2 * a.bw + 1:
        raise ValueError(f"grid_res {N} below Nyquist bound {2 * a.bw + 1}")
    arr = np.zeros((a.coef.shape[0],) + (N,) * n, dtype=complex)
    idx = np.arange(-a.bw, a.bw + 1) % N
    arr[(slice(None),) + np.ix_(*([idx] * n))] = a.coef
    axes = tuple(range(1, n + 1))
    return np.fft.ifftn(arr, axes=axes) * N ** n


def project(values: np.ndarray, cap: int) -> tuple[np.ndarray, float]:
    """Fourier coefficients |k| <= cap of grid samples, plus discarded tail L2 norm."""
    n = values.ndim - 1
    N = values.shape[1]
    if 2 * cap + 1 > N:
        raise ValueError(f"cap {cap} too large for grid {N}")
    axes = tuple(range(1, n + 1))
    full = np.fft.fftn(values, axes=axes) / N ** n
    idx = np.arange(-cap, cap + 1) % N
    kept = full[(slice(None),) + np.ix_(*([idx] * n))]
    tail = math.sqrt(max(float(np.sum(np.abs(full) ** 2) - np.sum(np.abs(kept) ** 2)), 0.0))
    return kept, tail


def grid_points(n: int, grid_res: int) -> np.ndarray:
    """Grid points in C order, shape (N^n, n)."""
    ax = np.arange(grid_res) / grid_res
    mesh = np.meshgrid(*([ax] * n), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def evaluate(a: TrigForm, points: np.ndarray) -> np.ndarray:
    """Coefficient values at arbitrary points, shape (nsets, P)."""
    n = a.domain.dim
    points = np.atleast_2d(points)
    k = np.arange(-a.bw, a.bw + 1)
    result = a.coef.reshape(a.coef.shape[0], *([2 * a.bw + 1] * n))
    nz = np.argwhere(result != 0)
    if len(nz) * 4 <= result.size:
        # few terms: sum the modes directly
        vals = np.zeros((result.shape[0], points.shape[0]), dtype=complex)
        if len(nz):
            E = np.exp(1j * TWO_PI * (points @ (nz[:, 1:] - a.bw).T))
            terms = E * result[tuple(nz.T)][None, :]
            for s in np.unique(nz[:, 0]):
                vals[s] = terms[:, nz[:, 0] == s].sum(axis=1)
        return vals
    # contract one axis at a time: result[s, k_1..k_n] -> values[s, P]
    E = np.exp(1j * TWO_PI * points[:, 0:1] * k[None, :])
    vals = np.einsum("s k ..., P k -> s P ...".replace(" ", ""), result, E)
    for j in range(1, n):
        E = np.exp(1j * TWO_PI * points[:, j:j + 1] * k[None, :])
        vals = np.einsum("sPk...,Pk->sP...", vals, E)
    return vals


def pointwise_norm_sq(a: TrigForm, grid_res: int) -> np.ndarray:
    """Grid values of *<a, a> (the squared metric norm of a)."""
    vals = sample(a, grid_res).reshape(a.coef.shape[0], -1)
    gram = a.domain.gram(a.degree)
    return np.einsum("ip,ij,jp->p", vals, gram, vals.conj()).real


def sup_norm_sq(a: TrigForm, grid_res: int | None = None) -> tuple[float, float]:
    """(grid maximum, l1-envelope bound) for sup_x *<a, a>."""
    N = default_grid(a.bw) if grid_res is None else int(grid_res)
    if N < 2 * a.bw + 1:
        raise ValueError(f"grid_res {N} below Nyquist bound {2 * a.bw + 1}")
    if a.is_zero():
        return 0.0, 0.0
    lower = float(pointwise_norm_sq(a, N).max())
    gram = a.domain.gram(a.degree)
    c = a.coef.reshape(a.coef.shape[0], -1)
    per_mode = np.sqrt(np.maximum(np.einsum("ik,ij,jk->k", c, gram, c.conj()).real, 0.0))
    upper = float(per_mode.sum()) ** 2
    return lower, max(upper, lower)


class NearZeroDenominator(ValueError):
    """Raised when a pointwise division meets a near-vanishing denominator."""


def divide_pointwise(a: TrigForm, f: TrigForm, grid_res: int | None = None,
                     cap_bandwidth: int | None = None, threshold: float = 1e-8):
    """Quotient a / f by grid sampling and projection; returns (form, residual)."""
    a._check_compatible(f)
    if f.degree != 0:
        raise DegreeError("denominator must be a function")
    bw = max(a.bw, f.bw, 1)
    N = default_grid(bw) if grid_res is None else int(grid_res)
    cap = (N - 1) // 2 if cap_bandwidth is None else int(cap_bandwidth)
    fv = sample(f, N)[0]
    absf = np.abs(fv)
    m = int(np.argmin(absf))
    if absf.flat[m] <= threshold:
        idx = np.unravel_index(m, fv.shape)
        point = tuple(i / N for i in idx)
        raise NearZeroDenominator(
            f"denominator nearly vanishes at grid point {point} (|f| = {absf.flat[m]:.3e})")
    coef, _ = project(sample(a, N) / fv[None], cap)
    out = TrigForm(a.domain, a.degree, coef, cap, real=a.real and f.real, check=False)
    if out.real:
        out = out.real_part()
    residual = l2_norm(wedge(f, out) - a)
    return out, residual


# complex structures ---------------------------------------------------------

class ComplexStructure:
    """A constant complex structure J on the tangent space of an even torus."""

    def __init__(self, domain: FlatTorusDomain, J):
        J = np.array(J, dtype=float)
        n = domain.dim
        if n % 2:
            raise ValueError("complex structure needs an even dimension")
        if J.shape != (n, n):
            raise ValueError(f"J must be {n}x{n}")
        if np.abs(J @ J + np.eye(n)).max() > 1e-12:
            raise ValueError("J^2 != -I")
        G = domain.metric
        if np.abs(J.T @ G @ J - G).max() > 1e-12:
            raise ValueError("J is not compatible with the metric")
        self.domain = domain
        self.matrix = J
        self.matrix.setflags(write=False)

    @classmethod
    def standard(cls, domain):
        """J d/dx_j = d/dy_j for coordinates ordered (x_1, y_1, x_2, y_2, ...)."""
        n = domain.dim
        J = np.zeros((n, n))
        for j in range(0, n, 2):
            J[j + 1, j] = 1.0
            J[j, j + 1] = -1.0
        return cls(domain, J)

    def kahler_form(self) -> TrigForm:
        """omega(u, v) = g(Ju, v) as a constant 2-form."""
        n = self.domain.dim
        W = (self.domain.metric @ self.matrix).T  # W[u, v] = g(J e_u, e_v)
        terms = {}
        for i, j in index_sets(n, 2):
            if W[i, j] != 0:
                terms[((0,) * n, (i, j))] = W[i, j]
        return TrigForm.from_terms(self.domain, 2, terms, real=True)


def apply_J(a: TrigForm, J: ComplexStructure) -> TrigForm:
    """(J alpha)(V) = -alpha(JV) on 1-forms, identity on functions."""
    if J.domain != a.domain:
        raise DomainError("complex structure on a different domain")
    if a.degree == 0:
        return a
    if a.degree != 1:
        raise DegreeError("apply_J supports degrees 0 and 1 only")
    M = -J.matrix.T
    coef = np.tensordot(M, a.coef, axes=(1, 0))
    return TrigForm(a.domain, 1, coef, a.bw, real=a.real, check=False)


def apply_J_algebra(a: TrigForm, J: ComplexStructure, inverse: bool = False) -> TrigForm:
    """J extended to all degrees as the pullback by -J (an algebra automorphism).

    ``inverse`` applies J^-1, the pullback by -J^-1 = J.
    """
    if J.domain != a.domain:
        raise DomainError("complex structure on a different domain")
    if a.degree == 0:
        return a
    A = J.matrix if inverse else -J.matrix
    sets = index_sets(a.domain.dim, a.degree)
    M = np.array([[np.linalg.det(A[np.ix_(I, K)]) for I in sets] for K in sets])
    M[np.abs(M) < 1e-15] = 0.0
    coef = np.tensordot(M, a.coef, axes=(1, 0))
    return TrigForm(a.domain, a.degree, coef, a.bw, real=a.real, check=False)


def apply_J_field(X: TrigVectorField, J: ComplexStructure) -> TrigVectorField:
    comps = []
    for i in range(X.domain.dim):
        acc = TrigForm.zero(X.domain, 0)
        for j in range(X.domain.dim):
            if J.matrix[i, j] != 0:
                acc = acc + X.components[j] * float(J.matrix[i, j])
        comps.append(acc)
    return TrigVectorField(comps)


def d_c(f: TrigForm, J: ComplexStructure) -> TrigForm:
    """d^c f = -J df on functions."""
    if f.degree != 0:
        raise DegreeError("d_c defined here on functions")
    return -apply_J(ext_d(f), J)


# maps and pullbacks ---------------------------------------------------------

@dataclass(frozen=True)
class AffineMap:
    """x -> A x + v with A an integer matrix (a torus endomorphism)."""

    A: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        A = np.array(self.A)
        if not np.array_equal(A, np.round(A)):
            raise ValueError("affine torus maps need an integer linear part")

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n, dtype=int), np.zeros(n))

    @classmethod
    def translation(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(np.eye(len(v), dtype=int), v)


@dataclass(frozen=True)
class DisplacementMap:
    """x -> x + shift + D(x) with D a trigonometric displacement field."""

    displacement: TrigVectorField
    shift: np.ndarray | None = None

    def sample(self, grid_res):
        """Image points and Jacobians on the grid."""
        D = self.displacement
        n = D.domain.dim
        pts = grid_points(n, grid_res)
        disp = np.stack([sample(c, grid_res)[0].ravel() for c in D.components], axis=1).real
        img = pts + disp + (0.0 if self.shift is None else np.asarray(self.shift))
        jac = np.zeros((pts.shape[0], n, n))
        for i, c in enumerate(D.components):
            g = sample(ext_d(c), grid_res).reshape(n, -1).real
            jac[:, i, :] = g.T
        jac += np.eye(n)[None]
        return img, jac

    def max_displacement(self) -> float:
        return max(sup_norm_sq_scalar(c) for c in self.displacement.components)

    def bandwidth(self) -> int:
        return self.displacement.bandwidth()


@dataclass(frozen=True)
class SampledMap:
    """A map known through grid samples of images and Jacobians."""

    grid_res: int
    images: np.ndarray
    jacobians: np.ndarray
    bandwidth_hint: int
    displacement_bound: float

    def sample(self, grid_res):
        if grid_res != self.grid_res:
            raise ValueError("sampled map is tied to its own grid")
        return self.images, self.jacobians

    def max_displacement(self) -> float:
        return self.displacement_bound

    def bandwidth(self) -> int:
        return self.bandwidth_hint


def sup_norm_sq_scalar(f: TrigForm) -> float:
    """l1 bound on sup |f|."""
    return float(np.abs(f.coef).sum())


def _pullback_affine(a: TrigForm, phi: AffineMap) -> TrigForm:
    n = a.domain.dim
    A = np.array(phi.A, dtype=int)
    v = np.asarray(phi.shift, dtype=float)
    p = a.degree
    terms: dict = {}
    sets_out = index_sets(n, p)
    minors = np.zeros((len(index_sets(n, p)), len(sets_out)))
    for s, I in enumerate(index_sets(n, p)):
        for t, K in enumerate(sets_out):
            minors[s, t] = round(np.linalg.det(A[np.ix_(I, K)])) if p else 1.0
    for (k, I), c in a.terms.items():
        s = _set_position(n, p)[I]
        knew = tuple(int(x) for x in A.T @ np.array(k))
        phase = np.exp(1j * TWO_PI * float(np.dot(k, v)))
        for t, K in enumerate(sets_out):
            if minors[s, t]:
                key = (knew, K)
                terms[key] = terms.get(key, 0) + c * phase * minors[s, t]
    return TrigForm.from_terms(a.domain, p, terms, real=a.real)


def pullback_graph(a: TrigForm, phi, grid_res: int | None = None, cap: int | None = None):
    """Pullback of a form; returns (form, projection residual)."""
    if isinstance(phi, AffineMap):
        return _pullback_affine(a, phi), 0.0
    n = a.domain.dim
    bw_map = phi.bandwidth()
    est = a.bw + int(math.ceil((TWO_PI * a.bw * phi.max_displacement() + 1) * bw_map)) + bw_map * a.degree
    N = default_grid(max(est, 1)) if grid_res is None else int(grid_res)
    if 2 * est + 1 > N:
        raise ValueError(
            f"displacement too large for grid {N}: estimated bandwidth {est} exceeds {(N - 1) // 2}")
    cap = (N - 1) // 2 if cap is None else int(cap)
    img, jac = phi.sample(N)
    vals = evaluate(a, img)
    p = a.degree
    sets = index_sets(n, p)
    out = np.zeros((len(sets), img.shape[0]), dtype=complex)
    for s, I in enumerate(sets):
        for t, K in enumerate(sets):
            minor = np.linalg.det(jac[:, I][:, :, K]) if p else 1.0
            out[t] += vals[s] * minor
    coef, tail = project(out.reshape((len(sets),) + (N,) * n), cap)
    res = TrigForm(a.domain, p, coef, cap, real=False, check=False)
    if a.real:
        res = res.real_part()
    return res, tail
