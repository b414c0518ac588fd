"""Linear operators on bandwidth-truncated form spaces.

An operator acting on forms of degree p with frequencies |k|_inf <= B is
assembled by probing it with batched basis forms. Constant-coefficient
operators are frequency-diagonal and are stored as a stack of small blocks;
operators with coefficient bandwidth w couple frequencies up to distance w and
are stored as a sparse matrix.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .forms import FlatTorusDomain, TrigForm, index_sets


class BandwidthSpill(ValueError):
    """Raised when an operator maps the truncated space outside the target box."""


def frequencies(n: int, B: int) -> np.ndarray:
    """All k with |k|_inf <= B in C order, shape (F, n)."""
    ax = np.arange(-B, B + 1)
    mesh = np.meshgrid(*([ax] * n), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def form_to_vector(a: TrigForm, B: int) -> np.ndarray:
    if a.bw > B:
        raise BandwidthSpill(f"form bandwidth {a.bw} exceeds truncation {B}")
    return a.padded(B).reshape(-1).copy()


def vector_to_form(v: np.ndarray, domain: FlatTorusDomain, degree: int, B: int) -> TrigForm:
    nsets = len(index_sets(domain.dim, degree))
    coef = np.asarray(v, dtype=complex).reshape((nsets,) + (2 * B + 1,) * domain.dim)
    return TrigForm(domain, degree, coef, B, check=False)


@dataclass
class SpectralOperator:
    """Matrix of a linear operator between truncated form spaces.

    Vectors are flattened coefficient boxes (index set major, then frequency in
    C order). ``blocks`` is set for frequency-diagonal operators and has shape
    (F, target_sets, source_sets).
    """

    domain: FlatTorusDomain
    source_degree: int
    target_degree: int
    bandwidth: int
    target_bandwidth: int
    coupling: str
    matrix: sparse.csr_matrix
    blocks: np.ndarray | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def source_sets(self) -> int:
        return len(index_sets(self.domain.dim, self.source_degree))

    @property
    def target_sets(self) -> int:
        return len(index_sets(self.domain.dim, self.target_degree))

    def apply(self, a: TrigForm) -> TrigForm:
        v = self.matrix @ form_to_vector(a, self.bandwidth)
        return vector_to_form(v, self.domain, self.target_degree, self.target_bandwidth)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def compose(self, inner: "SpectralOperator") -> "SpectralOperator":
        """self o inner."""
        if inner.target_bandwidth != self.bandwidth or inner.target_degree != self.source_degree:
            raise ValueError("operators are not composable")
        blocks = None
        if self.blocks is not None and inner.blocks is not None:
            blocks = np.einsum("fij,fjk->fik", self.blocks, inner.blocks)
        return SpectralOperator(self.domain, inner.source_degree, self.target_degree, inner.bandwidth,
                                self.target_bandwidth,
                                "none" if blocks is not None else self.coupling,
                                (self.matrix @ inner.matrix).tocsr(), blocks,
                                name=f"{self.name}*{inner.name}")

    def operator_norm(self) -> float:
        if self.blocks is not None:
            if self.blocks.size == 0:
                return 0.0
            return float(np.linalg.svd(self.blocks, compute_uv=False).max(initial=0.0))
        M = self.dense()
        return float(np.linalg.norm(M, 2)) if M.size else 0.0


def assemble_linear(func, domain: FlatTorusDomain, source_degree: int, B: int, growth: int = 0,
                    target_bandwidth: int | None = None, spill_tol: float = 1e-12,
                    name: str = "") -> SpectralOperator:
    """Assemble a linear form operator by probing with batched basis forms.

    ``growth`` bounds how far the operator moves frequencies. Basis forms whose
    frequencies are congruent modulo 2*growth+1 are probed together, so their
    images never overlap.
    """
    n = domain.dim
    w = int(growth)
    TB = B + w if target_bandwidth is None else int(target_bandwidth)
    src_sets = len(index_sets(n, source_degree))
    side = 2 * B + 1
    tside = 2 * TB + 1
    period = 2 * w + 1
    kk = np.arange(-B, B + 1)
    rows, cols, vals = [], [], []
    target_degree = None
    for s in range(src_sets):
        for r in itertools.product(range(period), repeat=n):
            mask_axes = [((kk + B) % period == rj) for rj in r]
            if not all(m.any() for m in mask_axes):
                continue
            mask = np.ones((side,) * n, dtype=bool)
            for j, m in enumerate(mask_axes):
                shape = [1] * n
                shape[j] = side
                mask = mask & m.reshape(shape)
            coef = np.zeros((src_sets,) + (side,) * n, dtype=complex)
            coef[s][mask] = 1.0
            out = func(TrigForm(domain, source_degree, coef, B, check=False))
            if target_degree is None:
                target_degree = out.degree
            elif out.degree != target_degree:
                raise ValueError("operator changes target degree between probes")
            nz = np.argwhere(np.abs(out.coef) > 0)
            if nz.size == 0:
                continue
            kout = nz[:, 1:] - out.bw
            v = out.coef[tuple(nz.T)]
            outside = np.abs(kout).max(axis=1) > TB
            if outside.any():
                bad = np.abs(v) > spill_tol
                if (outside & bad).any():
                    i = int(np.argmax(outside & bad))
                    raise BandwidthSpill(
                        f"operator {name or '?'} spills to frequency {tuple(int(x) for x in kout[i])} "
                        f"beyond bandwidth {TB}")
                keep = ~outside
                nz, kout, v = nz[keep], kout[keep], v[keep]
            # recover the probed source frequency of every output entry
            m = ((kout + B - np.array(r)[None] + w) % period) - w
            ksrc = kout - m
            stray = np.abs(ksrc).max(axis=1, initial=0) > B
            if stray.any():
                if (np.abs(v[stray]) > spill_tol).any():
                    raise ValueError(f"operator {name or '?'} moves frequencies further than growth {w}")
                keep = ~stray
                nz, kout, v, ksrc = nz[keep], kout[keep], v[keep], ksrc[keep]
            src_flat = np.ravel_multi_index(tuple((ksrc + B).T), (side,) * n) if n else np.zeros(len(v), int)
            tgt_flat = np.ravel_multi_index(tuple((kout + TB).T), (tside,) * n)
            rows.append(nz[:, 0] * tside ** n + tgt_flat)
            cols.append(s * side ** n + src_flat)
            vals.append(v)
    if target_degree is None:
        target_degree = _probe_degree(func, domain, source_degree)
    tgt_sets = len(index_sets(n, target_degree))
    shape = (tgt_sets * tside ** n, src_sets * side ** n)
    if rows:
        M = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=shape).tocsr()
    else:
        M = sparse.csr_matrix(shape, dtype=complex)
    blocks = None
    if w == 0 and TB == B:
        blocks = _diagonal_blocks(M, src_sets, tgt_sets, side ** n)
    return SpectralOperator(domain, source_degree, target_degree, B, TB,
                            "none" if w == 0 else f"banded({w})", M, blocks, name=name)


def _probe_degree(func, domain, degree):
    return func(TrigForm.zero(domain, degree)).degree


def _diagonal_blocks(M: sparse.csr_matrix, src_sets: int, tgt_sets: int, F: int) -> np.ndarray:
    blocks = np.zeros((F, tgt_sets, src_sets), dtype=complex)
    C = M.tocoo()
    t, kt = np.divmod(C.row, F)
    s, ks = np.divmod(C.col, F)
    if (kt != ks).any():
        raise ValueError("operator declared frequency-diagonal couples frequencies")
    blocks[kt, t, s] = C.data
    return blocks


def block_ranks(blocks: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-frequency ranks and singular values of a block stack."""
    if blocks.shape[1] == 0 or blocks.shape[2] == 0:
        return np.zeros(blocks.shape[0], dtype=int), np.zeros((blocks.shape[0], 0))
    sv = np.linalg.svd(blocks, compute_uv=False)
    return (sv > threshold).sum(axis=1), sv


def block_null_basis(blocks: np.ndarray, threshold: float) -> list[np.ndarray]:
    """Orthonormal kernel basis of every block."""
    out = []
    for Bk in blocks:
        if Bk.shape[0] == 0:
            out.append(np.eye(Bk.shape[1], dtype=complex))
            continue
        _, sv, vh = np.linalg.svd(Bk)
        rank = int((sv > threshold).sum())
        out.append(vh[rank:].conj().T)
    return out


def lstsq_min_norm(op: SpectralOperator, rhs: TrigForm, rcond: float = 1e-12) -> tuple[TrigForm, TrigForm]:
    """Minimum-norm least-squares solution of op(x) = rhs; returns (x, rhs - op(x))."""
    n = op.domain.dim
    b = form_to_vector(rhs, op.target_bandwidth) if rhs.bw <= op.target_bandwidth else None
    if b is None:
        raise BandwidthSpill(f"right-hand side bandwidth {rhs.bw} exceeds {op.target_bandwidth}")
    side = 2 * op.bandwidth + 1
    F = side ** n
    if op.blocks is not None:
        bb = b.reshape(op.target_sets, F).T
        x = np.zeros((F, op.source_sets), dtype=complex)
        for f in range(F):
            Bk = op.blocks[f]
            if not bb[f].any() or Bk.size == 0:
                continue
            x[f] = np.linalg.lstsq(Bk, bb[f], rcond=rcond)[0]
        xv = x.T.reshape(-1)
    else:
        xv = np.linalg.lstsq(op.dense(), b, rcond=rcond)[0]
    sol = vector_to_form(xv, op.domain, op.source_degree, op.bandwidth)
    return sol, rhs - op.apply(sol)
