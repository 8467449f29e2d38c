"""Orthogonal Matching Pursuit sparse coding against a fixed dictionary."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from sparse3sd.image_patches import PatchMatrix

# Columns per vectorized OMP block. Fixed so results never depend on worker count.
BLOCK_SIZE = 1024

_NORM_TOL = 1e-9


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dictionary:
    """N x K matrix of unit-norm atoms, K >= N."""

    atoms: np.ndarray

    def __post_init__(self):
        D = np.asarray(self.atoms, dtype=np.float64)
        if D.ndim != 2:
            raise ValueError("dictionary atoms must be a 2-D array")
        n, k = D.shape
        if k < n:
            raise ValueError(f"dictionary has {k} atoms for signal dimension {n}; K >= N required")
        if not np.all(np.isfinite(D)):
            raise ValueError("dictionary contains non-finite entries")
        norms = np.linalg.norm(D, axis=0)
        bad = np.flatnonzero(np.abs(norms - 1.0) > _NORM_TOL)
        if bad.size:
            raise ValueError(f"atom {bad[0]} has norm {norms[bad[0]]!r}, expected 1")
        object.__setattr__(self, "atoms", _readonly(D.copy()))

    @classmethod
    def from_matrix(cls, M) -> "Dictionary":
        """Build a dictionary by normalizing the columns of ``M`` (no zero columns allowed)."""
        M = np.asarray(M, dtype=np.float64)
        norms = np.linalg.norm(M, axis=0)
        if np.any(norms == 0):
            raise ValueError("cannot normalize a zero column")
        return cls(M / norms)

    @property
    def signal_dim(self) -> int:
        return self.atoms.shape[0]

    @property
    def atom_count(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class SparseCode:
    """Support (ascending atom indices), coefficients and residual norm of one column."""

    indices: np.ndarray
    values: np.ndarray
    residual_norm: float

    def __len__(self):
        return len(self.indices)


class CoefficientMatrix:
    """K x M sparse code matrix A, stored column-compressed.

    Column m is the code of patch m; the support entries of each column are kept in
    ascending atom order. ``codes`` yields one :class:`SparseCode` per column and
    ``row(k)`` materializes the coefficient row of atom k.
    """

    def __init__(self, indptr, indices, values, atom_count: int, residual_norms=None):
        indptr = np.asarray(indptr, dtype=np.intp)
        indices = np.asarray(indices, dtype=np.intp)
        values = np.asarray(values, dtype=np.float64)
        if indptr.ndim != 1 or indptr.size < 1 or indptr[0] != 0 or np.any(np.diff(indptr) < 0):
            raise ValueError("invalid column pointer array")
        if indices.shape != values.shape or indptr[-1] != indices.size:
            raise ValueError("indices/values do not match the column pointers")
        if indices.size and (indices.min() < 0 or indices.max() >= atom_count):
            raise ValueError("atom index out of range")
        m = indptr.size - 1
        if residual_norms is None:
            residual_norms = np.full(m, np.nan)
        residual_norms = np.asarray(residual_norms, dtype=np.float64)
        if residual_norms.shape != (m,):
            raise ValueError("residual_norms must have one entry per column")
        cols = np.repeat(np.arange(m), np.diff(indptr))
        same = cols[1:] == cols[:-1]
        bad = np.flatnonzero(same & (np.diff(indices) <= 0))
        if bad.size:
            raise ValueError(f"column {cols[bad[0]]}: support must be strictly increasing")
        self.indptr = _readonly(indptr)
        self.indices = _readonly(indices)
        self.values = _readonly(values)
        self.residual_norms = _readonly(residual_norms)
        self.atom_count = int(atom_count)

    @classmethod
    def from_codes(cls, codes, atom_count: int) -> "CoefficientMatrix":
        codes = list(codes)
        indptr = np.zeros(len(codes) + 1, dtype=np.intp)
        indptr[1:] = np.cumsum([len(c.indices) for c in codes])
        idx = np.concatenate([np.asarray(c.indices, np.intp) for c in codes]) if codes else np.zeros(0, np.intp)
        val = np.concatenate([np.asarray(c.values, np.float64) for c in codes]) if codes else np.zeros(0)
        res = np.array([c.residual_norm for c in codes], dtype=np.float64)
        return cls(indptr, idx, val, atom_count, res)

    @classmethod
    def from_dense(cls, A, residual_norms=None) -> "CoefficientMatrix":
        csc = sp.csc_matrix(np.asarray(A, dtype=np.float64))
        csc.eliminate_zeros()
        csc.sort_indices()
        return cls(csc.indptr, csc.indices, csc.data, csc.shape[0], residual_norms)

    @property
    def column_count(self) -> int:
        return self.indptr.size - 1

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def __len__(self):
        return self.column_count

    def code(self, m: int) -> SparseCode:
        lo, hi = self.indptr[m], self.indptr[m + 1]
        return SparseCode(self.indices[lo:hi], self.values[lo:hi], float(self.residual_norms[m]))

    @property
    def codes(self) -> list[SparseCode]:
        return [self.code(m) for m in range(self.column_count)]

    def to_csc(self) -> sp.csc_matrix:
        return sp.csc_matrix(
            (self.values, self.indices, self.indptr), shape=(self.atom_count, self.column_count)
        )

    def to_dense(self) -> np.ndarray:
        return self.to_csc().toarray()

    def row(self, k: int) -> np.ndarray:
        """Dense coefficient row of atom ``k`` over all columns."""
        out = np.zeros(self.column_count)
        cols = np.repeat(np.arange(self.column_count), np.diff(self.indptr))
        hit = self.indices == k
        out[cols[hit]] = self.values[hit]
        return out

    def scaled(self, factor: float) -> "CoefficientMatrix":
        return CoefficientMatrix(self.indptr, self.indices, self.values * factor, self.atom_count)

    def masked(self, keep_atoms) -> "CoefficientMatrix":
        """Copy with every entry whose atom is not in ``keep_atoms`` dropped."""
        keep = np.zeros(self.atom_count, dtype=bool)
        keep[np.asarray(keep_atoms, dtype=np.intp)] = True
        hit = keep[self.indices]
        cols = np.repeat(np.arange(self.column_count), np.diff(self.indptr))
        indptr = np.zeros(self.column_count + 1, dtype=np.intp)
        indptr[1:] = np.cumsum(np.bincount(cols[hit], minlength=self.column_count))
        return CoefficientMatrix(indptr, self.indices[hit], self.values[hit], self.atom_count)


def default_epsilon(sigma: float, signal_dim: int, gain: float = 1.15) -> float:
    """Residual-norm tolerance g * sigma * sqrt(N)."""
    return gain * sigma * np.sqrt(signal_dim)


def _omp_block(D, X, epsilon, max_sparsity):
    """Vectorized OMP over the columns of X; every column follows the exact scalar steps."""
    n, K = D.shape
    B = X.shape[1]
    support = np.zeros((B, max_sparsity), dtype=np.intp)
    coefs = np.zeros((B, max_sparsity))
    count = np.zeros(B, dtype=np.intp)
    used = np.zeros((B, K), dtype=bool)
    R = X.copy()
    res = np.sqrt(np.einsum("ij,ij->j", X, X))
    active = res > epsilon
    for s in range(max_sparsity):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        C = np.abs(D.T @ R[:, idx])
        C[used[idx].T] = -1.0
        pick = np.argmax(C, axis=0)
        # nothing left to explain along any unused atom
        dead = C[pick, np.arange(idx.size)] <= 0.0
        if np.any(dead):
            active[idx[dead]] = False
            idx, pick = idx[~dead], pick[~dead]
            if idx.size == 0:
                break
        trial = support[idx, : s + 1].copy()
        trial[:, s] = pick
        A = np.moveaxis(D[:, trial], 0, 1)  # (b, n, s+1)
        Q, Rt = np.linalg.qr(A)
        diag = np.abs(np.diagonal(Rt, axis1=1, axis2=2))
        singular = diag.min(axis=1) <= 1e-12 * np.maximum(diag.max(axis=1), 1.0)
        if np.any(singular):
            active[idx[singular]] = False
            keep = ~singular
            idx, pick, trial, A, Q, Rt = idx[keep], pick[keep], trial[keep], A[keep], Q[keep], Rt[keep]
            if idx.size == 0:
                break
        x = X[:, idx].T[:, :, None]
        c = np.linalg.solve(Rt, np.matmul(np.swapaxes(Q, 1, 2), x))
        r = (x - np.matmul(A, c))[:, :, 0]
        new_res = np.sqrt(np.einsum("ij,ij->i", r, r))
        # least squares on a growing support cannot increase the residual
        assert np.all(new_res <= res[idx] * (1 + 1e-9) + 1e-12), "OMP residual increased"
        support[idx, s] = pick
        used[idx, pick] = True
        coefs[idx, : s + 1] = c[:, :, 0]
        count[idx] = s + 1
        R[:, idx] = r.T
        res[idx] = new_res
        active[idx] = new_res > epsilon
    return support, coefs, count, res


def _check_params(dictionary, epsilon, max_sparsity):
    n = dictionary.signal_dim
    if max_sparsity is None:
        max_sparsity = max(1, n // 2)
    if not (epsilon >= 0):
        raise ValueError("epsilon must be >= 0")
    if not (1 <= max_sparsity <= n):
        raise ValueError(f"max_sparsity must be in [1, {n}], got {max_sparsity}")
    return float(epsilon), int(max_sparsity)


def _pack(blocks, atom_count):
    supports, values, counts, res = [], [], [], []
    for support, coefs, count, r in blocks:
        live = np.arange(support.shape[1])[None, :] < count[:, None]
        order = np.argsort(np.where(live, support, atom_count), axis=1, kind="stable")
        supports.append(np.take_along_axis(support, order, axis=1)[live])
        values.append(np.take_along_axis(coefs, order, axis=1)[live])
        counts.append(count)
        res.append(r)
    counts = np.concatenate(counts) if counts else np.zeros(0, np.intp)
    indptr = np.zeros(counts.size + 1, dtype=np.intp)
    indptr[1:] = np.cumsum(counts)
    idx = np.concatenate(supports) if supports else np.zeros(0, np.intp)
    val = np.concatenate(values) if values else np.zeros(0)
    res = np.concatenate(res) if res else np.zeros(0)
    return CoefficientMatrix(indptr, idx, val, atom_count, res)


def omp_encode(dictionary: Dictionary, x, epsilon: float, max_sparsity: int | None = None) -> SparseCode:
    """Greedy OMP code of one vector.

    Atoms are picked by maximum absolute correlation with the residual (lowest
    index on ties) and the coefficients are re-fitted by least squares after every
    pick. Stops once the residual norm is <= ``epsilon`` or the support reaches
    ``max_sparsity`` (default N/2).
    """
    epsilon, max_sparsity = _check_params(dictionary, epsilon, max_sparsity)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dictionary.signal_dim,):
        raise ValueError(f"vector of shape {x.shape} does not match signal dimension {dictionary.signal_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input vector contains non-finite values")
    block = _omp_block(dictionary.atoms, x[:, None], epsilon, max_sparsity)
    return _pack([block], dictionary.atom_count).code(0)


def batch_encode(
    dictionary: Dictionary,
    patches,
    epsilon: float,
    max_sparsity: int | None = None,
    workers: int = 1,
) -> CoefficientMatrix:
    """OMP-code every column of ``patches`` (a PatchMatrix or an N x M array).

    Columns are processed in fixed-size blocks; ``workers`` > 1 runs blocks on a
    thread pool. The output is identical for any worker count.
    """
    epsilon, max_sparsity = _check_params(dictionary, epsilon, max_sparsity)
    X = patches.data if isinstance(patches, PatchMatrix) else np.asarray(patches, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != dictionary.signal_dim:
        raise ValueError(f"patch dimension {X.shape[0] if X.ndim == 2 else X.shape} "
                         f"does not match signal dimension {dictionary.signal_dim}")
    finite = np.all(np.isfinite(X), axis=0)
    if not np.all(finite):
        raise ValueError(f"column {int(np.flatnonzero(~finite)[0])}: non-finite values")
    D = dictionary.atoms
    starts = range(0, X.shape[1], BLOCK_SIZE)

    def run(lo):
        return _omp_block(D, X[:, lo : lo + BLOCK_SIZE], epsilon, max_sparsity)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(run, starts))
    else:
        blocks = [run(lo) for lo in starts]
    return _pack(blocks, dictionary.atom_count)


def reconstruct(dictionary, coeffs: CoefficientMatrix) -> np.ndarray:
    """Sparse product D @ A, returned as a dense N x M matrix."""
    D = dictionary.atoms if hasattr(dictionary, "atoms") else np.asarray(dictionary)
    if coeffs.atom_count != D.shape[1]:
        raise ValueError(f"codes refer to {coeffs.atom_count} atoms, dictionary has {D.shape[1]}")
    return np.asarray((coeffs.to_csc().T @ D.T).T)
