"""PCA / truncated-SVD signal subspace baseline on the patch matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sparse3sd.image_patches import PatchMatrix


@dataclass(frozen=True)
class SvdDecomposition:
    """Thin SVD X = U diag(s) V^T restricted to the numerical rank r."""

    left_basis: np.ndarray
    singular_values: np.ndarray
    right_basis: np.ndarray

    @property
    def rank(self) -> int:
        return self.singular_values.size

    @property
    def shape(self) -> tuple[int, int]:
        return self.left_basis.shape[0], self.right_basis.shape[0]


def svd_decompose(patches, rank_tolerance: float = 1e-10) -> SvdDecomposition:
    """SVD of the patch matrix, keeping singular values above ``rank_tolerance * s_1``."""
    X = patches.data if isinstance(patches, PatchMatrix) else np.asarray(patches, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a 2-D data matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("data matrix contains non-finite values")
    n, m = X.shape
    if X.size == 0 or not np.any(X):
        return SvdDecomposition(np.zeros((n, 0)), np.zeros(0), np.zeros((m, 0)))
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    r = int(np.count_nonzero(s > rank_tolerance * s[0]))
    return SvdDecomposition(U[:, :r].copy(), s[:r].copy(), Vt[:r].T.copy())


def pca_reconstruct(svd: SvdDecomposition, principal_count: int) -> np.ndarray:
    """Projection onto the first ``principal_count`` left singular vectors."""
    P = int(principal_count)
    if not 0 <= P <= svd.rank:
        raise ValueError(f"principal count {P} outside [0, {svd.rank}]")
    U, s, V = svd.left_basis[:, :P], svd.singular_values[:P], svd.right_basis[:, :P]
    return (U * s) @ V.T


def pca_select_count(svd: SvdDecomposition, energy_fraction: float = 0.9) -> int:
    """Smallest P whose leading singular values hold ``energy_fraction`` of the energy."""
    if not 0 < energy_fraction <= 1:
        raise ValueError("energy_fraction must lie in (0, 1]")
    if svd.rank < 1:
        raise ValueError("decomposition has rank 0")
    energy = np.cumsum(svd.singular_values ** 2)
    P = int(np.searchsorted(energy, energy_fraction * energy[-1], side="left")) + 1
    return min(P, svd.rank)
