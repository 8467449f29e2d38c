"""K-SVD dictionary learning and the SSD1 dictionary file format."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from sparse3sd.image_patches import PatchMatrix
from sparse3sd.sparse_coding import CoefficientMatrix, Dictionary, batch_encode, reconstruct

logger = logging.getLogger(__name__)

DUPLICATE_THRESHOLD = 0.999

INIT_METHODS = ("overcomplete_dct", "random_patches")
UNUSED_ATOM_POLICIES = ("replace_with_worst_patch",)


@dataclass(frozen=True)
class LearnConfig:
    atom_count: int = 256
    iterations: int = 10
    epsilon: float = 0.0
    max_sparsity: int | None = None
    init: str = "overcomplete_dct"
    seed: int = 0
    unused_atom_policy: str = "replace_with_worst_patch"
    workers: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.atom_count < 1:
            raise ValueError("atom_count must be >= 1")
        if self.init not in INIT_METHODS:
            raise ValueError(f"unknown init {self.init!r}; expected one of {INIT_METHODS}")
        if self.unused_atom_policy not in UNUSED_ATOM_POLICIES:
            raise ValueError(f"unknown unused_atom_policy {self.unused_atom_policy!r}")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")


@dataclass
class LearnReport:
    """Per-iteration statistics of a K-SVD run.

    ``mean_residuals[t]`` is the mean patch residual norm of the OMP codes
    computed at the start of iteration ``t``; ``updated_residuals[t]`` is the same
    mean after that iteration's atom updates.
    """

    mean_residuals: list = field(default_factory=list)
    updated_residuals: list = field(default_factory=list)
    replacements: list = field(default_factory=list)
    max_norm_deviation: list = field(default_factory=list)
    atom_usage: np.ndarray | None = None
    final_mean_residual: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "mean_residuals": [float(v) for v in self.mean_residuals],
            "updated_residuals": [float(v) for v in self.updated_residuals],
            "replacements": [int(v) for v in self.replacements],
            "max_norm_deviation": [float(v) for v in self.max_norm_deviation],
            "atom_usage": [] if self.atom_usage is None else [int(v) for v in self.atom_usage],
            "final_mean_residual": float(self.final_mean_residual),
        }


def _dct_basis(n: int, k: int) -> np.ndarray:
    V = np.cos(np.outer(np.arange(n), np.arange(k)) * np.pi / k)
    V[:, 1:] -= V[:, 1:].mean(axis=0)
    return V / np.linalg.norm(V, axis=0)


def _dct_factors(n: int, K: int) -> tuple[int, int]:
    kc = int(np.ceil(np.sqrt(K)))
    for c in range(kc, K // max(n, 1) + 1):
        if K % c == 0 and K // c >= n:
            return K // c, c
    kc = max(kc, n)
    return max(int(np.ceil(K / kc)), n), kc


def overcomplete_dct(signal_dim: int, atom_count: int) -> np.ndarray:
    """Separable over-complete 2-D DCT frame for square patches of ``signal_dim`` pixels."""
    n = int(round(np.sqrt(signal_dim)))
    if n * n != signal_dim:
        raise ValueError("overcomplete_dct needs a square patch dimension")
    kr, kc = _dct_factors(n, atom_count)
    frame = np.kron(_dct_basis(n, kr), _dct_basis(n, kc))[:, :atom_count]
    return frame / np.linalg.norm(frame, axis=0)


def _random_unit(rng, n):
    while True:
        v = rng.standard_normal(n)
        nv = np.linalg.norm(v)
        if nv > 0:
            return v / nv


def _data(patches):
    return patches.data if isinstance(patches, PatchMatrix) else np.asarray(patches, dtype=np.float64)


def init_dictionary(patches, cfg: LearnConfig) -> Dictionary:
    """Initial dictionary: over-complete DCT or K seeded-random distinct patches."""
    X = _data(patches)
    n, m = X.shape
    K = cfg.atom_count
    if K < n:
        raise ValueError(f"atom_count {K} is smaller than the signal dimension {n}")
    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "overcomplete_dct":
        return Dictionary(overcomplete_dct(n, K))
    if m < K:
        raise ValueError(f"random_patches init needs at least {K} patches, got {m}")
    D = X[:, np.sort(rng.choice(m, size=K, replace=False))].copy()
    norms = np.linalg.norm(D, axis=0)
    for k in np.flatnonzero(norms == 0):
        D[:, k] = _random_unit(rng, n)
        norms[k] = 1.0
    return Dictionary(D / norms)


class _Learner:
    """Mutable state of one K-SVD run."""

    def __init__(self, X, D, cfg, rng):
        self.X = X
        self.D = D
        self.cfg = cfg
        self.rng = rng

    def _next_worst(self, R, taken):
        err = np.einsum("ij,ij->j", R, R)
        err[list(taken)] = -1.0
        m = int(np.argmax(err))
        taken.add(m)
        x = self.X[:, m]
        nx = np.linalg.norm(x)
        if err[m] <= 0 or nx == 0:
            return _random_unit(self.rng, self.X.shape[0])
        return x / nx

    def _retire(self, k, R, rows, taken):
        lo, hi = rows.indptr[k], rows.indptr[k + 1]
        if hi > lo:
            omega = rows.indices[lo:hi]
            R[:, omega] += np.outer(self.D[:, k], rows.data[lo:hi])
            rows.data[lo:hi] = 0.0
        self.D[:, k] = self._next_worst(R, taken)

    def update_atoms(self, codes: CoefficientMatrix):
        """Sequential rank-1 updates of every atom; returns (residual matrix, replacements)."""
        D = self.D
        R = self.X - reconstruct(D, codes)
        rows = codes.to_csc().tocsr()
        rows.sort_indices()
        rows.data = rows.data.copy()
        taken: set = set()
        replaced = 0
        for k in range(D.shape[1]):
            lo, hi = rows.indptr[k], rows.indptr[k + 1]
            if hi == lo:
                D[:, k] = self._next_worst(R, taken)
                replaced += 1
                continue
            omega = rows.indices[lo:hi]
            beta = rows.data[lo:hi]
            E = R[:, omega] + np.outer(D[:, k], beta)
            try:
                U, S, Vt = np.linalg.svd(E, full_matrices=False)
            except np.linalg.LinAlgError:
                logger.warning("SVD failed for atom %d; replacing it", k)
                R[:, omega] = E
                rows.data[lo:hi] = 0.0
                D[:, k] = self._next_worst(R, taken)
                replaced += 1
                continue
            d = U[:, 0]
            b = S[0] * Vt[0]
            if d[np.argmax(np.abs(d))] < 0:
                d, b = -d, -b
            new_err = E - np.outer(d, b)
            # rank-1 SVD fit is optimal for the fixed support
            old_fro = np.linalg.norm(E - np.outer(D[:, k], beta))
            assert np.linalg.norm(new_err) <= old_fro * (1 + 1e-9) + 1e-9, f"atom {k} update increased error"
            R[:, omega] = new_err
            D[:, k] = d
            rows.data[lo:hi] = b
        replaced += self._clear_duplicates(R, rows, taken)
        return R, replaced

    def _clear_duplicates(self, R, rows, taken):
        D = self.D
        replaced = 0
        for _ in range(D.shape[1]):
            G = np.abs(D.T @ D)
            np.fill_diagonal(G, 0.0)
            dup = np.flatnonzero(np.triu(G > DUPLICATE_THRESHOLD).any(axis=0))
            if dup.size == 0:
                break
            for k in dup:
                self._retire(k, R, rows, taken)
                replaced += 1
        return replaced


def _mean_norm(R):
    return float(np.mean(np.sqrt(np.einsum("ij,ij->j", R, R)))) if R.shape[1] else 0.0


def ksvd_learn(patches, cfg: LearnConfig, callback=None):
    """Learn a dictionary with K-SVD.

    Each iteration sparse-codes all patches with OMP, then updates the atoms one
    at a time in ascending index order: atom k and its coefficient row are
    replaced by the leading singular pair of the error matrix restricted to the
    patches that use atom k. Unused and near-duplicate atoms are replaced by the
    currently worst-represented patch.

    ``callback(iteration, atoms)``, if given, is called after every iteration
    with a copy of the current atom matrix.

    Returns:
        ``(dictionary, codes, report)`` where ``codes`` is a fresh OMP coding of
        the patches against the final dictionary.
    """
    X = _data(patches)
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValueError("no patches to learn from")
    if not np.all(np.isfinite(X)):
        raise ValueError("patches contain non-finite values")
    rng = np.random.default_rng(cfg.seed)
    D0 = init_dictionary(X, cfg)
    learner = _Learner(X, D0.atoms.copy(), cfg, rng)
    report = LearnReport()
    for it in range(cfg.iterations):
        codes = batch_encode(Dictionary(learner.D), X, cfg.epsilon, cfg.max_sparsity, workers=cfg.workers)
        report.mean_residuals.append(float(np.mean(codes.residual_norms)))
        R, replaced = learner.update_atoms(codes)
        report.updated_residuals.append(_mean_norm(R))
        report.replacements.append(replaced)
        report.max_norm_deviation.append(float(np.max(np.abs(np.linalg.norm(learner.D, axis=0) - 1.0))))
        if callback is not None:
            callback(it, learner.D.copy())
        logger.info(
            "ksvd iteration %d: coding residual %.4f, updated residual %.4f, %d atoms replaced",
            it + 1, report.mean_residuals[-1], report.updated_residuals[-1], replaced,
        )
    D = Dictionary(learner.D)
    codes = batch_encode(D, X, cfg.epsilon, cfg.max_sparsity, workers=cfg.workers)
    report.final_mean_residual = float(np.mean(codes.residual_norms))
    report.atom_usage = np.bincount(codes.indices, minlength=D.atom_count)
    return D, codes, report


_MAGIC = b"SSD1"
_MAX_DIM = 1 << 24


class DictionaryFileError(ValueError):
    pass


def serialize_dictionary(dictionary: Dictionary, path) -> None:
    """Write ``dictionary`` in the SSD1 format (little-endian, column-major float64)."""
    n, k = dictionary.atoms.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<II", n, k))
        fh.write(np.asarray(dictionary.atoms, dtype="<f8").tobytes(order="F"))


def deserialize_dictionary(path) -> Dictionary:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != _MAGIC:
        raise DictionaryFileError("not a dictionary file")
    n, k = struct.unpack("<II", blob[4:12])
    if n == 0 or k == 0 or n > _MAX_DIM or k > _MAX_DIM or n * k > _MAX_DIM * 16:
        raise DictionaryFileError(f"dictionary dimensions {n}x{k} out of range")
    need = 12 + 8 * n * k
    if len(blob) < need:
        raise DictionaryFileError(f"truncated dictionary file: {len(blob)} bytes, expected {need}")
    if len(blob) > need:
        raise DictionaryFileError("trailing bytes after dictionary payload")
    atoms = np.frombuffer(blob, dtype="<f8", count=n * k, offset=12).reshape((n, k), order="F")
    return Dictionary(atoms.astype(np.float64))
