"""Atom-frequency subspace decomposition of a learned dictionary.

Atoms are ranked by how many patch codes use them. The mode of the distribution
of non-zero usage counts sets a frequency threshold; atoms used at least that
often span the signal subspace, the rest the noise subspace. Reconstruction on
the signal subspace just drops the coefficients of noise atoms.

The mode is taken either from the unit-bin histogram (``"histogram"``) or from a
Gaussian kernel density estimate with Silverman's bandwidth (``"kde"``). With a
few hundred atoms spread over hundreds of distinct counts most histogram bins
hold one or two atoms, so the raw histogram mode is a noisy estimate.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.stats import gaussian_kde

from sparse3sd.sparse_coding import CoefficientMatrix, reconstruct


@dataclass(frozen=True)
class AtomFrequencies:
    freqs: np.ndarray
    total_columns: int

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=np.int64)
        if f.ndim != 1 or np.any(f < 0) or np.any(f > self.total_columns):
            raise ValueError("frequencies must lie in [0, total_columns]")
        f.setflags(write=False)
        object.__setattr__(self, "freqs", f)

    @property
    def atom_count(self) -> int:
        return self.freqs.size


@dataclass(frozen=True)
class SubspaceSelection:
    """Frequency ordering of atoms plus the split point between the subspaces."""

    permutation: np.ndarray
    threshold_freq: int
    principal_count: int
    smoothing_window: int = 1
    estimator: str = "histogram"

    def __post_init__(self):
        perm = np.asarray(self.permutation, dtype=np.intp)
        K = perm.size
        if K == 0 or not np.array_equal(np.sort(perm), np.arange(K)):
            raise ValueError("permutation must be a bijection on the atom indices")
        if not 1 <= self.principal_count <= K:
            raise ValueError(f"principal_count must be in [1, {K}], got {self.principal_count}")
        perm.setflags(write=False)
        object.__setattr__(self, "permutation", perm)

    @property
    def atom_count(self) -> int:
        return self.permutation.size

    @property
    def principal_atoms(self) -> np.ndarray:
        return self.permutation[: self.principal_count]

    @property
    def noise_atoms(self) -> np.ndarray:
        return self.permutation[self.principal_count :]


@dataclass(frozen=True)
class AtomSubset:
    """A subset of dictionary atoms together with their original indices."""

    atoms: np.ndarray
    indices: np.ndarray

    @property
    def atom_count(self) -> int:
        return self.indices.size

    def __len__(self):
        return self.atom_count


def atom_frequencies(coeffs: CoefficientMatrix) -> AtomFrequencies:
    """Count, for every atom, how many codes have it in their support."""
    freqs = np.bincount(coeffs.indices, minlength=coeffs.atom_count)
    return AtomFrequencies(freqs, coeffs.column_count)


def frequency_permutation(freqs: AtomFrequencies) -> np.ndarray:
    # stable sort on -f keeps ascending atom index among ties
    return np.argsort(-freqs.freqs, kind="stable")


def frequency_histogram(freqs: AtomFrequencies) -> tuple[np.ndarray, np.ndarray]:
    """Histogram (values, counts) of the non-zero frequencies, bin width 1, ascending."""
    values, counts = np.unique(freqs.freqs[freqs.freqs > 0], return_counts=True)
    return values, counts


MODE_ESTIMATORS = ("histogram", "kde")


def _histogram_mode(values, counts, smoothing_window):
    if smoothing_window == 1:
        return int(values[np.argmax(counts)])
    lo = int(values[0])
    dense = np.zeros(int(values[-1]) - lo + 1)
    dense[values - lo] = counts
    smooth = np.convolve(dense, np.ones(smoothing_window), mode="same")
    # the mode must be an attained frequency
    smooth[dense == 0] = -1.0
    return lo + int(np.argmax(smooth))


def _kde_mode(freqs):
    v = freqs[freqs > 0].astype(np.float64)
    grid = np.unique(v)
    if grid.size == 1:
        return int(grid[0])
    density = gaussian_kde(v, bw_method="silverman")(grid)
    return int(grid[np.argmax(density)])


def select_threshold(freqs: AtomFrequencies, smoothing_window: int = 1,
                     estimator: str = "histogram") -> tuple[int, int]:
    """Mode threshold.

    Returns ``(threshold_freq, principal_count)``: the mode of the non-zero
    usage counts (smaller value wins ties) and the number of atoms used at least
    that often. With the histogram estimator and ``smoothing_window`` w > 1 the
    unit-width histogram is first convolved with a centred box of odd width w.
    The ``"kde"`` estimator evaluates the density at every attained count.
    """
    if smoothing_window < 1 or smoothing_window % 2 == 0:
        raise ValueError("smoothing_window must be a positive odd integer")
    if estimator not in MODE_ESTIMATORS:
        raise ValueError(f"unknown mode estimator {estimator!r}; expected one of {MODE_ESTIMATORS}")
    f = freqs.freqs
    if not np.any(f > 0):
        raise ValueError("empty coding; no signal subspace")
    if estimator == "kde":
        f_star = _kde_mode(f)
    else:
        f_star = _histogram_mode(*frequency_histogram(freqs), smoothing_window)
    return f_star, int(np.count_nonzero(f >= f_star))


def select_subspace(
    freqs: AtomFrequencies,
    fixed_p: int | None = None,
    fixed_fstar: int | None = None,
    smoothing_window: int = 1,
    estimator: str = "histogram",
) -> SubspaceSelection:
    """Full selection: permutation plus automatic or overridden threshold."""
    perm = frequency_permutation(freqs)
    f = freqs.freqs
    if fixed_p is not None and fixed_fstar is not None:
        raise ValueError("give at most one of fixed_p and fixed_fstar")
    if fixed_p is not None:
        P = int(fixed_p)
        if not 1 <= P <= f.size:
            raise ValueError(f"fixed P must be in [1, {f.size}]")
        f_star = int(f[perm[P - 1]])
        estimator = "fixed_p"
    elif fixed_fstar is not None:
        f_star = int(fixed_fstar)
        P = int(np.count_nonzero(f >= f_star))
        if P < 1:
            raise ValueError(f"no atom has frequency >= {f_star}")
        estimator = "fixed_fstar"
    else:
        f_star, P = select_threshold(freqs, smoothing_window, estimator)
    return SubspaceSelection(perm, f_star, P, smoothing_window, estimator)


def _check(dictionary, sel):
    if sel.atom_count != dictionary.atom_count:
        raise ValueError(f"selection covers {sel.atom_count} atoms, dictionary has {dictionary.atom_count}")


def split_subspaces(dictionary, sel: SubspaceSelection) -> tuple[AtomSubset, AtomSubset]:
    """Split the atoms into the signal (first P in frequency order) and noise subsets."""
    _check(dictionary, sel)
    D = dictionary.atoms
    sig, noise = sel.principal_atoms, sel.noise_atoms
    return AtomSubset(D[:, sig], sig.copy()), AtomSubset(D[:, noise], noise.copy())


def reconstruct_principal(dictionary, coeffs: CoefficientMatrix, sel: SubspaceSelection) -> np.ndarray:
    """D @ A with every coefficient of a non-principal atom set to zero."""
    _check(dictionary, sel)
    if coeffs.atom_count != dictionary.atom_count:
        raise ValueError("codes and dictionary disagree on the atom count")
    return reconstruct(dictionary, coeffs.masked(sel.principal_atoms))


def reconstruct_noise(dictionary, coeffs: CoefficientMatrix, sel: SubspaceSelection) -> np.ndarray:
    """Complement of :func:`reconstruct_principal`: contribution of the noise atoms."""
    _check(dictionary, sel)
    return reconstruct(dictionary, coeffs.masked(sel.noise_atoms))


def histogram_csv(freqs: AtomFrequencies) -> str:
    """``frequency,count`` rows in ascending frequency."""
    values, counts = frequency_histogram(freqs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frequency", "count"])
    w.writerows(zip(values.tolist(), counts.tolist()))
    return buf.getvalue()


def write_histogram_csv(freqs: AtomFrequencies, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(histogram_csv(freqs))


def read_histogram_csv(path) -> list[tuple[int, int]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["frequency"]), int(r["count"])) for r in rows]
