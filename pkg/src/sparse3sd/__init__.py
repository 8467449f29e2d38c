"""Sparse signal subspace decomposition (3SD) for image denoising."""

from sparse3sd.image_patches import (
    Image,
    PatchGrid,
    PatchMatrix,
    aggregate_patches,
    extract_patches,
    load_image,
    save_image,
)
from sparse3sd.sparse_coding import (
    CoefficientMatrix,
    Dictionary,
    SparseCode,
    batch_encode,
    omp_encode,
    reconstruct,
)
from sparse3sd.dictionary_learning import (
    LearnConfig,
    LearnReport,
    deserialize_dictionary,
    init_dictionary,
    ksvd_learn,
    serialize_dictionary,
)
from sparse3sd.subspace import (
    AtomFrequencies,
    SubspaceSelection,
    atom_frequencies,
    frequency_permutation,
    reconstruct_principal,
    select_subspace,
    select_threshold,
    split_subspaces,
)
from sparse3sd.pca import SvdDecomposition, pca_reconstruct, pca_select_count, svd_decompose
from sparse3sd.noise import NoiseSpec, add_awgn, add_speckle, apply_noise
from sparse3sd.metrics import MetricReport, evaluate, psnr, ssim

__version__ = "0.1.0"
