"""End-to-end denoising runs: 3SD, plain K-SVD and the PCA baseline."""

from __future__ import annotations

import contextlib
import csv
import io
import json
import logging
import math
import os
import shutil
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import special

from sparse3sd.dictionary_learning import LearnConfig, LearnReport, ksvd_learn, serialize_dictionary
from sparse3sd.image_patches import Image, PatchMatrix, aggregate_patches, extract_patches, save_image
from sparse3sd.metrics import MetricReport, evaluate
from sparse3sd.noise import NoiseSpec, apply_noise
from sparse3sd.pca import pca_reconstruct, pca_select_count, svd_decompose
from sparse3sd.sparse_coding import CoefficientMatrix, Dictionary, default_epsilon, reconstruct
from sparse3sd.subspace import (
    MODE_ESTIMATORS,
    SubspaceSelection,
    atom_frequencies,
    frequency_permutation,
    reconstruct_principal,
    select_subspace,
    write_histogram_csv,
)

logger = logging.getLogger(__name__)

METHODS = ("3sd", "ksvd", "pca")
_METHOD_ALIASES = {"ksvd_only": "ksvd", "3SD": "3sd"}

MANIFEST_NAME = "manifest.json"
HISTOGRAM_NAME = "histogram.csv"
DICTIONARY_NAME = "dictionary.ssd1"


class PipelineError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    method: str = "3sd"
    patch_side: int = 8
    stride: int = 1
    remove_dc: bool = True
    atom_count: int = 256
    iterations: int = 10
    sigma: float | None = None
    gain: float = 1.0
    estimate_sigma: bool = False
    max_sparsity: int | None = None
    fixed_p: int | None = None
    fixed_fstar: int | None = None
    smoothing_window: int = 1
    mode_estimator: str = "kde"
    energy_fraction: float = 0.9
    init: str = "overcomplete_dct"
    homomorphic: bool = False
    noise: NoiseSpec | None = None
    compare: bool = False
    seed: int = 0
    workers: int = 1
    ssim_window: str = "sliding"
    image_format: str = "png"
    out_dir: str | None = None

    def __post_init__(self):
        self.method = _METHOD_ALIASES.get(self.method, self.method)
        if isinstance(self.noise, dict):
            self.noise = NoiseSpec(**self.noise)
        self.validate()

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.patch_side < 1 or self.stride < 1:
            raise ValueError("patch_side and stride must be >= 1")
        if self.atom_count < self.patch_side ** 2:
            raise ValueError("atom_count must be at least patch_side**2")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.gain <= 0:
            raise ValueError("gain must be positive")
        if self.fixed_p is not None and self.fixed_fstar is not None:
            raise ValueError("give at most one of fixed_p and fixed_fstar")
        if self.mode_estimator not in MODE_ESTIMATORS:
            raise ValueError(f"mode_estimator must be one of {MODE_ESTIMATORS}")
        if not 0 < self.energy_fraction <= 1:
            raise ValueError("energy_fraction must lie in (0, 1]")
        if self.image_format not in ("png", "pgm"):
            raise ValueError("image_format must be png or pgm")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = None if self.noise is None else self.noise.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def learn_config(self, epsilon: float) -> LearnConfig:
        return LearnConfig(
            atom_count=self.atom_count,
            iterations=self.iterations,
            epsilon=epsilon,
            max_sparsity=self.max_sparsity,
            init=self.init,
            seed=self.seed,
            workers=self.workers,
        )


def estimate_noise_sigma(img: Image) -> float:
    """Robust noise level: median absolute Haar diagonal detail / 0.6745."""
    a = img.pixels
    a = a[: a.shape[0] // 2 * 2, : a.shape[1] // 2 * 2]
    hh = (a[0::2, 0::2] - a[0::2, 1::2] - a[1::2, 0::2] + a[1::2, 1::2]) / 2.0
    return float(np.median(np.abs(hh)) / 0.6745)


@dataclass
class _Domain:
    """Forward/inverse intensity transform in which denoising happens."""

    name: str
    bias: float = 0.0

    def forward(self, img: Image) -> Image:
        if self.name == "direct":
            return img
        return Image(np.log1p(np.maximum(img.pixels, 0.0)), math.log1p(img.max_value))

    def inverse(self, img: Image, max_value: float) -> Image:
        if self.name == "direct":
            return img
        return Image(np.expm1(img.pixels - self.bias), max_value)


def _domain(cfg: PipelineConfig) -> _Domain:
    if not cfg.homomorphic:
        return _Domain("direct")
    looks = cfg.noise.looks if cfg.noise is not None and cfg.noise.kind == "speckle" else None
    # E[log v] for v ~ Gamma(L, 1/L)
    bias = float(special.digamma(looks) - math.log(looks)) if looks else 0.0
    return _Domain("homomorphic", bias)


def resolve_sigma(work: Image, cfg: PipelineConfig, domain: _Domain) -> tuple[float, str]:
    """Noise standard deviation in the working domain and where it came from."""
    noise = cfg.noise
    if cfg.sigma is not None:
        return float(cfg.sigma), "config"
    if noise is not None and noise.kind == "awgn" and domain.name == "direct":
        return float(noise.sigma), "noise_spec"
    if noise is not None and noise.kind == "speckle":
        L = noise.looks
        if domain.name == "homomorphic":
            return float(math.sqrt(special.polygamma(1, L))), "speckle_log_variance"
        # x = s v with E[v] = 1, Var[v] = 1/L  =>  E[(x - s)^2] = E[x^2] / (L + 1)
        return float(math.sqrt(np.mean(work.pixels ** 2) / (L + 1))), "speckle_moments"
    if cfg.estimate_sigma:
        return estimate_noise_sigma(work), "mad_estimate"
    raise ValueError("noise level unknown: pass --sigma or --estimate-sigma")


@dataclass
class SparseModel:
    """Everything the sparse methods share: patches, dictionary, codes."""

    patches: PatchMatrix
    dictionary: Dictionary
    codes: CoefficientMatrix
    report: LearnReport
    sigma: float
    sigma_source: str
    epsilon: float
    domain: _Domain
    max_value: float


@dataclass
class _Timer:
    timings: dict = field(default_factory=dict)

    @contextlib.contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, exc) from exc
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


def learn_model(noisy: Image, cfg: PipelineConfig, timer: _Timer | None = None) -> SparseModel:
    """Patch extraction and K-SVD learning on the (possibly log-transformed) noisy image."""
    timer = timer or _Timer()
    domain = _domain(cfg)
    with timer.stage("extract_patches"):
        work = domain.forward(noisy)
        sigma, source = resolve_sigma(work, cfg, domain)
        patches = extract_patches(work, cfg.patch_side, cfg.stride, cfg.remove_dc)
    eps = default_epsilon(sigma, patches.signal_dim, cfg.gain)
    with timer.stage("ksvd_learn"):
        D, codes, report = ksvd_learn(patches, cfg.learn_config(eps))
    return SparseModel(patches, D, codes, report, sigma, source, eps, domain, noisy.max_value)


def _to_image(model: SparseModel, recon: np.ndarray) -> Image:
    p = model.patches
    work = aggregate_patches(recon, p.grid, p.dc_offsets)
    return model.domain.inverse(work, model.max_value)


def select_principal(model: SparseModel, cfg: PipelineConfig) -> SubspaceSelection:
    freqs = atom_frequencies(model.codes)
    if model.codes.nnz == 0 and cfg.fixed_p is None and cfg.fixed_fstar is None:
        # every patch is explained by its mean alone; any split reconstructs the same thing
        logger.warning("all sparse codes are empty; keeping every atom")
        return SubspaceSelection(frequency_permutation(freqs), 0, freqs.atom_count, cfg.smoothing_window,
                                 "empty_coding")
    return select_subspace(freqs, cfg.fixed_p, cfg.fixed_fstar, cfg.smoothing_window, cfg.mode_estimator)


def denoise_3sd(noisy: Image, cfg: PipelineConfig, model: SparseModel | None = None, timer=None):
    """Reconstruct from the atoms used at least as often as the histogram mode.

    Returns ``(image, info)`` where ``info`` holds the model and the selection.
    """
    timer = timer or _Timer()
    model = model or learn_model(noisy, cfg, timer)
    with timer.stage("select_threshold"):
        sel = select_principal(model, cfg)
    with timer.stage("reconstruct_principal"):
        recon = reconstruct_principal(model.dictionary, model.codes, sel)
    with timer.stage("aggregate_patches"):
        out = _to_image(model, recon)
    return out, {"model": model, "selection": sel, "timings": timer.timings}


def denoise_ksvd_only(noisy: Image, cfg: PipelineConfig, model: SparseModel | None = None, timer=None):
    """Reconstruct from the full dictionary and codes (no subspace split)."""
    timer = timer or _Timer()
    model = model or learn_model(noisy, cfg, timer)
    with timer.stage("reconstruct"):
        recon = reconstruct(model.dictionary, model.codes)
    with timer.stage("aggregate_patches"):
        out = _to_image(model, recon)
    return out, {"model": model, "timings": timer.timings}


def denoise_pca(noisy: Image, cfg: PipelineConfig, timer=None):
    """Project the patch matrix on its leading singular vectors.

    Uses ``cfg.fixed_p`` components when given, otherwise the smallest count
    holding ``cfg.energy_fraction`` of the energy.
    """
    timer = timer or _Timer()
    domain = _domain(cfg)
    with timer.stage("extract_patches"):
        work = domain.forward(noisy)
        patches = extract_patches(work, cfg.patch_side, cfg.stride, cfg.remove_dc)
    with timer.stage("svd_decompose"):
        svd = svd_decompose(patches)
    with timer.stage("pca_select_count"):
        if svd.rank == 0:
            P = 0
        elif cfg.fixed_p is not None:
            P = min(int(cfg.fixed_p), svd.rank)
        else:
            P = pca_select_count(svd, cfg.energy_fraction)
    with timer.stage("pca_reconstruct"):
        recon = pca_reconstruct(svd, P)
    with timer.stage("aggregate_patches"):
        out = domain.inverse(aggregate_patches(recon, patches.grid, patches.dc_offsets), noisy.max_value)
    info = {
        "principal_count": P,
        "rank": svd.rank,
        "energy_fraction": None if cfg.fixed_p is not None else cfg.energy_fraction,
        "timings": timer.timings,
    }
    return out, info


def simulate(clean: Image, noise: NoiseSpec) -> Image:
    return apply_noise(clean, noise)


@dataclass
class RunManifest:
    config: dict
    method: str
    input: str | None
    output_image: str
    noisy_image: str | None = None
    dictionary_path: str | None = None
    histogram_path: str | None = None
    selection: dict | None = None
    pca: dict | None = None
    sigma: float | None = None
    sigma_source: str | None = None
    epsilon: float | None = None
    domain: str = "direct"
    noise: dict | None = None
    metrics: dict = field(default_factory=dict)
    metrics_clamped: dict = field(default_factory=dict)
    learn_report: dict | None = None
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path) as fh:
            return cls(**json.load(fh))


def _selection_dict(sel: SubspaceSelection) -> dict:
    return {
        "threshold_freq": int(sel.threshold_freq),
        "principal_count": int(sel.principal_count),
        "atom_count": int(sel.atom_count),
        "smoothing_window": int(sel.smoothing_window),
        "estimator": sel.estimator,
        "principal_atoms": [int(k) for k in sel.principal_atoms],
    }


def _metric_rows(reference: Image, images: dict, window: str):
    exact = {m: evaluate(reference, im, window).to_dict() for m, im in images.items()}
    clamped = {m: evaluate(reference, im.quantized(), window).to_dict() for m, im in images.items()}
    return exact, clamped


def run_denoise(noisy: Image, cfg: PipelineConfig, reference: Image | None = None,
                input_path: str | None = None) -> tuple[Image, RunManifest]:
    """Run ``cfg.method`` and write image, manifest and side files to ``cfg.out_dir``.

    If ``cfg.noise`` is set, ``noisy`` is taken as the clean image: noise is
    simulated first and the clean image becomes the metric reference. On any
    failure the files written by this run are removed.
    """
    if cfg.out_dir is None:
        raise ValueError("out_dir is required")
    os.makedirs(cfg.out_dir, exist_ok=True)
    written: list[str] = []
    timer = _Timer()
    t_start = time.perf_counter()

    def out(name):
        path = os.path.join(cfg.out_dir, name)
        written.append(path)
        return path

    try:
        manifest = RunManifest(config=cfg.to_dict(), method=cfg.method, input=input_path,
                               output_image=f"denoised.{cfg.image_format}")
        if cfg.noise is not None:
            with timer.stage("simulate"):
                reference = noisy
                noisy = simulate(reference, cfg.noise)
                manifest.noise = cfg.noise.to_dict()
                manifest.noisy_image = f"noisy.{cfg.image_format}"
                save_image(noisy, out(manifest.noisy_image))
        images = {}
        comparing = cfg.compare and reference is not None
        if cfg.method in ("3sd", "ksvd") or comparing:
            model = learn_model(noisy, cfg, timer)
            manifest.sigma, manifest.sigma_source = model.sigma, model.sigma_source
            manifest.epsilon = float(model.epsilon)
            manifest.domain = model.domain.name
            manifest.learn_report = model.report.to_dict()
            with timer.stage("write_dictionary"):
                serialize_dictionary(model.dictionary, out(DICTIONARY_NAME))
                manifest.dictionary_path = DICTIONARY_NAME
                write_histogram_csv(atom_frequencies(model.codes), out(HISTOGRAM_NAME))
                manifest.histogram_path = HISTOGRAM_NAME
            if cfg.method == "3sd" or comparing:
                images["3sd"], info = denoise_3sd(noisy, cfg, model, timer)
                manifest.selection = _selection_dict(info["selection"])
            if cfg.method == "ksvd" or reference is not None:
                images["ksvd"], _ = denoise_ksvd_only(noisy, cfg, model, timer)
        if cfg.method == "pca" or comparing:
            images["pca"], info = denoise_pca(noisy, cfg, timer)
            info.pop("timings")
            manifest.pca = info
        result = images[cfg.method]
        with timer.stage("save_image"):
            save_image(result, out(manifest.output_image))
        if reference is not None:
            with timer.stage("metrics"):
                manifest.metrics, manifest.metrics_clamped = _metric_rows(reference, images, cfg.ssim_window)
        timer.timings["total"] = time.perf_counter() - t_start
        manifest.timings = {k: float(v) for k, v in timer.timings.items()}
        manifest.write(out(MANIFEST_NAME))
    except BaseException:
        for path in written:
            with contextlib.suppress(OSError):
                os.remove(path)
        raise
    return result, manifest


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return v


REPORT_FIELDS = ("run", "method", "psnr_db", "ssim", "P", "f_star", "time_s")


def _run_label(path) -> str:
    return os.path.basename(os.path.dirname(os.path.abspath(path))) or os.path.abspath(path)


def report(manifest_paths, out_dir=None) -> tuple[str, str, list[dict]]:
    """Comparison table over runs: one row per (run, evaluated method), PSNR descending.

    Returns ``(text_table, csv_text, rows)``. With ``out_dir`` the CSV and text
    are written there together with one frequency-histogram CSV per run.
    """
    paths = list(manifest_paths)
    if not paths:
        raise ValueError("report needs at least one manifest")
    rows = []
    for path in paths:
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing manifest {path}")
        m = RunManifest.read(path)
        label = _run_label(path)
        total = m.timings.get("total", float("nan"))
        for method, rep in sorted(m.metrics.items()):
            mr = MetricReport.from_dict(rep)
            P = fstar = None
            if method == "3sd" and m.selection:
                P, fstar = m.selection["principal_count"], m.selection["threshold_freq"]
            elif method == "ksvd" and m.selection:
                P = m.selection["atom_count"]
            elif method == "pca" and m.pca:
                P = m.pca["principal_count"]
            rows.append({"run": label, "method": method, "psnr_db": mr.psnr_db, "ssim": mr.ssim,
                         "P": P, "f_star": fstar, "time_s": total if method == m.method else None})
        if out_dir is not None and m.histogram_path:
            src = os.path.join(os.path.dirname(path), m.histogram_path)
            if os.path.exists(src):
                os.makedirs(out_dir, exist_ok=True)
                shutil.copyfile(src, os.path.join(out_dir, f"{label}_histogram.csv"))
    rows.sort(key=lambda r: -r["psnr_db"])

    def fmt(v, digits):
        if v is None:
            return ""
        if isinstance(v, float):
            return "inf" if math.isinf(v) else f"{v:.{digits}f}"
        return str(v)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for r in rows:
        w.writerow([_csv_cell(r[k]) for k in REPORT_FIELDS])
    csv_text = buf.getvalue()

    digits = {"psnr_db": 3, "ssim": 4, "time_s": 2}
    cells = [list(REPORT_FIELDS)] + [[fmt(r[k], digits.get(k, 0)) for k in REPORT_FIELDS] for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(REPORT_FIELDS))]
    lines = ["  ".join(c[i].rjust(widths[i]) if i > 1 else c[i].ljust(widths[i]) for i in range(len(c))).rstrip()
             for c in cells]
    lines.insert(1, "  ".join("-" * wd for wd in widths))
    text = "\n".join(lines) + "\n"
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
            fh.write(csv_text)
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write(text)
    return text, csv_text, rows


def read_report_csv(text: str) -> list[dict]:
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        out.append({
            "run": r["run"],
            "method": r["method"],
            "psnr_db": float(r["psnr_db"]),
            "ssim": float(r["ssim"]),
            "P": int(r["P"]) if r["P"] else None,
            "f_star": int(r["f_star"]) if r["f_star"] else None,
            "time_s": float(r["time_s"]) if r["time_s"] else None,
        })
    return out
