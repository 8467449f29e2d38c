"""Command line interface: ``simulate``, ``denoise`` and ``report``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from sparse3sd.image_patches import load_image, save_image
from sparse3sd.noise import NoiseSpec, apply_noise
from sparse3sd.pipeline import PipelineConfig, PipelineError, report, run_denoise

# CLI flag -> PipelineConfig field
_CONFIG_FLAGS = {
    "method": "method",
    "patch_side": "patch_side",
    "stride": "stride",
    "remove_dc": "remove_dc",
    "atoms": "atom_count",
    "iters": "iterations",
    "sigma": "sigma",
    "gain": "gain",
    "estimate_sigma": "estimate_sigma",
    "max_sparsity": "max_sparsity",
    "fixed_p": "fixed_p",
    "fixed_fstar": "fixed_fstar",
    "smoothing_window": "smoothing_window",
    "mode_estimator": "mode_estimator",
    "energy_fraction": "energy_fraction",
    "init": "init",
    "homomorphic": "homomorphic",
    "compare": "compare",
    "seed": "seed",
    "workers": "workers",
    "ssim_window": "ssim_window",
    "format": "image_format",
    "out": "out_dir",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparse3sd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="degrade a clean image with seeded noise")
    sim.add_argument("--input", required=True)
    sim.add_argument("--kind", choices=["awgn", "speckle"], required=True)
    sim.add_argument("--sigma", type=float, default=0.0)
    sim.add_argument("--looks", type=int, default=1)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--format", choices=["png", "pgm"], default="png")
    sim.add_argument("--out", required=True, help="output directory")

    den = sub.add_parser("denoise", help="denoise an image with 3SD, K-SVD or PCA")
    den.add_argument("--input", required=True)
    den.add_argument("--reference", help="clean image for PSNR/SSIM")
    den.add_argument("--config", help="JSON file whose keys mirror PipelineConfig")
    den.add_argument("--method", choices=["3sd", "ksvd", "pca"])
    den.add_argument("--patch-side", type=int)
    den.add_argument("--stride", type=int)
    den.add_argument("--remove-dc", action=argparse.BooleanOptionalAction, default=None)
    den.add_argument("--atoms", type=int)
    den.add_argument("--iters", type=int)
    den.add_argument("--sigma", type=float)
    den.add_argument("--gain", type=float)
    den.add_argument("--estimate-sigma", action="store_true", default=None,
                     help="estimate sigma by median absolute deviation")
    den.add_argument("--max-sparsity", type=int)
    den.add_argument("--fixed-p", type=int)
    den.add_argument("--fixed-fstar", type=int)
    den.add_argument("--smoothing-window", type=int, help="box width for the histogram estimator")
    den.add_argument("--mode-estimator", choices=["kde", "histogram"],
                     help="how the frequency mode is found (default kde)")
    den.add_argument("--energy-fraction", type=float)
    den.add_argument("--init", choices=["overcomplete_dct", "random_patches"])
    den.add_argument("--homomorphic", action="store_true", default=None)
    den.add_argument("--compare", action="store_true", default=None,
                     help="also evaluate the other methods (needs a reference)")
    den.add_argument("--seed", type=int)
    den.add_argument("--workers", type=int)
    den.add_argument("--ssim-window", choices=["global", "sliding"])
    den.add_argument("--format", choices=["png", "pgm"])
    den.add_argument("--out", help="output directory")
    den.add_argument("--simulate", choices=["awgn", "speckle"], dest="noise_kind",
                     help="treat --input as clean and add this noise first")
    den.add_argument("--noise-sigma", type=float, default=0.0)
    den.add_argument("--looks", type=int, default=1)
    den.add_argument("--noise-seed", type=int, default=0)

    rep = sub.add_parser("report", help="tabulate one or more run manifests")
    rep.add_argument("manifests", nargs="+")
    rep.add_argument("--out", help="directory for report.csv / report.txt and histograms")
    return parser


def config_from_args(args) -> PipelineConfig:
    values = {}
    if args.config:
        with open(args.config) as fh:
            values.update(json.load(fh))
    for flag, key in _CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if args.noise_kind is not None:
        values["noise"] = NoiseSpec(args.noise_kind, args.noise_sigma, args.looks, args.noise_seed).to_dict()
    return PipelineConfig.from_dict(values)


def _cmd_simulate(args) -> int:
    spec = NoiseSpec(args.kind, args.sigma, args.looks, args.seed)
    clean = load_image(args.input)
    noisy = apply_noise(clean, spec)
    os.makedirs(args.out, exist_ok=True)
    name = f"noisy.{args.format}"
    save_image(noisy, os.path.join(args.out, name))
    manifest = {"input": args.input, "output_image": name, "noise": spec.to_dict()}
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(os.path.join(args.out, name))
    return 0


def _cmd_denoise(args) -> int:
    cfg = config_from_args(args)
    if cfg.out_dir is None:
        raise SystemExit("denoise: --out (or out_dir in --config) is required")
    noisy = load_image(args.input)
    reference = load_image(args.reference) if args.reference else None
    _, manifest = run_denoise(noisy, cfg, reference, input_path=args.input)
    for method, m in sorted(manifest.metrics.items()):
        db = m["psnr_db"] if m["psnr_db"] == "inf" else f"{m['psnr_db']:.3f}"
        print(f"{method:5s} PSNR {db} dB  SSIM {m['ssim']:.4f}")
    if manifest.selection:
        print(f"f* = {manifest.selection['threshold_freq']}, P = {manifest.selection['principal_count']}")
    print(os.path.join(cfg.out_dir, manifest.output_image))
    return 0


def _cmd_report(args) -> int:
    text, _, _ = report(args.manifests, args.out)
    sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return {"simulate": _cmd_simulate, "denoise": _cmd_denoise, "report": _cmd_report}[args.command](args)
    except (PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
