"""PSNR and SSIM image quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from sparse3sd.image_patches import Image

SSIM_WINDOWS = ("global", "sliding")


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    mse: float
    ssim_window: str = "sliding"

    def to_dict(self) -> dict:
        return {
            "psnr_db": "inf" if math.isinf(self.psnr_db) else self.psnr_db,
            "ssim": self.ssim,
            "mse": self.mse,
            "ssim_window": self.ssim_window,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        p = d["psnr_db"]
        return cls(float("inf") if p == "inf" else float(p), float(d["ssim"]), float(d["mse"]),
                   d.get("ssim_window", "sliding"))


def _pair(reference, test):
    a = reference.pixels if isinstance(reference, Image) else np.asarray(reference, dtype=np.float64)
    b = test.pixels if isinstance(test, Image) else np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(reference, test) -> float:
    a, b = _pair(reference, test)
    return float(np.mean((a - b) ** 2))


def psnr(reference, test) -> float:
    """PSNR in dB, with the peak taken as the maximum of the reference image."""
    a, b = _pair(reference, test)
    err = float(np.mean((a - b) ** 2))
    if err == 0:
        return float("inf")
    peak = float(a.max())
    if peak <= 0:
        raise ValueError("reference image has no positive intensity")
    return 20.0 * math.log10(peak) - 10.0 * math.log10(err)


def _ssim_map(mx, my, vx, vy, cxy, c1, c2):
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def ssim(reference, test, window: str = "sliding", dynamic_range: float = 255.0,
         k1: float = 0.01, k2: float = 0.03, window_side: int = 8) -> float:
    """Structural similarity.

    ``window="global"`` evaluates the SSIM formula once with statistics over the
    whole image; ``"sliding"`` averages it over every ``window_side`` square
    window (stride 1). Variances and covariance are population moments.
    """
    a, b = _pair(reference, test)
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    if window == "global":
        mx, my = a.mean(), b.mean()
        vx, vy = np.mean(a * a) - mx * mx, np.mean(b * b) - my * my
        cxy = np.mean(a * b) - mx * my
        return float(_ssim_map(mx, my, vx, vy, cxy, c1, c2))
    if window != "sliding":
        raise ValueError(f"unknown SSIM window {window!r}")
    w = min(window_side, *a.shape)

    def wmean(x):
        v = np.lib.stride_tricks.sliding_window_view(x, (w, w))
        return v.mean(axis=(2, 3))

    mx, my = wmean(a), wmean(b)
    vx = wmean(a * a) - mx * mx
    vy = wmean(b * b) - my * my
    cxy = wmean(a * b) - mx * my
    return float(np.mean(_ssim_map(mx, my, vx, vy, cxy, c1, c2)))


def evaluate(reference, test, window: str = "sliding") -> MetricReport:
    return MetricReport(psnr(reference, test), ssim(reference, test, window), mse(reference, test), window)
