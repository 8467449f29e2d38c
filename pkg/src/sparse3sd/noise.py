"""Seeded synthetic degradations.

All randomness comes from a Philox-4x64 counter-based generator keyed by the
seed. Gaussian deviates use the Box-Muller transform on consecutive pairs of
uniforms; Gamma(L, 1/L) speckle multipliers use Marsaglia-Tsang rejection
sampling driven by the same uniform / Box-Muller streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sparse3sd.image_patches import Image

NOISE_KINDS = ("awgn", "speckle")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    sigma: float = 0.0
    looks: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.looks < 1:
            raise ValueError("looks must be >= 1")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "looks": self.looks, "seed": self.seed}


def _generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) % (1 << 64)))


def _box_muller(rng: np.random.Generator, n: int) -> np.ndarray:
    pairs = (n + 1) // 2
    u = rng.random(2 * pairs)
    u1 = 1.0 - u[0::2]  # (0, 1]
    u2 = u[1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * pairs)
    z[0::2] = rad * np.cos(2.0 * np.pi * u2)
    z[1::2] = rad * np.sin(2.0 * np.pi * u2)
    return z[:n]


def standard_normal(seed: int, n: int) -> np.ndarray:
    return _box_muller(_generator(seed), n)


def gamma_multipliers(looks: int, seed: int, n: int) -> np.ndarray:
    """Gamma(shape=looks, scale=1/looks) deviates: mean 1, variance 1/looks."""
    rng = _generator(seed)
    d = looks - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(n)
    pending = np.arange(n)
    while pending.size:
        x = _box_muller(rng, pending.size)
        u = 1.0 - rng.random(pending.size)
        v = (1.0 + c * x) ** 3
        ok = v > 0
        logv = np.log(np.where(ok, v, 1.0))
        ok &= np.log(u) < 0.5 * x * x + d - d * v + d * logv
        out[pending[ok]] = d * v[ok]
        pending = pending[~ok]
    return out / looks


def add_awgn(img: Image, sigma: float, seed: int = 0) -> Image:
    """Add i.i.d. N(0, sigma^2) noise; the result is not clamped."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    noise = standard_normal(seed, img.pixels.size).reshape(img.shape)
    return img.with_pixels(img.pixels + sigma * noise)


def add_speckle(img: Image, looks: int = 1, seed: int = 0) -> Image:
    """Multiply every pixel by an independent Gamma(L, 1/L) deviate."""
    if looks < 1:
        raise ValueError("looks must be >= 1")
    v = gamma_multipliers(int(looks), seed, img.pixels.size).reshape(img.shape)
    return img.with_pixels(img.pixels * v)


def apply_noise(img: Image, spec: NoiseSpec) -> Image:
    if spec.kind == "awgn":
        return add_awgn(img, spec.sigma, spec.seed)
    return add_speckle(img, spec.looks, spec.seed)
