import math

import numpy as np
import pytest

from sparse3sd import MetricReport, evaluate, psnr, ssim


def _ref():
    img = np.zeros((16, 16))
    img[0, 0] = 255.0
    return img


def test_psnr_hand_value():
    ref = _ref()
    test = ref + 5.0  # MSE 25
    assert psnr(ref, test) == pytest.approx(34.1514, abs=1e-3)


def test_psnr_error_doubling():
    rng = np.random.default_rng(0)
    ref = rng.uniform(0, 255, (32, 32))
    e = rng.standard_normal((32, 32))
    assert psnr(ref, ref + 2 * e) - psnr(ref, ref + e) == pytest.approx(-20 * math.log10(2), abs=1e-9)


def test_psnr_identical_is_infinite():
    ref = _ref()
    assert psnr(ref, ref) == math.inf
    assert MetricReport.from_dict(evaluate(ref, ref).to_dict()).psnr_db == math.inf


def test_psnr_peak_comes_from_reference():
    ref = np.full((4, 4), 100.0)
    assert psnr(ref, ref + 1) == pytest.approx(20 * math.log10(100))
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((3, 2)))


@pytest.mark.parametrize("window", ["global", "sliding"])
def test_ssim_identities(window):
    rng = np.random.default_rng(1)
    a = rng.uniform(0, 255, (40, 30))
    b = np.clip(a + rng.normal(0, 20, a.shape), 0, 255)
    assert abs(ssim(a, a, window) - 1.0) <= 1e-12
    assert abs(ssim(a, b, window) - ssim(b, a, window)) <= 1e-12
    assert ssim(a, b, window) < 1.0


def test_ssim_inverted_image_is_dissimilar():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 255, (32, 32))
    assert ssim(a, 255 - a) < 0.5


def test_ssim_constant_images():
    a = np.full((10, 10), 77.0)
    assert ssim(a, a, "global") == 1.0
    assert ssim(a, a, "sliding") == 1.0


def test_ssim_global_matches_formula():
    rng = np.random.default_rng(3)
    a, b = rng.uniform(0, 255, (2, 12, 12))
    mx, my = a.mean(), b.mean()
    vx, vy = a.var(), b.var()
    cxy = np.mean((a - mx) * (b - my))
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    want = (2 * mx * my + c1) * (2 * cxy + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
    assert ssim(a, b, "global") == pytest.approx(want, rel=1e-12)
    with pytest.raises(ValueError):
        ssim(a, b, "gaussian")
