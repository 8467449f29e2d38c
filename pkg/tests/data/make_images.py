"""Regenerate the 256x256 8-bit test images from scikit-image's bundled data.

Needs scikit-image, which the package itself does not depend on.
"""

import os

import numpy as np
import skimage.data
from skimage.color import rgb2gray

from sparse3sd import Image, save_image

HERE = os.path.dirname(os.path.abspath(__file__))


def _halve(a):
    h, w = a.shape
    return a[: h // 2 * 2, : w // 2 * 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def main():
    images = {
        "camera": _halve(skimage.data.camera().astype(np.float64)),
        "astronaut": _halve(rgb2gray(skimage.data.astronaut()) * 255),
        "chelsea": (rgb2gray(skimage.data.chelsea()) * 255)[22:278, 100:356],
    }
    for name, a in images.items():
        save_image(Image(a), os.path.join(HERE, f"{name}.pgm"))


if __name__ == "__main__":
    main()
