"""Regenerate the bundled 256x256 greyscale corpus from scikit-image data.

The five images are classic public-domain test content shipped with
scikit-image.  512x512 sources are 2x2 mean-pooled; smaller colour images
are converted to luma and center-cropped.  Output is 8-bit binary PGM.
"""

from pathlib import Path

import numpy as np
from skimage import data

import sys

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
from treewave import imageio  # noqa: E402

OUT = Path(__file__).resolve().parents[1] / "src" / "treewave" / "assets" / "corpus"


def to_grey(img: np.ndarray) -> np.ndarray:
    arr = img.astype(np.float64) / 255.0
    if arr.ndim == 3:
        arr = 0.2126 * arr[..., 0] + 0.7152 * arr[..., 1] + 0.0722 * arr[..., 2]
    return arr


def pool2(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape
    return arr[: h // 2 * 2, : w // 2 * 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def center_crop(arr: np.ndarray, size: int = 256) -> np.ndarray:
    h, w = arr.shape
    r0 = (h - size) // 2
    c0 = (w - size) // 2
    return arr[r0 : r0 + size, c0 : c0 + size]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    sources = {
        "camera": pool2(to_grey(data.camera())),
        "moon": pool2(to_grey(data.moon())),
        "astronaut": pool2(to_grey(data.astronaut())),
        "chelsea": center_crop(to_grey(data.chelsea())),
        "coffee": center_crop(to_grey(data.coffee())),
    }
    for name, img in sources.items():
        assert img.shape == (256, 256), (name, img.shape)
        imageio.save_pgm(OUT / f"{name}.pgm", img)
        print(f"wrote {name}.pgm")


if __name__ == "__main__":
    main()
