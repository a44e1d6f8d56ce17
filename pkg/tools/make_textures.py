"""Generate the shipped synthetic grayscale textures (license-free, seeded).

    python tools/make_textures.py
"""

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from dissipnet.problems import phantom, write_pgm

SIZE = 96


def normalize(img):
    img = img - img.min()
    return 0.05 + 0.9 * img / img.max()


def main(out="src/dissipnet/data"):
    rng = np.random.default_rng(7)
    y, x = np.mgrid[0:SIZE, 0:SIZE] / SIZE
    images = {
        "tex0_waves": np.sin(2 * np.pi * (3 * x + 1.5 * y)) + 0.5 * np.sin(2 * np.pi * 7 * y * x),
        "tex1_blobs": gaussian_filter(rng.standard_normal((SIZE, SIZE)), 4.0),
        "tex2_tiles": ((np.floor(6 * x) + np.floor(6 * y)) % 2) * 0.6
                      + gaussian_filter(rng.standard_normal((SIZE, SIZE)), 1.5),
        "tex3_rings": np.cos(2 * np.pi * 8 * np.hypot(x - 0.4, y - 0.55)),
        "tex4_phantom": phantom(SIZE),
    }
    out = Path(out)
    for name, img in images.items():
        write_pgm(out / f"{name}.pgm", normalize(img))


if __name__ == "__main__":
    main()
