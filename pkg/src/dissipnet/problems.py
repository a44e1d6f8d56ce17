"""Ready-made problem instances, PGM image I/O and the PSNR metric."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import ndimage

from .energies import Composite, CharbonnierTV, Energy, LeastSquares
from .operators import AvgPoolOperator, Conv2dOperator, DenseOperator, LinearOperator, gaussian_kernel

__all__ = [
    "ProblemInstance",
    "psnr",
    "read_pgm",
    "write_pgm",
    "texture_patches",
    "shipped_images",
    "make_toy2d",
    "make_superres",
    "phantom",
    "make_phantom_inverse",
    "TOY_TARGET",
]

TOY_TARGET = np.array([0.0, 5.0])


@dataclass
class ProblemInstance:
    name: str
    operator: LinearOperator
    energy: Energy
    u_star: np.ndarray
    f: np.ndarray
    u0: np.ndarray
    noise: np.ndarray | None = None
    sigma: float = 0.0
    seed: int | None = None
    metrics: tuple[str, ...] = ("energy", "residual")
    meta: dict = field(default_factory=dict)

    @property
    def noise_norm(self) -> float:
        return 0.0 if self.noise is None else float(np.linalg.norm(self.noise))


def psnr(u, u_ref, peak: float = 1.0) -> float:
    """``10 log10(peak^2 n / ||u - u_ref||^2)``; ``inf`` when identical."""
    u = np.asarray(u, dtype=np.float64)
    u_ref = np.asarray(u_ref, dtype=np.float64)
    if u.shape != u_ref.shape:
        raise ValueError(f"psnr: shape mismatch {u.shape} vs {u_ref.shape}")
    sq = float(np.sum((u - u_ref) ** 2))
    if sq == 0.0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 * u.size / sq)


# ----------------------------------------------------------------- PGM I/O


def read_pgm(path) -> np.ndarray:
    """Binary 8-bit PGM (P5) -> float image in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos + 1)
    return data.reshape(h, w).astype(np.float64) / 255.0


def write_pgm(path, image) -> None:
    """Float image (clipped to [0, 1]) -> binary 8-bit PGM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"write_pgm: image must be 2-D, got {img.shape}")
    q = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = q.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + q.tobytes())


def shipped_images() -> list[np.ndarray]:
    files = sorted(p for p in resources.files("dissipnet").joinpath("data").iterdir()
                   if p.name.endswith(".pgm"))
    return [read_pgm(p) for p in files]


def texture_patches(n: int, size: int, seed: int = 0, images=None) -> np.ndarray:
    """``n`` random ``size x size`` crops of the shipped textures."""
    images = shipped_images() if images is None else images
    rng = np.random.default_rng(seed)
    out = np.empty((n, size, size))
    for i in range(n):
        img = images[rng.integers(len(images))]
        r = rng.integers(img.shape[0] - size + 1)
        c = rng.integers(img.shape[1] - size + 1)
        out[i] = img[r:r + size, c:c + size]
    return out


# --------------------------------------------------------------- instances


def make_toy2d(n_starts: int = 100, seed: int = 0, low: float = -6.0, high: float = 6.0,
               grid: bool = False) -> list[ProblemInstance]:
    """Underdetermined ``u1 + u2 = 5`` with preferred solution ``(0, 5)``.

    Starts are seeded uniform draws in ``[low, high]^2``, or a regular grid of
    ``n_starts`` points (rounded down to a square) when ``grid`` is set.
    """
    A = DenseOperator([[1.0, 1.0]])
    f = np.array([5.0])
    E = LeastSquares(A, f)
    if grid:
        m = max(int(math.isqrt(n_starts)), 1)
        axis = np.linspace(low, high, m)
        starts = np.array([(a, b) for a in axis for b in axis])
    else:
        starts = np.random.default_rng(seed).uniform(low, high, size=(n_starts, 2))
    return [ProblemInstance("toy2d", A, E, TOY_TARGET.copy(), f, s.copy(), seed=seed)
            for s in starts]


def make_superres(patch_size: int = 24, factor: int = 4, sigma: float = 0.0,
                  n_patches: int = 16, seed: int = 0, patches=None) -> list[ProblemInstance]:
    """Average-pooling super-resolution on texture crops.

    ``u0`` is the bilinear upsampling of ``f``. Nearest-neighbour upsampling
    would satisfy ``A u0 = f`` exactly, leaving a zero gradient and hence no
    room for any cone-constrained direction to move.
    """
    if patch_size % factor:
        raise ValueError(f"patch size {patch_size} not divisible by factor {factor}")
    A = AvgPoolOperator((patch_size, patch_size), factor)
    truths = texture_patches(n_patches, patch_size, seed) if patches is None else np.asarray(patches)
    rng = np.random.default_rng([seed, 1])
    out = []
    for i, u_star in enumerate(truths):
        xi = sigma * rng.standard_normal(A.output_shape)
        f = A.apply(u_star) + xi
        E = LeastSquares(A, f)
        u0 = ndimage.zoom(f, factor, order=1, mode="nearest", grid_mode=True)
        out.append(ProblemInstance(f"superres[{i}]", A, E, u_star, f, u0, xi, sigma, seed,
                                   ("energy", "residual", "psnr")))
    return out


def phantom(size: int) -> np.ndarray:
    """Piecewise-constant ellipse phantom on a dark background, values in [0, 1]."""
    y, x = np.mgrid[-1:1:size * 1j, -1:1:size * 1j]
    img = np.zeros((size, size))
    # (intensity, centre x, centre y, semi-axis a, semi-axis b, angle)
    ellipses = [(0.7, 0.0, 0.0, 0.80, 0.90, 0.0),
                (-0.3, 0.0, -0.05, 0.65, 0.75, 0.0),
                (0.4, -0.25, 0.2, 0.18, 0.28, 0.4),
                (0.35, 0.3, 0.25, 0.15, 0.22, -0.5),
                (0.3, 0.05, -0.45, 0.22, 0.1, 0.0),
                (0.5, 0.35, -0.2, 0.06, 0.06, 0.0)]
    for val, cx, cy, a, b, th in ellipses:
        c, s = math.cos(th), math.sin(th)
        xr = (x - cx) * c + (y - cy) * s
        yr = -(x - cx) * s + (y - cy) * c
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += val
    return np.clip(img, 0.0, 1.0)


def make_phantom_inverse(size: int = 48, blur: str | float = 1.5, sigma: float = 0.1,
                         alpha: float = 0.0, eps: float = 0.01, seed: int = 0,
                         factor: int = 2) -> ProblemInstance:
    """Deblurring (``blur`` = Gaussian width) or downsampling (``blur='avgpool'``).

    ``alpha > 0`` adds a Charbonnier TV term to the least-squares fidelity.
    """
    if size < 16:
        raise ValueError("phantom size must be >= 16")
    u_star = phantom(size)
    if blur == "avgpool":
        A = AvgPoolOperator((size, size), factor)
    else:
        A = Conv2dOperator((size, size), gaussian_kernel(float(blur)))
    xi = sigma * np.random.default_rng(seed).standard_normal(A.output_shape)
    f = A.apply(u_star) + xi
    fid = LeastSquares(A, f)
    E = fid if alpha == 0 else Composite([(1.0, fid), (alpha, CharbonnierTV((size, size), eps))])
    return ProblemInstance("phantom", A, E, u_star, f, np.zeros((size, size)), xi, sigma, seed,
                           ("energy", "residual", "psnr"), {"alpha": alpha, "eps": eps})
