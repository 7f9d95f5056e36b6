"""Multiplicative gamma speckle: sampling, synthesis and training-patch draws.

Every random stream is a numpy ``Generator`` over the counter-based
``Philox`` bit generator.  Sub-streams are split with
``SeedSequence(seed, spawn_key=(index,))``, so ``child_seed(seed, i)`` is
portable and independent of how many draws happened elsewhere.

Gamma variates use the Marsaglia-Tsang squeeze method (shape >= 1) and the
``U**(1/L)`` boost for shape < 1, applied to blocks of candidates so the
rejection loop stays vectorized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .raster import as_raster

DEFAULT_LOOKS = 1.0


@dataclass(frozen=True)
class NoiseSpec:
    looks: float = DEFAULT_LOOKS
    seed: int = 0

    def __post_init__(self):
        if not (self.looks > 0 and np.isfinite(self.looks)):
            raise ParameterError(f"number of looks must be positive, got {self.looks}")


@dataclass(frozen=True)
class TrainingPair:
    noisy: np.ndarray
    clean: np.ndarray
    origin: tuple[int, int, int]  # (image index, row, col)


def make_rng(seed: int, *spawn_key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=tuple(spawn_key))
    return np.random.Generator(np.random.Philox(ss))


def _marsaglia_tsang(shape: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """Gamma(shape, scale=1) draws for shape >= 1."""
    d = shape - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(count, dtype=np.float64)
    filled = 0
    while filled < count:
        need = count - filled
        block = max(16, int(need * 1.1) + 8)
        x = rng.standard_normal(block)
        u = rng.random(block)
        v = 1.0 + c * x
        ok = v > 0
        v = v * v * v
        with np.errstate(invalid="ignore", divide="ignore"):
            squeeze = u < 1.0 - 0.0331 * x ** 4
            full = np.log(u) < 0.5 * x * x + d * (1.0 - v + np.log(np.where(ok, v, 1.0)))
        accept = ok & (squeeze | full)
        got = (d * v)[accept][:need]
        out[filled:filled + got.size] = got
        filled += got.size
    return out


def sample_gamma(looks: float, count: int, seed: int) -> np.ndarray:
    """I.i.d. draws with density ``L^L v^(L-1) exp(-L v) / Gamma(L)`` (mean 1, variance 1/L)."""
    if not (looks > 0 and np.isfinite(looks)):
        raise ParameterError(f"number of looks must be positive, got {looks}")
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    rng = make_rng(seed)
    return _gamma_unit_mean(float(looks), int(count), rng)


def _gamma_unit_mean(looks: float, count: int, rng: np.random.Generator) -> np.ndarray:
    if looks >= 1.0:
        draws = _marsaglia_tsang(looks, count, rng)
    else:
        draws = _marsaglia_tsang(looks + 1.0, count, rng)
        draws *= rng.random(count) ** (1.0 / looks)
    return draws / looks


def gamma_field(shape: tuple[int, int], looks: float, seed: int) -> np.ndarray:
    h, w = shape
    return sample_gamma(looks, h * w, seed).reshape(h, w).astype(np.float32)


def synthesize_speckled(clean, spec: NoiseSpec) -> np.ndarray:
    """``noisy = clean * V`` with ``V`` a unit-mean gamma field, in the amplitude domain."""
    clean = as_raster(clean, name="clean image")
    return clean * gamma_field(clean.shape, spec.looks, spec.seed)


def sample_patches(images, n: int, window_radius: int, spec: NoiseSpec) -> list[TrainingPair]:
    """Draw ``n`` (noisy, clean) windows of side ``2R+1``.

    Patch ``i`` uses its own stream ``child(spec.seed, i)`` for the image
    choice, the top-left corner and the speckle field.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if window_radius < 0:
        raise ParameterError(f"window radius must be >= 0, got {window_radius}")
    side = 2 * window_radius + 1
    rasters = [as_raster(im) for im in images]
    if not rasters:
        raise ParameterError("no images to sample from")
    for idx, im in enumerate(rasters):
        if im.shape[0] < side or im.shape[1] < side:
            raise ShapeError(f"image {idx} of shape {im.shape} is smaller than the {side}x{side} window")
    pairs = []
    for i in range(n):
        rng = make_rng(spec.seed, i)
        which = int(rng.integers(len(rasters)))
        im = rasters[which]
        r = int(rng.integers(im.shape[0] - side + 1))
        c = int(rng.integers(im.shape[1] - side + 1))
        clean = im[r:r + side, c:c + side].copy()
        noise = _gamma_unit_mean(spec.looks, side * side, rng).reshape(side, side).astype(np.float32)
        pairs.append(TrainingPair(noisy=clean * noise, clean=clean, origin=(which, r, c)))
    return pairs


def synthetic_textures(count: int, size: int = 64, seed: int = 0) -> list[np.ndarray]:
    """Clean piecewise-smooth test images with amplitudes in roughly [20, 235].

    Each texture mixes a smooth oriented grating, a few constant-intensity
    rectangles and discs, and a gentle illumination gradient.
    """
    if size < 8:
        raise ParameterError(f"texture size must be >= 8, got {size}")
    out = []
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    side = max(2, size // 8)
    for i in range(count):
        rng = make_rng(seed, 1_000_000 + i)
        base = rng.uniform(60, 180)
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(1.5, 5.0) * 2 * np.pi / size
        img = base + rng.uniform(15, 45) * np.sin(freq * (xx * np.cos(theta) + yy * np.sin(theta)) + rng.uniform(0, 2 * np.pi))
        img += rng.uniform(-20, 20) * (xx / size - 0.5) + rng.uniform(-20, 20) * (yy / size - 0.5)
        for _ in range(int(rng.integers(2, 5))):
            level = rng.uniform(20, 235)
            if rng.random() < 0.5:
                r0, c0 = rng.integers(0, size - side, 2)
                hh, ww = rng.integers(side, max(side + 1, size // 2), 2)
                img[r0:r0 + hh, c0:c0 + ww] = level
            else:
                cy, cx = rng.uniform(0, size, 2)
                rad = rng.uniform(min(5.0, size / 8), size / 4)
                img[(yy - cy) ** 2 + (xx - cx) ** 2 < rad * rad] = level
        out.append(np.clip(img, 20, 235).astype(np.float32))
    return out


def child_seed(seed: int, *key: int) -> int:
    """Deterministic 64-bit sub-seed for stream ``key`` of ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=tuple(key))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)
