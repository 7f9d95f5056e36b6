"""Local and non-local means filtering.

``nlm_denoise`` replaces every pixel with an average of the pixels in its
``(2S+1)^2`` search window, weighted by ``exp(-||N(t) - N(j)||^2 / h^2)``
where ``N`` is the plain (unweighted) ``(2k+1)^2`` neighborhood vector.  The
center pixel keeps its natural weight ``exp(0) = 1``.

Both kernels accumulate in float64 and visit search offsets and patch offsets
in the same row-major order, so the numba and numpy paths agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._accel import njit, pick
from .errors import ParameterError, ShapeError
from .raster import as_raster

PAD_MODES = ("reflect", "symmetric", "edge")

# h^2 = AUTO_H_FACTOR * 2 * (2k+1)^2 * sigma^2, sigma = mean / sqrt(L)
AUTO_H_FACTOR = 1.0


@dataclass(frozen=True)
class NlmConfig:
    search_radius: int = 10
    patch_radius: int = 3
    h: float | None = None
    looks: float = 1.0
    boundary: str = "reflect"

    def __post_init__(self):
        if self.search_radius < 1:
            raise ParameterError(f"search_radius must be >= 1, got {self.search_radius}")
        if not 0 <= self.patch_radius < self.search_radius:
            raise ParameterError("patch_radius must satisfy 0 <= patch_radius < search_radius")
        if self.h is not None and not self.h > 0:
            raise ParameterError(f"h must be positive, got {self.h}")
        if not self.looks > 0:
            raise ParameterError(f"looks must be positive, got {self.looks}")
        if self.boundary not in PAD_MODES:
            raise ParameterError(f"boundary must be one of {PAD_MODES}, got {self.boundary!r}")


def resolve_h(image: np.ndarray, cfg: NlmConfig) -> float:
    """Filtering bandwidth; derived from the speckle level when ``cfg.h`` is unset."""
    if cfg.h is not None:
        return float(cfg.h)
    sigma = float(np.mean(image, dtype=np.float64)) / math.sqrt(cfg.looks)
    npatch = (2 * cfg.patch_radius + 1) ** 2
    h = math.sqrt(AUTO_H_FACTOR * 2.0 * npatch) * sigma
    return h if h > 0 else 1.0


def local_filter(image, kernel, boundary: str = "reflect") -> np.ndarray:
    """Correlate ``image`` with an odd-sized ``kernel`` (a weighted local average)."""
    img = as_raster(image)
    a = np.asarray(kernel, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] % 2 == 0 or a.shape[1] % 2 == 0:
        raise ShapeError(f"kernel must be 2-D with odd sides, got shape {a.shape}")
    if boundary not in PAD_MODES:
        raise ParameterError(f"boundary must be one of {PAD_MODES}, got {boundary!r}")
    ry, rx = a.shape[0] // 2, a.shape[1] // 2
    pad = np.pad(img.astype(np.float64), ((ry, ry), (rx, rx)), mode=boundary)
    h, w = img.shape
    out = np.zeros((h, w), dtype=np.float64)
    for u in range(a.shape[0]):
        for v in range(a.shape[1]):
            out += a[u, v] * pad[u:u + h, v:v + w]
    return out.astype(np.float32)


def _nlm_loops(pad, h, w, sr, pr, inv_h2):
    out = np.empty((h, w), dtype=np.float64)
    off = sr + pr
    for i in range(h):
        for j in range(w):
            ci = i + off
            cj = j + off
            acc = 0.0
            wsum = 0.0
            for di in range(-sr, sr + 1):
                for dj in range(-sr, sr + 1):
                    ni = ci + di
                    nj = cj + dj
                    dist = 0.0
                    for pi in range(-pr, pr + 1):
                        for pj in range(-pr, pr + 1):
                            diff = pad[ci + pi, cj + pj] - pad[ni + pi, nj + pj]
                            dist += diff * diff
                    wt = math.exp(-dist * inv_h2)
                    wsum += wt
                    acc += wt * pad[ni, nj]
            out[i, j] = acc / wsum
    return out


_nlm_numba = njit(_nlm_loops)


def _nlm_numpy(pad, h, w, sr, pr, inv_h2):
    off = sr + pr
    acc = np.zeros((h, w), dtype=np.float64)
    wsum = np.zeros((h, w), dtype=np.float64)
    for di in range(-sr, sr + 1):
        for dj in range(-sr, sr + 1):
            dist = np.zeros((h, w), dtype=np.float64)
            for pi in range(-pr, pr + 1):
                for pj in range(-pr, pr + 1):
                    a = pad[off + pi:off + pi + h, off + pj:off + pj + w]
                    b = pad[off + di + pi:off + di + pi + h, off + dj + pj:off + dj + pj + w]
                    diff = a - b
                    dist += diff * diff
            wt = np.exp(-dist * inv_h2)
            wsum += wt
            acc += wt * pad[off + di:off + di + h, off + dj:off + dj + w]
    return acc / wsum


nlm_kernel = pick(_nlm_numba, _nlm_numpy)


def nlm_denoise(image, cfg: NlmConfig = NlmConfig(), kernel=None) -> np.ndarray:
    img = as_raster(image)
    h, w = img.shape
    sr, pr = cfg.search_radius, cfg.patch_radius
    bw = resolve_h(img, cfg)
    pad = np.pad(img.astype(np.float64), sr + pr, mode=cfg.boundary)
    run = kernel or nlm_kernel
    return run(pad, h, w, sr, pr, 1.0 / (bw * bw)).astype(np.float32)


def nlm_weights(window, center: tuple[int, int], cfg: NlmConfig = NlmConfig()) -> np.ndarray:
    """Normalized similarity weights of every window pixel with respect to ``center``.

    Neighborhoods near the window edge are completed by ``cfg.boundary`` padding.
    """
    win = as_raster(window, name="window")
    r0, c0 = center
    if not (0 <= r0 < win.shape[0] and 0 <= c0 < win.shape[1]):
        raise ShapeError(f"center {center} lies outside window of shape {win.shape}")
    pr = cfg.patch_radius
    side = 2 * pr + 1
    bw = resolve_h(win, cfg)
    pad = np.pad(win.astype(np.float64), pr, mode=cfg.boundary)
    patches = np.lib.stride_tricks.sliding_window_view(pad, (side, side))
    ref = patches[r0, c0]
    dist = ((patches - ref) ** 2).sum(axis=(2, 3))
    wt = np.exp(-dist / (bw * bw))
    return wt / wt.sum()
