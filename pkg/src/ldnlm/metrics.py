"""Despeckling quality metrics.

With a clean reference: PSNR and SSIM (Gaussian 11x11 window, sigma 1.5,
K1 = 0.01, K2 = 0.03, valid-region mean).  Without one: ENL over homogeneous
regions, the ratio image ``noisy / denoised`` and the ENL/mean residual of that
ratio image (the first term of the M-index; the structure term is not
computed, so reports label the value as partial).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, ParameterError, ShapeError
from .raster import as_raster

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
IDENTICAL = "identical"


def _pair(ref, test):
    a = np.asarray(ref, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(ref, test, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the images are identical."""
    if not peak > 0:
        raise ParameterError(f"peak must be positive, got {peak}")
    a, b = _pair(ref, test)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, n, axis=1) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=0) @ g


def ssim_map(ref, test, peak: float = 255.0) -> np.ndarray:
    a, b = _pair(ref, test)
    if min(a.shape) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    g = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(ref, test, peak: float = 255.0) -> float:
    if not peak > 0:
        raise ParameterError(f"peak must be positive, got {peak}")
    return float(np.mean(ssim_map(ref, test, peak)))


def enl(patch, domain: str = "amplitude") -> float:
    """Equivalent number of looks ``E[I]^2 / Var(I)``.

    ``domain="amplitude"`` squares the patch first (``I = P^2``);
    ``domain="intensity"`` uses the values as they are.
    """
    p = np.asarray(patch, dtype=np.float64)
    if isinstance(patch, np.ma.MaskedArray):
        p = patch.compressed().astype(np.float64)
    if domain == "amplitude":
        inten = p * p
    elif domain == "intensity":
        inten = p
    else:
        raise ParameterError(f"domain must be 'amplitude' or 'intensity', got {domain!r}")
    var = float(np.var(inten))
    if inten.size < 2 or var == 0.0:
        raise DegenerateError("ENL is unbounded on a constant region")
    return float(np.mean(inten)) ** 2 / var


def ratio_image(noisy, denoised) -> np.ma.MaskedArray:
    """``noisy / denoised`` with zero-denominator pixels masked out."""
    x = as_raster(noisy, name="noisy")
    y = as_raster(denoised, name="denoised")
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    bad = y == 0
    if bad.all():
        raise DegenerateError("denoised image is zero everywhere")
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(bad, 0.0, x / np.where(bad, 1.0, y)).astype(np.float32)
    return np.ma.MaskedArray(r, mask=bad)


def m_residual(ratio, looks: float) -> float:
    """Relative ENL / mean residual of a ratio image, in percent.

    ``50 * (|ENL - L| / L + |mean - 1|)`` where ENL is taken on the ratio
    values directly: an ideal ratio image is a unit-mean Gamma(L) field.
    """
    if not looks > 0:
        raise ParameterError(f"looks must be positive, got {looks}")
    values = ratio.compressed() if isinstance(ratio, np.ma.MaskedArray) else np.asarray(ratio).ravel()
    r_enl = enl(values, domain="intensity")
    mean = float(np.mean(values, dtype=np.float64))
    return 50.0 * (abs(r_enl - looks) / looks + abs(mean - 1.0))


@dataclass(frozen=True)
class Region:
    name: str
    x: int
    y: int
    w: int
    h: int

    def crop(self, image: np.ndarray) -> np.ndarray:
        H, W = image.shape
        if self.w < 1 or self.h < 1 or self.x < 0 or self.y < 0 or self.x + self.w > W or self.y + self.h > H:
            raise ShapeError(f"region {self.name!r} ({self.x},{self.y},{self.w},{self.h}) is outside a {W}x{H} image")
        return image[self.y:self.y + self.h, self.x:self.x + self.w]


@dataclass
class MetricReport:
    psnr_db: float | None = None
    ssim: float | None = None
    enl: list = field(default_factory=list)  # (region name, value)
    ratio_mean: float | None = None
    ratio_enl: float | None = None
    m_residual: float | None = None
    notes: list = field(default_factory=list)

    def rows(self) -> list[tuple[str, str, str, str]]:
        out = []
        if self.psnr_db is not None:
            value = IDENTICAL if math.isinf(self.psnr_db) else f"{self.psnr_db:.6f}"
            out.append(("psnr_db", "", value, "reference"))
        if self.ssim is not None:
            out.append(("ssim", "", f"{self.ssim:.6f}", "reference"))
        for name, value in self.enl:
            out.append(("enl", name, f"{value:.6f}", "amplitude-squared"))
        if self.ratio_mean is not None:
            out.append(("ratio_mean", "", f"{self.ratio_mean:.6f}", "ratio image"))
        if self.ratio_enl is not None:
            out.append(("ratio_enl", "", f"{self.ratio_enl:.6f}", "ratio image"))
        if self.m_residual is not None:
            out.append(("m_residual (partial)", "", f"{self.m_residual:.6f}", "ENL/mean residual only"))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "region", "value", "provenance"])
        w.writerows(self.rows())
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{m:<22}{(r or '-'):<12}{v:>14}  {p}" for m, r, v, p in self.rows()]
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


def reference_report(ref, test, peak: float) -> MetricReport:
    return MetricReport(psnr_db=psnr(ref, test, peak), ssim=ssim(ref, test, peak), notes=[f"peak={peak:g}"])


def no_reference_report(noisy, denoised, looks: float, regions=()) -> MetricReport:
    den = as_raster(denoised, name="denoised")
    rep = MetricReport(notes=[f"looks={looks:g}", "m_residual excludes the structure term"])
    for reg in regions:
        rep.enl.append((reg.name, enl(reg.crop(den))))
    ratio = ratio_image(noisy, den)
    rep.ratio_mean = float(ratio.mean())
    rep.ratio_enl = enl(ratio, domain="intensity")
    rep.m_residual = m_residual(ratio, looks)
    masked = int(np.ma.count_masked(ratio))
    if masked:
        rep.notes.append(f"{masked} zero-denominator pixels excluded")
    return rep
