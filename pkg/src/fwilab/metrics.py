"""Reconstruction quality metrics and the edema classification procedure.

SSIM uses an 11x11 Gaussian window (sigma 1.5) over valid positions with
constants k1=0.02, k2=0.03 relative to the ground-truth dynamic range; PSNR
uses the same range; NMSE is the energy ratio in dB.  Edema detection runs
on a reconstructed map: mask out bone/skin, smooth, threshold to the
physiological band, label 4-connected components, drop implausible ones,
and extract sub-pixel boundary contours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import SosMap

__all__ = [
    "MetricReport",
    "EdemaDetection",
    "image_metrics",
    "lmse",
    "dice",
    "classify_edema",
    "detection_scores",
]

EDEMA_BAND = (1460.0, 1500.0)

#: 4-connectivity structuring element for component labeling.
_CROSS = ndimage.generate_binary_structure(2, 1)


def _values(m) -> np.ndarray:
    return np.asarray(m.values if isinstance(m, SosMap) else m, dtype=np.float64)


@dataclass(frozen=True)
class MetricReport:
    ssim: float
    psnr_db: float
    nmse_db: float
    lmse: float | None = None
    dice: float | None = None


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    data_range: float,
    k1: float = 0.02,
    k2: float = 0.03,
    window_size: int = 11,
    sigma: float = 1.5,
) -> float:
    """Mean structural similarity over all fully contained windows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < window_size:
        raise ValueError(f"inputs smaller than the {window_size}x{window_size} window")
    w = _gaussian_window(window_size, sigma)
    half = window_size // 2
    valid = (slice(half, -half), slice(half, -half))

    def local(img):
        return ndimage.correlate(img, w, mode="constant")[valid]

    mu_a = local(a)
    mu_b = local(b)
    var_a = local(a * a) - mu_a**2
    var_b = local(b * b) - mu_b**2
    cov = local(a * b) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def image_metrics(recon, gt) -> MetricReport:
    """SSIM / PSNR / NMSE of a reconstruction against its ground truth.

    Identical inputs report SSIM 1, PSNR +inf, and NMSE -inf (zero error).
    """
    r = _values(recon)
    g = _values(gt)
    if r.shape != g.shape:
        raise ValueError(f"shape mismatch: {r.shape} vs {g.shape}")
    gt_norm = float(np.sum(g * g))
    if gt_norm == 0.0:
        raise ValueError("ground truth has zero norm; NMSE undefined")
    err = r - g
    mse = float(np.mean(err * err))
    data_range = float(g.max() - g.min())
    if mse == 0.0:
        return MetricReport(ssim=1.0, psnr_db=math.inf, nmse_db=-math.inf)
    if data_range == 0.0:
        raise ValueError("constant ground truth; PSNR/SSIM range undefined")
    psnr = 10.0 * math.log10(data_range**2 / mse)
    nmse = 10.0 * math.log10(float(np.sum(err * err)) / gt_norm)
    return MetricReport(ssim=ssim(r, g, data_range), psnr_db=psnr, nmse_db=nmse)


def lmse(recon, gt, region_mask: np.ndarray) -> float:
    """Mean squared error restricted to the masked cells ((m/s)^2)."""
    r = _values(recon)
    g = _values(gt)
    mask = np.asarray(region_mask, dtype=bool)
    if r.shape != g.shape or mask.shape != g.shape:
        raise ValueError("recon, gt, and mask shapes must match")
    if not mask.any():
        raise ValueError("empty region mask")
    diff = r[mask] - g[mask]
    return float(np.mean(diff * diff))


def dice(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    """Overlap score 2|A&B| / (|A|+|B|); two empty masks count as identical."""
    a = np.asarray(mask_a, dtype=bool)
    b = np.asarray(mask_b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


@dataclass(frozen=True)
class EdemaDetection:
    """Outcome of the classification procedure on one reconstruction."""

    positive: bool
    region_mask: np.ndarray
    labeled_regions: np.ndarray
    contours: list = field(default_factory=list)


def classify_edema(
    recon,
    bone_mask: np.ndarray,
    skin_mask: np.ndarray,
    band: tuple[float, float] = EDEMA_BAND,
    smooth_sigma: float = 1.0,
    min_area: int = 10,
    exclusion_dilation: int = 2,
) -> EdemaDetection:
    """Detect edema-band regions in a reconstructed speed map.

    Bone and skin masks (dilated by ``exclusion_dilation`` cells) are
    excluded, the map is Gaussian-smoothed, cells inside the speed band are
    labeled with 4-connectivity, and components are discarded if smaller
    than ``min_area`` cells or adjacent to the excluded masks.  Sub-pixel
    closed boundaries are extracted per surviving component by marching
    squares on the band-membership level set.  An empty detection is a
    valid negative.
    """
    from skimage.measure import find_contours

    values = _values(recon)
    bone = np.asarray(bone_mask, dtype=bool)
    skin = np.asarray(skin_mask, dtype=bool)
    if bone.shape != values.shape or skin.shape != values.shape:
        raise ValueError("masks must match the map shape")

    r = exclusion_dilation
    if r > 0:
        yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
        footprint = xx**2 + yy**2 <= r**2
        excluded = ndimage.binary_dilation(bone | skin, structure=footprint)
    else:
        excluded = bone | skin

    smoothed = ndimage.gaussian_filter(values, sigma=smooth_sigma)
    lo, hi = band
    in_band = (smoothed >= lo) & (smoothed <= hi) & ~excluded
    labeled, n_regions = ndimage.label(in_band, structure=_CROSS)

    # Level set positive exactly where the smoothed map lies in the band.
    center = 0.5 * (lo + hi)
    level = 0.5 * (hi - lo) - np.abs(smoothed - center)

    keep = np.zeros_like(in_band)
    contours: list[np.ndarray] = []
    final_labels = np.zeros_like(labeled)
    kept = 0
    for region in range(1, n_regions + 1):
        comp = labeled == region
        if int(comp.sum()) < min_area:
            continue
        if (ndimage.binary_dilation(comp, structure=_CROSS) & excluded).any():
            continue
        kept += 1
        keep |= comp
        final_labels[comp] = kept
        comp_level = np.where(
            ndimage.binary_dilation(comp, structure=_CROSS, iterations=2),
            level,
            -np.inf,
        )
        contours.extend(find_contours(comp_level, 0.0))

    return EdemaDetection(
        positive=kept > 0,
        region_mask=keep,
        labeled_regions=final_labels,
        contours=contours,
    )


def detection_scores(
    decisions: list[bool], gt_labels: list[bool]
) -> tuple[float, float, float]:
    """Accuracy, precision, and recall in percent.

    Precision is NaN when nothing was predicted positive; recall is NaN when
    the ground truth has no positives.
    """
    if len(decisions) != len(gt_labels):
        raise ValueError("decision and label lists differ in length")
    if not decisions:
        raise ValueError("empty input")
    pred = np.asarray(decisions, dtype=bool)
    truth = np.asarray(gt_labels, dtype=bool)
    tp = int((pred & truth).sum())
    tn = int((~pred & ~truth).sum())
    accuracy = 100.0 * (tp + tn) / len(pred)
    precision = 100.0 * tp / pred.sum() if pred.any() else math.nan
    recall = 100.0 * tp / truth.sum() if truth.any() else math.nan
    return accuracy, precision, recall
