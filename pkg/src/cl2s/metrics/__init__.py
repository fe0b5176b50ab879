"""Evaluation metrics: PSNR, SSIM, and CIEDE2000 with dataset-level reporting.

The color kernels (sRGB -> Lab, CIEDE2000) have two interchangeable
implementations: a compiled extension (cl2s.metrics._fastpath) and a
pure-NumPy fallback (cl2s.metrics._reference). The compiled one is used
when it imported successfully and CL2S_NO_EXT is unset; both are covered
by the same tests and compared in benchmarks/bench_kernels.py.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from ..images import load_image
from . import _reference

log = logging.getLogger(__name__)

try:
    if os.environ.get("CL2S_NO_EXT"):
        _fastpath = None
    else:
        from . import _fastpath
except ImportError:  # extension not built; NumPy fallback
    _fastpath = None
    log.info("compiled metric kernels unavailable, using NumPy fallback")


def active_backend():
    """Which kernel implementation is in use: 'compiled' or 'python'."""
    return "compiled" if _fastpath is not None else "python"


# ---------------------------------------------------------------------------
# color conversion and CIEDE2000

def srgb_to_lab(rgb):
    """sRGB values in [0, 1], shape (..., 3) -> CIELAB (D65, 2 degrees)."""
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.shape[-1] != 3:
        raise ValueError(f"expected trailing channel axis of 3, got shape {arr.shape}")
    if _fastpath is not None:
        flat = np.ascontiguousarray(arr.reshape(-1, 3))
        return _fastpath.srgb_to_lab(flat).reshape(arr.shape)
    return _reference.srgb_to_lab(arr)


def lab_to_srgb(lab):
    """Inverse Lab -> sRGB conversion (used to validate the forward path)."""
    return _reference.lab_to_srgb(lab)


def ciede2000(lab1, lab2):
    """CIEDE2000 difference between Lab triples or (..., 3) Lab arrays."""
    a = np.asarray(lab1, dtype=np.float64)
    b = np.asarray(lab2, dtype=np.float64)
    a, b = np.broadcast_arrays(a, b)
    if a.shape[-1] != 3:
        raise ValueError(f"expected trailing channel axis of 3, got shape {a.shape}")
    if _fastpath is not None:
        flat_a = np.ascontiguousarray(a.reshape(-1, 3))
        flat_b = np.ascontiguousarray(b.reshape(-1, 3))
        out = _fastpath.ciede2000(flat_a, flat_b).reshape(a.shape[:-1])
    else:
        out = _reference.ciede2000(a, b)
    if out.ndim == 0:
        return float(out)
    return out


def ciede2000_image(pred, gt):
    """Mean per-pixel CIEDE2000 between two RGB images in [0, 1]."""
    de = ciede2000(srgb_to_lab(pred), srgb_to_lab(gt))
    return float(np.mean(de))


# ---------------------------------------------------------------------------
# PSNR / SSIM

def psnr(a, b):
    """Peak signal-to-noise ratio in dB for images in [0, 1].

    Identical images give math.inf (zero-MSE sentinel).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _ssim_kernel():
    r = SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * SSIM_SIGMA**2))
    return g / g.sum()


def _window_mean(img, kernel, r):
    # separable Gaussian correlation; borders cropped below so the pad
    # mode never reaches the retained region
    out = correlate1d(img, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    return out[r:-r, r:-r]


def ssim(a, b):
    """Mean structural similarity for images in [0, 1].

    Gaussian 11x11 window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1.
    Computed per channel over all fully interior windows, then averaged
    over windows and channels.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValueError(
            f"image {a.shape[0]}x{a.shape[1]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]

    kernel = _ssim_kernel()
    r = SSIM_WINDOW // 2
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    channel_means = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mu_x = _window_mean(x, kernel, r)
        mu_y = _window_mean(y, kernel, r)
        var_x = _window_mean(x * x, kernel, r) - mu_x * mu_x
        var_y = _window_mean(y * y, kernel, r) - mu_y * mu_y
        cov = _window_mean(x * y, kernel, r) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        channel_means.append(np.mean(num / den))
    return float(np.mean(channel_means))


# ---------------------------------------------------------------------------
# dataset-level evaluation

@dataclass
class ImageRecord:
    id: str
    psnr: float
    ssim: float
    ciede2000: float


@dataclass
class MetricsReport:
    """Per-image metrics plus arithmetic means over the dataset."""

    records: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def count(self):
        return len(self.records)

    def _mean(self, attr):
        return float(np.mean([getattr(r, attr) for r in self.records]))

    @property
    def mean_psnr(self):
        return self._mean("psnr")

    @property
    def mean_ssim(self):
        return self._mean("ssim")

    @property
    def mean_ciede2000(self):
        return self._mean("ciede2000")


def pair_metrics(pred, gt, name=""):
    """All three metrics on one prediction/ground-truth pair in [0, 1]."""
    return ImageRecord(
        id=name,
        psnr=psnr(pred, gt),
        ssim=ssim(pred, gt),
        ciede2000=ciede2000_image(pred, gt),
    )


def evaluate_pairs(pred_dir, gt_dir):
    """Evaluate every prediction in pred_dir against its ground truth.

    Files are matched by filename (falling back to stem when extensions
    differ), processed in sorted order; unmatched files are recorded as
    skipped with a warning. Raises if no pair matches at all.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = sorted(p for p in pred_dir.iterdir() if p.is_file())
    gts = {p.name: p for p in gt_dir.iterdir() if p.is_file()}
    gt_stems = {}
    for p in gts.values():
        gt_stems.setdefault(p.stem, p)

    report = MetricsReport()
    for pred_path in preds:
        gt_path = gts.get(pred_path.name) or gt_stems.get(pred_path.stem)
        if gt_path is None:
            log.warning("no ground truth for %s, skipping", pred_path.name)
            report.skipped.append(pred_path.name)
            continue
        pred = load_image(pred_path)
        gt = load_image(gt_path)
        if pred.shape != gt.shape:
            log.warning("size mismatch for %s, skipping", pred_path.name)
            report.skipped.append(pred_path.name)
            continue
        report.records.append(pair_metrics(pred, gt, name=pred_path.stem))
    if not report.records:
        raise ValueError("no pairs found")
    return report


def _json_value(x):
    return x if math.isfinite(x) else "inf"


def write_report(report, path):
    """Machine-readable report: one JSON record per image plus a summary."""
    path = Path(path)
    with path.open("w") as fh:
        for r in report.records:
            fh.write(json.dumps({
                "id": r.id,
                "psnr": _json_value(r.psnr),
                "ssim": r.ssim,
                "ciede2000": r.ciede2000,
            }) + "\n")
        fh.write(json.dumps({
            "summary": True,
            "count": report.count,
            "skipped": report.skipped,
            "mean_psnr": _json_value(report.mean_psnr),
            "mean_ssim": report.mean_ssim,
            "mean_ciede2000": report.mean_ciede2000,
        }) + "\n")
    return path


def format_report(report):
    """Human-readable metrics table."""
    lines = [f"{'image':<28} {'PSNR':>8} {'SSIM':>8} {'CIEDE2000':>10}"]
    for r in report.records:
        lines.append(f"{r.id:<28} {r.psnr:>8.2f} {r.ssim:>8.4f} {r.ciede2000:>10.4f}")
    lines.append("-" * 58)
    lines.append(
        f"{'mean over ' + str(report.count):<28} {report.mean_psnr:>8.2f} "
        f"{report.mean_ssim:>8.4f} {report.mean_ciede2000:>10.4f}"
    )
    if report.skipped:
        lines.append(f"skipped ({len(report.skipped)}): {', '.join(report.skipped)}")
    return "\n".join(lines)
