"""Evaluation formulas: image quality, 6D pose, segmentation, depth.

Everything operates on plain numpy arrays in float64.  PSNR is capped at
99 dB (the zero-error sentinel); ADD-AUC is the mean accuracy over the
ten thresholds 5%..50% of the model diameter.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter, ShapeMismatch
from .scenegen import Pose

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class MetricReport:
    metrics: dict
    count: int
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {"metrics": {k: float(v) for k, v in self.metrics.items()},
                "count": self.count, "config": self.config}

    def csv_header(self):
        return ",".join(["count"] + sorted(self.metrics))

    def csv_row(self):
        vals = [str(self.count)] + [repr(float(self.metrics[k]))
                                    for k in sorted(self.metrics)]
        return ",".join(vals)


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10*log10(1/MSE) for images in [0,1]; capped at 99 dB."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _window_filter(img, kernel):
    """Valid-mode weighted sums of kernel-sized windows."""
    kh, kw = kernel.shape
    h, w = img.shape
    out = np.zeros((h - kh + 1, w - kw + 1))
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * img[i:i + h - kh + 1, j:j + w - kw + 1]
    return out


def ssim(a, b) -> float:
    """Structural similarity with the canonical 11x11 sigma-1.5 Gaussian
    window, per channel, averaged over windows and channels."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    h, w = a.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise InvalidParameter(
            f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    kernel = _gaussian_window()
    vals = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        mx = _window_filter(x, kernel)
        my = _window_filter(y, kernel)
        mxx = _window_filter(x * x, kernel)
        myy = _window_filter(y * y, kernel)
        mxy = _window_filter(x * y, kernel)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        num = (2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def add(mesh_vertices, gt_pose: Pose, pred_pose: Pose) -> float:
    """Mean distance between model points under the two poses (meters)."""
    pts = np.asarray(mesh_vertices, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise InvalidParameter("need at least one model vertex")
    return float(np.mean(np.linalg.norm(
        gt_pose.apply(pts) - pred_pose.apply(pts), axis=1)))


def add_auc(add_values, diameter: float) -> float:
    """Mean recall over thresholds 5%,10%,...,50% of the diameter."""
    if diameter <= 0:
        raise InvalidParameter("diameter must be positive")
    vals = np.asarray(add_values, dtype=np.float64)
    accs = [float(np.mean(vals < (t / 100.0) * diameter))
            for t in range(5, 55, 5)]
    return float(np.mean(accs))


def iou(mask_a, mask_b) -> float:
    a = np.asarray(mask_a, dtype=bool)
    b = np.asarray(mask_b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def correspondence_error(gt_points, pred_points) -> float:
    """Mean one-to-one point distance; inputs and output in millimeters."""
    gt = np.asarray(gt_points, dtype=np.float64)
    pred = np.asarray(pred_points, dtype=np.float64)
    if gt.shape != pred.shape or gt.ndim != 2 or len(gt) < 1:
        raise ShapeMismatch("point lists must be equal-length (N,3) arrays")
    return float(np.mean(np.linalg.norm(gt - pred, axis=1)))


def depth_metrics(pred, gt, valid_mask):
    """(AbsRel, RMSE, delta1) over the valid ground-truth pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    m = np.asarray(valid_mask, dtype=bool)
    if not m.any():
        raise InvalidParameter("valid mask is empty")
    d, dstar = pred[m], gt[m]
    if (dstar <= 0).any():
        raise InvalidParameter("ground-truth depth must be positive on the mask")
    abs_rel = float(np.mean(np.abs(d - dstar) / dstar))
    rmse = float(np.sqrt(np.mean((d - dstar) ** 2)))
    ratio = np.maximum(d / dstar, dstar / np.maximum(d, 1e-12))
    delta1 = float(np.mean(ratio < 1.25))
    return abs_rel, rmse, delta1
