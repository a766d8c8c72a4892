"""Benchmark measures: scale-invariant MSE, local MSE over sliding windows,
and DSSIM, plus report aggregation.

All metrics operate on linear-intensity images.  Brightness alignment
always rescales the prediction (never the ground truth) by the
least-squares scale; si_mse falls back to scale 0 when the prediction is
identically zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class LmseConfig:
    window_fraction: float = 0.1
    stride_fraction: float = 0.5

    def __post_init__(self):
        if not 0 < self.window_fraction <= 1:
            raise ValueError("LmseConfig: window_fraction outside (0, 1]")
        if not 0 < self.stride_fraction <= 1:
            raise ValueError("LmseConfig: stride_fraction outside (0, 1]")

    def window_size(self, h: int, w: int) -> int:
        return max(1, int(self.window_fraction * max(h, w) + 0.5))


def _alpha_or_zero(target, pred, mask) -> float:
    denom = float((pred * pred * mask).sum())
    if denom == 0.0:
        return 0.0
    return float((target * pred * mask).sum()) / denom


def si_mse(target: np.ndarray, pred: np.ndarray, mask: np.ndarray) -> float:
    """Mean squared error after fitting a single brightness scale to the
    prediction; sums run over valid channel entries only."""
    if target.shape != pred.shape:
        raise ValueError(f"si_mse: shapes differ {target.shape} vs {pred.shape}")
    n = float(mask.sum()) * target.shape[1]
    if n == 0:
        raise ValueError("si_mse: mask has no valid pixels")
    a = _alpha_or_zero(target, pred, mask)
    diff = (target - a * pred) * mask
    return float((diff * diff).sum()) / n


def _window_starts(extent: int, k: int, stride: int) -> list[int]:
    starts = list(range(0, extent - k + 1, stride))
    if starts[-1] != extent - k:
        starts.append(extent - k)  # final window flush to the border
    return starts


def lmse(target: np.ndarray, pred: np.ndarray, mask: np.ndarray,
         cfg: LmseConfig = LmseConfig()) -> float:
    """Mean of per-window si_mse over overlapping square windows sized
    window_fraction of the larger image dimension, stride half a window."""
    h, w = target.shape[2:]
    k = cfg.window_size(h, w)
    if k > h or k > w:
        raise ValueError(f"lmse: window {k} exceeds image extents {h}x{w}")
    stride = max(1, int(k * cfg.stride_fraction))
    total = 0.0
    count = 0
    for i in _window_starts(h, k, stride):
        for j in _window_starts(w, k, stride):
            m = mask[:, :, i:i + k, j:j + k]
            if m.sum() == 0:
                continue
            total += si_mse(target[:, :, i:i + k, j:j + k],
                            pred[:, :, i:i + k, j:j + k], m)
            count += 1
    if count == 0:
        raise ValueError("lmse: no window contains a valid pixel")
    return total / count


def lmse_window_sums(target: np.ndarray, pred: np.ndarray, mask: np.ndarray,
                     cfg: LmseConfig = LmseConfig()) -> tuple[float, float]:
    """Windowed squared-error sums for the reweighted total score:
    (sum of per-window aligned errors, same sums for the zero predictor)."""
    h, w = target.shape[2:]
    k = cfg.window_size(h, w)
    if k > h or k > w:
        raise ValueError(f"lmse: window {k} exceeds image extents {h}x{w}")
    stride = max(1, int(k * cfg.stride_fraction))
    ssq = 0.0
    zero_ssq = 0.0
    for i in _window_starts(h, k, stride):
        for j in _window_starts(w, k, stride):
            t = target[:, :, i:i + k, j:j + k]
            p = pred[:, :, i:i + k, j:j + k]
            m = mask[:, :, i:i + k, j:j + k]
            if m.sum() == 0:
                continue
            a = _alpha_or_zero(t, p, m)
            diff = (t - a * p) * m
            ssq += float((diff * diff).sum())
            zero_ssq += float((t * t * m).sum())
    return ssq, zero_ssq


def mit_total_lmse(sums_albedo: tuple[float, float],
                   sums_shading: tuple[float, float]) -> float:
    """Average of albedo and shading windowed errors, each normalized by the
    windowed error of the zero predictor.  Approximates the reweighted
    benchmark scorer; flagged as such wherever reported."""
    out = 0.0
    for ssq, zero_ssq in (sums_albedo, sums_shading):
        if zero_ssq == 0.0:
            raise ValueError("mit_total_lmse: zero normalizer (ground truth is zero)")
        out += ssq / zero_ssq
    return out / 2.0


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _blur_valid(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable 'valid' filtering of (N,C,H,W) along H then W."""
    k = kernel.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(x, k, axis=2)
    x = np.tensordot(win, kernel, axes=([4], [0]))
    win = np.lib.stride_tricks.sliding_window_view(x, k, axis=3)
    return np.tensordot(win, kernel, axes=([4], [0]))


def ssim_map(target: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Per-pixel, per-channel SSIM over the valid (fully-windowed) region,
    using an 11x11 Gaussian window (sigma 1.5) and dynamic range 1."""
    if target.shape != pred.shape:
        raise ValueError(f"ssim: shapes differ {target.shape} vs {pred.shape}")
    h, w = target.shape[2:]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"ssim: image {h}x{w} smaller than the "
                         f"{SSIM_WINDOW}x{SSIM_WINDOW} window")
    kernel = _gaussian_kernel()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_x = _blur_valid(target, kernel)
    mu_y = _blur_valid(pred, kernel)
    var_x = _blur_valid(target * target, kernel) - mu_x * mu_x
    var_y = _blur_valid(pred * pred, kernel) - mu_y * mu_y
    cov = _blur_valid(target * pred, kernel) - mu_x * mu_y
    return (((2 * mu_x * mu_y + c1) * (2 * cov + c2))
            / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)))


def dssim(target: np.ndarray, pred: np.ndarray, align: bool = True) -> float:
    """(1 - mean SSIM)/2 in [0, 1].

    With ``align`` the prediction is first brightness-scaled to the target
    and clipped to [0, 1] (the default, matching the other metrics); without
    it the measure is symmetric in its arguments.
    """
    if align:
        ones = np.ones((target.shape[0], 1, *target.shape[2:]))
        a = _alpha_or_zero(target, pred, ones)
        pred = np.clip(a * pred, 0.0, 1.0)
    return float((1.0 - ssim_map(target, pred).mean()) / 2.0)


@dataclass
class PredictionRecord:
    """One evaluation unit: ground truth, prediction, and validity mask."""
    id: str
    albedo_true: np.ndarray
    shading_true: np.ndarray
    albedo_pred: np.ndarray
    shading_pred: np.ndarray
    mask: np.ndarray


_METRIC_KEYS = ("mse_a", "mse_s", "lmse_a", "lmse_s", "dssim_a", "dssim_s")


def evaluate_report(records, lmse_cfg: LmseConfig = LmseConfig(),
                    include_mit_total: bool = False) -> dict:
    """Per-sample metrics plus dataset means and albedo/shading averages.

    Failing samples are reported in an ``errors`` list rather than silently
    dropped.  Outputs a JSON-ready dict:
    ``{per_sample: [...], mean: {...}, avg: {...}, errors: [...],
    mit_total_lmse?, mit_total_lmse_note?}``.
    """
    records = list(records)
    if not records:
        raise ValueError("evaluate_report: no samples")
    per_sample = []
    errors = []
    totals = []
    for rec in records:
        try:
            row = {
                "id": rec.id,
                "mse_a": si_mse(rec.albedo_true, rec.albedo_pred, rec.mask),
                "mse_s": si_mse(rec.shading_true, rec.shading_pred, rec.mask),
                "lmse_a": lmse(rec.albedo_true, rec.albedo_pred, rec.mask, lmse_cfg),
                "lmse_s": lmse(rec.shading_true, rec.shading_pred, rec.mask, lmse_cfg),
                "dssim_a": dssim(rec.albedo_true, rec.albedo_pred),
                "dssim_s": dssim(rec.shading_true, rec.shading_pred),
            }
            if include_mit_total:
                totals.append(mit_total_lmse(
                    lmse_window_sums(rec.albedo_true, rec.albedo_pred, rec.mask, lmse_cfg),
                    lmse_window_sums(rec.shading_true, rec.shading_pred, rec.mask, lmse_cfg)))
            per_sample.append(row)
        except ValueError as e:
            errors.append({"id": rec.id, "error": str(e)})
    report = {"per_sample": per_sample, "errors": errors}
    if per_sample:
        mean = {k: float(np.mean([r[k] for r in per_sample])) for k in _METRIC_KEYS}
        report["mean"] = mean
        report["avg"] = {
            "mse": (mean["mse_a"] + mean["mse_s"]) / 2.0,
            "lmse": (mean["lmse_a"] + mean["lmse_s"]) / 2.0,
            "dssim": (mean["dssim_a"] + mean["dssim_s"]) / 2.0,
        }
    if include_mit_total and totals:
        report["mit_total_lmse"] = float(np.mean(totals))
        report["mit_total_lmse_note"] = (
            "approximation of the reweighted benchmark scorer: per-window "
            "errors normalized by the zero predictor's windowed error")
    return report
