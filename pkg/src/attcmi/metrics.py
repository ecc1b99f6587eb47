"""Reconstruction and classification quality metrics.

SSIM uses a 7x7 Gaussian window (sigma 1.5) over valid positions only, with
the standard constants C1=0.01^2, C2=0.03^2 at dynamic range 1 - the 28x28
images leave too few valid positions for the common 11x11 window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

log = logging.getLogger(__name__)

SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


class UndefinedMetricError(ValueError):
    """The metric is undefined for this input (e.g. NMSE of a zero image)."""


def nmse(pred: np.ndarray, truth: np.ndarray) -> float:
    """||pred - truth||^2 / ||truth||^2 (Frobenius)."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ShapeError(f"nmse: shapes {pred.shape} vs {truth.shape}")
    denom = float(np.sum(truth ** 2))
    if denom == 0.0:
        raise UndefinedMetricError("nmse is undefined for an all-zero reference")
    return float(np.sum((pred - truth) ** 2)) / denom


def _ssim_window() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-((np.arange(SSIM_WINDOW) - half) ** 2) / (2.0 * SSIM_SIGMA ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean of the local SSIM map between two images with values in [0, 1]."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ShapeError(f"ssim: shapes {pred.shape} vs {truth.shape}")
    if pred.ndim != 2:
        raise ShapeError(f"ssim expects 2-d images, got shape {pred.shape}")
    if min(pred.shape) < SSIM_WINDOW:
        raise ShapeError(f"image {pred.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    for name, img in (("pred", pred), ("truth", truth)):
        if img.min() < -1e-9 or img.max() > 1 + 1e-9:
            raise ValueError(f"{name} values outside [0, 1]: range "
                             f"[{img.min():.3g}, {img.max():.3g}]")

    w = _ssim_window()
    wx = np.lib.stride_tricks.sliding_window_view(pred, (SSIM_WINDOW, SSIM_WINDOW))
    wy = np.lib.stride_tricks.sliding_window_view(truth, (SSIM_WINDOW, SSIM_WINDOW))
    mx = np.tensordot(wx, w, axes=([2, 3], [0, 1]))
    my = np.tensordot(wy, w, axes=([2, 3], [0, 1]))
    mxx = np.tensordot(wx * wx, w, axes=([2, 3], [0, 1]))
    myy = np.tensordot(wy * wy, w, axes=([2, 3], [0, 1]))
    mxy = np.tensordot(wx * wy, w, axes=([2, 3], [0, 1]))
    vx = mxx - mx * mx
    vy = myy - my * my
    cov = mxy - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)
    return float(np.mean(num / den))


@dataclass
class MetricsReport:
    mean_nmse: float
    mean_ssim: float
    precision: np.ndarray        # per class, length 10
    recall: np.ndarray
    f1: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray        # [10, 10] ints, rows = truth, cols = prediction
    mean_inference_time_s: float = 0.0

    def to_text(self) -> str:
        lines = [
            f"mean NMSE : {self.mean_nmse:.6f}",
            f"mean SSIM : {self.mean_ssim:.6f}",
            f"inference : {self.mean_inference_time_s * 1e3:.3f} ms/sample",
            "",
            "class  precision  recall     f1         support",
        ]
        support = self.confusion.sum(axis=1)
        for c in range(10):
            lines.append(f"{c:<6d} {self.precision[c]:<10.4f} {self.recall[c]:<10.4f} "
                         f"{self.f1[c]:<10.4f} {support[c]:d}")
        lines += [
            "",
            f"macro  {self.macro_precision:<10.4f} {self.macro_recall:<10.4f} "
            f"{self.macro_f1:<10.4f} {int(support.sum())}",
            "",
            "confusion (rows = truth, cols = prediction):",
        ]
        for c in range(10):
            lines.append(" ".join(f"{v:4d}" for v in self.confusion[c]))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["metric,value",
                f"mean_nmse,{self.mean_nmse!r}",
                f"mean_ssim,{self.mean_ssim!r}",
                f"macro_precision,{self.macro_precision!r}",
                f"macro_recall,{self.macro_recall!r}",
                f"macro_f1,{self.macro_f1!r}"]
        for c in range(10):
            rows.append(f"precision_{c},{self.precision[c]!r}")
            rows.append(f"recall_{c},{self.recall[c]!r}")
            rows.append(f"f1_{c},{self.f1[c]!r}")
        rows.append(f"mean_inference_time_s,{self.mean_inference_time_s!r}")
        return "\n".join(rows) + "\n"


def classification_report(pred_labels, true_labels, n_classes: int = 10):
    """Per-class and macro precision/recall/F1 plus the confusion matrix.

    Macro averages are unweighted means over classes that appear in either
    the predictions or the truth; fully absent classes are excluded (logged).
    Returns (precision, recall, f1, macro_p, macro_r, macro_f1, confusion).
    """
    pred = np.asarray(pred_labels, dtype=np.int64).reshape(-1)
    true = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    if pred.size == 0 or pred.size != true.size:
        raise ValueError(f"label arrays must be equal-length and non-empty, "
                         f"got {pred.size} and {true.size}")
    if pred.min() < 0 or pred.max() >= n_classes or true.min() < 0 or true.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")

    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (true, pred), 1)

    tp = np.diag(confusion).astype(float)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0,
                      2 * precision * recall / (precision + recall), 0.0)

    present = (confusion.sum(axis=0) + confusion.sum(axis=1)) > 0
    absent = np.flatnonzero(~present)
    if absent.size:
        log.info("classes %s absent from predictions and truth; excluded from macro",
                 absent.tolist())
    macro_p = float(precision[present].mean())
    macro_r = float(recall[present].mean())
    macro_f1 = float(f1[present].mean())
    return precision, recall, f1, macro_p, macro_r, macro_f1, confusion


def build_report(nmse_values, ssim_values, pred_labels, true_labels,
                 mean_inference_time_s: float = 0.0) -> MetricsReport:
    p, r, f1, mp, mr, mf1, conf = classification_report(pred_labels, true_labels)
    return MetricsReport(
        mean_nmse=float(np.mean(nmse_values)),
        mean_ssim=float(np.mean(ssim_values)),
        precision=p, recall=r, f1=f1,
        macro_precision=mp, macro_recall=mr, macro_f1=mf1,
        confusion=conf, mean_inference_time_s=mean_inference_time_s,
    )
