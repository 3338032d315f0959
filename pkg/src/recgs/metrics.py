"""Image and caustic quality metrics against synthetic ground truth."""
from __future__ import annotations

import numpy as np

from .optim import LossConfig, ssim as _ssim


def psnr(pred, ref, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    mse = float(np.mean((np.asarray(pred, dtype=np.float64) - np.asarray(ref, dtype=np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def ssim(pred, ref) -> float:
    return _ssim(np.asarray(ref, dtype=np.float64), np.asarray(pred, dtype=np.float64), LossConfig())


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if den == 0.0:
        return float("nan")
    return float(np.dot(a, b) / den)


def l1(a, b) -> float:
    return float(np.mean(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def l2(a, b) -> float:
    """Root-mean-square difference."""
    return float(np.sqrt(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2)))


def relative_l2(est, ref) -> float:
    ref = np.asarray(ref, dtype=np.float64)
    den = np.linalg.norm(ref)
    if den == 0.0:
        return float("inf") if np.any(np.asarray(est) != 0) else 0.0
    return float(np.linalg.norm(np.asarray(est, dtype=np.float64) - ref) / den)


def brightness_drift(renders, clean) -> float:
    """|mean(render) - mean(clean)| over a whole sequence."""
    return float(abs(np.mean([np.mean(r) for r in renders]) - np.mean([np.mean(c) for c in clean])))


def evaluate(renders, clean, caustics=None, gt_caustics=None) -> dict:
    """Per-frame and aggregate metrics.

    Returns ``{"frames": [{name: value}], "summary": {name: value}}``.
    """
    frames = []
    for f, (r, c) in enumerate(zip(renders, clean)):
        row = dict(frame=f, psnr=psnr(r, c), ssim=ssim(r, c), brightness_drift=abs(float(np.mean(r) - np.mean(c))))
        if caustics is not None and gt_caustics is not None:
            est, gt = caustics[f], gt_caustics[f]
            row.update(caustic_l1=l1(est, gt), caustic_l2=l2(est, gt), caustic_rel_l2=relative_l2(est, gt),
                       caustic_pearson=pearson(est, gt))
        frames.append(row)
    summary = {}
    for key in frames[0]:
        if key == "frame":
            continue
        vals = np.array([row[key] for row in frames], dtype=np.float64)
        summary[f"mean_{key}"] = float(np.mean(vals))
        if key in ("caustic_pearson", "psnr", "ssim"):
            summary[f"min_{key}"] = float(np.min(vals))
        if key in ("caustic_rel_l2", "caustic_l2"):
            summary[f"max_{key}"] = float(np.max(vals))
    summary["brightness_drift"] = brightness_drift(renders, clean)
    return dict(frames=frames, summary=summary)


def format_value(v) -> str:
    v = float(v)
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def report_lines(report: dict) -> list[str]:
    """One ``name frame value`` line per metric, then the summary block."""
    lines = []
    for row in report["frames"]:
        for key, val in row.items():
            if key != "frame":
                lines.append(f"{key} {row['frame']} {format_value(val)}")
    lines.append("# summary")
    for key, val in report["summary"].items():
        lines.append(f"{key} all {format_value(val)}")
    return lines
