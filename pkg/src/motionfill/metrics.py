"""Evaluation metrics over 3D joint sequences.

All functions take (T, J, 3) or (J, 3) arrays (numpy or torch) in meters and
joint index 0 as the root. Positional errors are reported in millimeters,
acceleration errors in mm/s^2, PCK values as percentages.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCloud, SequenceTooShort, ShapeMismatch

PCK_THRESHOLD_DEFAULT = 0.15  # meters


def _to_np(x):
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ShapeMismatch(f"expected (T, J, 3) joints, got {arr.shape}")
    return arr


def _paired(pred, gt):
    pred, gt = _to_np(pred), _to_np(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} and gt {gt.shape} disagree")
    return pred, gt


def _root_centered(x):
    return x - x[:, :1, :]


def mpjpe(pred, gt) -> float:
    """Root-centered mean per-joint position error in mm."""
    pred, gt = _paired(pred, gt)
    d = np.linalg.norm(_root_centered(pred) - _root_centered(gt), axis=-1)
    return float(d.mean() * 1000.0)


def procrustes_align(pred, gt):
    """Best similarity transform (scale, proper rotation, translation) of pred onto gt.

    Minimizes the summed squared distances; reflections are not allowed.

    Args:
        pred, gt: (J, 3) single-frame clouds.

    Returns:
        (J, 3) transformed pred.

    Raises:
        DegenerateCloud: either cloud has near-zero variance.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim != 2 or pred.shape != gt.shape or pred.shape[-1] != 3:
        raise ShapeMismatch("procrustes_align expects matching (J, 3) clouds")
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    p, g = pred - mu_p, gt - mu_g
    var_p = (p**2).sum() / len(p)
    if var_p < 1e-12 or (g**2).sum() / len(g) < 1e-12:
        raise DegenerateCloud("cannot align clouds with near-zero variance")
    cov = g.T @ p / len(p)
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    fix = np.diag([1.0, 1.0, d])
    rot = u @ fix @ vt
    scale = (s * np.diag(fix)).sum() / var_p
    return (scale * (rot @ pred.T)).T + (mu_g - scale * rot @ mu_p)


def pa_mpjpe(pred, gt) -> float:
    """MPJPE after per-frame Procrustes alignment, in mm."""
    pred, gt = _paired(pred, gt)
    total = 0.0
    for t in range(len(pred)):
        aligned = procrustes_align(pred[t], gt[t])
        total += np.linalg.norm(aligned - gt[t], axis=-1).mean()
    return float(total / len(pred) * 1000.0)


def accel_error(pred, gt, fps: float) -> float:
    """Mean norm of the acceleration difference, in mm/s^2.

    Acceleration is the second finite difference scaled by fps^2, computed
    on absolute joint positions.
    """
    pred, gt = _paired(pred, gt)
    if len(pred) < 3:
        raise SequenceTooShort("acceleration needs at least three frames")
    if fps <= 0:
        raise ValueError("fps must be positive")
    ap = (pred[2:] - 2.0 * pred[1:-1] + pred[:-2]) * fps**2
    ag = (gt[2:] - 2.0 * gt[1:-1] + gt[:-2]) * fps**2
    return float(np.linalg.norm(ap - ag, axis=-1).mean() * 1000.0)


def pck3d(pred, gt, threshold: float = PCK_THRESHOLD_DEFAULT, procrustes: bool = False) -> float:
    """Percentage of root-centered joints strictly within threshold meters."""
    pred, gt = _paired(pred, gt)
    if procrustes:
        pred = np.stack([procrustes_align(pred[t], gt[t]) for t in range(len(pred))])
        d = np.linalg.norm(pred - gt, axis=-1)
    else:
        d = np.linalg.norm(_root_centered(pred) - _root_centered(gt), axis=-1)
    return float((d < threshold).mean() * 100.0)


@dataclass
class MetricRow:
    """One evaluated (sequence, method) pair."""

    sequence: str
    method: str
    mpjpe_mm: float
    pa_mpjpe_mm: float
    accel_err_mm_s2: float
    pck3d_pct: float
    pa_pck3d_pct: float


def compute_metrics(pred, gt, fps: float) -> dict:
    """All standard metrics for one joint sequence; keys match MetricRow fields."""
    return {
        "mpjpe_mm": mpjpe(pred, gt),
        "pa_mpjpe_mm": pa_mpjpe(pred, gt),
        "accel_err_mm_s2": accel_error(pred, gt, fps),
        "pck3d_pct": pck3d(pred, gt),
        "pa_pck3d_pct": pck3d(pred, gt, procrustes=True),
    }


def evaluate_sequence(name: str, method: str, pred, gt, fps: float) -> MetricRow:
    return MetricRow(sequence=name, method=method, **compute_metrics(pred, gt, fps))


def mean_row(rows, sequence: str = "mean") -> MetricRow:
    """Unweighted mean of rows sharing a method."""
    if not rows:
        raise ValueError("no rows to average")
    methods = {r.method for r in rows}
    method = methods.pop() if len(methods) == 1 else "all"
    fields = ("mpjpe_mm", "pa_mpjpe_mm", "accel_err_mm_s2", "pck3d_pct", "pa_pck3d_pct")
    means = {f: float(np.mean([getattr(r, f) for r in rows])) for f in fields}
    return MetricRow(sequence=sequence, method=method, **means)


CSV_FIELDS = ("sequence", "method", "mpjpe_mm", "pa_mpjpe_mm", "accel_err_mm_s2", "pck3d_pct", "pa_pck3d_pct")


def write_report_csv(path: str, rows) -> None:
    """Write MetricRows to CSV with a fixed header."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for r in rows:
            writer.writerow([getattr(r, f) for f in CSV_FIELDS])
    os.replace(tmp, path)


def read_report_csv(path: str):
    """Read rows written by write_report_csv."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                MetricRow(
                    sequence=rec["sequence"],
                    method=rec["method"],
                    **{f: float(rec[f]) for f in CSV_FIELDS[2:]},
                )
            )
    return rows
