"""Pose and translation error metrics.

Angles are reported in degrees, distances in centimeters.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .body import geodesic_angle, global_transforms, load_skeleton

SIP_JOINTS = ("left_shoulder", "right_shoulder", "left_hip", "right_hip")
DIST_WINDOWS = (4, 8, 12, 16, 20)
SPAN_TOL = 1e-9


def _skeleton(skeleton):
    return load_skeleton() if skeleton is None else skeleton


def _global_angles(theta_pred, theta_gt, skeleton):
    _, r_pred = global_transforms(skeleton, np.atleast_2d(theta_pred))
    _, r_gt = global_transforms(skeleton, np.atleast_2d(theta_gt))
    return np.degrees(geodesic_angle(r_pred, r_gt))


def sip_error(theta_pred, theta_gt, skeleton=None):
    """Mean global rotation error over shoulders and hips, in degrees."""
    skeleton = _skeleton(skeleton)
    ang = _global_angles(theta_pred, theta_gt, skeleton)
    return float(np.mean(ang[:, [skeleton.index(n) for n in SIP_JOINTS]]))


def angle_error(theta_pred, theta_gt, skeleton=None):
    """Mean global rotation error over all joints, in degrees."""
    return float(np.mean(_global_angles(theta_pred, theta_gt, _skeleton(skeleton))))


def joint_error(theta_pred, theta_gt, skeleton=None):
    """Root-aligned mean per-joint position error, in cm."""
    skeleton = _skeleton(skeleton)
    p_pred, _ = global_transforms(skeleton, np.atleast_2d(theta_pred))
    p_gt, _ = global_transforms(skeleton, np.atleast_2d(theta_gt))
    p_pred = p_pred - p_pred[:, :1]
    p_gt = p_gt - p_gt[:, :1]
    return float(np.mean(np.linalg.norm(p_pred - p_gt, axis=-1)) * 100.0)


def span_pairs(trans_gt, span_m):
    """Frame pairs (s, e) where e is the first frame whose path length from s reaches ``span_m``."""
    trans_gt = np.asarray(trans_gt, dtype=float)
    steps = np.linalg.norm(np.diff(trans_gt, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    ends = np.searchsorted(cum, cum + span_m - SPAN_TOL, side="left")
    starts = np.arange(len(cum))
    ok = ends < len(cum)
    return starts[ok], ends[ok]


def translation_error_at(trans_pred, trans_gt, span_m):
    """Mean error of the relative displacement over ground-truth spans of ``span_m`` meters, in cm.

    NaN when the ground-truth path never covers that distance.
    """
    trans_pred = np.asarray(trans_pred, dtype=float)
    trans_gt = np.asarray(trans_gt, dtype=float)
    s, e = span_pairs(trans_gt, span_m)
    if len(s) == 0:
        return math.nan
    err = (trans_pred[e] - trans_pred[s]) - (trans_gt[e] - trans_gt[s])
    return float(np.mean(np.linalg.norm(err, axis=1)) * 100.0)


def translation_error_curve(trans_pred, trans_gt, spans=None):
    """(span_m, error_cm) series for a cumulative translation-error plot."""
    spans = np.arange(0.5, 6.01, 0.5) if spans is None else np.asarray(spans, dtype=float)
    return [(float(s), translation_error_at(trans_pred, trans_gt, s)) for s in spans]


def inter_person_distance(root1, root2):
    return np.linalg.norm(np.asarray(root1, dtype=float) - np.asarray(root2, dtype=float), axis=-1)


def dist_err_window(pred1, pred2, gt1, gt2, window_s, fps=60.0, mode="mean"):
    """Inter-person distance error over the first ``window_s`` seconds, in cm.

    ``mode="mean"`` averages over every frame with elapsed time <= window_s;
    ``mode="instant"`` reports the error at the frame closest to window_s.
    Inputs are world root positions (L, 3).
    """
    err = np.abs(inter_person_distance(pred1, pred2) - inter_person_distance(gt1, gt2))
    last = min(int(math.floor(window_s * fps + 1e-9)), len(err) - 1)
    if mode == "mean":
        return float(np.mean(err[: last + 1]) * 100.0)
    if mode == "instant":
        return float(err[last] * 100.0)
    raise ValueError(f"unknown window mode {mode!r}")


def rmse_mae(dist_pred, dist_gt):
    """RMSE and MAE of a distance series, in cm."""
    d = np.asarray(dist_pred, dtype=float) - np.asarray(dist_gt, dtype=float)
    return float(np.sqrt(np.mean(d * d)) * 100.0), float(np.mean(np.abs(d)) * 100.0)


@dataclass
class MetricReport:
    sequence: str = ""
    sip_deg: float = 0.0
    angle_deg: float = 0.0
    joint_cm: float = 0.0
    trans_at_3m_cm: float = 0.0
    trans_at_6m_cm: float = 0.0
    dist_err_4s_cm: float = 0.0
    dist_err_8s_cm: float = 0.0
    dist_err_12s_cm: float = 0.0
    dist_err_16s_cm: float = 0.0
    dist_err_20s_cm: float = 0.0
    rmse_cm: float = 0.0
    mae_cm: float = 0.0

    @classmethod
    def columns(cls):
        return [f.name for f in fields(cls)]

    def values(self):
        return [v for k, v in asdict(self).items() if k != "sequence"]


def evaluate_pair(theta_pred, theta_gt, root_pred, root_gt, fps, skeleton=None, sequence="", mode="mean"):
    """Metrics for a two-person sequence.

    ``theta_*`` and ``root_*`` are two-element lists (one entry per person);
    roots are world positions. Pose and translation metrics are averaged over
    both people.
    """
    skeleton = _skeleton(skeleton)
    pose = [
        (sip_error(tp, tg, skeleton), angle_error(tp, tg, skeleton), joint_error(tp, tg, skeleton))
        for tp, tg in zip(theta_pred, theta_gt)
    ]
    tr3 = [translation_error_at(rp, rg, 3.0) for rp, rg in zip(root_pred, root_gt)]
    tr6 = [translation_error_at(rp, rg, 6.0) for rp, rg in zip(root_pred, root_gt)]
    windows = {
        f"dist_err_{w}s_cm": dist_err_window(*root_pred, *root_gt, w, fps, mode) for w in DIST_WINDOWS
    }
    rmse, mae = rmse_mae(inter_person_distance(*root_pred), inter_person_distance(*root_gt))
    pose = np.mean(pose, axis=0)
    return MetricReport(
        sequence=sequence,
        sip_deg=float(pose[0]),
        angle_deg=float(pose[1]),
        joint_cm=float(pose[2]),
        trans_at_3m_cm=_nanmean(tr3),
        trans_at_6m_cm=_nanmean(tr6),
        rmse_cm=rmse,
        mae_cm=mae,
        **windows,
    )


def _nanmean(values):
    vals = [v for v in values if not math.isnan(v)]
    return float(np.mean(vals)) if vals else math.nan


def write_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MetricReport.columns())
        for r in reports:
            w.writerow([r.sequence] + [repr(float(v)) for v in r.values()])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        MetricReport(**{k: (v if k == "sequence" else float(v)) for k, v in row.items()}) for row in rows
    ]


def aggregate(reports):
    """Mean of every metric over sequences (NaN entries skipped)."""
    cols = MetricReport.columns()[1:]
    table = np.array([r.values() for r in reports], dtype=float)
    return {c: _nanmean(list(table[:, k])) for k, c in enumerate(cols)}


def write_summary(reports, path):
    doc = {"sequences": len(reports), "mean": aggregate(reports)}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
