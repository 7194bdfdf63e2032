"""Keypoint detection-rate evaluation.

A joint counts as detected when the prediction lands within a fraction of
the person's torso diameter (left shoulder to right hip) of the ground
truth.  Curves sample 101 fractions uniformly over [0, 0.5]; the summary
number for a joint is the arithmetic mean of its curve samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import NUM_KEYPOINTS


NUM_THRESHOLDS = 101


def thresholds() -> np.ndarray:
    """The 101 evaluation fractions 0, 0.005, ..., 0.5."""
    return np.arange(NUM_THRESHOLDS) / 200.0


JOINT_GROUPS: dict[str, tuple[int, ...]] = {
    "head": (0,),
    "neck": (1,),
    "shoulders": (2, 3),
    "elbows": (4, 5),
    "wrists": (6, 7),
    "hips": (8, 9),
    "knees": (10, 11),
    "ankles": (12, 13),
}


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    predicted: np.ndarray      # (14, 2) px
    ground_truth: np.ndarray   # (14, 2) px
    torso: float
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        pred = np.ascontiguousarray(self.predicted, dtype=np.float64)
        gt = np.ascontiguousarray(self.ground_truth, dtype=np.float64)
        if pred.shape != (NUM_KEYPOINTS, 2) or gt.shape != (NUM_KEYPOINTS, 2):
            raise EvalError("predicted and ground truth must be (14, 2)")
        if not self.torso > 0:
            raise EvalError("torso diameter must be positive")
        pred.setflags(write=False)
        gt.setflags(write=False)
        object.__setattr__(self, "predicted", pred)
        object.__setattr__(self, "ground_truth", gt)


def joint_detected(pred, gt, torso: float, fraction: float) -> bool:
    """True when the error is within fraction * torso (boundary inclusive)."""
    if not torso > 0:
        raise EvalError("torso diameter must be positive")
    err = float(np.linalg.norm(np.asarray(pred, dtype=np.float64)
                               - np.asarray(gt, dtype=np.float64)))
    return err <= fraction * torso


@dataclass(frozen=True)
class PdjCurve:
    """Detection-rate curves for a set of joints.

    ``rates`` holds one 101-sample percentage curve per joint;  ``pooled``
    counts all selected joints together.  Averages are arithmetic means of
    the curve samples.
    """

    joints: tuple[int, ...]
    thresholds: np.ndarray
    rates: dict[int, np.ndarray]
    pooled: np.ndarray
    pdj_avg: dict[int, float]
    pooled_avg: float


def _normalized_errors(records: list[EvalRecord]) -> np.ndarray:
    errs = np.empty((len(records), NUM_KEYPOINTS))
    for i, rec in enumerate(records):
        errs[i] = (np.linalg.norm(rec.predicted - rec.ground_truth, axis=1)
                   / rec.torso)
    return errs


def pdj_curve(records: list[EvalRecord],
              joints: tuple[int, ...] | None = None) -> PdjCurve:
    if not records:
        raise EvalError("need at least one evaluation record")
    if joints is None:
        joints = tuple(range(NUM_KEYPOINTS))
    joints = tuple(joints)
    if not joints:
        raise EvalError("joint selection is empty")
    for j in joints:
        if not 0 <= j < NUM_KEYPOINTS:
            raise EvalError(f"joint index {j} out of range")
    thr = thresholds()
    errs = _normalized_errors(records)
    # detected[n, j, t]: record n's joint j within threshold t
    detected = errs[:, :, None] <= thr[None, None, :]
    rates = {}
    avg = {}
    for j in joints:
        curve = 100.0 * detected[:, j, :].mean(axis=0)
        rates[j] = curve
        avg[j] = float(curve.mean())
    pooled = 100.0 * detected[:, joints, :].mean(axis=(0, 1))
    return PdjCurve(joints, thr, rates, pooled, avg, float(pooled.mean()))


def pdj_avg(records: list[EvalRecord],
            joints: tuple[int, ...] | None = None) -> float:
    return pdj_curve(records, joints).pooled_avg


def split_by_category(records: list[EvalRecord],
                      categories: list[str]) -> dict[str, list[EvalRecord]]:
    """Bucket records by tag; anything matching no listed category lands in
    "untagged" rather than erroring."""
    out: dict[str, list[EvalRecord]] = {c: [] for c in categories}
    untagged: list[EvalRecord] = []
    for rec in records:
        matched = False
        for tag in rec.tags:
            if tag in out:
                out[tag].append(rec)
                matched = True
        if not matched:
            untagged.append(rec)
    if untagged:
        out["untagged"] = untagged
    return dict(out)


@dataclass(frozen=True)
class ReportRow:
    method: str
    category: str
    joint: str
    pdj_avg: float


def category_report(results: dict[str, list[EvalRecord]],
                    categories: list[str],
                    groups: dict[str, tuple[int, ...]] | None = None
                    ) -> list[ReportRow]:
    """One summary row per (method, category, joint group)."""
    if groups is None:
        groups = JOINT_GROUPS
    rows = []
    for method, records in results.items():
        buckets = split_by_category(records, categories)
        for category, subset in buckets.items():
            if not subset:
                continue
            for joint_name, joint_ids in groups.items():
                value = pdj_curve(subset, joint_ids).pooled_avg
                rows.append(ReportRow(method, category, joint_name, value))
    return rows


def report_csv(rows: list[ReportRow]) -> str:
    lines = ["method,category,joint,pdj_avg"]
    for row in rows:
        lines.append(f"{row.method},{row.category},{row.joint},{row.pdj_avg:.4f}")
    return "\n".join(lines) + "\n"


def curve_csv(curves: dict[str, PdjCurve]) -> str:
    """Per-method pooled curves as threshold rows (diffable plot data)."""
    methods = list(curves)
    lines = ["threshold," + ",".join(methods)]
    thr = thresholds()
    for t in range(NUM_THRESHOLDS):
        vals = ",".join(f"{curves[m].pooled[t]:.4f}" for m in methods)
        lines.append(f"{thr[t]:.3f},{vals}")
    return "\n".join(lines) + "\n"
