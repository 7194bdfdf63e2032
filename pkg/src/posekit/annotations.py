"""Person annotations: a line-delimited JSON schema and its derived geometry.

Each line of an annotation file is one person record:

    {"image": "images/scene_000.png",          relative path
     "image_id": "scene_000",                  optional, defaults to the stem
     "person": 0,                              optional, index within image
     "size": [width, height],                  optional, px, enables clamping
     "keypoints": [[x, y, visible], ... 14],   px, fixed order (see graphs)
     "tags": ["upright"]}                      optional category tags

Keypoint order is head, neck, L/R shoulder, L/R elbow, L/R wrist, L/R hip,
L/R knee, L/R ankle.  Files are UTF-8; floats round-trip exactly through
json repr, so save(load(path)) is byte-stable.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import graphs
from .graphs import NUM_KEYPOINTS, ORIENTATION_BONES, PartGraph


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class PersonRecord:
    image: str
    keypoints: np.ndarray          # (14, 2) float64, px
    visible: np.ndarray            # (14,) bool
    image_id: str
    person: int = 0
    size: tuple[int, int] | None = None   # (width, height)
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        kp = np.ascontiguousarray(self.keypoints, dtype=np.float64)
        vis = np.ascontiguousarray(self.visible, dtype=bool)
        if kp.shape != (NUM_KEYPOINTS, 2):
            raise AnnotationError(
                f"keypoints must be ({NUM_KEYPOINTS}, 2), got {kp.shape}")
        if vis.shape != (NUM_KEYPOINTS,):
            raise AnnotationError("visible must have one flag per keypoint")
        kp.setflags(write=False)
        vis.setflags(write=False)
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "visible", vis)


@dataclass
class AnnotationSet:
    records: list[PersonRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, idx) -> PersonRecord:
        return self.records[idx]


def _record_to_json(rec: PersonRecord) -> str:
    obj = {
        "image": rec.image,
        "image_id": rec.image_id,
        "person": rec.person,
        "keypoints": [
            [float(x), float(y), int(v)]
            for (x, y), v in zip(rec.keypoints, rec.visible)
        ],
    }
    if rec.size is not None:
        obj["size"] = [int(rec.size[0]), int(rec.size[1])]
    if rec.tags:
        obj["tags"] = list(rec.tags)
    return json.dumps(obj, sort_keys=True)


def save_annotations(annotations: AnnotationSet, path: str):
    lines = [_record_to_json(rec) for rec in annotations]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))
        if lines:
            fh.write("\n")


def _parse_record(obj, line_no: int) -> PersonRecord:
    if not isinstance(obj, dict):
        raise AnnotationError(f"line {line_no}: record must be a JSON object")
    try:
        image = obj["image"]
        raw_kp = obj["keypoints"]
    except KeyError as exc:
        raise AnnotationError(f"line {line_no}: missing field {exc}") from None
    if not isinstance(image, str) or not image:
        raise AnnotationError(f"line {line_no}: image must be a nonempty string")
    if not isinstance(raw_kp, list) or len(raw_kp) != NUM_KEYPOINTS:
        raise AnnotationError(
            f"line {line_no}: keypoints must list {NUM_KEYPOINTS} entries")
    kp = np.empty((NUM_KEYPOINTS, 2))
    vis = np.empty(NUM_KEYPOINTS, dtype=bool)
    for i, entry in enumerate(raw_kp):
        if (not isinstance(entry, list) or len(entry) != 3
                or not all(isinstance(v, (int, float)) for v in entry)):
            raise AnnotationError(
                f"line {line_no}: keypoint {i} must be [x, y, visible]")
        kp[i] = (entry[0], entry[1])
        vis[i] = bool(entry[2])
    if not np.isfinite(kp).all():
        raise AnnotationError(f"line {line_no}: non-finite keypoint coordinate")
    size = obj.get("size")
    if size is not None:
        if (not isinstance(size, list) or len(size) != 2
                or not all(isinstance(v, int) and v > 0 for v in size)):
            raise AnnotationError(f"line {line_no}: size must be [width, height]")
        size = (size[0], size[1])
        w, h = size
        clamped = kp.copy()
        clamped[:, 0] = np.clip(clamped[:, 0], 0.0, w - 1.0)
        clamped[:, 1] = np.clip(clamped[:, 1], 0.0, h - 1.0)
        if not np.array_equal(clamped, kp):
            bad = np.flatnonzero(np.any(clamped != kp, axis=1))
            warnings.warn(
                f"line {line_no}: keypoints {bad.tolist()} outside the "
                f"{w}x{h} image were clamped",
                stacklevel=3,
            )
            kp = clamped
    image_id = obj.get("image_id")
    if image_id is None:
        image_id = os.path.splitext(os.path.basename(image))[0]
    tags = obj.get("tags", [])
    if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
        raise AnnotationError(f"line {line_no}: tags must be strings")
    person = obj.get("person", 0)
    if not isinstance(person, int) or person < 0:
        raise AnnotationError(f"line {line_no}: person must be a non-negative int")
    return PersonRecord(image=image, keypoints=kp, visible=vis,
                        image_id=str(image_id), person=person, size=size,
                        tags=tuple(tags))


def load_annotations(path: str) -> AnnotationSet:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AnnotationError(f"line {line_no}: invalid JSON ({exc.msg})")
            records.append(_parse_record(obj, line_no))
    return AnnotationSet(records)


# -- derived geometry ---------------------------------------------------


def torso_diameter(keypoints: np.ndarray) -> float:
    """Left-shoulder-to-right-hip distance; the scale unit used throughout."""
    d = float(np.linalg.norm(
        np.asarray(keypoints)[graphs.L_SHOULDER]
        - np.asarray(keypoints)[graphs.R_HIP]))
    if d <= 0.0:
        raise AnnotationError("degenerate torso: left shoulder and right hip coincide")
    return d


# Aux nodes take their clustering orientation from the keypoint they shadow.
_AUX_REFERENCE = {
    "pelvis_left": graphs.L_HIP,
    "pelvis_right": graphs.R_HIP,
    "head_mirror": graphs.HEAD,
}


def part_reference_keypoint(part) -> int | None:
    if part.keypoint is not None:
        return part.keypoint
    return _AUX_REFERENCE.get(part.name)


@dataclass(frozen=True)
class GraphInstance:
    """One person's annotation resolved onto a specific part graph.

    Arrays are indexed by part id.  Auxiliary nodes get synthesized points:
    the pelvis pair sits at the hip midpoint pushed toward each hip, and
    the two head nodes straddle the head keypoint across the neck-to-head
    axis so their midpoint recovers it at any body rotation.
    """

    image_id: str
    person: int
    points: np.ndarray         # (num_parts, 2) px
    visible: np.ndarray        # (num_parts,) bool
    orientations: np.ndarray   # (num_parts,) radians
    torso: float
    tags: tuple[str, ...] = ()


def graph_instance(record: PersonRecord, graph: PartGraph,
                   pelvis_offset: float = 0.15,
                   head_offset: float = 0.5) -> GraphInstance:
    """Resolve a 14-keypoint record to per-part points for one tree.

    ``pelvis_offset`` is the pelvis-node push-out as a fraction of the
    torso diameter; ``head_offset`` scales the head-node split by the
    head-to-neck distance.
    """
    kp = record.keypoints
    vis = record.visible
    torso = torso_diameter(kp)
    n = graph.num_parts
    points = np.zeros((n, 2))
    visible = np.zeros(n, dtype=bool)
    orientations = np.zeros(n)
    hip_mid = (kp[graphs.L_HIP] + kp[graphs.R_HIP]) / 2.0
    hip_span = kp[graphs.L_HIP] - hip_mid
    span_norm = float(np.linalg.norm(hip_span))
    hip_dir = hip_span / span_norm if span_norm > 0 else np.array([1.0, 0.0])
    hips_visible = bool(vis[graphs.L_HIP] and vis[graphs.R_HIP])
    head_vec = kp[graphs.HEAD] - kp[graphs.NECK]
    head_norm = float(np.linalg.norm(head_vec))
    # body-left perpendicular of the neck-to-head bone; upright => (-1, 0)
    head_dir = (np.array([head_vec[1], -head_vec[0]]) / head_norm
                if head_norm > 0 else np.array([-1.0, 0.0]))
    head_split = head_offset * head_norm
    head_visible = bool(vis[graphs.HEAD] and vis[graphs.NECK])
    split_heads = graph.variant is graphs.TreeVariant.LOWER_CONSTRAINED
    for part in graph.parts:
        pid = part.part_id
        if part.keypoint is not None:
            points[pid] = kp[part.keypoint]
            visible[pid] = vis[part.keypoint]
            if split_heads and part.keypoint == graphs.HEAD:
                points[pid] = kp[graphs.HEAD] + head_split * head_dir
                visible[pid] = head_visible
        elif part.name == "pelvis_left":
            points[pid] = hip_mid + pelvis_offset * torso * hip_dir
            visible[pid] = hips_visible
        elif part.name == "pelvis_right":
            points[pid] = hip_mid - pelvis_offset * torso * hip_dir
            visible[pid] = hips_visible
        elif part.name == "head_mirror":
            points[pid] = kp[graphs.HEAD] - head_split * head_dir
            visible[pid] = head_visible
        else:
            raise AnnotationError(
                f"part {part.name!r} has no keypoint binding and no "
                f"synthesis rule"
            )
        ref = part_reference_keypoint(part)
        if ref is not None:
            a, b = ORIENTATION_BONES[ref]
            d = kp[b] - kp[a]
            orientations[pid] = math.atan2(d[1], d[0])
    points.setflags(write=False)
    visible.setflags(write=False)
    orientations.setflags(write=False)
    return GraphInstance(record.image_id, record.person, points, visible,
                         orientations, torso, record.tags)


def rotate_record(record: PersonRecord, alpha: float,
                  center: np.ndarray | None = None) -> PersonRecord:
    """A copy of the record with keypoints rotated by alpha about a center
    (default: the hip midpoint).  Used by augmentation and tests."""
    kp = record.keypoints
    if center is None:
        center = (kp[graphs.L_HIP] + kp[graphs.R_HIP]) / 2.0
    c, s = math.cos(alpha), math.sin(alpha)
    d = kp - center
    rotated = np.stack(
        [c * d[:, 0] - s * d[:, 1], s * d[:, 0] + c * d[:, 1]], axis=1) + center
    return replace(record, keypoints=rotated)
