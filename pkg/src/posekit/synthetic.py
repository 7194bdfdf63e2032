"""Deterministic synthetic people on cluttered canvases.

Figures are stick people rendered as bright capsules over a textured
background, with exact keypoint ground truth.  Left and right limbs get
different stroke intensity and width so sides are visually (and in
gradient features) distinguishable; without that, left/right assignment
would be unlearnable by construction.

Pose families:
  upright   — small jitter around the canonical standing pose
  rotated   — the same skeleton rotated whole-body about the torso centre
  crossed   — legs crossed at the ankles (left ankle lands on the right
              side), the ambiguity the pelvis-linked tree is built for
  occluded  — one arm folded across the chest, overlapping the torso

Every family draw consumes the same random stream layout, so family
"rotated" with a pinned angle equals family "upright" rotated exactly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import graphs
from .annotations import AnnotationSet, PersonRecord, save_annotations

POSE_FAMILIES = ("upright", "rotated", "crossed", "occluded")

# Canonical standing skeleton, in units of person height, y down, origin at
# the torso centre.  Left-side keypoints sit at negative x on the canvas.
_CANON = {
    graphs.HEAD: (0.00, -0.42),
    graphs.NECK: (0.00, -0.30),
    graphs.L_SHOULDER: (-0.12, -0.27),
    graphs.R_SHOULDER: (0.12, -0.27),
    graphs.L_ELBOW: (-0.19, -0.12),
    graphs.R_ELBOW: (0.19, -0.12),
    graphs.L_WRIST: (-0.21, 0.03),
    graphs.R_WRIST: (0.21, 0.03),
    graphs.L_HIP: (-0.08, 0.00),
    graphs.R_HIP: (0.08, 0.00),
    graphs.L_KNEE: (-0.09, 0.22),
    graphs.R_KNEE: (0.09, 0.22),
    graphs.L_ANKLE: (-0.10, 0.44),
    graphs.R_ANKLE: (0.10, 0.44),
}

_LEFT_SIDE = {graphs.L_SHOULDER, graphs.L_ELBOW, graphs.L_WRIST,
              graphs.L_HIP, graphs.L_KNEE, graphs.L_ANKLE}


@dataclass(frozen=True)
class SyntheticScene:
    image: np.ndarray          # (H, W) float64 grayscale in [0, 1]
    record: PersonRecord
    family: str
    angle: float               # whole-body rotation actually applied
    center: tuple[float, float] = (0.0, 0.0)   # torso centre, rotation pivot


def _segment_distance(px, py, a, b):
    """Distance from each pixel to segment a-b (vectorized over the grid)."""
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    if seg2 == 0:
        return np.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / seg2
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _paint_capsule(img, a, b, radius: float, value: float):
    h, w = img.shape
    x0 = max(0, int(math.floor(min(a[0], b[0]) - radius - 1)))
    x1 = min(w, int(math.ceil(max(a[0], b[0]) + radius + 2)))
    y0 = max(0, int(math.floor(min(a[1], b[1]) - radius - 1)))
    y1 = min(h, int(math.ceil(max(a[1], b[1]) + radius + 2)))
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    d = _segment_distance(xs.astype(np.float64), ys.astype(np.float64), a, b)
    # Soft 1 px edge keeps gradients finite and stable.
    mask = np.clip(radius + 1.0 - d, 0.0, 1.0)
    region = img[y0:y1, x0:x1]
    np.maximum(region, value * mask, out=region)


def _background(size: tuple[int, int], rng: np.random.Generator,
                clutter: int) -> np.ndarray:
    h, w = size
    ys, xs = np.mgrid[0:h, 0:w]
    gx, gy = rng.uniform(-0.08, 0.08, size=2)
    img = 0.18 + gx * (xs / max(w - 1, 1) - 0.5) + gy * (ys / max(h - 1, 1) - 0.5)
    for _ in range(clutter):
        a = (rng.uniform(0, w - 1), rng.uniform(0, h - 1))
        ang = rng.uniform(0, 2 * math.pi)
        length = rng.uniform(0.1, 0.35) * min(h, w)
        b = (a[0] + length * math.cos(ang), a[1] + length * math.sin(ang))
        radius = rng.uniform(0.8, 2.0)
        value = rng.uniform(0.32, 0.55)
        _paint_capsule(img, a, b, radius, value)
    img += rng.normal(0.0, 0.015, size=(h, w))
    return np.clip(img, 0.0, 1.0)


# Canonical limb lengths (person-height units), from _CANON distances.
_UPPER_ARM = math.hypot(0.07, 0.15)
_FOREARM = math.hypot(0.02, 0.15)
_THIGH = math.hypot(0.01, 0.22)
_SHIN = math.hypot(0.01, 0.22)

# Upper-arm direction per regime, as the outward rotation away from
# straight down: hanging, straight out, raised overhead, akimbo.
_ARM_REGIMES = (0.0, math.pi / 2.0, math.pi, 0.45)


def _sample_skeleton(rng: np.random.Generator, size: tuple[int, int],
                     person_height: float) -> tuple[np.ndarray, np.ndarray]:
    """Varied-pose keypoints and the torso centre, canvas px.

    The torso frame is the jittered canonical pose; arms and legs are then
    re-posed from sampled joint angles (arms from one of four regimes) so
    scenes carry real intrinsic pose variation, not just pixel noise.  All
    draws happen in a fixed order, one layout for every family.
    """
    h, w = size
    height = person_height * rng.uniform(0.92, 1.08)
    # worst case reach: shoulder 0.27 + full arm raised ~0.34, plus jitter
    margin = 0.65 * height + 4.0
    cx = w / 2.0 + rng.uniform(-1.0, 1.0) * max(0.0, w / 2.0 - margin)
    cy = h / 2.0 + rng.uniform(-1.0, 1.0) * max(0.0, h / 2.0 - margin)
    kp = np.empty((graphs.NUM_KEYPOINTS, 2))
    for j in range(graphs.NUM_KEYPOINTS):
        ux, uy = _CANON[j]
        kp[j] = (cx + ux * height, cy + uy * height)
    kp += rng.normal(0.0, 0.008 * height, size=kp.shape)
    down = math.pi / 2.0
    for shoulder, elbow, wrist, outward in (
            (graphs.L_SHOULDER, graphs.L_ELBOW, graphs.L_WRIST, -1.0),
            (graphs.R_SHOULDER, graphs.R_ELBOW, graphs.R_WRIST, 1.0)):
        regime = int(rng.integers(len(_ARM_REGIMES)))
        upper_ang = down - outward * _ARM_REGIMES[regime] \
            + rng.normal(0.0, 0.15)
        if regime == 3:
            # forearm folds up and across the torso
            fore_ang = upper_ang - outward * (1.8 + rng.normal(0.0, 0.2))
        else:
            fore_ang = upper_ang + rng.normal(0.0, 0.3)
        lu = _UPPER_ARM * height * rng.uniform(0.95, 1.05)
        lf = _FOREARM * height * rng.uniform(0.95, 1.05)
        kp[elbow] = kp[shoulder] + lu * np.array(
            [math.cos(upper_ang), math.sin(upper_ang)])
        kp[wrist] = kp[elbow] + lf * np.array(
            [math.cos(fore_ang), math.sin(fore_ang)])
    for hip, knee, ankle in ((graphs.L_HIP, graphs.L_KNEE, graphs.L_ANKLE),
                             (graphs.R_HIP, graphs.R_KNEE, graphs.R_ANKLE)):
        thigh_ang = down + rng.normal(0.0, 0.14)
        shin_ang = thigh_ang + rng.normal(0.0, 0.28)
        lt = _THIGH * height * rng.uniform(0.95, 1.05)
        ls = _SHIN * height * rng.uniform(0.95, 1.05)
        kp[knee] = kp[hip] + lt * np.array(
            [math.cos(thigh_ang), math.sin(thigh_ang)])
        kp[ankle] = kp[knee] + ls * np.array(
            [math.cos(shin_ang), math.sin(shin_ang)])
    # keep each leg on its own side: the crossed transform mirrors ankles
    # about the hip midline, so an upright stance must never cross it
    mid_x = (kp[graphs.L_HIP, 0] + kp[graphs.R_HIP, 0]) / 2.0
    gap = 0.05 * height
    for joints, outward in (((graphs.L_KNEE, graphs.L_ANKLE), -1.0),
                            ((graphs.R_KNEE, graphs.R_ANKLE), 1.0)):
        for j in joints:
            if (kp[j, 0] - mid_x) * outward < gap:
                kp[j, 0] = mid_x + outward * gap
    return kp, np.array([cx, cy])


def _apply_family(kp: np.ndarray, center: np.ndarray, family: str,
                  angle: float) -> np.ndarray:
    kp = kp.copy()
    if family == "crossed":
        # Swap ankle sides and pull the knees inward: legs cross mid-shin.
        mid_x = (kp[graphs.L_HIP, 0] + kp[graphs.R_HIP, 0]) / 2.0
        la, ra = kp[graphs.L_ANKLE].copy(), kp[graphs.R_ANKLE].copy()
        kp[graphs.L_ANKLE] = (2 * mid_x - la[0] + (ra[0] - mid_x) * 0.2, la[1])
        kp[graphs.R_ANKLE] = (2 * mid_x - ra[0] + (la[0] - mid_x) * 0.2, ra[1])
        for knee in (graphs.L_KNEE, graphs.R_KNEE):
            kp[knee, 0] = mid_x + (kp[knee, 0] - mid_x) * 0.45
    elif family == "occluded":
        # Fold the right arm across the chest toward the left shoulder.
        kp[graphs.R_WRIST] = kp[graphs.L_SHOULDER] + np.array(
            [0.15, 0.35]) * np.linalg.norm(kp[graphs.NECK] - kp[graphs.R_HIP])
        kp[graphs.R_ELBOW] = 0.5 * (kp[graphs.R_SHOULDER] + kp[graphs.R_WRIST]) \
            + np.array([0.0, 6.0])
    if family == "rotated":
        c, s = math.cos(angle), math.sin(angle)
        d = kp - center
        kp = np.stack([c * d[:, 0] - s * d[:, 1],
                       s * d[:, 0] + c * d[:, 1]], axis=1) + center
    return kp


def _render_person(img: np.ndarray, kp: np.ndarray, height: float,
                   rng: np.random.Generator):
    base_radius = max(1.6, 0.030 * height)
    for a_idx, b_idx in graphs.SKELETON_BONES:
        left = a_idx in _LEFT_SIDE or b_idx in _LEFT_SIDE
        radius = base_radius * (1.35 if left else 0.85)
        value = (0.95 if left else 0.70) + rng.uniform(-0.03, 0.03)
        _paint_capsule(img, kp[a_idx], kp[b_idx], radius, value)
    head_r = 0.55 * float(np.linalg.norm(kp[graphs.HEAD] - kp[graphs.NECK]))
    _paint_capsule(img, kp[graphs.HEAD], kp[graphs.HEAD],
                   max(head_r, 2.0), 0.88)


def _root_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _scene_sequence(root: np.random.SeedSequence, i: int):
    # Same entropy and scene index give the same per-scene stream no matter
    # which family asks, which is what keeps families pairable.
    return np.random.SeedSequence(entropy=root.entropy,
                                  spawn_key=root.spawn_key + (i,))


def generate_synthetic(n: int, family: str, seed,
                       size: tuple[int, int] = (96, 96),
                       person_height: float | None = None,
                       angle_range: tuple[float, float] = (0.0, 2.0 * math.pi),
                       clutter: int = 5,
                       id_prefix: str | None = None) -> list[SyntheticScene]:
    """n scenes of one pose family, deterministic in (seed, parameters)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if family not in POSE_FAMILIES:
        raise ValueError(f"unknown pose family {family!r}; "
                         f"choose from {POSE_FAMILIES}")
    h, w = size
    if person_height is None:
        person_height = 0.75 * min(h, w)
    prefix = family if id_prefix is None else id_prefix
    scenes = []
    root = _root_sequence(seed)
    for i in range(n):
        rng = np.random.default_rng(_scene_sequence(root, i))
        # Fixed draw order across families keeps streams aligned, so the
        # rotated family is exactly the upright one rotated.
        kp, center = _sample_skeleton(rng, size, person_height)
        angle = rng.uniform(angle_range[0], angle_range[1])
        applied = angle if family == "rotated" else 0.0
        kp = _apply_family(kp, center, family, angle)
        img = _background(size, rng, clutter)
        _render_person(img, kp, person_height, rng)
        image_id = f"{prefix}_{i:04d}"
        record = PersonRecord(
            image=f"images/{image_id}.png",
            keypoints=np.clip(kp, (0.0, 0.0), (w - 1.0, h - 1.0)),
            visible=np.ones(graphs.NUM_KEYPOINTS, dtype=bool),
            image_id=image_id, person=0, size=(w, h),
            tags=(family,))
        scenes.append(SyntheticScene(img, record, family, applied,
                                     (float(center[0]), float(center[1]))))
    return scenes


def generate_negatives(n: int, seed, size: tuple[int, int] = (96, 96),
                       clutter: int = 10) -> list[np.ndarray]:
    """Clutter-only canvases for hard-negative mining."""
    root = _root_sequence(seed)
    out = []
    for i in range(n):
        rng = np.random.default_rng(_scene_sequence(root, i))
        out.append(_background(size, rng, clutter))
    return out


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / 255.0


def save_scenes(scenes: list[SyntheticScene], out_dir: str) -> str:
    """Write images/ and annotations.jsonl under out_dir; returns the
    annotation path.  Pixels round-trip through 8-bit PNG."""
    from PIL import Image

    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    records = []
    for scene in scenes:
        path = os.path.join(out_dir, scene.record.image)
        Image.fromarray(to_uint8(scene.image), mode="L").save(path)
        records.append(scene.record)
    ann_path = os.path.join(out_dir, "annotations.jsonl")
    save_annotations(AnnotationSet(records), ann_path)
    return ann_path


def load_scene_image(root_dir: str, record: PersonRecord) -> np.ndarray:
    from PIL import Image

    path = os.path.join(root_dir, record.image)
    with Image.open(path) as img:
        return from_uint8(np.asarray(img.convert("L")))
