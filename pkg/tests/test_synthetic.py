import math

import numpy as np
import pytest

from posekit.annotations import load_annotations, torso_diameter
from posekit.graphs import (L_ANKLE, L_HIP, L_KNEE, L_SHOULDER, L_WRIST,
                            R_ANKLE, R_HIP, R_KNEE, R_SHOULDER, R_WRIST)
from posekit.synthetic import (POSE_FAMILIES, SyntheticScene,
                               from_uint8, generate_negatives,
                               generate_synthetic, load_scene_image,
                               save_scenes, to_uint8)


def test_families_and_validation():
    assert POSE_FAMILIES == ("upright", "rotated", "crossed", "occluded")
    with pytest.raises(ValueError, match="family"):
        generate_synthetic(1, "sideways", seed=0)
    with pytest.raises(ValueError):
        generate_synthetic(0, "upright", seed=0)


def test_generation_is_deterministic():
    a = generate_synthetic(3, "upright", seed=7)
    b = generate_synthetic(3, "upright", seed=7)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.image, sb.image)
        assert np.array_equal(sa.record.keypoints, sb.record.keypoints)
        assert sa.angle == sb.angle
    c = generate_synthetic(3, "upright", seed=8)
    assert not np.array_equal(a[0].image, c[0].image)


def test_scene_basics():
    scenes = generate_synthetic(4, "upright", seed=1, size=(96, 80))
    assert len(scenes) == 4
    for i, s in enumerate(scenes):
        assert s.image.shape == (96, 80)
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert s.record.image_id == f"upright_{i:04d}"
        assert s.record.tags == ("upright",)
        assert s.record.size == (80, 96)
        assert s.record.visible.all()
        assert torso_diameter(s.record.keypoints) > 10.0


def test_rotated_family_is_upright_rotated():
    """Same seed, fixed draw order: the rotated skeleton is exactly the
    upright one turned about the torso centre by the recorded angle."""
    upright = generate_synthetic(5, "upright", seed=11)
    rotated = generate_synthetic(5, "rotated", seed=11)
    for u, r in zip(upright, rotated):
        assert u.angle == 0.0
        center = np.array(r.center)
        c, s = math.cos(r.angle), math.sin(r.angle)
        d = u.record.keypoints - center
        expect = np.stack([c * d[:, 0] - s * d[:, 1],
                           s * d[:, 0] + c * d[:, 1]], axis=1) + center
        expect = np.clip(expect, (0.0, 0.0), (95.0, 95.0))
        assert np.abs(r.record.keypoints - expect).max() < 1e-9


def test_rotated_angles_cover_range():
    scenes = generate_synthetic(12, "rotated", seed=3,
                                angle_range=(math.radians(30),
                                             math.radians(330)))
    angles = [s.angle for s in scenes]
    assert min(angles) >= math.radians(30)
    assert max(angles) <= math.radians(330)
    assert max(angles) - min(angles) > math.radians(90)


def test_left_side_renders_brighter():
    """The side cue the part types latch onto: left limbs are thicker and
    brighter than their right twins near each keypoint."""
    scenes = generate_synthetic(6, "upright", seed=5, clutter=0)
    pairs = [(L_SHOULDER, R_SHOULDER), (L_KNEE, R_KNEE), (L_ANKLE, R_ANKLE)]
    wins = 0
    total = 0
    for s in scenes:
        for left, right in pairs:
            lx, ly = s.record.keypoints[left]
            rx, ry = s.record.keypoints[right]
            patch = 3

            def peak(x, y):
                xi, yi = int(round(x)), int(round(y))
                return s.image[max(0, yi - patch):yi + patch + 1,
                               max(0, xi - patch):xi + patch + 1].max()

            total += 1
            if peak(lx, ly) > peak(rx, ry):
                wins += 1
    assert wins == total


def test_crossed_family_swaps_ankles():
    upright = generate_synthetic(6, "upright", seed=9)
    crossed = generate_synthetic(6, "crossed", seed=9)
    for u, c in zip(upright, crossed):
        uk, ck = u.record.keypoints, c.record.keypoints
        # upright ankles sit on their own side; crossed ankles swap sides
        mid = (uk[L_HIP, 0] + uk[R_HIP, 0]) / 2.0
        assert uk[L_ANKLE, 0] < mid < uk[R_ANKLE, 0]
        assert ck[L_ANKLE, 0] > mid > ck[R_ANKLE, 0]
        # heights are untouched
        assert ck[L_ANKLE, 1] == pytest.approx(uk[L_ANKLE, 1])
        # knees pull toward the midline
        assert abs(ck[L_KNEE, 0] - mid) < abs(uk[L_KNEE, 0] - mid)


def test_occluded_family_folds_right_arm():
    upright = generate_synthetic(6, "upright", seed=13)
    occluded = generate_synthetic(6, "occluded", seed=13)
    for u, o in zip(upright, occluded):
        shift = np.linalg.norm(o.record.keypoints[R_WRIST]
                               - u.record.keypoints[R_WRIST])
        d_wrist = np.linalg.norm(o.record.keypoints[R_WRIST]
                                 - o.record.keypoints[L_SHOULDER])
        base = np.linalg.norm(u.record.keypoints[R_WRIST]
                              - u.record.keypoints[L_SHOULDER])
        assert shift > 1.0
        assert d_wrist < base


def test_negatives_deterministic_and_bounded():
    a = generate_negatives(3, seed=2, size=(64, 48))
    b = generate_negatives(3, seed=2, size=(64, 48))
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
        assert x.shape == (64, 48)
        assert x.min() >= 0.0 and x.max() <= 1.0


def test_uint8_round_trip():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, size=(20, 20))
    once = from_uint8(to_uint8(img))
    assert np.abs(once - img).max() <= 0.5 / 255.0 + 1e-12
    assert np.array_equal(to_uint8(once), to_uint8(img))


def test_save_and_load_round_trip(tmp_path):
    scenes = generate_synthetic(3, "crossed", seed=4, size=(48, 48))
    ann_path = save_scenes(scenes, str(tmp_path))
    loaded = load_annotations(ann_path)
    assert len(loaded) == 3
    for scene, rec in zip(scenes, loaded):
        assert rec.image_id == scene.record.image_id
        assert np.array_equal(rec.keypoints, scene.record.keypoints)
        assert rec.tags == ("crossed",)
        img = load_scene_image(str(tmp_path), rec)
        assert img.shape == scene.image.shape
        # 8-bit quantization is the only loss
        assert np.abs(img - scene.image).max() <= 0.5 / 255.0 + 1e-12
