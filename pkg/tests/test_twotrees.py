import numpy as np
import pytest

from helpers import random_model, random_pyramid
from posekit.graphs import (BodyHalf, lower_constrained_graph,
                            upper_constrained_graph)
from posekit.inference import Evidence, clamp_inference, infer_max
from posekit.model import pose_keypoints, zero_model
from posekit.twotrees import TwoTreeModel, two_tree_estimate

UPPER = upper_constrained_graph(1)
LOWER = lower_constrained_graph(1)


def _models(rng, nslots=1, image_px=24):
    pyr = random_pyramid(rng, image_px, nslots=nslots)
    rotated = nslots > 1
    lower = random_model(rng, LOWER, pyr.channels, 3, rotated, nslots)
    upper = random_model(rng, UPPER, pyr.channels, 3, rotated, nslots)
    return TwoTreeModel(lower=lower, upper=upper), pyr


def test_model_validation():
    up = zero_model(UPPER, 3, 8)
    low = zero_model(LOWER, 3, 8)
    with pytest.raises(ValueError, match="lower-constrained"):
        TwoTreeModel(lower=up, upper=up)
    with pytest.raises(ValueError, match="upper-constrained"):
        TwoTreeModel(lower=low, upper=low)
    with pytest.raises(ValueError, match="rotation"):
        TwoTreeModel(lower=zero_model(LOWER, 3, 8, rotated=True),
                     upper=up)
    with pytest.raises(ValueError, match="orientation"):
        TwoTreeModel(
            lower=zero_model(LOWER, 3, 8, rotated=True, orientation_count=4),
            upper=zero_model(UPPER, 3, 8, rotated=True, orientation_count=6))
    with pytest.raises(ValueError, match="channels"):
        TwoTreeModel(lower=zero_model(LOWER, 3, 9), upper=up)
    combo = TwoTreeModel(lower=low, upper=up)
    assert combo.orientation_count == 1 and combo.rotated is False


def test_lower_body_is_bit_identical_to_lower_tree():
    rng = np.random.default_rng(40)
    models, pyr = _models(rng)
    result = two_tree_estimate(models, pyr)
    solo = infer_max(models.lower, pyr)
    assert result.lower.score == solo.score
    assert result.lower.pose.lattice_key() == solo.pose.lattice_key()
    for part in UPPER.lower_keypoint_parts():
        twin = LOWER.keypoint_part(part.keypoint)
        assert (result.pose.placements[part.part_id]
                == solo.pose.placements[twin.part_id])


def test_upper_half_comes_from_clamped_upper_pass():
    rng = np.random.default_rng(41)
    models, pyr = _models(rng)
    result = two_tree_estimate(models, pyr)
    assert result.score == result.upper.score
    assert result.upper.score <= infer_max(models.upper, pyr).score + 1e-9
    for part in UPPER.parts:
        if part.body_half is BodyHalf.UPPER:
            assert (result.pose.placements[part.part_id]
                    == result.upper.pose.placements[part.part_id])


def test_clamp_pins_lower_keypoints_of_upper_pass():
    rng = np.random.default_rng(42)
    models, pyr = _models(rng, nslots=4)
    result = two_tree_estimate(models, pyr)
    assert result.upper.level == result.lower.level
    for part in UPPER.lower_keypoint_parts():
        twin = LOWER.keypoint_part(part.keypoint)
        up = result.upper.pose.placements[part.part_id]
        lo = result.lower.pose.placements[twin.part_id]
        assert up.anchor == lo.anchor
        assert up.slot == lo.slot


def test_empty_evidence_reduces_to_unconstrained():
    rng = np.random.default_rng(43)
    models, pyr = _models(rng)
    base = infer_max(models.upper, pyr)
    det = clamp_inference(models.upper, pyr, Evidence(0, {}))
    assert det.score == base.score
    assert det.pose.lattice_key() == base.pose.lattice_key()


def test_reverse_order_ablation():
    rng = np.random.default_rng(44)
    models, pyr = _models(rng)
    result = two_tree_estimate(models, pyr, lower_first=False)
    solo_upper = infer_max(models.upper, pyr)
    assert result.upper.score == solo_upper.score
    assert result.score == result.lower.score
    assert set(result.pose.placements) == {p.part_id for p in UPPER.parts}
    for part in UPPER.parts:
        if part.body_half is BodyHalf.UPPER:
            assert (result.pose.placements[part.part_id]
                    == solo_upper.pose.placements[part.part_id])
        else:
            twin = LOWER.keypoint_part(part.keypoint)
            assert (result.pose.placements[part.part_id]
                    == result.lower.pose.placements[twin.part_id])


def test_stitched_pose_reads_out_as_keypoints():
    rng = np.random.default_rng(45)
    models, pyr = _models(rng)
    result = two_tree_estimate(models, pyr)
    kp = pose_keypoints(result.pose, UPPER)
    assert kp.shape == (14, 2)
    assert np.isfinite(kp).all()


def test_estimate_is_deterministic():
    rng = np.random.default_rng(46)
    models, pyr = _models(rng)
    a = two_tree_estimate(models, pyr)
    b = two_tree_estimate(models, pyr)
    assert a.score == b.score
    assert a.pose.lattice_key() == b.pose.lattice_key()
    assert a.lower.score == b.lower.score and a.upper.score == b.upper.score
