"""Combined inference with the two tree variants.

The lower-constrained tree links the legs through a pelvis pair, which
keeps left and right legs from collapsing onto one another; the
conventional upper-constrained tree is stronger on arms.  The combined
estimator runs the lower tree first, freezes its hip/knee/ankle placements
as evidence, re-runs the upper tree under that clamp, and stitches the
final pose from the upper tree's arms and the lower tree's legs.
"""

from __future__ import annotations

from dataclasses import dataclass

from .features import FeaturePyramid
from .graphs import TreeVariant
from .inference import Detection, Evidence, clamp_inference, infer_max
from .model import MixtureModel, PoseConfiguration


@dataclass(frozen=True)
class TwoTreeModel:
    lower: MixtureModel
    upper: MixtureModel

    def __post_init__(self):
        if self.lower.graph.variant is not TreeVariant.LOWER_CONSTRAINED:
            raise ValueError("lower model must use the lower-constrained tree")
        if self.upper.graph.variant is not TreeVariant.UPPER_CONSTRAINED:
            raise ValueError("upper model must use the upper-constrained tree")
        if self.lower.rotated != self.upper.rotated:
            raise ValueError("tree variants must agree on rotation handling")
        if self.lower.orientation_count != self.upper.orientation_count:
            raise ValueError("tree variants must agree on orientation count")
        if self.lower.channels != self.upper.channels:
            raise ValueError("tree variants must agree on feature channels")

    @property
    def orientation_count(self) -> int:
        return self.upper.orientation_count

    @property
    def rotated(self) -> bool:
        return self.upper.rotated


def _evidence_from_pose(lower_pose: PoseConfiguration, lower_model: MixtureModel,
                        upper_model: MixtureModel) -> Evidence:
    """Clamps for the upper tree's hip/knee/ankle parts, copied from a pose
    produced by the lower tree.  Keypoint identity carries the placement
    across the two graphs; the shared common lattice makes the copy exact."""
    parts = {}
    for upper_part in upper_model.graph.lower_keypoint_parts():
        lower_part = lower_model.graph.keypoint_part(upper_part.keypoint)
        pl = lower_pose.placements[lower_part.part_id]
        parts[upper_part.part_id] = (pl.anchor, pl.slot)
    return Evidence(level=lower_pose.scale_level, parts=parts)


@dataclass(frozen=True)
class TwoTreeResult:
    pose: PoseConfiguration      # stitched: upper-tree graph, lower body swapped
    score: float                 # clamped upper pass total
    lower: Detection
    upper: Detection


def two_tree_estimate(models: TwoTreeModel, pyramid: FeaturePyramid,
                      lower_first: bool = True) -> TwoTreeResult:
    """Run one tree, clamp the evidence half, re-run the other, stitch.

    Default order is lower first (clamping its lower body); ``lower_first=
    False`` runs the reverse ablation: upper tree first, its upper-body
    keypoint parts clamped for the lower tree, stitched the opposite way.
    """
    if lower_first:
        first = infer_max(models.lower, pyramid)
        evidence = _evidence_from_pose(first.pose, models.lower, models.upper)
        second = clamp_inference(models.upper, pyramid, evidence)
        stitched = _stitch(second.pose, first.pose, models.upper, models.lower)
        return TwoTreeResult(stitched, second.score, first, second)
    first = infer_max(models.upper, pyramid)
    evidence_parts = {}
    for lower_part in models.lower.graph.parts:
        if lower_part.keypoint is None:
            continue
        if lower_part.body_half.value != "upper":
            continue
        upper_part = models.upper.graph.keypoint_part(lower_part.keypoint)
        pl = first.pose.placements[upper_part.part_id]
        evidence_parts[lower_part.part_id] = (pl.anchor, pl.slot)
    evidence = Evidence(level=first.pose.scale_level, parts=evidence_parts)
    second = clamp_inference(models.lower, pyramid, evidence)
    stitched = _stitch_reverse(second.pose, first.pose, models.lower,
                               models.upper)
    return TwoTreeResult(stitched, second.score, second, first)


def _stitch(upper_pose: PoseConfiguration, lower_pose: PoseConfiguration,
            upper_model: MixtureModel, lower_model: MixtureModel
            ) -> PoseConfiguration:
    """Upper-tree pose with its lower-body placements replaced by the lower
    tree's (bit-identical copies)."""
    placements = dict(upper_pose.placements)
    for upper_part in upper_model.graph.lower_keypoint_parts():
        lower_part = lower_model.graph.keypoint_part(upper_part.keypoint)
        placements[upper_part.part_id] = lower_pose.placements[lower_part.part_id]
    return PoseConfiguration(placements, upper_pose.scale_level,
                             upper_pose.total_score)


def _stitch_reverse(lower_pose: PoseConfiguration, upper_pose: PoseConfiguration,
                    lower_model: MixtureModel, upper_model: MixtureModel
                    ) -> PoseConfiguration:
    """Upper-tree-graph pose assembled from the reverse ablation order."""
    placements = {}
    for upper_part in upper_model.graph.parts:
        if upper_part.body_half.value == "upper":
            placements[upper_part.part_id] = upper_pose.placements[upper_part.part_id]
        else:
            lower_part = lower_model.graph.keypoint_part(upper_part.keypoint)
            placements[upper_part.part_id] = lower_pose.placements[lower_part.part_id]
    return PoseConfiguration(placements, upper_pose.scale_level,
                             lower_pose.total_score)
