"""Mixture-of-parts pose model: parameters, configurations, reference scoring.

A model assigns every part a small bank of typed appearance templates and
every tree edge a typed spring.  The score of a pose is the sum of template
responses at the part placements plus, per edge, a quadratic penalty on the
displacement between child and parent (relative to a learned mean offset)
and a bias coupling the two endpoint types.  Rotated models express the
mean offset in polar form so it turns with the child part, and add a
cos(angle difference) agreement term between the endpoint orientations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graphs import PartGraph, TreeVariant

# Smallest admissible quadratic spring coefficient.  Keeping these strictly
# positive keeps every spring concave, which the distance transform needs.
EPS_DEF = 0.01


def slot_angles(orientation_count: int) -> np.ndarray:
    """Discrete part orientations in radians: 2*pi*k/n for k = 0..n-1."""
    return 2.0 * np.pi * np.arange(orientation_count) / orientation_count


def deformation_features(child_loc, parent_loc, mean_geometry, rotated: bool) -> np.ndarray:
    """Spring feature vector for one edge.

    Locations are (x, y, theta) triples in whatever length unit the caller
    works in (the inference engine uses grid cells).  For a plain edge,
    ``mean_geometry`` is the (mu_x, mu_y) mean offset and the result is
    [-dx, -dx^2, -dy, -dy^2].  For a rotated edge it is the (along, across)
    mean offset in the child's orientation frame; the lattice offset is
    that vector rotated by theta_child, so it turns with the part, and
    cos(theta_child - theta_parent) is appended as a fifth feature.
    """
    xc, yc, tc = child_loc
    xp, yp, tp = parent_loc
    if rotated:
        along, across = float(mean_geometry[0]), float(mean_geometry[1])
        mu_x = along * math.cos(tc) - across * math.sin(tc)
        mu_y = along * math.sin(tc) + across * math.cos(tc)
    else:
        mu_x, mu_y = float(mean_geometry[0]), float(mean_geometry[1])
    dx = xc - xp - mu_x
    dy = yc - yp - mu_y
    feats = [-dx, -dx * dx, -dy, -dy * dy]
    if rotated:
        feats.append(math.cos(tc - tp))
    return np.array(feats, dtype=np.float64)


@dataclass(frozen=True)
class PartPlacement:
    """State of one part inside a pose.

    ``anchor`` is the top-left cell of the template window on the padded,
    unrotated lattice of the pose's pyramid level; ``x``/``y`` give the
    window-centre keypoint estimate in original image pixels and ``theta``
    the part orientation in radians (0 for non-rotated models).
    """

    anchor: tuple[int, int]
    slot: int
    type_index: int
    x: float
    y: float
    theta: float


@dataclass(frozen=True)
class PoseConfiguration:
    placements: dict[int, PartPlacement]
    scale_level: int
    total_score: float

    def part_ids(self) -> list[int]:
        return sorted(self.placements)

    def lattice_key(self) -> tuple:
        """Hashable identity of the pose on the search lattice."""
        states = tuple(
            (pid, pl.anchor, pl.slot, pl.type_index)
            for pid, pl in sorted(self.placements.items())
        )
        return (self.scale_level,) + states


class PlacementError(ValueError):
    """A pose references a placement outside the valid template lattice."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """All learned parameters for one tree.

    templates:        part_id -> (num_types, extent, extent, channels)
    deformation:      edge_index -> (child_types, 4 or 5) spring weights
                      ordered [w_dx, w_dx2, w_dy, w_dy2(, w_cos)]
    biases:           edge_index -> (child_types, parent_types)
    mean_geometry:    edge_index -> (child_types, 2) offsets: absolute
                      (mu_x, mu_y) for plain models, (along, across) in
                      the child's orientation frame when rotated
    """

    graph: PartGraph
    templates: dict[int, np.ndarray]
    deformation: dict[int, np.ndarray]
    biases: dict[int, np.ndarray]
    mean_geometry: dict[int, np.ndarray]
    rotated: bool = False
    orientation_count: int = 1

    def __post_init__(self):
        if self.orientation_count < 1:
            raise ValueError("orientation_count must be >= 1")
        if not self.rotated and self.orientation_count != 1:
            raise ValueError("non-rotated models use a single orientation")
        pair_len = 5 if self.rotated else 4
        channels = None
        for part in self.graph.parts:
            tpl = self.templates.get(part.part_id)
            if tpl is None:
                raise ValueError(f"missing templates for part {part.name!r}")
            tpl = _freeze(tpl)
            if tpl.ndim != 4 or tpl.shape[0] != part.num_types:
                raise ValueError(
                    f"part {part.name!r}: template bank must be "
                    f"(num_types, h, w, channels)"
                )
            if channels is None:
                channels = tpl.shape[3]
            elif tpl.shape[3] != channels:
                raise ValueError("all templates must share one channel count")
            self.templates[part.part_id] = tpl
        for idx, (child, parent) in enumerate(self.graph.edges):
            tc = self.graph.part(child).num_types
            tp = self.graph.part(parent).num_types
            w = _freeze(self.deformation[idx])
            if w.shape != (tc, pair_len):
                raise ValueError(
                    f"edge {idx}: deformation weights must be ({tc}, {pair_len})"
                )
            if np.any(w[:, 1] < EPS_DEF) or np.any(w[:, 3] < EPS_DEF):
                raise ValueError(
                    f"edge {idx}: quadratic spring coefficients must be "
                    f">= {EPS_DEF}"
                )
            self.deformation[idx] = w
            b = _freeze(self.biases[idx])
            if b.shape != (tc, tp):
                raise ValueError(f"edge {idx}: biases must be ({tc}, {tp})")
            self.biases[idx] = b
            mu = _freeze(self.mean_geometry[idx])
            if mu.shape != (tc, 2):
                raise ValueError(f"edge {idx}: mean geometry must be ({tc}, 2)")
            self.mean_geometry[idx] = mu

    # -- small accessors ----------------------------------------------

    @property
    def channels(self) -> int:
        return self.templates[self.graph.root].shape[3]

    def extent(self, part_id: int) -> tuple[int, int]:
        t = self.templates[part_id]
        return t.shape[1], t.shape[2]

    def angles(self) -> np.ndarray:
        return slot_angles(self.orientation_count)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MixtureModel):
            return NotImplemented
        if (self.graph != other.graph or self.rotated != other.rotated
                or self.orientation_count != other.orientation_count):
            return False
        for mine, theirs in ((self.templates, other.templates),
                             (self.deformation, other.deformation),
                             (self.biases, other.biases),
                             (self.mean_geometry, other.mean_geometry)):
            if mine.keys() != theirs.keys():
                return False
            for key in mine:
                if not np.array_equal(mine[key], theirs[key]):
                    return False
        return True


def zero_model(graph: PartGraph, extent: int, channels: int,
               rotated: bool = False, orientation_count: int = 1,
               mean_geometry: dict[int, np.ndarray] | None = None) -> MixtureModel:
    """A model with zero templates/biases and unit springs; useful as the
    starting point for learning and in tests."""
    pair_len = 5 if rotated else 4
    templates = {}
    deformation = {}
    biases = {}
    mu = {}
    for part in graph.parts:
        templates[part.part_id] = np.zeros(
            (part.num_types, extent, extent, channels))
    for idx, (child, parent) in enumerate(graph.edges):
        tc = graph.part(child).num_types
        tp = graph.part(parent).num_types
        w = np.zeros((tc, pair_len))
        w[:, 1] = 1.0
        w[:, 3] = 1.0
        deformation[idx] = w
        biases[idx] = np.zeros((tc, tp))
        if mean_geometry is not None and idx in mean_geometry:
            mu[idx] = np.asarray(mean_geometry[idx], dtype=np.float64)
        else:
            mu[idx] = np.zeros((tc, 2))
    return MixtureModel(graph, templates, deformation, biases, mu,
                        rotated=rotated, orientation_count=orientation_count)


def score_pose(model: MixtureModel, pyramid, pose: PoseConfiguration) -> float:
    """Reference scorer: re-derives a pose's score from first principles.

    Sums template responses gathered through the pyramid lookup plus spring
    and bias terms from the placement geometry.  Raises PlacementError,
    naming the part, if any placement leaves the valid lattice.
    """
    graph = model.graph
    if set(pose.placements) != {p.part_id for p in graph.parts}:
        raise PlacementError("pose must place every part of the graph exactly once")
    angles = model.angles()
    total = 0.0
    centers = {}
    for part in graph.parts:
        pl = pose.placements[part.part_id]
        eh, ew = model.extent(part.part_id)
        if not 0 <= pl.slot < model.orientation_count:
            raise PlacementError(f"part {part.name!r}: slot {pl.slot} out of range")
        grid = pyramid.grid(pose.scale_level, pl.slot)
        ax, ay = pl.anchor
        ny, nx = grid.anchor_counts((eh, ew))
        if not (0 <= ax < nx and 0 <= ay < ny):
            raise PlacementError(
                f"part {part.name!r}: anchor {pl.anchor} outside the valid "
                f"placement lattice at level {pose.scale_level}"
            )
        slot_anchor = pyramid.slot_anchor(pose.scale_level, pl.slot, (ax, ay), (eh, ew))
        if slot_anchor is None:
            raise PlacementError(
                f"part {part.name!r}: anchor {pl.anchor} has no counterpart in "
                f"orientation slot {pl.slot}"
            )
        feats = pyramid.lookup(pose.scale_level, pl.slot,
                               (slot_anchor[0], slot_anchor[1], ew, eh))
        template = model.templates[part.part_id][pl.type_index]
        total += float(np.dot(template.ravel(), feats))
        centers[part.part_id] = (ax + (ew - 1) / 2.0, ay + (eh - 1) / 2.0,
                                 float(angles[pl.slot]))
    for idx, (child, parent) in enumerate(graph.edges):
        pc = pose.placements[child]
        pp = pose.placements[parent]
        mu = model.mean_geometry[idx]
        geom = mu[pc.type_index]
        psi = deformation_features(centers[child], centers[parent], geom,
                                   model.rotated)
        w = model.deformation[idx][pc.type_index]
        total += float(np.dot(w, psi))
        total += float(model.biases[idx][pc.type_index, pp.type_index])
    return total


def pose_keypoints(pose: PoseConfiguration, graph: PartGraph) -> np.ndarray:
    """Read a pose out as a (14, 2) keypoint array in image pixels.

    Auxiliary nodes are dropped.  In the lower-constrained tree the two
    head nodes were planted at symmetric offsets around the head keypoint,
    so the head estimate is their midpoint, which cancels the offset
    without knowing its magnitude.
    """
    out = np.full((14, 2), np.nan)
    for part in graph.parts:
        if part.keypoint is None:
            continue
        pl = pose.placements[part.part_id]
        out[part.keypoint] = (pl.x, pl.y)
    if graph.variant is TreeVariant.LOWER_CONSTRAINED:
        heads = graph.head_nodes()
        if len(heads) == 2:
            a = pose.placements[heads[0].part_id]
            b = pose.placements[heads[1].part_id]
            out[0] = ((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)
    return out
