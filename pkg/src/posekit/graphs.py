"""Kinematic part graphs used by the pose models.

Two tree layouts over the same 14-keypoint skeleton.  The conventional
tree joins the two body sides high up, through the shoulder chain.  The
lower-constrained variant instead joins them at a pair of pelvis nodes
and caps each side's upper chain with its own head node, so that leg
placements are tied together by short, stiff links.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

# Canonical annotation order.  Every keypoint file and every pose array in
# this package follows this indexing.
KEYPOINT_NAMES = (
    "head",
    "neck",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)

(HEAD, NECK, L_SHOULDER, R_SHOULDER, L_ELBOW, R_ELBOW, L_WRIST, R_WRIST,
 L_HIP, R_HIP, L_KNEE, R_KNEE, L_ANKLE, R_ANKLE) = range(14)

NUM_KEYPOINTS = 14

# Reference bone used to derive a part's orientation from keypoints alone:
# part i points along (to - from).  Extremities reuse the bone that reaches
# them so their angle is always defined.
ORIENTATION_BONES = {
    HEAD: (NECK, HEAD),
    NECK: (NECK, HEAD),
    L_SHOULDER: (L_SHOULDER, L_ELBOW),
    R_SHOULDER: (R_SHOULDER, R_ELBOW),
    L_ELBOW: (L_ELBOW, L_WRIST),
    R_ELBOW: (R_ELBOW, R_WRIST),
    L_WRIST: (L_ELBOW, L_WRIST),
    R_WRIST: (R_ELBOW, R_WRIST),
    L_HIP: (L_HIP, L_KNEE),
    R_HIP: (R_HIP, R_KNEE),
    L_KNEE: (L_KNEE, L_ANKLE),
    R_KNEE: (R_KNEE, R_ANKLE),
    L_ANKLE: (L_KNEE, L_ANKLE),
    R_ANKLE: (R_KNEE, R_ANKLE),
}

# Bones drawn by the synthetic renderer and the montage plots.
SKELETON_BONES = (
    (HEAD, NECK),
    (NECK, L_SHOULDER), (NECK, R_SHOULDER),
    (L_SHOULDER, L_ELBOW), (L_ELBOW, L_WRIST),
    (R_SHOULDER, R_ELBOW), (R_ELBOW, R_WRIST),
    (L_SHOULDER, L_HIP), (R_SHOULDER, R_HIP),
    (L_HIP, R_HIP),
    (L_HIP, L_KNEE), (L_KNEE, L_ANKLE),
    (R_HIP, R_KNEE), (R_KNEE, R_ANKLE),
)


class BodyHalf(Enum):
    UPPER = "upper"
    LOWER = "lower"


class TreeVariant(Enum):
    UPPER_CONSTRAINED = "upper_constrained"
    LOWER_CONSTRAINED = "lower_constrained"
    # Free-form trees for tests, toys, and oracle harnesses; exempt from the
    # body-structure checks.
    GENERIC = "generic"


@dataclass(frozen=True)
class PartSpec:
    """One node of a part graph.

    ``keypoint`` is the index of the annotation keypoint the part reports,
    or None for auxiliary nodes that exist only to shape the tree.
    """

    part_id: int
    name: str
    keypoint: int | None
    num_types: int
    body_half: BodyHalf

    def __post_init__(self):
        if self.num_types < 1:
            raise ValueError(f"part {self.name!r}: num_types must be >= 1")
        if self.keypoint is not None and not 0 <= self.keypoint < NUM_KEYPOINTS:
            raise ValueError(
                f"part {self.name!r}: keypoint {self.keypoint} outside the "
                f"{NUM_KEYPOINTS}-keypoint annotation"
            )


def _is_pelvis(part: PartSpec) -> bool:
    return part.name.startswith("pelvis")


def _is_head_node(part: PartSpec) -> bool:
    return part.name == "head" or part.name.startswith("head_")


@dataclass(frozen=True)
class PartGraph:
    """A rooted tree of parts.  Immutable after construction.

    ``edges`` lists (child, parent) pairs; edge parameters elsewhere in the
    package are always indexed by position in this tuple.
    """

    parts: tuple[PartSpec, ...]
    edges: tuple[tuple[int, int], ...]
    root: int
    variant: TreeVariant

    def __post_init__(self):
        n = len(self.parts)
        for i, part in enumerate(self.parts):
            if part.part_id != i:
                raise ValueError("parts must be listed in part_id order")
        if not 0 <= self.root < n:
            raise ValueError(f"root {self.root} is not a part")
        if len(self.edges) != n - 1:
            raise ValueError(
                f"{n} parts need {n - 1} edges, got {len(self.edges)}"
            )
        seen = set()
        adjacency = {i: [] for i in range(n)}
        for child, parent in self.edges:
            for end in (child, parent):
                if not 0 <= end < n:
                    raise ValueError(f"edge ({child}, {parent}) references a non-part")
            key = frozenset((child, parent))
            if child == parent or key in seen:
                raise ValueError(f"bad edge ({child}, {parent})")
            seen.add(key)
            adjacency[child].append(parent)
            adjacency[parent].append(child)
        # Connectivity from the root; with n-1 distinct edges this also
        # rules out cycles.
        reached = {self.root}
        frontier = [self.root]
        while frontier:
            cur = frontier.pop()
            for other in adjacency[cur]:
                if other not in reached:
                    reached.add(other)
                    frontier.append(other)
        if len(reached) != n:
            raise ValueError("part graph is not connected")
        self._check_variant()

    def _check_variant(self):
        if self.variant is TreeVariant.GENERIC:
            return
        pelvis = [p for p in self.parts if _is_pelvis(p)]
        heads = [p for p in self.parts if _is_head_node(p)]
        if self.variant is TreeVariant.UPPER_CONSTRAINED:
            if len(self.parts) != NUM_KEYPOINTS:
                raise ValueError("upper-constrained tree must have exactly 14 parts")
            if any(p.keypoint is None for p in self.parts):
                raise ValueError("upper-constrained tree binds every part to a keypoint")
            bound = sorted(p.keypoint for p in self.parts)
            if bound != list(range(NUM_KEYPOINTS)):
                raise ValueError("upper-constrained tree must bind each keypoint once")
        else:
            if len(pelvis) != 2:
                raise ValueError("lower-constrained tree needs exactly two pelvis nodes")
            if len(heads) != 2:
                raise ValueError("lower-constrained tree needs exactly two head nodes")
            bound = sorted(p.keypoint for p in self.parts if p.keypoint is not None)
            if bound != list(range(NUM_KEYPOINTS)):
                raise ValueError(
                    "lower-constrained tree must bind each of the 14 keypoints "
                    "exactly once"
                )

    # -- helpers -------------------------------------------------------

    @property
    def num_parts(self) -> int:
        return len(self.parts)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def part(self, part_id: int) -> PartSpec:
        if not 0 <= part_id < len(self.parts):
            raise KeyError(f"no part with id {part_id}")
        return self.parts[part_id]

    def part_named(self, name: str) -> PartSpec:
        for p in self.parts:
            if p.name == name:
                return p
        raise KeyError(name)

    def keypoint_part(self, keypoint: int) -> PartSpec:
        """The canonical part reporting a keypoint (head nodes: the primary one)."""
        candidates = [p for p in self.parts if p.keypoint == keypoint]
        if not candidates:
            raise KeyError(keypoint)
        return min(candidates, key=lambda p: p.part_id)

    def head_nodes(self) -> list[PartSpec]:
        return [p for p in self.parts if _is_head_node(p)]

    def pelvis_nodes(self) -> list[PartSpec]:
        return [p for p in self.parts if _is_pelvis(p)]

    def lower_keypoint_parts(self) -> list[PartSpec]:
        """Keypoint-bound parts of the lower body half (hips, knees, ankles)."""
        return [
            p for p in self.parts
            if p.body_half is BodyHalf.LOWER and p.keypoint is not None
        ]

    def neighbors(self, part_id: int) -> list[int]:
        out = []
        for child, parent in self.edges:
            if child == part_id:
                out.append(parent)
            elif parent == part_id:
                out.append(child)
        return sorted(out)

    def traversal_order(self) -> list[tuple[int, int, int, bool]]:
        """Edges in a root-to-leaf visiting order.

        Yields (edge_index, tree_parent, tree_child, forward) where
        ``forward`` says the stored (child, parent) orientation matches the
        traversal direction.  Children of a node are visited in part-id
        order; the returned list is depth-last so processing it in reverse
        runs leaves first.
        """
        incident = {i: [] for i in range(self.num_parts)}
        for idx, (child, parent) in enumerate(self.edges):
            incident[child].append((idx, parent))
            incident[parent].append((idx, child))
        out = []
        visited = {self.root}
        frontier = [self.root]
        while frontier:
            cur = frontier.pop(0)
            nexts = sorted(incident[cur], key=lambda item: item[1])
            for idx, other in nexts:
                if other in visited:
                    continue
                visited.add(other)
                stored_child = self.edges[idx][0]
                out.append((idx, cur, other, stored_child == other))
                frontier.append(other)
        return out


def _keypoint_parts(num_types, lower: set[int]) -> list[PartSpec]:
    parts = []
    for k, name in enumerate(KEYPOINT_NAMES):
        half = BodyHalf.LOWER if k in lower else BodyHalf.UPPER
        parts.append(PartSpec(k, name, k, num_types, half))
    return parts


_LOWER_KEYPOINTS = {L_HIP, R_HIP, L_KNEE, R_KNEE, L_ANKLE, R_ANKLE}


def upper_constrained_graph(num_types: int = 7) -> PartGraph:
    """The conventional tree: rooted at the head, sides joined at the neck."""
    parts = _keypoint_parts(num_types, _LOWER_KEYPOINTS)
    edges = (
        (NECK, HEAD),
        (L_SHOULDER, NECK), (R_SHOULDER, NECK),
        (L_ELBOW, L_SHOULDER), (R_ELBOW, R_SHOULDER),
        (L_WRIST, L_ELBOW), (R_WRIST, R_ELBOW),
        (L_HIP, L_SHOULDER), (R_HIP, R_SHOULDER),
        (L_KNEE, L_HIP), (R_KNEE, R_HIP),
        (L_ANKLE, L_KNEE), (R_ANKLE, R_KNEE),
    )
    return PartGraph(tuple(parts), edges, HEAD, TreeVariant.UPPER_CONSTRAINED)


PELVIS_LEFT = 14
PELVIS_RIGHT = 15
HEAD_MIRROR = 16


def lower_constrained_graph(num_types: int = 7) -> PartGraph:
    """Tree rooted between the hips.

    The sides meet only at the pelvis pair; each arm chain runs up from its
    hip and is capped by a head node (the primary head on the left chain, a
    mirrored copy on the right), so upper-body stability is preserved while
    the legs get the short cross-link.
    """
    parts = _keypoint_parts(num_types, _LOWER_KEYPOINTS)
    parts.append(PartSpec(PELVIS_LEFT, "pelvis_left", None, num_types, BodyHalf.LOWER))
    parts.append(PartSpec(PELVIS_RIGHT, "pelvis_right", None, num_types, BodyHalf.LOWER))
    parts.append(PartSpec(HEAD_MIRROR, "head_mirror", None, num_types, BodyHalf.UPPER))
    edges = (
        (PELVIS_RIGHT, PELVIS_LEFT),
        (L_HIP, PELVIS_LEFT), (R_HIP, PELVIS_RIGHT),
        (L_KNEE, L_HIP), (R_KNEE, R_HIP),
        (L_ANKLE, L_KNEE), (R_ANKLE, R_KNEE),
        (L_SHOULDER, L_HIP), (R_SHOULDER, R_HIP),
        (L_ELBOW, L_SHOULDER), (R_ELBOW, R_SHOULDER),
        (L_WRIST, L_ELBOW), (R_WRIST, R_ELBOW),
        (NECK, L_SHOULDER),
        (HEAD, NECK),
        (HEAD_MIRROR, R_SHOULDER),
    )
    return PartGraph(tuple(parts), edges, PELVIS_LEFT, TreeVariant.LOWER_CONSTRAINED)


def chain_graph(num_parts: int, num_types: int = 1, root: int = 0) -> PartGraph:
    """A free-form chain part_0 - part_1 - ... used by tests and toys."""
    parts = tuple(
        PartSpec(i, f"part_{i}", None, num_types, BodyHalf.UPPER)
        for i in range(num_parts)
    )
    edges = tuple((i, i - 1) for i in range(1, num_parts))
    return PartGraph(parts, edges, root, TreeVariant.GENERIC)
