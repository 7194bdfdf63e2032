"""Part-type supervision from clustered overlap patterns.

For each part we describe every training instance by the weighted relative
placements of the parts around it, cluster those descriptors with k-means,
and use the cluster index as the part's type label.  In rotation-normalized
mode each displacement is first rotated into the part's own frame, which
makes the descriptor (and therefore the clustering) invariant to whole-body
rotation; in plain mode displacements stay in image axes.

Displacements are divided by the instance's torso diameter before the
exp(-|d|/sigma) weighting so that person scale does not leak into the
clusters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .annotations import GraphInstance
from .graphs import PartGraph


class PhraseletError(ValueError):
    pass


class PatternMode(Enum):
    PLAIN = "plain"
    ROTATION_NORMALIZED = "rotation_normalized"


@dataclass(frozen=True)
class OverlapPattern:
    part_id: int
    vector: np.ndarray              # 2 * len(members), member order
    source: tuple[str, int]         # (image_id, person)
    theta: float | None = None      # part orientation, normalized mode only


@dataclass(frozen=True, eq=False)
class PhraseletBook:
    mode: PatternMode
    k: int
    sigma: float
    members: dict[int, tuple[int, ...]]      # part -> descriptor part order
    centroids: dict[int, np.ndarray]         # part -> (k, 2*len(members))
    labels: dict[int, np.ndarray]            # part -> per-instance type, -1 if
                                             # the pattern was incomplete
    def __post_init__(self):
        for pid, cents in self.centroids.items():
            if cents.shape[0] != self.k:
                raise PhraseletError(f"part {pid}: expected {self.k} centroids")
            if cents.shape[1] != 2 * len(self.members[pid]):
                raise PhraseletError(f"part {pid}: centroid dimension mismatch")
        for pid, lab in self.labels.items():
            if lab.size and (lab.max() >= self.k or lab.min() < -1):
                raise PhraseletError(f"part {pid}: label out of range")

    def label_for(self, part_id: int, instance_index: int) -> int:
        """Training label, falling back to type 0 for incomplete patterns."""
        lab = int(self.labels[part_id][instance_index])
        return lab if lab >= 0 else 0

    def __eq__(self, other):
        if not isinstance(other, PhraseletBook):
            return NotImplemented
        return (self.mode == other.mode and self.k == other.k
                and self.sigma == other.sigma
                and self.members == other.members
                and self.centroids.keys() == other.centroids.keys()
                and all(np.array_equal(self.centroids[p], other.centroids[p])
                        for p in self.centroids)
                and self.labels.keys() == other.labels.keys()
                and all(np.array_equal(self.labels[p], other.labels[p])
                        for p in self.labels))


def relative_displacement(instance: GraphInstance, i: int, j: int,
                          scale: float) -> np.ndarray:
    if scale <= 0:
        raise PhraseletError("normalization scale must be positive")
    return (instance.points[j] - instance.points[i]) / scale


def pattern_vector(instance: GraphInstance, part_id: int,
                   members: tuple[int, ...], mode: PatternMode,
                   sigma: float = 1.0) -> OverlapPattern | None:
    """Descriptor of one training instance around one part.

    Returns None when the part or any descriptor member is invisible
    (incomplete pattern; the instance is skipped for clustering).
    """
    if sigma <= 0:
        raise PhraseletError("sigma must be positive")
    if not instance.visible[part_id]:
        return None
    theta = None
    if mode is PatternMode.ROTATION_NORMALIZED:
        theta = float(instance.orientations[part_id])
        c, s = math.cos(theta), math.sin(theta)
    pieces = np.empty((len(members), 2))
    for row, j in enumerate(members):
        if j == part_id:
            raise PhraseletError("descriptor members must exclude the part itself")
        if not instance.visible[j]:
            return None
        d = relative_displacement(instance, part_id, j, instance.torso)
        weight = math.exp(-float(np.linalg.norm(d)) / sigma)
        if mode is PatternMode.ROTATION_NORMALIZED:
            d = np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1]])
        pieces[row] = weight * d
    return OverlapPattern(part_id, pieces.reshape(-1),
                          (instance.image_id, instance.person), theta)


def occluding_set(instances: list[GraphInstance], graph: PartGraph,
                  part_id: int, m: int, radius: float = 0.25) -> tuple[int, ...]:
    """Parts that come within ``radius`` torso diameters of this part in at
    least m instances; falls back to the nearest tree neighbours when empty."""
    if m < 1:
        raise PhraseletError("m must be >= 1")
    counts = np.zeros(graph.num_parts, dtype=np.int64)
    for inst in instances:
        if not inst.visible[part_id]:
            continue
        dist = np.linalg.norm(inst.points - inst.points[part_id], axis=1)
        near = (dist < radius * inst.torso) & inst.visible
        near[part_id] = False
        counts += near
    chosen = [j for j in range(graph.num_parts)
              if j != part_id and counts[j] >= m]
    if not chosen:
        chosen = sorted(graph.neighbors(part_id))[:2]
    return tuple(chosen)


def _farthest_point_init(vectors: np.ndarray, k: int,
                         rng: np.random.Generator) -> np.ndarray:
    n = vectors.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((vectors - vectors[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(d2))     # ties resolve to the smallest index
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((vectors - vectors[nxt]) ** 2, axis=1))
    return vectors[chosen].copy()


def _label_points(vectors: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (np.sum(vectors ** 2, axis=1)[:, None]
          - 2.0 * vectors @ centroids.T
          + np.sum(centroids ** 2, axis=1)[None, :])
    return np.argmin(d2, axis=1).astype(np.int64)


def cluster(vectors: np.ndarray, k: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd k-means with farthest-point seeding.

    Deterministic for a given seed; converged when no label changes.  An
    emptied cluster is re-seeded at the point farthest from its currently
    assigned centroid.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise PhraseletError("pattern matrix must be 2-D")
    n = vectors.shape[0]
    if k < 1:
        raise PhraseletError("k must be >= 1")
    if n < k:
        raise PhraseletError(f"need at least {k} patterns, got {n}")
    rng = (seed if isinstance(seed, np.random.Generator)
           else np.random.default_rng(seed))
    centroids = _farthest_point_init(vectors, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(500):
        new_labels = _label_points(vectors, centroids)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            mask = labels == c
            if np.any(mask):
                centroids[c] = vectors[mask].mean(axis=0)
            else:
                resid = np.linalg.norm(vectors - centroids[labels], axis=1)
                centroids[c] = vectors[int(np.argmax(resid))]
    return centroids, labels


def assign_type(vector: np.ndarray, centroids: np.ndarray) -> int:
    """Nearest centroid by Euclidean distance; ties go to the lowest index."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (centroids.shape[1],):
        raise PhraseletError(
            f"pattern has dimension {vector.shape}, centroids expect "
            f"{centroids.shape[1]}"
        )
    d2 = np.sum((centroids - vector[None, :]) ** 2, axis=1)
    return int(np.argmin(d2))


def default_overlap_count(num_instances: int) -> int:
    """Required co-occurrence count, scaled from 100-per-1000 instances."""
    return max(2, int(math.floor(100.0 * num_instances / 1000.0 + 0.5)))


def build_phraselet_book(instances: list[GraphInstance], graph: PartGraph,
                         k: int, mode: PatternMode,
                         sigma: float = 1.0, seed: int = 0,
                         m: int | None = None,
                         radius: float = 0.25) -> PhraseletBook:
    """Cluster every part's overlap patterns into k types."""
    if not instances:
        raise PhraseletError("no training instances")
    if m is None:
        m = default_overlap_count(len(instances))
    all_ids = tuple(p.part_id for p in graph.parts)
    members = {}
    centroids = {}
    labels = {}
    root_seq = (seed if isinstance(seed, np.random.SeedSequence)
                else np.random.SeedSequence(seed))
    for part in graph.parts:
        pid = part.part_id
        if mode is PatternMode.ROTATION_NORMALIZED:
            mem = occluding_set(instances, graph, pid, m, radius)
        else:
            mem = tuple(j for j in all_ids if j != pid)
        members[pid] = mem
        rows = []
        row_of = {}
        for idx, inst in enumerate(instances):
            pat = pattern_vector(inst, pid, mem, mode, sigma)
            if pat is not None:
                row_of[idx] = len(rows)
                rows.append(pat.vector)
        if len(rows) < k:
            raise PhraseletError(
                f"part {part.name!r}: only {len(rows)} complete patterns for "
                f"k={k}"
            )
        mat = np.stack(rows)
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=root_seq.entropy,
                                   spawn_key=root_seq.spawn_key + (pid,)))
        cents, labs = cluster(mat, k, rng)
        centroids[pid] = cents
        full = np.full(len(instances), -1, dtype=np.int64)
        for idx, row in row_of.items():
            full[idx] = labs[row]
        labels[pid] = full
    return PhraseletBook(mode, k, sigma, members, centroids, labels)


def cluster_mean_shapes(instances: list[GraphInstance], graph: PartGraph,
                        book: PhraseletBook, part_id: int) -> np.ndarray:
    """Per-cluster mean normalized skeletons around a part, for montages.

    Returns (k, num_parts, 2); entries are NaN where no member instance had
    the part visible.  Shapes are torso-normalized, centred on the part,
    and rotated into its frame in rotation-normalized mode.
    """
    n_parts = graph.num_parts
    sums = np.zeros((book.k, n_parts, 2))
    counts = np.zeros((book.k, n_parts))
    labels = book.labels[part_id]
    for idx, inst in enumerate(instances):
        lab = int(labels[idx])
        if lab < 0:
            continue
        rel = (inst.points - inst.points[part_id]) / inst.torso
        if book.mode is PatternMode.ROTATION_NORMALIZED:
            th = float(inst.orientations[part_id])
            c, s = math.cos(th), math.sin(th)
            rel = np.stack([c * rel[:, 0] + s * rel[:, 1],
                            -s * rel[:, 0] + c * rel[:, 1]], axis=1)
        vis = inst.visible
        sums[lab, vis] += rel[vis]
        counts[lab, vis] += 1.0
    with np.errstate(invalid="ignore"):
        out = sums / counts[:, :, None]
    return out
