"""Max-margin training of mixture models.

The score of a pose is linear in the parameters, so training collects one
feature vector per constraint: ground-truth poses in positive images must
score above +1, every pose found in a negative image below -1.  Slack is
shared per instance (one slack for a positive, one per negative image over
all poses mined from it), giving the primal

    1/2 |beta|^2 + C * sum_n max(0, max_{c in n} (1 - y_c beta.x_c))

which is optimized in the dual by coordinate descent under the per-instance
budget sum_{c in n} alpha_c <= C.  Negative constraints are found by
running the detector on negative images with the current parameters and
caching everything scoring above the margin (hard-negative mining).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .features import FeaturePyramid
from .graphs import PartGraph
from .inference import detect_all
from .model import (EPS_DEF, MixtureModel, PartPlacement, PoseConfiguration,
                    deformation_features, slot_angles, zero_model)


class TrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    C: float = 0.002
    epochs: int = 8                  # hard-negative mining rounds
    cache_size: int = 500
    max_per_image: int = 20          # mined poses kept per negative image
    sweep_tol: float = 1e-6          # max dual step that still counts as progress
    max_sweeps: int = 2000
    violation_tol: float = 1e-4      # how much a new constraint must beat the slack
    nms_iou: float | None = 0.5


# -- parameter layout ---------------------------------------------------


class ParamLayout:
    """Bijection between a MixtureModel's learned arrays and a flat vector.

    Blocks, in order: per part the (types, eh, ew, channels) template bank;
    per edge the (child_types, 4 or 5) spring weights; per edge the
    (child_types, parent_types) bias table.  Mean geometry is data-derived,
    not learned, so it rides along unchanged.
    """

    def __init__(self, graph: PartGraph, template_shapes: dict[int, tuple],
                 mean_geometry: dict[int, np.ndarray], rotated: bool,
                 orientation_count: int):
        self.graph = graph
        self.template_shapes = dict(template_shapes)
        self.mean_geometry = {k: np.asarray(v, dtype=np.float64)
                              for k, v in mean_geometry.items()}
        self.rotated = rotated
        self.orientation_count = orientation_count
        self.pair_len = 5 if rotated else 4
        self.part_offset = {}
        pos = 0
        for part in graph.parts:
            shape = self.template_shapes[part.part_id]
            self.part_offset[part.part_id] = pos
            pos += int(np.prod(shape))
        self.spring_offset = {}
        self.bias_offset = {}
        for idx, (child, parent) in enumerate(graph.edges):
            tc = graph.part(child).num_types
            tp = graph.part(parent).num_types
            self.spring_offset[idx] = pos
            pos += tc * self.pair_len
            self.bias_offset[idx] = pos
            pos += tc * tp
        self.dim = pos

    @classmethod
    def from_model(cls, model: MixtureModel) -> "ParamLayout":
        shapes = {p.part_id: model.templates[p.part_id].shape
                  for p in model.graph.parts}
        return cls(model.graph, shapes, model.mean_geometry, model.rotated,
                   model.orientation_count)

    def pack(self, model: MixtureModel) -> np.ndarray:
        beta = np.empty(self.dim)
        for part in self.graph.parts:
            off = self.part_offset[part.part_id]
            tpl = model.templates[part.part_id]
            beta[off:off + tpl.size] = tpl.ravel()
        for idx in range(self.graph.num_edges):
            w = model.deformation[idx]
            off = self.spring_offset[idx]
            beta[off:off + w.size] = w.ravel()
            b = model.biases[idx]
            off = self.bias_offset[idx]
            beta[off:off + b.size] = b.ravel()
        return beta

    def unpack(self, beta: np.ndarray, warn_clamp: bool = False) -> MixtureModel:
        """Rebuild a model from the flat vector.

        Quadratic spring weights are projected up to the well-posedness
        floor; that always happens silently for the intermediate models
        mining runs on, and loudly (``warn_clamp``) for the final one.
        """
        templates = {}
        for part in self.graph.parts:
            off = self.part_offset[part.part_id]
            shape = self.template_shapes[part.part_id]
            size = int(np.prod(shape))
            templates[part.part_id] = beta[off:off + size].reshape(shape).copy()
        deformation = {}
        biases = {}
        clamped = []
        for idx, (child, parent) in enumerate(self.graph.edges):
            tc = self.graph.part(child).num_types
            tp = self.graph.part(parent).num_types
            off = self.spring_offset[idx]
            w = beta[off:off + tc * self.pair_len].reshape(tc, self.pair_len).copy()
            low = w[:, (1, 3)] < EPS_DEF
            if np.any(low):
                clamped.append(idx)
                w[:, 1] = np.maximum(w[:, 1], EPS_DEF)
                w[:, 3] = np.maximum(w[:, 3], EPS_DEF)
            deformation[idx] = w
            off = self.bias_offset[idx]
            biases[idx] = beta[off:off + tc * tp].reshape(tc, tp).copy()
        if clamped and warn_clamp:
            warnings.warn(
                f"quadratic spring weights on edges {clamped} were below "
                f"{EPS_DEF} and have been clamped",
                stacklevel=2,
            )
        return MixtureModel(self.graph, templates, deformation, biases,
                            dict(self.mean_geometry), rotated=self.rotated,
                            orientation_count=self.orientation_count)


def joint_feature(layout: ParamLayout, pyramid: FeaturePyramid,
                  pose: PoseConfiguration) -> np.ndarray:
    """Feature vector x with beta.x == score_pose(unpack(beta), ., pose)."""
    x = np.zeros(layout.dim)
    graph = layout.graph
    angles = slot_angles(layout.orientation_count)
    centers = {}
    for part in graph.parts:
        pl = pose.placements[part.part_id]
        shape = layout.template_shapes[part.part_id]
        t_count, eh, ew = shape[0], shape[1], shape[2]
        slot_anchor = pyramid.slot_anchor(pose.scale_level, pl.slot,
                                          pl.anchor, (eh, ew))
        if slot_anchor is None:
            raise TrainError(
                f"part {part.name!r}: anchor {pl.anchor} invalid in slot "
                f"{pl.slot}"
            )
        feats = pyramid.lookup(pose.scale_level, pl.slot,
                               (slot_anchor[0], slot_anchor[1], ew, eh))
        block = layout.part_offset[part.part_id]
        per_type = feats.size
        x[block + pl.type_index * per_type:
          block + (pl.type_index + 1) * per_type] = feats
        centers[part.part_id] = (pl.anchor[0] + (ew - 1) / 2.0,
                                 pl.anchor[1] + (eh - 1) / 2.0,
                                 float(angles[pl.slot]))
    for idx, (child, parent) in enumerate(graph.edges):
        pc = pose.placements[child]
        pp = pose.placements[parent]
        geom = layout.mean_geometry[idx][pc.type_index]
        psi = deformation_features(centers[child], centers[parent], geom,
                                   layout.rotated)
        off = layout.spring_offset[idx] + pc.type_index * layout.pair_len
        x[off:off + layout.pair_len] = psi
        tp = graph.part(parent).num_types
        x[layout.bias_offset[idx] + pc.type_index * tp + pp.type_index] = 1.0
    return x


# -- constraint cache ---------------------------------------------------


@dataclass
class Constraint:
    x: np.ndarray
    y: float                      # +1 ground truth, -1 mined negative
    group: tuple                  # slack-sharing key: ("pos", i) / ("neg", j)
    key: tuple | None             # pose lattice identity for dedup
    alpha: float = 0.0
    qnorm: float = 0.0
    zero_streak: int = 0

    def __post_init__(self):
        self.qnorm = float(self.x @ self.x)


@dataclass
class SvmState:
    C: float
    dim: int
    beta: np.ndarray = field(default=None)
    constraints: list[Constraint] = field(default_factory=list)

    def __post_init__(self):
        if self.beta is None:
            self.beta = np.zeros(self.dim)

    def group_alpha(self, group: tuple) -> float:
        return sum(c.alpha for c in self.constraints if c.group == group)

    def groups(self) -> list[tuple]:
        seen = []
        for c in self.constraints:
            if c.group not in seen:
                seen.append(c.group)
        return seen

    def group_slack(self, group: tuple) -> float:
        worst = 0.0
        for c in self.constraints:
            if c.group == group:
                worst = max(worst, 1.0 - c.y * float(self.beta @ c.x))
        return worst


def svm_objective(state: SvmState) -> float:
    """Primal objective over the cached constraints (shared per-group slack)."""
    total = 0.5 * float(state.beta @ state.beta)
    for group in state.groups():
        total += state.C * state.group_slack(group)
    return total


def dual_primal_gap(state: SvmState) -> float:
    recon = np.zeros_like(state.beta)
    for c in state.constraints:
        if c.alpha != 0.0:
            recon += c.alpha * c.y * c.x
    return float(np.linalg.norm(state.beta - recon))


def dual_objective(state: SvmState) -> float:
    """The quantity the optimizer maximizes: sum(alpha) - 0.5*|beta|^2."""
    total = sum(c.alpha for c in state.constraints)
    return total - 0.5 * float(state.beta @ state.beta)


def optimize_cache(state: SvmState, tol: float = 1e-6,
                   max_sweeps: int = 2000,
                   trace: list | None = None) -> int:
    """Dual ascent to convergence on the current cache.

    Each sweep first solves every one-variable subproblem exactly (box
    constrained by the group's remaining budget), then shifts mass between
    the most- and least-violating members of each group: the shared budget
    couples the coordinates, so single-variable steps alone can park the
    solver at a corner of the feasible polytope.  The dual objective is
    asserted non-decreasing after every sweep (tiny float slack; exact
    line maximization guarantees it), the primal is checked finite, and
    ``trace``, when given, collects (dual, primal) per sweep.  Returns the
    number of sweeps run.
    """
    budgets = {}
    members = {}
    for c in state.constraints:
        budgets[c.group] = budgets.get(c.group, 0.0) + c.alpha
        members.setdefault(c.group, []).append(c)
    prev_dual = dual_objective(state)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        biggest = 0.0
        for c in state.constraints:
            if c.qnorm <= 0.0:
                continue
            g = 1.0 - c.y * float(state.beta @ c.x)
            free = state.C - budgets[c.group]
            new_alpha = c.alpha + g / c.qnorm
            new_alpha = min(max(new_alpha, 0.0), c.alpha + free)
            delta = new_alpha - c.alpha
            if delta != 0.0:
                state.beta += delta * c.y * c.x
                budgets[c.group] += delta
                c.alpha = new_alpha
                biggest = max(biggest, abs(delta))
        for cs in members.values():
            if len(cs) < 2:
                continue
            grads = [1.0 - c.y * float(state.beta @ c.x) for c in cs]
            hi = max(range(len(cs)), key=lambda i: grads[i])
            donors = [i for i in range(len(cs))
                      if i != hi and cs[i].alpha > 0.0]
            if not donors:
                continue
            lo = min(donors, key=lambda i: grads[i])
            ci, cj = cs[hi], cs[lo]
            diff = ci.y * ci.x - cj.y * cj.x
            q = float(diff @ diff)
            if q <= 0.0:
                continue
            delta = (grads[hi] - grads[lo]) / q
            delta = min(max(delta, 0.0), cj.alpha)
            if delta != 0.0:
                state.beta += delta * diff
                ci.alpha += delta
                cj.alpha -= delta
                biggest = max(biggest, abs(delta))
        dual = dual_objective(state)
        primal = svm_objective(state)
        if not (math.isfinite(dual) and math.isfinite(primal)):
            raise TrainError("training objective became non-finite")
        if dual < prev_dual - 1e-9 * (1.0 + abs(prev_dual)):
            raise TrainError(
                f"dual objective decreased within a sweep: {prev_dual} -> {dual}"
            )
        if trace is not None:
            trace.append((dual, primal))
        prev_dual = dual
        if biggest < tol:
            break
    return sweeps


# -- positives ----------------------------------------------------------


def quantize_orientation(theta: float, orientation_count: int) -> int:
    if orientation_count == 1:
        return 0
    step = 2.0 * math.pi / orientation_count
    return int(round(theta / step)) % orientation_count


def _nearest_valid_anchor(pyramid, level, slot, anchor, extent):
    ax_map, ay_map, valid = pyramid.anchor_map(level, slot, extent)
    ny, nx = valid.shape
    ax = min(max(anchor[0], 0), nx - 1)
    ay = min(max(anchor[1], 0), ny - 1)
    if valid[ay, ax]:
        return ax, ay
    cand = np.argwhere(valid)
    if cand.size == 0:
        return None
    d2 = (cand[:, 0] - ay) ** 2 + (cand[:, 1] - ax) ** 2
    best = cand[int(np.argmin(d2))]
    return int(best[1]), int(best[0])


def make_positive(pyramid: FeaturePyramid, instance, book, instance_index: int,
                  graph: PartGraph, extent: int, rotated: bool,
                  orientation_count: int, level: int = 0) -> PoseConfiguration:
    """Snap an annotated instance onto the search lattice as a training pose.

    Anchors snap to the nearest window centre (nudged to the nearest valid
    cell if the rotated slot cannot realize them), orientations quantize to
    the slot grid, and types come from the phraselet labels.
    """
    angles = slot_angles(orientation_count)
    placements = {}
    for part in graph.parts:
        pid = part.part_id
        if rotated:
            slot = quantize_orientation(float(instance.orientations[pid]),
                                        orientation_count)
        else:
            slot = 0
        point = instance.points[pid]
        anchor = pyramid.keypoint_anchor(level, (point[0], point[1]),
                                         (extent, extent))
        snapped = _nearest_valid_anchor(pyramid, level, slot, anchor,
                                        (extent, extent))
        if snapped is None:
            raise TrainError(
                f"part {part.name!r}: no valid placement in slot {slot} at "
                f"level {level}"
            )
        t = book.label_for(pid, instance_index) if book is not None else 0
        px, py = pyramid.anchor_keypoint(level, snapped, (extent, extent))
        placements[pid] = PartPlacement(anchor=snapped, slot=slot,
                                       type_index=t, x=px, y=py,
                                       theta=float(angles[slot]))
    return PoseConfiguration(placements, level, 0.0)


def initial_mean_geometry(graph: PartGraph, positives, rotated: bool,
                          orientation_count: int) -> dict[int, np.ndarray]:
    """Per-edge, per-child-type mean displacement between window centres.

    Plain models store the (mu_x, mu_y) cell offset; rotated models store
    the offset re-expressed in the child's orientation frame (along-axis,
    across-axis components), so the offset follows the part as it turns.
    Types with no samples fall back to the pooled estimate.
    """
    angles = slot_angles(orientation_count)
    geometry = {}
    for idx, (child, parent) in enumerate(graph.edges):
        tc = graph.part(child).num_types
        per_type = [[] for _ in range(tc)]
        pooled = []
        for _, pose in positives:
            pc = pose.placements[child]
            pp = pose.placements[parent]
            d = np.array([pc.anchor[0] - pp.anchor[0],
                          pc.anchor[1] - pp.anchor[1]], dtype=np.float64)
            if rotated:
                c = math.cos(float(angles[pc.slot]))
                s = math.sin(float(angles[pc.slot]))
                value = np.array([d[0] * c + d[1] * s,
                                  -d[0] * s + d[1] * c])
            else:
                value = d
            per_type[pc.type_index].append(value)
            pooled.append(value)
        fallback = np.mean(pooled, axis=0) if pooled else np.zeros(2)
        mu = np.stack([
            np.mean(v, axis=0) if v else fallback for v in per_type])
        geometry[idx] = mu
    return geometry


# -- the full loop ------------------------------------------------------


@dataclass(frozen=True)
class TrainRound:
    epoch: int
    objective: float
    cache_size: int
    new_constraints: int
    sweeps: int


def train_with_diagnostics(positives, negatives, graph: PartGraph,
                           config: TrainConfig, extent: int,
                           rotated: bool = False, orientation_count: int = 1
                           ) -> tuple[MixtureModel, list[TrainRound], SvmState]:
    """positives: list of (pyramid, PoseConfiguration); negatives: pyramids."""
    if not positives:
        raise TrainError("need at least one positive instance")
    channels = positives[0][0].channels
    geometry = initial_mean_geometry(graph, positives, rotated,
                                     orientation_count)
    model0 = zero_model(graph, extent, channels, rotated=rotated,
                        orientation_count=orientation_count,
                        mean_geometry=geometry)
    layout = ParamLayout.from_model(model0)
    state = SvmState(C=config.C, dim=layout.dim)
    for i, (pyr, pose) in enumerate(positives):
        state.constraints.append(Constraint(
            x=joint_feature(layout, pyr, pose), y=1.0, group=("pos", i),
            key=pose.lattice_key()))
    log: list[TrainRound] = []
    for epoch in range(config.epochs):
        miner = layout.unpack(state.beta)
        cached_keys = {(c.group, c.key) for c in state.constraints}
        new = 0
        for j, pyr in enumerate(negatives):
            group = ("neg", j)
            slack = state.group_slack(group) if any(
                c.group == group for c in state.constraints) else 0.0
            found = detect_all(miner, pyr, threshold=-1.0,
                               nms_iou=config.nms_iou,
                               limit=config.max_per_image)
            for det in found:
                violation = det.score + 1.0
                if violation <= slack + config.violation_tol:
                    continue
                key = det.pose.lattice_key()
                if (group, key) in cached_keys:
                    continue
                cached_keys.add((group, key))
                state.constraints.append(Constraint(
                    x=joint_feature(layout, pyr, det.pose), y=-1.0,
                    group=group, key=key))
                new += 1
        if new == 0 and epoch > 0:
            break
        sweeps = optimize_cache(state, tol=config.sweep_tol,
                                max_sweeps=config.max_sweeps)
        gap = dual_primal_gap(state)
        if gap > 1e-6 * (1.0 + float(np.linalg.norm(state.beta))):
            raise TrainError(f"dual-primal inconsistency: gap {gap}")
        survivors = []
        for c in state.constraints:
            if c.y < 0:
                c.zero_streak = c.zero_streak + 1 if c.alpha == 0.0 else 0
                if c.zero_streak >= 3:
                    continue
            survivors.append(c)
        overflow = len(survivors) - config.cache_size
        if overflow > 0:
            # Drop the least active negatives first; positives are kept.
            order = sorted(
                (i for i, c in enumerate(survivors) if c.y < 0),
                key=lambda i: (survivors[i].alpha, -i))
            drop = set(order[:overflow])
            survivors = [c for i, c in enumerate(survivors) if i not in drop]
        state.constraints = survivors
        log.append(TrainRound(epoch, svm_objective(state),
                              len(state.constraints), new, sweeps))
    model = layout.unpack(state.beta, warn_clamp=True)
    return model, log, state


def train(positives, negatives, graph: PartGraph, config: TrainConfig,
          extent: int, rotated: bool = False, orientation_count: int = 1
          ) -> MixtureModel:
    model, _, _ = train_with_diagnostics(positives, negatives, graph, config,
                                         extent, rotated, orientation_count)
    return model
