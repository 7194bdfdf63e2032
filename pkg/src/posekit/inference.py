"""Exact pose search over feature pyramids.

Max-product dynamic programming on the part tree: messages flow leaf to
root, each one a 2-D distance transform of the child's score surface
evaluated on the parent's lattice shifted by the mean spring offset,
followed by maximization over the child's orientation (with the angular
agreement term) and type (with the pairwise bias).  Backtracking then
reconstructs the arg-max placement of every part.

All placements live on the common (unrotated) anchor lattice of a pyramid
level; rotated templates are scored by mapping each common anchor into the
matching orientation slot.  Evidence clamping collapses a part's state
space to a single cell and orientation while leaving its type free, which
is how the second pass of the two-tree estimator consumes the first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeaturePyramid
from .gdt import masked_gdt_2d
from .model import MixtureModel, PartPlacement, PoseConfiguration


class InferenceError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    pose: PoseConfiguration
    score: float

    @property
    def level(self) -> int:
        return self.pose.scale_level


@dataclass(frozen=True)
class ScoreMap:
    """Unary response of one part in one orientation slot (debug surface)."""

    part_id: int
    level: int
    slot: int
    values: np.ndarray    # (num_types, anchors_y, anchors_x), -inf off-lattice
    valid: np.ndarray     # (anchors_y, anchors_x) bool


@dataclass(frozen=True)
class Evidence:
    """Hard placement constraints for a subset of parts at one level.

    ``parts`` maps part_id -> (anchor, slot) on the common lattice of
    ``level``.  A clamped part keeps all its types; everything else about
    its state is pinned.
    """

    level: int
    parts: dict[int, tuple[tuple[int, int], int]]

    def is_empty(self) -> bool:
        return not self.parts


def _check_compat(model: MixtureModel, pyramid: FeaturePyramid):
    if model.rotated:
        if pyramid.orientation_count != model.orientation_count:
            raise InferenceError(
                f"model expects {model.orientation_count} orientation slots, "
                f"pyramid has {pyramid.orientation_count}"
            )
    elif pyramid.orientation_count != 1:
        raise InferenceError("non-rotated model needs a single-slot pyramid")
    if pyramid.channels != model.channels:
        raise InferenceError(
            f"model has {model.channels} feature channels, pyramid has "
            f"{pyramid.channels}"
        )


def _template_response(grid, templates: np.ndarray) -> np.ndarray:
    """Correlate a (T, eh, ew, C) template bank at every anchor of a grid."""
    t, eh, ew, ch = templates.shape
    cells = grid.cells
    windows = np.lib.stride_tricks.sliding_window_view(cells, (eh, ew, ch))
    ny, nx = windows.shape[0], windows.shape[1]
    flat = windows.reshape(ny * nx, eh * ew * ch)
    resp = flat @ templates.reshape(t, -1).T
    return resp.reshape(ny, nx, t).transpose(2, 0, 1)


def _unary_common(model: MixtureModel, pyramid: FeaturePyramid, level: int,
                  part_id: int) -> np.ndarray:
    """Part scores on the common lattice: (T, slots, ny, nx), -inf where the
    rotated window would leave the slot grid."""
    templates = model.templates[part_id]
    extent = (templates.shape[1], templates.shape[2])
    nslots = pyramid.orientation_count
    ny, nx = pyramid.grid(level, 0).anchor_counts(extent)
    if ny <= 0 or nx <= 0:
        raise InferenceError(
            f"part {model.graph.part(part_id).name!r}: template {extent} does "
            f"not fit the level-{level} grid"
        )
    out = np.empty((templates.shape[0], nslots, ny, nx))
    for slot in range(nslots):
        resp = _template_response(pyramid.grid(level, slot), templates)
        ax, ay, valid = pyramid.anchor_map(level, slot, extent)
        gathered = resp[:, ay, ax]
        gathered[:, ~valid] = -np.inf
        out[:, slot] = gathered
    return out


def _clamped_unary(model: MixtureModel, pyramid: FeaturePyramid, level: int,
                   part_id: int, anchor: tuple[int, int], slot: int
                   ) -> np.ndarray:
    templates = model.templates[part_id]
    extent = (templates.shape[1], templates.shape[2])
    nslots = pyramid.orientation_count
    ny, nx = pyramid.grid(level, 0).anchor_counts(extent)
    ax, ay = anchor
    name = model.graph.part(part_id).name
    if not (0 <= slot < nslots):
        raise InferenceError(f"evidence for part {name!r}: slot {slot} out of range")
    if not (0 <= ax < nx and 0 <= ay < ny):
        raise InferenceError(
            f"evidence for part {name!r}: anchor {anchor} outside the valid "
            f"lattice at level {level}"
        )
    slot_anchor = pyramid.slot_anchor(level, slot, anchor, extent)
    if slot_anchor is None:
        raise InferenceError(
            f"evidence for part {name!r}: anchor {anchor} unreachable in "
            f"orientation slot {slot}"
        )
    out = np.full((templates.shape[0], nslots, ny, nx), -np.inf)
    feats = pyramid.lookup(level, slot,
                           (slot_anchor[0], slot_anchor[1], extent[1], extent[0]))
    for t in range(templates.shape[0]):
        out[t, slot, ay, ax] = float(np.dot(templates[t].ravel(), feats))
    return out


def unary_score_maps(model: MixtureModel, pyramid: FeaturePyramid,
                     part_id: int, level: int) -> list[ScoreMap]:
    _check_compat(model, pyramid)
    u = _unary_common(model, pyramid, level, part_id)
    maps = []
    for slot in range(u.shape[1]):
        vals = u[:, slot]
        maps.append(ScoreMap(part_id, level, slot, vals,
                             np.isfinite(vals).all(axis=0)))
    return maps


def _centers(n: int, extent_axis: int) -> np.ndarray:
    return np.arange(n, dtype=np.float64) + (extent_axis - 1) / 2.0


class _LevelDP:
    """One full upward pass at a single pyramid level."""

    def __init__(self, model: MixtureModel, pyramid: FeaturePyramid,
                 level: int, evidence: Evidence | None):
        self.model = model
        self.pyramid = pyramid
        self.level = level
        graph = model.graph
        self.traversal = graph.traversal_order()
        self.angles = model.angles()
        nslots = model.orientation_count
        self.cos_table = np.cos(self.angles[:, None] - self.angles[None, :])
        clamped = {}
        if evidence is not None and evidence.level == level:
            clamped = evidence.parts
        self.extents = {p.part_id: model.extent(p.part_id) for p in graph.parts}
        self.lattice = {}
        self.scores = {}
        for part in graph.parts:
            pid = part.part_id
            if pid in clamped:
                anchor, slot = clamped[pid]
                u = _clamped_unary(model, pyramid, level, pid, anchor, slot)
            else:
                u = _unary_common(model, pyramid, level, pid)
            self.scores[pid] = u
            self.lattice[pid] = (u.shape[2], u.shape[3])
        self.back = {}
        for edge_idx, parent, child, forward in reversed(self.traversal):
            if forward:
                msg, bp = self._forward_message(edge_idx, parent, child)
            else:
                msg, bp = self._reversed_message(edge_idx, parent, child)
            self.scores[parent] = self.scores[parent] + msg
            self.back[edge_idx] = bp

    def _spring(self, weights: np.ndarray, flip: bool):
        ax, ay = weights[1], weights[3]
        if flip:
            bx, by = weights[0], weights[2]
        else:
            bx, by = -weights[0], -weights[2]
        return ax, bx, ay, by

    def _mu(self, edge_idx: int, t_child: int, theta_child: int):
        mu = self.model.mean_geometry[edge_idx]
        if self.model.rotated:
            along, across = mu[t_child]
            c = np.cos(self.angles[theta_child])
            s = np.sin(self.angles[theta_child])
            return along * c - across * s, along * s + across * c
        return mu[t_child, 0], mu[t_child, 1]

    def _forward_message(self, edge_idx: int, parent: int, child: int):
        model = self.model
        w = model.deformation[edge_idx]
        bias = model.biases[edge_idx]
        t_child, nslots = w.shape[0], model.orientation_count
        t_parent = bias.shape[1]
        ny_c, nx_c = self.lattice[child]
        ny_p, nx_p = self.lattice[parent]
        eh_c, ew_c = self.extents[child]
        eh_p, ew_p = self.extents[parent]
        xs = _centers(nx_c, ew_c)
        ys = _centers(ny_c, eh_c)
        xp = _centers(nx_p, ew_p)
        yp = _centers(ny_p, eh_p)
        g = np.empty((t_child, nslots, ny_p, nx_p))
        arg_y = np.empty((t_child, nslots, ny_p, nx_p), dtype=np.int64)
        arg_x = np.empty_like(arg_y)
        s_child = self.scores[child]
        # (type, slot) blocks with no finite entry (clamped-out states)
        # transform to all -inf; skip their envelope work outright
        alive = np.isfinite(s_child).any(axis=(2, 3))
        for tc in range(t_child):
            a_x, b_x, a_y, b_y = self._spring(w[tc], flip=False)
            for th in range(nslots):
                if not alive[tc, th]:
                    g[tc, th] = -np.inf
                    arg_y[tc, th] = 0
                    arg_x[tc, th] = 0
                    continue
                mux, muy = self._mu(edge_idx, tc, th)
                out, ay_, ax_ = masked_gdt_2d(
                    s_child[tc, th], a_x, b_x, a_y, b_y,
                    xs, ys, xp + mux, yp + muy)
                g[tc, th] = out
                arg_y[tc, th] = ay_
                arg_x[tc, th] = ax_
        if model.rotated:
            w5 = w[:, 4]
            stacked = (g[:, :, None, :, :]
                       + w5[:, None, None, None, None]
                       * self.cos_table[None, :, :, None, None])
            theta_sel = np.argmax(stacked, axis=1).astype(np.int64)
            best_theta = np.max(stacked, axis=1)  # (t_child, slots_p, ny, nx)
        else:
            theta_sel = np.zeros((t_child, 1, ny_p, nx_p), dtype=np.int64)
            best_theta = g
        with_bias = (best_theta[:, None, :, :, :]
                     + bias[:, :, None, None, None])
        type_sel = np.argmax(with_bias, axis=0).astype(np.int64)
        msg = np.max(with_bias, axis=0)  # (t_parent, slots, ny, nx)
        bp = {"forward": True, "type_sel": type_sel, "theta_sel": theta_sel,
              "arg_y": arg_y, "arg_x": arg_x}
        return msg, bp

    def _reversed_message(self, edge_idx: int, parent: int, child: int):
        # The stored edge points the other way: its "child" is the node we
        # are sending the message to, so springs and biases are indexed by
        # the receiver's type, and the mean offset follows the receiver's
        # orientation with its sign flipped.
        model = self.model
        w = model.deformation[edge_idx]
        bias = model.biases[edge_idx]
        nslots = model.orientation_count
        t_recv = w.shape[0]            # type count of the traversal parent
        t_send = bias.shape[1]         # type count of the traversal child
        ny_c, nx_c = self.lattice[child]
        ny_p, nx_p = self.lattice[parent]
        eh_c, ew_c = self.extents[child]
        eh_p, ew_p = self.extents[parent]
        xs = _centers(nx_c, ew_c)
        ys = _centers(ny_c, eh_c)
        xp = _centers(nx_p, ew_p)
        yp = _centers(ny_p, eh_p)
        s_child = self.scores[child]
        alive = np.isfinite(s_child).any(axis=(2, 3))
        msg = np.empty((t_recv, nslots, ny_p, nx_p))
        bp = {"forward": False, "sel": {}, "arg_y": {}, "arg_x": {}}
        for tu in range(t_recv):
            a_x, b_x, a_y, b_y = self._spring(w[tu], flip=True)
            for thu in range(nslots):
                mux, muy = self._mu(edge_idx, tu, thu)
                cand = np.empty((nslots, t_send, ny_p, nx_p))
                band_y = np.empty((nslots, t_send, ny_p, nx_p), dtype=np.int64)
                band_x = np.empty_like(band_y)
                for thv in range(nslots):
                    for tv in range(t_send):
                        if not alive[tv, thv]:
                            cand[thv, tv] = -np.inf
                            band_y[thv, tv] = 0
                            band_x[thv, tv] = 0
                            continue
                        out, ay_, ax_ = masked_gdt_2d(
                            s_child[tv, thv], a_x, b_x, a_y, b_y,
                            xs, ys, xp - mux, yp - muy)
                        val = out
                        if model.rotated:
                            val = out + w[tu, 4] * self.cos_table[thu, thv]
                        cand[thv, tv] = val + bias[tu, tv]
                        band_y[thv, tv] = ay_
                        band_x[thv, tv] = ax_
                flat = cand.reshape(nslots * t_send, ny_p, nx_p)
                pick = np.argmax(flat, axis=0)
                msg[tu, thu] = np.take_along_axis(flat, pick[None], axis=0)[0]
                bp["sel"][(tu, thu)] = pick
                bp["arg_y"][(tu, thu)] = band_y
                bp["arg_x"][(tu, thu)] = band_x
        return msg, bp

    # -- readout ------------------------------------------------------

    def root_scores(self) -> np.ndarray:
        return self.scores[self.model.graph.root]

    def backtrack(self, root_state: tuple[int, int, int, int]
                  ) -> dict[int, tuple[int, int, int, int]]:
        """Expand a root (type, slot, y, x) state into states for all parts."""
        states = {self.model.graph.root: root_state}
        for edge_idx, parent, child, forward in self.traversal:
            tp, thp, yp_, xp_ = states[parent]
            bp = self.back[edge_idx]
            if forward:
                tc = int(bp["type_sel"][tp, thp, yp_, xp_])
                thc = int(bp["theta_sel"][tc, thp, yp_, xp_])
                yc = int(bp["arg_y"][tc, thc, yp_, xp_])
                xc = int(bp["arg_x"][tc, thc, yp_, xp_])
            else:
                pick = int(bp["sel"][(tp, thp)][yp_, xp_])
                t_send = self.model.biases[edge_idx].shape[1]
                thc, tc = divmod(pick, t_send)
                yc = int(bp["arg_y"][(tp, thp)][thc, tc, yp_, xp_])
                xc = int(bp["arg_x"][(tp, thp)][thc, tc, yp_, xp_])
            states[child] = (tc, thc, yc, xc)
        return states

    def build_pose(self, root_state, score: float) -> PoseConfiguration:
        states = self.backtrack(root_state)
        placements = {}
        for pid, (t, th, y, x) in states.items():
            extent = self.extents[pid]
            px, py = self.pyramid.anchor_keypoint(self.level, (x, y), extent)
            placements[pid] = PartPlacement(
                anchor=(x, y), slot=th, type_index=t, x=px, y=py,
                theta=float(self.angles[th]))
        return PoseConfiguration(placements, self.level, float(score))


def _best_root_state(root: np.ndarray):
    """Highest root score; ties broken toward the smallest (slot, type, y, x)."""
    swapped = root.transpose(1, 0, 2, 3)
    flat = np.argmax(swapped)
    score = float(swapped.flat[flat])
    th, t, y, x = np.unravel_index(flat, swapped.shape)
    return score, (int(t), int(th), int(y), int(x))


def _levels_to_search(model, pyramid, evidence):
    if evidence is not None and not evidence.is_empty():
        if not 0 <= evidence.level < pyramid.num_levels:
            raise InferenceError(f"evidence level {evidence.level} not in pyramid")
        return [evidence.level]
    return list(range(pyramid.num_levels))


def clamp_inference(model: MixtureModel, pyramid: FeaturePyramid,
                    evidence: Evidence | None) -> Detection:
    """Best pose consistent with the evidence.

    Empty (or None) evidence searches every level and reduces exactly to
    unconstrained inference; otherwise the search is restricted to the
    evidence's level with the clamped parts pinned.
    """
    _check_compat(model, pyramid)
    if evidence is not None and not evidence.is_empty():
        stray = sorted(set(evidence.parts)
                       - {p.part_id for p in model.graph.parts})
        if stray:
            raise InferenceError(f"evidence names unknown part ids {stray}")
    best = None
    for level in _levels_to_search(model, pyramid, evidence):
        dp = _LevelDP(model, pyramid, level, evidence)
        score, state = _best_root_state(dp.root_scores())
        if score == -np.inf:
            continue
        if best is None or score > best[0]:
            best = (score, dp, state)
    if best is None:
        raise InferenceError("no valid placement at any pyramid level")
    score, dp, state = best
    return Detection(dp.build_pose(state, score), score)


def infer_max(model: MixtureModel, pyramid: FeaturePyramid) -> Detection:
    """Globally best pose over all levels, orientations, and types."""
    return clamp_inference(model, pyramid, None)


def _pose_bbox(pose: PoseConfiguration, pyramid: FeaturePyramid,
               model: MixtureModel) -> tuple[float, float, float, float]:
    grid = pyramid.grid(pose.scale_level, 0)
    x0 = y0 = np.inf
    x1 = y1 = -np.inf
    for pid, pl in pose.placements.items():
        eh, ew = model.extent(pid)
        ax, ay = pl.anchor
        lx0 = (ax - grid.padding) * grid.cell_size - 0.5
        ly0 = (ay - grid.padding) * grid.cell_size - 0.5
        lx1 = lx0 + ew * grid.cell_size
        ly1 = ly0 + eh * grid.cell_size
        gx0, gy0 = grid.level_px_to_image_px((lx0, ly0))
        gx1, gy1 = grid.level_px_to_image_px((lx1, ly1))
        x0 = min(x0, gx0)
        y0 = min(y0, gy0)
        x1 = max(x1, gx1)
        y1 = max(y1, gy1)
    return x0, y0, x1, y1


def _iou(a, b) -> float:
    ix0 = max(a[0], b[0])
    iy0 = max(a[1], b[1])
    ix1 = min(a[2], b[2])
    iy1 = min(a[3], b[3])
    iw = max(0.0, ix1 - ix0)
    ih = max(0.0, iy1 - iy0)
    inter = iw * ih
    if inter <= 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def detect_all(model: MixtureModel, pyramid: FeaturePyramid, threshold: float,
               nms_iou: float | None = 0.5, limit: int | None = None
               ) -> list[Detection]:
    """Every root placement scoring at least the threshold, best first.

    Candidates are expanded in score order (ties toward the smaller level,
    slot, type, y, x) and greedily suppressed when their body bounding box
    overlaps an already kept detection beyond ``nms_iou``; pass None to
    keep everything.  ``limit`` caps the number of survivors.
    """
    _check_compat(model, pyramid)
    candidates = []
    dps = {}
    for level in range(pyramid.num_levels):
        dp = _LevelDP(model, pyramid, level, None)
        dps[level] = dp
        root = dp.root_scores()
        t_n, s_n, ny, nx = root.shape
        # -inf marks off-lattice states, never a detection
        hits = np.argwhere((root >= threshold) & np.isfinite(root))
        for t, th, y, x in hits:
            candidates.append((float(root[t, th, y, x]), level,
                               int(th), int(t), int(y), int(x)))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2], c[3], c[4], c[5]))
    kept: list[Detection] = []
    boxes = []
    for score, level, th, t, y, x in candidates:
        dp = dps[level]
        pose = dp.build_pose((t, th, y, x), score)
        if nms_iou is not None:
            box = _pose_bbox(pose, pyramid, model)
            if any(_iou(box, other) > nms_iou for other in boxes):
                continue
            boxes.append(box)
        kept.append(Detection(pose, score))
        if limit is not None and len(kept) >= limit:
            break
    return kept
