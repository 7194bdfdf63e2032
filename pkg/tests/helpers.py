"""Builders shared across test modules."""

from __future__ import annotations

import numpy as np

from posekit.features import PyramidSpec, build_pyramid
from posekit.graphs import BodyHalf, PartGraph, PartSpec, TreeVariant
from posekit.model import EPS_DEF, MixtureModel


def generic_graph(type_counts, edges, root=0) -> PartGraph:
    parts = tuple(PartSpec(i, f"p{i}", None, int(t), BodyHalf.UPPER)
                  for i, t in enumerate(type_counts))
    return PartGraph(parts, tuple(edges), root, TreeVariant.GENERIC)


def random_tiny_graph(rng) -> PartGraph:
    """1-3 parts; chains, stars, and re-rooted chains, random type counts."""
    n = int(rng.integers(1, 4))
    types = [int(rng.integers(1, 3)) for _ in range(n)]
    if n == 1:
        return generic_graph(types, ())
    if n == 2:
        root = int(rng.integers(2))
        return generic_graph(types, ((1, 0),), root)
    shape = int(rng.integers(3))
    if shape == 0:                       # chain rooted at an end
        return generic_graph(types, ((1, 0), (2, 1)), 0)
    if shape == 1:                       # chain rooted at the far end
        return generic_graph(types, ((1, 0), (2, 1)), 2)
    return generic_graph(types, ((1, 0), (2, 0)), 0)   # star


def random_model(rng, graph: PartGraph, channels: int, extent: int,
                 rotated: bool, nslots: int,
                 template_scale: float = 0.2) -> MixtureModel:
    pair = 5 if rotated else 4
    tpl, springs, biases, mu = {}, {}, {}, {}
    for p in graph.parts:
        tpl[p.part_id] = rng.normal(
            size=(p.num_types, extent, extent, channels)) * template_scale
    for idx, (child, parent) in enumerate(graph.edges):
        tc = graph.part(child).num_types
        tp = graph.part(parent).num_types
        w = np.empty((tc, pair))
        w[:, 0] = rng.uniform(-0.5, 0.5, tc)
        w[:, 1] = rng.uniform(EPS_DEF, 0.4, tc)
        w[:, 2] = rng.uniform(-0.5, 0.5, tc)
        w[:, 3] = rng.uniform(EPS_DEF, 0.4, tc)
        if rotated:
            w[:, 4] = rng.uniform(-0.5, 1.0, tc)
        springs[idx] = w
        biases[idx] = rng.normal(size=(tc, tp))
        if rotated:
            mu[idx] = np.stack([rng.uniform(0.0, 3.0, tc),
                                rng.uniform(-1.5, 1.5, tc)], axis=1)
        else:
            mu[idx] = rng.uniform(-2.0, 2.0, (tc, 2))
    return MixtureModel(graph, tpl, springs, biases, mu, rotated=rotated,
                        orientation_count=nslots)


def random_pyramid(rng, image_px: int = 16, levels: int = 1, nslots: int = 1):
    img = rng.random((image_px, image_px))
    spec = PyramidSpec(cell_size=4, levels=levels, orientation_count=nslots)
    return build_pyramid(img, spec)


def states_of(pose) -> dict[int, tuple[int, int, int, int]]:
    """Placements as (type, slot, y, x) tuples, the oracle's state format."""
    return {pid: (pl.type_index, pl.slot, pl.anchor[1], pl.anchor[0])
            for pid, pl in pose.placements.items()}
