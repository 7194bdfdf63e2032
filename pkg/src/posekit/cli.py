"""Command-line front end.

Subcommands: synth, cluster, train, infer, eval.  Every command accepts
--config (JSON overrides for RunConfig) and --seed, prints one JSON object
to stdout on success, and is deterministic given (inputs, config, seed).

Exit codes: 0 success; 2 usage error (bad flag or arguments); 3 an input
file or directory could not be read; 4 inputs were readable but invalid
(bad annotations, corrupt model file, infeasible training data, ...).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .annotations import (AnnotationError, graph_instance, load_annotations)
from .config import (ConfigError, RunConfig, load_config, resolve_seed,
                     stage_seed_sequence)
from .evaluation import (EvalError, EvalRecord, category_report, curve_csv,
                         pdj_curve, report_csv)
from .features import PyramidError, PyramidSpec, build_pyramid
from .graphs import (NUM_KEYPOINTS, PartGraph, lower_constrained_graph,
                     upper_constrained_graph)
from .inference import InferenceError, infer_max
from .learning import TrainConfig, TrainError, make_positive, train
from .model import MixtureModel, PlacementError, pose_keypoints
from .modelio import ModelIOError, load_model, save_model
from .phraselets import (PatternMode, PhraseletError, build_phraselet_book,
                         cluster_mean_shapes)
from .synthetic import (POSE_FAMILIES, generate_negatives, generate_synthetic,
                        save_scenes, to_uint8)
from .twotrees import TwoTreeModel, two_tree_estimate

EXIT_INPUT = 3
EXIT_DATA = 4

_DATA_ERRORS = (AnnotationError, ConfigError, EvalError, InferenceError,
                ModelIOError, PhraseletError, PlacementError, PyramidError,
                TrainError)


def _emit(obj: dict):
    print(json.dumps(obj, sort_keys=True))


def _load_gray(path: str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


def _spec(config: RunConfig) -> PyramidSpec:
    return PyramidSpec(cell_size=config.cell_size, levels=config.levels,
                       scale_step=config.scale_step,
                       orientation_count=(config.orientation_count
                                          if config.rotated else 1),
                       padding=config.padding,
                       part_extent=config.part_extent)


def _graph_for(tree: str, num_types: int) -> PartGraph:
    if tree == "upper":
        return upper_constrained_graph(num_types)
    if tree == "lower":
        return lower_constrained_graph(num_types)
    raise ConfigError(f"unknown tree {tree!r}")


def _mode_for(name: str) -> PatternMode:
    if name == "plain":
        return PatternMode.PLAIN
    if name == "normalized":
        return PatternMode.ROTATION_NORMALIZED
    raise ConfigError(f"unknown pattern mode {name!r}")


# -- synth ---------------------------------------------------------------


def _cmd_synth(args, config: RunConfig, seed: int) -> int:
    families = [f.strip() for f in args.families.split(",") if f.strip()]
    for fam in families:
        if fam not in POSE_FAMILIES:
            raise ConfigError(
                f"unknown family {fam!r}; choose from {sorted(POSE_FAMILIES)}")
    size = (args.size, args.size)
    scenes = []
    for fam in families:
        fam_seed = stage_seed_sequence(seed, f"synth:{fam}")
        scenes.extend(generate_synthetic(args.count, fam, fam_seed, size=size))
    ann_path = save_scenes(scenes, args.out)
    neg_count = 0
    if args.negatives > 0:
        from PIL import Image

        neg_dir = os.path.join(args.out, "negatives")
        os.makedirs(neg_dir, exist_ok=True)
        negs = generate_negatives(args.negatives,
                                  stage_seed_sequence(seed, "synth:neg"),
                                  size=size)
        for i, img in enumerate(negs):
            Image.fromarray(to_uint8(img)).save(
                os.path.join(neg_dir, f"neg_{i:04d}.png"))
        neg_count = len(negs)
    _emit({"command": "synth", "annotations": ann_path,
           "scenes": len(scenes), "negatives": neg_count, "seed": seed})
    return 0


# -- cluster -------------------------------------------------------------


def _cmd_cluster(args, config: RunConfig, seed: int) -> int:
    records = load_annotations(args.annotations)
    graph = _graph_for(args.tree, config.num_types)
    instances = [graph_instance(r, graph, pelvis_offset=config.pelvis_offset,
                                head_offset=config.head_offset)
                 for r in records]
    mode = _mode_for(args.mode)
    book = build_phraselet_book(
        instances, graph, k=config.num_types, mode=mode, sigma=config.sigma,
        seed=stage_seed_sequence(seed, "cluster"),
        m=config.overlap_count, radius=config.overlap_radius)
    save_model(book, args.out)
    if args.montage:
        from .svg import render_montage

        pid = graph.root if args.montage_part is None else args.montage_part
        shapes = cluster_mean_shapes(instances, graph, book, pid)
        render_montage(shapes, args.montage)
    sizes = {str(pid): np.bincount(book.labels[pid][book.labels[pid] >= 0],
                                   minlength=book.k).tolist()
             for pid in sorted(book.labels)}
    _emit({"command": "cluster", "book": args.out, "mode": args.mode,
           "k": book.k, "instances": len(instances), "cluster_sizes": sizes,
           "seed": seed})
    return 0


# -- train ---------------------------------------------------------------


def _list_images(directory: str) -> list[str]:
    return [os.path.join(directory, n) for n in sorted(os.listdir(directory))
            if n.lower().endswith(".png")]


def _train_one(tree: str, records, data_dir: str, book, negatives,
               config: RunConfig) -> MixtureModel:
    from .synthetic import load_scene_image

    graph = _graph_for(tree, config.num_types)
    spec = _spec(config)
    orient = spec.orientation_count
    positives = []
    for idx, rec in enumerate(records):
        image = load_scene_image(data_dir, rec)
        pyramid = build_pyramid(image, spec)
        instance = graph_instance(rec, graph,
                                  pelvis_offset=config.pelvis_offset,
                                  head_offset=config.head_offset)
        pose = make_positive(pyramid, instance, book, idx, graph,
                             config.part_extent, config.rotated, orient)
        positives.append((pyramid, pose))
    tc = TrainConfig(C=config.svm_c, epochs=config.epochs,
                     cache_size=config.cache_size,
                     max_per_image=config.max_per_image)
    return train(positives, negatives, graph, tc, config.part_extent,
                 rotated=config.rotated, orientation_count=orient)


def _cmd_train(args, config: RunConfig, seed: int) -> int:
    records = list(load_annotations(args.annotations))
    book = load_model(args.book)
    if not hasattr(book, "label_for"):
        raise ModelIOError(f"{args.book} does not contain a phraselet book")
    spec = _spec(config)
    negatives = [build_pyramid(_load_gray(p), spec)
                 for p in _list_images(args.negatives)]
    if not negatives:
        raise TrainError(f"no negative images in {args.negatives}")
    data_dir = os.path.dirname(os.path.abspath(args.annotations))
    if args.tree == "both":
        lower = _train_one("lower", records, data_dir, book, negatives, config)
        upper = _train_one("upper", records, data_dir, book, negatives, config)
        model = TwoTreeModel(lower, upper)
    else:
        model = _train_one(args.tree, records, data_dir, book, negatives,
                           config)
    save_model(model, args.out)
    _emit({"command": "train", "model": args.out, "tree": args.tree,
           "positives": len(records), "negatives": len(negatives),
           "seed": seed})
    return 0


# -- infer ---------------------------------------------------------------


def _template_reach(model: MixtureModel) -> int:
    sides = []
    for part in model.graph.parts:
        sides.extend(model.extent(part.part_id))
    return max(sides)


def _cmd_infer(args, config: RunConfig, seed: int) -> int:
    model = load_model(args.model)
    image = _load_gray(args.image)
    if isinstance(model, TwoTreeModel):
        spec = PyramidSpec(cell_size=config.cell_size, levels=config.levels,
                           scale_step=config.scale_step,
                           orientation_count=model.orientation_count,
                           padding=config.padding,
                           part_extent=max(_template_reach(model.lower),
                                           _template_reach(model.upper)))
        pyramid = build_pyramid(image, spec)
        result = two_tree_estimate(model, pyramid)
        pose, score = result.pose, result.score
        graph = model.upper.graph
    elif isinstance(model, MixtureModel):
        spec = PyramidSpec(cell_size=config.cell_size, levels=config.levels,
                           scale_step=config.scale_step,
                           orientation_count=model.orientation_count,
                           padding=config.padding,
                           part_extent=_template_reach(model))
        pyramid = build_pyramid(image, spec)
        det = infer_max(model, pyramid)
        pose, score = det.pose, det.score
        graph = model.graph
    else:
        raise ModelIOError(f"{args.model} does not contain a pose model")
    keypoints = pose_keypoints(pose, graph)
    payload = {
        "command": "infer",
        "image": args.image,
        "score": float(score),
        "level": pose.scale_level,
        "keypoints": [[float(x), float(y)] for x, y in keypoints],
        "parts": {
            str(pid): {"anchor": [pl.anchor[0], pl.anchor[1]],
                       "slot": pl.slot, "type": pl.type_index,
                       "x": float(pl.x), "y": float(pl.y),
                       "theta": float(pl.theta)}
            for pid, pl in sorted(pose.placements.items())
        },
    }
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(json.dumps(payload, sort_keys=True) + "\n")
    if args.svg:
        from .svg import render_pose

        render_pose(image.shape, {"estimate": keypoints}, args.svg)
    _emit(payload)
    return 0


# -- eval ----------------------------------------------------------------


def _load_predictions(path: str) -> dict[tuple[str, int], np.ndarray]:
    preds = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                key = (obj["image_id"], int(obj.get("person", 0)))
                kp = np.asarray(obj["keypoints"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as exc:
                raise EvalError(f"{path}:{lineno}: bad prediction: {exc}")
            if kp.shape != (NUM_KEYPOINTS, 2):
                raise EvalError(
                    f"{path}:{lineno}: keypoints must be {NUM_KEYPOINTS}x2")
            preds[key] = kp
    return preds


def _cmd_eval(args, config: RunConfig, seed: int) -> int:
    from .annotations import torso_diameter

    records = list(load_annotations(args.annotations))
    methods: dict[str, list[EvalRecord]] = {}
    for spec_str in args.pred:
        name, _, path = spec_str.partition("=")
        if not path:
            raise ConfigError(
                f"--pred wants NAME=FILE, got {spec_str!r}")
        preds = _load_predictions(path)
        rows = []
        for rec in records:
            key = (rec.image_id, rec.person)
            if key not in preds:
                raise EvalError(f"{path}: no prediction for {key}")
            rows.append(EvalRecord(rec.image_id, preds[key], rec.keypoints,
                                   torso_diameter(rec.keypoints), rec.tags))
        methods[name] = rows
    categories = sorted({tag for rows in methods.values()
                         for rec in rows for tag in rec.tags})
    table = report_csv(category_report(methods, categories))
    with open(args.out, "w") as fh:
        fh.write(table)
    outputs = {"report": args.out}
    curves = {name: pdj_curve(rows) for name, rows in methods.items()}
    if args.curves:
        with open(args.curves, "w") as fh:
            fh.write(curve_csv(curves))
        outputs["curves"] = args.curves
    if args.plot:
        from .evaluation import thresholds
        from .svg import render_curves

        render_curves({n: c.pooled for n, c in curves.items()},
                      thresholds(), args.plot)
        outputs["plot"] = args.plot
    summary = {name: round(c.pooled_avg, 4) for name, c in curves.items()}
    _emit({"command": "eval", "outputs": outputs, "pooled_avg": summary,
           "records": len(records)})
    return 0


# -- parser --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posekit",
        description="Pose estimation with mixtures of typed parts.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None,
                       help="JSON file overriding run defaults")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (beats POSEKIT_SEED and config)")

    p = sub.add_parser("synth", help="generate a synthetic pose dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--families", default="upright",
                   help="comma-separated pose families")
    p.add_argument("--count", type=int, default=20, help="scenes per family")
    p.add_argument("--negatives", type=int, default=0,
                   help="clutter-only images to add")
    p.add_argument("--size", type=int, default=96, help="canvas side, pixels")

    p = sub.add_parser("cluster", help="build a phraselet type book")
    common(p)
    p.add_argument("--annotations", required=True)
    p.add_argument("--tree", choices=("upper", "lower"), default="upper")
    p.add_argument("--mode", choices=("plain", "normalized"),
                   default="normalized")
    p.add_argument("--out", required=True)
    p.add_argument("--montage", default=None,
                   help="optional SVG of per-cluster mean shapes")
    p.add_argument("--montage-part", type=int, default=None)

    p = sub.add_parser("train", help="train a model with hard-negative mining")
    common(p)
    p.add_argument("--annotations", required=True)
    p.add_argument("--book", required=True, help="phraselet book file")
    p.add_argument("--negatives", required=True,
                   help="directory of person-free images")
    p.add_argument("--tree", choices=("upper", "lower", "both"),
                   default="upper")
    p.add_argument("--out", required=True)

    p = sub.add_parser("infer", help="run pose inference on one image")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", default=None, help="write the JSON result here too")
    p.add_argument("--svg", default=None, help="skeleton overlay SVG")

    p = sub.add_parser("eval", help="score predictions against annotations")
    common(p)
    p.add_argument("--annotations", required=True)
    p.add_argument("--pred", action="append", required=True,
                   metavar="NAME=FILE", help="prediction file; repeatable")
    p.add_argument("--out", required=True, help="summary CSV path")
    p.add_argument("--curves", default=None, help="pooled curve CSV path")
    p.add_argument("--plot", default=None, help="pooled curve SVG path")
    return parser


_COMMANDS = {
    "synth": _cmd_synth,
    "cluster": _cmd_cluster,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        seed = resolve_seed(args.seed, config)
        return _COMMANDS[args.command](args, config, seed)
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
