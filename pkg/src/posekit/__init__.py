"""Articulated 2-D pose estimation with mixtures of typed parts.

Deformable part models over a rotation-aware feature pyramid, exact
tree-structured inference via generalized distance transforms, part types
from clustered overlap patterns, max-margin training with hard-negative
mining, and a two-tree combined estimator for the lower body.
"""

from .annotations import (AnnotationError, AnnotationSet, GraphInstance,
                          PersonRecord, graph_instance, load_annotations,
                          rotate_record, save_annotations, torso_diameter)
from .config import RunConfig, load_config, resolve_seed
from .evaluation import (EvalRecord, JOINT_GROUPS, category_report, pdj_avg,
                         pdj_curve, report_csv)
from .features import (FeatureGrid, FeaturePyramid, PyramidSpec,
                       build_pyramid, extract_hog)
from .gdt import gdt_1d, gdt_2d
from .graphs import (BodyHalf, NUM_KEYPOINTS, PartGraph, PartSpec,
                     TreeVariant, chain_graph, lower_constrained_graph,
                     upper_constrained_graph)
from .inference import (Detection, Evidence, clamp_inference, detect_all,
                        infer_max, unary_score_maps)
from .learning import TrainConfig, train, train_with_diagnostics
from .model import (MixtureModel, PartPlacement, PoseConfiguration,
                    pose_keypoints, score_pose, zero_model)
from .modelio import (CorruptHeaderError, ModelIOError, TruncatedFileError,
                      VersionMismatchError, load_model, save_model)
from .phraselets import (PatternMode, PhraseletBook, build_phraselet_book,
                         occluding_set, pattern_vector)
from .twotrees import TwoTreeModel, TwoTreeResult, two_tree_estimate

__version__ = "0.1.0"

__all__ = [
    "AnnotationError", "AnnotationSet", "BodyHalf", "CorruptHeaderError",
    "Detection", "EvalRecord", "Evidence", "FeatureGrid", "FeaturePyramid",
    "GraphInstance", "JOINT_GROUPS", "MixtureModel", "ModelIOError",
    "NUM_KEYPOINTS", "PartGraph", "PartPlacement", "PartSpec", "PatternMode",
    "PersonRecord", "PhraseletBook", "PoseConfiguration", "PyramidSpec",
    "RunConfig", "TrainConfig", "TreeVariant", "TruncatedFileError",
    "TwoTreeModel", "TwoTreeResult", "VersionMismatchError", "build_phraselet_book",
    "build_pyramid", "category_report", "chain_graph", "clamp_inference",
    "detect_all", "extract_hog", "gdt_1d", "gdt_2d", "graph_instance",
    "infer_max", "load_annotations", "load_config", "load_model",
    "lower_constrained_graph", "occluding_set", "pattern_vector", "pdj_avg",
    "pdj_curve", "pose_keypoints", "report_csv", "resolve_seed",
    "rotate_record", "save_annotations", "save_model", "score_pose",
    "torso_diameter", "train", "train_with_diagnostics", "two_tree_estimate",
    "unary_score_maps", "upper_constrained_graph", "zero_model",
]
