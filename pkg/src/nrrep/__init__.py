"""Keypoint-detector evaluation with redundancy-aware repeatability."""

from .errors import NrrepError
from .evaluation import (
    DetectionSet,
    PairEvaluation,
    duplicate_set,
    evaluate_pair,
    filter_common_region,
    find_correspondences,
    nr_repeatability,
    repeatability,
)
from .geometry import (
    CriterionConfig,
    EllipticalRegion,
    Homography,
    Variant,
    ellipse_radii,
    is_repeated,
    local_affine_approx,
    max_distance_curve,
    normalize_region,
    overlap_error,
    reproject_region,
)
from .masks import (
    CoverageMap,
    DescriptorMaskConfig,
    DomainRect,
    accumulate,
    count_keypoints,
    mask_config,
    mask_values,
    nr_ratio,
)
from .matching import classify_matches, nn_ratio_match, nr_correct_count

__version__ = "0.1.0"

__all__ = [
    "CoverageMap",
    "CriterionConfig",
    "DescriptorMaskConfig",
    "DetectionSet",
    "DomainRect",
    "EllipticalRegion",
    "Homography",
    "NrrepError",
    "PairEvaluation",
    "Variant",
    "accumulate",
    "classify_matches",
    "count_keypoints",
    "duplicate_set",
    "ellipse_radii",
    "evaluate_pair",
    "filter_common_region",
    "find_correspondences",
    "is_repeated",
    "local_affine_approx",
    "mask_config",
    "mask_values",
    "max_distance_curve",
    "nn_ratio_match",
    "normalize_region",
    "nr_correct_count",
    "nr_ratio",
    "nr_repeatability",
    "overlap_error",
    "repeatability",
    "reproject_region",
]
