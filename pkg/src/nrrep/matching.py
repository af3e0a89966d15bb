"""Descriptor matching with the nearest-neighbor ratio test, and its scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, TooFewCandidates
from .geometry import EllipticalRegion, Homography, overlap_error, reproject_region
from .masks import DescriptorMaskConfig, DomainRect, accumulate, count_keypoints

DEFAULT_RATIO = 0.6
DEFAULT_MATCH_EPSILON = 0.40

# element budget of one (queries x candidates x dims) difference block
_BLOCK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class Match:
    index_a: int
    index_b: int
    distance: float
    nn_ratio: float


def nn_ratio_match(desc_a, desc_b, ratio_threshold: float = DEFAULT_RATIO) -> list[Match]:
    """Match each row of ``desc_a`` to its Euclidean nearest neighbor in ``desc_b``.

    A match is kept when ``d1 < ratio_threshold * d2``. Equal distances resolve
    to the lower b-index, so an exact duplicate of the nearest neighbor in b
    makes the test fail.
    """
    a = np.atleast_2d(np.asarray(desc_a, dtype=float))
    b = np.atleast_2d(np.asarray(desc_b, dtype=float))
    if a.size == 0:
        return []
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"descriptor lengths differ: {a.shape[1]} vs {b.shape[1]}")
    if len(b) < 2:
        raise TooFewCandidates("ratio test needs at least two candidates")

    step = max(1, _BLOCK_ELEMENTS // (b.shape[0] * b.shape[1]))
    out = []
    for start in range(0, len(a), step):
        block = a[start:start + step]
        d2 = np.sum((block[:, None, :] - b[None, :, :]) ** 2, axis=2)
        rows = np.arange(len(block))
        first = np.argmin(d2, axis=1)
        best = d2[rows, first].copy()
        d2[rows, first] = np.inf
        second = d2[rows, np.argmin(d2, axis=1)]
        d1 = np.sqrt(best)
        dn = np.sqrt(second)
        for k in np.flatnonzero(d1 < ratio_threshold * dn):
            ratio = float(d1[k] / dn[k])
            out.append(Match(start + int(k), int(first[k]), float(d1[k]), ratio))
    return out


def _is_correct(err: float, epsilon: float) -> bool:
    # strict below epsilon; the endpoints accept exact coincidence (eps=0) and everything (eps>=1)
    return err < epsilon or err == 0.0 or epsilon >= 1.0


def classify_matches(
    matches: Sequence[Match],
    regions_a: Sequence[EllipticalRegion],
    regions_b: Sequence[EllipticalRegion],
    h: Homography,
    epsilon: float = DEFAULT_MATCH_EPSILON,
) -> list[bool]:
    """A match is correct when its regions overlap with error below ``epsilon``."""
    flags = []
    for m in matches:
        err = overlap_error(regions_a[m.index_a], reproject_region(regions_b[m.index_b], h))
        flags.append(_is_correct(err, epsilon))
    return flags


def nr_correct_count(
    correct_regions: Sequence[EllipticalRegion], mask_cfg: DescriptorMaskConfig, omega: DomainRect
) -> float:
    """Non-redundant count of the frame-a regions of the correct matches."""
    if not correct_regions:
        return 0.0
    return count_keypoints(accumulate(correct_regions, mask_cfg, omega))[1]


def _keypoint_ids(regions: Sequence[EllipticalRegion]) -> list[int]:
    # rows with an identical region are one keypoint described several times
    ids: dict[bytes, int] = {}
    out = []
    for r in regions:
        key = r.center.tobytes() + r.shape.tobytes()
        out.append(ids.setdefault(key, len(ids)))
    return out


@dataclass
class MatchResult:
    pairs: list[Match]
    correct_flags: list[bool]
    total: int
    correct: int
    nr_correct: float
    # tallies per distinct keypoint rather than per descriptor row
    total_keypoints: int = 0
    correct_keypoints: int = 0
    extras: dict = field(default_factory=dict)


def evaluate_matches(
    set_a,
    set_b,
    h: Homography,
    mask_cfg: DescriptorMaskConfig,
    omega: DomainRect,
    ratio_threshold: float = DEFAULT_RATIO,
    epsilon: float = DEFAULT_MATCH_EPSILON,
) -> MatchResult:
    """Match ``set_a`` against ``set_b`` (both :class:`DetectionSet` with descriptors)."""
    if len(set_a) == 0 or len(set_b) < 2:
        return MatchResult([], [], 0, 0, 0.0)
    matches = nn_ratio_match(set_a.descriptors, set_b.descriptors, ratio_threshold)
    flags = classify_matches(matches, set_a.detections, set_b.detections, h, epsilon)
    good = [set_a.detections[m.index_a] for m, ok in zip(matches, flags) if ok]
    ids = _keypoint_ids(set_a.detections)
    return MatchResult(
        pairs=matches,
        correct_flags=flags,
        total=len(matches),
        correct=len(good),
        nr_correct=nr_correct_count(good, mask_cfg, omega),
        total_keypoints=len({ids[m.index_a] for m in matches}),
        correct_keypoints=len({ids[m.index_a] for m, ok in zip(matches, flags) if ok}),
    )
