"""Pair-level evaluation: common region, correspondences, rep and nr-rep."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateProjection,
    EmptyCommonRegion,
    NonPositiveDefinite,
    ZeroArea,
)
from .geometry import (
    CriterionConfig,
    EllipticalRegion,
    Homography,
    Variant,
    compare_regions,
    distance_gate,
    ellipse_radii,
    normalize_region,
    reproject_region,
)
from .masks import DescriptorMaskConfig, DomainRect, accumulate, count_keypoints, mask_config

if TYPE_CHECKING:
    from .matching import MatchResult

# analytic area-ratio pruning keeps this margin below the threshold so that
# raster noise can never flip a pruned candidate
_AREA_PRUNE_MARGIN = 0.01


@dataclass(eq=False)
class DetectionSet:
    """Detections of one detector on one image.

    ``descriptors`` is an optional ``(N, d)`` array aligned with ``detections``.
    ``mask`` defaults to the table entry for ``detector_label``.
    """

    detections: list[EllipticalRegion]
    detector_label: str
    image_domain: DomainRect
    descriptors: Optional[np.ndarray] = None
    mask: Optional[DescriptorMaskConfig] = None

    def __post_init__(self):
        self.detections = list(self.detections)
        if self.mask is None:
            self.mask = mask_config(self.detector_label)
        if self.descriptors is not None:
            self.descriptors = np.asarray(self.descriptors, dtype=float)
            if self.descriptors.ndim != 2 or len(self.descriptors) != len(self.detections):
                raise ValueError("descriptors must be an (N, d) array aligned with detections")

    def __len__(self):
        return len(self.detections)

    def subset(self, indices: Sequence[int]) -> "DetectionSet":
        idx = list(indices)
        desc = None if self.descriptors is None else self.descriptors[idx]
        return replace(self, detections=[self.detections[i] for i in idx], descriptors=desc)

    def centers(self) -> np.ndarray:
        if not self.detections:
            return np.empty((0, 2))
        return np.array([r.center for r in self.detections])


@dataclass(eq=False)
class CommonRegion:
    filtered_a: DetectionSet
    filtered_b: DetectionSet
    omega: DomainRect  # frame a
    omega_b: DomainRect  # frame b
    kept_a: list[int]
    kept_b: list[int]
    unmappable: int = 0

    def __iter__(self):
        # unpacks as (filtered_a, filtered_b, omega)
        return iter((self.filtered_a, self.filtered_b, self.omega))


def _inside(points: np.ndarray, domain: DomainRect) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    return (x >= 0) & (x <= domain.width - 1) & (y >= 0) & (y <= domain.height - 1)


def _common_mask(h_to_other: Homography, here: DomainRect, other: DomainRect) -> np.ndarray:
    rows, cols = np.mgrid[0:here.height, 0:here.width]
    pts = np.column_stack([cols.ravel(), rows.ravel()]).astype(float)
    mapped, ok = h_to_other.map_points_masked(pts)
    keep = ok & _inside(mapped, other)
    return keep.reshape(here.shape)


def filter_common_region(set_a: DetectionSet, set_b: DetectionSet, h: Homography) -> CommonRegion:
    """Keep detections whose centers fall in the part of the scene seen by both images.

    A frame-a center is kept when ``H^-1`` maps it inside image b; a frame-b
    center when ``H`` maps it inside image a. Centers that map to infinity are
    dropped and counted in ``unmappable``.
    """
    h_inv = h.inverse()
    dom_a, dom_b = set_a.image_domain, set_b.image_domain
    unmappable = 0

    def keep(s: DetectionSet, hm: Homography, other: DomainRect) -> list[int]:
        nonlocal unmappable
        if not len(s):
            return []
        mapped, ok = hm.map_points_masked(s.centers())
        unmappable += int(np.sum(~ok))
        return np.flatnonzero(ok & _inside(mapped, other)).tolist()

    kept_a = keep(set_a, h_inv, dom_b)
    kept_b = keep(set_b, h, dom_a)
    omega = DomainRect(dom_a.width, dom_a.height, _common_mask(h_inv, dom_a, dom_b))
    omega_b = DomainRect(dom_b.width, dom_b.height, _common_mask(h, dom_b, dom_a))
    return CommonRegion(
        set_a.subset(kept_a),
        set_b.subset(kept_b),
        omega,
        omega_b,
        kept_a,
        kept_b,
        unmappable,
    )


@dataclass(frozen=True)
class Correspondence:
    index_a: int
    index_b: int
    overlap_error: float


def _criterion_frame(r: EllipticalRegion, cfg: CriterionConfig) -> EllipticalRegion:
    if cfg.variant is Variant.ORIGINAL:
        return r
    return normalize_region(r, cfg.kappa)


def candidate_pairs(
    regions_a: Sequence[EllipticalRegion],
    regions_ba: Sequence[Optional[EllipticalRegion]],
    cfg: CriterionConfig,
) -> list[tuple[int, int]]:
    """Index pairs that can possibly satisfy the criterion.

    Discards pairs whose ellipses cannot intersect or whose area ratio alone
    already forces the overlap error above the threshold.
    """
    live_b = [j for j, r in enumerate(regions_ba) if r is not None]
    if not regions_a or not live_b:
        return []
    cmp_a = [_criterion_frame(r, cfg) for r in regions_a]
    cmp_b = [_criterion_frame(regions_ba[j], cfg) for j in live_b]
    big_a = np.array([ellipse_radii(r)[1] for r in cmp_a])
    big_b = np.array([ellipse_radii(r)[1] for r in cmp_b])
    area_a = np.array([r.area for r in cmp_a])
    area_b = np.array([r.area for r in cmp_b])
    reach = big_a + big_b.max()
    if cfg.variant is Variant.CODE:
        reach = np.minimum(reach, [distance_gate(r) for r in regions_a])

    tree = cKDTree(np.array([regions_ba[j].center for j in live_b]))
    centers_a = np.array([r.center for r in regions_a])
    max_ratio_floor = 1.0 - cfg.epsilon_overlap - _AREA_PRUNE_MARGIN
    out = []
    for i, near in enumerate(tree.query_ball_point(centers_a, reach * (1 + 1e-9) + 1e-9)):
        for k in sorted(near):
            d = float(np.hypot(*(centers_a[i] - cmp_b[k].center)))
            if d > big_a[i] + big_b[k]:
                continue
            ratio = min(area_a[i], area_b[k]) / max(area_a[i], area_b[k])
            if ratio < max_ratio_floor:
                continue
            out.append((i, live_b[k]))
    return out


def reproject_all(regions_b: Sequence[EllipticalRegion], h: Homography) -> list[Optional[EllipticalRegion]]:
    out = []
    for r in regions_b:
        try:
            out.append(reproject_region(r, h))
        except (DegenerateProjection, NonPositiveDefinite):
            out.append(None)
    return out


def greedy_assignment(candidates: Sequence[tuple[float, int, int]]) -> list[Correspondence]:
    """One-to-one assignment taking candidates by ascending ``(error, index_a, index_b)``."""
    used_a, used_b = set(), set()
    pairs = []
    for err, i, j in sorted(candidates):
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append(Correspondence(i, j, err))
    return pairs


def find_correspondences(
    filtered_a: DetectionSet,
    filtered_b: DetectionSet,
    h: Homography,
    cfg: CriterionConfig,
) -> list[Correspondence]:
    """Repeated detections as a one-to-one greedy assignment by overlap error."""
    regions_a = filtered_a.detections
    regions_ba = reproject_all(filtered_b.detections, h)
    scored = []
    for i, j in candidate_pairs(regions_a, regions_ba, cfg):
        try:
            ok, err = compare_regions(regions_a[i], regions_ba[j], cfg)
        except ZeroArea:
            continue
        if ok:
            scored.append((err, i, j))
    return greedy_assignment(scored)


def repeatability(pairs: Sequence, count_a: int, count_b: int) -> float:
    """Repeated detections over the smaller common-region count."""
    denom = min(count_a, count_b)
    if denom <= 0:
        raise EmptyCommonRegion("no detection inside the common region")
    return len(pairs) / denom


def nr_repeatability(
    pairs: Sequence[Correspondence],
    filtered_a: DetectionSet,
    cfg_mask: DescriptorMaskConfig,
    omega: DomainRect,
    count_a: int,
    count_b: int,
) -> float:
    """Non-redundant count of the repeated frame-a keypoints over the smaller count."""
    denom = min(count_a, count_b)
    if denom <= 0:
        raise EmptyCommonRegion("no detection inside the common region")
    if not pairs:
        return 0.0
    repeated = [filtered_a.detections[p.index_a] for p in pairs]
    _, k_nr = count_keypoints(accumulate(repeated, cfg_mask, omega))
    return k_nr / denom


def duplicate_set(s: DetectionSet, n: int = 2) -> DetectionSet:
    """Every detection repeated ``n`` times: the original block, then the copies."""
    if n < 2:
        raise ValueError("n must be at least 2")
    desc = None if s.descriptors is None else np.concatenate([s.descriptors] * n)
    return replace(s, detections=s.detections * n, descriptors=desc)


@dataclass
class PairEvaluation:
    count_a: int
    count_b: int
    repeated_pairs: list[Correspondence]
    rep: float
    nr_rep: float
    nr_ratio_a: float
    nr_ratio_b: float
    unmappable: int = 0
    matches: Optional[MatchResult] = None
    extras: dict = field(default_factory=dict)

    @property
    def n_repeated(self) -> int:
        return len(self.repeated_pairs)


def _ratio_or_nan(s: DetectionSet, domain: DomainRect) -> float:
    if not len(s):
        return math.nan
    k, k_nr = count_keypoints(accumulate(s.detections, s.mask, domain))
    return k_nr / k if k > 0 else math.nan


def evaluate_pair(
    set_a: DetectionSet,
    set_b: DetectionSet,
    h: Homography,
    cfg: CriterionConfig = CriterionConfig(),
    ratio_threshold: Optional[float] = None,
) -> PairEvaluation:
    """Full pair evaluation.

    Matching statistics are added when both sets carry descriptors and
    ``ratio_threshold`` is given.
    """
    common = filter_common_region(set_a, set_b, h)
    fa, fb = common.filtered_a, common.filtered_b
    ca, cb = len(fa), len(fb)
    pairs = find_correspondences(fa, fb, h, cfg)
    rep = repeatability(pairs, ca, cb)
    nr_rep = nr_repeatability(pairs, fa, fa.mask, common.omega, ca, cb)
    result = PairEvaluation(
        ca,
        cb,
        pairs,
        rep,
        nr_rep,
        _ratio_or_nan(fa, common.omega),
        _ratio_or_nan(fb, common.omega_b),
        common.unmappable,
    )
    if ratio_threshold is not None and fa.descriptors is not None and fb.descriptors is not None:
        from .matching import evaluate_matches

        result.matches = evaluate_matches(
            fa, fb, h, fa.mask, common.omega, ratio_threshold=ratio_threshold
        )
    return result



# -- synthetic redundancy experiment -----------------------------------------


def random_region(rng: np.random.Generator, center, radius_range=(2.0, 8.0), max_aspect=2.0):
    r = rng.uniform(*radius_range)
    aspect = rng.uniform(1.0, max_aspect)
    theta = rng.uniform(0.0, math.pi)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    radii = np.array([r * math.sqrt(aspect), r / math.sqrt(aspect)])
    return EllipticalRegion(center, rot @ np.diag(radii**2) @ rot.T)


def random_homography(rng: np.random.Generator, size: int, strength: float = 0.05) -> Homography:
    """A mild projective warp of a ``size x size`` image about its center."""
    c = (size - 1) / 2.0
    to_center = np.array([[1, 0, -c], [0, 1, -c], [0, 0, 1.0]])
    theta = rng.uniform(-0.3, 0.3)
    s = rng.uniform(0.9, 1.1)
    m = np.eye(3)
    m[:2, :2] = s * np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    m[:2, :2] += rng.normal(0, strength, (2, 2))
    m[:2, 2] = rng.normal(0, strength * size * 0.2, 2)
    m[2, :2] = rng.normal(0, strength / size, 2)
    return Homography(np.linalg.inv(to_center) @ m @ to_center)


def random_pair(
    rng: np.random.Generator,
    n: int = 40,
    size: int = 160,
    label: str = "SIFT",
    keep: float = 0.7,
    jitter: float = 1.0,
) -> tuple[DetectionSet, DetectionSet, Homography]:
    """Detections on a synthetic image pair.

    A fraction ``keep`` of the frame-a detections reappears in frame b (moved
    by the true homography, with center jitter); the rest of frame b is clutter.
    """
    h = random_homography(rng, size)
    h_inv = h.inverse()
    dom = DomainRect(size, size)
    margin = 12.0
    regs_a = [random_region(rng, rng.uniform(margin, size - margin, 2)) for _ in range(n)]
    regs_b = []
    for r in regs_a:
        if rng.random() >= keep:
            continue
        moved = reproject_region(r, h_inv)
        center = moved.center + rng.normal(0, jitter, 2)
        if np.all((center >= 0) & (center <= size - 1)):
            regs_b.append(EllipticalRegion(center, moved.shape * rng.uniform(0.85, 1.15)))
    while len(regs_b) < n:
        regs_b.append(random_region(rng, rng.uniform(margin, size - margin, 2)))
    order = rng.permutation(len(regs_b))
    regs_b = [regs_b[k] for k in order]
    return DetectionSet(regs_a, label, dom), DetectionSet(regs_b, label, dom), h


@dataclass
class BiasResult:
    rep: float
    rep_dup: float
    nr_rep: float
    nr_rep_dup: float
    nr_ratio: float
    nr_ratio_dup: float


def det2_bias(
    set_a: DetectionSet,
    set_b: DetectionSet,
    h: Homography,
    cfg: CriterionConfig = CriterionConfig(),
    n: int = 2,
) -> BiasResult:
    """Evaluate a pair and its ``n``-fold duplicated version side by side."""
    base = evaluate_pair(set_a, set_b, h, cfg)
    dup = evaluate_pair(duplicate_set(set_a, n), duplicate_set(set_b, n), h, cfg)
    return BiasResult(
        base.rep, dup.rep, base.nr_rep, dup.nr_rep, base.nr_ratio_a, dup.nr_ratio_a
    )
