"""Ellipse algebra, homography reprojection and repeated-detection criteria.

Regions are ``R(x, S) = {p : (p - x)^T S^-1 (p - x) <= 1}`` with ``S`` a 2x2
symmetric positive-definite matrix in pixels^2. A :class:`Homography` maps
points of the second image (frame b) to the reference image (frame a).

Overlap areas are measured by counting points of a fine square lattice. Both
regions are first rescaled about the midpoint of their centers so that the
larger geometric-mean radius equals ``REFERENCE_RADIUS``; the lattice step is
``RASTER_STEP`` in that frame. The lattice count of each region is taken row by
row from the exact chord of the ellipse on that row, so the cost is linear in
the number of rows.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProjection, NonPositiveDefinite, Singular, ZeroArea

REFERENCE_RADIUS = 30.0
RASTER_STEP = 0.1
DEFAULT_EPSILON = 0.40
DEFAULT_KAPPA = 30.0

# rejection thresholds for input shapes
MAX_CONDITION = 1e8
MIN_EIGENVALUE = 1e-12

_PROJ_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class EllipticalRegion:
    """Detected elliptical region: center (pixels) and shape matrix (pixels^2)."""

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(2)
        s = np.asarray(self.shape, dtype=float).reshape(2, 2)
        s = 0.5 * (s + s.T)
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(s))):
            raise NonPositiveDefinite("region has non-finite entries")
        if s[0, 0] <= 0 or s[0, 0] * s[1, 1] - s[0, 1] ** 2 <= 0:
            raise NonPositiveDefinite(f"shape matrix is not positive-definite: {s.tolist()}")
        c.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "shape", s)

    @classmethod
    def disk(cls, center, radius: float) -> "EllipticalRegion":
        return cls(center, (radius * radius) * np.eye(2))

    @property
    def area(self) -> float:
        return math.pi * math.sqrt(_det2(self.shape))

    @property
    def mean_radius(self) -> float:
        """Geometric mean of the two radii, ``det(S)^(1/4)``."""
        return _det2(self.shape) ** 0.25

    @property
    def precision(self) -> np.ndarray:
        return _inv2(self.shape)

    def contains(self, points) -> np.ndarray:
        d = np.atleast_2d(np.asarray(points, dtype=float)) - self.center
        q = np.einsum("ni,ij,nj->n", d, self.precision, d)
        return q <= 1.0

    def __repr__(self):
        return f"EllipticalRegion(center={self.center.tolist()}, shape={self.shape.tolist()})"


def _det2(m: np.ndarray) -> float:
    return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])


def _inv2(m: np.ndarray) -> np.ndarray:
    det = _det2(m)
    return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det


def check_shape(shape: np.ndarray) -> None:
    """Reject degenerate shape matrices (used when loading detections)."""
    s = np.asarray(shape, dtype=float)
    if not np.all(np.isfinite(s)):
        raise NonPositiveDefinite("shape has non-finite entries")
    lo, hi = np.linalg.eigvalsh(0.5 * (s + s.T))
    if lo < MIN_EIGENVALUE:
        raise NonPositiveDefinite(f"shape eigenvalue {lo:.3g} below {MIN_EIGENVALUE:g}")
    if hi / lo > MAX_CONDITION:
        raise NonPositiveDefinite(f"shape condition number {hi / lo:.3g} above {MAX_CONDITION:g}")


class Homography:
    """Planar homography stored with ``matrix[2, 2] == 1``; maps frame b to frame a."""

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        m = np.array(matrix, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise Singular("homography has non-finite entries")
        if abs(m[2, 2]) < _PROJ_EPS:
            raise Singular("homography entry (3,3) is zero and cannot be normalized to 1")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) < _PROJ_EPS:
            raise Singular("homography is singular")
        m.flags.writeable = False
        self.matrix = m

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.matrix @ other.matrix)

    def __repr__(self):
        return f"Homography({self.matrix.tolist()})"

    def map_points(self, points) -> np.ndarray:
        """Map an (N, 2) array of points. Raises if any point goes to infinity."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        m = self.matrix
        w = p @ m[2, :2] + m[2, 2]
        if np.any(np.abs(w) < _PROJ_EPS):
            raise DegenerateProjection("point maps to infinity under the homography")
        return (p @ m[:2, :2].T + m[:2, 2]) / w[:, None]

    def map_points_masked(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Like :meth:`map_points` but returns ``(mapped, ok)`` instead of raising."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        m = self.matrix
        w = p @ m[2, :2] + m[2, 2]
        ok = np.abs(w) >= _PROJ_EPS
        w = np.where(ok, w, 1.0)
        out = (p @ m[:2, :2].T + m[:2, 2]) / w[:, None]
        return out, ok

    def map_point(self, x) -> np.ndarray:
        return self.map_points(x)[0]


def local_affine_approx(h: Homography, x) -> np.ndarray:
    """Jacobian of the point map ``y -> H y`` evaluated at ``x``."""
    m = h.matrix
    x = np.asarray(x, dtype=float).reshape(2)
    w = m[2, 0] * x[0] + m[2, 1] * x[1] + m[2, 2]
    if abs(w) < _PROJ_EPS:
        raise DegenerateProjection(f"projective denominator vanishes at {x.tolist()}")
    u = (m[0, 0] * x[0] + m[0, 1] * x[1] + m[0, 2]) / w
    v = (m[1, 0] * x[0] + m[1, 1] * x[1] + m[1, 2]) / w
    return np.array(
        [
            [m[0, 0] - u * m[2, 0], m[0, 1] - u * m[2, 1]],
            [m[1, 0] - v * m[2, 0], m[1, 1] - v * m[2, 1]],
        ]
    ) / w


def reproject_region(r_b: EllipticalRegion, h: Homography) -> EllipticalRegion:
    """Carry a frame-b region into frame a.

    The shape is pushed through the local affine approximation ``A`` of the
    b-to-a map at the region center, ``S_ba = A S_b A^T``. (Written in terms
    of the a-to-b Jacobian ``A^-1`` this is ``A'^-1 S_b A'^-T``.)
    """
    a = local_affine_approx(h, r_b.center)
    center = h.map_point(r_b.center)
    shape = a @ r_b.shape @ a.T
    try:
        return EllipticalRegion(center, shape)
    except NonPositiveDefinite as exc:
        raise NonPositiveDefinite(f"reprojection destroyed positive-definiteness: {exc}") from exc


def ellipse_radii(r: EllipticalRegion) -> tuple[float, float]:
    lo, hi = np.linalg.eigvalsh(r.shape)
    if lo <= 0:
        raise NonPositiveDefinite("shape has a non-positive eigenvalue")
    return math.sqrt(lo), math.sqrt(hi)


def normalize_region(r: EllipticalRegion, kappa: float = DEFAULT_KAPPA) -> EllipticalRegion:
    """Rescale the region so the geometric mean of its radii is ``kappa``."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    rr = math.sqrt(_det2(r.shape))  # r * R
    return EllipticalRegion(r.center, r.shape * (kappa * kappa / rr))


# -- overlap error -----------------------------------------------------------


def _row_chords(center: np.ndarray, shape: np.ndarray):
    """Lattice rows crossed by the ellipse and the x-extent of each chord.

    Coordinates are in lattice units (integer points are samples).
    """
    syy = shape[1, 1]
    half_h = math.sqrt(syy)
    j0 = math.ceil(center[1] - half_h)
    j1 = math.floor(center[1] + half_h)
    if j1 < j0:
        return j0, np.empty(0), np.empty(0)
    rows = np.arange(j0, j1 + 1, dtype=float)
    dy = rows - center[1]
    # x-chord of S^-1 quadratic on row dy: x = cx + (sxy*dy +- sqrt(det S * (syy - dy^2))) / syy
    det = _det2(shape)
    disc = np.maximum(det * (syy - dy * dy), 0.0)
    root = np.sqrt(disc) / syy
    mid = center[0] + shape[0, 1] * dy / syy
    return j0, mid - root, mid + root


def _lattice_count(lo: np.ndarray, hi: np.ndarray) -> int:
    n = np.floor(hi) - np.ceil(lo) + 1.0
    return int(np.sum(np.maximum(n, 0.0)))


def _bounding_overlap(ca, sa, cb, sb) -> bool:
    ex_a = math.sqrt(sa[0, 0])
    ey_a = math.sqrt(sa[1, 1])
    ex_b = math.sqrt(sb[0, 0])
    ey_b = math.sqrt(sb[1, 1])
    return abs(ca[0] - cb[0]) <= ex_a + ex_b and abs(ca[1] - cb[1]) <= ey_a + ey_b


def overlap_error(r_a: EllipticalRegion, r_b_in_a: EllipticalRegion) -> float:
    """``1 - |A n B| / |A u B|`` for two regions expressed in the same frame.

    Symmetric in its arguments. Identical regions give exactly 0 and regions
    with disjoint bounding boxes give exactly 1.
    """
    ca, cb = r_a.center, r_b_in_a.center
    if not _bounding_overlap(ca, r_a.shape, cb, r_b_in_a.shape):
        return 1.0
    scale = REFERENCE_RADIUS / max(r_a.mean_radius, r_b_in_a.mean_radius) / RASTER_STEP
    mid = 0.5 * (ca + cb)
    pa = scale * (ca - mid)
    pb = scale * (cb - mid)
    sa = (scale * scale) * r_a.shape
    sb = (scale * scale) * r_b_in_a.shape

    ja, lo_a, hi_a = _row_chords(pa, sa)
    jb, lo_b, hi_b = _row_chords(pb, sb)
    n_a = _lattice_count(lo_a, hi_a)
    n_b = _lattice_count(lo_b, hi_b)
    if n_a == 0 or n_b == 0:
        raise ZeroArea("region is below raster resolution after rescaling")

    j0 = max(ja, jb)
    j1 = min(ja + len(lo_a), jb + len(lo_b))
    if j1 <= j0:
        return 1.0
    sl_a = slice(j0 - ja, j1 - ja)
    sl_b = slice(j0 - jb, j1 - jb)
    lo = np.maximum(lo_a[sl_a], lo_b[sl_b])
    hi = np.minimum(hi_a[sl_a], hi_b[sl_b])
    inter = _lattice_count(lo, hi)
    union = n_a + n_b - inter
    return 1.0 - inter / union


# -- repeated-detection criteria ---------------------------------------------


class Variant(str, enum.Enum):
    ORIGINAL = "original"
    NORMALIZED = "normalized"
    CODE = "code"


@dataclass(frozen=True)
class CriterionConfig:
    """Which repeatability rule to apply and its parameters.

    ``epsilon_overlap`` is the largest tolerated overlap error (inclusive);
    ``kappa`` is the normalized geometric-mean radius used by the
    ``normalized`` and ``code`` variants.
    """

    variant: Variant = Variant.ORIGINAL
    epsilon_overlap: float = DEFAULT_EPSILON
    kappa: float = DEFAULT_KAPPA

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not 0.0 < self.epsilon_overlap < 1.0:
            raise ValueError(f"epsilon_overlap must lie in (0, 1), got {self.epsilon_overlap}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")


def distance_gate(r_a: EllipticalRegion) -> float:
    """Center-distance bound ``4 sqrt(r R)`` used by the code variant."""
    return 4.0 * math.sqrt(math.sqrt(_det2(r_a.shape)))


def compare_regions(
    r_a: EllipticalRegion, r_ba: EllipticalRegion, cfg: CriterionConfig
) -> tuple[bool, float]:
    """Apply the criterion to a frame-a region and a region already reprojected into frame a."""
    if cfg.variant is Variant.ORIGINAL:
        err = overlap_error(r_a, r_ba)
        return err <= cfg.epsilon_overlap, err
    err = overlap_error(normalize_region(r_a, cfg.kappa), normalize_region(r_ba, cfg.kappa))
    ok = err <= cfg.epsilon_overlap
    if cfg.variant is Variant.CODE:
        dist = float(np.hypot(*(r_a.center - r_ba.center)))
        ok = ok and dist <= distance_gate(r_a)
    return ok, err


def is_repeated(
    r_a: EllipticalRegion, r_b: EllipticalRegion, h: Homography, cfg: CriterionConfig
) -> tuple[bool, float]:
    """Whether ``r_b`` (frame b) repeats ``r_a`` (frame a) under ``cfg``.

    Returns the decision and the overlap error it was based on.
    """
    return compare_regions(r_a, reproject_region(r_b, h), cfg)


def max_distance_curve(r: float, cfg: CriterionConfig, tol: float = 1e-3) -> float:
    """Largest center distance at which two equal disks of radius ``r`` are repeated.

    Bisection on the distance; the overlap error is monotone in it.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    ident = Homography.identity()
    disk_a = EllipticalRegion.disk((0.0, 0.0), r)

    def repeated(d: float) -> bool:
        return is_repeated(disk_a, EllipticalRegion.disk((d, 0.0), r), ident, cfg)[0]

    extent = r if cfg.variant is Variant.ORIGINAL else max(r, cfg.kappa)
    lo, hi = 0.0, 2.0 * extent * 1.01 + tol
    if repeated(hi):
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if repeated(mid):
            lo = mid
        else:
            hi = mid
    return lo
