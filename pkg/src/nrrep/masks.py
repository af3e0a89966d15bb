"""Descriptor masks and coverage maps.

Each detection owns a mask over the image: a Gaussian in the Mahalanobis
distance of its region, truncated at ``q(x) <= rho^2`` and normalized to unit
sum over the valid pixels of the domain. Summing all masks counts detections;
taking their pointwise maximum counts non-redundant ones.

Pixels are sampled at integer coordinates ``(col, row)``, one sample per
pixel, so the domain of a ``W x H`` image spans ``[0, W-1] x [0, H-1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import EmptySet, EmptySupport, IoFailure
from .geometry import EllipticalRegion

FLAT = math.inf

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class DescriptorMaskConfig:
    """Extent of the image patch a descriptor consumes.

    ``rho`` truncates the mask at ``rho`` region radii; ``zeta`` is the
    Gaussian standard deviation in region radii (``FLAT`` for an unweighted
    patch).
    """

    rho: float
    zeta: float
    label: str = ""

    def __post_init__(self):
        if not (self.rho > 0 and self.zeta > 0):
            raise ValueError(f"rho and zeta must be positive, got {self.rho}, {self.zeta}")

    @property
    def flat(self) -> bool:
        return math.isinf(self.zeta)

    def scaled(self, factor: float) -> "DescriptorMaskConfig":
        """Same physical patch for regions whose radius was divided by ``factor``."""
        return DescriptorMaskConfig(self.rho * factor, self.zeta * factor, self.label)


_SIFT_LIKE = (6.0 * _SQRT2, 6.0)

MASK_TABLE: dict[str, DescriptorMaskConfig] = {}


def _register(names: Iterable[str], rho: float, zeta: float) -> None:
    names = list(names)
    cfg = DescriptorMaskConfig(rho, zeta, names[0])
    for n in names:
        MASK_TABLE[n.lower()] = cfg


_register(["SIFT"], *_SIFT_LIKE)
_register(["SIFT-S", "SIFT-single"], *_SIFT_LIKE)
_register(["Harris-Laplace", "harlap"], *_SIFT_LIKE)
_register(["Hessian-Laplace", "heslap"], *_SIFT_LIKE)
_register(["Harris-Affine", "haraff"], *_SIFT_LIKE)
_register(["Hessian-Affine", "hesaff"], *_SIFT_LIKE)
_register(["SFOP"], *_SIFT_LIKE)
_register(["SIFER"], *_SIFT_LIKE)
_register(["SURF"], 10.0 * _SQRT2, 3.3)
# BRISK values are in units of the BRISK size s
_register(["BRISK"], 1.5 * _SQRT2, 1.5)
# MSER is described on a patch twice the fitted ellipse
_register(["MSER"], 2.0, FLAT)
_register(["EBR"], 1.0, FLAT)
_register(["IBR"], 1.0, FLAT)


def mask_config(label: str) -> DescriptorMaskConfig:
    try:
        return MASK_TABLE[label.lower()]
    except KeyError:
        known = sorted({c.label for c in MASK_TABLE.values()})
        raise KeyError(f"unknown detector label {label!r}; known: {', '.join(known)}") from None


@dataclass(frozen=True, eq=False)
class DomainRect:
    """Image raster ``width x height``; ``valid`` optionally restricts it (shape ``(height, width)``)."""

    width: int
    height: int
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError(f"domain must be at least 1x1, got {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.valid is not None:
            v = np.asarray(self.valid, dtype=bool)
            if v.shape != (self.height, self.width):
                raise ValueError(f"valid mask shape {v.shape} does not match {(self.height, self.width)}")
            v.flags.writeable = False
            object.__setattr__(self, "valid", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def valid_pixels(self) -> int:
        return self.width * self.height if self.valid is None else int(self.valid.sum())

    def full(self) -> "DomainRect":
        return DomainRect(self.width, self.height)


@dataclass
class MaskPatch:
    """Dense window of a sparse mask; ``values[i, j]`` sits at pixel ``(col0 + j, row0 + i)``."""

    row0: int
    col0: int
    values: np.ndarray

    @property
    def slices(self) -> tuple[slice, slice]:
        h, w = self.values.shape
        return slice(self.row0, self.row0 + h), slice(self.col0, self.col0 + w)

    def total(self) -> float:
        return float(self.values.sum())


def mask_values(
    region: EllipticalRegion, cfg: DescriptorMaskConfig, domain: DomainRect
) -> MaskPatch:
    """Unit-sum truncated Gaussian mask of ``region`` on ``domain``.

    If the support is narrower than a pixel and contains no sample, the whole
    mass goes to the pixel nearest the center. Raises ``EmptySupport`` when the
    mask has no valid pixel to live on.
    """
    s = region.shape
    cx, cy = region.center
    rho2 = cfg.rho * cfg.rho
    ex = cfg.rho * math.sqrt(s[0, 0])
    ey = cfg.rho * math.sqrt(s[1, 1])
    c0 = max(math.ceil(cx - ex), 0)
    c1 = min(math.floor(cx + ex), domain.width - 1)
    r0 = max(math.ceil(cy - ey), 0)
    r1 = min(math.floor(cy + ey), domain.height - 1)

    if c1 >= c0 and r1 >= r0:
        dx = np.arange(c0, c1 + 1, dtype=float) - cx
        dy = np.arange(r0, r1 + 1, dtype=float) - cy
        p = region.precision
        q = (p[0, 0] * dx[None, :] ** 2 + 2.0 * p[0, 1] * dx[None, :] * dy[:, None]
             + p[1, 1] * dy[:, None] ** 2)
        inside = q <= rho2
        if domain.valid is not None:
            inside &= domain.valid[r0:r1 + 1, c0:c1 + 1]
        if cfg.flat:
            vals = inside.astype(float)
        else:
            vals = np.where(inside, np.exp(-q / (2.0 * cfg.zeta * cfg.zeta)), 0.0)
        total = vals.sum()
        if total > 0:
            return MaskPatch(r0, c0, vals / total)

    # sub-pixel support
    col, row = int(round(cx)), int(round(cy))
    if 0 <= col < domain.width and 0 <= row < domain.height and (
        domain.valid is None or domain.valid[row, col]
    ):
        return MaskPatch(row, col, np.ones((1, 1)))
    raise EmptySupport(f"mask of region at {region.center.tolist()} has no valid pixel in the domain")


@dataclass(eq=False)
class CoverageMap:
    domain: DomainRect
    sum_field: np.ndarray
    max_field: np.ndarray
    pixel_area: float = 1.0
    n_masks: int = 0
    n_empty: int = 0
    # per-detection flag: False where the mask had no support in the domain
    placed: list[bool] = field(default_factory=list)


def accumulate(
    regions: Sequence[EllipticalRegion], cfg: DescriptorMaskConfig, domain: DomainRect
) -> CoverageMap:
    """Sum and max of the masks of ``regions``.

    Masks with no valid pixel are skipped and tallied in ``n_empty``.
    """
    sum_field = np.zeros(domain.shape)
    max_field = np.zeros(domain.shape)
    placed = []
    for r in regions:
        try:
            patch = mask_values(r, cfg, domain)
        except EmptySupport:
            placed.append(False)
            continue
        sl = patch.slices
        sum_field[sl] += patch.values
        np.maximum(max_field[sl], patch.values, out=max_field[sl])
        placed.append(True)
    n = sum(placed)
    return CoverageMap(domain, sum_field, max_field, 1.0, n, len(placed) - n, placed)


def count_keypoints(cmap: CoverageMap) -> tuple[float, float]:
    """``(K, K_nr)``: integrals of the sum and max fields."""
    k = float(cmap.sum_field.sum()) * cmap.pixel_area
    k_nr = float(cmap.max_field.sum()) * cmap.pixel_area
    return k, k_nr


def nr_ratio(
    regions: Sequence[EllipticalRegion], cfg: DescriptorMaskConfig, domain: DomainRect
) -> float:
    """Non-redundant detection ratio ``K_nr / K``."""
    if len(regions) == 0:
        raise EmptySet("nr_ratio of an empty detection set")
    k, k_nr = count_keypoints(accumulate(regions, cfg, domain))
    if k <= 0:
        raise EmptySet("no detection mask intersects the domain")
    return k_nr / k


def write_pgm(field_: np.ndarray, path: str | Path) -> float:
    """Write a field as a plain-text 16-bit PGM, linearly scaled to [0, 65535].

    The scale factor (field units per gray level) goes to ``<path>.scale.txt``
    and is also returned.
    """
    path = Path(path)
    peak = float(np.max(field_)) if field_.size else 0.0
    scale = peak / 65535.0 if peak > 0 else 1.0
    levels = np.rint(np.asarray(field_) / scale).astype(np.int64)
    h, w = levels.shape
    try:
        with open(path, "w", newline="\n") as f:
            f.write(f"P2\n{w} {h}\n65535\n")
            for row in levels:
                f.write(" ".join(map(str, row.tolist())))
                f.write("\n")
        Path(str(path) + ".scale.txt").write_text(f"{scale!r}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return scale
