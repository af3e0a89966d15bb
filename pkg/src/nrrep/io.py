"""File formats: region files, homographies, manifests, CSV reports.

Region files follow the affine-region convention::

    <header>            1.0 for plain regions, d for d-dimensional descriptors
    <count>
    u v a b c [d descriptor values]     one line per detection

where ``a(x-u)^2 + 2b(x-u)(y-v) + c(y-v)^2 = 1`` is the region boundary, so
``[[a, b], [b, c]]`` is the inverse of the shape matrix.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    CountMismatch,
    InsufficientDetectors,
    IoFailure,
    MalformedHeader,
    MalformedMatrix,
    ManifestError,
    NonNumericToken,
    NonPositiveDefinite,
    NonPositiveDefiniteRow,
    ParseError,
    Singular,
)
from .evaluation import DetectionSet, PairEvaluation
from .geometry import EllipticalRegion, Homography, check_shape
from .masks import DescriptorMaskConfig, DomainRect, mask_config

# BRISK size s corresponds to a blob of scale s / 4
BRISK_SIZE_PER_SIGMA = 4.0


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from exc


def _floats(tokens: Sequence[str], path, lineno: int) -> list[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError:
        bad = next(t for t in tokens if not _is_float(t))
        raise NonNumericToken(f"non-numeric token {bad!r}", str(path), lineno) from None


def _is_float(t: str) -> bool:
    try:
        float(t)
    except ValueError:
        return False
    return True


def parse_region_file(
    path,
    detector_label: str = "SIFT",
    domain: Optional[DomainRect] = None,
    size_is_brisk_s: bool = False,
    mask: Optional[DescriptorMaskConfig] = None,
) -> DetectionSet:
    """Read a region file into a :class:`DetectionSet`.

    With ``size_is_brisk_s`` the file's regions are BRISK sizes ``s``; they are
    shrunk to scale ``s / 4`` and the mask is widened by the same factor so
    the described patch is unchanged.
    """
    lines = [(n, ln.split()) for n, ln in enumerate(_read_text(path).splitlines(), 1)]
    lines = [(n, t) for n, t in lines if t]
    if len(lines) < 2:
        raise MalformedHeader("missing header or count line", str(path), 1)
    (n0, head), (n1, cnt) = lines[0], lines[1]
    if len(head) != 1 or not _is_float(head[0]):
        raise MalformedHeader(f"bad header {' '.join(head)!r}", str(path), n0)
    header = float(head[0])
    if not (header >= 1 and header.is_integer()):
        raise MalformedHeader(f"header must be 1.0 or a descriptor length, got {header}", str(path), n0)
    if len(cnt) != 1 or not cnt[0].isdigit():
        raise MalformedHeader(f"bad count {' '.join(cnt)!r}", str(path), n1)
    count = int(cnt[0])
    dim = int(header) if header > 1 else 0

    rows = lines[2:]
    if len(rows) != count:
        raise CountMismatch(f"declared {count} detections, found {len(rows)}", str(path))
    regions, descs = [], []
    for n, toks in rows:
        if len(toks) != 5 + dim:
            raise ParseError(f"expected {5 + dim} values, got {len(toks)}", str(path), n)
        vals = _floats(toks, path, n)
        u, v, a, b, c = vals[:5]
        conic = np.array([[a, b], [b, c]])
        if not (a > 0 and a * c - b * b > 0):
            raise NonPositiveDefiniteRow("ellipse coefficients are not positive-definite", str(path), n)
        shape = np.linalg.inv(conic)
        if size_is_brisk_s:
            shape = shape / BRISK_SIZE_PER_SIGMA**2
        try:
            check_shape(shape)
            regions.append(EllipticalRegion((u, v), shape))
        except NonPositiveDefinite as exc:
            raise NonPositiveDefiniteRow(str(exc), str(path), n) from None
        if dim:
            descs.append(vals[5:])

    if domain is None:
        domain = _domain_from_points([r.center for r in regions])
    if mask is None:
        mask = mask_config(detector_label)
    if size_is_brisk_s:
        mask = mask.scaled(BRISK_SIZE_PER_SIGMA)
    descriptors = np.array(descs, dtype=float).reshape(len(regions), dim) if dim else None
    return DetectionSet(regions, detector_label, domain, descriptors, mask)


def _domain_from_points(centers) -> DomainRect:
    if not centers:
        return DomainRect(1, 1)
    pts = np.array(centers)
    return DomainRect(int(math.ceil(max(pts[:, 0].max(), 0))) + 1, int(math.ceil(max(pts[:, 1].max(), 0))) + 1)


def write_region_file(path, s: DetectionSet) -> None:
    """Inverse of :func:`parse_region_file` (without the BRISK conversion)."""
    dim = 0 if s.descriptors is None else s.descriptors.shape[1]
    out = [f"{float(dim) if dim > 1 else 1.0!r}", str(len(s))]
    for k, r in enumerate(s.detections):
        inv = np.linalg.inv(r.shape)
        vals = [r.center[0], r.center[1], inv[0, 0], 0.5 * (inv[0, 1] + inv[1, 0]), inv[1, 1]]
        if dim:
            vals.extend(s.descriptors[k])
        out.append(" ".join(repr(float(x)) for x in vals))
    _write_text(path, "\n".join(out) + "\n")


def _write_text(path, text: str) -> None:
    try:
        with open(path, "w", newline="\n", encoding="utf-8") as f:
            f.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from exc


def parse_homography(path, invert: bool = False) -> Homography:
    """Read nine whitespace-separated reals (row-major).

    The result maps frame-b points to frame a; pass ``invert=True`` for files
    written the other way round.
    """
    tokens = _read_text(path).split()
    if len(tokens) != 9:
        raise MalformedMatrix(f"expected 9 values, found {len(tokens)}", str(path))
    vals = _floats(tokens, path, 0)
    try:
        h = Homography(np.array(vals).reshape(3, 3))
        return h.inverse() if invert else h
    except Singular as exc:
        raise Singular(f"{path}: {exc}") from None


def write_homography(path, h: Homography) -> None:
    _write_text(path, "\n".join(" ".join(repr(float(x)) for x in row) for row in h.matrix) + "\n")


def read_pnm_size(path) -> tuple[int, int]:
    """``(width, height)`` from a PBM/PGM/PPM header."""
    try:
        with open(path, "rb") as f:
            data = f.read(4096)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from exc
    tokens = []
    for raw in data.split(b"\n"):
        raw = raw.split(b"#", 1)[0]
        tokens.extend(raw.split())
        if len(tokens) >= 3:
            break
    if len(tokens) < 3 or tokens[0] not in {b"P1", b"P2", b"P3", b"P4", b"P5", b"P6"}:
        raise MalformedHeader("not a PNM file", str(path))
    try:
        return int(tokens[1]), int(tokens[2])
    except ValueError:
        raise MalformedHeader("bad PNM dimensions", str(path)) from None


# -- manifests ---------------------------------------------------------------


@dataclass
class ImageEntry:
    image_id: str
    width: int
    height: int
    homography: Optional[Path] = None  # test images only

    @property
    def domain(self) -> DomainRect:
        return DomainRect(self.width, self.height)


@dataclass
class DetectorEntry:
    key: str
    label: str
    size_is_brisk_s: bool = False
    regions: dict[str, Path] = field(default_factory=dict)


@dataclass
class SequenceManifest:
    """One reference image, its test images and the detector outputs for each.

    Text format, one directive per line (``#`` starts a comment; relative
    paths resolve against the manifest's directory)::

        sequence graf
        reference img1 800 640            # or: reference img1 pnm=img1.ppm
        image img2 800 640 H1to2p         # id, size, homography file
        detector hesaff Hessian-Affine    # key, mask label [size_is_brisk_s]
        regions hesaff img1 img1.hesaff
        regions hesaff img2 img2.hesaff
        invert_homography                 # homography files map reference -> test
    """

    name: str
    reference: ImageEntry
    images: list[ImageEntry]
    detectors: list[DetectorEntry]
    invert_homography: bool = False
    path: Optional[Path] = None

    def pairs(self) -> list[tuple[DetectorEntry, ImageEntry]]:
        return [(d, img) for d in self.detectors for img in self.images]


def _manifest_size(args: list[str], base: Path, path, n: int) -> tuple[int, int, list[str]]:
    if args and args[0].startswith("pnm="):
        w, h = read_pnm_size(base / args[0][4:])
        return w, h, args[1:]
    if len(args) < 2 or not (args[0].isdigit() and args[1].isdigit()):
        raise ManifestError("expected WIDTH HEIGHT or pnm=PATH", str(path), n)
    w, h = int(args[0]), int(args[1])
    if w < 1 or h < 1:
        raise ManifestError("image dimensions must be >= 1", str(path), n)
    return w, h, args[2:]


def parse_manifest(path, check_files: bool = True) -> SequenceManifest:
    path = Path(path)
    base = path.parent
    name = path.stem
    reference = None
    images: list[ImageEntry] = []
    detectors: dict[str, DetectorEntry] = {}
    invert = False
    for n, line in enumerate(_read_text(path).splitlines(), 1):
        toks = line.split("#", 1)[0].split()
        if not toks:
            continue
        key, args = toks[0], toks[1:]
        if key == "sequence":
            if len(args) != 1:
                raise ManifestError("sequence takes one name", str(path), n)
            name = args[0]
        elif key == "reference":
            if not args:
                raise ManifestError("reference needs an image id", str(path), n)
            w, h, rest = _manifest_size(args[1:], base, path, n)
            if rest:
                raise ManifestError(f"unexpected tokens {rest}", str(path), n)
            reference = ImageEntry(args[0], w, h)
        elif key == "image":
            if not args:
                raise ManifestError("image needs an image id", str(path), n)
            w, h, rest = _manifest_size(args[1:], base, path, n)
            if len(rest) != 1:
                raise ManifestError("image needs exactly one homography path", str(path), n)
            images.append(ImageEntry(args[0], w, h, base / rest[0]))
        elif key == "detector":
            if len(args) not in (2, 3) or (len(args) == 3 and args[2] != "size_is_brisk_s"):
                raise ManifestError("detector KEY LABEL [size_is_brisk_s]", str(path), n)
            try:
                mask_config(args[1])
            except KeyError as exc:
                raise ManifestError(str(exc.args[0]), str(path), n) from None
            detectors[args[0]] = DetectorEntry(args[0], args[1], len(args) == 3)
        elif key == "regions":
            if len(args) != 3:
                raise ManifestError("regions KEY IMAGE_ID PATH", str(path), n)
            if args[0] not in detectors:
                raise ManifestError(f"regions for undeclared detector {args[0]!r}", str(path), n)
            detectors[args[0]].regions[args[1]] = base / args[2]
        elif key == "invert_homography":
            invert = True
        else:
            raise ManifestError(f"unknown directive {key!r}", str(path), n)

    if reference is None:
        raise ManifestError("no reference image declared", str(path))
    ids = {reference.image_id} | {im.image_id for im in images}
    for d in detectors.values():
        for image_id in ids:
            if image_id not in d.regions:
                raise ManifestError(f"detector {d.key!r} has no regions for image {image_id!r}", str(path))
    m = SequenceManifest(name, reference, images, list(detectors.values()), invert, path)
    if check_files:
        for f in [im.homography for im in images] + [p for d in m.detectors for p in d.regions.values()]:
            if not f.is_file():
                raise IoFailure(f"missing file {f}")
    return m


def load_detections(m: SequenceManifest, det: DetectorEntry, image: ImageEntry) -> DetectionSet:
    return parse_region_file(
        det.regions[image.image_id], det.label, image.domain, det.size_is_brisk_s
    )


# -- reports -----------------------------------------------------------------


@dataclass
class PairRecord:
    detector: str
    sequence: str
    image_pair: str
    evaluation: PairEvaluation


def _match_field(name):
    return lambda ev: None if ev.matches is None else getattr(ev.matches, name)


METRICS = {
    "count_a": lambda ev: ev.count_a,
    "count_b": lambda ev: ev.count_b,
    "repeated": lambda ev: ev.n_repeated,
    "rep": lambda ev: ev.rep,
    "nr_rep": lambda ev: ev.nr_rep,
    "nr_ratio_a": lambda ev: ev.nr_ratio_a,
    "nr_ratio_b": lambda ev: ev.nr_ratio_b,
    "matches_total": _match_field("total"),
    "matches_correct": _match_field("correct"),
    "matches_nr_correct": _match_field("nr_correct"),
    "matches_total_keypoints": _match_field("total_keypoints"),
    "matches_correct_keypoints": _match_field("correct_keypoints"),
}

REPORT_COLUMNS = ["detector", "sequence", "image_pair", "value"]
CURVE_COLUMNS = ["variant", "epsilon", "r", "d_max"]


def fmt(x) -> str:
    """Six significant digits; integers stay integral."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.6g}"


def _write_csv(path: Path, header: list[str], rows: Iterable[Sequence]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_report(
    records: Sequence[PairRecord], out_dir, metrics: Optional[Iterable[str]] = None
) -> list[Path]:
    """One CSV per metric, rows in record order. Metrics absent from every record are skipped
    unless requested explicitly."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out_dir}: {exc.strerror or exc}") from exc
    if metrics is None:
        metrics = [
            k for k, get in METRICS.items()
            if not records or any(get(r.evaluation) is not None for r in records)
        ]
    written = []
    for name in metrics:
        get = METRICS[name]
        rows = []
        for rec in records:
            v = get(rec.evaluation)
            if v is not None:
                rows.append([rec.detector, rec.sequence, rec.image_pair, fmt(v)])
        p = out_dir / f"{name}.csv"
        _write_csv(p, REPORT_COLUMNS, rows)
        written.append(p)
    return written


def write_curves(rows: Iterable[tuple[str, float, float, float]], path) -> Path:
    path = Path(path)
    _write_csv(path, CURVE_COLUMNS, ([v, fmt(e), fmt(r), fmt(d)] for v, e, r, d in rows))
    return path


def write_table(path, header: list[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    _write_csv(path, header, ([c if isinstance(c, str) else fmt(c) for c in row] for row in rows))
    return path


def read_report(path) -> list[dict[str, str]]:
    try:
        with open(path, newline="", encoding="utf-8") as f:
            return list(csv.DictReader(f))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from exc


def metric_table(rows: Iterable[Mapping[str, str]]) -> dict[str, dict[str, float]]:
    """Average a metric report over image pairs: detector -> sequence -> mean value."""
    acc: dict[str, dict[str, list[float]]] = {}
    for row in rows:
        v = float(row["value"])
        if math.isnan(v):
            continue
        acc.setdefault(row["detector"], {}).setdefault(row["sequence"], []).append(v)
    return {d: {s: float(np.mean(v)) for s, v in seqs.items()} for d, seqs in acc.items()}


def summarize_normalized(table: Mapping[str, Mapping[str, float]]) -> dict[str, float]:
    """Min-max rescale each sequence over detectors, then average per detector.

    ``table`` maps detector -> sequence -> value. A sequence where every
    detector scores the same maps to 0.5 for all of them.
    """
    sequences: dict[str, dict[str, float]] = {}
    for det, row in table.items():
        for seq, v in row.items():
            sequences.setdefault(seq, {})[det] = float(v)
    scores: dict[str, list[float]] = {d: [] for d in table}
    for seq, col in sequences.items():
        if len(col) < 2:
            raise InsufficientDetectors(f"sequence {seq!r} has fewer than two detectors")
        lo, hi = min(col.values()), max(col.values())
        for det, v in col.items():
            scores[det].append(0.5 if hi == lo else (v - lo) / (hi - lo))
    return {d: float(np.mean(s)) for d, s in scores.items() if s}
