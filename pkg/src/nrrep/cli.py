"""Command-line entry point.

Subcommands::

    nrrep repeat MANIFEST...       rep, nr-rep and nr-ratio per image pair
    nrrep match-eval MANIFEST...   ratio-test matching statistics
    nrrep nr-ratio MANIFEST...     nr-ratio of every image's detections
    nrrep summary CSV...           cross-sequence [0, 1] rescaled means
    nrrep curves                   maximal tolerated distance curves
    nrrep synth                    duplicated-detector experiment on random pairs

Exit status: 0 success, 2 usage, 3 parse error, 4 geometry error,
5 I/O error, 6 evaluation error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io as nio
from .errors import (
    EvaluationError,
    GeometryError,
    InvalidParameter,
    IoFailure,
    NrrepError,
    ParseError,
)
from .evaluation import (
    duplicate_set,
    det2_bias,
    evaluate_pair,
    random_pair,
)
from .geometry import CriterionConfig, Variant, max_distance_curve
from .masks import nr_ratio
from .matching import DEFAULT_RATIO

OUT_ENV = "NRREP_OUT"
DEFAULT_EPSILONS = (0.05, 0.20, 0.40, 0.60)
DEFAULT_RADII = (1, 2, 5, 10, 20, 30, 50, 100)

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_GEOMETRY, EXIT_IO, EXIT_EVAL = 0, 2, 3, 4, 5, 6


@dataclass
class RunConfig:
    manifests: list[Path]
    criterion: CriterionConfig = field(default_factory=CriterionConfig)
    ratio_threshold: float = DEFAULT_RATIO
    out: Path = Path("nrrep-out")
    jobs: int = 1
    invert_homography: bool = False
    synth: Optional[str] = None
    matching: bool = True


# -- pair jobs ---------------------------------------------------------------


@dataclass
class _Job:
    manifest: nio.SequenceManifest
    detector: nio.DetectorEntry
    image: nio.ImageEntry
    criterion: CriterionConfig
    ratio_threshold: Optional[float]
    invert: bool
    dup: int


def _run_job(job: _Job) -> nio.PairRecord:
    m = job.manifest
    set_a = nio.load_detections(m, job.detector, m.reference)
    set_b = nio.load_detections(m, job.detector, job.image)
    h = nio.parse_homography(job.image.homography, invert=job.invert)
    if job.dup > 1:
        set_a, set_b = duplicate_set(set_a, job.dup), duplicate_set(set_b, job.dup)
    ev = evaluate_pair(set_a, set_b, h, job.criterion, job.ratio_threshold)
    pair = f"{m.reference.image_id}-{job.image.image_id}"
    return nio.PairRecord(job.detector.key, m.name, pair, ev)


def _map(fn, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def evaluate_sequence(run: RunConfig) -> list[nio.PairRecord]:
    """Evaluate every (detector, test image) pair of every manifest and write the CSVs."""
    jobs = []
    for path in run.manifests:
        m = nio.parse_manifest(path)
        for det, img in m.pairs():
            jobs.append(
                _Job(
                    m,
                    det,
                    img,
                    run.criterion,
                    run.ratio_threshold if run.matching else None,
                    m.invert_homography or run.invert_homography,
                    2 if run.synth == "det2" else 1,
                )
            )
    records = _map(_run_job, jobs, run.jobs)
    nio.write_report(records, run.out)
    return records


# -- subcommands -------------------------------------------------------------


def _criterion(args) -> CriterionConfig:
    return CriterionConfig(Variant(args.variant), args.epsilon, args.kappa)


def _run_config(args, matching: bool) -> RunConfig:
    return RunConfig(
        manifests=[Path(p) for p in args.manifest],
        criterion=_criterion(args),
        ratio_threshold=args.ratio_threshold,
        out=Path(args.out),
        jobs=args.jobs,
        invert_homography=args.invert_homography,
        synth=getattr(args, "synth", None),
        matching=matching,
    )


def cmd_repeat(args) -> int:
    records = evaluate_sequence(_run_config(args, matching=True))
    print(f"{'detector':<16}{'sequence':<12}{'pair':<14}{'|Ka|':>7}{'|Kb|':>7}"
          f"{'rep':>9}{'nr-rep':>9}{'nr-ratio':>10}")
    for r in records:
        ev = r.evaluation
        print(f"{r.detector:<16}{r.sequence:<12}{r.image_pair:<14}{ev.count_a:>7}{ev.count_b:>7}"
              f"{ev.rep:>9.4f}{ev.nr_rep:>9.4f}{ev.nr_ratio_a:>10.4f}")
    return EXIT_OK


def cmd_match_eval(args) -> int:
    run = _run_config(args, matching=True)
    records = evaluate_sequence(run)
    print(f"{'detector':<16}{'sequence':<12}{'pair':<14}{'total':>8}{'correct':>9}{'nr-correct':>12}")
    for r in records:
        mr = r.evaluation.matches
        if mr is None:
            raise EvaluationError(f"detector {r.detector!r} has no descriptors in sequence {r.sequence!r}")
        print(f"{r.detector:<16}{r.sequence:<12}{r.image_pair:<14}{mr.total:>8}{mr.correct:>9}"
              f"{mr.nr_correct:>12.2f}")
    return EXIT_OK


def cmd_nr_ratio(args) -> int:
    rows = []
    for path in args.manifest:
        m = nio.parse_manifest(path)
        for det in m.detectors:
            for img in [m.reference] + m.images:
                s = nio.load_detections(m, det, img)
                value = nr_ratio(s.detections, s.mask, s.image_domain) if len(s) else float("nan")
                rows.append([det.key, m.name, img.image_id, len(s), value])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    nio.write_table(out / "nr_ratio_per_image.csv", ["detector", "sequence", "image", "count", "value"], rows)
    for row in rows:
        print(f"{row[0]:<16}{row[1]:<12}{row[2]:<10}{row[3]:>7}{row[4]:>10.4f}")
    return EXIT_OK


def cmd_summary(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.csv:
        table = nio.metric_table(nio.read_report(path))
        summary = nio.summarize_normalized(table)
        name = Path(path).stem
        nio.write_table(out / f"summary_{name}.csv", ["detector", "score"], sorted(summary.items()))
        print(name)
        for det, score in sorted(summary.items(), key=lambda kv: -kv[1]):
            print(f"  {det:<16}{score:.4f}")
    return EXIT_OK


def emit_curves(variant: Variant, epsilons, radii, kappa: float = 30.0) -> list[tuple]:
    """``(variant, epsilon, r, d_max)`` rows over the epsilon x radius grid."""
    for e in epsilons:
        if not 0 < e < 1:
            raise InvalidParameter(f"epsilon must lie in (0, 1), got {e}")
    for r in radii:
        if not r > 0:
            raise InvalidParameter(f"radius must be positive, got {r}")
    rows = []
    for e in epsilons:
        cfg = CriterionConfig(variant, e, kappa)
        for r in radii:
            rows.append((variant.value, e, r, max_distance_curve(r, cfg)))
    return rows


def cmd_curves(args) -> int:
    variants = list(Variant) if args.all_variants else [Variant(args.variant)]
    rows = []
    for v in variants:
        rows.extend(emit_curves(v, args.epsilons, args.radii, args.kappa))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    nio.write_curves(rows, out / "curves.csv")
    for v, e, r, d in rows:
        print(f"{v:<12}{e:>6.2f}{r:>8g}{d:>10.3f}")
    return EXIT_OK


def _synth_one(arg):
    seed, n, size, cfg = arg
    rng = np.random.default_rng(seed)
    a, b, h = random_pair(rng, n=n, size=size)
    return seed, det2_bias(a, b, h, cfg)


def cmd_synth(args) -> int:
    cfg = _criterion(args)
    items = [(args.seed + k, args.detections, args.size, cfg) for k in range(args.pairs)]
    results = _map(_synth_one, items, args.jobs)
    rows = []
    for seed, b in results:
        rows.append([str(seed), b.rep, b.rep_dup, b.nr_rep, b.nr_rep_dup, b.nr_ratio, b.nr_ratio_dup])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["seed", "rep", "rep_det2", "nr_rep", "nr_rep_det2", "nr_ratio", "nr_ratio_det2"]
    nio.write_table(out / "synth_det2.csv", header, rows)
    print(f"{'seed':>6}{'rep':>9}{'rep2':>9}{'nr-rep':>9}{'nr-rep2':>9}{'nr-ratio':>10}{'nr-ratio2':>11}")
    for row in rows:
        print(f"{row[0]:>6}" + "".join(f"{v:>9.4f}" for v in row[1:5]) + f"{row[5]:>10.4f}{row[6]:>11.4f}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--variant", choices=[v.value for v in Variant], default="original",
                        help="repeatability criterion (default: original)")
    shared.add_argument("--epsilon", type=float, default=0.40, help="tolerated overlap error")
    shared.add_argument("--kappa", type=float, default=30.0, help="normalized radius (pixels)")
    shared.add_argument("--ratio-threshold", type=float, default=DEFAULT_RATIO)
    shared.add_argument("--jobs", type=_positive_int, default=1)
    shared.add_argument("--out", default=os.environ.get(OUT_ENV, "nrrep-out"),
                        help=f"output directory (default: ${OUT_ENV} or ./nrrep-out)")
    shared.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nrrep", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def manifest_cmd(name, fn, help_):
        sp = sub.add_parser(name, parents=[shared], help=help_)
        sp.add_argument("manifest", nargs="+")
        sp.add_argument("--invert-homography", action="store_true",
                        help="homography files map the reference image to the test image")
        sp.set_defaults(fn=fn)
        return sp

    rp = manifest_cmd("repeat", cmd_repeat, "repeatability and non-redundant repeatability")
    rp.add_argument("--synth", choices=["det2"], help="duplicate every detection before evaluating")
    manifest_cmd("match-eval", cmd_match_eval, "descriptor matching evaluation")
    manifest_cmd("nr-ratio", cmd_nr_ratio, "non-redundant detection ratio per image")

    sp = sub.add_parser("summary", parents=[shared], help="cross-sequence rescaled summary of metric CSVs")
    sp.add_argument("csv", nargs="+")
    sp.set_defaults(fn=cmd_summary)

    sp = sub.add_parser("curves", parents=[shared], help="maximal tolerated distance vs radius")
    sp.set_defaults(fn=cmd_curves)
    sp.add_argument("--epsilons", type=float, nargs="+", default=list(DEFAULT_EPSILONS))
    sp.add_argument("--radii", type=float, nargs="+", default=list(DEFAULT_RADII))
    sp.add_argument("--all-variants", action="store_true", help="emit rows for every variant")

    sp = sub.add_parser("synth", parents=[shared], help="DET vs DET2 on random synthetic pairs")
    sp.add_argument("--pairs", type=_positive_int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--detections", type=_positive_int, default=40)
    sp.add_argument("--size", type=_positive_int, default=160)
    sp.set_defaults(fn=cmd_synth)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except ParseError as exc:
        print(f"nrrep: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except GeometryError as exc:
        print(f"nrrep: geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except (IoFailure, OSError) as exc:
        print(f"nrrep: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EvaluationError, ValueError) as exc:
        print(f"nrrep: {exc}", file=sys.stderr)
        return EXIT_EVAL
    except NrrepError as exc:  # pragma: no cover
        print(f"nrrep: {exc}", file=sys.stderr)
        return EXIT_EVAL


if __name__ == "__main__":
    sys.exit(main())
