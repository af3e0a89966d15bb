import math
from pathlib import Path

import numpy as np
import pytest

from nrrep.geometry import EllipticalRegion
from nrrep.io import write_homography, write_region_file

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def disk_overlap_error(r: float, d: float) -> float:
    """Analytic overlap error of two disks of radius ``r`` whose centers are ``d`` apart."""
    if d >= 2 * r:
        return 1.0
    inter = 2 * r * r * math.acos(d / (2 * r)) - (d / 2) * math.sqrt(4 * r * r - d * d)
    return 1.0 - inter / (2 * math.pi * r * r - inter)


def rotation(theta: float) -> np.ndarray:
    return np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])


def ellipse(center, r1, r2, theta=0.0) -> EllipticalRegion:
    rot = rotation(theta)
    return EllipticalRegion(center, rot @ np.diag([r1 * r1, r2 * r2]) @ rot.T)


def exhaustive_greedy(scored):
    """Lexicographically smallest matching (by sorted (error, i, j) list), by enumeration.

    Ascending greedy picks exactly this matching; enumerating every one-to-one
    subset of candidates finds it without relying on the greedy loop.
    """
    by_row = {}
    for s in scored:
        by_row.setdefault(s[1], []).append(s)
    rows = sorted(by_row)
    n = len(scored)
    pad = (math.inf, math.inf, math.inf)
    best_key, best = None, []

    def walk(k, used, chosen):
        nonlocal best_key, best
        if k == len(rows):
            key = sorted(chosen) + [pad] * (n - len(chosen))
            if best_key is None or key < best_key:
                best_key, best = key, list(chosen)
            return
        walk(k + 1, used, chosen)
        for s in by_row[rows[k]]:
            if s[2] not in used:
                walk(k + 1, used | {s[2]}, chosen + [s])

    walk(0, frozenset(), [])
    return sorted((i, j) for _, i, j in best)


def brute_force_match(a, b, ratio):
    """Double loop over plain Python floats."""
    out = []
    for i, qa in enumerate(a.tolist()):
        best = (math.inf, -1)
        second = math.inf
        for j, qb in enumerate(b.tolist()):
            d = math.sqrt(math.fsum((x - y) ** 2 for x, y in zip(qa, qb)))
            if d < best[0]:
                second = best[0]
                best = (d, j)
            elif d < second:
                second = d
        if best[0] < ratio * second:
            out.append((i, best[1], best[0], best[0] / second))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(name: str, ok: bool, detail: str = ""):
        _ACCEPTANCE.append((name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
        assert ok, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


def make_sequence(tmp_path: Path, set_a, set_b, h, label="SIFT", size=(200, 160), extra="") -> Path:
    """Write a one-pair manifest plus its region and homography files."""
    write_region_file(tmp_path / "a.reg", set_a)
    write_region_file(tmp_path / "b.reg", set_b)
    write_homography(tmp_path / "H", h)
    w, hgt = size
    text = (
        "sequence toy\n"
        f"reference a {w} {hgt}\n"
        f"image b {w} {hgt} H\n"
        f"detector det {label}\n"
        "regions det a a.reg\n"
        "regions det b b.reg\n"
        + extra
    )
    path = tmp_path / "toy.manifest"
    path.write_text(text)
    return path
