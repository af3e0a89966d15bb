import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ellipse
from nrrep.errors import EmptySet, EmptySupport
from nrrep.geometry import EllipticalRegion
from nrrep.masks import (
    FLAT,
    DescriptorMaskConfig,
    DomainRect,
    accumulate,
    count_keypoints,
    mask_config,
    mask_values,
    nr_ratio,
    write_pgm,
)

SIFT = mask_config("SIFT")
DOMAIN = DomainRect(240, 200)


def dense(patch, domain):
    out = np.zeros(domain.shape)
    out[patch.slices] = patch.values
    return out


def test_table_values():
    s2 = math.sqrt(2)
    for label in ["SIFT", "SIFT-S", "Harris-Laplace", "Hessian-Laplace", "Harris-Affine",
                  "Hessian-Affine", "SFOP", "SIFER"]:
        cfg = mask_config(label)
        assert (cfg.rho, cfg.zeta) == pytest.approx((6 * s2, 6))
    assert (mask_config("surf").rho, mask_config("surf").zeta) == pytest.approx((10 * s2, 3.3))
    assert (mask_config("BRISK").rho, mask_config("BRISK").zeta) == pytest.approx((1.5 * s2, 1.5))
    assert mask_config("MSER").rho == 2 and mask_config("MSER").flat
    assert mask_config("EBR").rho == 1 and mask_config("IBR").flat
    with pytest.raises(KeyError):
        mask_config("ORB")


def test_config_validation():
    with pytest.raises(ValueError):
        DescriptorMaskConfig(0, 1)
    with pytest.raises(ValueError):
        DescriptorMaskConfig(1, -1)
    assert DescriptorMaskConfig(2, FLAT).flat


def test_mask_peak_at_center():
    r = ellipse((100, 80), 3, 2, 0.5)
    m = dense(mask_values(r, SIFT, DOMAIN), DOMAIN)
    row, col = np.unravel_index(np.argmax(m), m.shape)
    assert (col, row) == (100, 80)


def test_mask_truncation():
    r = ellipse((100.3, 80.6), 3, 2, 0.5)
    m = dense(mask_values(r, SIFT, DOMAIN), DOMAIN)
    rows, cols = np.mgrid[0:DOMAIN.height, 0:DOMAIN.width]
    d = np.stack([cols - r.center[0], rows - r.center[1]], axis=-1)
    q = np.einsum("...i,ij,...j->...", d, r.precision, d)
    assert np.all(m[q > SIFT.rho**2] == 0)
    assert np.all(m[q <= SIFT.rho**2] > 0)


def test_mask_unit_sum():
    patch = mask_values(ellipse((60.2, 70.9), 4, 2.5, 1.0), SIFT, DOMAIN)
    assert patch.total() == pytest.approx(1.0, abs=1e-12)


def test_mask_border_renormalized():
    patch = mask_values(EllipticalRegion.disk((2, 3), 5), SIFT, DOMAIN)
    assert patch.row0 == 0 and patch.col0 == 0
    assert patch.total() == pytest.approx(1.0, abs=1e-12)


def test_flat_mask_constant():
    cfg = mask_config("MSER")
    patch = mask_values(ellipse((50, 50), 6, 3, 0.3), cfg, DOMAIN)
    vals = patch.values[patch.values > 0]
    assert np.ptp(vals) == 0
    # support is the ellipse scaled by rho = 2: about pi * 12 * 6 pixels
    assert len(vals) == pytest.approx(math.pi * 72, rel=0.05)


def test_mask_respects_valid_pixels():
    valid = np.zeros(DOMAIN.shape, bool)
    valid[:, :100] = True
    dom = DomainRect(DOMAIN.width, DOMAIN.height, valid)
    m = dense(mask_values(EllipticalRegion.disk((100, 100), 4), SIFT, dom), dom)
    assert np.all(m[:, 100:] == 0)
    assert m.sum() == pytest.approx(1.0)


def test_subpixel_mask_falls_back_to_center_pixel():
    patch = mask_values(EllipticalRegion.disk((10.4, 20.4), 0.05), mask_config("EBR"), DOMAIN)
    assert (patch.row0, patch.col0, patch.values.shape) == (20, 10, (1, 1))
    assert patch.total() == 1.0


def test_empty_support():
    with pytest.raises(EmptySupport):
        mask_values(EllipticalRegion.disk((-500, -500), 2), SIFT, DOMAIN)


def test_accumulate_empty():
    cmap = accumulate([], SIFT, DOMAIN)
    assert not cmap.sum_field.any() and not cmap.max_field.any()
    assert count_keypoints(cmap) == (0.0, 0.0)


def test_single_keypoint_counts_one():
    k, k_nr = count_keypoints(accumulate([EllipticalRegion.disk((120, 100), 3)], SIFT, DOMAIN))
    assert k == pytest.approx(1, abs=1e-6)
    assert k_nr == pytest.approx(1, abs=1e-6)


def test_identical_pair_counts():
    r = ellipse((120, 100), 3, 4, 0.2)
    k, k_nr = count_keypoints(accumulate([r, r], SIFT, DOMAIN))
    assert k == pytest.approx(2, abs=1e-6)
    assert k_nr == pytest.approx(1, abs=1e-6)


def test_disjoint_pair_counts():
    regs = [EllipticalRegion.disk((40, 40), 2), EllipticalRegion.disk((190, 150), 2)]
    k, k_nr = count_keypoints(accumulate(regs, SIFT, DOMAIN))
    assert k_nr == pytest.approx(2, abs=0.02)
    assert k == pytest.approx(2, abs=0.02)


def test_concentric_moderate_scale_gap():
    dom = DomainRect(400, 400)
    regs = [EllipticalRegion.disk((200, 200), 3), EllipticalRegion.disk((200, 200), 6)]
    _, k_nr = count_keypoints(accumulate(regs, SIFT, dom))
    assert 1 < k_nr < 2


def test_concentric_large_scale_gap():
    dom = DomainRect(800, 800)
    regs = [EllipticalRegion.disk((400, 400), 2), EllipticalRegion.disk((400, 400), 40)]
    _, k_nr = count_keypoints(accumulate(regs, SIFT, dom))
    assert k_nr >= 1.9


def test_close_centers_between_one_and_two():
    regs = [EllipticalRegion.disk((100, 100), 3), EllipticalRegion.disk((104, 100), 3)]
    _, k_nr = count_keypoints(accumulate(regs, SIFT, DOMAIN))
    assert 1 < k_nr < 2


def test_accumulate_skips_masks_without_support():
    regs = [EllipticalRegion.disk((100, 100), 3), EllipticalRegion.disk((-900, 5), 1)]
    cmap = accumulate(regs, SIFT, DOMAIN)
    assert cmap.n_masks == 1 and cmap.n_empty == 1 and cmap.placed == [True, False]


def random_regions(rng, n, domain=DOMAIN, margin=40, rmax=3.0):
    out = []
    for _ in range(n):
        c = rng.uniform([margin, margin], [domain.width - margin, domain.height - margin])
        out.append(ellipse(c, rng.uniform(0.8, rmax), rng.uniform(0.8, rmax), rng.uniform(0, math.pi)))
    return out


def test_count_matches_detections(rng):
    regs = random_regions(rng, 100)
    cmap = accumulate(regs, SIFT, DOMAIN)
    k, k_nr = count_keypoints(cmap)
    assert abs(k - 100) <= 1.0
    assert 0 <= k_nr <= k
    assert np.all(cmap.max_field <= cmap.sum_field + 1e-15)


def test_adding_detection(rng):
    regs = random_regions(rng, 15)
    k0, n0 = count_keypoints(accumulate(regs, SIFT, DOMAIN))
    extra = random_regions(rng, 1)
    k1, n1 = count_keypoints(accumulate(regs + extra, SIFT, DOMAIN))
    assert k1 - k0 == pytest.approx(1, abs=1e-6)
    assert n1 >= n0 - 1e-12


def test_duplication_leaves_max_field_unchanged(rng):
    regs = random_regions(rng, 20)
    a = accumulate(regs, SIFT, DOMAIN)
    b = accumulate(regs + regs, SIFT, DOMAIN)
    np.testing.assert_array_equal(a.max_field, b.max_field)


def test_permutation_invariance(rng):
    regs = random_regions(rng, 20)
    perm = [regs[k] for k in rng.permutation(len(regs))]
    np.testing.assert_array_equal(accumulate(regs, SIFT, DOMAIN).max_field,
                                  accumulate(perm, SIFT, DOMAIN).max_field)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_count_properties(seed, n):
    regs = random_regions(np.random.default_rng(seed), n)
    k, k_nr = count_keypoints(accumulate(regs, SIFT, DOMAIN))
    assert k == pytest.approx(n, abs=1e-6)
    assert 0 < k_nr <= k + 1e-9


def test_nr_ratio_disjoint_and_duplicated():
    regs = [EllipticalRegion.disk((40 + 50 * i, 50), 2) for i in range(4)]
    assert nr_ratio(regs, SIFT, DOMAIN) == pytest.approx(1.0, abs=0.02)
    assert nr_ratio(regs + regs, SIFT, DOMAIN) == pytest.approx(0.5, abs=0.02)


def test_nr_ratio_halves_under_duplication(rng):
    regs = random_regions(rng, 30)
    base = nr_ratio(regs, SIFT, DOMAIN)
    assert nr_ratio(regs + regs, SIFT, DOMAIN) == pytest.approx(base / 2, abs=0.02)


def test_nr_ratio_empty():
    with pytest.raises(EmptySet):
        nr_ratio([], SIFT, DOMAIN)


def test_pgm_export(tmp_path):
    cmap = accumulate([EllipticalRegion.disk((20, 10), 2)], SIFT, DomainRect(40, 30))
    scale = write_pgm(cmap.sum_field, tmp_path / "sum.pgm")
    lines = (tmp_path / "sum.pgm").read_text().splitlines()
    assert lines[:3] == ["P2", "40 30", "65535"]
    pixels = np.array([list(map(int, ln.split())) for ln in lines[3:]])
    assert pixels.shape == (30, 40) and pixels.max() == 65535
    assert float((tmp_path / "sum.pgm.scale.txt").read_text()) == scale
    np.testing.assert_allclose(pixels * scale, cmap.sum_field, atol=scale)
