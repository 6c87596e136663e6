import numpy as np
import pytest
from numpy.testing import assert_allclose

from lodct.errors import ValidationError
from lodct.patches import (
    PatchScheme,
    aggregate_patches,
    default_scheme,
    extract_patches,
    overlap_diagonal,
)

from oracles import extract_patches_naive


def test_two_by_two_wrap_example():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    ps = PatchScheme(2, 2, 1, "wrap", 2, 2)
    P = extract_patches(x, ps)
    assert P.shape == (4, 4)
    # patch at origin (0,0), column-major within the patch
    assert_allclose(P[:, 0], [1, 3, 2, 4])
    # origins visited row-major: (0,0), (0,1), (1,0), (1,1)
    assert_allclose(P[:, 1], [2, 4, 1, 3])
    assert_allclose(P[:, 2], [3, 1, 4, 2])
    assert_allclose(P[:, 3], [4, 2, 3, 1])


def test_constant_image_constant_patches():
    ps = PatchScheme(3, 3, 1, "wrap", 6, 6)
    P = extract_patches(np.full((6, 6), 2.5), ps)
    assert_allclose(P, 2.5)


@pytest.mark.parametrize("boundary", ["wrap", "interior"])
@pytest.mark.parametrize("stride", [1, 2])
def test_matches_naive_extractor(boundary, stride, rng):
    x = rng.normal(size=(5, 5))
    ps = PatchScheme(3, 3, stride, boundary, 5, 5)
    assert_allclose(extract_patches(x, ps), extract_patches_naive(x, ps))


def test_extract_linear(rng):
    ps = PatchScheme(2, 3, 2, "wrap", 6, 6)
    x = rng.normal(size=(6, 6))
    z = rng.normal(size=(6, 6))
    assert_allclose(
        extract_patches(1.5 * x - 2.0 * z, ps),
        1.5 * extract_patches(x, ps) - 2.0 * extract_patches(z, ps),
        rtol=1e-13, atol=1e-13,
    )


def test_aggregate_of_extract_is_l_times_identity(rng):
    # wrap-around stride 1: sum_j P_j'P_j = l I
    x = rng.normal(size=(7, 7))
    ps = PatchScheme(3, 3, 1, "wrap", 7, 7)
    assert_allclose(aggregate_patches(extract_patches(x, ps), ps), 9.0 * x, rtol=1e-13)


def test_aggregate_zero():
    ps = PatchScheme(2, 2, 1, "wrap", 4, 4)
    out = aggregate_patches(np.zeros((4, 16)), ps)
    assert np.all(out == 0.0)


@pytest.mark.parametrize("boundary,stride", [("wrap", 1), ("wrap", 2), ("interior", 1), ("interior", 3)])
def test_adjointness(boundary, stride, rng):
    ps = PatchScheme(3, 2, stride, boundary, 6, 8)
    x = rng.normal(size=(6, 8))
    c = rng.normal(size=(ps.l, ps.n_patches))
    lhs = np.vdot(extract_patches(x, ps), c)
    rhs = np.vdot(x, aggregate_patches(c, ps))
    assert abs(lhs - rhs) <= 1e-12 * (abs(lhs) + 1.0)


def test_overlap_wrap_stride1_is_patch_size():
    ps = PatchScheme(8, 8, 1, "wrap", 16, 16)
    assert_allclose(overlap_diagonal(ps), 64.0)


def test_overlap_tiling_is_one():
    ps = PatchScheme(4, 4, 4, "interior", 16, 16)
    assert_allclose(overlap_diagonal(ps), 1.0)


def test_overlap_interior_brute_force():
    ps = PatchScheme(8, 8, 1, "interior", 16, 16)
    ov = overlap_diagonal(ps)
    # brute-force count per pixel
    counts = np.zeros((16, 16))
    for orow in range(9):
        for ocol in range(9):
            counts[orow:orow + 8, ocol:ocol + 8] += 1
    assert_allclose(ov, counts)
    assert ov[0, 0] == 1
    assert ov[8, 8] == 64


def test_wrap_patch_count_equals_pixels():
    ps = default_scheme(12, 12)
    assert ps.n_patches == 144
    assert ps.l == 64


def test_shape_mismatch_raises():
    ps = PatchScheme(2, 2, 1, "wrap", 4, 4)
    with pytest.raises(ValidationError):
        extract_patches(np.zeros((5, 4)), ps)
    with pytest.raises(ValidationError):
        aggregate_patches(np.zeros((4, 15)), ps)


def test_invalid_scheme_rejected():
    with pytest.raises(ValidationError):
        PatchScheme(0, 2, 1, "wrap", 4, 4)
    with pytest.raises(ValidationError):
        PatchScheme(2, 2, 0, "wrap", 4, 4)
    with pytest.raises(ValidationError):
        PatchScheme(2, 2, 1, "mirror", 4, 4)
    with pytest.raises(ValidationError):
        PatchScheme(6, 2, 1, "interior", 4, 4)
