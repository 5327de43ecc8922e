import numpy as np
import pytest

from app.errors import DimensionMismatchError, HeisenbergError
from app.services.hgroup import (
    HPoint,
    HVelocity,
    commutator,
    dilate,
    group_inv,
    group_mul,
    group_mul_arrays,
    horizontal_energy,
    horizontal_segment,
    horizontal_segment_arrays,
    koranyi_dist,
    koranyi_dist_arrays,
    koranyi_gauge,
    left_translate,
    piecewise_horizontal,
    renormalization_term,
    segment_basis,
    sigma_form,
    swept_area,
    ztilde,
)


def random_point(rng, d=1):
    return HPoint(rng.standard_normal(2 * d), float(rng.standard_normal()))


@pytest.mark.parametrize("d", [1, 2])
def test_group_axioms(rng, d):
    for _ in range(20):
        p, q, r = (random_point(rng, d) for _ in range(3))
        lhs = group_mul(group_mul(p, q), r).to_array()
        rhs = group_mul(p, group_mul(q, r)).to_array()
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)
        np.testing.assert_allclose(group_mul(p, group_inv(p)).to_array(), 0.0, atol=1e-12)
        np.testing.assert_allclose(group_mul(HPoint.identity(d), p).to_array(), p.to_array(), atol=0)


def test_group_law_formula():
    p = HPoint([1.0, 2.0], 0.5)
    q = HPoint([-3.0, 0.25], 1.0)
    # s = 0.5 + 1.0 + x'y - xy' = 1.5 + (-3)(2) - (1)(0.25)
    assert group_mul(p, q).s == pytest.approx(1.5 - 6.0 - 0.25)
    np.testing.assert_allclose(group_mul(p, q).z, [-2.0, 2.25])


def test_commutator_of_unit_generators_is_central():
    for j in range(2):
        ex = np.zeros(4)
        ey = np.zeros(4)
        ex[j] = 1.0
        ey[2 + j] = 1.0
        c = commutator(HPoint(ex, 0.0), HPoint(ey, 0.0))
        np.testing.assert_allclose(c.z, 0.0, atol=1e-12)
        assert c.s == pytest.approx(-2.0, abs=1e-12)


def test_sigma_is_antisymmetric_and_ztilde_pairs(rng):
    z, w = rng.standard_normal(4), rng.standard_normal(4)
    assert sigma_form(z, w) == pytest.approx(-sigma_form(w, z))
    assert sigma_form(z, z) == 0.0
    assert sigma_form(z, w) == pytest.approx(float(np.dot(ztilde(z), w)))


def test_dilation_is_an_automorphism(rng):
    p, q = random_point(rng), random_point(rng)
    lam = 1.7
    np.testing.assert_allclose(
        dilate(group_mul(p, q), lam).to_array(),
        group_mul(dilate(p, lam), dilate(q, lam)).to_array(),
        atol=1e-12,
    )


def test_gauge_homogeneity_and_distance(rng):
    for _ in range(20):
        p, q, g = random_point(rng), random_point(rng), random_point(rng)
        assert koranyi_gauge(dilate(p, 2.5)) == pytest.approx(2.5 * koranyi_gauge(p), rel=1e-12)
        assert koranyi_gauge(group_inv(p)) == pytest.approx(koranyi_gauge(p), rel=1e-12)
        # left invariance
        assert koranyi_dist(group_mul(g, p), group_mul(g, q)) == pytest.approx(koranyi_dist(p, q), rel=1e-10)
        r = random_point(rng)
        assert koranyi_dist(p, r) <= koranyi_dist(p, q) + koranyi_dist(q, r) + 1e-12
    assert koranyi_gauge(HPoint([0.0, 0.0], 16.0)) == pytest.approx(4.0)


def test_vectorized_forms_match_point_forms(rng):
    pts = rng.standard_normal((10, 3))
    qts = rng.standard_normal((10, 3))
    for a, b, m, dist in zip(pts, qts, group_mul_arrays(pts, qts), koranyi_dist_arrays(pts, qts)):
        pa, pb = HPoint.from_array(a), HPoint.from_array(b)
        np.testing.assert_allclose(m, group_mul(pa, pb).to_array(), atol=1e-12)
        assert dist == pytest.approx(koranyi_dist(pa, pb), rel=1e-12)
    p = random_point(rng)
    translated = left_translate(qts, p)
    np.testing.assert_allclose(translated[3], group_mul(p, HPoint.from_array(qts[3])).to_array(), atol=1e-12)


def test_horizontal_segment_is_a_flow(rng):
    p = random_point(rng)
    xi = HVelocity(rng.standard_normal(2))
    two = horizontal_segment(horizontal_segment(p, xi, 0.3), xi, 0.45)
    np.testing.assert_allclose(two.to_array(), horizontal_segment(p, xi, 0.75).to_array(), atol=1e-12)
    # right translation by (r xi, 0)
    right = group_mul(p, HPoint(0.75 * xi.xi, 0.0))
    np.testing.assert_allclose(right.to_array(), horizontal_segment(p, xi, 0.75).to_array(), atol=1e-12)
    arr = horizontal_segment_arrays(p.to_array(), xi.xi, 0.75)
    np.testing.assert_allclose(arr, right.to_array(), atol=1e-12)


def test_piecewise_horizontal_and_energy():
    xis = [HVelocity([1.0, 0.0]), HVelocity([0.0, 1.0]), HVelocity([-1.0, 0.0]), HVelocity([0.0, -1.0])]
    nodes = piecewise_horizontal(HPoint.identity(), xis, 1.0)
    # the closed unit square loop returns to z = 0 with s = -2 (twice the signed area, sign from sigma)
    np.testing.assert_allclose(nodes[-1].z, 0.0, atol=1e-12)
    assert nodes[-1].s == pytest.approx(-2.0)
    assert horizontal_energy(xis, 0.5) == pytest.approx(2.0)
    assert swept_area(np.array([p.z for p in nodes])) == pytest.approx(2.0)


def test_swept_area_matches_vertical_increment(rng):
    xis = [HVelocity(rng.standard_normal(4)) for _ in range(6)]
    start = random_point(rng, d=2)
    nodes = piecewise_horizontal(start, xis, 0.3)
    # left-translating the curve to start at the identity leaves the increment unchanged
    moved = piecewise_horizontal(HPoint.identity(2), xis, 0.3)
    area = swept_area(np.array([p.z for p in moved]))
    assert moved[-1].s == pytest.approx(-area, abs=1e-12)
    assert nodes[-1].s - start.s - sigma_form(start.z, moved[-1].z) == pytest.approx(-area, abs=1e-12)


def test_two_direction_path_sweeps_dt_squared():
    dt = 0.4
    nodes = piecewise_horizontal(HPoint.identity(), [HVelocity([1.0, 0.0]), HVelocity([0.0, 1.0])], dt)
    assert swept_area(np.array([p.z for p in nodes])) == pytest.approx(dt * dt)


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("n", [1, 3, 8])
def test_segment_basis_has_unit_energy_and_no_renormalization(n, d):
    t = 0.7
    basis = segment_basis(n, t, d)
    assert len(basis) == 2 * d * n
    for xis in basis:
        assert len(xis) == n
        assert horizontal_energy(xis, t / n) == pytest.approx(1.0)
    assert abs(renormalization_term(basis, t / n)) < 1e-14
    with pytest.raises(HeisenbergError):
        segment_basis(0, t)


def test_rejects_bad_input():
    with pytest.raises(DimensionMismatchError):
        HPoint([1.0, 2.0, 3.0], 0.0)
    with pytest.raises(HeisenbergError):
        HPoint([np.nan, 0.0], 0.0)
    with pytest.raises(DimensionMismatchError):
        group_mul(HPoint.identity(1), HPoint.identity(2))
    with pytest.raises(ValueError):
        koranyi_dist(HPoint.identity(1), HPoint.identity(2))
