import math

import numpy as np
import pytest

from clvpb.geometry import (DomainGeometry, WallTemperature,
                            clipped_cell_volume, disk_rectangle_area,
                            temperature_ratio_floor,
                            validate_temperature_constraint)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def test_signed_distance_unit_ball():
    ball = DomainGeometry.ball(1.0)
    assert ball.signed_distance(np.zeros(3)) == -1.0
    assert ball.signed_distance([1.0, 0.0, 0.0]) == 0.0
    assert ball.signed_distance([2.0, 0.0, 0.0]) == 1.0


def test_signed_distance_sign_semantics(rng):
    for dom in (DomainGeometry.ball(1.3), DomainGeometry.disk(0.8),
                DomainGeometry.ellipsoid([2.0, 1.0, 1.0])):
        inner = dom.sample_interior(200, rng)
        assert np.all(dom.signed_distance(inner) < 0)
        on_b = dom.sample_boundary(200, rng)
        assert np.max(np.abs(dom.signed_distance(on_b))) <= dom.boundary_tol
        outer = dom.center + (on_b - dom.center) * 1.5
        assert np.all(dom.signed_distance(outer) > 0)


def test_ellipsoid_distance_values():
    ell = DomainGeometry.ellipsoid([2.0, 1.0, 1.0])
    assert ell.signed_distance([3.0, 0.0, 0.0]) == pytest.approx(1.0, abs=1e-12)
    assert ell.signed_distance([0.0, 0.0, 0.0]) == pytest.approx(-1.0, abs=1e-12)
    assert ell.signed_distance([0.0, 1.0, 0.0]) == pytest.approx(0.0, abs=1e-12)


def test_outward_normal_examples():
    ball = DomainGeometry.ball(1.0)
    np.testing.assert_allclose(ball.outward_normal([0.0, 0.0, 1.0]),
                               [0.0, 0.0, 1.0], atol=1e-14)
    np.testing.assert_allclose(ball.outward_normal([-1.0, 0.0, 0.0]),
                               [-1.0, 0.0, 0.0], atol=1e-14)
    ell = DomainGeometry.ellipsoid([2.0, 1.0, 1.0])
    np.testing.assert_allclose(ell.outward_normal([2.0, 0.0, 0.0]),
                               [1.0, 0.0, 0.0], atol=1e-14)


def test_normal_unit_length(rng):
    for dom in (DomainGeometry.ball(2.0), DomainGeometry.disk(1.0),
                DomainGeometry.ellipsoid([1.5, 1.0, 0.7])):
        pts = dom.sample_boundary(300, rng)
        for p in pts:
            assert np.linalg.norm(dom.outward_normal(p)) == pytest.approx(1.0, abs=1e-12)


def test_normal_rejects_off_boundary():
    ball = DomainGeometry.ball(1.0)
    with pytest.raises(ValueError):
        ball.outward_normal([0.5, 0.0, 0.0])


def test_projection_alignment(rng):
    # outward normal at the projection points toward an exterior source
    ell = DomainGeometry.ellipsoid([2.0, 1.0, 1.0])
    xs = rng.normal(size=(300, 3)) * 2.5
    proj = ell.project(xs)
    level = np.abs(np.sum((proj - ell.center) ** 2 / ell.semi_axes ** 2, axis=1) - 1)
    assert level.max() < 1e-12
    sd = ell.signed_distance(xs)
    normals = np.array([ell.outward_normal(p) for p in proj])
    align = np.sum(normals * (xs - proj), axis=1)
    assert np.all(align[sd > 0] > 0)
    assert np.all(align[sd < 0] < 0)


def test_ray_exit_unique_forward(rng):
    for dom in (DomainGeometry.ball(1.0), DomainGeometry.disk(1.5),
                DomainGeometry.ellipsoid([2.0, 1.0, 1.0])):
        x = dom.sample_interior(100, rng)
        v = rng.standard_normal(x.shape)
        s, xe = dom.ray_exit(x, v)
        assert np.all(s > 0)
        assert np.max(np.abs(dom.signed_distance(xe))) < dom.boundary_tol * 10
        # moving backward from the exit point re-enters the domain
        back = xe - 1e-6 * v / np.linalg.norm(v, axis=1, keepdims=True)
        assert np.all(dom.signed_distance(back) < 0)


def test_ray_exit_from_boundary_inward():
    ball = DomainGeometry.ball(1.0)
    s, xe = ball.ray_exit([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0])
    assert s == pytest.approx(2.0, rel=1e-12)
    np.testing.assert_allclose(xe, [-1.0, 0.0, 0.0], atol=1e-12)


def test_ray_exit_rejects_bad_input():
    ball = DomainGeometry.ball(1.0)
    with pytest.raises(ValueError):
        ball.ray_exit([0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        ball.ray_exit([2.0, 0.0, 0.0], [1.0, 0.0, 0.0])


def test_tangent_frame_orthonormal(rng):
    for dom in (DomainGeometry.ball(1.0), DomainGeometry.disk(1.0)):
        for p in dom.sample_boundary(100, rng):
            frame = dom.tangent_frame(p)
            n = dom.outward_normal(p)
            gram = frame @ frame.T
            np.testing.assert_allclose(gram, np.eye(dom.dimension - 1), atol=1e-12)
            assert np.max(np.abs(frame @ n)) < 1e-12


def test_convexity_probe_sphere(rng):
    lo, hi = DomainGeometry.ball(1.0).convexity_probe(500, rng)
    assert lo == pytest.approx(1.0, abs=1e-9)
    assert hi == pytest.approx(1.0, abs=1e-9)
    lo, hi = DomainGeometry.ball(2.0).convexity_probe(200, rng)
    assert lo == pytest.approx(0.5, abs=1e-9)
    assert hi == pytest.approx(0.5, abs=1e-9)


def test_convexity_probe_ellipsoid(rng):
    # principal curvatures of (2,1,1): min b/a^2 = 0.25, max a/b^2 = 2
    lo, hi = DomainGeometry.ellipsoid([2.0, 1.0, 1.0]).convexity_probe(2000, rng)
    assert lo == pytest.approx(0.25, abs=1e-6)
    assert hi == pytest.approx(2.0, abs=1e-6)


def test_convexity_probe_disk(rng):
    lo, hi = DomainGeometry.disk(1.0).convexity_probe(100, rng)
    assert lo == pytest.approx(1.0, abs=1e-9)
    assert hi == pytest.approx(1.0, abs=1e-9)


def test_volume_and_area():
    ball = DomainGeometry.ball(1.0)
    assert ball.volume() == pytest.approx(4 * np.pi / 3, rel=1e-14)
    assert ball.boundary_area() == pytest.approx(4 * np.pi, rel=1e-14)
    disk = DomainGeometry.disk(2.0)
    assert disk.volume() == pytest.approx(4 * np.pi, rel=1e-14)
    assert disk.boundary_area() == pytest.approx(4 * np.pi, rel=1e-14)
    # prolate spheroid (a, b, b): A = 2 pi b^2 (1 + (a/(b e)) asin e)
    ell = DomainGeometry.ellipsoid([2.0, 1.0, 1.0])
    e = np.sqrt(1 - 0.25)
    exact = 2 * np.pi * (1 + 2 / e * np.arcsin(e))
    assert ell.boundary_area() == pytest.approx(exact, rel=1e-12)
    assert ell.volume() == pytest.approx(8 * np.pi / 3, rel=1e-14)


def test_sampling_stays_in_domain(rng):
    dom = DomainGeometry.ellipsoid([2.0, 1.0, 0.5])
    inner = dom.sample_interior(500, rng)
    assert np.all(dom.signed_distance(inner) < 0)
    onb = dom.sample_boundary(500, rng)
    assert np.max(np.abs(dom.signed_distance(onb))) <= dom.boundary_tol


def test_wall_temperature_constant():
    ball = DomainGeometry.ball(1.0)
    wt = WallTemperature(ball, value=0.5)
    assert wt(np.array([1.0, 0.0, 0.0])) == 0.5
    assert wt.t_min == wt.t_max == 0.5
    vals = wt(np.tile([0.0, 0.0, 1.0], (5, 1)))
    np.testing.assert_array_equal(vals, 0.5)


def test_wall_temperature_expression():
    ball = DomainGeometry.ball(1.0)
    wt = WallTemperature(ball, expression="1 + 0.2*z")
    assert wt(np.array([0.0, 0.0, 1.0])) == pytest.approx(1.2)
    assert wt(np.array([0.0, 0.0, -1.0])) == pytest.approx(0.8)
    assert wt.t_min == pytest.approx(0.8, abs=1e-6)
    assert wt.t_max == pytest.approx(1.2, abs=1e-6)


def test_wall_temperature_expression_2d():
    disk = DomainGeometry.disk(1.0)
    wt = WallTemperature(disk, expression="exp(0.1*x)*(1 + 0.05*y)")
    v = wt(np.array([1.0, 0.0]))
    assert v == pytest.approx(np.exp(0.1))
    with pytest.raises(ValueError):
        WallTemperature(disk, expression="1 + z")  # no z in 2D


def test_wall_temperature_rejects_bad_expressions():
    ball = DomainGeometry.ball(1.0)
    with pytest.raises(ValueError):
        WallTemperature(ball, expression="__import__('os').system('true')")
    with pytest.raises(ValueError):
        WallTemperature(ball, expression="z - 2")      # goes negative
    with pytest.raises(ValueError):
        WallTemperature(ball, value=-1.0)
    with pytest.raises(ValueError):
        WallTemperature(ball, value=1.0, expression="1")


def test_temperature_ratio_floor():
    assert temperature_ratio_floor(1.0, 1.0) == 0.0
    # r_par = 0.2: (1 - 0.2)/(2 - 0.2) = 4/9
    assert temperature_ratio_floor(0.5, 0.2) == pytest.approx(4.0 / 9.0)
    assert not validate_temperature_constraint(0.5, 0.2, 0.3, 1.0)
    # constant temperature passes for any admissible accommodation pair
    for r_perp in (0.05, 0.5, 1.0):
        for r_par in (0.05, 1.0, 1.95):
            assert validate_temperature_constraint(r_perp, r_par, 0.7, 0.7)
    with pytest.raises(ValueError):
        validate_temperature_constraint(0.5, 1.0, -1.0, 1.0)


# ---------------------------------------------------------------------------
# box-domain intersection volumes


def test_disk_rectangle_closed_forms():
    r = 1.3
    quarter = disk_rectangle_area(r, (0.0, 0.0), (r, r))
    assert quarter == pytest.approx(math.pi * r * r / 4.0, rel=1e-14)
    # enclosing box recovers the full disk
    full = disk_rectangle_area(r, (-2 * r, -2 * r), (2 * r, 2 * r))
    assert full == pytest.approx(math.pi * r * r, rel=1e-14)
    # box wholly inside / wholly outside
    s = r / math.sqrt(2.0) * 0.999
    assert disk_rectangle_area(r, (-s / 2, -s / 2), (s / 2, s / 2)) == \
        pytest.approx(s * s, rel=1e-14)
    assert disk_rectangle_area(r, (r, r), (2 * r, 2 * r)) == 0.0
    # off-center disk: just a translation
    shifted = disk_rectangle_area(r, (1.0, -1.0), (1.0 + r, -1.0 + r),
                                  center=(1.0, -1.0))
    assert shifted == pytest.approx(quarter, rel=1e-14)


def test_clipped_volume_ball_octant_and_tiling():
    ball = DomainGeometry.ball(1.0)
    octant = clipped_cell_volume(ball, (0, 0, 0), (1, 1, 1))
    assert octant == pytest.approx(math.pi / 6.0, rel=1e-11)
    half = clipped_cell_volume(ball, (-1, -1, 0), (1, 1, 1))
    assert half == pytest.approx(2 * math.pi / 3.0, rel=1e-11)
    # a 6^3 grid over the bounding box tiles the exact volume
    edges = np.linspace(-1.0, 1.0, 7)
    total = sum(
        clipped_cell_volume(ball, (edges[i], edges[j], edges[k]),
                            (edges[i + 1], edges[j + 1], edges[k + 1]))
        for i in range(6) for j in range(6) for k in range(6))
    assert total == pytest.approx(ball.volume(), rel=1e-12)


def test_clipped_volume_disk_tiling():
    disk = DomainGeometry.disk(0.8)
    edges = np.linspace(-0.8, 0.8, 8)
    total = sum(
        clipped_cell_volume(disk, (edges[i], edges[j]),
                            (edges[i + 1], edges[j + 1]))
        for i in range(7) for j in range(7))
    assert total == pytest.approx(disk.volume(), rel=1e-12)


def test_clipped_volume_ellipsoid():
    ell = DomainGeometry.ellipsoid((2.0, 1.0, 0.5))
    octant = clipped_cell_volume(ell, (0, 0, 0), (2.0, 1.0, 0.5))
    assert octant == pytest.approx(ell.volume() / 8.0, rel=1e-11)
    edges = [np.linspace(-a, a, 7) for a in (2.0, 1.0, 0.5)]
    total = sum(
        clipped_cell_volume(ell, (edges[0][i], edges[1][j], edges[2][k]),
                            (edges[0][i + 1], edges[1][j + 1], edges[2][k + 1]))
        for i in range(6) for j in range(6) for k in range(6))
    assert total == pytest.approx(ell.volume(), rel=1e-12)


def test_clipped_volume_against_hit_counts():
    rng = np.random.default_rng(1234)
    n = 200_000
    ball = DomainGeometry.ball(1.0)
    lo, hi = np.array([0.1, -0.4, 0.3]), np.array([0.9, 0.4, 0.95])
    pts = lo + (hi - lo) * rng.uniform(size=(n, 3))
    inside = (pts**2).sum(axis=1) <= 1.0
    box = float(np.prod(hi - lo))
    p_hat = inside.mean()
    sigma = math.sqrt(p_hat * (1 - p_hat) / n) * box
    vol = clipped_cell_volume(ball, lo, hi)
    assert abs(vol - p_hat * box) <= 4.0 * sigma
