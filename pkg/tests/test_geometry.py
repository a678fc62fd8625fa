import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from cardiossl.errors import AmbiguousOrientation, OffPlanePoint, ParallelPlanes
from cardiossl.geometry import (ImagePlane, Line2, Line3, direction_to_world,
                                intersect_planes, orient_direction,
                                pixel_to_world, plane_normal, project_line,
                                world_to_pixel)
from helpers import point_line_distance, random_plane, sample_intersection_points


def canonical_plane(origin=(0, 0, 0), spacing=(1.0, 1.0), size=(64, 64)):
    return ImagePlane(origin, (1, 0, 0), (0, 1, 0), spacing, size)


class TestPlaneNormal:
    def test_canonical_axes(self):
        assert np.allclose(plane_normal(canonical_plane()), (0, 0, 1))
        p = ImagePlane((0, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1), (8, 8))
        assert np.allclose(plane_normal(p), (1, 0, 0))

    def test_rotated_30_degrees(self):
        rot = Rotation.from_euler("x", np.deg2rad(30)).as_matrix()
        p = ImagePlane((1, 2, 3), rot @ (1, 0, 0), rot @ (0, 1, 0), (1, 1), (8, 8))
        assert np.allclose(plane_normal(p), rot @ (0, 0, 1), atol=1e-12)

    def test_orthogonal_to_axes(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = random_plane(rng)
            n = plane_normal(p)
            assert abs(n @ p.row_dir) < 1e-9
            assert abs(n @ p.col_dir) < 1e-9
            assert abs(np.linalg.norm(n) - 1) < 1e-12


class TestPlaneValidation:
    def test_rejects_non_unit_dirs(self):
        with pytest.raises(ValueError):
            ImagePlane((0, 0, 0), (2, 0, 0), (0, 1, 0), (1, 1), (8, 8))

    def test_rejects_non_orthogonal(self):
        v = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
        with pytest.raises(ValueError):
            ImagePlane((0, 0, 0), (1, 0, 0), v, (1, 1), (8, 8))

    def test_rejects_bad_spacing_and_size(self):
        with pytest.raises(ValueError):
            ImagePlane((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 1), (8, 8))
        with pytest.raises(ValueError):
            ImagePlane((0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1), (0, 8))


class TestIntersectPlanes:
    def test_coordinate_planes(self):
        a = canonical_plane()  # z = 0
        b = ImagePlane((0, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1), (8, 8))  # x = 0
        line = intersect_planes(a, b)
        assert abs(abs(line.direction[1]) - 1) < 1e-12
        assert np.allclose(point_line_distance(np.zeros((1, 3)), line), 0, atol=1e-9)

    def test_identical_planes_raise(self):
        a = canonical_plane()
        with pytest.raises(ParallelPlanes):
            intersect_planes(a, a)

    def test_parallel_sa_slices_raise(self):
        a = canonical_plane(origin=(0, 0, 0))
        b = canonical_plane(origin=(0, 0, 10))
        with pytest.raises(ParallelPlanes):
            intersect_planes(a, b)

    def test_random_pairs_against_sampling_oracle(self):
        rng = np.random.default_rng(1)
        done = 0
        while done < 50:
            a, b = random_plane(rng), random_plane(rng)
            if np.linalg.norm(np.cross(plane_normal(a), plane_normal(b))) < 0.1:
                continue
            line = intersect_planes(a, b)
            pts = sample_intersection_points(a, b)
            assert point_line_distance(pts, line).max() < 1e-6
            # points on our line satisfy both plane equations
            for t in (-70.0, 0.0, 70.0):
                p = line.point + t * line.direction
                assert abs((p - a.origin) @ plane_normal(a)) < 1e-6
                assert abs((p - b.origin) @ plane_normal(b)) < 1e-6
            done += 1


class TestWorldToPixel:
    def test_origin_maps_to_zero(self):
        p = canonical_plane(origin=(5, 6, 7))
        assert np.allclose(world_to_pixel(p, (5, 6, 7)), (0, 0))

    def test_one_pixel_step_at_acquisition_resolution(self):
        p = canonical_plane(spacing=(1.82, 1.82))
        target = np.asarray(p.origin) + 1.82 * p.row_dir
        assert np.allclose(world_to_pixel(p, target), (0, 1), atol=1e-12)

    def test_round_trip_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            plane = random_plane(rng)
            rc = rng.uniform(0, 63, size=(10, 2))
            world = pixel_to_world(plane, rc)
            back = world_to_pixel(plane, world)
            assert np.abs(back - rc).max() < 1e-6

    def test_all_grid_pixels_round_trip(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            plane = random_plane(rng, size=(32, 48))
            rc = np.stack(np.meshgrid(np.arange(32), np.arange(48),
                                      indexing="ij"), axis=-1).astype(float)
            back = world_to_pixel(plane, pixel_to_world(plane, rc))
            assert np.abs(back - rc).max() < 1e-6

    def test_off_plane_point_rejected(self):
        p = canonical_plane()
        with pytest.raises(OffPlanePoint):
            world_to_pixel(p, (0, 0, 0.01))
        # inside tolerance is fine
        world_to_pixel(p, (0, 0, 0.0009))


class TestProjectLine:
    def test_x_axis_in_canonical_plane(self):
        plane = canonical_plane()
        line = Line3((0, 0, 0), (1, 0, 0))
        l2 = project_line(plane, line)
        assert np.allclose(l2.point, (0, 0))
        assert abs(abs(l2.direction[1]) - 1) < 1e-12  # along the column axis

    def test_45_degree_line_isotropic_spacing(self):
        plane = canonical_plane(spacing=(2.0, 2.0))
        line = Line3((0, 0, 0), np.array([1, 1, 0]) / np.sqrt(2))
        l2 = project_line(plane, line)
        assert abs(abs(l2.direction[0]) - abs(l2.direction[1])) < 1e-9

    def test_oblique_matches_pointwise_projection(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            plane = random_plane(rng)
            # take a line through two in-plane points
            p0 = pixel_to_world(plane, rng.uniform(0, 63, 2))
            p1 = pixel_to_world(plane, rng.uniform(0, 63, 2))
            d = (p1 - p0) / np.linalg.norm(p1 - p0)
            l2 = project_line(plane, Line3(p0, d))
            q0 = world_to_pixel(plane, p0)
            q1 = world_to_pixel(plane, p0 + 25.0 * d)
            expect = (q1 - q0) / np.linalg.norm(q1 - q0)
            assert np.allclose(l2.point, q0, atol=1e-9)
            assert min(np.abs(l2.direction - expect).max(),
                       np.abs(l2.direction + expect).max()) < 1e-9

    def test_line_not_in_plane_rejected(self):
        plane = canonical_plane()
        with pytest.raises(OffPlanePoint):
            project_line(plane, Line3((0, 0, 5), (1, 0, 0)))


class TestOrientDirection:
    def test_already_left_is_unchanged(self):
        plane = canonical_plane()
        line = Line2((0, 0), (0, 1))  # +col = +x = patient left
        out = orient_direction(line, plane, "left")
        assert np.array_equal(out.direction, line.direction)
        assert out.positive_axis == "left"

    def test_pointing_right_gets_flipped(self):
        plane = canonical_plane()
        line = Line2((0, 0), (0, -1))
        out = orient_direction(line, plane, "left")
        assert np.allclose(out.direction, (0, 1))

    def test_oblique_posterior_dot_product_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            plane = random_plane(rng)
            d2 = rng.normal(size=2)
            d2 /= np.linalg.norm(d2)
            line = Line2(rng.uniform(0, 10, 2), d2)
            try:
                out = orient_direction(line, plane, "posterior")
            except AmbiguousOrientation:
                continue
            d3 = direction_to_world(plane, out.direction)
            assert d3 @ (0, 1, 0) > 0

    def test_idempotent(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            plane = random_plane(rng)
            d2 = rng.normal(size=2)
            d2 /= np.linalg.norm(d2)
            line = Line2((0, 0), d2)
            try:
                once = orient_direction(line, plane, "superior")
            except AmbiguousOrientation:
                continue
            twice = orient_direction(once, plane, "superior")
            assert np.array_equal(once.direction, twice.direction)
            assert once.positive_axis == twice.positive_axis

    def test_perpendicular_axis_is_ambiguous(self):
        plane = canonical_plane()  # in-plane dirs have no z component
        with pytest.raises(AmbiguousOrientation):
            orient_direction(Line2((0, 0), (0, 1)), plane, "superior")
