import numpy as np
import pytest

import lyapcert as lc
from lyapcert import meshio
from lyapcert.errors import (
    GridError,
    SurfaceRejected,
    TooCloseToSurfaceError,
)
from lyapcert.geometry import Hypersurface, _parity_points

from conftest import BOX2, vertex_nearest


def make_circle_surface(radius, n_pts=64, cell=0.0156):
    """Hand-built circle surface for predicate tests on synthetic data."""
    theta = np.linspace(0.0, 2 * np.pi, n_pts, endpoint=False)
    verts = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    idx = np.arange(n_pts)
    edges = np.column_stack([idx, np.roll(idx, -1)])
    return Hypersurface(2, verts, edges, None, radius ** 2,
                        2 * radius, cell)


class TestBuildGrid:
    def test_circle_grid(self, circle_F):
        grid = lc.build_grid(circle_F, BOX2, 128)
        assert grid.values.shape == (129, 129)
        assert grid.min_cell == pytest.approx(4 / 128)

    def test_nonfinite_node_rejected(self):
        F = lc.parse_expression("1/x", 2)
        with pytest.raises(GridError) as exc:
            lc.build_grid(F, [(-1, 1), (-1, 1)], 8)
        assert "non-finite" in str(exc.value)

    def test_resolution_below_minimum(self, circle_F):
        with pytest.raises(GridError):
            lc.build_grid(circle_F, BOX2, 4)

    def test_degenerate_box(self, circle_F):
        with pytest.raises(GridError):
            lc.build_grid(circle_F, [(2, 2), (-2, 2)], 16)

    def test_box_axis_count_mismatch(self, circle_F):
        with pytest.raises(GridError):
            lc.build_grid(circle_F, [(-2, 2)], 64)

    def test_resolution_axis_count_mismatch(self, circle_F):
        with pytest.raises(GridError):
            lc.build_grid(circle_F, BOX2, [64, 64, 64])

    def test_cached_values_match_pointwise_evaluation(self, circle_F, circle_grid):
        rng = np.random.default_rng(11)
        axes = circle_grid.node_axes()
        for _ in range(20):
            i = int(rng.integers(circle_grid.resolution[0] + 1))
            j = int(rng.integers(circle_grid.resolution[1] + 1))
            node = (axes[0][i], axes[1][j])
            assert circle_grid.values[i, j] == lc.evaluate(circle_F, node)


class TestExtraction:
    def test_unit_circle(self, circle_grid):
        comps = lc.extract_level_components(circle_grid, 1.0)
        assert len(comps) == 1
        assert comps[0].closed
        r = np.linalg.norm(comps[0].vertices, axis=1)
        assert np.max(np.abs(r - 1.0)) < 1e-3

    def test_empty_level(self, circle_grid):
        assert lc.extract_level_components(circle_grid, -1.0) == []

    def test_two_circles_product(self):
        F = lc.parse_expression("(x^2 + y^2 - 1)*((x - 5)^2 + y^2 - 1)", 2)
        grid = lc.build_grid(F, [(-2, 8), (-3, 3)], [250, 150])
        comps = lc.extract_level_components(grid, 0.0)
        accepted = [lc.classify_closed(c, grid) for c in comps]
        assert len(accepted) == 2
        centers = sorted(float(np.mean(H.vertices[:, 0])) for H in accepted)
        assert centers[0] == pytest.approx(0.0, abs=0.05)
        assert centers[1] == pytest.approx(5.0, abs=0.05)

    def test_node_collision_is_nudged(self, circle_grid):
        # 0.25 is hit exactly at nodes like (0.5, 0)
        comps = lc.extract_level_components(circle_grid, 0.25)
        assert len(comps) == 1
        assert comps[0].level != 0.25
        assert abs(comps[0].level - 0.25) < 1e-9


class TestClassify:
    def test_unbounded_level_touches_box(self):
        F = lc.parse_expression("x", 2)
        grid = lc.build_grid(F, BOX2, 64)
        comps = lc.extract_level_components(grid, 0.5)
        assert len(comps) >= 1
        with pytest.raises(SurfaceRejected) as exc:
            lc.classify_closed(comps[0], grid)
        assert exc.value.reason == "touches-box"

    def test_figure_eight_level_splits_into_two_ovals(self):
        F = lc.parse_expression("x^4 - x^2 + y^2", 2)
        grid = lc.build_grid(F, BOX2, 256)
        comps = lc.extract_level_components(grid, -0.01)
        accepted = [lc.classify_closed(c, grid) for c in comps]
        assert len(accepted) == 2
        for H in accepted:
            xs = H.vertices[:, 0]
            assert np.all(xs > 0) or np.all(xs < 0)

    def test_tiny_component_rejected_as_degenerate(self, circle_F):
        grid = lc.build_grid(circle_F, BOX2, 16)
        comps = lc.extract_level_components(grid, 0.05)
        if comps:  # radius 0.22 on a 0.25 cell: too few vertices
            with pytest.raises(SurfaceRejected):
                lc.classify_closed(comps[0], grid)


class TestBoundsPoint:
    def test_circle_cases(self, unit_circle):
        assert lc.bounds_point(unit_circle, (0.0, 0.0)) is True
        assert lc.bounds_point(unit_circle, (3.0, 0.0)) is False

    def test_point_too_close(self, unit_circle):
        with pytest.raises(TooCloseToSurfaceError):
            lc.bounds_point(unit_circle, unit_circle.vertices[0])

    def test_parity_near_vertex(self):
        verts = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        edges = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
        H = Hypersurface(2, verts, edges, None, 0.0, 2.0, 0.1)
        # tiny but resolvable offsets from the corner decide cleanly
        assert _parity_points(H, np.array([[1 - 5e-12, 0.0]]))[0]
        assert not _parity_points(H, np.array([[1 + 5e-12, 0.0]]))[0]
        # a point below ray-cast resolution is refused, not guessed
        from lyapcert.errors import LyapcertError
        with pytest.raises(LyapcertError):
            _parity_points(H, np.array([[1 - 1e-13, 0.0]]))

    def test_sphere(self):
        F = lc.parse_expression("x^2 + y^2 + z^2", 3)
        grid = lc.build_grid(F, [(-2, 2)] * 3, 48)
        comps = lc.extract_level_components(grid, 1.0)
        assert len(comps) == 1
        H = lc.classify_closed(comps[0], grid)
        assert lc.bounds_point(H, (0.0, 0.0, 0.5)) is True
        assert lc.bounds_point(H, (0.0, 0.0, 1.5)) is False


class TestMetrics:
    def test_unit_circle_diameter(self, unit_circle):
        assert lc.diameter(unit_circle) == pytest.approx(2.0, abs=1e-3)

    def test_quarter_circle_diameter(self, circle_F, circle_grid):
        comps = lc.extract_level_components(circle_grid, 0.0625)
        H = lc.classify_closed(comps[0], circle_grid)
        assert lc.diameter(H) == pytest.approx(0.5, abs=2e-3)

    def test_distance_to_point_is_max_metric(self, unit_circle):
        assert lc.distance_to_point((0.0, 0.0), unit_circle) == pytest.approx(1.0, abs=1e-3)
        assert lc.distance_to_point((1.0, 0.0), unit_circle) == pytest.approx(2.0, abs=1e-3)
        on_surface = unit_circle.vertices[0]
        assert lc.distance_to_point(on_surface, unit_circle) > 1.5


class TestOrientation:
    def test_circle_normals_point_inward(self, unit_circle):
        k = vertex_nearest(unit_circle, (0.0, 1.0))
        assert np.allclose(unit_circle.normals[k], [0.0, -1.0], atol=1e-6)
        k = vertex_nearest(unit_circle, (1.0, 0.0))
        assert np.allclose(unit_circle.normals[k], [-1.0, 0.0], atol=1e-6)

    def test_sphere_normal_inward(self):
        F = lc.parse_expression("x^2 + y^2 + z^2", 3)
        grid = lc.build_grid(F, [(-2, 2)] * 3, 48)
        comps = lc.extract_level_components(grid, 1.0)
        H = lc.classify_closed(comps[0], grid)
        H = lc.orient_inward(H, (0.0, 0.0, 0.0), F)
        k = vertex_nearest(H, (0.0, 0.0, 1.0))
        assert np.allclose(H.normals[k], [0.0, 0.0, -1.0], atol=1e-5)

    def test_tangent_orientation_without_F(self, circle_F, circle_grid):
        comps = lc.extract_level_components(circle_grid, 1.0)
        H = lc.classify_closed(comps[0], circle_grid)
        H = lc.orient_inward(H, (0.0, 0.0))
        k = vertex_nearest(H, (0.0, 1.0))
        assert np.allclose(H.normals[k], [0.0, -1.0], atol=1e-2)

    def test_probe_invariant_every_vertex(self, unit_circle):
        h = 0.5 * unit_circle.cell
        plus = unit_circle.vertices + h * unit_circle.normals
        minus = unit_circle.vertices - h * unit_circle.normals
        assert np.all(_parity_points(unit_circle, plus))
        assert not np.any(_parity_points(unit_circle, minus))

    def test_normals_unit_length(self, unit_circle):
        norms = np.linalg.norm(unit_circle.normals, axis=1)
        assert np.max(np.abs(norms - 1.0)) < 1e-9


class TestNesting:
    def test_concentric(self, circle_F, circle_grid):
        outer = lc.classify_closed(
            lc.extract_level_components(circle_grid, 1.0)[0], circle_grid)
        inner = lc.classify_closed(
            lc.extract_level_components(circle_grid, 0.25)[0], circle_grid)
        assert lc.is_nested(outer, inner) is True
        assert lc.is_nested(inner, outer) is False

    def test_side_by_side_not_nested(self):
        F = lc.parse_expression("(x^2 + y^2 - 1)*((x - 5)^2 + y^2 - 1)", 2)
        grid = lc.build_grid(F, [(-2, 8), (-3, 3)], [250, 150])
        comps = lc.extract_level_components(grid, 0.0)
        a, b = (lc.classify_closed(c, grid) for c in comps)
        assert lc.is_nested(a, b) is False
        assert lc.is_nested(b, a) is False

    def test_too_close_refused(self, circle_F, circle_grid):
        H1 = lc.classify_closed(
            lc.extract_level_components(circle_grid, 1.0)[0], circle_grid)
        H2 = lc.classify_closed(
            lc.extract_level_components(circle_grid, 1.001)[0], circle_grid)
        with pytest.raises(TooCloseToSurfaceError):
            lc.is_nested(H2, H1)

    def test_nesting_is_strict_partial_order(self, circle_family):
        surfaces = circle_family.surfaces[:4]
        n = len(surfaces)
        rel = {}
        for i in range(n):
            for j in range(n):
                if i != j:
                    rel[i, j] = lc.is_nested(surfaces[i], surfaces[j])
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                if rel[i, j]:
                    assert not rel[j, i], "antisymmetry"
                for k in range(n):
                    if k in (i, j):
                        continue
                    if rel[i, j] and rel[j, k]:
                        assert rel[i, k], "transitivity"


class TestGradientNorm:
    def test_unit_circle(self, circle_F, unit_circle):
        assert lc.min_gradient_norm(circle_F, unit_circle) == pytest.approx(2.0, abs=2e-3)

    def test_tiny_level_falls_below_eta(self, circle_F):
        H = make_circle_surface(1e-6)
        gn = lc.min_gradient_norm(circle_F, H)
        assert gn == pytest.approx(2e-6, rel=1e-6)
        assert gn < 1e-4  # default regularity floor rejects this level

    def test_saddle_component_near_origin_flags_small_norm(self):
        F = lc.parse_expression("x^2 - y^2", 2)
        x = np.linspace(0.01, 0.5, 40)
        y = np.sqrt(x ** 2 - 1e-4)
        verts = np.column_stack([x, y])
        idx = np.arange(len(verts))
        edges = np.column_stack([idx[:-1], idx[1:]])
        H = Hypersurface(2, verts, edges, None, 1e-4, 1.0, 0.0156)
        assert lc.min_gradient_norm(F, H) < 0.05


class TestConsistency:
    @pytest.mark.parametrize("a", [0.25, 0.5, 1.0])
    def test_residual_bound_and_shrinkage(self, circle_F, a):
        residuals = {}
        for res in (128, 256):
            grid = lc.build_grid(circle_F, BOX2, res)
            comps = lc.extract_level_components(grid, a)
            assert len(comps) == 1
            level = comps[0].level
            vals = circle_F.eval_many(comps[0].vertices)
            residuals[res] = float(np.max(np.abs(vals - level)))
            # second-difference bound per cell: |F''| h^2 = 2 h^2 per axis
            assert residuals[res] <= 2.0 * grid.min_cell ** 2
        assert residuals[256] <= residuals[128] / 2.0 * 1.05

    def test_parity_agrees_with_analytic_circle(self, unit_circle):
        rng = np.random.default_rng(2024)
        pts = rng.uniform(-2, 2, size=(1000, 2))
        r = np.linalg.norm(pts, axis=1)
        keep = np.abs(r - 1.0) > unit_circle.cell
        got = _parity_points(unit_circle, pts[keep])
        assert np.array_equal(got, r[keep] < 1.0)

    def test_diameter_monotone_for_convex_levels(self):
        F = lc.parse_expression("x^2 + 2*y^2", 2)
        grid = lc.build_grid(F, BOX2, 256)
        fam = lc.build_nested_family(F, (0.0, 0.0), grid)
        for outer, inner in zip(fam.surfaces, fam.surfaces[1:]):
            assert inner.diameter <= outer.diameter + 2 * grid.min_cell


class TestMeshIO:
    def test_roundtrip(self, unit_circle, tmp_path):
        path = tmp_path / "surface.mesh"
        meshio.write_surface(unit_circle, path)
        back = meshio.read_surface(path)
        assert back.dimension == 2
        assert back.level == unit_circle.level
        assert np.array_equal(back.vertices, unit_circle.vertices)
        assert np.array_equal(back.normals, unit_circle.normals)
        assert np.array_equal(back.edges, unit_circle.edges)

    def test_write_is_deterministic(self, unit_circle, tmp_path):
        p1 = tmp_path / "a.mesh"
        p2 = tmp_path / "b.mesh"
        meshio.write_surface(unit_circle, p1)
        meshio.write_surface(unit_circle, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_sphere_roundtrip(self, tmp_path):
        F = lc.parse_expression("x^2 + y^2 + z^2", 3)
        grid = lc.build_grid(F, [(-2, 2)] * 3, 32)
        H = lc.classify_closed(
            lc.extract_level_components(grid, 1.0)[0], grid)
        H = lc.orient_inward(H, (0, 0, 0), F)
        path = tmp_path / "sphere.mesh"
        meshio.write_surface(H, path)
        back = meshio.read_surface(path)
        assert np.array_equal(back.faces, H.faces)
        assert np.array_equal(back.vertices, H.vertices)
