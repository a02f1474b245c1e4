import numpy as np
import pytest

from conftest import L_SHAPE, UNIT_SQUARE
from robinlab.mesh import (
    BoundaryChart,
    ChartError,
    Mesh,
    MeshError,
    abs_chart,
    build_interval_mesh,
    build_polygon_mesh,
    chart_inverse_T,
    chart_map_T,
    chart_matches_domain,
    flat_chart,
    slope_chart,
    trace,
)


class TestIntervalMesh:
    def test_uniform_split(self):
        m = build_interval_mesh(0.0, 1.0, 2)
        assert np.allclose(m.vertices.ravel(), [0.0, 0.5, 1.0])
        normals = sorted(float(f.normal[0]) for f in m.boundary_facets)
        assert normals == [-1.0, 1.0]
        assert all(f.measure == 1.0 for f in m.boundary_facets)

    def test_cell_lengths(self):
        m = build_interval_mesh(-1.0, 1.0, 4)
        assert m.n_vertices == 5
        assert np.allclose(m.cell_volumes(), 0.5)

    def test_degenerate_inputs(self):
        with pytest.raises(ValueError):
            build_interval_mesh(0.0, 1.0, 0)
        with pytest.raises(ValueError):
            build_interval_mesh(1.0, 0.0, 4)
        with pytest.raises(ValueError):
            build_interval_mesh(1.0, 1.0, 4)

    def test_boundary_measure_is_two_endpoints(self):
        m = build_interval_mesh(2.0, 5.0, 7)
        assert m.boundary_measure() == 2.0


class TestPolygonMesh:
    def test_unit_square_perimeter(self):
        m = build_polygon_mesh(UNIT_SQUARE, 0.5)
        assert abs(m.boundary_measure() - 4.0) <= 1e-10

    def test_unit_square_area(self):
        m = build_polygon_mesh(UNIT_SQUARE, 0.25)
        assert abs(m.volume() - 1.0) <= 1e-10

    def test_l_shape_perimeter_by_hand(self):
        # edges 1, 1/2, 1/2, 1/2, 1/2, 1 around the re-entrant corner
        expected = 1.0 + 0.5 + 0.5 + 0.5 + 0.5 + 1.0
        m = build_polygon_mesh(L_SHAPE, 0.25)
        assert abs(m.boundary_measure() - expected) <= 1e-10
        assert abs(m.volume() - 0.75) <= 1e-10

    def test_diameter_bound(self):
        for h in (0.5, 0.25, 0.125):
            m = build_polygon_mesh(UNIT_SQUARE, h)
            assert m.h_max() <= 2.0 * h + 1e-10

    def test_refinement_preserves_measures(self):
        for poly in (UNIT_SQUARE, L_SHAPE):
            coarse = build_polygon_mesh(poly, 0.25)
            fine = build_polygon_mesh(poly, 0.125)
            assert abs(coarse.volume() - fine.volume()) <= 1e-10
            assert abs(coarse.boundary_measure() - fine.boundary_measure()) <= 1e-10

    def test_self_intersecting_rejected(self):
        bowtie = [(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]
        with pytest.raises(MeshError):
            build_polygon_mesh(bowtie, 0.25)

    def test_nonpositive_h_rejected(self):
        with pytest.raises(ValueError):
            build_polygon_mesh(UNIT_SQUARE, 0.0)

    def test_normals_outward_unit(self):
        m = build_polygon_mesh(UNIT_SQUARE, 0.25)
        center = np.array([0.5, 0.5])
        for f in m.boundary_facets:
            assert abs(np.linalg.norm(f.normal) - 1.0) <= 1e-12
            mid = m.vertices[list(f.vertices)].mean(axis=0)
            assert f.normal @ (mid - center) > 0.0
            # axis-aligned boundary: normals are exact unit vectors
            assert sorted(np.abs(f.normal).tolist()) == [0.0, 1.0]

    def test_convex_pentagon(self):
        pent = [(0.0, 0.0), (2.0, 0.0), (2.6, 1.5), (1.0, 2.4), (-0.6, 1.5)]
        m = build_polygon_mesh(pent, 0.3)
        per = sum(
            np.linalg.norm(np.array(pent[(i + 1) % 5]) - np.array(pent[i]))
            for i in range(5)
        )
        assert abs(m.boundary_measure() - per) <= 1e-10


class TestMeshStructure:
    def test_facet_incidence(self, coarse_square_mesh):
        coarse_square_mesh.validate()

    def test_disconnected_rejected(self):
        verts = [[0.0], [1.0], [2.0], [3.0]]
        cells = [[0, 1], [2, 3]]
        with pytest.raises(MeshError):
            Mesh.from_arrays(1, verts, cells)

    def test_overshared_facet_rejected(self):
        verts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, -1.0]]
        cells = [[0, 1, 2], [1, 3, 2], [0, 1, 3], [0, 1, 4]]
        with pytest.raises(MeshError):
            Mesh.from_arrays(2, verts, cells)

    def test_orientation_fix(self):
        verts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
        m = Mesh.from_arrays(2, verts, [[0, 2, 1]])
        assert m.cell_volumes()[0] > 0.0

    def test_arrays_are_read_only(self, coarse_square_mesh):
        with pytest.raises(ValueError):
            coarse_square_mesh.vertices[0, 0] = 9.9


class TestMeshIO:
    def test_round_trip_bit_exact(self, tmp_path):
        m = build_polygon_mesh(L_SHAPE, 0.25)
        p1 = tmp_path / "a.mesh"
        p2 = tmp_path / "b.mesh"
        m.save(p1)
        m2 = Mesh.load(p1)
        m2.save(p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert np.array_equal(m.vertices, m2.vertices)
        assert np.array_equal(m.cells, m2.cells)

    def test_round_trip_1d(self, tmp_path):
        m = build_interval_mesh(-1.0, 1.0, 5)
        p = tmp_path / "i.mesh"
        m.save(p)
        m2 = Mesh.load(p)
        assert np.array_equal(m.vertices, m2.vertices)
        assert [f.normal[0] for f in m.boundary_facets] == [
            f.normal[0] for f in m2.boundary_facets
        ]

    def test_load_rejects_garbage(self, tmp_path):
        p = tmp_path / "bad.mesh"
        p.write_text("2\nv 0 0\nv 1 0\nv 0 1\nc 0 1 2\nzz 0\n")
        with pytest.raises(MeshError):
            Mesh.load(p)

    def test_load_rejects_wrong_normal(self, tmp_path):
        m = build_interval_mesh(0.0, 1.0, 2)
        p = tmp_path / "n.mesh"
        m.save(p)
        text = p.read_text().replace("bf 0 -1", "bf 0 1")
        p.write_text(text)
        with pytest.raises(MeshError):
            Mesh.load(p)


class TestCharts:
    def test_flat_chart_map(self):
        ch = flat_chart(1.0)
        assert np.allclose(chart_map_T(ch, 0.3, 0.2), [0.3, 0.2])

    def test_kinked_chart_map(self):
        ch = abs_chart(1.0, radius=0.5)
        assert np.allclose(chart_map_T(ch, 0.2, 0.1), [0.2, 0.3])

    def test_zero_s_is_on_graph(self):
        ch = flat_chart(1.0)
        x = chart_map_T(ch, 0.3, 0.0)
        assert abs(x[1] - ch.psi(x[0])) == 0.0

    def test_outside_cylinder_rejected(self):
        ch = flat_chart(0.5)
        with pytest.raises(ChartError):
            chart_map_T(ch, 0.6, 0.0)
        with pytest.raises(ChartError):
            chart_map_T(ch, 0.0, 0.5)

    def test_inverse_round_trip(self, rng):
        ch = abs_chart(0.8, radius=1.0)
        for _ in range(200):
            y = rng.uniform(-0.99, 0.99)
            s = rng.uniform(-0.99, 0.99)
            x = chart_map_T(ch, y, s)
            y2, s2 = chart_inverse_T(ch, x, check=False)
            assert abs(y - y2) <= 1e-12 and abs(s - s2) <= 1e-12

    def test_rotated_chart(self, rng):
        th = 0.7
        rot = np.array([[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]])
        ch = slope_chart(0.5, radius=1.0, anchor=(2.0, -1.0), rotation=rot)
        for _ in range(50):
            y, s = rng.uniform(-0.9, 0.9, size=2)
            x = chart_map_T(ch, y, s)
            y2, s2 = chart_inverse_T(ch, x, check=False)
            assert abs(y - y2) <= 1e-12 and abs(s - s2) <= 1e-12

    def test_non_orthogonal_rotation_rejected(self):
        with pytest.raises(ChartError):
            BoundaryChart(
                (0.0, 0.0),
                np.array([[1.0, 0.2], [0.0, 1.0]]),
                1.0,
                np.array([-1.0, 1.0]),
                np.zeros(2),
                0.0,
            )

    def test_lipschitz_violation_rejected(self):
        with pytest.raises(ChartError):
            BoundaryChart(
                (0.0, 0.0),
                np.eye(2),
                1.0,
                np.array([-1.0, 0.0, 1.0]),
                np.array([0.0, 0.5, 0.0]),
                0.2,
            )

    def test_slope_left_limit_at_breakpoint(self):
        ch = abs_chart(1.0, radius=1.0)
        with pytest.warns(RuntimeWarning):
            s = ch.slope(0.0)
        assert s == -1.0  # left segment of |y|

    def test_chart_splits_square_along_bottom_edge(self, rng):
        ch = flat_chart(0.4, anchor=(0.5, 0.0))
        n = chart_matches_domain(ch, UNIT_SQUARE, rng, n_samples=300)
        assert n >= 290  # all non-degenerate samples agree


class TestTrace:
    def test_constant(self, coarse_square_mesh):
        vals = trace(coarse_square_mesh, np.ones(coarse_square_mesh.n_vertices))
        assert np.all(vals == 1.0)

    def test_linear_exactness(self, coarse_square_mesh):
        m = coarse_square_mesh
        vals = trace(m, m.vertices[:, 0].copy())
        assert np.allclose(vals, m.vertices[m.boundary_vertex_indices(), 0])

    def test_dimension_mismatch(self, coarse_square_mesh):
        with pytest.raises(ValueError):
            trace(coarse_square_mesh, np.ones(3))

    def test_trace_constant_bounds_random_functions(self, coarse_square_mesh, rng):
        # oracle: generalized eigenproblem between boundary mass and H1 matrix
        from robinlab.assembly import assemble_robin_form, discrete_trace_constant, h1_matrix
        from robinlab.coeff import constant_field

        m = coarse_square_mesh
        C = discrete_trace_constant(m)
        form = assemble_robin_form(m, constant_field(2))
        H = h1_matrix(m)
        B = form.M_boundary
        for _ in range(20):
            u = rng.standard_normal(m.n_vertices)
            tn = np.sqrt(u @ (B @ u))
            hn = np.sqrt(u @ (H @ u))
            assert tn <= C * hn * (1.0 + 1e-10)
