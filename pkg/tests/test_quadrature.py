import numpy as np
import pytest

from quadflow.expr import parse
from quadflow.fields import Domain, Frame, SingularFrameError, VectorField
from quadflow.linalg import Subspace, annihilator
from quadflow.liealg import gamma_sequence, structure_constants
from quadflow.oracle import integrate_flow
from quadflow.quadrature import (
    LeafPath,
    LeafPathError,
    NotIntegrableError,
    OneFormField,
    PathDomainError,
    PolylinePath,
    StraightPath,
    build_chart,
    build_chart_from_stages,
    build_one_form,
    check_closed,
    leaf_reference,
    quadrature_along,
    reconstruct_flow,
)
from quadflow.distribution import distributional_flow


def frame(coords, box, *fields):
    d = Domain(tuple(coords), {}, (), np.array(box, dtype=float))
    return Frame(tuple(VectorField(tuple(parse(c, coords) for c in f), d, f"X{i + 1}") for i, f in enumerate(fields)), d)


PLANE = frame(["x", "y"], [[-10, 10], [-10, 10]], ["1", "0"], ["0", "1"])


@pytest.fixture(scope="module")
def nilp4_charts(systems):
    s = systems["nilp4"]
    S = structure_constants(s.frame, seed=1)
    return s, {g: build_chart(S, g, s.x0, seed=1) for g in (0, 3)}


@pytest.fixture(scope="module")
def triangular_chart(systems):
    s = systems["triangular"]
    return s, distributional_flow(s.frame, s.gamma_index, s.x0, seed=1).chart


class TestAnnihilator:
    def test_coordinate_plane(self):
        Z = annihilator(4, Subspace.span(np.eye(4)[:2]))
        assert Z.equals(Subspace.span(np.eye(4)[2:]))

    def test_full_space(self):
        assert annihilator(3, Subspace.full(3)).is_zero

    def test_holt_derived_algebra(self, systems):
        S = structure_constants(systems["holt"].frame, seed=1)
        W = gamma_sequence(S, 0).stages[1]
        Z = annihilator(4, W)
        assert Z.dim == 2
        assert np.max(np.abs(Z.basis @ W.basis.T)) <= 1e-10


class TestOneForms:
    def test_coordinate_dual(self):
        beta = build_one_form(PLANE, [1.0, 0.0])
        np.testing.assert_allclose(beta(PLANE.domain.sample(10, seed=1)), np.tile([1.0, 0.0], (10, 1)))

    def test_affine_frame_dual(self):
        F = frame(["x", "y"], [[-2, 2], [-2, 2]], ["1", "0"], ["x", "1"])
        beta = build_one_form(F, [0.0, 1.0])
        np.testing.assert_allclose(beta(F.domain.sample(20, seed=1)), np.tile([0.0, 1.0], (20, 1)), atol=1e-15)

    def test_pairs_with_frame(self, systems):
        F = systems["nilp4"].frame
        h = np.random.default_rng(0).normal(size=(3, 4))
        pts = F.domain.sample(50, seed=2)
        beta = build_one_form(F, h)(pts)  # (50, 3, 4)
        pair = np.einsum("prn,pin->pri", beta, F.matrix(pts))
        np.testing.assert_allclose(pair, np.broadcast_to(h, pair.shape), atol=1e-10)

    def test_singular_point(self, systems):
        s = systems["holt"]
        with pytest.raises(SingularFrameError):
            build_one_form(s.frame, [0, 0, 1, 0], x=s.x0)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            build_one_form(PLANE, [1.0, 0.0, 0.0])


class TestClosedness:
    def test_exact_form(self):
        pts = PLANE.domain.sample(30, seed=1)
        assert check_closed(lambda p: np.broadcast_to([1.0, 0.0], p.shape), pts) <= 1e-9

    def test_non_closed_form(self):
        pts = PLANE.domain.sample(30, seed=1)
        x_dy = lambda p: np.stack([np.zeros(len(p)), p[:, 0]], axis=-1)
        assert check_closed(x_dy, pts) == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("gamma", [0, 3])
    def test_stage_one_forms_closed(self, nilp4_charts, gamma):
        s, charts = nilp4_charts
        pts = s.domain.sample(40, seed=3, shrink=0.05)
        beta = charts[gamma].forms[0]
        assert check_closed(beta, pts, h=1e-5 * 0.02) <= 1e-6

    def test_stage_one_distributional_forms_closed(self, triangular_chart):
        s, chart = triangular_chart
        assert check_closed(chart.forms[0], s.domain.sample(40, seed=3, shrink=0.05)) <= 1e-6


class TestQuadrature:
    def test_dx_straight(self):
        dx = OneFormField(PLANE, np.array([1.0, 0.0]))
        assert quadrature_along(dx, StraightPath(np.zeros(2), np.array([3.0, 4.0]))) == pytest.approx(3.0, abs=1e-12)

    def test_exact_form_path_independent(self):
        d_xy = lambda p: np.stack([p[..., 1], p[..., 0]], axis=-1)
        a, b = np.zeros(2), np.array([2.0, 5.0])
        paths = [
            StraightPath(a, b),
            PolylinePath([a, [2.0, 0.0], b]),
            PolylinePath([a, [-1.0, 3.0], [4.0, 4.0], b]),
        ]
        vals = [quadrature_along(d_xy, p) for p in paths]
        assert np.ptp(vals) <= 1e-9
        assert vals[0] == pytest.approx(10.0, abs=1e-9)

    def test_zero_length_path(self):
        dx = OneFormField(PLANE, np.array([1.0, 0.0]))
        assert quadrature_along(dx, StraightPath(np.ones(2), np.ones(2))) == 0.0

    def test_stage_one_homotopic_paths(self, nilp4_charts):
        s, charts = nilp4_charts
        beta = charts[3].forms[0]
        a, b = s.x0, np.array([0.01, -0.008, 0.012, -0.01])
        mid1 = np.array([0.015, 0.015, -0.015, 0.0])
        mid2 = np.array([-0.015, -0.01, 0.005, 0.015])
        vals = np.array(
            [quadrature_along(beta, p) for p in (StraightPath(a, b), PolylinePath([a, mid1, b]), PolylinePath([a, mid2, mid1, b]))]
        )
        assert np.max(np.ptp(vals, axis=0)) <= 1e-8

    def test_stage_one_against_trapezoid(self, nilp4_charts):
        s, charts = nilp4_charts
        beta = charts[0].forms[0]
        a, b = s.x0, np.array([0.012, 0.01, -0.01, 0.015])
        got = quadrature_along(beta, StraightPath(a, b))
        # independent fine-grid trapezoid rule with Richardson extrapolation
        def trap(N):
            s_ = np.linspace(0.0, 1.0, N + 1)
            vals = np.einsum("prn,n->pr", beta(a + s_[:, None] * (b - a)), b - a)
            return (vals[0] + vals[-1]) / (2 * N) + vals[1:-1].sum(axis=0) / N

        ref = (4 * trap(4000) - trap(2000)) / 3
        np.testing.assert_allclose(got, ref, atol=1e-8)

    def test_gauss_rule_matches_adaptive(self, nilp4_charts):
        s, charts = nilp4_charts
        beta = charts[0].forms[0]
        p = StraightPath(s.x0, np.array([0.01, 0.01, 0.01, 0.01]))
        np.testing.assert_allclose(quadrature_along(beta, p, rule=64), quadrature_along(beta, p), atol=1e-10)

    def test_linearity_in_dual_vector(self, nilp4_charts):
        s, charts = nilp4_charts
        z1, z2 = charts[0].blocks[0]
        path = StraightPath(s.x0, np.array([0.01, -0.012, 0.008, 0.015]))
        q1 = quadrature_along(build_one_form(s.frame, z1), path)
        q2 = quadrature_along(build_one_form(s.frame, z2), path)
        q = quadrature_along(build_one_form(s.frame, 2.5 * z1 - 0.75 * z2), path)
        assert abs(q - (2.5 * q1 - 0.75 * q2)) <= 1e-9

    def test_path_leaving_domain(self):
        F = frame(["x", "y"], [[0.1, 2], [-1, 1]], ["1", "0"], ["0", "1+log(x)^2"])
        beta = build_one_form(F, [0.0, 1.0])
        with pytest.raises(PathDomainError):
            quadrature_along(beta, StraightPath(np.array([0.5, 0.0]), np.array([-0.5, 0.0])))


class TestLeafPaths:
    def test_flat_leaves_give_straight_segment(self):
        F = frame(["x", "y", "z"], [[-2, 2]] * 3, ["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"])
        W = Subspace.span(np.eye(3)[:2])
        p = LeafPath(F, W, np.array([0.0, 0.0, 0.5]), np.array([1.0, -1.0, 0.5]))
        s = np.linspace(0, 1, 7)
        np.testing.assert_allclose(p.point(s), np.outer(1 - s, [0, 0, 0.5]) + np.outer(s, [1.0, -1.0, 0.5]), atol=1e-12)

    def test_same_point_integral_zero(self, nilp4_charts):
        s, charts = nilp4_charts
        chart = charts[3]
        p = LeafPath(s.frame, chart.stages[1], s.x0, s.x0)
        assert np.all(quadrature_along(chart.forms[1], p) == 0.0)

    def test_refinement_agrees(self, nilp4_charts):
        s, charts = nilp4_charts
        chart = charts[3]
        x = np.array([0.008, -0.006, 0.01, -0.004])
        ref = leaf_reference(chart, x, 2)
        p = LeafPath(s.frame, chart.stages[1], ref, x)
        vals = np.array([quadrature_along(chart.forms[1], p, rule=k) for k in (64, 128, 256)])
        assert np.max(np.ptp(vals, axis=0)) <= 1e-7

    def test_points_on_different_leaves(self, nilp4_charts):
        s, charts = nilp4_charts
        with pytest.raises(LeafPathError):
            LeafPath(s.frame, charts[3].stages[1], s.x0, s.x0 + np.array([0.0, 0.0, 0.01, 0.0]))


class TestLeafReference:
    def test_flat_leaves(self):
        F = frame(["x", "y", "z"], [[-2, 2]] * 3, ["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"])
        stages = [Subspace.full(3), Subspace.span(np.eye(3)[:2]), Subspace.span(np.eye(3)[:1])]
        x0 = np.array([0.1, 0.2, 0.3])
        chart = build_chart_from_stages(F, stages, np.eye(3)[0], x0, seed=1)
        ref = leaf_reference(chart, [1.0, -0.5, 0.9], 2)
        np.testing.assert_allclose(ref, [0.1, 0.2, 0.9], atol=1e-12)

    def test_matches_earlier_values(self, triangular_chart):
        s, chart = triangular_chart
        x = np.array([0.3, -0.2, 0.25])
        ref = leaf_reference(chart, x, 2)
        np.testing.assert_allclose(chart.evaluate(ref, stages=1), chart.evaluate(x, stages=1), atol=1e-9)

    def test_point_on_base_leaf(self, triangular_chart):
        s, chart = triangular_chart
        x = integrate_flow(s.gamma, s.x0, 0.3)
        np.testing.assert_allclose(leaf_reference(chart, x, 2), s.x0, atol=1e-9)


class TestChart:
    def test_coordinate_chart(self, systems):
        s = systems["abelian"]
        chart = build_chart(structure_constants(s.frame, seed=1), 0, s.x0, seed=1)
        assert chart.quadrature_count == 1
        np.testing.assert_allclose(chart.velocities, [1.0, 0.0, 0.0], atol=1e-15)
        x = np.array([0.5, -1.0, 1.5])
        np.testing.assert_allclose(chart(x), x - s.x0, atol=1e-12)

    def test_quadrature_counts(self, nilp4_charts):
        _, charts = nilp4_charts
        assert charts[0].quadrature_count == 2
        assert charts[3].quadrature_count == 3
        assert charts[3].stage_dims == [4, 3, 2]

    @pytest.mark.parametrize("gamma", [0, 3])
    def test_normalized_at_base_point(self, nilp4_charts, gamma):
        s, charts = nilp4_charts
        assert np.all(charts[gamma](s.x0) == 0.0)

    @pytest.mark.parametrize("gamma", [0, 3])
    def test_gamma_derivative_law(self, nilp4_charts, gamma):
        s, charts = nilp4_charts
        chart, G = charts[gamma], s.frame[gamma]
        h = 1e-4
        for x in s.domain.sample(3, seed=5, shrink=0.2):
            d = (chart(integrate_flow(G, x, h)) - chart(integrate_flow(G, x, -h))) / (2 * h)
            np.testing.assert_allclose(d, chart.velocities, atol=1e-5)

    def test_gamma_derivative_law_distributional(self, triangular_chart):
        s, chart = triangular_chart
        h = 1e-4
        for x in s.domain.sample(3, seed=5, shrink=0.3):
            d = (chart(integrate_flow(s.gamma, x, h)) - chart(integrate_flow(s.gamma, x, -h))) / (2 * h)
            np.testing.assert_allclose(d, chart.velocities, atol=1e-5)

    def test_jacobian_in_owed_directions(self, nilp4_charts):
        s, charts = nilp4_charts
        chart = charts[3]
        h = 2e-5
        rows = [slice(0, len(B)) for B in chart.blocks]
        x = np.array([0.006, -0.004, 0.005, 0.003])
        J = chart.jacobian(x)
        A = s.frame.scalar_matrix()(x)
        start = 0
        for m, B in enumerate(chart.blocks):
            rows = slice(start, start + len(B))
            start += len(B)
            # stage-1 rows along every coordinate, later rows along the previous stage
            dirs = np.eye(4) if m == 0 else chart.stages[m].basis @ A
            for v in dirs:
                d = (chart(x + h * v) - chart(x - h * v))[rows] / (2 * h)
                np.testing.assert_allclose(d, J[rows] @ v, atol=1e-5)

    def test_holt_frame_has_no_chart(self, systems):
        s = systems["holt"]
        S = structure_constants(s.frame, seed=1)
        with pytest.raises(SingularFrameError):
            build_chart(S, 0, s.x0, seed=1)

    def test_not_integrable(self, systems):
        s = systems["lie2d"]
        with pytest.raises(NotIntegrableError):
            build_chart(structure_constants(s.frame, seed=1), 1, s.x0, seed=1)

    def test_json_dump(self, nilp4_charts):
        d = nilp4_charts[1][0].to_dict()
        assert set(d) >= {"x0", "xi_basis", "velocities", "quadrature_count", "stage_dims"}
        assert np.allclose(np.array(d["xi_basis"]) @ np.array(d["xi_basis"]).T, np.eye(4))


class TestFlow:
    def test_translation(self):
        S = structure_constants(PLANE, seed=1)
        chart = build_chart(S, 0, [0.0, 0.0], seed=1)
        res = reconstruct_flow(chart, [1.0, 2.0], 5.0)
        np.testing.assert_allclose(res.point, [6.0, 2.0], atol=1e-10)

    def test_zero_time_identity(self, nilp4_charts):
        s, charts = nilp4_charts
        x = np.array([0.001, 0.002, -0.003, 0.004])
        res = reconstruct_flow(charts[3], x, 0.0)
        assert np.array_equal(res.point, x) and res.residual == 0.0

    @pytest.mark.parametrize("gamma", [0, 3])
    def test_matches_oracle(self, nilp4_charts, gamma):
        s, charts = nilp4_charts
        t = 0.005
        got = reconstruct_flow(charts[gamma], s.x0, t).point
        np.testing.assert_allclose(got, integrate_flow(s.frame[gamma], s.x0, t), atol=1e-10)

    @pytest.mark.parametrize("gamma", [0, 3])
    def test_group_law(self, nilp4_charts, gamma):
        s, charts = nilp4_charts
        chart = charts[gamma]
        a, b = 0.002, 0.003  # the X4 orbit of x0 leaves the box near t = 0.0059
        direct = reconstruct_flow(chart, s.x0, a + b).point
        composed = reconstruct_flow(chart, reconstruct_flow(chart, s.x0, a).point, b).point
        np.testing.assert_allclose(direct, composed, atol=1e-8)

    def test_group_law_distributional(self, triangular_chart):
        s, chart = triangular_chart
        direct = reconstruct_flow(chart, s.x0, 0.5).point
        composed = reconstruct_flow(chart, reconstruct_flow(chart, s.x0, 0.2).point, 0.3).point
        np.testing.assert_allclose(direct, composed, atol=1e-8)
