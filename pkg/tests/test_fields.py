import itertools

import numpy as np
import pytest

from quadflow.expr import parse
from quadflow.fields import (
    DimensionMismatchError,
    Domain,
    Frame,
    SingularFrameError,
    VectorField,
    check_complete_regularity,
    decompose_in_frame,
    frame_matrix,
    lie_bracket,
    linear_combination,
)
from quadflow.oracle import integrate_flow
from quadflow.system import loads_system

from .conftest import FIXTURES


def field(domain, *components, name=""):
    coeffs = tuple(parse(c, domain.coords, list(domain.params)) for c in components)
    return VectorField(coeffs, domain, name)


@pytest.fixture
def line():
    return Domain(("x",), {}, (), np.array([[-1.0, 1.0]]))


@pytest.fixture
def plane():
    return Domain(("x", "y"), {}, (), np.array([[-2.0, 2.0], [-2.0, 2.0]]))


class TestBracket:
    def test_translation_and_dilation(self, line):
        B = lie_bracket(field(line, "1"), field(line, "x"))
        pts = line.sample(20, seed=1)
        np.testing.assert_allclose(B(pts), np.ones((20, 1)), atol=1e-15)

    def test_rotation_generators(self):
        d = Domain(("x", "y", "z"), {}, (), np.array([[-1.0, 1.0]] * 3))
        Lx = field(d, "0", "-z", "y")
        Ly = field(d, "z", "0", "-x")
        Lz = field(d, "-y", "x", "0")
        pts = d.sample(50, seed=2)
        np.testing.assert_allclose(lie_bracket(Lx, Ly)(pts), -Lz(pts), atol=1e-14)

    def test_matches_symbolic_oracle(self, systems):
        sp = pytest.importorskip("sympy")
        s = systems["holt"]
        syms = sp.symbols(s.domain.coords)
        env = {**dict(zip(s.domain.coords, syms)), **s.domain.params}
        comps = [[sp.sympify(c, locals=env) for c in X.to_strings()] for X in s.frame.fields]
        pts = s.domain.sample(40, seed=5)
        for i, j in [(0, 1), (1, 3), (2, 3)]:
            X, Y = comps[i], comps[j]
            ref = [
                sum(X[a] * sp.diff(Y[k], syms[a]) - Y[a] * sp.diff(X[k], syms[a]) for a in range(4))
                for k in range(4)
            ]
            f = sp.lambdify(syms, ref, "numpy")
            want = np.stack([np.broadcast_to(v, len(pts)) for v in f(*pts.T)], axis=-1)
            got = lie_bracket(s.frame[i], s.frame[j])(pts)
            np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-9)

    @pytest.mark.parametrize("name", FIXTURES)
    def test_antisymmetry_and_jacobi(self, systems, name):
        F = systems[name].frame
        pts = F.domain.sample(100, seed=11)
        for i, j in itertools.combinations(range(len(F)), 2):
            d = lie_bracket(F[i], F[j])(pts) + lie_bracket(F[j], F[i])(pts)
            assert np.max(np.abs(d)) <= 1e-8
        for i, j, k in itertools.combinations(range(len(F)), 3):
            X, Y, Z = F[i], F[j], F[k]
            J = (
                lie_bracket(lie_bracket(X, Y), Z)(pts)
                + lie_bracket(lie_bracket(Y, Z), X)(pts)
                + lie_bracket(lie_bracket(Z, X), Y)(pts)
            )
            assert np.max(np.abs(J)) <= 1e-8

    @pytest.mark.parametrize("name,i,j", [("triangular", 0, 1), ("triangular", 0, 2), ("fdx1", 0, 1), ("lie2d", 0, 1)])
    def test_flow_commutator(self, systems, name, i, j):
        # symmetrised commutator of flows divided by h^2 equals the bracket
        s = systems[name]
        X, Y = s.frame[i], s.frame[j]
        h = 1e-4
        for x in s.domain.sample(5, seed=4, shrink=0.1):

            def loop(h):
                y = integrate_flow(X, x, h, tol=1e-14)
                y = integrate_flow(Y, y, h, tol=1e-14)
                y = integrate_flow(X, y, -h, tol=1e-14)
                return integrate_flow(Y, y, -h, tol=1e-14) - x

            est = (loop(h) + loop(-h)) / (2 * h * h)
            np.testing.assert_allclose(est, lie_bracket(X, Y)(x), atol=1e-6)

    def test_linear_combination(self, plane):
        X, Y = field(plane, "1", "x"), field(plane, "y", "0")
        Z = linear_combination([2.0, -3.0], [X, Y])
        pts = plane.sample(10, seed=0)
        np.testing.assert_allclose(Z(pts), 2 * X(pts) - 3 * Y(pts), atol=1e-15)


class TestFrameMatrix:
    def test_coordinate_frame_is_identity(self, plane):
        fm = frame_matrix(Frame.coordinate(plane), [0.3, -0.7])
        np.testing.assert_array_equal(fm.A, np.eye(2))
        assert not fm.singular

    def test_scaled_frame(self, plane):
        F = Frame((field(plane, "2", "0"), field(plane, "0", "1")), plane)
        fm = frame_matrix(F, [1.0, 1.0])
        np.testing.assert_allclose(fm.A, np.diag([2.0, 1.0]))
        np.testing.assert_allclose(fm.coframe(), np.diag([0.5, 1.0]))

    def test_holt_frame_is_singular(self, systems):
        # the four Hamiltonian fields are pointwise dependent
        fm = frame_matrix(systems["holt"].frame, [0.0, 1.0, 1.0, 1.0])
        assert fm.singular
        assert abs(fm.det) <= 1e-9 * np.linalg.norm(fm.A, 2) ** 4

    def test_wrong_point_dimension(self, plane):
        with pytest.raises(DimensionMismatchError):
            frame_matrix(Frame.coordinate(plane), [1.0, 2.0, 3.0])


class TestDecompose:
    def test_coordinate_frame(self, plane):
        coef = decompose_in_frame(field(plane, "0", "1"), Frame.coordinate(plane), [0.2, 0.1])
        np.testing.assert_allclose(coef, [0.0, 1.0])

    def test_function_coefficients(self, systems):
        s = systems["fdx1"]
        Z = field(s.domain, "x1", "0", "0")
        x = np.array([0.5, 0.7, -0.2])
        coef = decompose_in_frame(Z, s.frame, x)
        np.testing.assert_allclose(coef, [0.5 / (1 + 0.7**2), 0.0, 0.0], rtol=1e-14)

    def test_bracket_of_regular_realization(self, systems):
        s = systems["nilp4"]
        B = lie_bracket(s.frame[2], s.frame[3])
        for x in s.domain.sample(10, seed=3):
            coef = decompose_in_frame(B, s.frame, x)
            np.testing.assert_allclose(coef, [0.0, 432.0, 0.0, 0.0], atol=1e-7)

    def test_singular_frame_refuses(self, systems):
        s = systems["holt"]
        with pytest.raises(SingularFrameError):
            decompose_in_frame(s.frame[0], s.frame, [0.0, 1.0, 0.3, 0.2])


class TestRegularity:
    def test_coordinate_frame(self, plane):
        rep = check_complete_regularity(Frame.coordinate(plane), seed=1)
        assert rep.passed
        assert rep.min_abs_det == pytest.approx(1.0)

    def test_dilation_vanishes_at_origin(self, line):
        rep = check_complete_regularity(Frame((field(line, "x"),), line), seed=1)
        assert not rep.passed
        assert abs(rep.worst_point[0]) <= 1e-6

    def test_holt_is_not_regular(self, systems):
        rep = check_complete_regularity(systems["holt"].frame, seed=1)
        assert not rep.passed
        assert rep.min_ratio < 1e-8

    @pytest.mark.parametrize("name", ["abelian", "fdx1", "triangular", "lie2d", "nilp4"])
    def test_fixture_frames_are_regular(self, systems, name):
        assert check_complete_regularity(systems[name].frame, seed=7).passed

    def test_needs_square_frame(self, plane):
        with pytest.raises(DimensionMismatchError):
            check_complete_regularity(Frame((field(plane, "1", "0"),), plane))

    def test_report_is_deterministic(self, systems):
        F = systems["triangular"].frame
        assert check_complete_regularity(F, seed=3).to_dict() == check_complete_regularity(F, seed=3).to_dict()


def test_positive_constraint_restricts_sampling():
    s = loads_system(
        """
[system]
name = "half"
coords = ["x", "y"]
dynamics = "X1"
x0 = [0.0, 1.0]
[fields]
X1 = ["1", "0"]
X2 = ["0", "y"]
[domain]
positive = ["y - 0.5"]
box = [[-1, 1], [-1, 2]]
"""
    )
    pts = s.domain.sample(50, seed=2)
    assert np.all(pts[:, 1] > 0.5)
    assert check_complete_regularity(s.frame, seed=2).passed
