import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funmix.basis import (
    basis_from_config,
    build_bspline_basis,
    build_tensor_basis,
    evaluate,
    first_order_penalty,
    gram_matrix,
    penalty_matrix,
)
from funmix.errors import DomainError, InvalidKnotError, UnsupportedDimensionError


def cox_de_boor(knots, degree, i, t):
    """Textbook recursion, right-closed on the last span."""
    if degree == 0:
        last = t == knots[-1] and knots[i] < knots[i + 1] and knots[i + 1] == knots[-1]
        return 1.0 if (knots[i] <= t < knots[i + 1]) or last else 0.0
    out = 0.0
    d1 = knots[i + degree] - knots[i]
    if d1 > 0:
        out += (t - knots[i]) / d1 * cox_de_boor(knots, degree - 1, i, t)
    d2 = knots[i + degree + 1] - knots[i + 1]
    if d2 > 0:
        out += (knots[i + degree + 1] - t) / d2 * cox_de_boor(knots, degree - 1, i + 1, t)
    return out


class TestBuildBasis:
    def test_cubic_four_knots_has_eight_functions(self):
        assert build_bspline_basis(3, 4).n_basis == 8

    def test_degree_zero_single_function_is_constant(self):
        b = build_bspline_basis(0, ())
        assert b.n_basis == 1
        np.testing.assert_array_equal(evaluate(b, np.linspace(0, 1, 11)), np.ones((1, 11)))

    def test_quadratic_one_knot_hand_recursion(self):
        b = build_bspline_basis(2, [0.5])
        assert b.n_basis == 4
        # hand Cox-de Boor on knots (0,0,0,.5,1,1,1)
        np.testing.assert_allclose(evaluate(b, [0.5])[:, 0], [0.0, 0.5, 0.5, 0.0], atol=1e-15)
        np.testing.assert_allclose(evaluate(b, [0.25])[:, 0], [0.25, 0.625, 0.125, 0.0], atol=1e-15)

    @pytest.mark.parametrize("knots", [[0.5, 0.2], [0.0, 0.5], [0.5, 1.0], [0.3, 0.3], [1.5]])
    def test_bad_knots_raise(self, knots):
        with pytest.raises(InvalidKnotError):
            build_bspline_basis(3, knots)

    def test_negative_degree_raises(self):
        with pytest.raises(InvalidKnotError):
            build_bspline_basis(-1, 2)

    def test_config_round_trip(self):
        b = build_bspline_basis(2, [0.2, 0.7], (0.0, 2.0))
        assert basis_from_config(b.to_dict()) == b
        assert basis_from_config({"degree": 3, "interior_knots": 4}) == build_bspline_basis(3, 4)


class TestEvaluate:
    def test_partition_of_unity_on_grid(self):
        S = evaluate(build_bspline_basis(3, 4), np.linspace(0, 1, 100))
        assert S.shape == (8, 100)
        assert np.max(np.abs(S.sum(axis=0) - 1.0)) < 1e-12

    def test_left_endpoint_is_first_function(self):
        S = evaluate(build_bspline_basis(3, 4), [0.0])
        np.testing.assert_array_equal(S[:, 0], np.eye(8)[0])

    def test_right_endpoint_is_last_function(self):
        S = evaluate(build_bspline_basis(3, 4), [1.0])
        np.testing.assert_allclose(S[:, 0], np.eye(8)[-1], atol=1e-15)

    def test_against_recursion_oracle(self):
        b = build_bspline_basis(2, [0.5])
        knots = b.factors[0].knot_vector
        for t in (0.0, 0.1, 0.25, 0.49, 0.5, 0.77, 1.0):
            expect = [cox_de_boor(knots, 2, i, t) for i in range(4)]
            np.testing.assert_allclose(evaluate(b, [t])[:, 0], expect, atol=1e-14)

    def test_cubic_against_recursion_oracle_random_points(self):
        b = build_bspline_basis(3, [0.1, 0.35, 0.4, 0.8])
        knots = b.factors[0].knot_vector
        rng = np.random.default_rng(3)
        for t in rng.random(25):
            expect = [cox_de_boor(knots, 3, i, t) for i in range(b.n_basis)]
            np.testing.assert_allclose(evaluate(b, [t])[:, 0], expect, atol=1e-13)

    def test_outside_domain_raises(self):
        with pytest.raises(DomainError):
            evaluate(build_bspline_basis(3, 4), [1.2])

    def test_local_support(self):
        b = build_bspline_basis(3, 4)
        knots = b.factors[0].knot_vector
        t = np.linspace(0, 1, 1001)
        S = evaluate(b, t)
        for p in range(b.n_basis):
            outside = (t < knots[p]) | (t > knots[p + 4])
            assert np.all(S[p, outside] == 0)
            assert np.all(S[p] >= 0)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40), st.integers(0, 4), st.integers(0, 6))
    def test_partition_of_unity_property(self, ts, degree, n_knots):
        S = evaluate(build_bspline_basis(degree, n_knots), np.array(ts))
        assert np.all(np.abs(S.sum(axis=0) - 1.0) < 1e-12)

    def test_thousand_random_points(self):
        S = evaluate(build_bspline_basis(3, 4), np.random.default_rng(0).random(1000))
        assert np.max(np.abs(S.sum(axis=0) - 1.0)) < 1e-12


class TestTensor:
    def test_three_quadratic_factors_count(self):
        b = build_tensor_basis([build_bspline_basis(2, 3), build_bspline_basis(2, 3), build_bspline_basis(2, 2)])
        assert b.n_basis == 180

    def test_two_constant_factors(self):
        b = build_tensor_basis([build_bspline_basis(0), build_bspline_basis(0)])
        assert b.n_basis == 1
        np.testing.assert_array_equal(evaluate(b, np.random.default_rng(1).random((5, 2))), np.ones((1, 5)))

    def test_product_of_factor_evaluations(self):
        b1, b2 = build_bspline_basis(2, 2), build_bspline_basis(2, [0.3])
        b = build_tensor_basis([b1, b2])
        pt = np.array([0.37, 0.81])
        expect = np.kron(evaluate(b1, [pt[0]])[:, 0], evaluate(b2, [pt[1]])[:, 0])
        np.testing.assert_allclose(evaluate(b, pt[None, :])[:, 0], expect, rtol=0, atol=1e-15)

    def test_five_dimensions_unsupported(self):
        with pytest.raises(UnsupportedDimensionError):
            build_tensor_basis([build_bspline_basis(1)] * 5)

    def test_tensor_penalty_is_psd_and_kills_constants(self):
        b = build_tensor_basis([build_bspline_basis(2, 1), build_bspline_basis(1, 2)])
        Pm = penalty_matrix(b)
        assert np.min(np.linalg.eigvalsh(Pm)) > -1e-12
        np.testing.assert_allclose(Pm @ np.ones(b.n_basis), 0.0, atol=1e-12)


class TestPenalty:
    def test_three_by_three(self):
        np.testing.assert_array_equal(penalty_matrix(build_bspline_basis(2)), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])

    def test_constant_in_null_space(self):
        Pm = first_order_penalty(8)
        assert np.ones(8) @ Pm @ np.ones(8) == 0

    def test_hand_value(self):
        v = np.array([1.0, 2.0, 4.0])
        assert v @ first_order_penalty(3) @ v == 5.0

    def test_structure(self):
        Pm = first_order_penalty(8)
        np.testing.assert_array_equal(Pm, Pm.T)
        np.testing.assert_array_equal(Pm.sum(axis=1), 0)
        assert np.linalg.matrix_rank(Pm) == 7
        np.testing.assert_array_equal(np.diag(Pm), [1, 2, 2, 2, 2, 2, 2, 1])

    def test_identity_on_random_vectors(self):
        rng = np.random.default_rng(5)
        Pm = first_order_penalty(8)
        for _ in range(100):
            v = rng.standard_normal(8)
            direct = np.sum(np.diff(v) ** 2)
            assert abs(v @ Pm @ v - direct) <= 1e-12 * direct


class TestGram:
    def test_constant_basis(self):
        np.testing.assert_allclose(gram_matrix(build_bspline_basis(0)), [[1.0]], rtol=1e-15)

    def test_exactly_symmetric(self):
        G = gram_matrix(build_bspline_basis(3, 4))
        assert np.max(np.abs(G - G.T)) == 0.0

    def test_positive_definite(self):
        assert np.min(np.linalg.eigvalsh(gram_matrix(build_bspline_basis(3, 4)))) > 0

    def test_dense_midpoint_oracle(self):
        b = build_bspline_basis(3, 4)
        n = 1_000_000
        G = np.zeros((8, 8))
        for chunk in np.array_split((np.arange(n) + 0.5) / n, 10):
            S = evaluate(b, chunk)
            G += S @ S.T
        G /= n
        assert np.max(np.abs(G - gram_matrix(b))) < 1e-8
