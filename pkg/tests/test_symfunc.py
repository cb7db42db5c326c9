import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.exceptions import GrowthHypothesisError, NotInConeError, OperatorOverflowError
from app.services.symfunc import (
    PSpec, eval_F, eval_Ft, grad_diag, growth_radii, growth_radius, hess_blocks, in_cone, log_F,
    matrix_jet, min_p_sum, operator_jet, scaled_jet, spectral_decomposition, subset_sums, tilde_jet,
)


class TestPSpec:
    def test_subset_tables(self, spec32):
        assert spec32.m == 3
        assert spec32.membership.shape == (3, 3)
        assert_allclose(spec32.membership.sum(axis=1), 2)
        assert not spec32.membership.flags.writeable

    @pytest.mark.parametrize("n, p", [(1, 1), (11, 2), (3, 0), (3, 4)])
    def test_rejects_bad_dimensions(self, n, p):
        with pytest.raises(ValueError):
            PSpec(n, p)

    def test_equal_specs_compare_equal(self):
        assert PSpec(4, 2) == PSpec(4, 2)


class TestValues:
    def test_reference_point(self, spec32):
        assert eval_F([3, 2, 1], spec32) == pytest.approx(60.0, rel=1e-14)
        assert eval_Ft([3, 2, 1], spec32) == pytest.approx(60.0 ** (1 / 3), rel=1e-14)

    def test_symmetric_point(self, spec32):
        assert eval_F([1, 1, 1], spec32) == pytest.approx(8.0)
        assert eval_Ft([1, 1, 1], spec32) == pytest.approx(2.0)

    def test_p_equals_one_is_the_product(self):
        assert eval_F([2, 3], PSpec(2, 1)) == pytest.approx(6.0)

    def test_p_equals_n_is_the_trace(self):
        assert eval_F([5, -1, 0.5], PSpec(3, 3)) == pytest.approx(4.5)

    def test_outside_the_cone_keeps_the_sign(self, spec32):
        assert eval_F([1, 0, -1], spec32) == pytest.approx(0.0)
        assert eval_F([2, -1, -2], spec32) == pytest.approx(1 * 0 * -3)
        assert eval_F([3, -1, -1.5], spec32) == pytest.approx(2 * 1.5 * -2.5)

    def test_batched_matches_single(self, spec32):
        lam = np.array([[3, 2, 1], [1, 1, 1], [4, 1, -0.2]], dtype=float)
        batch = eval_F(lam, spec32)
        assert batch.shape == (3,)
        assert_allclose(batch, [eval_F(row, spec32) for row in lam])

    def test_subset_sums(self, spec32):
        assert_allclose(sorted(subset_sums([3, 2, 1], spec32)), [3, 4, 5])
        assert min_p_sum([3, 2, 1], spec32) == pytest.approx(3.0)

    def test_Ft_requires_the_cone(self, spec32):
        with pytest.raises(NotInConeError) as info:
            eval_Ft([1, -1, -1], spec32)
        assert info.value.margin < 0


class TestCone:
    def test_membership(self, spec32):
        assert in_cone([3, 2, 1], spec32)
        assert in_cone([4, 1, -0.2], spec32)
        assert not in_cone([1, 1, -1], spec32)

    def test_explicit_margin(self, spec32):
        assert not in_cone([1, 1, 1], spec32, margin=2.5)
        with pytest.raises(ValueError):
            in_cone([1, 1, 1], spec32, margin=-1.0)


class TestDerivatives:
    def test_gradient_at_reference_point(self, spec32):
        assert_allclose(grad_diag([3, 2, 1], spec32), [27, 32, 35], rtol=1e-13)

    def test_second_derivative_blocks(self, spec32):
        hess_diag, hess_off = hess_blocks([3, 2, 1], spec32)
        assert hess_diag[0, 1] == pytest.approx(12.0)
        assert hess_diag[0, 0] == pytest.approx(6.0)
        assert hess_off[0, 1] == pytest.approx(-5.0)
        assert_allclose(hess_diag, hess_diag.T)

    def test_off_block_is_a_divided_difference(self):
        spec = PSpec(5, 3)
        lam = np.array([2.0, 1.3, 0.7, 0.4, -0.1])
        jet = operator_jet(lam, spec)
        for k in range(5):
            for r in range(5):
                if k != r:
                    expected = (jet.grad_diag[k] - jet.grad_diag[r]) / (lam[k] - lam[r])
                    assert jet.hess_off[k, r] == pytest.approx(expected, rel=1e-10)

    def test_euler_relation(self, spec32):
        lam = np.array([3.0, 2.0, 1.0])
        assert grad_diag(lam, spec32) @ lam == pytest.approx(3 * 60.0)

    def test_tilde_chain_rule(self):
        spec = PSpec(4, 2)
        lam = np.array([1.5, 1.0, 0.3, -0.1])
        jet = operator_jet(lam, spec)
        tj = tilde_jet(lam, spec)
        m = spec.m
        F = jet.value_F
        expected_grad = F ** (1 / m - 1) / m * jet.grad_diag
        expected_hess = (
            (1 / m) * (1 / m - 1) * F ** (1 / m - 2) * np.outer(jet.grad_diag, jet.grad_diag)
            + (1 / m) * F ** (1 / m - 1) * jet.hess_diag
        )
        assert_allclose(tj.grad_diag, expected_grad, rtol=1e-12)
        assert_allclose(tj.hess_diag, expected_hess, rtol=1e-10, atol=1e-12)
        assert tj.tilde and not jet.tilde

    def test_symmetric_point_gradient_of_Ft(self, spec32):
        assert_allclose(tilde_jet([1, 1, 1], spec32).grad_diag, [2 / 3] * 3)

    def test_finite_differences_interior(self, spec32):
        lam = np.array([1.2, 0.5, 0.9])
        step = 1e-6
        for k in range(3):
            e = np.eye(3)[k] * step
            fd = (eval_F(lam + e, spec32) - eval_F(lam - e, spec32)) / (2 * step)
            assert fd == pytest.approx(grad_diag(lam, spec32)[k], rel=1e-7)

    def test_largest_entry_identity_from_the_proof(self, spec32):
        # F^ii / l1 = ((l1 - li)/l1)(-F^{1i,i1}) + F^11 / l1 at (3, 2, 1), i = 2
        jet = operator_jet([3, 2, 1], spec32)
        lhs = jet.grad_diag[1] / 3
        rhs = (3 - 2) / 3 * -jet.hess_off[0, 1] + jet.grad_diag[0] / 3
        assert lhs == pytest.approx(32 / 3)
        assert rhs == pytest.approx(32 / 3)

    def test_key_bound_example(self, spec32):
        jet = operator_jet([4, 1, -0.2], spec32)
        assert jet.value_F == pytest.approx(15.2)
        assert jet.grad_diag[2] == pytest.approx(23.0)
        assert 2 ** 2 * jet.grad_diag[2] >= 4


class TestScaledJet:
    def test_matches_the_operator_jet(self):
        spec = PSpec(5, 3)
        lam = np.array([[2.0, 1.3, 0.7, 0.4, -0.1], [1.0, 1.0, 1.0, 1.0, 1.0]])
        jet = operator_jet(lam, spec)
        sj = scaled_jet(lam, spec)
        F = jet.value_F
        assert_allclose(sj.log_F, np.log(F), rtol=1e-14)
        assert_allclose(sj.value_Ft, jet.value_Ft, rtol=1e-14)
        assert_allclose(sj.grad_diag, jet.grad_diag / F[:, None], rtol=1e-13)
        assert_allclose(sj.hess_diag, jet.hess_diag / F[:, None, None], rtol=1e-12, atol=1e-14)
        assert_allclose(sj.hess_off, jet.hess_off / F[:, None, None], rtol=1e-12, atol=1e-14)

    def test_log_F(self, spec32):
        assert log_F([3, 2, 1], spec32) == pytest.approx(math.log(60.0))
        assert log_F([1, 1, -1], spec32) == -math.inf
        with pytest.raises(NotInConeError):
            log_F([1, -1, -1], spec32)

    def test_large_subset_count_stays_finite(self):
        spec = PSpec(10, 5)
        lam = np.full(10, 30.0)
        # 150^252 is far beyond double precision
        with pytest.raises(OperatorOverflowError):
            operator_jet(lam, spec)
        sj = scaled_jet(lam, spec)
        assert sj.log_F == pytest.approx(252 * math.log(150.0))
        assert sj.value_Ft == pytest.approx(150.0)
        # Euler relation: sum_k lambda_k F^kk / F = m
        assert sj.grad_diag @ lam == pytest.approx(252.0)

    def test_growth_radius_with_large_subset_count(self):
        spec = PSpec(10, 5)
        lam = np.full(10, 30.0)
        assert growth_radius(1e300, lam, spec) == 0.0


class TestMatrixJet:
    def test_diagonal_matrix(self, spec32):
        mj = matrix_jet(np.diag([3.0, 2.0, 1.0]), spec32)
        assert mj.value == pytest.approx(60 ** (1 / 3))
        assert_allclose(mj.eigvals, [3, 2, 1])
        assert_allclose(mj.dA, np.diag(tilde_jet([3, 2, 1], spec32).grad_diag), atol=1e-14)

    def test_rotation_invariance(self, spec32):
        rng = np.random.default_rng(3)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        A = np.diag([2.0, 0.7, 0.1])
        rotated = matrix_jet(q @ A @ q.T, spec32)
        assert rotated.value == pytest.approx(matrix_jet(A, spec32).value, rel=1e-13)
        assert_allclose(rotated.dA, q @ matrix_jet(A, spec32).dA @ q.T, atol=1e-13)

    def test_eigenvalues_descending(self):
        values, vectors = spectral_decomposition(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert_allclose(values, [3.0, -1.0])
        assert_allclose(np.abs(vectors[:, 0]), [2 ** -0.5] * 2)

    def test_rejects_nonsymmetric(self, spec32):
        with pytest.raises(ValueError):
            matrix_jet(np.array([[1.0, 2.0, 0], [0.0, 1.0, 0], [0, 0, 1.0]]), spec32)


class TestGrowth:
    def test_closed_form(self, spec32):
        # F(1, 1, 1 + R) = 2 (2 + R)^2
        assert growth_radius(100.0, [1, 1, 1], spec32) == pytest.approx(math.sqrt(50) - 2, abs=1e-8)

    def test_already_large_enough(self, spec32):
        assert growth_radius(5.0, [1, 1, 1], spec32) == 0.0

    def test_monotone_in_C(self, spec32):
        lam = np.array([[1.0, 0.5, -0.2], [2.0, 2.0, 0.1]])
        small = growth_radii(10.0, lam, spec32)
        large = growth_radii(20.0, lam, spec32)
        assert np.all(large >= small)

    def test_starts_inside_the_cone(self, spec32):
        # pair sums with the last index are negative until R >= 3
        lam = np.array([2.0, 2.0, -5.0])
        R = growth_radius(1.0, lam, spec32)
        assert R >= 3.0
        assert eval_F(lam + np.array([0, 0, R]), spec32) >= 1.0 - 1e-8

    def test_hypothesis_on_the_first_entries(self, spec32):
        with pytest.raises(GrowthHypothesisError):
            growth_radius(1.0, [1.0, -2.0, 5.0], spec32)

    def test_single_spectrum_only(self, spec32):
        with pytest.raises(ValueError):
            growth_radius(1.0, np.ones((2, 3)), spec32)
