import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from app.exceptions import DomainError, HypothesisError, OperatorOverflowError
from app.models import SampleSpec
from app.services.symfunc import PSpec, eval_F, in_cone
from app.services.verify import (
    SUITES, SuiteRecorder, cap_radius_for, cone_sample, factor_condition, five_point, graph_sample,
    fd_step, oracle_F, oracle_log_F, relative_margin, run_suite, sphere_cap, suite_growth,
)
from app.services.geometry import graph_jet

SHAPES = [(2, 1), (3, 2), (4, 2), (5, 3)]


class TestOracle:
    def test_reference_values(self, spec32):
        assert oracle_F([3, 2, 1], spec32) == 60.0
        assert oracle_F([2, 3], PSpec(2, 1)) == 6.0

    def test_agrees_with_the_log_domain_path(self):
        spec = PSpec(5, 2)
        lam = np.array([2.5, 1.0, 0.3, -0.1, -0.2])
        assert oracle_F(lam, spec) == pytest.approx(eval_F(lam, spec), rel=1e-13)

    def test_length_check(self, spec32):
        with pytest.raises(ValueError):
            oracle_F([1.0, 2.0], spec32)

    def test_log_form_survives_large_subset_counts(self):
        spec = PSpec(10, 5)
        lam = np.full(10, 30.0)
        with pytest.raises(OperatorOverflowError):
            oracle_F(lam, spec)
        assert oracle_log_F(lam, spec) == pytest.approx(252 * np.log(150.0), rel=1e-14)
        assert oracle_log_F([3, 2, 1], PSpec(3, 2)) == pytest.approx(np.log(60.0), rel=1e-15)


class TestSampling:
    def test_samples_lie_in_the_cone(self):
        ss = SampleSpec(n=5, p=2, count=400, seed=7)
        lam = cone_sample(ss)
        assert lam.shape == (400, 5)
        assert np.all(in_cone(lam, PSpec(5, 2)))

    def test_deterministic(self):
        ss = SampleSpec(n=4, p=2, count=50, seed=3)
        assert_allclose(cone_sample(ss), cone_sample(ss), rtol=0, atol=0)
        assert not np.allclose(cone_sample(ss), cone_sample(ss.model_copy(update={"seed": 4})))

    def test_near_boundary_margin(self):
        ss = SampleSpec(n=4, p=2, count=200, seed=1, near_boundary_fraction=1.0)
        margin = relative_margin(cone_sample(ss), PSpec(4, 2))
        assert np.all(margin > 0)
        assert np.all(margin <= 1e-3 * (1 + 1e-9))
        assert np.all(margin >= 1e-4 * (1 - 1e-9))

    def test_graph_samples_are_admissible(self):
        ss = SampleSpec(n=3, p=2, count=100, seed=2)
        pts = graph_sample(ss)
        assert np.all(in_cone(graph_jet(pts).kappa, PSpec(3, 2)))

    def test_sample_spec_validation(self):
        with pytest.raises(ValidationError):
            SampleSpec(n=3, p=4, count=10)
        with pytest.raises(ValidationError):
            SampleSpec(n=11, p=2, count=10)

    def test_five_point_is_exact_on_quartics(self):
        step = np.array([0.1, 0.2])
        fd = five_point(lambda t: np.stack([t ** 4 + 3 * t, t ** 3 - t], axis=-1), step)
        assert_allclose(fd, [[3.0, -1.0], [3.0, -1.0]], atol=1e-12)

    def test_fd_step(self):
        # 1e-5 * max(1, size), never more than a hundredth of the margin
        assert_allclose(fd_step(np.array([0.5, 4.0, 4.0]), np.array([1.0, 1.0, 1e-4])), [1e-5, 4e-5, 1e-6])

    def test_factor_condition_is_one_for_positive_spectra(self, spec32):
        assert_allclose(factor_condition(np.array([[3.0, 2.0, 1.0]]), spec32), 1.0)


class TestRecorder:
    def test_empty_check_passes(self):
        rec = SuiteRecorder("demo", SampleSpec(n=3, p=2, count=1))
        result = rec.record("nothing", [], np.empty((0, 3)), 1e-12)
        assert result.passed and result.evaluated == 0

    def test_nan_counts_as_a_failure(self):
        rec = SuiteRecorder("demo", SampleSpec(n=3, p=2, count=2))
        result = rec.record("broken", [0.0, np.nan], np.zeros((2, 3)), 1e-12)
        assert not result.passed
        assert result.worst_slack == -np.inf

    def test_worst_check_is_reported(self):
        rec = SuiteRecorder("demo", SampleSpec(n=3, p=2, count=2))
        rec.record("fine", [1.0, 0.5], np.zeros((2, 3)), 0.0)
        rec.record("bad", [-1.0, 0.5], np.arange(6.0).reshape(2, 3), 0.1)
        result = rec.result()
        assert not result.passed
        assert result.worst_check == "bad"
        assert result.worst_sample == [0.0, 1.0, 2.0]


class TestSuites:
    @pytest.mark.parametrize("name", sorted(SUITES))
    @pytest.mark.parametrize("n, p", SHAPES)
    def test_suite_passes(self, name, n, p):
        result = run_suite(name, SampleSpec(n=n, p=p, count=200, seed=11))
        failed = [c.name for c in result.checks if not c.passed]
        assert result.passed, failed
        assert result.checks

    def test_key1_needs_half_the_dimension(self):
        with pytest.raises(HypothesisError):
            run_suite("key1", SampleSpec(n=4, p=1, count=10))

    def test_unknown_suite(self):
        with pytest.raises(ValueError):
            run_suite("nope", SampleSpec(n=3, p=2, count=10))

    def test_results_are_deterministic(self):
        ss = SampleSpec(n=4, p=2, count=100, seed=5)
        first = run_suite("concavity", ss).model_dump(by_alias=True)
        second = run_suite("concavity", ss).model_dump(by_alias=True)
        assert first == second

    def test_tail_positivity_constant(self):
        result = run_suite("dinew", SampleSpec(n=4, p=2, count=100, seed=0))
        assert 0 < result.constants["theta"] <= 1.0

    def test_growth_with_custom_levels(self):
        result = suite_growth(SampleSpec(n=3, p=2, count=50, seed=0), c_values=[5.0, 2.0])
        assert result.passed
        assert {c.name for c in result.checks} >= {"reaches_C=2", "reaches_C=5", "monotone_C=2->5"}

    def test_gradients_at_seven_dimensions(self):
        result = run_suite("gradients", SampleSpec(n=7, p=4, count=1000, seed=3))
        assert result.passed, [(c.name, c.worst_slack) for c in result.checks if not c.passed]

    @pytest.mark.parametrize("name", sorted(SUITES))
    def test_suites_with_huge_products(self, name):
        # m = 252: F itself overflows double precision on most samples
        result = run_suite(name, SampleSpec(n=10, p=5, count=30, seed=2))
        assert result.passed, [c.name for c in result.checks if not c.passed]

    @pytest.mark.slow
    @pytest.mark.parametrize("name", sorted(SUITES))
    def test_large_dimension(self, name):
        result = run_suite(name, SampleSpec(n=10, p=5, count=100, seed=1))
        assert result.passed, [c.name for c in result.checks if not c.passed]

    @pytest.mark.slow
    @pytest.mark.parametrize("p", [3, 4])
    def test_gradients_ten_thousand_samples(self, p):
        result = run_suite("gradients", SampleSpec(n=7, p=p, count=10_000, seed=0))
        assert result.passed, [(c.name, c.worst_slack) for c in result.checks if not c.passed]

    @pytest.mark.slow
    @pytest.mark.parametrize("n, p", [(n, p) for n in range(2, 8) for p in range(1, n + 1)])
    def test_euler_relation_ten_thousand_samples(self, n, p):
        result = run_suite("dinew", SampleSpec(n=n, p=p, count=10_000, seed=0))
        euler = next(c for c in result.checks if c.name == "euler_relation")
        assert euler.passed and euler.evaluated == 10_000
        assert result.passed, [c.name for c in result.checks if not c.passed]

    @pytest.mark.slow
    @pytest.mark.parametrize("n, p", [(2, 1), (3, 2), (4, 2), (4, 3), (5, 3), (6, 3)])
    def test_key1_ten_thousand_samples(self, n, p):
        result = run_suite("key1", SampleSpec(n=n, p=p, count=10_000, seed=0))
        assert result.passed, [(c.name, c.worst_slack) for c in result.checks if not c.passed]


class TestSphereCap:
    def test_values(self):
        cap = sphere_cap(3, 2, 2.0, 0.8)
        assert cap(np.zeros(3)) == pytest.approx(np.sqrt(3.36) - 2.0)
        assert cap(np.array([0.8, 0.0, 0.0])) == pytest.approx(0.0, abs=1e-15)
        assert cap.f == pytest.approx(1.0)

    def test_radius_for_a_constant(self):
        assert cap_radius_for(3, 2, 1.0) == pytest.approx(2.0)
        assert cap_radius_for(2, 1, 4.0) == pytest.approx(0.5)

    def test_derivatives(self):
        cap = sphere_cap(2, 1, 1.0, 0.5)
        x = np.array([0.3, -0.2])
        t = 1e-6
        for k in range(2):
            e = np.eye(2)[k] * t
            assert (cap(x + e) - cap(x - e)) / (2 * t) == pytest.approx(cap.gradient(x)[k], rel=1e-8)
            assert_allclose((cap.gradient(x + e) - cap.gradient(x - e)) / (2 * t), cap.hessian(x)[k], rtol=1e-7)

    def test_needs_a_larger_sphere(self):
        with pytest.raises(DomainError):
            sphere_cap(3, 2, 0.5, 0.8)
