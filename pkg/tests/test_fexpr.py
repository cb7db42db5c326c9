import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.exceptions import ExprDomainError, ExprNameError, ExprSyntaxError
from app.services.fexpr import (
    Const, Env, Neg, Pow, Var, check_hypotheses, constant_value, depends_on_nu, derivative,
    evaluate, is_radial, parse, partials, sample_envs, to_source, variables,
)


def env(x, z=0.0, nu=None):
    x = np.asarray(x, dtype=float)
    if nu is None:
        nu = np.concatenate([np.zeros(x.shape[-1]), [1.0]])
    return Env(x, np.asarray(z, dtype=float), np.asarray(nu, dtype=float))


class TestParse:
    def test_radius_squared(self):
        assert evaluate(parse("1+r2", 3), env([0.3, 0.4, 0.0])) == pytest.approx(1.25)

    def test_precedence(self):
        assert evaluate(parse("1 + 2*3^2", 2), env([0, 0])) == pytest.approx(19.0)
        assert evaluate(parse("2^3^2", 2), env([0, 0])) == pytest.approx(512.0)
        assert evaluate(parse("8/2/2", 2), env([0, 0])) == pytest.approx(2.0)

    def test_unary_minus_binds_tighter_than_power(self):
        assert parse("-x1^2", 2) == Pow(Neg(Var("x", 0)), 2.0)
        assert evaluate(parse("-x1^2", 2), env([2.0, 0.0])) == pytest.approx(4.0)

    def test_unicode_minus(self):
        assert evaluate(parse("3 − 1", 2), env([0, 0])) == pytest.approx(2.0)

    def test_w_is_the_reciprocal_last_normal_component(self):
        assert parse("w", 2) == Pow(Var("nu", 2), -1.0)
        assert evaluate(parse("w", 2), env([0, 0], nu=[0.6, 0.0, 0.8])) == pytest.approx(1.25)

    def test_functions(self):
        value = evaluate(parse("exp(z) + log(x1) + sqrt(x2)", 2), env([np.e, 4.0], z=0.0))
        assert value == pytest.approx(1.0 + 1.0 + 2.0)

    def test_constant_exponent_folding(self):
        assert parse("x1^(1/2)", 2) == Pow(Var("x", 0), 0.5)
        with pytest.raises(ExprSyntaxError):
            parse("x1^z", 2)

    @pytest.mark.parametrize("src, offset", [("1+", 2), ("(1", 2), ("1 $", 2), ("1 − $", 6), ("exp", 0)])
    def test_syntax_errors_carry_byte_offsets(self, src, offset):
        with pytest.raises(ExprSyntaxError) as info:
            parse(src, 2)
        assert info.value.offset == offset

    @pytest.mark.parametrize("src", ["x3", "nu4", "x0", "y", "sin(x1)"])
    def test_name_errors(self, src):
        with pytest.raises(ExprNameError):
            parse(src, 2)

    def test_to_source_reparses_to_the_same_value(self):
        e = parse("-(x1 - 2*z)^3 / (1 + r2) + exp(-nu3)", 2)
        point = env([0.3, -0.2], z=-0.4, nu=[0.1, 0.2, 0.97])
        assert evaluate(parse(to_source(e), 2), point) == pytest.approx(evaluate(e, point), rel=1e-15)


class TestEvaluate:
    def test_vectorized(self):
        x = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
        nu = np.tile([0.0, 0.0, 1.0], (3, 1))
        assert_allclose(evaluate(parse("r2 + z", 2), Env(x, np.array([1.0, 2.0, 3.0]), nu)), [1.0, 4.0, 7.0])

    def test_constant_broadcasts(self):
        x = np.zeros((4, 2))
        nu = np.tile([0.0, 0.0, 1.0], (4, 1))
        assert_allclose(evaluate(parse("2", 2), Env(x, np.zeros(4), nu)), 2.0)

    @pytest.mark.parametrize("src", ["1/x1", "log(x1)", "sqrt(x1 - 1)", "x1^-1", "(x1 - 1)^0.5"])
    def test_domain_errors(self, src):
        with pytest.raises(ExprDomainError):
            evaluate(parse(src, 2), env([0.0, 0.0]))

    def test_inconsistent_env(self):
        with pytest.raises(ValueError):
            Env(np.zeros(2), np.zeros(()), np.zeros(2))


class TestInspection:
    def test_variables(self):
        assert variables(parse("x1 + z*w", 2)) == {("x", 0), ("z", 0), ("nu", 2)}
        assert depends_on_nu(parse("1 + w", 2))
        assert not depends_on_nu(parse("1 + z", 2))

    def test_radial(self):
        assert is_radial(parse("(1 + r2) * exp(z) * w", 3), 3)
        assert not is_radial(parse("1 + x1", 3), 3)
        assert not is_radial(parse("1 + nu1", 3), 3)

    def test_constant_value(self):
        assert constant_value(parse("2^3 - 1", 2)) == pytest.approx(7.0)
        assert constant_value(parse("x1", 2)) is None


class TestDerivative:
    def test_polynomial(self):
        d = derivative(parse("z^3 + 2*z", 2), Var("z"))
        assert evaluate(d, env([0, 0], z=2.0)) == pytest.approx(14.0)

    def test_radius_squared_chain(self):
        d = derivative(parse("r2", 2), Var("x", 1))
        assert evaluate(d, env([0.5, 0.25])) == pytest.approx(0.5)

    def test_reciprocal_normal(self):
        d = derivative(parse("w", 2), Var("nu", 2))
        assert evaluate(d, env([0, 0], nu=[0.0, 0.0, 0.5])) == pytest.approx(-4.0)

    def test_quotient_and_functions(self):
        e = parse("exp(2*z) / (1 + z^2) + log(1 + nu1) + sqrt(1 + z)", 2)
        point = env([0, 0], z=-0.3, nu=[0.2, 0.1, 0.97])
        d = derivative(e, Var("z"))
        t = 1e-6
        fd = (evaluate(e, env([0, 0], z=-0.3 + t, nu=[0.2, 0.1, 0.97]))
              - evaluate(e, env([0, 0], z=-0.3 - t, nu=[0.2, 0.1, 0.97]))) / (2 * t)
        assert evaluate(d, point) == pytest.approx(fd, rel=1e-8)

    def test_independent_variable_folds_to_zero(self):
        assert derivative(parse("x1 * r2", 2), Var("z")) == Const(0.0)

    def test_partials(self):
        dz, dnu = partials(parse("z^2 + nu3 + 3*nu1", 2), 2)
        point = env([0, 0], z=3.0, nu=[0.0, 0.0, 1.0])
        assert evaluate(dz, point) == pytest.approx(6.0)
        assert [evaluate(d, point) for d in dnu] == pytest.approx([3.0, 0.0, 1.0])


class TestHypotheses:
    def _env(self, n=2, u_min=-1.0):
        points = np.random.default_rng(0).uniform(-0.5, 0.5, size=(50, n))
        return sample_envs(points, u_min, 256, seed=1)

    def test_sample_envs(self):
        samples = self._env()
        assert samples.shape == (256,)
        assert np.all(samples.z <= 0) and np.all(samples.z >= -1.0)
        assert_allclose(np.linalg.norm(samples.nu, axis=1), 1.0)
        assert_allclose(samples.nu[0], [0.0, 0.0, 1.0])
        assert np.all(samples.nu[:, -1] >= 1 / np.sqrt(10) - 1e-12)

    def test_sampling_is_deterministic(self):
        assert_allclose(self._env().nu, self._env().nu)

    def test_positive_increasing(self):
        report = check_hypotheses(parse("2 + z", 2), self._env(), p=2)
        assert report.passed
        assert report.min_fz == pytest.approx(1.0)

    def test_non_positive(self):
        report = check_hypotheses(parse("-1", 2), self._env())
        assert not report.passed
        assert "positive" in report.violations[0]

    def test_decreasing_in_z(self):
        report = check_hypotheses(parse("exp(-z)", 2), self._env())
        assert not report.passed
        assert any("f_z" in v for v in report.violations)

    def test_undefined_on_samples(self):
        report = check_hypotheses(parse("log(z)", 2), self._env())
        assert not report.passed

    def test_normal_dependence_with_small_p_warns(self):
        report = check_hypotheses(parse("1 + nu1^2", 3), self._env(n=3), p=1)
        assert report.passed
        assert report.depends_on_nu
        assert report.warnings
