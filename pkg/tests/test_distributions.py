import math

import numpy as np
import pytest
from scipy import integrate

from dcflow import (
    DistributionSpec,
    Family,
    InstabilityError,
    ServerDescriptor,
    TailShape,
    atoms,
    dist_from_json,
    dist_to_json,
    eval_cdf,
    fit_delayed_exponential,
    moments,
    quantile,
    queue_response,
    sample_many,
    server_from_json,
    server_to_json,
    unloaded_mean,
    validate,
)
from dcflow.distributions import cdf_values, draw_count, pdf_values, transform_uniforms
from dcflow.errors import DivergenceError


def de_moments(rate: float, delay: float, alpha: float) -> tuple[float, float]:
    # mean = T + a/r; E[X^2] = T^2 + 2a(T/r + 1/r^2)
    mean = delay + alpha / rate
    second = delay**2 + 2 * alpha * (delay / rate + 1 / rate**2)
    return mean, second - mean**2


def dp_moments(rate: float, delay: float, alpha: float) -> tuple[float, float]:
    # survival a*e^{rT}(1+t)^{-r} integrated in closed form
    c = alpha * math.exp(rate * delay)
    mean = delay + c * (1 + delay) ** (1 - rate) / (rate - 1)
    second = delay**2 + 2 * c * (
        (1 + delay) ** (2 - rate) / (rate - 2) - (1 + delay) ** (1 - rate) / (rate - 1)
    )
    return mean, second - mean**2


def truncation_floor(rate: float, delay: float, alpha: float) -> tuple[float, float]:
    # Integrated moments stop at the survival-1e-10 horizon; the lost
    # Pareto tail beyond t10 bounds the achievable accuracy.
    t10 = (alpha * math.exp(rate * delay) * 1e10) ** (1 / rate)
    lost_mean = 2 * t10 * 1e-10 * rate / (rate - 1)
    lost_second = 3 * t10**2 * 1e-10 * rate / (rate - 2)
    return lost_mean, lost_second


class TestValidate:
    def test_plain_exponential_ok(self):
        assert validate(DistributionSpec.delayed_exp(1.0)) == []

    def test_mixture_weight_sum(self):
        bad = DistributionSpec.mixture(
            [(0.5, DistributionSpec.exponential(1)), (0.6, DistributionSpec.exponential(2))]
        )
        problems = validate(bad)
        assert any("sum 1.1" in p for p in problems)

    def test_pareto_negative_cdf_at_delay(self):
        bad = DistributionSpec.delayed_pareto(0.1, delay=5.0, alpha=1.0)
        problems = validate(bad)
        assert any("CDF negative at delay point" in p for p in problems)

    def test_negative_rate(self):
        assert validate(DistributionSpec.exponential(-1.0))

    def test_alpha_out_of_range(self):
        assert validate(DistributionSpec.delayed_exp(1.0, alpha=1.5))
        assert validate(DistributionSpec.delayed_exp(1.0, alpha=0.0))

    def test_negative_delay(self):
        assert validate(DistributionSpec.delayed_exp(1.0, delay=-0.5))

    def test_negative_weight(self):
        bad = DistributionSpec.mixture(
            [(-0.2, DistributionSpec.exponential(1)), (1.2, DistributionSpec.exponential(2))]
        )
        assert validate(bad)

    def test_nested_mixture_component_reported(self):
        bad = DistributionSpec.mixture([(1.0, DistributionSpec.exponential(-3.0))])
        assert validate(bad)

    def test_table_shape_must_increase(self):
        shape = TailShape.from_table([(0.0, 0.0), (1.0, 2.0), (2.0, 1.0)])
        assert validate(DistributionSpec.delayed_tail(1.0, shape))


class TestCdf:
    def test_exponential_matches_formula(self):
        spec = DistributionSpec.exponential(2.0)
        ts = np.linspace(0, 5, 200)
        np.testing.assert_allclose(cdf_values(spec, ts), 1 - np.exp(-2 * ts), atol=1e-12)

    def test_zero_below_delay(self):
        spec = DistributionSpec.delayed_exp(1.0, delay=2.0, alpha=0.7)
        assert eval_cdf(spec, 1.999) == 0.0
        # the atom makes F jump to 1 - alpha at the delay itself
        assert eval_cdf(spec, 2.0) == pytest.approx(0.3, abs=1e-12)

    def test_monotone_and_limits(self):
        specs = [
            DistributionSpec.delayed_exp(1.5, delay=0.5, alpha=0.8),
            DistributionSpec.delayed_pareto(5.0, delay=0.2, alpha=0.9),
            DistributionSpec.delayed_tail(2.0, TailShape.sqrt(), delay=0.3, alpha=0.9),
            DistributionSpec.mixture(
                [
                    (0.4, DistributionSpec.point_mass(1.0)),
                    (0.6, DistributionSpec.exponential(2.0)),
                ]
            ),
        ]
        for spec in specs:
            ts = np.linspace(0, 50, 2000)
            fs = cdf_values(spec, ts)
            assert np.all(np.diff(fs) >= -1e-15)
            assert fs[0] >= 0.0 and fs[-1] <= 1.0
            assert fs[-1] > 0.99

    def test_point_mass_step(self):
        spec = DistributionSpec.point_mass(3.0)
        assert eval_cdf(spec, 2.999) == 0.0
        assert eval_cdf(spec, 3.0) == 1.0

    def test_pdf_integrates_to_continuous_mass(self):
        spec = DistributionSpec.delayed_exp(1.0, delay=1.0, alpha=0.6)
        total, _ = integrate.quad(lambda t: float(pdf_values(spec, t)), 1.0, 60.0)
        assert total == pytest.approx(0.6, abs=1e-8)


class TestAtoms:
    def test_delayed_exp_atom_is_one_minus_alpha(self):
        spec = DistributionSpec.delayed_exp(2.0, delay=1.0, alpha=0.75)
        ((loc, mass),) = atoms(spec)
        assert loc == 1.0
        assert mass == pytest.approx(0.25, abs=1e-15)

    def test_pareto_atom_shrinks_below_one_minus_alpha(self):
        # log1p(T) < T lifts survival at T above alpha, shrinking the jump
        rate, delay, alpha = 5.0, 0.2, 0.9
        ((loc, mass),) = atoms(DistributionSpec.delayed_pareto(rate, delay=delay, alpha=alpha))
        expect = 1 - alpha * math.exp(-rate * (math.log1p(delay) - delay))
        assert loc == delay
        assert mass == pytest.approx(expect, abs=1e-15)
        assert 0 < mass < 1 - alpha

    def test_zero_delay_alpha_one_has_no_atom(self):
        assert atoms(DistributionSpec.exponential(1.0)) == ()
        assert atoms(DistributionSpec.delayed_pareto(4.0)) == ()

    def test_mixture_merges_coincident_atoms(self):
        spec = DistributionSpec.mixture(
            [
                (0.5, DistributionSpec.point_mass(2.0)),
                (0.5, DistributionSpec.delayed_exp(1.0, delay=2.0, alpha=0.8)),
            ]
        )
        ((loc, mass),) = atoms(spec)
        assert loc == 2.0
        assert mass == pytest.approx(0.5 + 0.5 * 0.2, abs=1e-15)


class TestMoments:
    def test_exponential(self):
        mean, var = moments(DistributionSpec.exponential(4.0))
        assert mean == pytest.approx(0.25, abs=1e-12)
        assert var == pytest.approx(0.0625, abs=1e-12)

    def test_delayed_exp_closed_form(self):
        rate, delay, alpha = 3.0, 0.4, 0.85
        mean, var = moments(DistributionSpec.delayed_exp(rate, delay=delay, alpha=alpha))
        m0, v0 = de_moments(rate, delay, alpha)
        assert mean == pytest.approx(m0, abs=1e-9)
        assert var == pytest.approx(v0, abs=1e-9)

    @pytest.mark.parametrize(
        "rate,delay,alpha",
        [(4.0, 0.0, 1.0), (5.0, 0.0, 1.0), (8.0, 0.1, 0.95), (4.0, 0.35, 0.8)],
    )
    def test_delayed_pareto_closed_form(self, rate, delay, alpha):
        mean, var = moments(DistributionSpec.delayed_pareto(rate, delay=delay, alpha=alpha))
        m0, v0 = dp_moments(rate, delay, alpha)
        lost_m, lost_s = truncation_floor(rate, delay, alpha)
        assert mean == pytest.approx(m0, abs=max(1e-8, 2 * lost_m))
        assert var == pytest.approx(v0, abs=max(1e-8, 2 * lost_s))

    def test_sqrt_tail_against_direct_quadrature(self):
        rate, delay, alpha = 2.0, 0.5, 0.9
        spec = DistributionSpec.delayed_tail(rate, TailShape.sqrt(), delay=delay, alpha=alpha)

        def surv(t):
            return alpha * math.exp(-rate * (math.sqrt(t) - delay))

        head, _ = integrate.quad(surv, delay, 400.0, limit=300)
        mean0 = delay + head
        sec_tail, _ = integrate.quad(lambda t: 2 * t * surv(t), delay, 2000.0, limit=400)
        second0 = delay**2 + sec_tail
        mean, var = moments(spec)
        assert mean == pytest.approx(mean0, abs=1e-7)
        assert var == pytest.approx(second0 - mean0**2, rel=1e-5)

    def test_table_tail_against_direct_quadrature(self):
        shape = TailShape.from_table([(0.0, 0.0), (1.0, 0.5), (3.0, 2.0), (5.0, 4.5)])
        rate, delay, alpha = 1.5, 0.0, 1.0
        spec = DistributionSpec.delayed_tail(rate, shape, delay=delay, alpha=alpha)

        def m(t):
            return float(shape.transform(t))

        mean0, _ = integrate.quad(lambda t: math.exp(-rate * m(t)), 0.0, 80.0, limit=400)
        mean, _ = moments(spec)
        assert mean == pytest.approx(mean0, rel=1e-6)

    def test_mixture_is_weighted(self):
        parts = [(0.3, DistributionSpec.point_mass(2.0)), (0.7, DistributionSpec.exponential(1.0))]
        spec = DistributionSpec.mixture(parts)
        mean, var = moments(spec)
        m0 = 0.3 * 2.0 + 0.7 * 1.0
        second0 = 0.3 * 4.0 + 0.7 * 2.0
        assert mean == pytest.approx(m0, abs=1e-9)
        assert var == pytest.approx(second0 - m0**2, abs=1e-8)

    def test_point_mass(self):
        mean, var = moments(DistributionSpec.point_mass(3.5))
        assert mean == 3.5
        assert var == 0.0

    def test_heavy_pareto_mean_diverges(self):
        with pytest.raises(DivergenceError, match="mean of delayed_pareto"):
            moments(DistributionSpec.delayed_pareto(1.5))

    def test_heavy_pareto_variance_diverges(self):
        with pytest.raises(DivergenceError, match="variance of delayed_pareto"):
            moments(DistributionSpec.delayed_pareto(2.5))


class TestQuantile:
    @pytest.mark.parametrize(
        "spec",
        [
            DistributionSpec.exponential(2.0),
            DistributionSpec.delayed_exp(1.0, delay=0.5, alpha=0.8),
            DistributionSpec.delayed_pareto(5.0, delay=0.2, alpha=0.9),
            DistributionSpec.mixture(
                [
                    (0.5, DistributionSpec.exponential(1.0)),
                    (0.5, DistributionSpec.delayed_exp(2.0, delay=1.0, alpha=0.7)),
                ]
            ),
        ],
    )
    def test_generalized_inverse(self, spec):
        for q in (0.01, 0.1, 0.5, 0.9, 0.99, 0.999999):
            t = quantile(spec, q)
            assert eval_cdf(spec, t) >= q - 1e-9
            if t > 0:
                assert eval_cdf(spec, t * (1 - 1e-9) - 1e-12) <= q + 1e-9

    def test_atom_plateau_maps_to_delay(self):
        spec = DistributionSpec.delayed_exp(1.0, delay=2.0, alpha=0.5)
        # F jumps from 0 to 0.5 at t=2
        assert quantile(spec, 0.2) == 2.0
        assert quantile(spec, 0.5) == 2.0
        assert quantile(spec, 0.500001) > 2.0

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            quantile(DistributionSpec.exponential(1.0), 0.0)
        with pytest.raises(ValueError):
            quantile(DistributionSpec.exponential(1.0), 1.0)


class TestSampling:
    @pytest.mark.parametrize(
        "spec",
        [
            DistributionSpec.exponential(2.0),
            DistributionSpec.delayed_exp(1.0, delay=0.5, alpha=0.8),
            DistributionSpec.delayed_pareto(6.0, delay=0.2, alpha=0.88),
            DistributionSpec.delayed_tail(2.0, TailShape.sqrt(), delay=0.3, alpha=0.9),
        ],
    )
    def test_sample_moments_match(self, spec):
        rng = np.random.default_rng(7)
        xs = sample_many(spec, rng, 200_000)
        mean, var = moments(spec)
        se_mean = math.sqrt(var / xs.size)
        assert abs(xs.mean() - mean) < 4 * se_mean
        assert abs(xs.var() - var) / var < 0.03

    def test_samples_respect_delay(self):
        spec = DistributionSpec.delayed_pareto(6.0, delay=0.2, alpha=0.88)
        rng = np.random.default_rng(1)
        xs = sample_many(spec, rng, 10_000)
        assert xs.min() >= 0.2
        # atom share shows up as exact hits on the delay
        ((_, mass),) = atoms(spec)
        hit = np.mean(xs == 0.2)
        assert abs(hit - mass) < 0.02

    def test_transform_is_pure(self):
        spec = DistributionSpec.mixture(
            [
                (0.5, DistributionSpec.exponential(1.0)),
                (0.5, DistributionSpec.delayed_exp(2.0, delay=1.0, alpha=0.7)),
            ]
        )
        u = np.random.default_rng(3).random((500, draw_count(spec)))
        a = transform_uniforms(spec, u)
        b = transform_uniforms(spec, u)
        np.testing.assert_array_equal(a, b)
        # blocking the rows must not change values
        c = np.concatenate([transform_uniforms(spec, u[:200]), transform_uniforms(spec, u[200:])])
        np.testing.assert_array_equal(a, c)

    def test_mixture_draw_count(self):
        inner = DistributionSpec.mixture(
            [(0.5, DistributionSpec.exponential(1.0)), (0.5, DistributionSpec.exponential(2.0))]
        )
        spec = DistributionSpec.mixture([(0.3, inner), (0.7, DistributionSpec.exponential(3.0))])
        assert draw_count(DistributionSpec.exponential(1.0)) == 1
        assert draw_count(inner) == 2
        assert draw_count(spec) == 3


class TestFit:
    def test_recovers_synthetic_data(self):
        spec = DistributionSpec.delayed_exp(2.5, delay=0.8, alpha=1.0)
        rng = np.random.default_rng(11)
        xs = sample_many(spec, rng, 100_000)
        fitted = fit_delayed_exponential(xs)
        assert fitted.family is Family.DELAYED_EXP
        assert fitted.rate == pytest.approx(2.5, rel=0.02)
        assert fitted.delay == pytest.approx(0.8, abs=0.02)
        assert fitted.alpha == 1.0

    def test_moment_identities_hold_exactly(self):
        xs = [0.5, 1.5, 2.0, 4.0, 0.7]
        fitted = fit_delayed_exponential(xs)
        arr = np.asarray(xs)
        assert 1.0 / fitted.rate == pytest.approx(arr.std(), abs=1e-12)
        assert fitted.delay == pytest.approx(arr.mean() - arr.std(), abs=1e-12)

    def test_negative_delay_clamped(self):
        # variance bigger than mean^2 would want T < 0
        xs = [0.0, 0.0, 0.0, 10.0]
        fitted = fit_delayed_exponential(xs)
        assert fitted.delay == 0.0

    def test_degenerate_sample_is_point_mass(self):
        fitted = fit_delayed_exponential([2.0, 2.0, 2.0])
        assert fitted.family is Family.POINT_MASS
        assert fitted.location == 2.0

    def test_rejects_tiny_or_bad_input(self):
        with pytest.raises(ValueError):
            fit_delayed_exponential([1.0])
        with pytest.raises(ValueError):
            fit_delayed_exponential([1.0, -2.0])
        with pytest.raises(ValueError):
            fit_delayed_exponential([1.0, float("nan")])


class TestServers:
    def test_queue_response_is_residual_exponential(self):
        srv = ServerDescriptor.queue("q1", 5.0)
        spec = queue_response(srv, 3.0)
        assert spec.family is Family.EXPONENTIAL
        assert spec.rate == pytest.approx(2.0, abs=1e-12)

    def test_queue_instability(self):
        srv = ServerDescriptor.queue("q1", 4.0)
        with pytest.raises(InstabilityError, match="arrival rate 4 >= service rate 4"):
            queue_response(srv, 4.0)

    def test_unloaded_mean(self):
        assert unloaded_mean(ServerDescriptor.queue("q", 8.0)) == pytest.approx(0.125)
        srv = ServerDescriptor.explicit("e", DistributionSpec.delayed_exp(2.0, delay=0.5))
        assert unloaded_mean(srv) == pytest.approx(1.0, abs=1e-9)

    def test_server_json_round_trip(self):
        q = ServerDescriptor.queue("q1", 6.0)
        e = ServerDescriptor.explicit("e1", DistributionSpec.delayed_pareto(5.0, 0.2, 0.9))
        assert server_from_json(server_to_json(q)) == q
        assert server_from_json(server_to_json(e)) == e

    def test_server_json_rejects_both_kinds(self):
        with pytest.raises(ValueError, match="exactly one"):
            server_from_json({"id": "x", "service_rate": 2.0, "dist": {"family": "exponential", "rate": 1.0}})


class TestJson:
    @pytest.mark.parametrize(
        "spec",
        [
            DistributionSpec.exponential(3.0),
            DistributionSpec.delayed_exp(2.0, delay=0.5, alpha=0.9),
            DistributionSpec.delayed_pareto(5.0, delay=0.1, alpha=0.95),
            DistributionSpec.delayed_tail(2.0, TailShape.sqrt(), delay=0.2, alpha=0.8),
            DistributionSpec.delayed_tail(
                1.0, TailShape.from_table([(0.0, 0.0), (1.0, 0.4), (2.0, 1.5)])
            ),
            DistributionSpec.point_mass(1.25),
            DistributionSpec.mixture(
                [
                    (0.25, DistributionSpec.point_mass(1.0)),
                    (0.75, DistributionSpec.delayed_exp(2.0, delay=0.3, alpha=0.7)),
                ]
            ),
        ],
    )
    def test_round_trip(self, spec):
        assert dist_from_json(dist_to_json(spec)) == spec

    def test_exponential_rejects_extra_keys(self):
        with pytest.raises(ValueError):
            dist_from_json({"family": "exponential", "rate": 1.0, "delay": 0.5})

    def test_unknown_family(self):
        with pytest.raises(ValueError, match="family"):
            dist_from_json({"family": "weibull", "rate": 1.0})


class TestTailShape:
    def test_catalog_transforms(self):
        ts = np.array([0.0, 1.0, 4.0])
        np.testing.assert_allclose(TailShape.identity().transform(ts), ts)
        np.testing.assert_allclose(TailShape.log1p().transform(ts), np.log1p(ts))
        np.testing.assert_allclose(TailShape.sqrt().transform(ts), np.sqrt(ts))

    def test_inverse_round_trip(self):
        for shape in (TailShape.identity(), TailShape.log1p(), TailShape.sqrt()):
            ts = np.linspace(0.01, 30, 50)
            np.testing.assert_allclose(shape.inverse(shape.transform(ts)), ts, rtol=1e-10)

    def test_table_interpolates_and_extrapolates(self):
        shape = TailShape.from_table([(0.0, 0.0), (2.0, 1.0), (4.0, 4.0)])
        assert float(shape.transform(1.0)) == pytest.approx(0.5)
        assert float(shape.transform(3.0)) == pytest.approx(2.5)
        # beyond the last knot the last segment continues linearly
        assert float(shape.transform(6.0)) == pytest.approx(7.0)
        assert float(shape.inverse(7.0)) == pytest.approx(6.0)
