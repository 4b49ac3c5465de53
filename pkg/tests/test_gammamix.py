import numpy as np
import pytest
from scipy.stats import gamma as scipy_gamma

from ptpkit.errors import ConfigError, SingularityError
from ptpkit.gammamix import (
    GammaComponent,
    GammaMixture,
    gamma_pdf,
    mixture_logpdf,
    moment_match_init,
    shifted_mixture_pdf,
)


def test_pdf_at_origin_exponential():
    # exponential density is 1/b at the origin
    assert gamma_pdf(0.0, GammaComponent(1.0, 2.0)) == pytest.approx(0.5)


def test_pdf_hand_value():
    # w=2, a=2, b=1: Gamma(2)=1, density = w * exp(-w)
    expected = 2.0 * np.exp(-2.0)
    assert gamma_pdf(2.0, GammaComponent(2.0, 1.0)) == pytest.approx(
        expected, rel=1e-12
    )


def test_pdf_negative_support():
    assert gamma_pdf(-1.0, GammaComponent(0.5, 1.0)) == 0.0
    assert gamma_pdf(-1e-12, GammaComponent(3.0, 2.0)) == 0.0


def test_pdf_origin_cases():
    assert gamma_pdf(0.0, GammaComponent(1.5, 1.0)) == 0.0
    with pytest.raises(SingularityError):
        gamma_pdf(0.0, GammaComponent(0.5, 1.0))


def test_component_validation():
    with pytest.raises(ConfigError):
        GammaComponent(0.0, 1.0)
    with pytest.raises(ConfigError):
        GammaComponent(1.0, -2.0)


def test_mixture_validation():
    c = (GammaComponent(1.0, 1.0), GammaComponent(2.0, 1.0))
    with pytest.raises(ConfigError):
        GammaMixture(np.array([0.7, 0.7]), c)
    with pytest.raises(ConfigError):
        GammaMixture(np.array([1.0]), c)
    with pytest.raises(ConfigError):
        GammaMixture(np.array([]), ())


def test_shifted_single_exponential():
    mix = GammaMixture(np.array([1.0]), (GammaComponent(1.0, 1.0),))
    assert shifted_mixture_pdf(3.0, mix, shift=3.0) == pytest.approx(1.0)


def test_mixture_collapse():
    c = GammaComponent(2.3, 0.7)
    single = GammaMixture(np.array([1.0]), (c,))
    double = GammaMixture(np.array([0.5, 0.5]), (c, c))
    for x in (0.1, 0.9, 2.7, 11.0):
        assert shifted_mixture_pdf(x, double) == pytest.approx(
            float(shifted_mixture_pdf(x, single)), rel=1e-12
        )


def test_two_component_value_against_reference():
    # reference evaluation with scipy.stats.gamma
    mix = GammaMixture(
        np.array([0.3, 0.7]),
        (GammaComponent(1.0, 1.0), GammaComponent(2.0, 0.5)),
    )
    expected = 0.3 * scipy_gamma.pdf(1.0, 1.0, scale=1.0) + 0.7 * scipy_gamma.pdf(
        1.0, 2.0, scale=0.5
    )
    assert shifted_mixture_pdf(1.0, mix) == pytest.approx(expected, rel=1e-12)


def test_log_pdf_consistency():
    rng = np.random.default_rng(7)
    for _ in range(20):
        m = rng.integers(1, 4)
        w = rng.dirichlet(np.ones(m))
        comps = tuple(
            GammaComponent(rng.uniform(0.5, 5), rng.uniform(0.1, 3))
            for _ in range(m)
        )
        mix = GammaMixture(w, comps)
        x = rng.uniform(0.01, 10, size=13)
        pdf = shifted_mixture_pdf(x, mix)
        keep = pdf > 1e-300
        assert np.allclose(
            np.exp(mixture_logpdf(x, mix))[keep], pdf[keep], rtol=1e-12
        )


def test_normalization_by_quadrature():
    rng = np.random.default_rng(21)
    for _ in range(10):
        m = rng.integers(1, 4)
        w = rng.dirichlet(np.ones(m))
        comps = tuple(
            GammaComponent(rng.uniform(0.8, 6), rng.uniform(0.2, 2))
            for _ in range(m)
        )
        mix = GammaMixture(w, comps)
        hi = mix.mean() + 12 * max(c.a * c.b for c in comps)
        grid = np.linspace(0, hi, 200_001)
        total = np.trapezoid(shifted_mixture_pdf(grid, mix), grid)
        assert 0.999 <= total <= 1.0001


def test_moment_match_single():
    mix = moment_match_init(2.0, 4.0, 1)
    assert mix.shapes[0] == pytest.approx(1.0)
    assert mix.scales[0] == pytest.approx(2.0)
    mix = moment_match_init(3.0, 3.0, 1)
    assert mix.shapes[0] == pytest.approx(3.0)
    assert mix.scales[0] == pytest.approx(1.0)


def test_moment_match_exact_moments():
    for mean, var in ((0.7, 0.09), (2.0, 4.0), (13.0, 0.5)):
        mix = moment_match_init(mean, var, 1)
        assert mix.mean() == pytest.approx(mean, rel=1e-12)
        assert mix.variance() == pytest.approx(var, rel=1e-12)


def test_moment_match_jitter_preserves_mean():
    mix = moment_match_init(2.0, 4.0, 2, jitter=0.1)
    assert np.allclose(mix.weights, [0.5, 0.5])
    assert mix.mean() == pytest.approx(2.0, abs=1e-15)
    # scales actually differ so EM can tell the components apart
    assert mix.scales[0] != mix.scales[1]


def test_moment_match_errors():
    with pytest.raises(ConfigError):
        moment_match_init(0.0, 1.0, 1)
    with pytest.raises(ConfigError):
        moment_match_init(1.0, -1.0, 1)
    with pytest.raises(ConfigError):
        moment_match_init(1.0, 1.0, 0)


def test_serialization_round_trip():
    mix = moment_match_init(2.0, 4.0, 3, jitter=0.2)
    back = GammaMixture.from_dict(mix.to_dict())
    assert np.allclose(back.weights, mix.weights)
    assert np.allclose(back.shapes, mix.shapes)
    assert np.allclose(back.scales, mix.scales)
