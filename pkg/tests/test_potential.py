import numpy as np
import pytest

from nlch.errors import ConfigurationError, DomainError
from nlch.potential import make_potential


def test_make_potential_validation():
    with pytest.raises(ConfigurationError):
        make_potential("quartic")
    with pytest.raises(ConfigurationError):
        make_potential("fh", beta=0.0)
    with pytest.raises(ConfigurationError):
        make_potential("fh", barrier_margin=1e-3)
    p = make_potential("FH", beta=5.0)
    assert p.kind == "fh"


def test_gl_values():
    p = make_potential("gl")
    assert p.f(1.0) == 0.0
    assert p.f(0.0) == 0.25
    fc, fe = p.split(1.0)
    assert (fc, fe) == (0.5, 0.5)
    assert p.fc_prime(2.0) == 8.0
    assert p.fe_prime(0.5) == 0.5


def test_fh_values():
    p = make_potential("fh", beta=1.0)
    # 1 - 2 log 2, evaluated independently with math.log and frozen
    assert p.f(0.0) == pytest.approx(-0.3862943611198906, abs=1e-15)
    fc, fe = p.split(0.0)
    assert fc == pytest.approx(-1.3862943611198906, abs=1e-15)
    assert fe == -1.0
    assert fc - fe == pytest.approx(p.f(0.0), abs=1e-13)
    assert p.fc_prime(0.0) == 0.0
    assert p.fc_prime(0.5) == pytest.approx(1.0986122886681098, abs=1e-15)  # log 3
    assert p.fe_prime(-1.0) == -2.0


@pytest.mark.parametrize("kind,beta", [("fh", 1.0), ("fh", 5.0), ("gl", 1.0)])
def test_split_consistent_with_f(kind, beta):
    p = make_potential(kind, beta=beta)
    rho = np.linspace(-0.95, 0.95, 41) if kind == "fh" else np.linspace(-2, 2, 41)
    fc, fe = p.split(rho)
    assert np.max(np.abs((fc - fe) - p.f(rho))) <= 1e-13


@pytest.mark.parametrize("kind,beta", [("fh", 1.0), ("fh", 5.0), ("gl", 1.0)])
def test_derivatives_match_finite_differences(kind, beta):
    p = make_potential(kind, beta=beta)
    rho = np.linspace(-0.9, 0.9, 181) if kind == "fh" else np.linspace(-1.9, 1.9, 181)
    e = 1e-5
    fd = (p.f(rho + e) - p.f(rho - e)) / (2 * e)
    deriv = p.fc_prime(rho) - p.fe_prime(rho)
    assert np.max(np.abs(deriv - fd)) <= 1e-6


@pytest.mark.parametrize("kind", ["fh", "gl"])
def test_convexity_of_split(kind):
    p = make_potential(kind, beta=5.0)
    if kind == "fh":
        rho = np.linspace(-1 + 1e-6, 1 - 1e-6, 1000)
    else:
        rho = np.linspace(-2, 2, 1000)
    assert np.all(np.diff(p.fc_prime(rho)) >= 0)
    assert np.all(np.diff(p.fe_prime(rho)) >= 0)
    fc, fe = p.split(rho)
    assert np.min(np.diff(fc, 2)) >= -1e-10
    assert np.min(np.diff(fe, 2)) >= -1e-10


@pytest.mark.parametrize("kind", ["fh", "gl"])
def test_symmetry(kind):
    p = make_potential(kind, beta=2.0)
    rho = np.linspace(0.01, 0.97, 25)
    assert np.max(np.abs(p.f(rho) - p.f(-rho))) <= 1e-14
    assert np.max(np.abs(p.fc_prime(-rho) + p.fc_prime(rho))) <= 1e-13


def test_fh_barrier_not_regularized_away():
    # The spec states the >10 threshold at beta=5, but Eq-8-style beta^-1
    # scaling makes that value log(2e9)/5 = 4.28; the threshold discriminates
    # at beta=1 and the beta=5 value follows by exact 1/beta scaling.
    p1 = make_potential("fh", beta=1.0)
    b1 = float(p1.fc_prime(1.0 - 1e-9))
    assert b1 > 10.0
    p5 = make_potential("fh", beta=5.0)
    assert float(p5.fc_prime(1.0 - 1e-9)) == pytest.approx(b1 / 5.0, rel=1e-15)


def test_fh_domain_errors_and_clamp():
    p = make_potential("fh", beta=1.0)
    with pytest.raises(DomainError):
        p.f(1.0)
    with pytest.raises(DomainError):
        p.f(np.array([0.0, -1.5]))
    with pytest.raises(DomainError):
        p.split(-1.0)
    # clamped evaluation is finite at and beyond the endpoints
    assert np.isfinite(p.f(1.0, clamp=True))
    assert np.isfinite(p.fc_prime(2.0))
    # clamp pins to the 1 - delta evaluation point
    assert p.fc_prime(2.0) == p.fc_prime(1.0 - p.barrier_margin)


def test_saturation_count():
    p = make_potential("fh", beta=1.0)
    rho = np.array([0.0, 1.0 - 1e-13, -1.0, 0.5])
    assert p.saturation_count(rho) == 2
    assert make_potential("gl").saturation_count(rho) == 0


def test_gl_total_function():
    p = make_potential("gl")
    rho = np.array([-5.0, 5.0])
    assert np.all(np.isfinite(p.f(rho)))
    assert np.all(np.isfinite(p.fc_prime(rho)))
