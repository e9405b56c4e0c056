import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from wsawlab.errors import CapabilityError, ConfigError, InvalidMassError
from wsawlab.grassmann import Fields, convolve
from wsawlab.lattice import TorusSpec, green_function
from wsawlab.susy_model import (
    InitialCouplings,
    build_Z0,
    chi_hat_N,
    chi_identity_check,
    circle_product_check,
    covariance,
    is_gaussian,
    polymer_coordinates,
    two_point_susy,
    two_point_susy_matrix,
    z0_builder,
)


# --- walk-side oracles -----------------------------------------------------------
# On one site U = (beta - gamma) T^2. On the 2-torus in d = 1 the walk flips at
# rate 2 and U = beta (a^2 + b^2) - 2 gamma a b for local times (a, b). Summing
# the Erlang densities over jump counts gives Bessel kernels for the law of
# (a, b) integrated against dT.


def one_site_oracle(beta, gamma, nu):
    return integrate.quad(lambda T: math.exp(-nu * T - (beta - gamma) * T * T), 0, math.inf)[0]


def two_site_oracle(beta, gamma, nu):
    U = lambda a, b: beta * (a * a + b * b) - 2 * gamma * a * b

    def f00(s, a):  # b = s^2
        b = s * s
        x = 4 * math.sqrt(a * b)
        return 4 * math.sqrt(a) * math.exp(-(nu + 2) * (a + b) - U(a, b) + x) * special.i1e(x)

    def f01(b, a):
        x = 4 * math.sqrt(a * b)
        return 2 * math.exp(-(nu + 2) * (a + b) - U(a, b) + x) * special.i0e(x)

    g00 = integrate.quad(lambda a: math.exp(-(nu + 2) * a - beta * a * a), 0, math.inf)[0]
    g00 += integrate.dblquad(f00, 0, math.inf, 0, math.inf, epsabs=1e-12, epsrel=1e-11)[0]
    g01 = integrate.dblquad(f01, 0, math.inf, 0, math.inf, epsabs=1e-12, epsrel=1e-11)[0]
    return g00, g01


def test_two_site_oracle_free_limit():
    g00, g01 = two_site_oracle(0.0, 0.0, 0.5)
    exact = green_function(TorusSpec(1, 2), 0.5, method="dense")[0]
    assert (g00, g01) == pytest.approx(tuple(exact), abs=1e-9)


@pytest.mark.parametrize("gamma", [0.0, 0.05, 0.15])
def test_one_site_matches_walk(gamma):
    G = two_point_susy(0.2, gamma, 0.5, TorusSpec(1, 1))
    assert G == pytest.approx(one_site_oracle(0.2, gamma, 0.5), abs=1e-9)
    # frozen from the oracle
    if gamma == 0.0:
        assert G == pytest.approx(1.1625239968482888, abs=1e-9)


@pytest.mark.parametrize("gamma", [-0.05, 0.0, 0.05])
def test_two_site_matches_walk(gamma):
    G = two_point_susy_matrix(0.2, gamma, 0.5, TorusSpec(1, 2))
    assert np.max(np.abs(G.imag)) < 1e-12
    assert tuple(G[0].real) == pytest.approx(two_site_oracle(0.2, gamma, 0.5), abs=1e-7)


FROZEN_TWO_SITE = {
    0.05: (0.7955174059882406, 0.5889813534195132),
    -0.05: (0.7422944780586053, 0.5305118049116911),
}


@pytest.mark.parametrize("gamma", sorted(FROZEN_TWO_SITE))
def test_two_site_frozen(gamma):
    G = two_point_susy_matrix(0.2, gamma, 0.5, TorusSpec(1, 2))
    assert tuple(G[0].real) == pytest.approx(FROZEN_TWO_SITE[gamma], abs=1e-7)


def test_free_case_is_resolvent_on_six_sites():
    spec = TorusSpec(1, 6)
    G = two_point_susy_matrix(0.0, 0.0, 0.5, spec)
    assert np.allclose(G, green_function(spec, 0.5, method="dense"), atol=1e-10)


@pytest.mark.parametrize("z0,m2", [(0.0, 1.0), (-0.2, 0.1), (0.3, 0.5)])
def test_gauge_independence(z0, m2):
    spec = TorusSpec(1, 2)
    ref = two_point_susy_matrix(0.2, 0.05, 0.5, spec)
    G = two_point_susy_matrix(0.2, 0.05, 0.5, spec, z0=z0, m2=m2)
    assert np.allclose(G, ref, atol=1e-7)


def test_chi_hat_identity():
    rep = chi_identity_check(0.2, 0.05, 0.5, TorusSpec(1, 2), splits=((0.0, 1.0), (0.3, 0.5)))
    assert rep.max_residual < 1e-7
    assert rep.rows[0].chi_N == pytest.approx(sum(two_site_oracle(0.2, 0.05, 0.5)), abs=1e-7)


def test_chi_hat_warns_on_bad_step():
    ic = InitialCouplings.from_bare(0.2, 0.05, 0.5, d=1)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        chi_hat_N(ic, TorusSpec(1, 1), step=1e-7, tol=1e-12)
    assert rec


# --- couplings and forms -----------------------------------------------------------


@settings(max_examples=40)
@given(st.floats(0.01, 1), st.floats(-0.9, 0.9), st.floats(-1, 1), st.floats(-0.5, 1), st.floats(0.1, 2),
       st.integers(1, 3))
def test_bare_couplings_round_trip(beta, frac, nu, z0, m2, d):
    gamma = frac * beta
    ic = InitialCouplings.from_bare(beta, gamma, nu, z0, m2, d)
    assert ic.bare() == pytest.approx((beta, gamma, nu), abs=1e-9)
    assert ic.branch == ("+" if gamma >= 0 else "-")


def test_coupling_validation():
    with pytest.raises(InvalidMassError):
        InitialCouplings(0.0, 0.1, 0.0, 0.0, 0.0)
    with pytest.raises(ConfigError):
        InitialCouplings(1.0, 0.1, 0.0, 0.0, -1.0)
    with pytest.raises(ConfigError):
        two_point_susy_matrix(0.1, 0.2, 0.5, TorusSpec(1, 1))


def test_site_limits():
    with pytest.raises(CapabilityError):
        two_point_susy_matrix(0.2, 0.05, 0.5, TorusSpec(1, 4))
    with pytest.raises(CapabilityError):
        two_point_susy_matrix(0.0, 0.0, 0.5, TorusSpec(1, 7))
    assert is_gaussian(InitialCouplings.from_bare(0.0, 0.0, 0.5))


@pytest.mark.parametrize("gamma", [0.05, -0.05])
def test_circle_product_reassembles_Z0(gamma):
    ic = InitialCouplings.from_bare(0.2, gamma, 0.5, z0=0.1, m2=0.5)
    for spec in (TorusSpec(1, 2), TorusSpec(1, 3)):
        rep = circle_product_check(ic, spec, configs=10, seed=1)
        assert rep.passed


def test_polymer_coordinates_empty_set():
    ic = InitialCouplings.from_bare(0.2, 0.05, 0.5)
    f = Fields.external(np.array([[0.3 + 0.2j]]), with_fermions=True)
    pc = polymer_coordinates(ic, TorusSpec(1, 1), f)
    assert pc.I(()).degree0 == 1 and pc.K(()).degree0 == 1


def test_Z0_boson_part_at_zero_field_is_one():
    ic = InitialCouplings.from_bare(0.2, 0.05, 0.5)
    f = Fields.external(np.zeros((2, 1)), with_fermions=True)
    Z = build_Z0(ic, TorusSpec(1, 2), f)
    assert complex(np.asarray(Z.degree0).ravel()[0]) == pytest.approx(1.0)


def test_Z0_is_supersymmetric_under_expectation():
    # E_C Z0 = 1 since Z0 is a function of the tau forms only
    from wsawlab.grassmann import super_expectation

    ic = InitialCouplings.from_bare(0.2, 0.05, 0.5, m2=0.7)
    spec = TorusSpec(1, 2)
    val = super_expectation(covariance(spec, 0.7), z0_builder(ic, spec), 40)
    assert complex(val) == pytest.approx(1.0, abs=1e-9)


def test_convolved_Z0_is_even():
    ic = InitialCouplings.from_bare(0.2, 0.05, 0.5)
    spec = TorusSpec(1, 1)
    ext = Fields.external(np.array([[0.2 + 0.1j]]), with_fermions=True)
    out = convolve(covariance(spec, 1.0), z0_builder(ic, spec), ext, 30)
    assert out.is_even()
