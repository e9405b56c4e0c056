import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsawlab.errors import CapabilityError, ConfigError
from wsawlab.grassmann import (
    MAX_SITES,
    Algebra,
    CovarianceMatrix,
    Fields,
    GeneratorIndex,
    GrassmannForm,
    QuadratureScheme,
    apply_function,
    apply_smooth_function,
    berezin_top,
    convolution_property_check,
    convolve,
    exp_form,
    quadrature_convergence,
    super_expectation,
    super_expectation_mc,
    wedge,
    wedge_sign,
)

ALG = Algebra.for_sites(3)
masks = st.integers(0, ALG.full)
coefs = st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False)
forms = st.dictionaries(masks, coefs, max_size=6).map(
    lambda d: GrassmannForm(ALG, {m: np.asarray(v) for m, v in d.items()}))


def _close(F, G, tol=1e-9):
    keys = set(F.terms) | set(G.terms)
    return all(np.all(np.abs(np.asarray(F.terms.get(k, 0)) - np.asarray(G.terms.get(k, 0))) < tol) for k in keys)


def _parity(F, odd):
    return GrassmannForm(F.algebra, {m: v for m, v in F.terms.items() if bin(m).count("1") % 2 == odd})


@settings(max_examples=60)
@given(forms, forms, forms)
def test_wedge_is_associative(F, G, H):
    assert _close(wedge(wedge(F, G), H), wedge(F, wedge(G, H)), 1e-8)


@settings(max_examples=60)
@given(forms, forms)
def test_graded_commutativity(F, G):
    Fe, Fo, Ge, Go = _parity(F, 0), _parity(F, 1), _parity(G, 0), _parity(G, 1)
    assert _close(wedge(Fe, G), wedge(G, Fe))
    assert _close(wedge(Fo, Go), -wedge(Go, Fo))
    assert _close(wedge(Fo, Ge), wedge(Ge, Fo))


@given(forms, forms)
def test_wedge_distributes(F, G):
    H = GrassmannForm.generator(ALG, GeneratorIndex(1, True))
    assert _close(wedge(F + G, H), wedge(F, H) + wedge(G, H))


def test_generators_square_to_zero():
    for g in ALG.generators:
        p = GrassmannForm.generator(ALG, g)
        assert wedge(p, p).terms == {}


def test_wedge_sign_hand_cases():
    assert wedge_sign(0b01, 0b10) == 1
    assert wedge_sign(0b10, 0b01) == -1
    assert wedge_sign(0b110, 0b001) == 1
    assert wedge_sign(0b100, 0b011) == 1
    assert wedge_sign(0b010, 0b101) == -1


def test_coefficient_respects_order():
    a, b = GeneratorIndex(0, False), GeneratorIndex(1, True)
    F = wedge(GrassmannForm.generator(ALG, a), GrassmannForm.generator(ALG, b))
    assert F.coefficient([a, b]) == 1
    assert F.coefficient([b, a]) == -1
    assert F.coefficient([a, a]) == 0


def _pair(alg, x, layer=0):
    return wedge(GrassmannForm.generator(alg, GeneratorIndex(x, False, layer)),
                 GrassmannForm.generator(alg, GeneratorIndex(x, True, layer)))


@settings(max_examples=30)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_exp_of_commuting_sum_factorizes(a, b, c):
    F = GrassmannForm.scalar(ALG, a) + _pair(ALG, 0) * b
    G = _pair(ALG, 1) * c + _pair(ALG, 2) * b
    assert _close(exp_form(F + G), wedge(exp_form(F), exp_form(G)), 1e-8)


def test_exp_rejects_odd_argument():
    with pytest.raises(ConfigError):
        exp_form(GrassmannForm.generator(ALG, GeneratorIndex(0, False)))


def test_fermion_gaussian_top_is_signed_determinant():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 3))
    S = GrassmannForm.zero(ALG)
    for x in range(3):
        for y in range(3):
            S = S + wedge(GrassmannForm.generator(ALG, GeneratorIndex(x, False)),
                          GrassmannForm.generator(ALG, GeneratorIndex(y, True))) * A[x, y]
    top = exp_form(-S).top()
    assert complex(top) == pytest.approx(-np.linalg.det(A))
    assert complex(berezin_top(exp_form(-S))) == pytest.approx(-np.linalg.det(A) * (-1 / math.pi) ** 3)


@settings(max_examples=30)
@given(st.floats(-1.5, 1.5), st.floats(-1, 1), st.floats(-1, 1))
def test_function_calculus_matches_exp(a, b, c):
    F = GrassmannForm.scalar(ALG, a) + _pair(ALG, 0) * b + _pair(ALG, 1) * c
    assert _close(apply_function(lambda k, x: np.exp(x), F), exp_form(F), 1e-8)


def test_two_variable_calculus_of_product():
    F = GrassmannForm.scalar(ALG, 2.0) + _pair(ALG, 0)
    G = GrassmannForm.scalar(ALG, 3.0) + _pair(ALG, 1)

    def d_xy(alpha, v):
        x, y = v
        table = {(0, 0): x * y, (1, 0): y, (0, 1): x, (1, 1): 1.0}
        return table.get(tuple(alpha), 0.0)

    assert _close(apply_smooth_function(d_xy, [F, G]), wedge(F, G))


# --- super-expectations ------------------------------------------------------------


def _tau_form(fields, x):
    return GrassmannForm.scalar(fields.algebra, fields.phi[x] * fields.phibar[x]) + wedge(fields.psi[x], fields.psibar[x])


def _random_cov(n, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    return M @ M.T + n * np.eye(n)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_expectation_of_one_is_one(n):
    C = _random_cov(n, n)
    one = lambda f: GrassmannForm.scalar(f.algebra, np.ones(f.phi.shape[1:]))
    assert complex(super_expectation(C, one, order=4)) == pytest.approx(1.0, abs=1e-10)


def test_boson_moment_is_covariance():
    C = _random_cov(2, 4)
    one = lambda f: GrassmannForm.scalar(f.algebra, np.ones(f.phi.shape[1:]))
    obs = lambda f: np.stack([f.phi[a] * f.phibar[b] for a in range(2) for b in range(2)])
    got = np.asarray(super_expectation(C, one, order=6, observables=obs)).reshape(2, 2)
    assert np.allclose(got, C, atol=1e-10)


@pytest.mark.parametrize("a", [0.3, 1.0, 2.5])
def test_localization_of_tau_functions(a):
    # E_C f(tau) = f(0) for supersymmetric integrands
    C = _random_cov(2, 7)

    def F(f):
        t = _tau_form(f, 0) + _tau_form(f, 1) * 0.5
        return exp_form(-a * t - wedge(t, t) * 0.1)

    F.reference_shift = a * np.diag([1.0, 0.5]) + 0.5 * np.eye(2)
    assert complex(super_expectation(C, F, order=30)) == pytest.approx(1.0, abs=1e-9)


def test_mc_agrees_with_quadrature():
    C = _random_cov(2, 8) / 3

    def F(f):
        return exp_form(-_tau_form(f, 0) * 0.7 - wedge(_tau_form(f, 1), _tau_form(f, 1)) * 0.2)

    obs = lambda f: np.stack([f.phi[0] * f.phibar[1]])
    q = complex(super_expectation(C, F, order=30, observables=obs)[0])
    m, se = super_expectation_mc(C, F, observables=obs, samples=400_000, seed=1)
    assert abs(complex(m[0]) - q) < 5 * float(np.max(se))


def test_quadrature_convergence_of_smooth_builder():
    C = _random_cov(1, 9)
    F = lambda f: exp_form(-wedge(_tau_form(f, 0), _tau_form(f, 0)) * 0.3)
    # the reference Gaussian must mimic the quartic decay
    F.reference_shift = np.array([[4 * math.sqrt(0.3)]])
    assert quadrature_convergence(C, F, 20) < 1e-8


def test_site_limit():
    C = np.eye(MAX_SITES + 1)
    one = lambda f: GrassmannForm.scalar(f.algebra, np.ones(f.phi.shape[1:]))
    with pytest.raises(CapabilityError):
        super_expectation(C, one, order=2)
    one.gaussian = True
    assert complex(super_expectation(C, one, order=1)) == pytest.approx(1.0)


def test_full_tensor_grid_size_and_limit():
    s = QuadratureScheme(5, np.eye(2), prune=0)
    assert s.node_count == 5**4
    with pytest.raises(CapabilityError):
        QuadratureScheme(5, np.eye(2), prune=0, limit=100).node_count


def test_covariance_validation():
    with pytest.raises(ConfigError):
        CovarianceMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ConfigError):
        CovarianceMatrix(np.array([[1.0, 0.5], [0.0, 1.0]]))


@pytest.mark.parametrize("a,C", [(0.5, 0.7), (2.0, 0.3)])
def test_convolution_of_gaussian_in_tau(a, C):
    # E_C theta e^{-a tau} at external phi = exp(-a |phi|^2 / (1 + a C))
    phi = np.array([[0.0, 0.4 + 0.3j, -1.1j]])
    ext = Fields.external(phi)
    F = lambda f: exp_form(-a * _tau_form(f, 0))
    got = np.asarray(convolve([[C]], F, ext, order=20).degree0)
    expect = np.exp(-a * np.abs(phi[0]) ** 2 / (1 + a * C))
    assert np.allclose(got, expect, atol=1e-10)


def test_convolution_keeps_external_fermions():
    a, C = 0.8, 0.5
    ext = Fields.external(np.array([[0.3 + 0.1j]]), with_fermions=True)
    F = lambda f: exp_form(-a * _tau_form(f, 0))
    out = convolve([[C]], F, ext, order=20)
    # the result is e^{-a' tau_ext} with a' = a / (1 + a C)
    ap = a / (1 + a * C)
    expect = exp_form(-ap * _tau_form(ext, 0))
    assert _close(out, expect, 1e-10)


def test_convolution_semigroup():
    def F(f):
        t = _tau_form(f, 0)
        return exp_form(-0.5 * t - wedge(t, t) * 0.2)

    F.reference_shift = np.array([[0.5 + 4 * math.sqrt(0.2)]])
    pts = np.array([[0.0, 0.5, 0.3 - 0.4j]])
    r = convolution_property_check([[0.4]], [[0.6]], F, pts, order=30)
    assert r.max_abs_diff < 1e-10
