import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wsawlab.errors import DimensionMismatchError, DivergentIntegralError, InvalidMassError
from wsawlab.lattice import (
    TorusSpec,
    gradient_norm_sq,
    green_at_origin_Zd,
    green_column,
    green_function,
    laplacian_apply,
    laplacian_matrix,
    neighbors,
    project_field,
)


def test_neighbors_line():
    assert sorted(neighbors((0,))) == [(-1,), (1,)]


def test_neighbors_two_torus_keeps_multiplicity():
    assert neighbors((0,), TorusSpec(1, 2)) == [(1,), (1,)]


def test_neighbors_count_plane():
    assert len(neighbors((3, -2))) == 4
    assert len(set(neighbors((3, -2)))) == 4


def test_laplacian_of_constant_vanishes():
    spec = TorusSpec(2, 5)
    assert np.allclose(laplacian_apply(np.ones(spec.shape), spec), 0.0)


def test_laplacian_delta_stencil():
    f = np.zeros(4)
    f[0] = 1.0
    assert np.allclose(laplacian_apply(f, TorusSpec(1, 4)), [-2, 1, 0, 1])


@pytest.mark.parametrize("method", ["stencil", "forward", "divergence"])
def test_laplacian_formulas_agree(method):
    rng = np.random.default_rng(3)
    spec = TorusSpec(2, 4)
    f = rng.normal(size=spec.shape)
    ref = (laplacian_matrix(spec) @ f.ravel()).reshape(spec.shape)
    assert np.allclose(laplacian_apply(f, spec, method=method), ref, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 5), st.integers(0, 2**31))
def test_summation_by_parts(d, n, seed):
    spec = TorusSpec(d, n)
    f = np.random.default_rng(seed).normal(size=spec.shape)
    lhs = float(np.sum(f * laplacian_apply(f, spec)))
    assert abs(lhs + 0.5 * gradient_norm_sq(f, spec)) <= 1e-12 * (1 + abs(lhs))


def test_gradient_norm_of_delta_on_line():
    assert gradient_norm_sq({(0,): 1.0}) == pytest.approx(4.0)


def test_gradient_norm_constant():
    assert gradient_norm_sq(np.full((3, 3), 2.0), TorusSpec(2, 3)) == 0.0


def test_green_single_site():
    assert green_function(TorusSpec(1, 1), 0.7)[0, 0] == pytest.approx(1 / 0.7)


def test_green_two_site_closed_form():
    m2 = 0.3
    A = np.array([[2 + m2, -2], [-2, 2 + m2]])
    assert np.allclose(green_function(TorusSpec(1, 2), m2), np.linalg.inv(A))


@pytest.mark.parametrize("spec", [TorusSpec(1, 7), TorusSpec(1, 16), TorusSpec(2, 8), TorusSpec(3, 4)])
def test_green_row_sums(spec):
    assert green_column(spec, 0.4).sum() == pytest.approx(1 / 0.4, rel=1e-12)


def test_green_spectral_matches_dense():
    spec = TorusSpec(2, 8)
    assert np.allclose(green_function(spec, 0.2, "spectral"), green_function(spec, 0.2, "dense"), atol=1e-12)


def test_green_rejects_nonpositive_mass():
    with pytest.raises(InvalidMassError):
        green_function(TorusSpec(1, 3), 0.0)


def test_green_origin_d3_watson():
    # Watson's closed form for the simple cubic lattice
    W = math.sqrt(6) / (32 * math.pi**3) * math.gamma(1 / 24) * math.gamma(5 / 24) * math.gamma(7 / 24) * math.gamma(11 / 24)
    assert green_at_origin_Zd(3) == pytest.approx(W / 6, rel=1e-10)


def _torus_sum_d4(n):
    c = 2 * (1 - np.cos(2 * np.pi * np.arange(n) / n))
    lam = (c[:, None, None, None] + c[None, :, None, None] + c[None, None, :, None] + c[None, None, None, :]).ravel()
    return float(np.sum(1 / lam[1:])) / n**4


def test_green_origin_d4_torus_extrapolation():
    # zero-mode-free torus sums approach the Z^4 value like n^-2
    s16, s32 = _torus_sum_d4(16), _torus_sum_d4(32)
    assert green_at_origin_Zd(4) == pytest.approx((4 * s32 - s16) / 3, rel=1e-4)
    assert green_at_origin_Zd(4) == pytest.approx(0.1549333902310602, rel=1e-12)


def test_green_origin_divergent():
    with pytest.raises(DivergentIntegralError):
        green_at_origin_Zd(2)


def test_project_field_conserves_mass():
    f = {(0,): 1.0, (3,): 2.0, (-1,): 0.5}
    h = project_field(f, 2)
    assert h == {(0,): 1.0, (1,): 2.5}


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        neighbors((0, 0), TorusSpec(1, 3))
