import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsawlab.energy import CouplingSet
from wsawlab.errors import CapabilityError, ConfigError
from wsawlab.lattice import TorusSpec, green_function
from wsawlab.observables import (
    LaplaceConfig,
    LowEffectiveSampleWarning,
    ScanConfig,
    c_T_estimator,
    classify_grid,
    decay_rates,
    fit_loglog_slope,
    msd_curve,
    nu_c_scan,
    susceptibility_mc,
    two_point_mc,
    xi2_ratio_form,
    xi_p_mc,
)


# --- independent oracle for c_T in d = 1 ------------------------------------
# Condition on the jump count k ~ Poisson(2T). Given k, the holding times are
# T times a uniform point of the simplex and the steps are iid +-1. Small k is
# integrated by tensor Gauss-Legendre over stick-breaking coordinates with all
# 2^k step sequences enumerated; larger k by plain Monte Carlo.


def _stick_breaking(k, nodes):
    x, w = np.polynomial.legendre.leggauss(nodes)
    x, w = (x + 1) / 2, w / 2
    V = np.stack([g.ravel() for g in np.meshgrid(*([x] * k), indexing="ij")])
    W = np.prod(np.meshgrid(*([w] * k), indexing="ij"), axis=0).ravel()
    sp = np.empty((k + 1, V.shape[1]))
    rest = np.ones(V.shape[1])
    for i in range(k):
        W = W * (k - i) * (1 - V[i]) ** (k - i - 1)
        sp[i] = rest * V[i]
        rest = rest * (1 - V[i])
    sp[k] = rest
    return sp, W


def _intersection(sp, pos, k):
    m = sp.shape[1]
    occ = np.zeros((m, 2 * k + 1))
    rows = np.broadcast_to(np.arange(m)[:, None], (m, k + 1))
    np.add.at(occ, (rows, pos + k), sp.T)
    return (occ**2).sum(axis=1)


def c_T_oracle(beta, T, k_quad=4, k_max=14, nodes=12, mc=100_000, seed=0):
    rng = np.random.default_rng(seed)
    total = 0.0
    for k in range(k_max + 1):
        pk = math.exp(-2 * T) * (2 * T) ** k / math.factorial(k)
        if k == 0:
            total += pk * math.exp(-beta * T * T)
        elif k <= k_quad:
            sp, W = _stick_breaking(k, nodes)
            sp = sp * T
            acc = 0.0
            for steps in itertools.product((-1, 1), repeat=k):
                pos = np.broadcast_to(np.concatenate([[0], np.cumsum(steps)]), (sp.shape[1], k + 1))
                acc += W @ np.exp(-beta * _intersection(sp, pos, k))
            total += pk * acc / 2**k
        else:
            u = np.sort(rng.random((mc, k)), axis=1)
            sp = np.diff(np.concatenate([np.zeros((mc, 1)), u, np.ones((mc, 1))], axis=1), axis=1).T * T
            pos = np.concatenate([np.zeros((mc, 1), int), np.cumsum(rng.choice((-1, 1), size=(mc, k)), axis=1)], axis=1)
            total += pk * np.exp(-beta * _intersection(sp, pos, k)).mean()
    return total


def test_oracle_reduces_to_one_at_beta_zero():
    assert c_T_oracle(0.0, 1.0) == pytest.approx(1.0, abs=1e-8)


def test_c_T_matches_oracle():
    ref = c_T_oracle(0.5, 1.0)
    # two oracle seeds bound its own Monte Carlo error
    assert abs(ref - c_T_oracle(0.5, 1.0, seed=1)) < 5e-5
    est = c_T_estimator(CouplingSet(0.5), 1.0, samples=200_000, d=1, seed=3)
    assert abs(est.value - ref) < 3 * est.std_error + 1e-4


def test_c_T_at_zero_horizon_is_one():
    assert c_T_estimator(CouplingSet(0.5), 0.0, samples=10).value == 1.0


def test_c_T_free_walk_is_one():
    est = c_T_estimator(CouplingSet(0.0), 5.0, samples=1000, d=2)
    assert est.value == pytest.approx(1.0) and est.std_error == pytest.approx(0.0, abs=1e-12)


# --- Laplace-transform estimators --------------------------------------------


def test_free_two_point_on_torus_matches_resolvent():
    spec = TorusSpec(1, 6)
    nu = 0.5
    exact = green_function(spec, nu, method="dense")[0]
    G = two_point_mc(CouplingSet(0.0), LaplaceConfig(nu, samples=200_000, seed=5), spec=spec)
    for x in spec.sites():
        e = G[x]
        assert abs(e.value - exact[spec.index(x)]) < 4 * e.std_error


def test_free_susceptibility_is_inverse_nu():
    est = susceptibility_mc(CouplingSet(0.0), LaplaceConfig(0.5, samples=100_000, seed=6))
    assert abs(est.value - 2.0) < 4 * est.std_error


def test_susceptibility_is_sum_of_two_point():
    c = CouplingSet(0.2, 0.1)
    cfg = LaplaceConfig(0.5, samples=20_000, seed=7)
    G = two_point_mc(c, cfg, d=1)
    chi = susceptibility_mc(c, cfg, d=1)
    assert sum(e.value for e in G.values()) == pytest.approx(chi.value, rel=1e-12)


def test_susceptibility_decreases_in_nu():
    c = CouplingSet(0.3, 0.1)
    vals = [susceptibility_mc(c, LaplaceConfig(nu, samples=5000, proposal_rate=0.25, seed=8)).value
            for nu in (0.2, 0.4, 0.6, 0.8)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_free_xi2_both_forms():
    # sum |x|^2 G / chi = 2 d / nu for the free walk
    cfg = LaplaceConfig(0.5, samples=100_000, seed=9)
    direct = xi_p_mc(CouplingSet(0.0), cfg, 2.0, d=1)
    ratio = xi2_ratio_form(CouplingSet(0.0), cfg, d=1)
    assert abs(direct.value - 2.0) < 4 * direct.std_error
    assert abs(ratio.value - 2.0) < 4 * ratio.std_error


def test_xi2_forms_agree_with_interaction():
    cfg = LaplaceConfig(0.5, samples=50_000, seed=10)
    c = CouplingSet(0.2, 0.05)
    direct = xi_p_mc(c, cfg, 2.0)
    ratio = xi2_ratio_form(c, cfg)
    assert abs(direct.value - ratio.value) < 4 * direct.std_error


def test_nonpositive_nu_needs_explicit_rate():
    with pytest.raises(Exception):
        LaplaceConfig(0.0).rho
    assert LaplaceConfig(-0.1, proposal_rate=0.3).rho == 0.3


def test_low_ess_warning():
    # ESS / N is about rho (2 nu - rho) / nu^2 = 0.004 for the free walk
    cfg = LaplaceConfig(5.0, samples=2000, proposal_rate=0.01, seed=11)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        susceptibility_mc(CouplingSet(0.0), cfg)
    assert any(issubclass(w.category, LowEffectiveSampleWarning) for w in rec)


# --- fixed horizon --------------------------------------------------------------


def test_free_msd_is_2dT():
    T = (1.0, 4.0, 16.0)
    pts = msd_curve(CouplingSet(0.0), T, samples=20_000, d=2, seed=12)
    for p in pts:
        assert abs(p.value - 4 * p.T) < 4 * p.std_error


@pytest.mark.parametrize("method", ["reweight", "resample"])
def test_msd_thread_independent(method):
    kw = dict(samples=3000, seed=13, chunk=500, method=method)
    a = msd_curve(CouplingSet(0.25), (5.0, 10.0), threads=1, **kw)
    b = msd_curve(CouplingSet(0.25), (5.0, 10.0), threads=3, **kw)
    assert a == b


def test_resampled_free_msd_is_2T():
    pts = msd_curve(CouplingSet(0.0), (0.0, 2.5, 10.0, 40.0), samples=20_000, seed=14, method="resample")
    assert pts[0].value == 0.0
    for p in pts[1:]:
        assert abs(p.value - 2 * p.T) < 4 * p.std_error


@pytest.mark.parametrize("gamma", [0.0, 0.5])
def test_resampling_agrees_with_reweighting_at_short_horizon(gamma):
    T = (3.0, 8.0)
    a = msd_curve(CouplingSet(0.25, gamma), T, samples=20_000, seed=15, method="reweight")
    b = msd_curve(CouplingSet(0.25, gamma), T, samples=20_000, seed=16, method="resample", step=0.5)
    for p, q in zip(a, b):
        assert abs(p.value - q.value) < 4 * math.hypot(p.std_error, q.std_error)


def test_resampling_keeps_effective_samples_at_long_horizon():
    pts = msd_curve(CouplingSet(0.25), (50.0,), samples=2000, seed=17, method="resample")
    assert pts[0].n_effective > 0.3 * 2000


def test_msd_method_validation():
    with pytest.raises(ConfigError):
        msd_curve(CouplingSet(0.1), (1.0,), samples=100, method="magic")
    with pytest.raises(CapabilityError):
        msd_curve(CouplingSet(0.1), (1.0,), samples=100, d=2, method="resample")


@given(st.floats(0.1, 3.0), st.floats(-2.0, 2.0))
def test_loglog_fit_recovers_power_law(slope, logc):
    T = np.array([10.0, 20.0, 40.0, 80.0, 200.0])
    fit = fit_loglog_slope(T, np.exp(logc) * T**slope)
    assert fit.slope == pytest.approx(slope, abs=1e-9) and fit.residual < 1e-9


def test_fit_window_excludes_points():
    T = np.array([1.0, 10.0, 100.0, 1000.0])
    y = np.array([5.0, 10.0, 100.0, 1.0])
    assert fit_loglog_slope(T, y, window=(10.0, 100.0)).slope == pytest.approx(1.0)


# --- critical point ---------------------------------------------------------------


@settings(max_examples=50)
@given(st.floats(-1, 1), st.floats(0, 0.2), st.floats(0.5, 4))
def test_classify_grid_is_ordered(rate, se, z):
    grid = np.linspace(-1.5, 1.5, 31)
    g, status, (lo, hi), outcome = classify_grid(rate, se, grid, z)
    order = {"divergent": 0, "inconclusive": 1, "finite": 2}
    ranks = [order[s] for s in status]
    assert ranks == sorted(ranks)
    if outcome == "ok":
        assert lo < hi


def test_free_walk_rate_is_zero():
    r = nu_c_scan(0.0, 0.0, 1, [-0.1, 0.0, 0.1], ScanConfig(samples=500, T_a=5, T_b=10))
    assert r.rate.value == pytest.approx(0.0, abs=1e-12)
    assert r.status == ["divergent", "inconclusive", "finite"]
    assert r.bracket == (-0.1, 0.1)


def test_self_repulsion_has_negative_rate():
    dr = decay_rates([CouplingSet(0.5), CouplingSet(0.0)], 1, ScanConfig(samples=4000, T_a=20, T_b=40, seed=14))
    assert dr.rate[0] < -3 * dr.std_error()[0]
    assert dr.rate[1] == pytest.approx(0.0, abs=1e-12)
    assert dr.difference_error(0, 1) == pytest.approx(dr.std_error()[0], rel=1e-9)
