"""Monte Carlo estimators for the walk's critical observables.

The Laplace transforms ``G``, ``chi`` and ``xi_p`` are estimated by drawing the
horizon ``T ~ Exp(rho)`` and reweighting each path by
``rho^{-1} exp(-(nu - rho) T - U)``. Fixed-horizon quantities (``c_T``, the
mean-square displacement) sample free paths to the largest horizon and cut them
at every grid point, so all grid points share one path ensemble. In d = 1 the
mean-square displacement instead defaults to a resampling population, since
free-path reweighting degenerates at long horizons.

Every estimator splits its samples into fixed-size chunks with independent
counter-based streams and reduces chunk results in chunk order, so results are
bit-reproducible for a given seed regardless of the thread count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .energy import CouplingSet, batch_functionals
from .errors import CapabilityError, ConfigError
from .lattice import TorusSpec
from .walk import RngStream, batch_endpoints, batch_local_times, chunked_map, sample_batch


class LowEffectiveSampleWarning(UserWarning):
    """Fewer than 1% of the samples carry the estimate."""


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    std_error: float
    n_effective: float


@dataclass(frozen=True)
class LaplaceConfig:
    """Sampling setup for Laplace-transform estimators.

    ``proposal_rate`` defaults to ``nu / 2``; it must be given explicitly when
    ``nu <= 0``. Horizons beyond ``T_max`` get zero weight (truncation).
    """

    nu: float
    samples: int = 100_000
    proposal_rate: float | None = None
    T_max: float = math.inf
    seed: int = 0
    stream: int = 0
    chunk: int = 20_000
    threads: int = 1

    @property
    def rho(self) -> float:
        rho = self.nu / 2 if self.proposal_rate is None else self.proposal_rate
        if not rho > 0:
            raise ConfigError(f"proposal rate must be positive, got {rho}")
        return rho


def _coupling(c) -> CouplingSet:
    if isinstance(c, CouplingSet):
        return c
    return CouplingSet(*c)


def _ess(w: np.ndarray) -> float:
    s2 = float(np.sum(w * w))
    return float(np.sum(w)) ** 2 / s2 if s2 > 0 else 0.0


def _check_ess(n_eff: float, samples: int, what: str) -> None:
    if samples and n_eff < 0.01 * samples:
        warnings.warn(
            f"{what}: effective sample size {n_eff:.1f} is below 1% of {samples} samples",
            LowEffectiveSampleWarning,
            stacklevel=3,
        )


def _mean_estimate(w: np.ndarray) -> EstimateWithError:
    N = w.shape[0]
    mean = float(np.mean(w))
    se = float(np.std(w, ddof=1) / math.sqrt(N)) if N > 1 else math.inf
    return EstimateWithError(mean, se, _ess(w))


def _ratio_estimate(w: np.ndarray, x: np.ndarray) -> EstimateWithError:
    """Self-normalized ``sum w x / sum w`` with its delta-method error."""
    sw = float(np.sum(w))
    if sw <= 0:
        return EstimateWithError(math.nan, math.inf, 0.0)
    r = float(np.sum(w * x)) / sw
    se = float(math.sqrt(np.sum((w * (x - r)) ** 2)) / sw)
    return EstimateWithError(r, se, _ess(w))


def _normalized(lw: np.ndarray) -> np.ndarray:
    finite = np.isfinite(lw)
    if not finite.any():
        return np.zeros_like(lw)
    return np.exp(lw - lw[finite].max())


# ---------------------------------------------------------------------------
# Laplace-transform sampling


@dataclass
class _LaplaceSample:
    weights: np.ndarray
    horizon: np.ndarray
    endpoint: np.ndarray


def _laplace_chunk(c: CouplingSet, config: LaplaceConfig, d: int, spec: TorusSpec | None):
    rho = config.rho
    nu = config.nu
    beta, gamma = c.beta, c.gamma

    def run(gen, size, k):
        T = gen.exponential(1.0 / rho, size=size)
        kept = T <= config.T_max
        horizon = np.where(kept, T, 0.0)
        batch = sample_batch(horizon, gen, d)
        lt = batch_local_times(batch, n=None if spec is None else spec.n)
        U = batch_functionals(lt).U(beta, gamma)
        with np.errstate(over="ignore"):
            w = np.where(kept, np.exp(-(nu - rho) * T - U) / rho, 0.0)
        return _LaplaceSample(w, T, batch_endpoints(batch))

    return run


def laplace_samples(c, config: LaplaceConfig, d: int = 1, spec: TorusSpec | None = None) -> _LaplaceSample:
    """Raw weights, horizons and ``Z^d`` endpoints for a Laplace-transform run."""
    c = _coupling(c)
    if spec is not None and spec.d != d:
        d = spec.d
    parts = chunked_map(
        _laplace_chunk(c, config, d, spec),
        RngStream(config.seed, config.stream),
        config.samples,
        config.chunk,
        config.threads,
    )
    if not parts:
        raise ConfigError("need at least one sample")
    return _LaplaceSample(
        np.concatenate([p.weights for p in parts]),
        np.concatenate([p.horizon for p in parts]),
        np.concatenate([p.endpoint for p in parts]),
    )


def two_point_mc(c, config: LaplaceConfig, spec: TorusSpec | None = None, d: int = 1) -> dict:
    """Estimate ``G_nu(0, x)`` per site by binning each weighted sample at its endpoint.

    On a torus every site is reported; on ``Z^d`` only visited endpoints are.
    """
    s = laplace_samples(c, config, d, spec)
    N = s.weights.shape[0]
    ends = s.endpoint if spec is None else s.endpoint % spec.n
    sites, inv = np.unique(ends, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    s1 = np.bincount(inv, weights=s.weights, minlength=sites.shape[0])
    s2 = np.bincount(inv, weights=s.weights**2, minlength=sites.shape[0])
    out = {}
    for row, a, b in zip(sites, s1, s2):
        mean = a / N
        var = max(b / N - mean * mean, 0.0) * N / max(N - 1, 1)
        out[tuple(int(x) for x in row)] = EstimateWithError(float(mean), math.sqrt(var / N), a * a / b if b > 0 else 0.0)
    if spec is not None:
        for x in spec.sites():
            out.setdefault(x, EstimateWithError(0.0, 0.0, 0.0))
    _check_ess(_ess(s.weights), N, "two_point_mc")
    return out


def susceptibility_mc(c, config: LaplaceConfig, spec: TorusSpec | None = None, d: int = 1) -> EstimateWithError:
    """Estimate ``chi = int c_T e^{-nu T} dT`` (endpoint ignored)."""
    s = laplace_samples(c, config, d, spec)
    est = _mean_estimate(s.weights)
    _check_ess(est.n_effective, s.weights.shape[0], "susceptibility_mc")
    return est


def xi_p_mc(c, config: LaplaceConfig, p: float, d: int = 1) -> EstimateWithError:
    """Correlation length of order ``p`` on ``Z^d``: ``(sum |x|^p G / chi)^{1/p}``."""
    if not p > 0:
        raise ConfigError(f"p must be positive, got {p}")
    s = laplace_samples(c, config, d, None)
    r = _ratio_estimate(s.weights, np.linalg.norm(s.endpoint, axis=1) ** p)
    _check_ess(r.n_effective, s.weights.shape[0], "xi_p_mc")
    if math.isfinite(config.T_max):
        # mass beyond the cutoff for the free kernel, as a relative bias proxy
        tail = math.exp(-config.nu * config.T_max) if config.nu > 0 else 1.0
        if tail > 3 * r.std_error / max(abs(r.value), 1e-300):
            warnings.warn(f"xi_p_mc: truncation at T_max={config.T_max} may bias the estimate", stacklevel=2)
    xi = r.value ** (1.0 / p)
    return EstimateWithError(xi, xi / (p * r.value) * r.std_error if r.value > 0 else math.inf, r.n_effective)


def xi2_ratio_form(c, config: LaplaceConfig, d: int = 1, bins: int = 100) -> EstimateWithError:
    """``xi_2`` from ``int <|X_T|^2> c_T e^{-nu T} dT / int c_T e^{-nu T} dT``.

    The samples of :func:`xi_p_mc` are grouped into equal-probability horizon
    bins. Per bin, ``c_T`` is the mean of ``e^{-U}`` and ``<|X_T|^2>`` its
    self-normalized average; both are then integrated against ``e^{-nu T}``
    exactly over the bin, so the bias is the within-bin variation only.
    """
    c = _coupling(c)
    s = laplace_samples(c, config, d, None)
    rho = config.rho
    x2 = np.sum(s.endpoint.astype(float) ** 2, axis=1)
    # e^{-U} from the Laplace weight
    with np.errstate(over="ignore", invalid="ignore"):
        bw = s.weights * rho * np.exp((config.nu - rho) * s.horizon)
    q = np.linspace(0.0, 1.0, bins + 1)
    edges = -np.log1p(-q[:-1]) / rho
    edges = np.append(edges, min(config.T_max, math.inf))
    b = np.clip(np.searchsorted(edges, s.horizon, side="right") - 1, 0, bins - 1)
    cnt = np.bincount(b, minlength=bins)
    sw = np.bincount(b, weights=bw, minlength=bins)
    swx = np.bincount(b, weights=bw * x2, minlength=bins)
    c_bin = np.divide(sw, cnt, out=np.zeros(bins), where=cnt > 0)
    m_bin = np.divide(swx, sw, out=np.zeros(bins), where=sw > 0)
    nu = config.nu
    if nu != 0:
        kern = (np.exp(-nu * edges[:-1]) - np.exp(-nu * edges[1:])) / nu
    else:
        kern = np.diff(edges)
    num = float(np.sum(m_bin * c_bin * kern))
    den = float(np.sum(c_bin * kern))
    xi = math.sqrt(num / den)
    raw = _ratio_estimate(s.weights, x2)
    return EstimateWithError(xi, raw.std_error / (2 * xi), raw.n_effective)


# ---------------------------------------------------------------------------
# fixed-horizon quantities


def _cut_chunk(d: int, T_grid: np.ndarray, n: int | None, gradient: bool = False):
    """Chunk worker returning ``(I, C, |X_T|^2)`` per cut, each of shape ``(n_T, size)``."""

    def run(gen, size, k):
        batch = sample_batch(float(T_grid[-1]), gen, d, size=size)
        I = np.empty((T_grid.shape[0], size))
        C = np.empty_like(I)
        X2 = np.empty_like(I)
        for j, T in enumerate(T_grid):
            lt = batch_local_times(batch, n=n, T_cut=float(T))
            f = batch_functionals(lt)
            I[j], C[j] = f.I, f.C
            X2[j] = np.sum(batch_endpoints(batch, float(T)).astype(float) ** 2, axis=1)
        return I, C, X2

    return run


def _check_T_grid(T_grid) -> np.ndarray:
    T_grid = np.asarray(T_grid, dtype=float)
    if T_grid.ndim != 1 or T_grid.size == 0 or np.any(np.diff(T_grid) <= 0) or T_grid[0] < 0:
        raise ConfigError("T grid must be nonnegative and strictly increasing")
    return T_grid


def _cut_functionals(d, T_grid, samples, seed, stream=0, chunk=2000, threads=1, n=None):
    T_grid = _check_T_grid(T_grid)
    parts = chunked_map(_cut_chunk(d, T_grid, n), RngStream(seed, stream), samples, chunk, threads)
    I = np.concatenate([p[0] for p in parts], axis=1)
    C = np.concatenate([p[1] for p in parts], axis=1)
    X2 = np.concatenate([p[2] for p in parts], axis=1)
    return T_grid, I, C, X2


def c_T_estimator(c, T: float, samples: int, d: int = 1, spec: TorusSpec | None = None,
                  seed: int = 0, chunk: int = 5000, threads: int = 1) -> EstimateWithError:
    """``c_T = E_0[exp(-U_T)]`` by direct sampling."""
    c = _coupling(c)
    if T < 0:
        raise ConfigError(f"T must be nonnegative, got {T}")
    if spec is not None:
        d = spec.d
    if T == 0:
        return EstimateWithError(1.0, 0.0, float(samples))
    _, I, C, _ = _cut_functionals(d, [T], samples, seed, chunk=chunk, threads=threads,
                                  n=None if spec is None else spec.n)
    lw = -(c.beta * I[0] - c.gamma / (2 * d) * C[0])
    with np.errstate(over="ignore"):
        return _mean_estimate(np.exp(lw))


@dataclass(frozen=True)
class MSDPoint:
    T: float
    value: float
    std_error: float
    n_effective: float


def _msd_points(T_grid, lw: np.ndarray, X2: np.ndarray) -> list:
    out = []
    for j, T in enumerate(T_grid):
        if T == 0:
            out.append(MSDPoint(float(T), 0.0, 0.0, float(lw.shape[1])))
            continue
        r = _ratio_estimate(_normalized(lw[j]), X2[j])
        out.append(MSDPoint(float(T), r.value, r.std_error, r.n_effective))
    return out


def _smc_island(c: CouplingSet, T_grid: np.ndarray, step: float):
    """One resampling island on Z: rows ``(log Z_T, <|X_T|^2>, ESS_T)`` per grid point.

    Particles are exact continuous-time walks: holding times are memoryless, so
    they are redrawn at every checkpoint. Between checkpoints each particle
    accrues ``-dU``; the island resamples systematically when its ESS drops
    below half its size.
    """
    beta, gamma = c.beta, c.gamma
    stops = np.union1d(T_grid[T_grid > 0], np.arange(step, T_grid[-1], step))

    def run(gen, size, k):
        N, W = size, 64
        ell = np.zeros((N, W))
        origin = W // 2
        pos = np.full(N, origin)
        logw = np.zeros(N)
        logZ = 0.0
        out = np.zeros((3, T_grid.size))
        out[2] = N
        t = 0.0
        for t1 in stops:
            rem = np.full(N, t1 - t)
            act = np.arange(N)
            while act.size:
                h = gen.exponential(0.5, act.size)
                r = rem[act]
                s = np.minimum(h, r)
                x = pos[act]
                l0 = ell[act, x]
                nb = ell[act, x - 1] + ell[act, x + 1]
                # raising l_x by s changes U by beta (2 l s + s^2) - gamma s (l_{x-1} + l_{x+1})
                logw[act] -= beta * (2 * l0 * s + s * s) - gamma * s * nb
                ell[act, x] = l0 + s
                rem[act] = r - s
                act = act[h < r]
                pos[act] += np.where(gen.random(act.size) < 0.5, -1, 1)
                if act.size and (pos[act].min() < 2 or pos[act].max() > W - 3):
                    ell = np.pad(ell, ((0, 0), (W // 2, W // 2)))
                    pos += W // 2
                    origin += W // 2
                    W = ell.shape[1]
            t = t1
            m = float(logw.max())
            w = np.exp(logw - m)
            log_mean = m + math.log(float(np.mean(w)))
            ess = _ess(w)
            j = int(np.searchsorted(T_grid, t1))
            if j < T_grid.size and T_grid[j] == t1:
                x2 = (pos - origin).astype(float) ** 2
                out[:, j] = logZ + log_mean, float(np.sum(w * x2) / np.sum(w)), ess
            if ess < N / 2:
                logZ += log_mean
                u = (gen.random() + np.arange(N)) / N
                idx = np.minimum(np.searchsorted(np.cumsum(w) / np.sum(w), u), N - 1)
                ell, pos, logw = ell[idx], pos[idx], np.zeros(N)
        return out

    return run


def _msd_resampled(c: CouplingSet, T_grid, samples, seed, islands, step, threads) -> list:
    """Islands are independent; their estimates combine with weights ``Z_T``."""
    if samples < 2 * islands:
        raise ConfigError(f"need at least {2 * islands} samples for {islands} islands")
    T_grid = np.asarray(T_grid, dtype=float)
    size = -(-samples // islands)
    parts = np.stack(chunked_map(_smc_island(c, T_grid, step), RngStream(seed, 7), samples, size, threads))
    out = []
    for j, T in enumerate(T_grid):
        if T == 0:
            out.append(MSDPoint(float(T), 0.0, 0.0, float(samples)))
            continue
        r = _ratio_estimate(_normalized(parts[:, 0, j]), parts[:, 1, j])
        out.append(MSDPoint(float(T), r.value, r.std_error, float(np.sum(parts[:, 2, j]))))
    return out


MSD_METHODS = ("auto", "reweight", "resample")


def msd_curve(c, T_grid, samples: int, d: int = 1, seed: int = 0, chunk: int = 2000,
              threads: int = 1, method: str = "auto", islands: int = 10, step: float = 1.0) -> list:
    """``<|X_T|^2>`` under the weights ``e^{-U_T}/c_T`` for every ``T`` in the grid.

    ``reweight`` cuts free paths and reweights them; its ESS collapses once
    ``beta T^{3/2}`` is large. ``resample`` (d = 1 only) runs ``islands``
    independent resampling populations, so errors come from their spread.
    ``auto`` picks ``resample`` in d = 1.
    """
    c = _coupling(c)
    if method not in MSD_METHODS:
        raise ConfigError(f"method must be one of {MSD_METHODS}, got {method!r}")
    if method == "auto":
        method = "resample" if d == 1 else "reweight"
    if method == "resample":
        if d != 1:
            raise CapabilityError("the resampling MSD estimator is implemented for d = 1 only")
        return _msd_resampled(c, _check_T_grid(T_grid), samples, seed, islands, step, threads)
    T_grid, I, C, X2 = _cut_functionals(d, T_grid, samples, seed, chunk=chunk, threads=threads)
    lw = -(c.beta * I - c.gamma / (2 * d) * C)
    return _msd_points(T_grid, lw, X2)


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    residual: float
    points: int


def fit_loglog_slope(T, y, window=(10.0, 200.0)) -> SlopeFit:
    """Least-squares slope of ``log y`` against ``log T`` over ``window`` (inclusive)."""
    T = np.asarray(T, dtype=float)
    y = np.asarray(y, dtype=float)
    sel = (T >= window[0]) & (T <= window[1]) & (y > 0)
    if sel.sum() < 2:
        raise ConfigError("need at least two positive points inside the fit window")
    x, z = np.log(T[sel]), np.log(y[sel])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, z, rcond=None)
    res = z - A @ coef
    return SlopeFit(float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(res**2))), int(sel.sum()))


@dataclass(frozen=True)
class MSDConfig:
    T_grid: tuple = (10.0, 20.0, 40.0, 80.0, 120.0, 160.0, 200.0)
    samples: int = 10_000
    window: tuple = (10.0, 200.0)
    seed: int = 0
    chunk: int = 2000
    threads: int = 1
    method: str = "auto"
    islands: int = 10
    step: float = 1.0


@dataclass(frozen=True)
class PhaseScanResult:
    """Fitted ``log <|X_T|^2>`` slopes (``2 nu-bar``) on a ``(beta, gamma)`` grid."""

    betas: np.ndarray
    gammas: np.ndarray
    slope: np.ndarray
    residual: np.ndarray
    on_gamma_eq_beta: np.ndarray
    min_n_effective: np.ndarray

    def rows(self) -> list:
        out = []
        for i, b in enumerate(self.betas):
            for j, g in enumerate(self.gammas):
                out.append(dict(beta=float(b), gamma=float(g), slope=float(self.slope[i, j]),
                                residual=float(self.residual[i, j]),
                                gamma_eq_beta=bool(self.on_gamma_eq_beta[i, j]),
                                min_n_eff=float(self.min_n_effective[i, j])))
        return out


def phase_scan(betas, gammas, d: int = 1, config: MSDConfig = MSDConfig()) -> PhaseScanResult:
    """MSD exponent over a coupling grid.

    With ``reweight`` one path ensemble is shared by all grid points; with
    ``resample`` every grid point runs its own populations from the same seed.
    """
    betas = np.asarray(betas, dtype=float)
    gammas = np.asarray(gammas, dtype=float)
    method = config.method
    if method == "auto":
        method = "resample" if d == 1 else "reweight"
    if method == "reweight":
        T_grid, I, C, X2 = _cut_functionals(d, config.T_grid, config.samples, config.seed,
                                            chunk=config.chunk, threads=config.threads)
    shape = (betas.size, gammas.size)
    slope, resid, neff = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    for i, b in enumerate(betas):
        for j, g in enumerate(gammas):
            if method == "reweight":
                pts = _msd_points(T_grid, -(b * I - g / (2 * d) * C), X2)
            else:
                pts = msd_curve((b, g), config.T_grid, config.samples, d, config.seed, threads=config.threads,
                                method=method, islands=config.islands, step=config.step)
            fit = fit_loglog_slope([p.T for p in pts], [p.value for p in pts], config.window)
            slope[i, j], resid[i, j] = fit.slope, fit.residual
            neff[i, j] = min(p.n_effective for p in pts)
    on_line = np.isclose(betas[:, None], gammas[None, :])
    return PhaseScanResult(betas, gammas, slope, resid, on_line, neff)


# ---------------------------------------------------------------------------
# critical point


@dataclass(frozen=True)
class ScanConfig:
    """Setup for the decay-rate scan: paths of horizon ``T_b`` cut at ``T_a``."""

    samples: int = 20_000
    T_a: float = 60.0
    T_b: float = 120.0
    z: float = 3.0
    seed: int = 0
    chunk: int = 1000
    threads: int = 1


@dataclass(frozen=True)
class DecayRates:
    """Growth rates ``(log c_{T_b} - log c_{T_a}) / (T_b - T_a)`` for several couplings on shared paths."""

    couplings: tuple
    rate: np.ndarray
    cov: np.ndarray
    n_effective: np.ndarray
    log_c: np.ndarray

    def std_error(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def difference_error(self, i: int, j: int) -> float:
        v = self.cov[i, i] + self.cov[j, j] - 2 * self.cov[i, j]
        return math.sqrt(max(v, 0.0))


def decay_rates(couplings, d: int, config: ScanConfig) -> DecayRates:
    """Exponential growth rate of ``c_T`` for each coupling, with a joint delta-method covariance."""
    if not 0 <= config.T_a < config.T_b:
        raise ConfigError("need 0 <= T_a < T_b")
    couplings = tuple(_coupling(c) for c in couplings)
    _, I, C, _ = _cut_functionals(d, [config.T_a, config.T_b], config.samples, config.seed,
                                  chunk=config.chunk, threads=config.threads)
    N = I.shape[1]
    dT = config.T_b - config.T_a
    infl, rates, neff, logc = [], [], [], []
    for c in couplings:
        lw = -(c.beta * I - c.gamma / (2 * d) * C)
        shift = lw.max(axis=1, keepdims=True)
        w = np.exp(lw - shift)
        m = w.mean(axis=1)
        lc = np.log(m) + shift[:, 0]
        rates.append((lc[1] - lc[0]) / dT)
        # influence function of the log-ratio
        infl.append((w[1] / m[1] - w[0] / m[0]) / dT)
        neff.append(min(_ess(w[0]), _ess(w[1])))
        logc.append(lc)
    Z = np.array(infl)
    Zc = Z - Z.mean(axis=1, keepdims=True)
    cov = (Zc @ Zc.T) / (N - 1) / N
    return DecayRates(couplings, np.array(rates), cov, np.array(neff), np.array(logc))


@dataclass(frozen=True)
class NuCScanResult:
    beta: float
    gamma: float
    d: int
    rate: EstimateWithError
    z: float
    nu_grid: np.ndarray
    status: list
    bracket: tuple
    outcome: str
    T_a: float = 0.0
    T_b: float = 0.0
    extras: dict = field(default_factory=dict)

    def rows(self) -> list:
        out = []
        for v, s in zip(self.nu_grid, self.status):
            growth = self.rate.value - v
            se = self.rate.std_error
            z = growth / se if se > 0 else (math.copysign(math.inf, growth) if growth else 0.0)
            out.append(dict(nu=float(v), status=s, growth=float(growth), z_score=float(z)))
        return out


def classify_grid(rate: float, se: float, nu_grid, z: float) -> tuple:
    """Label every grid value and extract ``(nu_lo, nu_hi)``.

    A grid value is finite when ``nu`` exceeds the growth rate by ``z`` standard
    errors (the Laplace integrand then decays) and divergent when it falls short
    by as much; otherwise inconclusive.
    """
    grid = np.sort(np.asarray(nu_grid, dtype=float))
    status = []
    for v in grid:
        if v > rate + z * se:
            status.append("finite")
        elif v < rate - z * se:
            status.append("divergent")
        else:
            status.append("inconclusive")
    div = [v for v, s in zip(grid, status) if s == "divergent"]
    fin = [v for v, s in zip(grid, status) if s == "finite"]
    lo = max(div) if div else None
    hi = min(fin) if fin else None
    outcome = "ok" if lo is not None and hi is not None else "inconclusive"
    return grid, status, (lo, hi), outcome


def nu_c_scan(beta: float, gamma: float, d: int, nu_grid, config: ScanConfig = ScanConfig()) -> NuCScanResult:
    """Bracket the critical point from the decay rate of ``c_T``.

    ``chi(nu) = int c_T e^{-nu T} dT`` is finite exactly when ``nu`` exceeds the
    growth rate of ``c_T``; the bracket is ``[largest divergent, smallest finite]``
    grid value, and is reported as inconclusive when the grid misses either side.
    """
    dr = decay_rates([CouplingSet(beta, gamma)], d, config)
    est = EstimateWithError(float(dr.rate[0]), float(dr.std_error()[0]), float(dr.n_effective[0]))
    grid, status, bracket, outcome = classify_grid(est.value, est.std_error, nu_grid, config.z)
    return NuCScanResult(beta, gamma, d, est, config.z, grid, status, bracket, outcome, config.T_a, config.T_b)
