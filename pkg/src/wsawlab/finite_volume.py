"""Torus folding: exact pathwise monotonicity checks and finite-volume convergence.

A single ``Z^d`` path is projected onto every torus ``Lambda_N`` of side
``L**N``. For nonnegative fields ``f, g`` the folding lemma gives
``sum_fine f g <= sum_coarse fold(f) fold(g)``. This makes ``I`` and ``C``
nondecreasing as ``N`` decreases, checked per path with absolute slack ``1e-12``.

Two readings of the gradient inequality are checked side by side:

* ``grad_k``: the gradient of the folded local time, ``sum |grad^e L_N|^2``.
  This can *decrease* under folding (two equal occupation times on adjacent
  sites of ``Z`` have gradient sum ``2a^2`` per direction and ``0`` on the
  2-torus), so violations are expected and reported, not hidden.
* ``foldgrad_k``: the folding lemma applied to ``f = g = |grad^e L|``, i.e. the
  coarse side is ``sum (fold |grad^e L_{N+1}|)^2``. This always holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import (
    CouplingSet,
    batch_directional_gradient_sq,
    batch_functionals,
    batch_gradient_field,
    contact_local_time,
    intersection_local_time,
)
from .errors import ConfigError
from .lattice import gradient, unit_vectors
from .observables import EstimateWithError, LaplaceConfig, _coupling
from .walk import (
    Path,
    RngStream,
    batch_endpoints,
    batch_local_times,
    chunked_map,
    fold_local_times,
    local_times,
    sample_batch,
)

SLACK = 1e-12


@dataclass(frozen=True)
class ScaleSequence:
    d: int
    L: int
    N_range: tuple

    def __post_init__(self):
        if self.L < 2 or not self.N_range or min(self.N_range) < 1:
            raise ConfigError("need L >= 2 and scales N >= 1")
        object.__setattr__(self, "N_range", tuple(sorted(self.N_range)))

    def sides(self) -> list:
        return [self.L**N for N in self.N_range]


@dataclass(frozen=True)
class FoldingReport:
    """Functionals at a fine scale and a coarse scale, and whether each inequality held."""

    fine: dict
    coarse: dict
    holds: dict
    slack: float = SLACK

    @property
    def ok(self) -> bool:
        return all(self.holds.values())


def _functionals(ell, d: int) -> dict:
    out = {"I": intersection_local_time(ell), "C": contact_local_time(ell)}
    spec = ell.spec
    total = 0.0
    for k, e in enumerate(unit_vectors(d)):
        g = gradient(dict(ell.items()), e, spec)
        v = float(sum(x * x for x in g.values()))
        out[f"grad_{k}"] = v
        total += v
    out["grad"] = total
    return out


def folding_inequality_check(path: Path, L: int, N: int) -> FoldingReport:
    """Compare the functionals on ``Lambda_{N+1}`` and ``Lambda_N`` for one path.

    A ``Z^d`` path is first projected to ``Lambda_{N+1}``.
    """
    if L < 2 or N < 1:
        raise ConfigError("need L >= 2 and N >= 1")
    n_fine, n_coarse = L ** (N + 1), L**N
    if path.n is not None and path.n != n_fine:
        raise ConfigError(f"path lives on side {path.n}, expected {n_fine}")
    ell = local_times(path)
    fine = ell if path.n is not None else fold_local_times(ell, n_fine)
    coarse = fold_local_times(fine, n_coarse)
    f, c = _functionals(fine, path.d), _functionals(coarse, path.d)
    holds = {k: f[k] <= c[k] + SLACK for k in f}
    return FoldingReport(f, c, holds)


@dataclass(frozen=True)
class BatchFoldingReport:
    """Violation counts of every folding inequality over a path ensemble.

    ``values[key][scale]`` holds per-path functionals; scale ``None`` is ``Z^d``.
    """

    scales: tuple
    values: dict
    violations: dict
    max_excess: dict
    samples: int

    @property
    def total_violations(self) -> int:
        return int(sum(self.violations.values()))

    def count(self, *functionals: str) -> int:
        """Violations summed over all scale pairs for the named functionals."""
        return int(sum(v for (_, _, k), v in self.violations.items() if k in functionals))


def _scale_functionals(batch, n, d: int) -> dict:
    lt = batch_local_times(batch, n=n)
    f = batch_functionals(lt)
    out = {"I": f.I, "C": f.C, "mass": lt.per_path(lt.value)}
    total = np.zeros(batch.size)
    for k, e in enumerate(unit_vectors(d)):
        g = batch_directional_gradient_sq(lt, e)
        out[f"grad_{k}"] = g
        total = total + g
    out["grad"] = total
    return out


def _folded_gradient_sq(lt, e, n_coarse: int) -> np.ndarray:
    """``sum_x (sum_y |grad^e L|_{x + n y})^2`` with the fold taken onto side ``n_coarse``."""
    cp, cx, a = batch_gradient_field(lt, e)
    cx = cx % n_coarse
    key = cp.astype(np.int64)
    for i in range(lt.d - 1, -1, -1):
        key = key * n_coarse + cx[:, i]
    _, inv = np.unique(key, return_inverse=True)
    inv = inv.reshape(-1)
    folded = np.bincount(inv, weights=a)
    owner = np.zeros(folded.shape[0], dtype=np.int64)
    owner[inv] = cp
    return np.bincount(owner, weights=folded**2, minlength=lt.size)


def folding_check_batch(batch, L: int, N_max: int) -> BatchFoldingReport:
    """Check every inequality between consecutive scales ``Z^d, Lambda_{N_max}, ..., Lambda_1``.

    Violations are keyed ``(fine_side, coarse_side, functional)`` with side
    ``None`` for ``Z^d``.
    """
    d = batch.d
    scales = (None,) + tuple(L**N for N in range(N_max, 0, -1))
    lts = {n: batch_local_times(batch, n=n) for n in scales}
    vals = {n: _scale_functionals(batch, n, d) for n in scales}
    keys = [k for k in vals[None] if k != "mass"]
    violations, excess = {}, {}
    U = unit_vectors(d)
    for fine, coarse in zip(scales[:-1], scales[1:]):
        pairs = [(k, vals[fine][k], vals[coarse][k]) for k in keys]
        for k, e in enumerate(U):
            pairs.append((f"foldgrad_{k}", vals[fine][f"grad_{k}"], _folded_gradient_sq(lts[fine], e, coarse)))
        for k, lhs, rhs in pairs:
            diff = lhs - rhs
            violations[(fine, coarse, k)] = int(np.sum(diff > SLACK))
            excess[(fine, coarse, k)] = float(diff.max()) if diff.size else 0.0
    table = {k: {n: vals[n][k] for n in scales} for k in keys + ["mass"]}
    return BatchFoldingReport(scales, table, violations, excess, batch.size)


# ---------------------------------------------------------------------------
# coupled estimates across scales


@dataclass(frozen=True)
class ScaleEstimates:
    """Per-scale estimates from one coupled path ensemble (scale ``None`` is ``Z^d``)."""

    scales: tuple
    estimates: dict
    min_pathwise_increment: dict = field(default_factory=dict)
    violations: dict = field(default_factory=dict)
    difference_error: dict = field(default_factory=dict)
    tail_bound: dict = field(default_factory=dict)
    injective_equal: bool | None = None


def _log_weight(f: dict, c: CouplingSet, d: int) -> np.ndarray:
    return -(c.beta * f["I"] - c.gamma / (2 * d) * f["C"])


def c_NT_sequence(c, T: float, L: int, N_range, samples: int, d: int = 1, seed: int = 0,
                  chunk: int = 5000) -> ScaleEstimates:
    """``c_{N,T}`` for every scale from one ``Z^d`` ensemble, with the pathwise increments.

    Requires ``|gamma| < beta``. For ``gamma <= 0`` folding raises both ``I``
    and ``-gamma C``, so ``e^{-U_{N+1}} - e^{-U_N} >= 0`` for every path. For
    ``gamma > 0`` the contact reward also grows under folding and the pathwise
    order can fail; violations are counted, and only the order of the
    expectations is expected to hold.
    """
    c = _coupling(c)
    c.require_subcritical_attraction()
    seq = ScaleSequence(d, L, tuple(N_range))
    sides = seq.sides()
    scales = tuple(sides) + (None,)

    def run(gen, size, k):
        batch = sample_batch(T, gen, d, size=size)
        jumps = np.diff(batch.offsets) - 1
        out = {n: np.exp(_log_weight(_scale_functionals(batch, n, d), c, d)) for n in scales}
        return out, jumps

    parts = chunked_map(run, RngStream(seed, 0), samples, chunk)
    w = {n: np.concatenate([p[0][n] for p in parts]) for n in scales}
    jumps = np.concatenate([p[1] for p in parts])
    est = {n: EstimateWithError(float(w[n].mean()), float(w[n].std(ddof=1) / math.sqrt(samples)), float(samples))
           for n in scales}
    inc, viol, derr = {}, {}, {}
    for a, b in zip(scales[:-1], scales[1:]):
        diff = w[b] - w[a]
        inc[(a, b)] = float(diff.min())
        viol[(a, b)] = int(np.sum(diff < -SLACK))
        derr[(a, b)] = float(diff.std(ddof=1) / math.sqrt(samples))
    injective = None
    if int(jumps.max(initial=0)) < min(sides) / 2:
        injective = all(np.array_equal(w[n], w[None]) for n in sides)
    return ScaleEstimates(scales, est, inc, viol, derr, {}, injective)


def escape_tail_bound(nu: float, d: int, r: int) -> float:
    """``int_0^inf e^{-nu T} 2 P(Poisson(2dT) >= r) dT = (2/nu) (2d/(2d+nu))^r``."""
    if not nu > 0:
        return math.inf
    return 2.0 / nu * (2 * d / (2 * d + nu)) ** r


def boundary_distance(n: int, a, b) -> int:
    """Jumps needed to reach the boundary of the side-``n`` box centred at ``a``.

    Returns ``-1`` when ``b`` does not fit inside the box.
    """
    lo, hi = -((n - 1) // 2), n // 2
    rel = np.asarray(b) - np.asarray(a)
    if np.any(rel < lo) or np.any(rel > hi):
        return -1
    return int(min(-lo, hi))


def two_point_convergence(c, nu: float, a, b, L: int, N_range, config: LaplaceConfig,
                          d: int | None = None) -> ScaleEstimates:
    """``G_N(a, b)`` on every torus from one ``Z^d`` Laplace ensemble, with escape tail bounds.

    The tail bound on ``|G_N - G|`` integrates ``2 P(Y_T >= r)`` against
    ``e^{-nu T}``, where ``r`` is the jump count needed to leave the box of side
    ``L**N`` centred at ``a``; a walk that never reaches that boundary has the
    same weight and endpoint on the torus and on ``Z^d``.
    """
    c = _coupling(c)
    a = tuple(int(x) for x in a)
    b = tuple(int(x) for x in b)
    if d is None:
        d = len(a)
    if len(a) != d or len(b) != d:
        raise ConfigError("sites must have dimension d")
    seq = ScaleSequence(d, L, tuple(N_range))
    sides = seq.sides()
    scales = tuple(sides) + (None,)
    cfg = LaplaceConfig(nu=nu, samples=config.samples, proposal_rate=config.proposal_rate,
                        T_max=config.T_max, seed=config.seed, stream=config.stream, chunk=config.chunk)
    rho = cfg.rho
    rel = np.array(b) - np.array(a)

    def run(gen, size, k):
        T = gen.exponential(1.0 / rho, size=size)
        kept = T <= cfg.T_max
        batch = sample_batch(np.where(kept, T, 0.0), gen, d)
        ends = batch_endpoints(batch)
        out = {}
        for n in scales:
            lt = batch_local_times(batch, n=n)
            U = batch_functionals(lt).U(c.beta, c.gamma)
            hit = np.all(ends == rel, axis=1) if n is None else np.all((ends - rel) % n == 0, axis=1)
            with np.errstate(over="ignore"):
                out[n] = np.where(kept & hit, np.exp(-(nu - rho) * T - U) / rho, 0.0)
        return out

    parts = chunked_map(run, RngStream(cfg.seed, cfg.stream), cfg.samples, cfg.chunk)
    w = {n: np.concatenate([p[n] for p in parts]) for n in scales}
    N = cfg.samples
    est = {n: EstimateWithError(float(w[n].mean()), float(w[n].std(ddof=1) / math.sqrt(N)),
                                float(w[n].sum() ** 2 / np.sum(w[n] ** 2)) if np.any(w[n]) else 0.0)
           for n in scales}
    derr = {}
    for x, y in zip(scales[:-1], scales[1:]):
        derr[(x, y)] = float((w[y] - w[x]).std(ddof=1) / math.sqrt(N))
    bounds = {}
    for n in sides:
        r = boundary_distance(n, a, b)
        bounds[n] = escape_tail_bound(nu, d, r) if r >= 0 else math.inf
    return ScaleEstimates(scales, est, {}, {}, derr, bounds, None)
