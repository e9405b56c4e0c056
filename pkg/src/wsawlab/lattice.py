"""Lattice geometry, discrete calculus and linear-algebra oracles.

Sites are tuples of ints. A field on ``Z^d`` is a finitely supported ``dict``
mapping sites to floats. A field on a torus is either such a dict (keys reduced
mod ``n``) or a dense array of shape ``(n,) * d``.

The unit-vector set ``U`` is ordered ``+e_1, -e_1, +e_2, -e_2, ...``. On tori
with ``n <= 2`` the neighbour list keeps multiplicities, so the site of a
1-torus is its own neighbour ``2d`` times and on a 2-torus every edge is double.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import integrate, special

from .errors import (
    DimensionMismatchError,
    DivergentIntegralError,
    IncompatibleProjectionError,
    InvalidMassError,
)

Site = tuple


@dataclass(frozen=True)
class TorusSpec:
    """Discrete torus ``(Z/nZ)^d``, optionally with ``n = L**N``."""

    d: int
    n: int
    L: int | None = None
    N: int | None = None

    def __post_init__(self):
        if self.d < 1:
            raise DimensionMismatchError(f"dimension must be positive, got {self.d}")
        if self.n < 1:
            raise DimensionMismatchError(f"side must be positive, got {self.n}")
        if (self.L is None) != (self.N is None):
            raise DimensionMismatchError("L and N must be given together")
        if self.L is not None:
            if self.L < 2 or self.N < 1 or self.L**self.N != self.n:
                raise DimensionMismatchError(
                    f"need L >= 2, N >= 1 and L**N == n, got L={self.L}, N={self.N}, n={self.n}"
                )

    @classmethod
    def from_scale(cls, d: int, L: int, N: int) -> "TorusSpec":
        return cls(d=d, n=L**N, L=L, N=N)

    @property
    def volume(self) -> int:
        return self.n**self.d

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.d

    def reduce(self, site) -> Site:
        return tuple(int(c) % self.n for c in site)

    def sites(self) -> list:
        """All sites in C order (the order used by flat indices)."""
        return [tuple(int(c) for c in idx) for idx in np.ndindex(*self.shape)]

    def index(self, site) -> int:
        return int(np.ravel_multi_index(self.reduce(site), self.shape))


def unit_vectors(d: int) -> np.ndarray:
    """The ``2d`` signed unit vectors, shape ``(2d, d)``."""
    out = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        out[2 * i, i] = 1
        out[2 * i + 1, i] = -1
    return out


def neighbors(site, spec: TorusSpec | None = None) -> list:
    """Return ``x + e`` for every ``e`` in ``U``, reduced when ``spec`` is given."""
    site = tuple(int(c) for c in site)
    d = len(site)
    if spec is not None and spec.d != d:
        raise DimensionMismatchError(f"site has dimension {d}, torus has {spec.d}")
    out = []
    for e in unit_vectors(d):
        y = tuple(a + int(b) for a, b in zip(site, e))
        out.append(spec.reduce(y) if spec is not None else y)
    return out


# ---------------------------------------------------------------------------
# helpers for the two field representations


def _check_dense(f: np.ndarray, spec: TorusSpec | None) -> TorusSpec:
    f = np.asarray(f)
    if spec is None:
        if f.ndim == 0 or len(set(f.shape)) != 1:
            raise DimensionMismatchError(f"dense field must have shape (n,)*d, got {f.shape}")
        return TorusSpec(d=f.ndim, n=f.shape[0])
    if f.shape != spec.shape:
        raise DimensionMismatchError(f"field shape {f.shape} does not match torus {spec.shape}")
    return spec


def _sparse_dim(f: Mapping) -> int | None:
    dims = {len(k) for k in f}
    if len(dims) > 1:
        raise DimensionMismatchError("sites of mixed dimension in field")
    return dims.pop() if dims else None


def _sparse_get(f: Mapping, site, spec):
    return f.get(spec.reduce(site) if spec is not None else site, 0.0)


def _shift_dense(f: np.ndarray, e) -> np.ndarray:
    """``g_x = f_{x+e}`` on the torus."""
    axes = tuple(range(f.ndim))
    return np.roll(f, shift=tuple(-int(c) for c in e), axis=axes)


def gradient(f, e, spec: TorusSpec | None = None):
    """Forward difference ``(grad^e f)_x = f_{x+e} - f_x``."""
    if isinstance(f, Mapping):
        d = _sparse_dim(f)
        if d is None:
            return {}
        support = set(f)
        for x in f:
            y = tuple(a - int(b) for a, b in zip(x, e))
            support.add(spec.reduce(y) if spec is not None else y)
        out = {}
        for x in support:
            y = tuple(a + int(b) for a, b in zip(x, e))
            out[x] = _sparse_get(f, y, spec) - f.get(x, 0.0)
        return out
    f = np.asarray(f, dtype=float)
    _check_dense(f, spec)
    return _shift_dense(f, e) - f


def _combine(terms: list) -> object:
    if isinstance(terms[0], dict):
        out: dict = {}
        for sign, t in terms:
            for k, v in t.items():
                out[k] = out.get(k, 0.0) + sign * v
        return out
    return sum(sign * t for sign, t in terms)


def laplacian_apply(f, spec: TorusSpec | None = None, method: str = "stencil"):
    """Apply the lattice Laplacian.

    ``method`` selects ``"stencil"`` (``sum_{y~x} f_y - 2d f_x``), ``"forward"``
    (``sum_e grad^e f``) or ``"divergence"`` (``-1/2 sum_e grad^{-e} grad^e f``).
    All three are exact on integer-valued fields.
    """
    if isinstance(f, Mapping):
        d = _sparse_dim(f)
        if d is None:
            return {}
        if spec is not None and spec.d != d:
            raise DimensionMismatchError(f"field has dimension {d}, torus has {spec.d}")
    else:
        spec = _check_dense(f, spec)
        d = spec.d
        f = np.asarray(f, dtype=float)
    U = unit_vectors(d)
    if method == "stencil":
        if isinstance(f, Mapping):
            out: dict = {}
            for x, v in f.items():
                out[x] = out.get(x, 0.0) - 2 * d * v
                for y in neighbors(x, spec):
                    out[y] = out.get(y, 0.0) + v
            return out
        return sum(_shift_dense(f, e) for e in U) - 2 * d * f
    if method == "forward":
        return _combine([(1.0, gradient(f, e, spec)) for e in U])
    if method == "divergence":
        terms = [(-0.5, gradient(gradient(f, e, spec), -e, spec)) for e in U]
        return _combine(terms)
    raise ValueError(f"unknown Laplacian method {method!r}")


def gradient_norm_sq(f, spec: TorusSpec | None = None) -> float:
    """``|grad f|^2 = sum_x sum_{e in U} (f_{x+e} - f_x)^2``."""
    if isinstance(f, Mapping):
        d = _sparse_dim(f)
        if d is None:
            return 0.0
        return float(sum(sum(v * v for v in gradient(f, e, spec).values()) for e in unit_vectors(d)))
    f = np.asarray(f, dtype=float)
    spec = _check_dense(f, spec)
    return float(sum(np.sum((_shift_dense(f, e) - f) ** 2) for e in unit_vectors(spec.d)))


def laplacian_matrix(spec: TorusSpec) -> np.ndarray:
    """Dense ``Delta`` on the torus in flat C-order site indexing (multiplicities kept)."""
    V = spec.volume
    M = np.zeros((V, V))
    for i, x in enumerate(spec.sites()):
        M[i, i] -= 2 * spec.d
        for y in neighbors(x, spec):
            M[i, spec.index(y)] += 1.0
    return M


def _torus_eigenvalues(spec: TorusSpec) -> np.ndarray:
    """Eigenvalues of ``-Delta`` on the Fourier grid, shape ``spec.shape``."""
    k = 2.0 * np.pi * np.arange(spec.n) / spec.n
    one = 2.0 * (1.0 - np.cos(k))
    lam = np.zeros(spec.shape)
    for i in range(spec.d):
        shape = [1] * spec.d
        shape[i] = spec.n
        lam = lam + one.reshape(shape)
    return lam


def green_column(spec: TorusSpec, m2: float, method: str = "auto") -> np.ndarray:
    """``C(0, x)`` for ``C = (-Delta + m2)^{-1}``, as a dense array over the torus."""
    if not m2 > 0:
        raise InvalidMassError(f"torus Green function needs m2 > 0, got {m2}")
    if method == "auto":
        method = "spectral" if spec.n >= 8 else "dense"
    if method == "spectral":
        return np.fft.ifftn(1.0 / (_torus_eigenvalues(spec) + m2)).real
    if method == "dense":
        A = -laplacian_matrix(spec) + m2 * np.eye(spec.volume)
        rhs = np.zeros(spec.volume)
        rhs[0] = 1.0
        return np.linalg.solve(A, rhs).reshape(spec.shape)
    raise ValueError(f"unknown Green function method {method!r}")


def green_function(spec: TorusSpec, m2: float, method: str = "auto") -> np.ndarray:
    """Dense matrix ``(-Delta + m2)^{-1}`` in flat site indexing."""
    if not m2 > 0:
        raise InvalidMassError(f"torus Green function needs m2 > 0, got {m2}")
    if method == "auto":
        method = "spectral" if spec.n >= 8 else "dense"
    if method == "dense":
        A = -laplacian_matrix(spec) + m2 * np.eye(spec.volume)
        C = np.linalg.inv(A)
        return 0.5 * (C + C.T)
    col = green_column(spec, m2, method)
    coords = np.array(np.unravel_index(np.arange(spec.volume), spec.shape)).T
    diff = (coords[:, None, :] - coords[None, :, :]) % spec.n
    return col[tuple(diff[..., i] for i in range(spec.d))]


def green_at_origin_Zd(d: int) -> float:
    """``(-Delta_{Z^d})^{-1}_{00}`` for ``d >= 3``.

    Schwinger parametrisation of the momentum integral: each coordinate gives
    ``(2 pi)^{-1} int e^{-2t(1 - cos k)} dk = e^{-2t} I_0(2t)``, so the value is
    ``int_0^inf (e^{-2t} I_0(2t))^d dt``.
    """
    if d <= 2:
        raise DivergentIntegralError(f"(-Delta)^-1_00 diverges on Z^{d}")

    def f(t):
        return special.ive(0, 2.0 * t) ** d

    head, _ = integrate.quad(f, 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)
    # on [1, inf) substitute t = 1/s^2 to tame the t^{-d/2} tail
    def g(s):
        t = 1.0 / (s * s)
        return f(t) * 2.0 / s**3

    tail, _ = integrate.quad(g, 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=400)
    return head + tail


# ---------------------------------------------------------------------------
# projections


def project_site(x, n: int) -> Site:
    """Reduce a site mod ``n`` (Euclidean remainder)."""
    return tuple(int(c) % n for c in x)


def project_field(f, n: int, source_n: int | None = None):
    """Fold a field onto the torus of side ``n``: ``h_x = sum_y f_{x + n y}``.

    ``f`` may be a dict on ``Z^d`` or a torus (``source_n`` given), or a dense
    torus array. A torus source must have side divisible by ``n``.
    """
    if n < 1:
        raise IncompatibleProjectionError(f"target side must be positive, got {n}")
    if isinstance(f, Mapping):
        if source_n is not None and source_n % n:
            raise IncompatibleProjectionError(f"side {n} does not divide {source_n}")
        out: dict = {}
        for x, v in f.items():
            y = project_site(x, n)
            out[y] = out.get(y, 0.0) + v
        return out
    f = np.asarray(f)
    src = _check_dense(f, None)
    if src.n % n:
        raise IncompatibleProjectionError(f"side {n} does not divide {src.n}")
    k = src.n // n
    g = f.reshape(sum(((k, n) for _ in range(src.d)), ()))
    return g.sum(axis=tuple(range(0, 2 * src.d, 2)))


def dense_from_sparse(f: Mapping, spec: TorusSpec) -> np.ndarray:
    out = np.zeros(spec.shape)
    for x, v in f.items():
        out[spec.reduce(x)] += v
    return out
