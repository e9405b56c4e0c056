"""Finite Grassmann algebra with numerically evaluated coefficients.

A :class:`GrassmannForm` stores one coefficient array per monomial. Monomials
are bitmasks over the generators of an :class:`Algebra`, always in the
canonical order (layer, site, unbarred before barred). Coefficient arrays
share a batch shape: one entry per boson configuration (quadrature node,
external field point, ...). Forms are therefore "evaluated at concrete boson
points", and integrating over bosons is a weighted sum over the batch axis.

Conventions. ``psi = (2 pi i)^{-1/2} d phi`` gives ``psi psibar = -(1/pi) du dv``
for ``phi = u + i v``, so the Berezin integral of a form is ``(-1/pi)^n`` times
the Lebesgue integral of its top coefficient. With this,
``top(exp(-psi A psibar)) = (-1)^n det A`` and ``E_C 1 = 1``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import CapabilityError, ConfigError, DimensionMismatchError

MAX_SITES = 3
# builders flagged ``gaussian`` (exp of a quadratic form) are exact at low order
MAX_GAUSSIAN_SITES = 6
MAX_NODES = 5_000_000


@dataclass(frozen=True)
class GeneratorIndex:
    site: int
    barred: bool
    layer: int = 0

    @property
    def key(self) -> tuple:
        return (self.layer, self.site, self.barred)


class Algebra:
    """Ordered generator set; bit ``i`` of a mask is generator ``i``."""

    def __init__(self, generators: Sequence[GeneratorIndex]):
        gens = tuple(sorted(generators, key=lambda g: g.key))
        if len(set(gens)) != len(gens):
            raise ConfigError("repeated generator")
        self.generators = gens
        self.position = {g: i for i, g in enumerate(gens)}
        self.size = len(gens)
        self.full = (1 << self.size) - 1

    @classmethod
    def for_sites(cls, nsites: int, layer: int = 0) -> "Algebra":
        return cls([GeneratorIndex(x, b, layer) for x in range(nsites) for b in (False, True)])

    def extend(self, nsites: int) -> tuple:
        """Append a fresh layer of ``nsites`` generator pairs; returns ``(algebra, layer)``."""
        layer = 1 + max((g.layer for g in self.generators), default=-1)
        new = self.generators + tuple(GeneratorIndex(x, b, layer) for x in range(nsites) for b in (False, True))
        return Algebra(new), layer

    def layer_mask(self, layer: int) -> int:
        m = 0
        for g, i in self.position.items():
            if g.layer == layer:
                m |= 1 << i
        return m

    def bit(self, g: GeneratorIndex) -> int:
        return 1 << self.position[g]

    def __eq__(self, other):
        return isinstance(other, Algebra) and self.generators == other.generators

    def __hash__(self):
        return hash(self.generators)

    def __repr__(self):
        return f"Algebra({self.size} generators)"


@lru_cache(maxsize=1 << 16)
def wedge_sign(a: int, b: int) -> int:
    """Sign of ``psi^A psi^B = sign * psi^{A|B}`` for disjoint canonical monomials."""
    count = 0
    m = b
    while m:
        low = m & -m
        count += bin(a & ~((low << 1) - 1)).count("1")
        m ^= low
    return -1 if count & 1 else 1


def _popcount(m: int) -> int:
    return bin(m).count("1")


class GrassmannForm:
    """Element of the exterior algebra with batched complex coefficients."""

    __slots__ = ("algebra", "terms", "boson_config")

    def __init__(self, algebra: Algebra, terms: dict | None = None, boson_config=None):
        self.algebra = algebra
        self.terms = {} if terms is None else terms
        self.boson_config = boson_config

    # construction
    @classmethod
    def scalar(cls, algebra: Algebra, value=1.0, boson_config=None) -> "GrassmannForm":
        return cls(algebra, {0: np.asarray(value, dtype=complex)}, boson_config)

    @classmethod
    def generator(cls, algebra: Algebra, g: GeneratorIndex) -> "GrassmannForm":
        return cls(algebra, {algebra.bit(g): np.asarray(1.0 + 0j)})

    @classmethod
    def zero(cls, algebra: Algebra) -> "GrassmannForm":
        return cls(algebra, {})

    # inspection
    @property
    def degree0(self):
        return self.terms.get(0, np.asarray(0j))

    def coefficient(self, gens: Sequence[GeneratorIndex]):
        """Coefficient of ``psi_{g_1} ... psi_{g_k}`` in the given order."""
        mask, sign = 0, 1
        for g in gens:
            b = self.algebra.bit(g)
            if mask & b:
                return np.asarray(0j)
            sign *= wedge_sign(mask, b)
            mask |= b
        return sign * self.terms.get(mask, np.asarray(0j))

    def top(self):
        return self.terms.get(self.algebra.full, np.asarray(0j))

    def is_even(self) -> bool:
        return all(_popcount(m) % 2 == 0 for m in self.terms)

    def is_odd(self) -> bool:
        return all(_popcount(m) % 2 == 1 for m in self.terms)

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(v))) for v in self.terms.values()), default=0.0)

    def _check(self, other: "GrassmannForm"):
        if self.algebra != other.algebra:
            raise DimensionMismatchError("forms belong to different algebras")
        if self.boson_config is not None and other.boson_config is not None and self.boson_config is not other.boson_config:
            raise ConfigError("forms were evaluated at different boson configurations")

    def _config(self, other):
        return self.boson_config if self.boson_config is not None else other.boson_config

    # algebra
    def __add__(self, other):
        if not isinstance(other, GrassmannForm):
            other = GrassmannForm.scalar(self.algebra, other)
        self._check(other)
        out = dict(self.terms)
        for m, v in other.terms.items():
            out[m] = out[m] + v if m in out else v
        return GrassmannForm(self.algebra, out, self._config(other))

    __radd__ = __add__

    def __neg__(self):
        return GrassmannForm(self.algebra, {m: -v for m, v in self.terms.items()}, self.boson_config)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, GrassmannForm):
            return wedge(self, other)
        other = np.asarray(other)
        return GrassmannForm(self.algebra, {m: v * other for m, v in self.terms.items()}, self.boson_config)

    def __rmul__(self, other):
        if isinstance(other, GrassmannForm):
            return wedge(other, self)
        return self.__mul__(other)

    def __repr__(self):
        return f"GrassmannForm({len(self.terms)} terms over {self.algebra})"


def wedge(F: GrassmannForm, G: GrassmannForm) -> GrassmannForm:
    F._check(G)
    out: dict = {}
    for a, x in F.terms.items():
        for b, y in G.terms.items():
            if a & b:
                continue
            v = x * y if wedge_sign(a, b) > 0 else -(x * y)
            m = a | b
            out[m] = out[m] + v if m in out else v
    return GrassmannForm(F.algebra, out, F._config(G))


def nilpotent_part(F: GrassmannForm) -> GrassmannForm:
    return GrassmannForm(F.algebra, {m: v for m, v in F.terms.items() if m}, F.boson_config)


def exp_form(F: GrassmannForm) -> GrassmannForm:
    """``exp(F) = e^{F_0} sum_k N^k / k!`` for even ``F`` with nilpotent part ``N``."""
    if not F.is_even():
        raise ConfigError("exp of a form needs an even argument")
    Nf = nilpotent_part(F)
    acc = GrassmannForm.scalar(F.algebra, 1.0, F.boson_config)
    power = acc
    for k in range(1, F.algebra.size // 2 + 1):
        power = wedge(power, Nf) * (1.0 / k)
        if not power.terms:
            break
        acc = acc + power
    return acc * np.exp(F.degree0)


def apply_smooth_function(derivatives: Callable, forms: Sequence[GrassmannForm]) -> GrassmannForm:
    """``f(F) = sum_alpha f^{(alpha)}(F_0) (F - F_0)^alpha / alpha!`` for commuting even forms.

    ``derivatives(alpha, values)`` returns the mixed partial derivative of
    multi-index ``alpha`` at the degree-0 parts ``values``.
    """
    forms = list(forms)
    if not forms:
        raise ConfigError("need at least one form")
    for F in forms:
        if not F.is_even():
            raise ConfigError("functional calculus needs even forms")
    alg = forms[0].algebra
    K = alg.size // 2
    base = [F.degree0 for F in forms]
    nil = [nilpotent_part(F) for F in forms]
    powers = []
    for Nf in nil:
        p = [GrassmannForm.scalar(alg, 1.0)]
        for _ in range(K):
            nxt = wedge(p[-1], Nf)
            if not nxt.terms:
                break
            p.append(nxt)
        powers.append(p)
    out = GrassmannForm.zero(alg)
    ranges = [range(len(p)) for p in powers]
    for alpha in itertools.product(*ranges):
        if sum(alpha) > K:
            continue
        term = GrassmannForm.scalar(alg, 1.0)
        for j, a in enumerate(alpha):
            if a:
                term = wedge(term, powers[j][a])
        if not term.terms:
            continue
        coef = np.asarray(derivatives(alpha, base)) / math.prod(math.factorial(a) for a in alpha)
        out = out + term * coef
    return out


def apply_function(derivative: Callable, F: GrassmannForm) -> GrassmannForm:
    """One-variable functional calculus; ``derivative(k, x)`` is ``f^{(k)}(x)``."""
    return apply_smooth_function(lambda alpha, v: derivative(alpha[0], v[0]), [F])


def berezin_top(F: GrassmannForm):
    """Top coefficient with the per-pair factor ``-1/pi`` (the Lebesgue density to integrate)."""
    n = F.algebra.size // 2
    return F.top() * (-1.0 / math.pi) ** n


# ---------------------------------------------------------------------------
# quadrature


def _validate_covariance(C) -> tuple:
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DimensionMismatchError("covariance must be square")
    if not np.array_equal(C, C.T):
        if np.max(np.abs(C - C.T)) > 1e-12 * max(1.0, np.max(np.abs(C))):
            raise ConfigError("covariance must be symmetric")
        C = 0.5 * (C + C.T)
    try:
        np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise ConfigError("covariance must be positive definite") from exc
    A = np.linalg.inv(C)
    A = 0.5 * (A + A.T)
    return C, A


@dataclass(frozen=True)
class CovarianceMatrix:
    C: np.ndarray
    A: np.ndarray = field(init=False)

    def __post_init__(self):
        C, A = _validate_covariance(self.C)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "A", A)

    @property
    def nsites(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class QuadratureScheme:
    """Tensor Gauss-Hermite rule for ``int h(phi) exp(-(u B u + v B v)) du dv``.

    Nodes live in the eigenbasis of ``B``; product weights below ``prune``
    times the largest are dropped (``prune = 0`` keeps the full tensor grid,
    which is exact for polynomials of degree ``2 order - 1`` per coordinate).
    """

    order: int
    reference: np.ndarray
    prune: float = 1e-20
    limit: int | None = None

    def __post_init__(self):
        B = np.asarray(self.reference, dtype=float)
        object.__setattr__(self, "reference", 0.5 * (B + B.T))
        if self.order < 1:
            raise ConfigError("quadrature order must be positive")

    @property
    def nsites(self) -> int:
        return self.reference.shape[0]

    def _basis(self):
        lam, Q = np.linalg.eigh(self.reference)
        if np.any(lam <= 0):
            raise ConfigError("reference matrix must be positive definite")
        return lam, Q

    def node_indices(self, limit: int | None = None) -> tuple:
        """Multi-indices ``(M, 2n)`` of kept nodes and their log weights.

        Every kept partial index has a kept completion, so the row count only
        grows; exceeding ``limit`` at any stage raises :class:`CapabilityError`.
        """
        x, w = np.polynomial.hermite.hermgauss(self.order)
        lw = np.log(w)
        D = 2 * self.nsites
        cut = -math.inf if self.prune <= 0 else math.log(self.prune) + D * lw.max()
        idx = np.zeros((1, 0), dtype=np.int16)
        acc = np.zeros(1)
        for dim in range(D):
            rest = (D - dim - 1) * lw.max()
            tot = acc[:, None] + lw[None, :]
            keep = tot + rest >= cut
            rows, cols = np.nonzero(keep)
            idx = np.hstack([idx[rows], cols[:, None].astype(np.int16)])
            acc = tot[rows, cols]
            if limit is not None and rows.size > limit:
                raise CapabilityError(f"more than {limit} quadrature nodes (order {self.order}, "
                                      f"{D} real dimensions); lower the order or use method='mc'")
        return idx, acc

    def chunks(self, size: int):
        """Yield ``(phi, phibar, log_weight)`` node blocks; ``phi`` has shape ``(n, m)``.

        The log weight includes the Jacobian ``det(B)^{-1}`` of the rotation.
        """
        lam, Q = self._basis()
        x, _ = np.polynomial.hermite.hermgauss(self.order)
        idx, lw = self.node_indices(self.limit)
        n = self.nsites
        T = Q / np.sqrt(lam)[None, :]
        logjac = -float(np.sum(np.log(lam)))
        for s in range(0, idx.shape[0], size):
            block = idx[s : s + size]
            pts = x[block]
            u = T @ pts[:, :n].T
            v = T @ pts[:, n:].T
            yield u + 1j * v, u - 1j * v, lw[s : s + size] + logjac

    @property
    def node_count(self) -> int:
        return int(self.node_indices(self.limit)[0].shape[0])


# ---------------------------------------------------------------------------
# fields and super-expectations


@dataclass
class Fields:
    """Boson values and fermion forms handed to form builders.

    ``phi`` and ``phibar`` have shape ``(n, *batch)``; ``psi[x]`` and
    ``psibar[x]`` are forms over ``algebra``.
    """

    algebra: Algebra
    phi: np.ndarray
    phibar: np.ndarray
    psi: list
    psibar: list

    @property
    def nsites(self) -> int:
        return self.phi.shape[0]

    @property
    def batch_shape(self) -> tuple:
        return self.phi.shape[1:]

    @classmethod
    def external(cls, phi, phibar=None, with_fermions: bool = False) -> "Fields":
        """External fields at given boson values; fermions are generators or zero."""
        phi = np.asarray(phi, dtype=complex)
        phibar = np.conj(phi) if phibar is None else np.asarray(phibar, dtype=complex)
        n = phi.shape[0]
        if with_fermions:
            alg = Algebra.for_sites(n)
            psi = [GrassmannForm.generator(alg, GeneratorIndex(x, False)) for x in range(n)]
            psibar = [GrassmannForm.generator(alg, GeneratorIndex(x, True)) for x in range(n)]
        else:
            alg = Algebra([])
            psi = [GrassmannForm.zero(alg) for _ in range(n)]
            psibar = [GrassmannForm.zero(alg) for _ in range(n)]
        return cls(alg, phi, phibar, psi, psibar)

    @classmethod
    def zero(cls, nsites: int) -> "Fields":
        return cls.external(np.zeros(nsites, dtype=complex))


def _lift(F: GrassmannForm, algebra: Algebra, nb: int) -> GrassmannForm:
    """Re-home ``F`` into a larger algebra whose low bits are ``F``'s generators.

    Coefficients gain a trailing node axis; ``nb`` is the batch rank of ``F``.
    """
    out = {}
    for m, v in F.terms.items():
        v = np.asarray(v)
        out[m] = v if v.ndim == 0 else v[..., None]
    return GrassmannForm(algebra, out)


def _fermion_gaussian(A: np.ndarray, algebra: Algebra, layer: int) -> dict:
    """Terms ``{mask: coef}`` of ``exp(-sum_x psi_x (A psibar)_x)`` in one layer."""
    n = A.shape[0]
    S = GrassmannForm.zero(algebra)
    for x in range(n):
        px = GrassmannForm.generator(algebra, GeneratorIndex(x, False, layer))
        for y in range(n):
            if A[x, y] != 0:
                py = GrassmannForm.generator(algebra, GeneratorIndex(y, True, layer))
                S = S + wedge(px, py) * A[x, y]
    return {m: complex(v) for m, v in exp_form(-S).terms.items()}


def _reference_matrix(A: np.ndarray, hint, reference) -> np.ndarray:
    if reference is not None:
        return np.asarray(reference, dtype=float)
    if hint is not None:
        B = A + np.asarray(hint, dtype=float)
        B = 0.5 * (B + B.T)
        if np.all(np.linalg.eigvalsh(B) > 1e-8 * np.max(np.abs(np.linalg.eigvalsh(A)))):
            return B
    return A


def _check_size(n: int, builder=None) -> None:
    limit = MAX_GAUSSIAN_SITES if getattr(builder, "gaussian", False) else MAX_SITES
    if n > limit:
        raise CapabilityError(f"super-expectations support at most {limit} sites here, got {n}")


def _scheme(order: int, B: np.ndarray, prune: float) -> "QuadratureScheme":
    return QuadratureScheme(order, B, prune, MAX_NODES)


def _node_budget(batch: int, budget: int = 1_500_000, generators: int = 0) -> int:
    """Nodes per chunk so that one dense coefficient array holds about ``budget`` entries."""
    return max(1, budget // (max(batch, 1) << generators))


def convolve(C, builder: Callable, ext: Fields, order: int = 40, reference=None, prune: float = 1e-20,
             budget: int = 1_500_000) -> GrassmannForm:
    """``E_C theta F`` as a form in the external fields.

    ``builder(fields)`` returns the form ``F`` evaluated at ``fields``. It may
    carry an attribute ``reference_shift``, a matrix ``Q`` such that the
    quadrature uses the Gaussian of ``A + Q`` (when positive definite) as its
    weight; a good ``Q`` is the quadratic part of ``-log F`` plus a term
    that mimics any quartic decay. A true ``gaussian`` attribute marks ``F``
    as the exponential of a quadratic form and raises the site limit.
    """
    cov = C if isinstance(C, CovarianceMatrix) else CovarianceMatrix(np.asarray(C, dtype=float))
    n = cov.nsites
    if ext.nsites != n:
        raise DimensionMismatchError(f"external fields have {ext.nsites} sites, covariance {n}")
    _check_size(n, builder)
    A = cov.A
    B = _reference_matrix(A, getattr(builder, "reference_shift", None), reference)
    scheme = _scheme(order, B, prune)
    alg, layer = ext.algebra.extend(n)
    eta_mask = alg.layer_mask(layer)
    gauss = _fermion_gaussian(A, alg, layer)
    nb = len(ext.batch_shape)
    lifted_psi = [_lift(p, alg, nb) for p in ext.psi]
    lifted_psibar = [_lift(p, alg, nb) for p in ext.psibar]
    eta = [GrassmannForm.generator(alg, GeneratorIndex(x, False, layer)) for x in range(n)]
    etabar = [GrassmannForm.generator(alg, GeneratorIndex(x, True, layer)) for x in range(n)]
    psi = [lp + e for lp, e in zip(lifted_psi, eta)]
    psibar = [lp + e for lp, e in zip(lifted_psibar, etabar)]
    D = A - B
    berezin = (-1.0 / math.pi) ** n
    batch = int(np.prod(ext.batch_shape)) if nb else 1
    result: dict = {}
    ext_phi = ext.phi[..., None]
    ext_phibar = ext.phibar[..., None]
    for xi, xibar, lw in scheme.chunks(_node_budget(batch, budget, len(alg.generators))):
        m = xi.shape[1]
        shape = (n,) + (1,) * nb + (m,)
        xi_b = xi.reshape(shape)
        xibar_b = xibar.reshape(shape)
        fields = Fields(alg, ext_phi + xi_b, ext_phibar + xibar_b, psi, psibar)
        F = builder(fields)
        quad = np.einsum("xm,xy,ym->m", xi, D, xibar).real if np.any(D) else 0.0
        w = np.exp(lw - quad) * berezin
        for M, coef in F.terms.items():
            T = M & eta_mask
            R = eta_mask ^ T
            g = gauss.get(R)
            if g is None:
                continue
            sign = wedge_sign(R, M)
            S = M & ~eta_mask
            val = np.sum(np.asarray(coef) * w, axis=-1) * (sign * g)
            result[S] = result[S] + val if S in result else val
    out = GrassmannForm(ext.algebra, result)
    return out


def super_expectation(C, builder: Callable, order: int = 40, observables: Callable | None = None,
                      reference=None, method: str = "quadrature", prune: float = 1e-20, samples: int = 200_000,
                      seed: int = 0, budget: int = 1_500_000):
    """``E_C F`` (complex), or an array of ``E_C(F O_k)`` when ``observables`` is given.

    ``observables(fields)`` returns an array of shape ``(k, m)`` of boson
    functions evaluated at the nodes. ``method='mc'`` samples the reference
    Gaussian instead of using tensor quadrature and is the only option for
    large orders on three sites.
    """
    cov = C if isinstance(C, CovarianceMatrix) else CovarianceMatrix(np.asarray(C, dtype=float))
    n = cov.nsites
    _check_size(n, builder)
    if method == "mc":
        return super_expectation_mc(cov, builder, observables, reference, samples, seed)[0]
    if method != "quadrature":
        raise ConfigError(f"unknown method {method!r}")
    A = cov.A
    B = _reference_matrix(A, getattr(builder, "reference_shift", None), reference)
    scheme = _scheme(order, B, prune)
    alg = Algebra.for_sites(n)
    gauss = _fermion_gaussian(A, alg, 0)
    psi = [GrassmannForm.generator(alg, GeneratorIndex(x, False)) for x in range(n)]
    psibar = [GrassmannForm.generator(alg, GeneratorIndex(x, True)) for x in range(n)]
    D = A - B
    berezin = (-1.0 / math.pi) ** n
    total = None
    for xi, xibar, lw in scheme.chunks(_node_budget(1, budget, len(alg.generators))):
        fields = Fields(alg, xi, xibar, psi, psibar)
        top = _top_with_gaussian(builder(fields), gauss, alg.full)
        quad = np.einsum("xm,xy,ym->m", xi, D, xibar).real if np.any(D) else 0.0
        w = np.exp(lw - quad) * berezin * top
        if observables is None:
            part = np.sum(w)
        else:
            part = np.asarray(observables(fields)) @ w
        total = part if total is None else total + part
    return total


def _top_with_gaussian(F: GrassmannForm, gauss: dict, full: int):
    top = 0j
    for M, coef in F.terms.items():
        R = full ^ M
        g = gauss.get(R)
        if g is None:
            continue
        top = top + np.asarray(coef) * (wedge_sign(R, M) * g)
    return top


def super_expectation_mc(C, builder: Callable, observables: Callable | None = None, reference=None,
                         samples: int = 200_000, seed: int = 0, chunk: int = 50_000) -> tuple:
    """Monte Carlo super-expectation with complex Gaussian proposals; returns ``(value, std_error)``."""
    from .walk import RngStream

    cov = C if isinstance(C, CovarianceMatrix) else CovarianceMatrix(np.asarray(C, dtype=float))
    n = cov.nsites
    _check_size(n, builder)
    A = cov.A
    B = _reference_matrix(A, getattr(builder, "reference_shift", None), reference)
    Lc = np.linalg.cholesky(np.linalg.inv(B) / 2.0)
    alg = Algebra.for_sites(n)
    gauss = _fermion_gaussian(A, alg, 0)
    psi = [GrassmannForm.generator(alg, GeneratorIndex(x, False)) for x in range(n)]
    psibar = [GrassmannForm.generator(alg, GeneratorIndex(x, True)) for x in range(n)]
    D = A - B
    # int h e^{-phi B phibar} du dv = pi^n det(B)^{-1} E[h]
    const = (-1.0) ** n / float(np.prod(np.linalg.eigvalsh(B)))
    vals = []
    for k, s in enumerate(range(0, samples, chunk)):
        m = min(chunk, samples - s)
        gen = RngStream(seed, 7).generator(k)
        u = Lc @ gen.standard_normal((n, m))
        v = Lc @ gen.standard_normal((n, m))
        xi, xibar = u + 1j * v, u - 1j * v
        fields = Fields(alg, xi, xibar, psi, psibar)
        top = _top_with_gaussian(builder(fields), gauss, alg.full)
        quad = np.einsum("xm,xy,ym->m", xi, D, xibar).real if np.any(D) else 0.0
        h = const * np.exp(-quad) * top
        if observables is not None:
            h = np.asarray(observables(fields)) * h
        vals.append(h)
    h = np.concatenate(vals, axis=-1)
    return h.mean(axis=-1), h.std(axis=-1, ddof=1) / math.sqrt(h.shape[-1])


def quadrature_convergence(C, builder: Callable, order: int, observables: Callable | None = None) -> float:
    """Largest change in the result when the quadrature order is doubled."""
    a = super_expectation(C, builder, order, observables)
    b = super_expectation(C, builder, 2 * order, observables)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def theta_shift(builder: Callable, ext: Fields, xi, xibar=None, eta_algebra: Algebra | None = None):
    """Evaluate ``theta F`` at one shift ``xi`` (batched like ``ext``), with fresh fermions ``eta``.

    Returns ``(form, algebra, layer)`` where the form lives in the algebra of
    ``ext`` extended by the ``eta`` layer.
    """
    xi = np.asarray(xi, dtype=complex)
    xibar = np.conj(xi) if xibar is None else np.asarray(xibar, dtype=complex)
    n = ext.nsites
    alg, layer = ext.algebra.extend(n)
    nb = len(ext.batch_shape)
    psi = [GrassmannForm(alg, dict(p.terms)) + GrassmannForm.generator(alg, GeneratorIndex(x, False, layer))
           for x, p in enumerate(ext.psi)]
    psibar = [GrassmannForm(alg, dict(p.terms)) + GrassmannForm.generator(alg, GeneratorIndex(x, True, layer))
              for x, p in enumerate(ext.psibar)]
    del nb
    fields = Fields(alg, ext.phi + xi, ext.phibar + xibar, psi, psibar)
    return builder(fields), alg, layer


@dataclass(frozen=True)
class ConvolutionReport:
    points: np.ndarray
    direct: np.ndarray
    composed: np.ndarray
    max_abs_diff: float


def convolution_property_check(C1, C2, builder: Callable, points, order: int = 40,
                               prune: float = 1e-20) -> ConvolutionReport:
    """Compare ``E_{C1+C2} theta F`` with ``E_{C2} theta (E_{C1} theta F)`` at external boson points.

    ``points`` has shape ``(n, P)``; external fermions are set to zero after
    the composition, so the inner convolution keeps its full fermion content.
    """
    C1 = np.asarray(C1, dtype=float)
    C2 = np.asarray(C2, dtype=float)
    points = np.asarray(points, dtype=complex)
    ext = Fields.external(points)
    direct = convolve(C1 + C2, builder, ext, order, prune=prune).degree0

    def inner(fields):
        return convolve(C1, builder, fields, order, prune=prune)

    composed = convolve(C2, inner, ext, order, prune=prune).degree0
    direct = np.broadcast_to(direct, points.shape[1:])
    composed = np.broadcast_to(composed, points.shape[1:])
    return ConvolutionReport(points, direct, composed, float(np.max(np.abs(direct - composed))))
