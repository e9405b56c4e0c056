"""Field-dependent norms on local forms and the initial polymer coordinate.

Forms local to a small set are expanded around a boson point ``phi`` as
truncated jets: polynomials in the increments ``(dphi, dphibar)`` and the
fermion generators, keeping total degree at most ``p_N``. The ``T_phi``
seminorm is evaluated by the coefficient sum

    ||F||_{T_phi} = sum_m |c_m(phi)| h^{deg m},

which is exact for single-site forms and an upper bound for forms spread
over several sites. Test-function norms take discrete gradients on the
torus, and the regulator sups run over finite field grids (lower bounds).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog

from .errors import ConfigError, DomainError
from .lattice import TorusSpec, laplacian_matrix, unit_vectors

EXP_BITS = 4


@dataclass(frozen=True)
class NormParams:
    """``h0`` is the norm parameter (either ``ell0`` or ``k0 g~0^{-1/4}``)."""

    h0: float = 1.0
    p_phi: int = 4
    p_N: int = 10
    t: float = 1.0

    def __post_init__(self):
        if not self.h0 >= 1:
            raise ConfigError(f"h0 must be at least 1, got {self.h0}")
        if self.p_phi < 4:
            raise ConfigError(f"p_phi must be at least 4, got {self.p_phi}")
        if self.p_N < 10:
            raise ConfigError(f"p_N must be at least 10, got {self.p_N}")
        if self.p_N >= 1 << EXP_BITS:
            raise ConfigError(f"p_N must be below {1 << EXP_BITS}")
        if not 0 < self.t <= 1:
            raise ConfigError(f"regulator power t must lie in (0, 1], got {self.t}")


@dataclass(frozen=True)
class WNormParams:
    g_tilde: float
    a: float = 0.1

    def __post_init__(self):
        if not self.g_tilde > 0:
            raise ConfigError("g_tilde must be positive")
        if not self.a > 0:
            raise ConfigError("a must be positive")

    def f0(self, size: int, d: int) -> float:
        return self.a * max(size - 2 ** d, 0)


# ---------------------------------------------------------------------------
# jets


def small_set(spec: TorusSpec, x) -> list:
    """Flat indices of ``x^box = {y : |y - x|_inf <= 2^d - 1}`` on the torus."""
    x = np.asarray(spec.reduce(x if isinstance(x, tuple) else spec.sites()[int(x)]))
    r = 2 ** spec.d - 1
    out = set()
    for off in itertools.product(range(-r, r + 1), repeat=spec.d):
        out.add(spec.index(spec.reduce(tuple(x + np.asarray(off)))))
    return sorted(out)


class JetSpace:
    """All monomials of total degree ``<= p`` in ``2k`` boson and ``2k`` fermion variables.

    Variable ``2i`` is ``phi`` at local site ``i`` and ``2i + 1`` is ``phibar``;
    fermion bit ``2i`` is ``psi_i`` and ``2i + 1`` is ``psibar_i`` (the
    canonical order). A key packs boson exponents above the fermion mask.
    """

    def __init__(self, sites, p: int):
        self.sites = list(sites)
        self.local = {y: i for i, y in enumerate(self.sites)}
        self.k = len(self.sites)
        self.p = p
        nb = nf = 2 * self.k
        self.nb, self.nf = nb, nf
        keys, degs = [], []
        for f in range(min(nf, p) + 1):
            for fs in itertools.combinations(range(nf), f):
                mask = sum(1 << b for b in fs)
                for b in range(p - f + 1):
                    for combo in itertools.combinations_with_replacement(range(nb), b):
                        e = 0
                        for v in combo:
                            e += 1 << (EXP_BITS * v)
                        keys.append((e << nf) | mask)
                        degs.append(b + f)
        keys = np.asarray(keys, dtype=np.int64)
        order = np.argsort(keys)
        self.keys = keys[order]
        self.deg = np.asarray(degs, dtype=np.int64)[order]
        self.fmask = self.keys & ((1 << nf) - 1)
        self.size = self.keys.size
        self._maps: dict = {}

    def key(self, exps, mask: int = 0) -> int:
        e = 0
        for v, a in enumerate(exps):
            e += int(a) << (EXP_BITS * v)
        return (e << self.nf) | mask

    def index(self, key: int) -> int:
        i = int(np.searchsorted(self.keys, key))
        if i >= self.size or self.keys[i] != key:
            raise ConfigError("monomial outside the jet space")
        return i

    def decode(self, i: int) -> tuple:
        key = int(self.keys[i])
        mask = key & ((1 << self.nf) - 1)
        e = key >> self.nf
        exps = tuple((e >> (EXP_BITS * v)) & ((1 << EXP_BITS) - 1) for v in range(self.nb))
        return exps, mask

    def term_map(self, i: int) -> tuple:
        """For monomial ``t = keys[i]``: arrays ``(src, dst, sign)`` with ``src * t = sign * dst``.

        ``src`` is sorted by degree; ``bounds[k]`` starts degree ``k``.
        """
        hit = self._maps.get(i)
        if hit is not None:
            return hit
        kt = int(self.keys[i])
        mt = kt & ((1 << self.nf) - 1)
        dt = int(self.deg[i])
        ok = (self.deg + dt <= self.p) & ((self.fmask & mt) == 0)
        src = np.nonzero(ok)[0]
        src = src[np.argsort(self.deg[src], kind="stable")]
        dst = np.searchsorted(self.keys, self.keys[src] + kt)
        parity = np.zeros(src.size, dtype=np.int64)
        sm = self.fmask[src]
        b = 0
        m = mt
        while m:
            if m & 1:
                parity += np.bitwise_count(sm >> (b + 1)).astype(np.int64)
            m >>= 1
            b += 1
        sign = np.where(parity & 1, -1.0, 1.0)
        bounds = np.searchsorted(self.deg[src], np.arange(self.p + 2))
        out = (src, dst, sign, bounds)
        if len(self._maps) > 256:
            self._maps.clear()
        self._maps[i] = out
        return out


@lru_cache(maxsize=16)
def jet_space(sites: tuple, p: int) -> JetSpace:
    return JetSpace(sites, p)


class Jet:
    """Truncated expansion of a form about a boson point; ``coef`` has shape ``(size, *batch)``."""

    __slots__ = ("space", "coef")

    def __init__(self, space: JetSpace, coef: np.ndarray):
        self.space = space
        self.coef = coef

    @classmethod
    def zeros(cls, space: JetSpace, batch=()) -> "Jet":
        return cls(space, np.zeros((space.size,) + tuple(batch), dtype=complex))

    @classmethod
    def constant(cls, space: JetSpace, value, batch=()) -> "Jet":
        value = np.asarray(value, dtype=complex)
        batch = np.broadcast_shapes(tuple(batch), value.shape)
        J = cls.zeros(space, batch)
        J.coef[0] = value
        return J

    @property
    def batch(self) -> tuple:
        return self.coef.shape[1:]

    @property
    def degree0(self) -> np.ndarray:
        return self.coef[0]

    def _lift(self, other):
        if isinstance(other, Jet):
            return other.coef
        J = Jet.constant(self.space, other, self.batch)
        return J.coef

    def __add__(self, other):
        o = self._lift(other)
        return Jet(self.space, self.coef + o)

    __radd__ = __add__

    def __sub__(self, other):
        return Jet(self.space, self.coef - self._lift(other))

    def __rsub__(self, other):
        return Jet(self.space, self._lift(other) - self.coef)

    def __neg__(self):
        return Jet(self.space, -self.coef)

    def __mul__(self, other):
        if isinstance(other, Jet):
            return jet_multiply(self, other)
        return Jet(self.space, self.coef * np.asarray(other))

    def __rmul__(self, other):
        if isinstance(other, Jet):
            return jet_multiply(other, self)
        return Jet(self.space, self.coef * np.asarray(other))

    def support(self) -> np.ndarray:
        a = np.abs(self.coef)
        if a.ndim > 1:
            a = a.reshape(a.shape[0], -1).max(axis=1)
        return np.nonzero(a > 0)[0]

    def norm(self, h: float) -> np.ndarray:
        """Coefficient-sum ``T_phi`` seminorm, one value per batch entry."""
        w = float(h) ** self.space.deg.astype(float)
        return np.tensordot(w, np.abs(self.coef), axes=(0, 0))

    def max_degree(self) -> int:
        s = self.support()
        return int(self.space.deg[s].max()) if s.size else 0


def jet_multiply(F: Jet, G: Jet) -> Jet:
    """Truncated product ``F G`` (loops over the sparser factor)."""
    if F.space is not G.space:
        raise ConfigError("jets live on different spaces")
    sF, sG = F.support(), G.support()
    batch = np.broadcast_shapes(F.batch, G.batch)
    out = np.zeros((F.space.size,) + batch, dtype=complex)
    if sG.size <= sF.size:
        for i in sG:
            src, dst, sign, _ = F.space.term_map(int(i))
            c = G.coef[i]
            out[dst] += sign.reshape((-1,) + (1,) * len(batch)) * F.coef[src] * c
    else:
        # G * F with F's monomial on the right: sign graded by F's term
        for i in sF:
            src, dst, sign, _ = F.space.term_map(int(i))
            c = F.coef[i]
            # right sign is for src*t; reorder to t*src
            rsign = sign * _reorder_sign(F.space, int(i), src)
            out[dst] += rsign.reshape((-1,) + (1,) * len(batch)) * G.coef[src] * c
    return Jet(F.space, out)


def _reorder_sign(space: JetSpace, i: int, src: np.ndarray) -> np.ndarray:
    """``(-1)^{|t| |s|}`` for moving monomial ``t`` past each ``src``."""
    mt = int(space.keys[i]) & ((1 << space.nf) - 1)
    if bin(mt).count("1") % 2 == 0:
        return np.ones(src.size)
    odd = np.bitwise_count(space.fmask[src]) & 1
    return np.where(odd == 1, -1.0, 1.0)


def jet_exp(F: Jet) -> Jet:
    """``exp(F)`` for even ``F`` via ``k E_k = sum_j j N_j E_{k-j}`` (degree grading)."""
    sp = F.space
    s = F.support()
    if np.any(np.bitwise_count(sp.fmask[s]) & 1):
        raise ConfigError("exp of a jet needs an even argument")
    batch = F.batch
    E = np.zeros((sp.size,) + batch, dtype=complex)
    E[0] = 1.0
    nil = [int(i) for i in s if i != 0]
    shape = (-1,) + (1,) * len(batch)
    maps = {i: sp.term_map(i) for i in nil}
    for k in range(1, sp.p + 1):
        for i in nil:
            j = int(sp.deg[i])
            if j > k:
                continue
            src, dst, sign, bounds = maps[i]
            a, b = bounds[k - j], bounds[k - j + 1]
            if a == b:
                continue
            E[dst[a:b]] += (j / k) * sign[a:b].reshape(shape) * E[src[a:b]] * F.coef[i]
    return Jet(sp, E * np.exp(F.coef[0]))


@dataclass
class JetFields:
    """Boson and fermion jets of the fields on a small set, expanded about ``phi``.

    ``phi`` has shape ``(|Lambda|, *batch)`` over the whole torus.
    """

    space: JetSpace
    phi: np.ndarray
    phibar: np.ndarray

    @classmethod
    def at(cls, space: JetSpace, phi, phibar=None) -> "JetFields":
        phi = np.asarray(phi, dtype=complex)
        phibar = np.conj(phi) if phibar is None else np.asarray(phibar, dtype=complex)
        return cls(space, phi, phibar)

    @property
    def batch(self) -> tuple:
        return self.phi.shape[1:]

    def _var(self, y: int, bar: bool) -> Jet:
        i = self.space.local[y]
        v = 2 * i + int(bar)
        exps = [0] * self.space.nb
        exps[v] = 1
        J = Jet.constant(self.space, (self.phibar if bar else self.phi)[y], self.batch)
        J.coef[self.space.index(self.space.key(exps))] = 1.0
        return J

    def boson(self, y: int) -> Jet:
        return self._var(y, False)

    def boson_bar(self, y: int) -> Jet:
        return self._var(y, True)

    def fermion(self, y: int, bar: bool = False) -> Jet:
        i = self.space.local[y]
        J = Jet.zeros(self.space, self.batch)
        J.coef[self.space.index(self.space.key([0] * self.space.nb, 1 << (2 * i + int(bar))))] = 1.0
        return J

    def tau(self, y: int) -> Jet:
        return self.boson(y) * self.boson_bar(y) + self.fermion(y) * self.fermion(y, True)


# ---------------------------------------------------------------------------
# local polynomial forms


@dataclass
class LocalPolynomialForm:
    """Polynomial in ``(phi, phibar, psi, psibar)`` on a few sites.

    ``terms`` maps ``(exps, mask)`` to a coefficient, with ``exps`` a tuple of
    ``(site, a, b)`` for ``phi_site^a phibar_site^b`` and ``mask`` a tuple of
    ``(site, barred)`` generators in canonical order.
    """

    terms: dict = field(default_factory=dict)

    @property
    def degree(self) -> int:
        return max((sum(a + b for _, a, b in e) + len(m) for e, m in self.terms), default=0)

    @property
    def support(self) -> set:
        s = set()
        for e, m in self.terms:
            s.update(y for y, _, _ in e)
            s.update(y for y, _ in m)
        return s

    def is_even(self) -> bool:
        return all(len(m) % 2 == 0 for _, m in self.terms)

    def jet(self, fields: JetFields) -> Jet:
        if self.degree > fields.space.p:
            raise ConfigError(f"form degree {self.degree} exceeds p_N = {fields.space.p}")
        out = Jet.zeros(fields.space, fields.batch)
        for (exps, mask), c in self.terms.items():
            monomial = Jet.constant(fields.space, 1.0, fields.batch)
            for y, a, b in exps:
                for _ in range(a):
                    monomial = monomial * fields.boson(y)
                for _ in range(b):
                    monomial = monomial * fields.boson_bar(y)
            for y, bar in sorted(mask, key=lambda g: (g[0], g[1])):
                monomial = monomial * fields.fermion(y, bar)
            out = out + monomial * c
        return out


def random_local_form(rng: np.random.Generator, site: int = 0, max_degree: int = 4, terms: int = 4,
                      even: bool = False, scale: float = 1.0) -> LocalPolynomialForm:
    gens = [(site, False), (site, True)]
    out = {}
    for _ in range(terms):
        f = int(rng.choice([0, 2])) if even else int(rng.integers(0, 3))
        mask = tuple(gens[:f]) if f != 1 else (gens[int(rng.integers(0, 2))],)
        nb = int(rng.integers(0, max_degree - f + 1))
        a = int(rng.integers(0, nb + 1))
        exps = ((site, a, nb - a),) if nb else ()
        c = scale * complex(rng.standard_normal(), rng.standard_normal())
        out[(exps, mask)] = out.get((exps, mask), 0) + c
    return LocalPolynomialForm(out)


def t_phi_seminorm(F, phi, params: NormParams, spec: TorusSpec | None = None, x=0) -> np.ndarray:
    """``||F||_{T_phi}`` for a :class:`LocalPolynomialForm` or a jet builder ``fields -> Jet``."""
    phi = np.asarray(phi, dtype=complex)
    if spec is None:
        spec = TorusSpec(1, max(1, phi.shape[0]))
    sites = tuple(small_set(spec, x))
    space = jet_space(sites, params.p_N)
    fields = JetFields.at(space, phi)
    J = F.jet(fields) if isinstance(F, LocalPolynomialForm) else F(fields)
    return J.norm(params.h0)


# ---------------------------------------------------------------------------
# test functions and Phi norms


@dataclass
class TestFunction:
    """Maps a signature ``(barred flags of x-seq, barred flags of y-seq)`` to an array over ``Lambda^len``."""

    __test__ = False  # not a pytest class

    spec: TorusSpec
    parts: dict

    @classmethod
    def field(cls, spec: TorusSpec, phi) -> "TestFunction":
        phi = np.asarray(phi, dtype=complex).reshape(spec.shape)
        return cls(spec, {((False,), ()): phi, ((True,), ()): np.conj(phi)})

    @classmethod
    def delta(cls, spec: TorusSpec, site, value: float = 1.0, barred: bool = False) -> "TestFunction":
        g = np.zeros(spec.shape, dtype=complex)
        g[tuple(spec.reduce(site))] = value
        return cls(spec, {((barred,), ()): g})

    def __mul__(self, c):
        return TestFunction(self.spec, {k: v * c for k, v in self.parts.items()})

    __rmul__ = __mul__


def phi_norm(g: TestFunction, params: NormParams, p_phi: int | None = None, h: float | None = None) -> float:
    """``sup_{x,y} h^{-(|x|+|y|)} sup_{|alpha| <= p_phi} |grad^alpha g|``."""
    order = params.p_phi if p_phi is None else p_phi
    h = params.h0 if h is None else h
    best = 0.0
    for (xs, ys), arr in g.parts.items():
        n = len(xs) + len(ys)
        if n > params.p_N:
            if np.any(arr):
                raise ConfigError("test function must vanish beyond length p_N")
            continue
        arr = np.asarray(arr, dtype=complex).reshape(g.spec.shape * n)
        best = max(best, h ** (-n) * _grad_sup_single(arr, g.spec, n, order))
    return best


def _grad_sup_single(arr: np.ndarray, spec: TorusSpec, nargs: int, order: int) -> float:
    d = spec.d
    E = unit_vectors(d)
    ops = [(i, e) for i in range(nargs) for e in range(len(E))]
    best = 0.0
    stack = [(arr, 0, 0)]
    while stack:
        a, start, depth = stack.pop()
        best = max(best, float(np.max(np.abs(a))) if a.size else 0.0)
        if depth == order:
            continue
        for k in range(start, len(ops)):
            i, e = ops[k]
            axes = tuple(range(i * d, (i + 1) * d))
            shifted = np.roll(a, shift=tuple(-int(c) for c in E[e]), axis=axes)
            stack.append((shifted - a, k, depth + 1))
    return best


def _difference_operators(spec: TorusSpec, order: int) -> np.ndarray:
    """Rows of all discrete derivative stencils of order ``<= order`` (one argument)."""
    n = spec.volume
    E = unit_vectors(spec.d)
    shifts = []
    for e in E:
        S = np.zeros((n, n))
        for i, x in enumerate(spec.sites()):
            S[i, spec.index(spec.reduce(tuple(np.asarray(x) + e)))] += 1.0
        shifts.append(S - np.eye(n))
    mats = []
    for k in range(order + 1):
        for combo in itertools.combinations_with_replacement(range(len(E)), k):
            M = np.eye(n)
            for c in combo:
                M = shifts[c] @ M
            mats.append(M)
    rows = np.vstack(mats)
    rows = rows[np.any(rows != 0, axis=1)]
    return np.unique(np.round(rows, 12), axis=0)


def _box_coordinates(spec: TorusSpec, x) -> np.ndarray:
    """Minimal-image displacement ``y - x`` for every site."""
    x = np.asarray(spec.reduce(x))
    out = []
    for y in spec.sites():
        dd = (np.asarray(y) - x) % spec.n
        dd = np.where(dd > spec.n // 2, dd - spec.n, dd)
        out.append(dd)
    return np.asarray(out, dtype=float)


@dataclass(frozen=True)
class LocalFieldNorm:
    value: float
    exact: bool
    polygon: int


def local_field_norm(phi, spec: TorusSpec, x, params: NormParams, h: float | None = None, affine: bool = False,
                     polygon: int = 64) -> LocalFieldNorm:
    """``||phi||_{Phi_x}``; with ``affine=True`` the shift-invariant stand-in ``Phi~_x``.

    Values off ``x^box`` are free; with ``affine`` an affine field ``a + b.(y - x)``
    is also subtracted. The modulus is linearized on a ``polygon``-gon, so the
    result is a lower bound within a factor ``cos(pi/polygon)`` unless no
    freedom is left, in which case it is exact.
    """
    h = params.h0 if h is None else h
    phi = np.asarray(phi, dtype=complex).reshape(-1)
    n = spec.volume
    x = x if isinstance(x, tuple) else spec.sites()[int(x)]
    box = set(small_set(spec, x))
    free = [y for y in range(n) if y not in box]
    D = _difference_operators(spec, params.p_phi)
    cols = []
    for y in free:
        e = np.zeros(n)
        e[y] = 1.0
        cols.append(e)
    if affine:
        cols.append(np.ones(n))
        coords = _box_coordinates(spec, x)
        for k in range(spec.d):
            cols.append(coords[:, k])
    if not cols:
        return LocalFieldNorm(float(np.max(np.abs(D @ phi))) / h, True, 0)
    DB = D @ np.stack(cols, axis=1)
    target = D @ phi
    m = DB.shape[1]
    # variables (Re w, Im w, s); residual r = target - DB w, Re(e^{-i th} r) <= s
    rows, rhs = [], []
    for th in 2 * np.pi * np.arange(polygon) / polygon:
        c, sn = math.cos(th), math.sin(th)
        rows.append(np.hstack([-c * DB, -sn * DB, -np.ones((DB.shape[0], 1))]))
        rhs.append(-(c * target.real + sn * target.imag))
    cost = np.zeros(2 * m + 1)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs),
                  bounds=[(None, None)] * (2 * m) + [(0, None)], method="highs")
    if not res.success:
        raise ConfigError(f"local field norm LP failed: {res.message}")
    return LocalFieldNorm(float(res.x[-1]) / h, False, polygon)


# ---------------------------------------------------------------------------
# model forms as jets


@dataclass(frozen=True)
class LocalCouplings:
    g0: float
    gamma0: float
    nu0: float = 0.0
    z0: float = 0.0

    @property
    def branch(self) -> str:
        return "+" if self.gamma0 >= 0 else "-"


def _neighbors(spec: TorusSpec, x: int) -> list:
    E = unit_vectors(spec.d)
    site = np.asarray(spec.sites()[x])
    return [spec.index(spec.reduce(tuple(site + e))) for e in E]


def embed(J: Jet, space: JetSpace) -> Jet:
    """Re-home a jet into a space over the same sites, truncating above its degree."""
    if J.space is space:
        return J
    if J.space.sites != space.sites:
        raise ConfigError("jet spaces cover different sites")
    keep = J.space.deg <= space.p
    out = Jet.zeros(space, J.batch)
    out.coef[np.searchsorted(space.keys, J.space.keys[keep])] = J.coef[keep]
    return out


def _at_degree(fields: JetFields, p: int) -> JetFields:
    if fields.space.p == p:
        return fields
    return JetFields(jet_space(tuple(fields.space.sites), p), fields.phi, fields.phibar)


def u_jet(fields: JetFields, spec: TorusSpec, x: int, branch: str) -> Jet:
    """``U^+_x = sum_e (grad^e tau)_x^2`` or ``U^-_x = 2 sum_e tau_x tau_{x+e}``."""
    return embed(_u_poly(_at_degree(fields, 4), spec, x, branch), fields.space)


def _u_poly(fields: JetFields, spec: TorusSpec, x: int, branch: str) -> Jet:
    tx = fields.tau(x)
    out = Jet.zeros(fields.space, fields.batch)
    for y in _neighbors(spec, x):
        ty = fields.tau(y)
        if branch == "+":
            diff = ty - tx
            out = out + diff * diff
        elif branch == "-":
            out = out + tx * ty * 2.0
        else:
            raise ConfigError(f"unknown branch {branch!r}")
    return out


def tau_laplacian_jet(fields: JetFields, spec: TorusSpec, x: int) -> Jet:
    row = -laplacian_matrix(spec)[x]
    px, pbx = fields.boson(x), fields.boson_bar(x)
    out = Jet.zeros(fields.space, fields.batch)
    for y in np.nonzero(row)[0]:
        c = 0.5 * row[y]
        y = int(y)
        out = out + (px * fields.boson_bar(y) + fields.boson(y) * pbx) * c
        out = out + (fields.fermion(x) * fields.fermion(y, True) + fields.fermion(y) * fields.fermion(x, True)) * c
    return out


def v_jet(fields: JetFields, spec: TorusSpec, x: int, c: LocalCouplings, branch: str) -> Jet:
    return embed(_v_poly(_at_degree(fields, 4), spec, x, c, branch), fields.space)


def _v_poly(fields: JetFields, spec: TorusSpec, x: int, c: LocalCouplings, branch: str) -> Jet:
    t = fields.tau(x)
    g = c.g0 + (4 * spec.d * c.gamma0 if branch == "-" else 0.0)
    return t * t * g + t * c.nu0 + tau_laplacian_jet(fields, spec, x) * c.z0


def k0_jet(fields: JetFields, spec: TorusSpec, x: int, c: LocalCouplings, branch: str | None = None) -> Jet:
    """``K^pm_{0,x} = I^pm_{0,x} (exp(-|gamma0| U^pm_x) - 1)``."""
    branch = branch or c.branch
    V = v_jet(fields, spec, x, c, branch)
    U = u_jet(fields, spec, x, branch)
    return jet_exp(-V - U * abs(c.gamma0)) - jet_exp(-V)


def iu_jet(fields: JetFields, spec: TorusSpec, x: int, c: LocalCouplings, branch: str | None = None) -> Jet:
    """``I^pm_{0,x} U^pm_x``, the first-order coefficient of ``-K / |gamma0|``."""
    branch = branch or c.branch
    return jet_exp(-v_jet(fields, spec, x, c, branch)) * u_jet(fields, spec, x, branch)


def check_domain(c: LocalCouplings, g_tilde: float, C_D: float = 10.0) -> None:
    """Require ``(g0, nu0, z0)`` in ``D_0(g_tilde)`` and ``|gamma0| <= g_tilde``."""
    if not (g_tilde / C_D < c.g0 < C_D * g_tilde and abs(c.nu0) < C_D * g_tilde and abs(c.z0) < C_D * g_tilde):
        raise DomainError(f"couplings {c} lie outside the stability domain for g_tilde={g_tilde}, C_D={C_D}")
    if abs(c.gamma0) > g_tilde:
        raise DomainError(f"|gamma0| = {abs(c.gamma0)} exceeds g_tilde = {g_tilde}")


# ---------------------------------------------------------------------------
# field grids


def field_grid(spec: TorusSpec, x: int, radius: float, radial: int = 9, seed: int = 0) -> np.ndarray:
    """Points ``r * u`` for ``r`` in a uniform radial grid and unit directions ``u``.

    Directions: each site of the small set, each pair sum and difference, the
    constant field, and one fixed random-phase vector. Returns ``(|Lambda|, P)``.
    """
    n = spec.volume
    box = small_set(spec, x)
    dirs = []
    for y in box:
        e = np.zeros(n, dtype=complex)
        e[y] = 1.0
        dirs.append(e)
    for a, b in itertools.combinations(box, 2):
        for s in (1.0, -1.0):
            e = np.zeros(n, dtype=complex)
            e[a], e[b] = 1.0, s
            dirs.append(e / math.sqrt(2))
    dirs.append(np.ones(n, dtype=complex) / math.sqrt(n))
    rng = np.random.default_rng(seed)
    e = np.zeros(n, dtype=complex)
    e[box] = np.exp(2j * np.pi * rng.random(len(box)))
    dirs.append(e / np.linalg.norm(e))
    radii = np.linspace(0.0, radius, radial)
    pts = [np.zeros(n, dtype=complex)] + [r * u for r in radii[1:] for u in dirs]
    return np.stack(pts, axis=1)


def _chunks(P: int, size: int):
    for s in range(0, P, size):
        yield slice(s, min(P, s + size))


def _jet_norms(builder, spec: TorusSpec, x: int, phi: np.ndarray, p_N: int, h: float, chunk: int = 16) -> np.ndarray:
    space = jet_space(tuple(small_set(spec, x)), p_N)
    out = []
    for sl in _chunks(phi.shape[1], chunk):
        out.append(builder(JetFields.at(space, phi[:, sl])).norm(h))
    return np.concatenate(out)


def _field_norms(phi: np.ndarray, spec: TorusSpec, x: int, params: NormParams, h: float, affine: bool = False) -> np.ndarray:
    return np.array([local_field_norm(phi[:, k], spec, x, params, h, affine).value for k in range(phi.shape[1])])


# ---------------------------------------------------------------------------
# identity and property suites


@dataclass(frozen=True)
class TauNormReport:
    samples: int
    max_abs_error: float


def tau_norm_identity(samples: int = 200, seed: int = 0, hs=(1.0, 2.0, 5.5), p_N: int = 10) -> TauNormReport:
    """``||tau_x||_{T_phi} = (|phi_x| + h)^2 + h^2`` on random fields and ``h``."""
    rng = np.random.default_rng(seed)
    space = jet_space((0,), p_N)
    phi = 2.0 * (rng.standard_normal((1, samples)) + 1j * rng.standard_normal((1, samples)))
    h = np.asarray(hs)[rng.integers(0, len(hs), samples)]
    t = JetFields.at(space, phi).tau(0)
    got = np.array([t.coef[:, k:k + 1] for k in range(samples)])
    w = h[:, None] ** space.deg[None, :]
    val = np.sum(np.abs(got[:, :, 0]) * w, axis=1)
    exact = (np.abs(phi[0]) + h) ** 2 + h ** 2
    return TauNormReport(samples, float(np.max(np.abs(val - exact))))


@dataclass(frozen=True)
class PropertySuiteReport:
    samples: int
    product_violations: int
    exp_violations: int
    polynomial_violations: int
    max_product_excess: float
    max_exp_excess: float
    max_polynomial_excess: float

    @property
    def passed(self) -> bool:
        return self.product_violations == self.exp_violations == self.polynomial_violations == 0


def property_suite(samples: int = 1000, seed: int = 0, hs=(1.0, 2.0, 5.5), p_N: int = 10, slack: float = 1e-10,
                   spec: TorusSpec | None = None) -> PropertySuiteReport:
    """Product, exponential and polynomial bounds on random single-site forms.

    Each instance draws fresh forms, a field on ``spec`` (default the 3-site
    ring) and ``h``; excesses are relative to the right-hand side.
    """
    spec = spec or TorusSpec(1, 3)
    rng = np.random.default_rng(seed)
    space1 = jet_space((0,), p_N)
    counts = [0, 0, 0]
    worst = [-math.inf, -math.inf, -math.inf]
    for _ in range(samples):
        h = float(rng.choice(hs))
        params = NormParams(h, p_N=p_N)
        phi = rng.standard_normal(spec.volume) + 1j * rng.standard_normal(spec.volume)
        phi *= float(rng.choice([0.1, 1.0, 3.0]))
        F = random_local_form(rng, 0, 5, int(rng.integers(1, 5)))
        G = random_local_form(rng, 0, 5, int(rng.integers(1, 5)))
        H = random_local_form(rng, 0, 4, int(rng.integers(1, 5)), even=True, scale=0.2)
        f = JetFields.at(space1, phi[:1, None])
        f0 = JetFields.at(space1, np.zeros((1, 1)))
        JF, JG, JH = F.jet(f), G.jet(f), H.jet(f)
        rhs = [float(JF.norm(h)[0] * JG.norm(h)[0])]
        lhs = [float((JF * JG).norm(h)[0])]
        # log scale: ||e^{-H}|| = |e^{-H_0}| ||e^{-(H - H_0)}||
        h0 = JH.degree0[0]
        rhs.append(float(-2 * h0.real + JH.norm(h)[0]))
        lhs.append(float(-h0.real + np.log(jet_exp(-(JH - h0)).norm(h)[0])))
        phinorm = phi_norm(TestFunction.field(spec, phi), params)
        rhs.append(float(F.jet(f0).norm(h)[0] * (1 + phinorm) ** F.degree))
        lhs.append(float(JF.norm(h)[0]))
        for k in range(3):
            if k == 1:
                excess = math.expm1(lhs[k] - rhs[k])
            else:
                excess = (lhs[k] - rhs[k]) / max(1.0, abs(rhs[k]))
            worst[k] = max(worst[k], excess)
            if excess > slack:
                counts[k] += 1
    return PropertySuiteReport(samples, counts[0], counts[1], counts[2], worst[0], worst[1], worst[2])


@dataclass(frozen=True)
class UBoundReport:
    branch: str
    h0: float
    C_emp: float
    C_emp_refined: float
    argmax_field_norm: float
    e_bound_violations: int
    e_bound_checked: int

    @property
    def grid_stable(self) -> bool:
        return abs(self.C_emp_refined - self.C_emp) <= 0.05 * max(abs(self.C_emp), 1e-300)


def _u_ratio(spec, params, branch, x, radius, radial):
    phi = field_grid(spec, x, radius, radial)
    h = params.h0
    norms = _jet_norms(lambda f: u_jet(f, spec, x, branch), spec, x, phi, params.p_N, h)
    space = jet_space(tuple(small_set(spec, x)), params.p_N)
    U0 = u_jet(JetFields.at(space, phi), spec, x, branch).degree0.real
    fn = _field_norms(phi, spec, x, params, h)
    C = (norms - 2 * U0) / (h ** 4 * (1 + fn ** 2))
    return phi, C, fn


def u_monomial_bound_check(params: NormParams = NormParams(), spec: TorusSpec | None = None, x: int = 0,
                           branch: str = "+", radius_factor: float = 5.0, radial: int = 9,
                           s_values=(0.1, 1.0)) -> UBoundReport:
    """Smallest ``C`` with ``||U_x|| <= 2 U_empty + C h^4 (1 + ||phi||^2_{Phi_x})`` on a field grid.

    The refined grid doubles the radial resolution. The exponential corollary
    is spot-checked at every grid point for each ``s``.
    """
    spec = spec or TorusSpec(1, 3)
    radius = radius_factor * params.h0
    phi, C, fn = _u_ratio(spec, params, branch, x, radius, radial)
    _, C2, _ = _u_ratio(spec, params, branch, x, radius, 2 * radial - 1)
    Cemp = float(C.max())
    viol = 0
    checked = 0
    for s in s_values:
        en = _jet_norms(lambda f: jet_exp(u_jet(f, spec, x, branch) * (-s)), spec, x, phi, params.p_N, params.h0)
        with np.errstate(over="ignore"):  # inf bound cannot be violated
            bound = np.exp(Cemp * s * params.h0 ** 4 * (1 + fn ** 2))
        viol += int(np.sum(en > bound * (1 + 1e-10)))
        checked += en.size
    return UBoundReport(branch, params.h0, Cemp, float(C2.max()), float(fn[int(np.argmax(C))]), viol, checked)


# ---------------------------------------------------------------------------
# initial polymer coordinate


@dataclass(frozen=True)
class K0ScalingRow:
    gamma0: float
    norm_T0: float
    ratio: float


@dataclass(frozen=True)
class RegulatorRow:
    gamma0: float
    G0_norm: float
    G0_tilde_norm: float
    W0_norm: float


@dataclass(frozen=True)
class K0Report:
    couplings: LocalCouplings
    h0: float
    rows: tuple
    limit: float
    spread: dict
    regulators: tuple
    tilde_phi_stand_in: bool
    smoothness: dict

    def max_spread(self) -> float:
        return max(self.spread.values())


def connected_polymers(spec: TorusSpec, max_size: int = 4) -> list:
    """Connected subsets (``|x - x'|_inf = 1`` adjacency) of size ``<= max_size``."""
    n = spec.volume
    sites = spec.sites()
    adj = [set() for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if i != j:
                dd = np.abs((np.asarray(sites[i]) - np.asarray(sites[j])) % spec.n)
                dd = np.minimum(dd, spec.n - dd)
                if dd.max() == 1:
                    adj[i].add(j)
    found = set()
    frontier = {frozenset([i]) for i in range(n)}
    while frontier:
        found |= frontier
        nxt = set()
        for X in frontier:
            if len(X) >= max_size:
                continue
            for x in X:
                for y in adj[x] - X:
                    nxt.add(X | {y})
        frontier = nxt - found
    return sorted(found, key=lambda X: (len(X), sorted(X)))


def w0_norm(site_G0: float, site_G0_tilde: float, w: WNormParams, spec: TorusSpec, max_size: int = 4) -> float:
    """``W_0`` norm of ``X -> prod_x K_x`` with ``||K(X)|| <= prod ||K_x||`` (product bound)."""
    best_G, best_Gt = 0.0, 0.0
    for X in connected_polymers(spec, max_size):
        k = len(X)
        weight = w.g_tilde ** (-w.f0(k, spec.d))
        best_G = max(best_G, weight * site_G0 ** k)
        best_Gt = max(best_Gt, weight * site_G0_tilde ** k)
    return max(best_G, w.g_tilde ** 2.25 * best_Gt)


def k0_norm_and_regulators(couplings: LocalCouplings, gammas=(1e-2, 1e-3, 1e-4, 1e-5), params: NormParams = NormParams(),
                           w: WNormParams | None = None, spec: TorusSpec | None = None, x: int = 0,
                           ell0: float | None = None, h0_large: float | None = None, regulators: bool = True,
                           radial: int = 6, C_D: float = 10.0) -> K0Report:
    """``||K^pm_{0,x}||_{T_0} / |gamma0|`` across a sweep, both signs, plus regulator and ``W_0`` norms.

    The field norm inside the tilde regulator is the affine-shift stand-in
    (see :func:`local_field_norm`). ``smoothness`` reports the finite-difference
    ``||dK/dg0||_{T_0} / (|gamma0| h^8)`` at the smallest ``|gamma0|``.
    """
    spec = spec or TorusSpec(1, 3)
    w = w or WNormParams(g_tilde=couplings.g0)
    ell0 = params.h0 if ell0 is None else ell0
    h0_large = max(1.0, w.g_tilde ** -0.25) if h0_large is None else h0_large
    space = jet_space(tuple(small_set(spec, x)), params.p_N)
    origin = JetFields.at(space, np.zeros((spec.volume, 1)))
    rows, spread, regs = [], {}, []
    limits = {}
    for sign in (1.0, -1.0):
        c_ref = LocalCouplings(couplings.g0, sign * 1e-300, couplings.nu0, couplings.z0)
        limits[sign] = float(iu_jet(origin, spec, x, c_ref).norm(params.h0)[0])
        ratios = []
        for g in gammas:
            c = LocalCouplings(couplings.g0, sign * g, couplings.nu0, couplings.z0)
            check_domain(c, w.g_tilde, C_D)
            n0 = float(k0_jet(origin, spec, x, c).norm(params.h0)[0])
            rows.append(K0ScalingRow(c.gamma0, n0, n0 / g))
            ratios.append(n0 / g)
            if regulators:
                regs.append(_regulator_row(c, spec, x, params, w, ell0, h0_large, radial))
        spread["+" if sign > 0 else "-"] = (max(ratios) - min(ratios)) / min(ratios)
    g = min(gammas)
    eps = 1e-4 * couplings.g0
    c_hi = LocalCouplings(couplings.g0 + eps, g, couplings.nu0, couplings.z0)
    c_lo = LocalCouplings(couplings.g0 - eps, g, couplings.nu0, couplings.z0)
    dK = (k0_jet(origin, spec, x, c_hi) - k0_jet(origin, spec, x, c_lo)) * (1 / (2 * eps))
    smooth = {"dK_dg0_over_gamma0_h8": float(dK.norm(params.h0)[0]) / (g * params.h0 ** 8)}
    return K0Report(couplings, params.h0, tuple(rows), limits[1.0], spread, tuple(regs), True, smooth)


def _regulator_row(c: LocalCouplings, spec, x, params, w, ell0, h0_large, radial) -> RegulatorRow:
    p_small = NormParams(ell0, params.p_phi, params.p_N, params.t)
    p_large = NormParams(h0_large, params.p_phi, params.p_N, params.t)
    phi = field_grid(spec, x, 5.0 * ell0, radial)
    kn = _jet_norms(lambda f: k0_jet(f, spec, x, c), spec, x, phi, params.p_N, ell0)
    with np.errstate(over="ignore"):  # huge regulator only shrinks the ratio
        reg = np.exp(_field_norms(phi, spec, x, p_small, ell0) ** 2)
    G0 = float(np.max(kn / reg))
    phi2 = field_grid(spec, x, 5.0 * h0_large, radial)
    kn2 = _jet_norms(lambda f: k0_jet(f, spec, x, c), spec, x, phi2, params.p_N, h0_large)
    with np.errstate(over="ignore"):
        reg2 = np.exp(0.5 * params.t * _field_norms(phi2, spec, x, p_small, ell0, affine=True) ** 2)
    Gt = float(np.max(kn2 / reg2))
    return RegulatorRow(c.gamma0, G0, Gt, w0_norm(G0, Gt, w, spec))
