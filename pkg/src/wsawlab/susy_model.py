"""Supersymmetric representation of the contact-attracting walk on a tiny torus.

The walk two-point function is rewritten as a Gaussian super-expectation of
``Z0``, a product over sites of ``exp(-(V0 + gamma0 U))`` built from the forms
``tau_x = phi phibar + psi psibar``. Couplings of the Gaussian split follow
``g0 = (beta - gamma)(1 + z0)^2``, ``nu0 = nu (1 + z0) - m2`` and
``gamma0 = gamma (1 + z0)^2 / (4d)``; ``z0`` and ``m2`` are free gauge choices.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, ConfigError, InvalidMassError
from .grassmann import (
    MAX_GAUSSIAN_SITES,
    MAX_SITES,
    CovarianceMatrix,
    Fields,
    GrassmannForm,
    convolve,
    exp_form,
    super_expectation,
    wedge,
)
from .lattice import TorusSpec, laplacian_matrix, unit_vectors


@dataclass(frozen=True)
class InitialCouplings:
    m2: float
    g0: float
    gamma0: float
    nu0: float
    z0: float
    d: int = 1

    def __post_init__(self):
        if not self.m2 > 0:
            raise InvalidMassError(f"m2 must be positive, got {self.m2}")
        if not self.z0 > -1:
            raise ConfigError(f"z0 must exceed -1, got {self.z0}")

    @classmethod
    def from_bare(cls, beta: float, gamma: float, nu: float, z0: float = 0.0, m2: float = 1.0,
                  d: int = 1) -> "InitialCouplings":
        s = (1.0 + z0) ** 2
        return cls(m2=m2, g0=(beta - gamma) * s, gamma0=gamma * s / (4 * d), nu0=nu * (1 + z0) - m2, z0=z0, d=d)

    @property
    def branch(self) -> str:
        return "+" if self.gamma0 >= 0 else "-"

    def bare(self) -> tuple:
        """Recover ``(beta, gamma, nu)``."""
        s = (1.0 + self.z0) ** 2
        gamma = 4 * self.d * self.gamma0 / s
        return self.g0 / s + gamma, gamma, (self.nu0 + self.m2) / (1 + self.z0)


def _check_lattice(spec: TorusSpec, gaussian: bool = False) -> None:
    limit = MAX_GAUSSIAN_SITES if gaussian else MAX_SITES
    if spec.volume > limit:
        raise CapabilityError(f"the supersymmetric engine supports at most {limit} sites here, got {spec.volume}")


def is_gaussian(ic: InitialCouplings) -> bool:
    """``Z0`` is the exponential of a quadratic form (no quartic, no gradient-squared term)."""
    return ic.g0 == 0 and ic.gamma0 == 0


def neighbor_table(spec: TorusSpec) -> np.ndarray:
    """``(|Lambda|, 2d)`` flat indices of ``x + e`` (with torus multiplicities)."""
    E = unit_vectors(spec.d)
    out = np.empty((spec.volume, len(E)), dtype=int)
    for i, x in enumerate(spec.sites()):
        for k, e in enumerate(E):
            out[i, k] = spec.index(spec.reduce(tuple(np.asarray(x) + e)))
    return out


def covariance(spec: TorusSpec, m2: float) -> CovarianceMatrix:
    return CovarianceMatrix(np.linalg.inv(-laplacian_matrix(spec) + m2 * np.eye(spec.volume)))


@dataclass
class TauForms:
    tau: list
    tau_laplacian: list
    grad_sq: list


def tau(fields: Fields, x: int) -> GrassmannForm:
    return wedge(fields.psi[x], fields.psibar[x]) + fields.phi[x] * fields.phibar[x]


def tau_laplacian(fields: Fields, x: int, minus_lap: np.ndarray) -> GrassmannForm:
    """Symmetrized ``(phi(-Lap phibar) + (-Lap phi) phibar + fermions) / 2`` at ``x``."""
    row = minus_lap[x]
    lphi = np.tensordot(row, fields.phi, axes=(0, 0))
    lphibar = np.tensordot(row, fields.phibar, axes=(0, 0))
    out = GrassmannForm.scalar(fields.algebra, 0.5 * (fields.phi[x] * lphibar + lphi * fields.phibar[x]))
    for y in np.nonzero(row)[0]:
        c = 0.5 * row[y]
        out = out + (wedge(fields.psi[x], fields.psibar[y]) + wedge(fields.psi[y], fields.psibar[x])) * c
    return out


def tau_forms(fields: Fields, spec: TorusSpec) -> TauForms:
    """``tau_x``, ``tau_{Lap,x}`` and ``|grad tau_x|^2`` for every site."""
    nb = neighbor_table(spec)
    minus_lap = -laplacian_matrix(spec)
    t = [tau(fields, x) for x in range(spec.volume)]
    tl = [tau_laplacian(fields, x, minus_lap) for x in range(spec.volume)]
    g = []
    for x in range(spec.volume):
        acc = GrassmannForm.zero(fields.algebra)
        for y in nb[x]:
            if y != x:
                diff = t[y] - t[x]
                acc = acc + wedge(diff, diff)
        g.append(acc)
    return TauForms(t, tl, g)


def _u_minus(t: list, nb: np.ndarray, x: int) -> GrassmannForm:
    acc = GrassmannForm.zero(t[x].algebra)
    for y in nb[x]:
        acc = acc + wedge(t[x], t[y]) * 2.0
    return acc


@dataclass
class LocalPieces:
    """Per-site forms ``V^pm_{0,x}`` and ``U^pm_x`` at one boson configuration."""

    V_plus: list
    U_plus: list
    V_minus: list
    U_minus: list


def local_pieces(ic: InitialCouplings, spec: TorusSpec, fields: Fields) -> LocalPieces:
    tf = tau_forms(fields, spec)
    nb = neighbor_table(spec)
    vp, vm, um = [], [], []
    for x in range(spec.volume):
        t = tf.tau[x]
        v = wedge(t, t) * ic.g0 + t * ic.nu0 + tf.tau_laplacian[x] * ic.z0
        vp.append(v)
        vm.append(v + wedge(t, t) * (4 * spec.d * ic.gamma0))
        um.append(_u_minus(tf.tau, nb, x))
    return LocalPieces(vp, tf.grad_sq, vm, um)


def _sum(forms: list, algebra) -> GrassmannForm:
    acc = GrassmannForm.zero(algebra)
    for f in forms:
        acc = acc + f
    return acc


QUARTIC_WIDTH = 4.0


def z0_reference_shift(ic: InitialCouplings, spec: TorusSpec) -> np.ndarray:
    """Quadrature reference shift for ``Z0``.

    ``nu0 Id + z0 (-Lap)`` is the boson quadratic part of ``Z0``; the extra
    ``QUARTIC_WIDTH sqrt(g0)`` narrows the weight to the scale where
    ``exp(-g0 |phi|^4)`` cuts off. It scales like ``(1 + z0)`` and is free of
    ``m2``, so gauge-equivalent splits use identical rescaled nodes.
    """
    kappa = QUARTIC_WIDTH * np.sqrt(max(ic.g0, 0.0))
    return (ic.nu0 + kappa) * np.eye(spec.volume) - ic.z0 * laplacian_matrix(spec)


def build_Z0(ic: InitialCouplings, spec: TorusSpec, fields: Fields, branch: str | None = None) -> GrassmannForm:
    """``prod_x exp(-(V^+_{0,x} + gamma0 U^+_x))``, written in either polymer branch."""
    _check_lattice(spec, is_gaussian(ic))
    p = local_pieces(ic, spec, fields)
    branch = branch or ic.branch
    if branch == "+":
        expo = _sum(p.V_plus, fields.algebra) + _sum(p.U_plus, fields.algebra) * ic.gamma0
    elif branch == "-":
        expo = _sum(p.V_minus, fields.algebra) - _sum(p.U_minus, fields.algebra) * ic.gamma0
    else:
        raise ConfigError(f"unknown branch {branch!r}")
    return exp_form(-expo)


def z0_builder(ic: InitialCouplings, spec: TorusSpec, branch: str | None = None):
    def builder(fields):
        return build_Z0(ic, spec, fields, branch)

    builder.reference_shift = z0_reference_shift(ic, spec)
    builder.gaussian = is_gaussian(ic)
    return builder


def _exact_order(ic: InitialCouplings, spec: TorusSpec, m2: float, order: int) -> int:
    """Order 2 is exact for quadratic observables when the weight absorbs a Gaussian ``Z0``."""
    if not is_gaussian(ic):
        return order
    B = -laplacian_matrix(spec) + m2 * np.eye(spec.volume) + z0_reference_shift(ic, spec)
    return min(order, 2) if np.all(np.linalg.eigvalsh(0.5 * (B + B.T)) > 0) else order


@dataclass
class PolymerCoordinates:
    """Evaluators for ``I^pm_0(X)`` and ``K^pm_0(X)`` at one boson configuration."""

    branch: str
    I_site: list
    K_site: list
    algebra: object

    def I(self, X) -> GrassmannForm:
        acc = GrassmannForm.scalar(self.algebra, 1.0)
        for x in sorted(X):
            acc = wedge(acc, self.I_site[x])
        return acc

    def K(self, X) -> GrassmannForm:
        acc = GrassmannForm.scalar(self.algebra, 1.0)
        for x in sorted(X):
            acc = wedge(acc, self.K_site[x])
        return acc


def polymer_coordinates(ic: InitialCouplings, spec: TorusSpec, fields: Fields, branch: str | None = None) -> PolymerCoordinates:
    _check_lattice(spec)
    branch = branch or ic.branch
    p = local_pieces(ic, spec, fields)
    I_site, K_site = [], []
    for x in range(spec.volume):
        # on the matching branch the exponent is -|gamma0| U^pm
        if branch == "+":
            I = exp_form(-p.V_plus[x])
            E = exp_form(p.U_plus[x] * (-ic.gamma0))
        else:
            I = exp_form(-p.V_minus[x])
            E = exp_form(p.U_minus[x] * ic.gamma0)
        I_site.append(I)
        K_site.append(wedge(I, E - 1.0))
    return PolymerCoordinates(branch, I_site, K_site, fields.algebra)


@dataclass(frozen=True)
class CircleProductReport:
    branch: str
    configs: int
    max_abs_diff: float
    max_abs: float

    @property
    def passed(self) -> bool:
        return self.max_abs_diff <= 1e-12 * max(1.0, self.max_abs)


def _random_fields(spec: TorusSpec, rng: np.random.Generator, count: int, scale: float = 0.7) -> Fields:
    n = spec.volume
    phi = scale * (rng.standard_normal((n, count)) + 1j * rng.standard_normal((n, count)))
    base = Fields.external(np.zeros(n), with_fermions=True)
    return Fields(base.algebra, phi, np.conj(phi), base.psi, base.psibar)


def circle_product_check(ic: InitialCouplings, spec: TorusSpec, configs: int = 20, seed: int = 0,
                         branch: str | None = None) -> CircleProductReport:
    """Compare ``sum_X I0(Lambda - X) K0(X)`` with ``Z0`` over all ``2^|Lambda|`` subsets."""
    fields = _random_fields(spec, np.random.default_rng(seed), configs)
    pc = polymer_coordinates(ic, spec, fields, branch)
    sites = range(spec.volume)
    total = GrassmannForm.zero(fields.algebra)
    for r in range(spec.volume + 1):
        for X in itertools.combinations(sites, r):
            rest = [y for y in sites if y not in X]
            total = total + wedge(pc.I(rest), pc.K(X))
    Z = build_Z0(ic, spec, fields)
    diff = total - Z
    return CircleProductReport(pc.branch, configs, diff.max_abs(), Z.max_abs())


def _check_bare(beta: float, gamma: float) -> None:
    if beta < 0:
        raise ConfigError("beta must be nonnegative")
    if not (gamma < beta or beta == gamma == 0):
        raise ConfigError(f"the representation needs gamma < beta, got beta={beta}, gamma={gamma}")


def two_point_susy_matrix(beta: float, gamma: float, nu: float, spec: TorusSpec, z0: float = 0.0,
                          m2: float = 1.0, order: int = 40, prune: float = 1e-20) -> np.ndarray:
    """``G_N(a, b) = (1 + z0) E_C(Z0 phibar_a phi_b)`` for all site pairs.

    For ``beta = gamma = 0`` the order drops to 2, which is exact there.
    """
    _check_bare(beta, gamma)
    ic = InitialCouplings.from_bare(beta, gamma, nu, z0, m2, spec.d)
    _check_lattice(spec, is_gaussian(ic))
    order = _exact_order(ic, spec, m2, order)
    C = covariance(spec, m2)
    n = spec.volume

    def obs(f):
        return (f.phibar[:, None, :] * f.phi[None, :, :]).reshape(n * n, -1)

    vals = super_expectation(C, z0_builder(ic, spec), order, obs, prune=prune)
    return (1 + z0) * np.asarray(vals).reshape(n, n)


def two_point_susy(beta: float, gamma: float, nu: float, spec: TorusSpec, a=0, b=0, z0: float = 0.0,
                   m2: float = 1.0, order: int = 40, imag_tol: float = 1e-10) -> float:
    G = two_point_susy_matrix(beta, gamma, nu, spec, z0, m2, order)
    ia = a if isinstance(a, (int, np.integer)) else spec.index(a)
    ib = b if isinstance(b, (int, np.integer)) else spec.index(b)
    val = complex(G[ia, ib])
    if abs(val.imag) > imag_tol * max(1.0, abs(val.real)):
        raise ConfigError(f"two-point function has imaginary residue {val.imag:.3e}")
    return val.real


class FiniteDifferenceWarning(UserWarning):
    """Richardson estimate of the finite-difference error exceeds tolerance."""


@dataclass(frozen=True)
class ChiHat:
    value: float
    D2: float
    fd_error: float


def z_n_degree0(ic: InitialCouplings, spec: TorusSpec, s, t, order: int = 40) -> np.ndarray:
    """``Z_{N, empty}(s 1, t 1)`` at arrays of ``(s, t)`` with external fermions zero."""
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    t = np.atleast_1d(np.asarray(t, dtype=complex))
    n = spec.volume
    phi = np.broadcast_to(s, (n, s.size)).copy()
    phibar = np.broadcast_to(t, (n, t.size)).copy()
    ext = Fields.external(phi, phibar)
    out = convolve(covariance(spec, ic.m2), z0_builder(ic, spec), ext, order).degree0
    return np.broadcast_to(out, s.shape)


def chi_hat_N(ic: InitialCouplings, spec: TorusSpec, step: float = 1e-3, order: int = 40,
              tol: float = 1e-6) -> ChiHat:
    """``1/m2 + D^2 Z_{N,empty}(0,0;1,1) / (m2^2 |Lambda|)`` with central differences and one Richardson step."""
    _check_lattice(spec)
    h = np.array([step, step / 2])
    s = np.concatenate([[hh, hh, -hh, -hh] for hh in h])
    t = np.concatenate([[hh, -hh, hh, -hh] for hh in h])
    z = z_n_degree0(ic, spec, s, t, order).reshape(2, 4)
    d2 = (z[:, 0] - z[:, 1] - z[:, 2] + z[:, 3]) / (4 * h * h)
    rich = (4 * d2[1] - d2[0]) / 3
    err = abs(rich - d2[1])
    if err > tol * max(1.0, abs(rich)):
        warnings.warn(f"finite-difference error estimate {err:.2e} exceeds {tol:.0e}", FiniteDifferenceWarning,
                      stacklevel=2)
    D2 = complex(rich).real
    return ChiHat(1.0 / ic.m2 + D2 / (ic.m2 ** 2 * spec.volume), D2, float(err))


@dataclass(frozen=True)
class ChiIdentityRow:
    z0: float
    m2: float
    chi_hat: float
    chi_N: float
    residual: float


@dataclass(frozen=True)
class ChiIdentityReport:
    rows: tuple

    @property
    def max_residual(self) -> float:
        return max(r.residual for r in self.rows)


def chi_identity_check(beta: float, gamma: float, nu: float, spec: TorusSpec, splits=((0.0, 1.0),),
                       step: float = 1e-3, order: int = 40) -> ChiIdentityReport:
    """Check ``(1 + z0) chi_hat_N = sum_b G_N(0, b)`` for each ``(z0, m2)`` split."""
    _check_bare(beta, gamma)
    rows = []
    for z0, m2 in splits:
        ic = InitialCouplings.from_bare(beta, gamma, nu, z0, m2, spec.d)
        ch = chi_hat_N(ic, spec, step, order)
        chi = float(np.sum(two_point_susy_matrix(beta, gamma, nu, spec, z0, m2, order)[0]).real)
        rows.append(ChiIdentityRow(z0, m2, ch.value, chi, abs((1 + z0) * ch.value - chi)))
    return ChiIdentityReport(tuple(rows))
