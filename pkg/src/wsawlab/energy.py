"""Self-intersection and self-contact functionals and the interaction energy.

``U = beta I - gamma/(2d) C`` where ``I = sum_x ell_x^2`` and
``C = sum_x sum_{e in U} ell_x ell_{x+e}`` (ordered pairs, so every edge counts
twice). The gradient form ``U = (beta - gamma) I + gamma/(4d) |grad ell|^2`` is
computed independently and used as a standing cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .lattice import TorusSpec, gradient_norm_sq, neighbors, unit_vectors
from .walk import BatchLocalTimes, LocalTimeField


@dataclass(frozen=True)
class CouplingSet:
    """Couplings ``(beta, gamma, nu)``.

    ``beta = 0`` is allowed so that the free walk can be used as an oracle;
    operations that rely on the attractive-but-repulsive-dominated regime call
    :meth:`require_subcritical_attraction`.
    """

    beta: float
    gamma: float = 0.0
    nu: float = 0.0

    def __post_init__(self):
        if self.beta < 0:
            raise DomainError(f"beta must be nonnegative, got {self.beta}")

    def require_subcritical_attraction(self) -> None:
        if not abs(self.gamma) < self.beta:
            raise DomainError(f"need |gamma| < beta, got beta={self.beta}, gamma={self.gamma}")


@dataclass(frozen=True)
class EnergyReport:
    I_T: float
    C_T: float
    grad_sq: float
    U: float
    U_gradient: float


def _beta_gamma(c) -> tuple:
    if isinstance(c, CouplingSet):
        return c.beta, c.gamma
    beta, gamma = c
    return float(beta), float(gamma)


def _spec_of(ell, spec):
    if spec is not None:
        return spec
    if isinstance(ell, LocalTimeField):
        return ell.spec
    return None


def _dim(ell) -> int:
    if isinstance(ell, LocalTimeField):
        return ell.d
    return len(next(iter(ell)))


def intersection_local_time(ell) -> float:
    return float(sum(v * v for v in ell.values()))


def contact_local_time(ell, spec: TorusSpec | None = None) -> float:
    spec = _spec_of(ell, spec)
    total = 0.0
    for x, v in ell.items():
        for y in neighbors(x, spec):
            total += v * ell.get(y, 0.0)
    return float(total)


def gradient_sq(ell, spec: TorusSpec | None = None) -> float:
    spec = _spec_of(ell, spec)
    return gradient_norm_sq(dict(ell.items()), spec)


def potential_direct(ell, c, spec: TorusSpec | None = None) -> float:
    beta, gamma = _beta_gamma(c)
    if not ell:
        return 0.0
    d = _dim(ell)
    return beta * intersection_local_time(ell) - gamma / (2 * d) * contact_local_time(ell, spec)


def potential_gradient_form(ell, c, spec: TorusSpec | None = None) -> float:
    beta, gamma = _beta_gamma(c)
    if not ell:
        return 0.0
    d = _dim(ell)
    return (beta - gamma) * intersection_local_time(ell) + gamma / (4 * d) * gradient_sq(ell, spec)


def log_boltzmann_weight(ell, c, spec: TorusSpec | None = None) -> float:
    _, gamma = _beta_gamma(c)
    if gamma >= 0:
        return -potential_gradient_form(ell, c, spec)
    return -potential_direct(ell, c, spec)


def boltzmann_weight(ell, c, spec: TorusSpec | None = None) -> float:
    """``exp(-U)``; may overflow to ``inf`` for strongly attractive couplings, use the log form then."""
    with np.errstate(over="ignore"):
        return float(np.exp(log_boltzmann_weight(ell, c, spec)))


def energy_report(ell, c, spec: TorusSpec | None = None) -> EnergyReport:
    beta, gamma = _beta_gamma(c)
    I = intersection_local_time(ell)
    C = contact_local_time(ell, spec)
    G = gradient_sq(ell, spec)
    d = _dim(ell) if ell else 1
    return EnergyReport(
        I_T=I,
        C_T=C,
        grad_sq=G,
        U=beta * I - gamma / (2 * d) * C,
        U_gradient=(beta - gamma) * I + gamma / (4 * d) * G,
    )


# ---------------------------------------------------------------------------
# batch versions


@dataclass(frozen=True)
class BatchFunctionals:
    """Per-path ``I``, ``C`` and ``|grad ell|^2`` for a batch."""

    d: int
    I: np.ndarray
    C: np.ndarray
    grad_sq: np.ndarray | None = None

    def U(self, beta: float, gamma: float) -> np.ndarray:
        return beta * self.I - gamma / (2 * self.d) * self.C

    def U_gradient(self, beta: float, gamma: float) -> np.ndarray:
        if self.grad_sq is None:
            raise ValueError("gradient term was not computed")
        return (beta - gamma) * self.I + gamma / (4 * self.d) * self.grad_sq


def batch_functionals(lt: BatchLocalTimes, with_gradient: bool = False) -> BatchFunctionals:
    """Compute the functionals of every path in one vectorized pass."""
    I = lt.per_path(lt.value**2)
    C = np.zeros(lt.size)
    U = unit_vectors(lt.d)
    for e in U:
        nb = lt.lookup(lt.path, lt.coords + e)
        C += lt.per_path(lt.value * nb)
    G = None
    if with_gradient:
        G = np.zeros(lt.size)
        for e in U:
            G += batch_directional_gradient_sq(lt, e)
    return BatchFunctionals(d=lt.d, I=I, C=C, grad_sq=G)


def batch_directional_gradient_sq(lt: BatchLocalTimes, e) -> np.ndarray:
    """``sum_x (ell_{x+e} - ell_x)^2`` per path, summed over the support and its ``-e`` shift."""
    cp, _, a = batch_gradient_field(lt, e)
    return np.bincount(cp, weights=a * a, minlength=lt.size)


def batch_gradient_field(lt: BatchLocalTimes, e):
    """The field ``x -> |ell_{x+e} - ell_x|`` on its support, as ``(path, coords, value)``."""
    e = np.asarray(e, dtype=np.int64)
    cand_path = np.concatenate([lt.path, lt.path])
    cand = np.concatenate([lt.coords, lt.coords - e])
    if lt.n is not None:
        cand = cand % lt.n
    key = lt.encode(cand_path, cand)
    _, first = np.unique(key, return_index=True)
    cp, cx = cand_path[first], cand[first]
    return cp, cx, np.abs(lt.lookup(cp, cx + e) - lt.lookup(cp, cx))
