"""Classical and quantum Fisher information, the Cramér-Rao bound, and POVM statistics.

Derivatives with respect to the parameter come from an analytic callback
when one is supplied, otherwise from central differences checked against
a half-step evaluation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .numerics import poisson_truncation

log = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
SLD_NULL = 1e-12
SLD_RESIDUAL_MAX = 1e-8


class FisherError(ArithmeticError):
    pass


class DerivativeError(FisherError):
    """Finite-difference derivative failed its half-step consistency check."""


class SldResidualError(FisherError):
    pass


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return m


def _is_hermitian(m, atol):
    return np.allclose(m, m.conj().T, atol=atol, rtol=0)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        rho = _as_matrix(self.matrix)
        object.__setattr__(self, "matrix", rho)
        if not _is_hermitian(rho, 1e-12):
            raise ValueError("density matrix is not Hermitian")
        tr = np.trace(rho).real
        if abs(tr - 1.0) > 1e-12:
            raise ValueError(f"density matrix trace is {tr!r}, not 1")
        if np.linalg.eigvalsh(rho).min() < -1e-12:
            raise ValueError("density matrix has a negative eigenvalue")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def pure(cls, ket) -> "DensityMatrix":
        ket = np.asarray(ket, dtype=complex).ravel()
        ket = ket / np.linalg.norm(ket)
        return cls(np.outer(ket, ket.conj()))


@dataclass(frozen=True, eq=False)
class Povm:
    elements: Sequence[np.ndarray]

    def __post_init__(self):
        els = tuple(_as_matrix(e) for e in self.elements)
        object.__setattr__(self, "elements", els)
        if not els:
            raise ValueError("POVM needs at least one element")
        d = els[0].shape[0]
        for i, e in enumerate(els):
            if e.shape != (d, d):
                raise ValueError("POVM elements differ in dimension")
            if not _is_hermitian(e, 1e-12):
                raise ValueError(f"POVM element {i} is not Hermitian")
            if np.linalg.eigvalsh(e).min() < -1e-12:
                raise ValueError(f"POVM element {i} is not positive semidefinite")
        if not np.allclose(sum(els), np.eye(d), atol=1e-10, rtol=0):
            raise ValueError("POVM elements do not sum to the identity")

    @property
    def dim(self) -> int:
        return self.elements[0].shape[0]

    @classmethod
    def projective(cls, basis) -> "Povm":
        """Rank-one projectors onto the columns of a unitary ``basis``."""
        basis = np.asarray(basis, dtype=complex)
        return cls([np.outer(basis[:, i], basis[:, i].conj()) for i in range(basis.shape[1])])


def povm_probabilities(state: DensityMatrix, povm: Povm) -> np.ndarray:
    """Born-rule outcome probabilities tr(rho Pi_y)."""
    if state.dim != povm.dim:
        raise ValueError(f"state dimension {state.dim} != POVM dimension {povm.dim}")
    p = np.array([np.trace(state.matrix @ e).real for e in povm.elements])
    if p.min() < -1e-12:
        raise ValueError(f"negative outcome probability {p.min():.3g}")
    p = np.clip(p, 0.0, None)
    if abs(p.sum() - 1.0) > 1e-10:
        raise ValueError(f"probabilities sum to {p.sum()!r}")
    return p


# ---------------------------------------------------------------------------
# parametrised families


def central_difference(f, x0: float, h: float = DEFAULT_STEP, rtol: float = 1e-4, atol: float = 1e-7):
    """Central-difference derivative of array-valued ``f`` with a half-step check.

    Returns the Richardson combination of the h and h/2 estimates.  The two
    raw estimates must agree to ``atol + rtol * |d|`` elementwise.
    """
    if not h > 0:
        raise ValueError("step must be positive")
    f_plus, f_minus = np.asarray(f(x0 + h)), np.asarray(f(x0 - h))
    d1 = (f_plus - f_minus) / (2 * h)
    d2 = (np.asarray(f(x0 + h / 2)) - np.asarray(f(x0 - h / 2))) / h
    if not np.allclose(d1, d2, rtol=rtol, atol=atol):
        gap = float(np.max(np.abs(d1 - d2)))
        raise DerivativeError(f"finite differences at h and h/2 disagree by {gap:.3g}")
    return (4 * d2 - d1) / 3


@dataclass(frozen=True, eq=False)
class ClassicalFamily:
    """Outcome pmf as a function of the parameter: ``pmf(x) -> array``."""

    pmf: Callable[[float], np.ndarray]
    dpmf: Callable[[float], np.ndarray] | None = None
    step: float = DEFAULT_STEP

    def derivative(self, x0):
        if self.dpmf is not None:
            return np.asarray(self.dpmf(x0), dtype=float)
        return central_difference(self.pmf, x0, self.step)


@dataclass(frozen=True, eq=False)
class QuantumFamily:
    """Density matrix as a function of the parameter: ``rho(x) -> (d, d) array``."""

    rho: Callable[[float], np.ndarray]
    drho: Callable[[float], np.ndarray] | None = None
    step: float = DEFAULT_STEP

    def state(self, x0) -> DensityMatrix:
        return DensityMatrix(self.rho(x0))

    def derivative(self, x0):
        if self.drho is not None:
            return _as_matrix(self.drho(x0))
        return central_difference(lambda x: _as_matrix(self.rho(x)), x0, self.step)

    def measured(self, povm: Povm) -> ClassicalFamily:
        """Classical family of outcome probabilities under a fixed POVM."""
        dpmf = None
        if self.drho is not None:
            dpmf = lambda x: np.array([np.trace(self.drho(x) @ e).real for e in povm.elements])  # noqa: E731
        return ClassicalFamily(lambda x: povm_probabilities(self.state(x), povm), dpmf, self.step)


def classical_fisher(family: ClassicalFamily, x0: float, zero_atol: float = 1e-12) -> float:
    """Sum over outcomes of (dP/dx)^2 / P at ``x0``.

    Outcomes with P = 0 and dP = 0 contribute nothing.  An outcome with
    P = 0 but dP != 0 makes the information infinite; that is returned as
    ``inf`` (and logged) rather than clipped.
    """
    p = np.asarray(family.pmf(x0), dtype=float)
    dp = family.derivative(x0)
    zero = p <= 0
    if np.any(zero & (np.abs(dp) > zero_atol)):
        log.warning("divergent Fisher information at x0=%r: outcomes %s", x0, np.flatnonzero(zero))
        return math.inf
    keep = ~zero
    return float(np.sum(dp[keep] ** 2 / p[keep]))


@dataclass(frozen=True)
class SldResult:
    sld: np.ndarray
    fisher_value: float
    residual: float


def symmetric_log_derivative(rho: np.ndarray, drho: np.ndarray, null: float = SLD_NULL) -> SldResult:
    """Solve drho = (L rho + rho L) / 2 for Hermitian L in the eigenbasis of rho.

    Matrix elements with p_i + p_j <= ``null`` are set to zero.  The
    residual of the defining equation is measured on the same support and
    must stay below 1e-8.
    """
    rho = _as_matrix(rho)
    drho = _as_matrix(drho)
    p, v = np.linalg.eigh(rho)
    d = v.conj().T @ drho @ v
    denom = p[:, None] + p[None, :]
    support = denom > null
    lam_eig = np.where(support, 2.0 * d / np.where(support, denom, 1.0), 0.0)
    lam = v @ lam_eig @ v.conj().T
    lam = 0.5 * (lam + lam.conj().T)
    resid_eig = v.conj().T @ (drho - 0.5 * (lam @ rho + rho @ lam)) @ v
    residual = float(np.linalg.norm(np.where(support, resid_eig, 0.0)))
    if residual > SLD_RESIDUAL_MAX:
        raise SldResidualError(f"SLD residual {residual:.3g} exceeds {SLD_RESIDUAL_MAX}")
    fq = float(np.trace(rho @ lam @ lam).real)
    return SldResult(lam, max(fq, 0.0), residual)


def quantum_fisher(family: QuantumFamily, x0: float) -> SldResult:
    return symmetric_log_derivative(family.state(x0).matrix, family.derivative(x0))


def cramer_rao_bound(fisher_value: float) -> float:
    """Lower bound 1/F on the variance of an unbiased estimator; inf when F = 0."""
    if fisher_value < 0 or math.isnan(fisher_value):
        raise ValueError(f"Fisher information must be >= 0, got {fisher_value}")
    if fisher_value == 0:
        return math.inf
    return 1.0 / fisher_value


# ---------------------------------------------------------------------------
# built-in families


def bernoulli_family() -> ClassicalFamily:
    return ClassicalFamily(lambda x: np.array([1.0 - x, x]), lambda x: np.array([-1.0, 1.0]))


def poisson_family(x0: float, tail_mass: float = 1e-14) -> ClassicalFamily:
    """Poisson(mean x) on the support 0..n_max whose upper tail at ``x0`` is below ``tail_mass``."""
    n = np.arange(poisson_truncation(x0, tail_mass).n_max + 1)
    return ClassicalFamily(
        lambda x: stats.poisson.pmf(n, x),
        lambda x: stats.poisson.pmf(n, x) * (n / x - 1.0),
    )


def pure_qubit_family() -> QuantumFamily:
    """|psi(x)> = (cos(x/2), sin(x/2)); its quantum Fisher information is 1."""

    def rho(x):
        k = np.array([math.cos(x / 2), math.sin(x / 2)])
        return np.outer(k, k).astype(complex)

    def drho(x):
        k = np.array([math.cos(x / 2), math.sin(x / 2)])
        dk = 0.5 * np.array([-math.sin(x / 2), math.cos(x / 2)])
        return (np.outer(dk, k) + np.outer(k, dk)).astype(complex)

    return QuantumFamily(rho, drho)


def quantum_mz_family(eta: float, tail_mass: float = 1e-12) -> ClassicalFamily:
    """Photon-count pmf of the coherent-state interferometer as a function of phase."""
    from .interferometers import quantum_mz_table

    n_max = poisson_truncation(eta, tail_mass).n_max
    return ClassicalFamily(lambda phi: quantum_mz_table(eta, phi, n_max)[0])
