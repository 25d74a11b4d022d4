"""Numerical kernels shared by the fidelity, Fisher and interferometer code.

Adaptive Gauss-Kronrod quadrature on the phase circle, Gauss-Hermite
expectations under a normal law, log-gamma and Poisson tail truncation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

__all__ = [
    "Tolerance",
    "IntegrationResult",
    "TruncationBudget",
    "IntegrationError",
    "DEFAULT_TOL",
    "integrate_periodic",
    "integrate_adaptive",
    "integrate_gaussian_weight",
    "panel_rule",
    "log_gamma",
    "poisson_truncation",
]

MAX_LEVELS = 20
MAX_PANELS = 1 << 14

# Kronrod 15-point abscissae on [-1, 1] (positive half, descending) and weights;
# the Gauss 7-point rule uses the odd-indexed abscissae.
_XK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

# Full 15-node layout, ascending.
GK_NODES = np.concatenate([-_XK[:-1], _XK[::-1]])
GK_WEIGHTS = np.concatenate([_WK[:-1], _WK[::-1]])
G_WEIGHTS = np.zeros(15)
G_WEIGHTS[1:7:2] = _WG[:3]
G_WEIGHTS[7] = _WG[3]
G_WEIGHTS[9:14:2] = _WG[2::-1]


@dataclass(frozen=True)
class Tolerance:
    rel: float = 1e-8
    abs: float = 1e-12

    def __post_init__(self):
        if not (math.isfinite(self.rel) and math.isfinite(self.abs)):
            raise ValueError("tolerances must be finite")
        if self.rel < 0 or self.abs < 0 or not (self.rel > 0 or self.abs > 0):
            raise ValueError("need rel > 0 or abs > 0, both nonnegative")

    def target(self, magnitude: float) -> float:
        return max(self.abs, self.rel * abs(magnitude))


DEFAULT_TOL = Tolerance()


@dataclass(frozen=True)
class IntegrationResult:
    value: float | np.ndarray
    error_estimate: float
    evaluations: int


@dataclass(frozen=True)
class TruncationBudget:
    """Largest retained index of a Poisson-weighted series and the mass it drops."""

    tail_mass: float
    n_max: int

    def __post_init__(self):
        if not 0 < self.tail_mass < 1:
            raise ValueError(f"tail_mass must lie in (0, 1), got {self.tail_mass}")
        if self.n_max < 0:
            raise ValueError(f"n_max must be >= 0, got {self.n_max}")


class IntegrationError(ArithmeticError):
    """Adaptive quadrature hit its refinement cap before meeting the tolerance."""

    def __init__(self, message, value, error_estimate, evaluations):
        best = np.sum(value) if np.ndim(value) else value
        super().__init__(f"{message} (best total={float(best):.10g}, error={float(error_estimate):.3g})")
        self.value = value
        self.error_estimate = error_estimate
        self.evaluations = evaluations


def _gk_panels(f, lo, hi):
    # One vectorised call for all panels; returns (kronrod, gauss) sums per panel.
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = (mid[:, None] + half[:, None] * GK_NODES[None, :]).ravel()
    y = np.asarray(f(x), dtype=float)
    y = y.reshape((len(lo), 15) + y.shape[1:])
    scale = half.reshape((-1,) + (1,) * (y.ndim - 2))
    kron = np.tensordot(GK_WEIGHTS, y, axes=([0], [1])) * scale
    gauss = np.tensordot(G_WEIGHTS, y, axes=([0], [1])) * scale
    return kron, gauss, x.size


def integrate_adaptive(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: Tolerance = DEFAULT_TOL,
    *,
    initial_panels: int = 8,
    max_levels: int = MAX_LEVELS,
    norm: Callable[[np.ndarray], float] | None = None,
) -> IntegrationResult:
    """Integrate ``f`` over ``[a, b]`` by level-wise bisection of G7/K15 panels.

    ``f`` takes a 1-d array of abscissae and returns either a matching 1-d
    array or an ``(n, m)`` array for vector-valued integrands.  For vector
    integrands ``norm`` reduces a component vector (values or errors) to the
    scalar compared against the tolerance; it defaults to the max-abs norm.
    The reported error is the norm of the summed |K15 - G7| panel estimates.
    """
    if norm is None:
        norm = lambda v: float(np.max(np.abs(v)))  # noqa: E731
    edges = np.linspace(a, b, initial_panels + 1)
    lo, hi = edges[:-1], edges[1:]
    width = b - a
    done_val = 0.0
    done_err = 0.0
    evaluations = 0
    for _level in range(max_levels + 1):
        kron, gauss, n = _gk_panels(f, lo, hi)
        evaluations += n
        err = np.abs(kron - gauss)
        total = done_val + kron.sum(axis=0)
        total_err = done_err + err.sum(axis=0)
        target = tol.target(norm(total))
        if norm(total_err) <= target:
            return IntegrationResult(_unwrap(total), norm(total_err), evaluations)
        panel_err = np.array([norm(e) for e in err])
        ok = panel_err <= target * (hi - lo) / width
        done_val = done_val + kron[ok].sum(axis=0)
        done_err = done_err + err[ok].sum(axis=0)
        if ok.all():
            return IntegrationResult(_unwrap(total), norm(total_err), evaluations)
        if 2 * np.count_nonzero(~ok) > MAX_PANELS:
            break
        mid = 0.5 * (lo[~ok] + hi[~ok])
        lo, hi = np.concatenate([lo[~ok], mid]), np.concatenate([mid, hi[~ok]])
    raise IntegrationError(
        f"no convergence within {max_levels} refinement levels / {MAX_PANELS} panels",
        _unwrap(total), norm(total_err), evaluations,
    )


def _unwrap(v):
    v = np.asarray(v)
    return float(v) if v.ndim == 0 else v


def integrate_periodic(f, tol: Tolerance = DEFAULT_TOL, **kwargs) -> IntegrationResult:
    """Integrate a function of phase over one period ``(-pi, pi]``.

    The initial partition has an even number of panels so that 0 and
    +-pi, where interferometer integrands lose smoothness, sit on panel
    edges.  Callers must map ``0 * log 0`` to zero before handing ``f`` in.
    """
    kwargs.setdefault("initial_panels", 8)
    if kwargs["initial_panels"] % 2:
        kwargs["initial_panels"] += 1
    return integrate_adaptive(f, -math.pi, math.pi, tol, **kwargs)


def integrate_gaussian_weight(f, mean: float, sigma: float, order: int = 32) -> float:
    """Expectation of ``f`` under N(mean, sigma**2) with ``order`` Hermite nodes.

    Exact for polynomials of degree below ``2 * order``.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if order < 2:
        raise ValueError(f"order must be >= 2, got {order}")
    x, w = np.polynomial.hermite_e.hermegauss(order)
    vals = np.asarray(f(mean + sigma * x), dtype=float)
    return float(np.dot(w, vals) / math.sqrt(2 * math.pi))


def panel_rule(lo: float, hi: float, panel_width: float):
    """Composite K15 rule over ``[lo, hi]`` with the embedded G7 weights.

    Returns ``(nodes, kronrod_weights, gauss_weights)``; the Gauss weights
    are zero on the Kronrod-only nodes so both rules share evaluations.
    """
    if not hi > lo or not panel_width > 0:
        raise ValueError("need hi > lo and panel_width > 0")
    n = max(1, math.ceil((hi - lo) / panel_width))
    edges = np.linspace(lo, hi, n + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * GK_NODES).ravel()
    wk = (half[:, None] * GK_WEIGHTS).ravel()
    wg = (half[:, None] * G_WEIGHTS).ravel()
    return nodes, wk, wg


def log_gamma(x: float) -> float:
    if not x > 0:
        raise ValueError(f"log_gamma needs x > 0, got {x}")
    return math.lgamma(x)


def poisson_truncation(mean: float, tail_mass: float = 1e-12) -> TruncationBudget:
    """Smallest ``n_max`` with P(N > n_max) < tail_mass for N ~ Poisson(mean)."""
    if not mean >= 0 or not math.isfinite(mean):
        raise ValueError(f"mean must be finite and >= 0, got {mean}")
    if not 0 < tail_mass < 1:
        raise ValueError(f"tail_mass must lie in (0, 1), got {tail_mass}")
    if mean == 0:
        return TruncationBudget(tail_mass, 0)
    # pdtrc(k, m) = P(N > k), accurate deep in the upper tail; it is
    # nonincreasing in k, so bisect for the first k below the budget.
    hi = int(mean) + 16
    while special.pdtrc(hi, mean) >= tail_mass:
        hi *= 2
    lo = -1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if special.pdtrc(mid, mean) < tail_mass:
            hi = mid
        else:
            lo = mid
    return TruncationBudget(tail_mass, hi)
